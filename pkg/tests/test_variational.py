import numpy as np
import pytest

from tbsbm import ed
from tbsbm.bath import BathSpec, renormalized_coupling
from tbsbm.variational import (DegenerateStateError, ModeGrid, RelaxSchedule,
                               VariationalState, average_displacements,
                               energy_and_norm, mean_field_seeds,
                               mode_expectations, order_parameter_coherent,
                               peak_widths, phonon_population, relax,
                               relax_best, residuals, rotate,
                               rotational_optimization, solve_weights, zeta_scan)


def single_mode_grid(lam_z=0.8, lam_x=0.5, omega=1.0, bias=0.0):
    return ModeGrid.single_mode(lam_z, lam_x, omega=omega, bias=bias)


def test_trivial_state_energy():
    grid = single_mode_grid(0.0, 0.0)
    st = VariationalState(a=[1.0], b=[0.0], f=np.zeros((1, 2)), g=np.zeros((1, 2)))
    e, d = energy_and_norm(st, grid)
    assert e == 0.0
    assert d == 1.0


def test_displaced_oscillator_stationarity():
    # N = 1, single z-mode: f = -lambda/(2 omega), E = -lambda**2/(4 omega)
    lam, omega = 0.8, 1.3
    grid = single_mode_grid(lam, 0.0, omega=omega)
    st = VariationalState(a=[1.0], b=[0.0],
                          f=np.array([[-lam / (2 * omega), 0.0]]),
                          g=np.zeros((1, 2)))
    e, d = energy_and_norm(st, grid)
    assert e == pytest.approx(-lam ** 2 / (4 * omega), rel=1e-14)
    res = residuals(st, grid)
    assert all(np.max(np.abs(v)) < 1e-14 for v in res.values())


def test_degenerate_state_error():
    grid = single_mode_grid()
    st = VariationalState(a=[0.0], b=[0.0], f=np.zeros((1, 2)), g=np.zeros((1, 2)))
    with pytest.raises(DegenerateStateError):
        energy_and_norm(st, grid)


def test_variational_bound_against_ed(rng):
    grid = single_mode_grid(0.9, 0.7, bias=0.02)
    model = ed.single_mode_model(0.9, 0.7, omega=1.0, n_ph=40, bias=0.02)
    e_ed = ed.ground_state(model, k=2).energies[0]
    for _ in range(5):
        st = VariationalState.random(rng, 3, grid)
        e, _ = energy_and_norm(st, grid)
        assert e >= e_ed - 1e-10


def test_gradient_matches_finite_differences(rng):
    # analytic residual vs central differences of H - E0 D, all classes
    grid = ModeGrid.single_mode(0.7, 0.5, omega=1.1, bias=0.02)
    step = 1e-6
    for _ in range(10):
        st = VariationalState.random(rng, 2, grid)
        e0, _ = energy_and_norm(st, grid)
        res = residuals(st, grid, energy=e0)

        def objective(state):
            e, d = energy_and_norm(state, grid)
            return (e - e0) * d

        for cls in ("a", "b", "f", "g"):
            arr = getattr(st, cls)
            for idx in np.ndindex(arr.shape):
                for unit, pick in ((1.0, np.real), (1.0j, np.imag)):
                    plus = st.copy()
                    getattr(plus, cls)[idx] += step * unit
                    minus = st.copy()
                    getattr(minus, cls)[idx] -= step * unit
                    fd = (objective(plus) - objective(minus)) / (2 * step)
                    an = 2.0 * pick(res[cls][idx])
                    assert fd == pytest.approx(an, rel=1e-6, abs=1e-9)


def test_relax_zero_coupling_kills_displacements():
    grid = single_mode_grid(0.0, 0.0)
    out = relax_best(grid, 1, RelaxSchedule(max_iter=300, polish_iter=500,
                                            n_restarts=2), seed=4)
    assert out.energy == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(out.state.f)) < 1e-5 or np.max(np.abs(out.state.a)) < 1e-6


def test_relax_matches_ed_strong_coupling():
    # gapped strong-coupling instance: lambda_z/omega = 10 with a weaker
    # x bath; the ansatz reaches the dense oracle to ~1e-6 at N = 4
    grid = ModeGrid.single_mode(10.0, 5.0, omega=1.0, bias=0.01)
    out = relax_best(grid, 4, RelaxSchedule(max_iter=400, polish_iter=6000,
                                            n_restarts=2), seed=3)
    model = ed.single_mode_model(10.0, 5.0, omega=1.0, n_ph=(60, 24), bias=0.01)
    e_ed = ed.ground_state(model, k=2, dense_cutoff=4096).energies[0]
    assert out.energy >= e_ed - 1e-10
    assert out.energy == pytest.approx(e_ed, abs=1e-5)


def test_relax_near_ed_at_symmetric_strong_coupling():
    # at lambda_z = lambda_x the ground state spreads over the soft U(1)
    # angle; a few coherent terms get close but the residual angular
    # zero-point energy (~1/2 per unit inertia) is genuinely hard
    lam = 10.0
    grid = ModeGrid.single_mode(lam, lam, omega=1.0, bias=1.0)
    out = relax_best(grid, 2, RelaxSchedule(max_iter=400, polish_iter=4000,
                                            n_restarts=4), seed=3)
    model = ed.single_mode_model(lam, lam, omega=1.0, n_ph=60, bias=1.0)
    e_ed = ed.ground_state(model, k=2).energies[0]
    assert out.energy >= e_ed - 1e-10
    assert out.energy == pytest.approx(e_ed, abs=1e-1)


def test_increasing_terms_never_raises_energy():
    # nested families: the (N+1)-term relax seeded from the embedded N-term
    # solution cannot end higher
    grid = ModeGrid.single_mode(2.0, 1.0, omega=1.0, bias=0.05)
    sched = RelaxSchedule(max_iter=300, polish_iter=2000, n_restarts=2)
    out1 = relax_best(grid, 1, sched, seed=5)
    prev = out1
    for n in (2, 4):
        seeded = prev.state.embed(n)
        out = relax(seeded, grid, sched)
        assert out.energy <= prev.energy + 1e-12
        prev = out


def test_rotation_theta_zero_identity():
    grid = single_mode_grid()
    st = VariationalState(a=[0.6], b=[0.8], f=np.array([[0.3, 0.1]]),
                          g=np.array([[0.2, -0.4]]))
    rot = rotate(st, 0.0, grid)
    e0, d0 = energy_and_norm(st, grid)
    e1, d1 = energy_and_norm(rot, grid)
    assert e1 == pytest.approx(e0, abs=1e-14)
    assert d1 == pytest.approx(d0, abs=1e-14)


def test_rotation_two_pi_global_minus():
    grid = single_mode_grid()
    st = VariationalState(a=[0.6], b=[0.8], f=np.array([[0.3, 0.1]]),
                          g=np.array([[0.2, -0.4]]))
    rot = rotate(st, 2.0 * np.pi, grid)
    # spinor periodicity: amplitudes negate, observables unchanged
    assert np.allclose(rot.a[0], -st.a[0], atol=1e-14)
    assert np.allclose(rot.b[1], -st.b[0], atol=1e-14)
    e0, _ = energy_and_norm(st, grid)
    e1, _ = energy_and_norm(rot, grid)
    assert e1 == pytest.approx(e0, abs=1e-13)


def test_quarter_turn_maps_z_to_x():
    grid = ModeGrid.single_mode(2.0, 2.0, omega=1.0)
    st = VariationalState(a=[0.0], b=[1.0], f=np.zeros((1, 2)),
                          g=np.array([[0.7, 0.0]]))
    e0, _ = energy_and_norm(st, grid)
    rot = rotate(st, np.pi / 2.0, grid)
    e1, _ = energy_and_norm(rot, grid)
    assert e1 == pytest.approx(e0, abs=1e-10)
    # displacement moved entirely into the x block
    bl = mode_expectations(rot, grid)
    assert abs(bl[0]) < 1e-12
    assert abs(bl[1]) > 0.1


def test_energy_invariance_under_rotation():
    # alpha_z = alpha_x: T(theta) is a symmetry, E invariant to 1e-10
    grid = ModeGrid.single_mode(2.0, 2.0, omega=1.0)
    out = relax_best(grid, 2, RelaxSchedule(max_iter=300, polish_iter=2000,
                                            n_restarts=2), seed=5)
    e0 = out.energy
    for theta in np.linspace(0.0, 2.0 * np.pi, 40):
        e, _ = energy_and_norm(rotate(out.state, theta, grid), grid)
        assert abs(e - e0) < 1e-10


def test_rotation_requires_paired_blocks():
    st = VariationalState(a=[1.0], b=[0.0], f=np.zeros((1, 3)), g=np.zeros((1, 3)))
    with pytest.raises(ValueError):
        rotate(st, 0.3)


def test_rotational_optimization_ground_input():
    grid = ModeGrid.single_mode(1.5, 0.5, omega=1.0, bias=0.05)
    out = relax_best(grid, 2, RelaxSchedule(max_iter=300, polish_iter=2000,
                                            n_restarts=2), seed=6)
    thetas = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
    theta_star, _, energies = rotational_optimization(out.state, grid, thetas)
    assert theta_star == pytest.approx(0.0, abs=1e-12)
    assert energies[0] == min(energies)


def test_zeta_scan_peaks_at_half_integer_pi():
    # deep localized state: zeta peaks at theta/pi in {0, 1/2, 1, 3/2, 2}
    grid = ModeGrid.single_mode(10.0, 10.0, omega=1.0)
    st = VariationalState(a=[0.0], b=[1.0], f=np.zeros((1, 2)),
                          g=np.array([[5.0, 0.0]]))
    thetas = np.linspace(0.0, 2.0 * np.pi, 201)
    zetas = zeta_scan(st, grid, thetas)
    expected = np.array([0.0, 0.5, 1.0, 1.5, 2.0]) * np.pi
    for target in expected:
        k = np.argmin(np.abs(thetas - target))
        assert zetas[k] > 0.99
    # troughs in between
    for target in np.array([0.25, 0.75, 1.25, 1.75]) * np.pi:
        k = np.argmin(np.abs(thetas - target))
        assert zetas[k] < 0.05


def test_zeta_scan_vacuum_spin_only():
    grid = single_mode_grid(0.0, 0.0)
    st = VariationalState(a=[1.0], b=[0.0], f=np.zeros((1, 2)), g=np.zeros((1, 2)))
    thetas = np.linspace(0.0, 2.0 * np.pi, 41)
    zetas = zeta_scan(st, grid, thetas)
    # boson factors are unity: zeta stays 1 for every angle
    assert np.all(np.abs(zetas - 1.0) < 1e-12)


def test_peak_width_ordering_shallow_vs_deep():
    # wider zeta(theta) peaks for weaker displacements (shallower bath)
    grid = ModeGrid.single_mode(1.0, 1.0, omega=1.0)
    deep = VariationalState(a=[0.0], b=[1.0], f=np.zeros((1, 2)),
                            g=np.array([[4.0, 0.0]]))
    shallow = VariationalState(a=[0.0], b=[1.0], f=np.zeros((1, 2)),
                               g=np.array([[1.2, 0.0]]))
    thetas = np.linspace(0.0, 2.0 * np.pi, 401)
    _, w_deep = peak_widths(thetas, zeta_scan(deep, grid, thetas))
    _, w_shallow = peak_widths(thetas, zeta_scan(shallow, grid, thetas))
    assert np.max(w_shallow) / np.max(w_deep) > 1.0


def test_order_parameter_coherent_localized():
    grid = ModeGrid.single_mode(4.0, 4.0, omega=1.0)
    st = VariationalState(a=[0.0], b=[1.0], f=np.zeros((1, 2)),
                          g=np.array([[2.0, 0.0]]))
    o_z, o_x, zeta, imag = order_parameter_coherent(st, grid)
    assert o_z == pytest.approx(-1.0, abs=1e-12)   # x block at vacuum
    assert abs(o_x) < 1e-3                          # parity image nearly orthogonal
    assert zeta == pytest.approx(1.0, abs=1e-3)
    assert imag < 1e-12


def test_phonon_population_vacuum():
    grid = single_mode_grid(0.0, 0.0)
    st = VariationalState(a=[1.0], b=[0.0], f=np.zeros((1, 2)), g=np.zeros((1, 2)))
    x = np.linspace(-5, 5, 101)
    z = np.linspace(-5, 5, 101)
    p = phonon_population(st, grid, x, z)
    expected = np.exp(-x[:, None] ** 2 - z[None, :] ** 2) / np.pi
    assert np.max(np.abs(p - expected)) < 1e-12
    assert np.trapz(np.trapz(p, z, axis=1), x) == pytest.approx(1.0, abs=1e-6)


def test_phonon_population_single_coherent_center():
    # a single real coherent term sits at (sqrt(2) f_x, sqrt(2) f_z)
    grid = single_mode_grid(0.0, 0.0)
    fz, fx = 0.9, -0.4
    st = VariationalState(a=[1.0], b=[0.0], f=np.array([[fz, fx]]),
                          g=np.zeros((1, 2)))
    x = np.linspace(-6, 6, 161)
    z = np.linspace(-6, 6, 161)
    p = phonon_population(st, grid, x, z)
    cx, cz = ed.population_centroid(p, x, z)
    assert cx == pytest.approx(np.sqrt(2.0) * fx, abs=1e-6)
    assert cz == pytest.approx(np.sqrt(2.0) * fz, abs=1e-6)
    assert np.trapz(np.trapz(p, z, axis=1), x) == pytest.approx(1.0, abs=1e-6)


def test_average_displacements_identities():
    grid = single_mode_grid(0.0, 0.0)
    st = VariationalState(a=[1.0], b=[0.0], f=np.zeros((1, 2)), g=np.zeros((1, 2)))
    assert average_displacements(st, grid) == (0.0, 0.0)
    fz, fx = 0.7, -0.2
    st2 = VariationalState(a=[1.0], b=[0.0], f=np.array([[fz, fx]]),
                           g=np.zeros((1, 2)))
    x_bath, z_bath = average_displacements(st2, grid)
    assert x_bath == pytest.approx(np.sqrt(2.0) * fx, abs=1e-12)
    assert z_bath == pytest.approx(np.sqrt(2.0) * fz, abs=1e-12)


def test_mode_grid_reproduces_spectral_weight():
    spec_z = BathSpec(s=0.25, alpha=0.02)
    spec_x = BathSpec(s=0.25, alpha=0.05)
    grid = ModeGrid.from_specs(spec_z, spec_x, 40)
    total_z = np.pi * np.sum(grid.lam_z ** 2)
    total_x = np.pi * np.sum(grid.lam_x ** 2)
    assert total_z == pytest.approx(renormalized_coupling(spec_z, upper="infinity"),
                                    rel=0.01)
    assert total_x == pytest.approx(renormalized_coupling(spec_x, upper="infinity"),
                                    rel=0.01)
    # paired frequency blocks
    m = grid.n_modes_per_bath
    assert np.allclose(grid.omegas[:m], grid.omegas[m:])


def test_state_json_roundtrip(rng):
    grid = single_mode_grid()
    st = VariationalState.random(rng, 3, grid)
    text = st.to_json()
    back = VariationalState.from_json(text)
    assert np.allclose(back.a, st.a)
    assert np.allclose(back.g, st.g)
    e0, d0 = energy_and_norm(st, grid)
    e1, d1 = energy_and_norm(back, grid)
    assert e1 == pytest.approx(e0, rel=1e-12)


def test_solve_weights_is_exact_minimum(rng):
    grid = ModeGrid.single_mode(0.8, 0.6, omega=1.0, bias=0.01)
    st = VariationalState.random(rng, 3, grid)
    opt, e = solve_weights(st, grid)
    res = residuals(opt, grid, energy=e)
    assert np.max(np.abs(res["a"])) < 1e-10
    assert np.max(np.abs(res["b"])) < 1e-10


def test_mean_field_seeds_cover_both_baths():
    grid = ModeGrid.single_mode(1.0, 1.0)
    seeds = mean_field_seeds(grid, 2)
    assert len(seeds) == 4
    for st in seeds:
        energy_and_norm(st, grid)   # all well-formed
