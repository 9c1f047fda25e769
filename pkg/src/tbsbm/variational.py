"""Multi-coherent-state variational ground-state solver.

The trial state is a superposition of N displaced-vacuum products on each
spin branch,

    |psi> = |+> sum_n A_n prod_l |f_nl>  +  |-> sum_n B_n prod_l |g_nl> ,

over 2M discretized bath modes (M per bath, identical frequency grids so
the modes pair under the U(1) generator).  All matrix elements are closed
coherent-state overlap formulas, so there is no Fock truncation anywhere.

The stationarity conditions dH/dxi - E dD/dxi = 0 are solved by
alternating an exact generalized eigenproblem for the weights (A, B) with
a damped diagonally-preconditioned update of the displacement tables; the
analytic residuals are exposed for finite-difference verification.

The U(1) rotation T(Theta) = exp(i Theta S) with
S = sigma_y / 2 + i sum_l (b_{l,x} b_{l,z}^dag - b_{l,x}^dag b_{l,z})
acts exactly on the ansatz: the spin rotation doubles the superposition
(mixing the two branches) and the displacements rotate pairwise in each
(z, x) mode plane.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .bath import BathSpec, renormalized_coupling, spectral_density


class DegenerateStateError(RuntimeError):
    """The trial state has (numerically) vanished: D < 1e-14."""


# ---------------------------------------------------------------------------
# bath discretization

@dataclass(frozen=True)
class ModeGrid:
    """Discretized two-bath mode set: z block first, then the x block.

    ``lam_z`` is nonzero on the z block only, ``lam_x`` on the x block;
    mode l of the z block pairs with mode M + l of the x block and both
    carry the same frequency, as required by the rotation generator.
    """

    omegas: np.ndarray      # (2M,)
    lam_z: np.ndarray       # (2M,)
    lam_x: np.ndarray       # (2M,)
    n_modes_per_bath: int
    bias: float = 0.0

    def __post_init__(self):
        for name in ("omegas", "lam_z", "lam_x"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        m = self.n_modes_per_bath
        if len(self.omegas) != 2 * m:
            raise ValueError("need 2 M frequencies")
        if np.any(self.omegas <= 0):
            raise ValueError("mode frequencies must be positive")
        if np.any(self.lam_z[m:] != 0) or np.any(self.lam_x[:m] != 0):
            raise ValueError("z couplings live on the first block, x on the second")

    @property
    def n_modes(self) -> int:
        return 2 * self.n_modes_per_bath

    @classmethod
    def from_specs(cls, spec_z: BathSpec, spec_x: BathSpec, n_modes_per_bath: int,
                   lo_factor: float = 1e-4, hi_factor: float = 10.0,
                   bias: float = 0.0) -> "ModeGrid":
        """Log-spaced discretization with lambda_l**2 = int_bin J / pi.

        Both baths share the frequency grid (geometric bin midpoints of
        [lo_factor, hi_factor] * omega_c); pi sum_l lambda_l**2 reproduces
        the total spectral weight of each bath within 1%.
        """
        if spec_z.omega_c != spec_x.omega_c:
            raise ValueError("paired mode grids require a common cutoff")
        m = n_modes_per_bath
        wc = spec_z.omega_c
        edges = np.geomspace(lo_factor * wc, hi_factor * wc, m + 1)
        mids = np.sqrt(edges[:-1] * edges[1:])

        def weights(spec):
            lam2 = np.empty(m)
            for i in range(m):
                xs = np.linspace(edges[i], edges[i + 1], 64)
                lam2[i] = np.trapz(spectral_density(spec, xs), xs) / np.pi
            total = np.pi * lam2.sum()
            ref = renormalized_coupling(spec, upper="infinity")
            if ref > 0 and abs(total - ref) > 0.01 * ref:
                warnings.warn(
                    f"bath discretization reproduces {total:.6g} of spectral "
                    f"weight {ref:.6g}; widen the window", stacklevel=3)
            return np.sqrt(lam2)

        lam_z = np.concatenate([weights(spec_z), np.zeros(m)])
        lam_x = np.concatenate([np.zeros(m), weights(spec_x)])
        return cls(omegas=np.concatenate([mids, mids]), lam_z=lam_z, lam_x=lam_x,
                   n_modes_per_bath=m, bias=bias)

    @classmethod
    def single_mode(cls, lambda_z: float, lambda_x: float, omega: float = 1.0,
                    bias: float = 0.0) -> "ModeGrid":
        return cls(omegas=np.array([omega, omega]),
                   lam_z=np.array([lambda_z, 0.0]),
                   lam_x=np.array([0.0, lambda_x]),
                   n_modes_per_bath=1, bias=bias)


# ---------------------------------------------------------------------------
# state

@dataclass
class VariationalState:
    """Weights and displacement tables; always complex, rows are terms."""

    a: np.ndarray           # (N,)
    b: np.ndarray           # (N,)
    f: np.ndarray           # (N, 2M)
    g: np.ndarray           # (N, 2M)

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=complex))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=complex))
        self.f = np.atleast_2d(np.asarray(self.f, dtype=complex))
        self.g = np.atleast_2d(np.asarray(self.g, dtype=complex))
        n = len(self.a)
        if not (len(self.b) == n and self.f.shape[0] == n and self.g.shape[0] == n):
            raise ValueError("weights and displacement tables disagree on N")
        if self.f.shape != self.g.shape:
            raise ValueError("f and g tables must have equal shape")

    @property
    def n_terms(self) -> int:
        return len(self.a)

    @property
    def n_modes(self) -> int:
        return self.f.shape[1]

    def copy(self) -> "VariationalState":
        return VariationalState(self.a.copy(), self.b.copy(),
                                self.f.copy(), self.g.copy())

    def embed(self, n_terms: int) -> "VariationalState":
        """Pad with zero-weight terms: the N-term family nests inside N'."""
        if n_terms < self.n_terms:
            raise ValueError("can only embed into a larger family")
        extra = n_terms - self.n_terms
        return VariationalState(
            a=np.concatenate([self.a, np.zeros(extra)]),
            b=np.concatenate([self.b, np.zeros(extra)]),
            f=np.vstack([self.f, np.zeros((extra, self.n_modes))]),
            g=np.vstack([self.g, np.zeros((extra, self.n_modes))]))

    @classmethod
    def random(cls, rng: np.random.Generator, n_terms: int, grid: ModeGrid,
               scale: float = 1.0) -> "VariationalState":
        lam = grid.lam_z + grid.lam_x
        base = lam / (2.0 * grid.omegas) + 0.05
        shape = (n_terms, grid.n_modes)
        f = scale * base * (rng.standard_normal(shape) + 0.2j * rng.standard_normal(shape))
        g = scale * base * (rng.standard_normal(shape) + 0.2j * rng.standard_normal(shape))
        a = rng.standard_normal(n_terms) + 0.1j * rng.standard_normal(n_terms)
        b = rng.standard_normal(n_terms) + 0.1j * rng.standard_normal(n_terms)
        return cls(a=a, b=b, f=f, g=g)

    def to_json(self) -> str:
        def c2(arr):
            return [[float(np.real(x)), float(np.imag(x))] for x in np.ravel(arr)]
        return json.dumps({
            "n_terms": self.n_terms, "n_modes": self.n_modes,
            "a": c2(self.a), "b": c2(self.b), "f": c2(self.f), "g": c2(self.g),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VariationalState":
        d = json.loads(text)
        n, m = d["n_terms"], d["n_modes"]

        def dec(pairs, shape):
            arr = np.array([complex(re, im) for re, im in pairs])
            return arr.reshape(shape)
        return cls(a=dec(d["a"], (n,)), b=dec(d["b"], (n,)),
                   f=dec(d["f"], (n, m)), g=dec(d["g"], (n, m)))


# ---------------------------------------------------------------------------
# matrix elements

def _overlap_matrix(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """O_mn = <prod_l u_ml | prod_l v_nl> for displacement tables u, v."""
    du = np.einsum("ml,ml->m", np.conj(u), u).real
    dv = np.einsum("nl,nl->n", np.conj(v), v).real
    cross = np.conj(u) @ v.T
    return np.exp(-0.5 * du[:, None] - 0.5 * dv[None, :] + cross)


def _blocks(state: VariationalState, grid: ModeGrid):
    """Overlap and Hamiltonian-bracket matrices of the two spin branches."""
    f, g = state.f, state.g
    r = _overlap_matrix(f, f)
    w = _overlap_matrix(g, g)
    c = _overlap_matrix(f, g)
    om, lz, lx = grid.omegas, grid.lam_z, grid.lam_x
    eps = grid.bias
    h_r = (np.einsum("ml,l,nl->mn", np.conj(f), om, f)
           + 0.5 * (np.conj(f) @ lz)[:, None] + 0.5 * (f @ lz)[None, :] + eps / 2.0)
    h_w = (np.einsum("ml,l,nl->mn", np.conj(g), om, g)
           - 0.5 * (np.conj(g) @ lz)[:, None] - 0.5 * (g @ lz)[None, :] - eps / 2.0)
    x = 0.5 * (np.conj(f) @ lx)[:, None] + 0.5 * (g @ lx)[None, :]
    return r, w, c, h_r, h_w, x


def energy_and_norm(state: VariationalState, grid: ModeGrid):
    """(E, D) with E = <H>/D evaluated in closed form."""
    r, w, c, h_r, h_w, x = _blocks(state, grid)
    a, b = state.a, state.b
    d = np.real(np.conj(a) @ r @ a + np.conj(b) @ w @ b)
    if d < 1e-14:
        raise DegenerateStateError(f"norm {d} below 1e-14")
    h = np.real(np.conj(a) @ (r * h_r) @ a + np.conj(b) @ (w * h_w) @ b
                + 2.0 * np.real(np.conj(a) @ (c * x) @ b))
    return float(h / d), float(d)


def solve_weights(state: VariationalState, grid: ModeGrid):
    """Optimal (A, B) at fixed displacements: generalized eigenproblem.

    Near-singular overlap blocks (nearly coincident coherent rows) are
    handled by canonical orthogonalization.
    """
    r, w, c, h_r, h_w, x = _blocks(state, grid)
    n = state.n_terms
    s_mat = np.zeros((2 * n, 2 * n), dtype=complex)
    h_mat = np.zeros((2 * n, 2 * n), dtype=complex)
    s_mat[:n, :n], s_mat[n:, n:] = r, w
    h_mat[:n, :n], h_mat[n:, n:] = r * h_r, w * h_w
    h_mat[:n, n:] = c * x
    h_mat[n:, :n] = (c * x).conj().T
    evals_s, vecs_s = np.linalg.eigh(s_mat)
    keep = evals_s > 1e-12 * evals_s[-1]
    basis = vecs_s[:, keep] / np.sqrt(evals_s[keep])
    h_red = basis.conj().T @ h_mat @ basis
    evals, vecs = np.linalg.eigh(0.5 * (h_red + h_red.conj().T))
    v = basis @ vecs[:, 0]
    new = state.copy()
    new.a, new.b = v[:n], v[n:]
    return new, float(evals[0])


def residuals(state: VariationalState, grid: ModeGrid, energy: float | None = None):
    """Stationarity residuals dH/dxi* - E dD/dxi* for every parameter class.

    Returns a dict with keys "a", "b", "f", "g"; the finite-difference
    counterparts are d(H - E0 D)/dRe xi = 2 Re(residual) and
    d/dIm xi = 2 Im(residual) at frozen E0.
    """
    r, w, c, h_r, h_w, x = _blocks(state, grid)
    a, b, f, g = state.a, state.b, state.f, state.g
    if energy is None:
        energy, _ = energy_and_norm(state, grid)
    e = energy
    om, lz, lx = grid.omegas, grid.lam_z, grid.lam_x

    cx = (np.conj(a)[:, None] * b[None, :]) * (c * x)      # abar_m b_n C X
    c2 = (np.conj(a)[:, None] * b[None, :]) * c
    phi_a = (r * h_r) @ a + (c * x) @ b - e * (r @ a)
    phi_b = (c * x).conj().T @ a + (w * h_w) @ b - e * (w @ b)

    m1 = (np.conj(a)[:, None] * a[None, :]) * r * (h_r - e)
    k = (np.conj(a)[:, None] * a[None, :]) * r
    phi_f = (m1 @ f
             - 0.5 * f * (m1.sum(axis=1) + m1.sum(axis=0))[:, None]
             + (k @ f) * om[None, :]
             + 0.5 * k.sum(axis=1)[:, None] * lz[None, :]
             + cx @ g
             - f * np.real(cx.sum(axis=1))[:, None]
             + 0.5 * c2.sum(axis=1)[:, None] * lx[None, :])

    m1w = (np.conj(b)[:, None] * b[None, :]) * w * (h_w - e)
    kw = (np.conj(b)[:, None] * b[None, :]) * w
    phi_g = (m1w @ g
             - 0.5 * g * (m1w.sum(axis=1) + m1w.sum(axis=0))[:, None]
             + (kw @ g) * om[None, :]
             - 0.5 * kw.sum(axis=1)[:, None] * lz[None, :]
             + cx.conj().T @ f
             - g * np.real(cx.sum(axis=0))[:, None]
             + 0.5 * np.conj(c2.sum(axis=0))[:, None] * lx[None, :])
    return {"a": phi_a, "b": phi_b, "f": phi_f, "g": phi_g}


# ---------------------------------------------------------------------------
# relaxation

@dataclass(frozen=True)
class RelaxSchedule:
    damping: float = 0.3
    tol: float = 1e-10
    max_iter: int = 600
    polish_iter: int = 2000
    n_restarts: int = 16
    restart_scale: float = 1.0


@dataclass
class RelaxResult:
    state: VariationalState
    energy: float
    residual: float
    converged: bool
    n_iter: int


def _max_residual(res) -> float:
    return max(np.max(np.abs(res["f"])) if res["f"].size else 0.0,
               np.max(np.abs(res["g"])) if res["g"].size else 0.0,
               np.max(np.abs(res["a"])), np.max(np.abs(res["b"])))


def _pack(state: VariationalState) -> np.ndarray:
    parts = [state.a, state.b, state.f.ravel(), state.g.ravel()]
    return np.concatenate([np.concatenate([p.real, p.imag]) for p in parts])


def _unpack(x: np.ndarray, n: int, m: int) -> VariationalState:
    def take(k):
        nonlocal x
        re, im, x = x[:k], x[k:2 * k], x[2 * k:]
        return re + 1j * im
    x = x.copy()
    a = take(n)
    b = take(n)
    f = take(n * m).reshape(n, m)
    g = take(n * m).reshape(n, m)
    return VariationalState(a=a, b=b, f=f, g=g)


def _polish(state: VariationalState, grid: ModeGrid, maxiter: int, tol: float):
    """Quasi-Newton descent of E = H/D with the analytic gradient.

    The gradient of the Rayleigh quotient w.r.t. the conjugate parameters
    is exactly residual / D, so the stationarity residual and the descent
    direction agree.  Displacement coordinates are rescaled by sqrt(omega)
    so the sub-Ohmic infrared modes do not wreck the conditioning.
    """
    from scipy.optimize import minimize

    n, m = state.n_terms, state.n_modes
    scale = np.sqrt(grid.omegas / np.max(grid.omegas))
    x0 = _pack(state)
    disp = np.concatenate([np.tile(scale, n)] * 2)       # Re f block, Im f block
    stretch = np.concatenate([np.ones(4 * n), disp, disp])

    def fun(x):
        st = _unpack(x / stretch, n, m)
        try:
            e, d = energy_and_norm(st, grid)
        except DegenerateStateError:
            return 1e6, np.zeros_like(x)
        res = residuals(st, grid, energy=e)
        grad = np.concatenate([
            np.concatenate([2.0 * np.real(res[k]).ravel() / d,
                            2.0 * np.imag(res[k]).ravel() / d])
            for k in ("a", "b", "f", "g")])
        return e, grad / stretch

    out = minimize(fun, x0 * stretch, jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "maxcor": 30,
                            "ftol": 1e-17, "gtol": tol / 10.0})
    return _unpack(out.x / stretch, n, m)


def relax(state: VariationalState, grid: ModeGrid,
          schedule: RelaxSchedule = RelaxSchedule()) -> RelaxResult:
    """Self-consistency iteration from a given seed.

    A damped preconditioned fixed point (weights solved exactly each step)
    makes the cheap global moves; a quasi-Newton polish with the analytic
    gradient finishes the stiff tail.  The best state seen is kept, so the
    returned energy never exceeds the seed's post-weight-solve energy; a
    state that stops improving before reaching the residual tolerance is
    returned flagged (it may be meta-stable).
    """
    work = state.copy()
    best = None
    best_e = np.inf
    last_resid = np.inf
    floor = 1e-8
    for it in range(schedule.max_iter):
        work, e = solve_weights(work, grid)
        res = residuals(work, grid, energy=e)
        last_resid = _max_residual(res)
        if e < best_e:
            best_e, best = e, work.copy()
        if last_resid < schedule.tol:
            return RelaxResult(state=work, energy=e, residual=last_resid,
                               converged=True, n_iter=it + 1)
        wa = np.maximum(np.abs(work.a) ** 2, floor)
        wb = np.maximum(np.abs(work.b) ** 2, floor)
        step_f = schedule.damping * res["f"] / (wa[:, None] * grid.omegas[None, :])
        step_g = schedule.damping * res["g"] / (wb[:, None] * grid.omegas[None, :])
        # near-dead rows would take wild steps; bound the move per iteration
        step_f = np.clip(step_f.real, -0.5, 0.5) + 1j * np.clip(step_f.imag, -0.5, 0.5)
        step_g = np.clip(step_g.real, -0.5, 0.5) + 1j * np.clip(step_g.imag, -0.5, 0.5)
        box = 50.0   # dead rows must not wander off to huge displacements
        work.f = np.clip((work.f - step_f).real, -box, box) \
            + 1j * np.clip((work.f - step_f).imag, -box, box)
        work.g = np.clip((work.g - step_g).real, -box, box) \
            + 1j * np.clip((work.g - step_g).imag, -box, box)
    n_it = schedule.max_iter
    if schedule.polish_iter > 0:
        work = best.copy()
        for _ in range(4):   # fresh quasi-Newton memory escapes stalled line searches
            polished = _polish(work, grid, schedule.polish_iter, schedule.tol)
            polished, e = solve_weights(polished, grid)
            resid = _max_residual(residuals(polished, grid, energy=e))
            improved = e < best_e - 1e-14
            if e <= best_e + 1e-14:
                best, best_e, last_resid = polished.copy(), min(e, best_e), resid
            work = polished
            if resid < schedule.tol or not improved:
                break
    final, e = solve_weights(best, grid)
    return RelaxResult(state=final, energy=e, residual=last_resid,
                       converged=last_resid < schedule.tol, n_iter=n_it)


def mean_field_seeds(grid: ModeGrid, n_terms: int) -> list[VariationalState]:
    """Deterministic physical seeds: each bath's polarized branch, dressed.

    Every seed carries the mean-field displacement -lambda <sigma> / 2 omega
    on its dominant branch.  The minority spin branch starts with a scaled
    copy plus an opposite-bath displacement: a bare polarized product is an
    exact saddle of the stationarity equations (all cross-coupling matrix
    elements vanish with zero opposite-bath displacements), so undressed
    seeds would freeze there.
    """
    m = grid.n_modes_per_bath
    om = grid.omegas
    fz = grid.lam_z / (2.0 * om)     # z-block displacement magnitude
    fx = grid.lam_x / (2.0 * om)
    fractions = np.linspace(1.0, 0.4, n_terms)

    def rows(table):
        return np.array([frac * table for frac in fractions])

    seeds = []
    weight = np.zeros(n_terms)
    weight[0] = 1.0
    minority = 0.05 * weight + 0.01
    # z-polarized branches: dominant table +-fz, minority dressed with -fx
    for sign in (-1.0, +1.0):
        dom = rows(-sign * fz)
        mino = rows(-sign * fz - 0.5 * fx)
        if sign < 0:
            seeds.append(VariationalState(a=minority, b=weight, f=mino, g=dom))
        else:
            seeds.append(VariationalState(a=weight, b=minority, f=dom, g=mino))
    # x-polarized branches: both spin components carry -+fx, z-dressing split
    amp = weight / np.sqrt(2.0)
    for sign in (+1.0, -1.0):
        f_tab = rows(-sign * fx - 0.3 * fz)
        g_tab = rows(-sign * fx + 0.3 * fz)
        seeds.append(VariationalState(a=amp, b=sign * amp, f=f_tab, g=g_tab))
    return seeds


def relax_best(grid: ModeGrid, n_terms: int, schedule: RelaxSchedule = RelaxSchedule(),
               seed: int = 0, initial: VariationalState | None = None,
               physical_seeds: bool = True) -> RelaxResult:
    """Restarts from deterministic mean-field seeds plus random states.

    The lowest converged energy wins; ``initial`` (when given) joins the
    candidate pool, so warm-started continuation never loses ground.
    """
    rng = np.random.default_rng(seed)
    candidates = []
    if initial is not None:
        candidates.append(relax(initial, grid, schedule))
    if physical_seeds:
        for seed_state in mean_field_seeds(grid, n_terms):
            candidates.append(relax(seed_state, grid, schedule))
    for _ in range(schedule.n_restarts):
        seed_state = VariationalState.random(rng, n_terms, grid,
                                             scale=schedule.restart_scale)
        candidates.append(relax(seed_state, grid, schedule))
    return min(candidates, key=lambda r: r.energy)


# ---------------------------------------------------------------------------
# U(1) rotation and rotational optimization

def rotate(state: VariationalState, theta: float, grid: ModeGrid | None = None,
           compress_to: int | None = None) -> VariationalState:
    """Exact T(theta) action; the superposition count doubles.

    The generator is sigma_y / 2 + i sum_l (b_{l,z}^dag b_{l,x} - h.c.):
    the boson beam-splitter sense is chosen so the spin vector (sigma_z,
    sigma_x) and the displacement pairs (f_z, f_x) rotate together, which
    makes T an exact symmetry of the paired-mode Hamiltonian at equal
    couplings.  Requires the mode layout [z block | x block] with equal
    block lengths (as ModeGrid builds it).  ``compress_to`` optionally
    keeps only the highest-weight rows of the doubled state.
    """
    m2 = state.n_modes
    if m2 % 2:
        raise ValueError("rotation needs paired z/x mode blocks")
    m = m2 // 2

    def rot_rows(tab):
        z, x = tab[:, :m], tab[:, m:]
        zc = z * np.cos(theta) + x * np.sin(theta)
        xc = -z * np.sin(theta) + x * np.cos(theta)
        return np.hstack([zc, xc])

    ch, sh = np.cos(theta / 2.0), np.sin(theta / 2.0)
    rf, rg = rot_rows(state.f), rot_rows(state.g)
    new = VariationalState(
        a=np.concatenate([ch * state.a, sh * state.b]),
        b=np.concatenate([-sh * state.a, ch * state.b]),
        f=np.vstack([rf, rg]),
        g=np.vstack([rf, rg]))
    if compress_to is not None and compress_to < new.n_terms:
        weight = np.abs(new.a) ** 2 + np.abs(new.b) ** 2
        keep = np.sort(np.argsort(-weight, kind="stable")[:compress_to])
        new = VariationalState(a=new.a[keep], b=new.b[keep],
                               f=new.f[keep], g=new.g[keep])
    return new


def rotational_optimization(state: VariationalState, grid: ModeGrid, thetas,
                            schedule: RelaxSchedule = RelaxSchedule(n_restarts=0),
                            re_relax: bool = True,
                            compress: bool = True):
    """Re-relax the rotated state at every angle, return the energy argmin.

    Exact ties resolve to the smallest angle.  At alpha_z = alpha_x the
    rotation is a symmetry and this escapes meta-stable branches; elsewhere
    it is a diagnostic.  Rotated candidates are compressed back to the
    original term count (cheap screening); the winning angle gets a final
    relaxation at the full schedule.
    """
    thetas = np.asarray(thetas, dtype=float)
    energies = np.empty(len(thetas))
    states = []
    screen = replace(schedule, max_iter=min(schedule.max_iter, 150),
                     polish_iter=min(schedule.polish_iter, 1200))
    for i, th in enumerate(thetas):
        cand = rotate(state, th, grid,
                      compress_to=state.n_terms if compress else None)
        if re_relax:
            out = relax(cand, grid, screen)
            energies[i] = out.energy
            states.append(out.state)
        else:
            energies[i], _ = energy_and_norm(cand, grid)
            states.append(cand)
    best = int(np.argmin(energies))
    best_state = states[best]
    if re_relax:
        out = relax(best_state, grid, schedule)
        if out.energy <= energies[best]:
            best_state = out.state
            energies[best] = out.energy
    return thetas[best], best_state, energies


# ---------------------------------------------------------------------------
# observables

def order_parameter_coherent(state: VariationalState, grid: ModeGrid):
    """(<O_z>, <O_x>, zeta) in closed form: the bath parity maps |f> to |-f>."""
    m = grid.n_modes_per_bath
    a, b, f, g = state.a, state.b, state.f, state.g
    _, d = energy_and_norm(state, grid)

    def flip(tab, block):
        out = tab.copy()
        if block == "x":
            out[:, m:] = -out[:, m:]
        else:
            out[:, :m] = -out[:, :m]
        return out

    r_px = _overlap_matrix(f, flip(f, "x"))
    w_px = _overlap_matrix(g, flip(g, "x"))
    o_z = (np.conj(a) @ r_px @ a - np.conj(b) @ w_px @ b) / d
    c_pz = _overlap_matrix(f, flip(g, "z"))
    c_pz2 = _overlap_matrix(g, flip(f, "z"))
    o_x = (np.conj(a) @ c_pz @ b + np.conj(b) @ c_pz2 @ a) / d
    imag = max(abs(np.imag(o_z)), abs(np.imag(o_x)))
    o_z, o_x = float(np.real(o_z)), float(np.real(o_x))
    return o_z, o_x, float(np.hypot(o_z, o_x)), float(imag)


def zeta_scan(state: VariationalState, grid: ModeGrid, thetas):
    """zeta(T(theta)|psi>) over an angle grid (no re-relaxation)."""
    thetas = np.asarray(thetas, dtype=float)
    out = np.empty(len(thetas))
    for i, th in enumerate(thetas):
        _, _, z, _ = order_parameter_coherent(rotate(state, th, grid), grid)
        out[i] = z
    return out


def peak_widths(thetas, zetas, floor: float = 0.05):
    """Contiguous zeta > floor regions and their widths, one per peak."""
    above = zetas > floor
    widths, starts = [], []
    i = 0
    n = len(thetas)
    while i < n:
        if above[i]:
            j = i
            while j + 1 < n and above[j + 1]:
                j += 1
            widths.append(thetas[j] - thetas[i])
            starts.append(thetas[i])
            i = j + 1
        else:
            i += 1
    return np.array(starts), np.array(widths)


def mode_expectations(state: VariationalState, grid: ModeGrid):
    """<b_l> for every mode."""
    a, b, f, g = state.a, state.b, state.f, state.g
    r = _overlap_matrix(f, f)
    w = _overlap_matrix(g, g)
    _, d = energy_and_norm(state, grid)
    ka = (np.conj(a)[:, None] * a[None, :]) * r
    kb = (np.conj(b)[:, None] * b[None, :]) * w
    return (ka[:, :, None] * f[None, :, :]).sum(axis=(0, 1)) / d \
        + (kb[:, :, None] * g[None, :, :]).sum(axis=(0, 1)) / d


def average_displacements(state: VariationalState, grid: ModeGrid):
    """Mean displacement (X, Z) per bath: X_l = sqrt(2) Re <b_l>, averaged."""
    m = grid.n_modes_per_bath
    bl = mode_expectations(state, grid)
    disp = np.sqrt(2.0) * np.real(bl)
    return float(disp[m:].mean()), float(disp[:m].mean())


def _coherent_position_amplitude(f_val: complex, omega: float, u: np.ndarray):
    """<u|f> for one mode, mass-1 oscillator of frequency omega."""
    x0 = np.sqrt(2.0 / omega) * np.real(f_val)
    p0 = np.sqrt(2.0 * omega) * np.imag(f_val)
    return ((omega / np.pi) ** 0.25
            * np.exp(-0.5 * omega * (u - x0) ** 2 + 1j * p0 * u - 0.5j * p0 * x0))


def phonon_population(state: VariationalState, grid: ModeGrid,
                      x_grid: np.ndarray, z_grid: np.ndarray,
                      mode_pair: tuple[int, int] | None = None) -> np.ndarray:
    """P(x, z) = sum_spin |psi_spin(x, z)|**2 for one (z, x) mode pair.

    Defaults to the first pair; with several modes per bath the remaining
    modes are traced out through their overlap matrix.  ``P[i, j]`` samples
    (x_grid[i], z_grid[j]).
    """
    m = grid.n_modes_per_bath
    lz, lx = mode_pair if mode_pair is not None else (0, m)
    rest = [l for l in range(grid.n_modes) if l not in (lz, lx)]

    def branch_density(weights, tab):
        amp_z = np.array([_coherent_position_amplitude(tab[n, lz], grid.omegas[lz], z_grid)
                          for n in range(state.n_terms)])
        amp_x = np.array([_coherent_position_amplitude(tab[n, lx], grid.omegas[lx], x_grid)
                          for n in range(state.n_terms)])
        rest_ov = _overlap_matrix(tab[:, rest], tab[:, rest]) if rest else \
            np.ones((state.n_terms, state.n_terms), dtype=complex)
        kw = (np.conj(weights)[:, None] * weights[None, :]) * rest_ov
        # P_sigma(x, z) = sum_mn kw_mn conj(amp_m) amp_n, factorized over axes
        axz = np.einsum("mi,mj->mij", np.conj(amp_x), np.conj(amp_z))
        bxz = np.einsum("ni,nj->nij", amp_x, amp_z)
        return np.real(np.einsum("mn,mij,nij->ij", kw, axz, bxz, optimize=True))

    _, d = energy_and_norm(state, grid)
    p = (branch_density(state.a, state.f) + branch_density(state.b, state.g)) / d
    total = np.trapz(np.trapz(p, z_grid, axis=1), x_grid)
    if abs(total - 1.0) > 0.01:
        warnings.warn(f"population grid integrates to {total:.4f}; refine the grid",
                      stacklevel=2)
    return p
