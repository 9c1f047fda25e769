"""Experiment configs, parameter sweeps and phase-diagram assembly.

Every run is specified by an ``ExperimentConfig`` (loadable from a flat
``key = value`` text file), executes deterministically for a given seed,
and lands in CSV/JSON files that embed the resolved config and the code
version, so re-running a config reproduces the outputs byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bath import BathSpec, Support, chain_coefficients, write_chain_csv
from .dmrg import BasisPolicy, DmrgConfig, SopbConfig, ground_state as dmrg_ground_state
from .ed import DenseModel, ground_state as ed_ground_state, measure_dense
from .observables import ObservableReport
from .symmetry import (SiteSet, default_theta_grid, displacement_rotation_scan,
                       order_parameter)
from .variational import (ModeGrid, RelaxSchedule, average_displacements,
                          energy_and_norm, mode_expectations,
                          order_parameter_coherent, relax_best,
                          rotational_optimization, zeta_scan)


@dataclass
class ExperimentConfig:
    """One solver run or sweep; flat fields so config files stay trivial."""

    solver: str = "ed"              # ed | dmrg | variational
    policy: str = "sopb"            # dmrg basis policy
    s: float = 0.5
    alpha_z: float = 0.1
    alpha_x: float = 0.1
    omega_c: float = 1.0
    l_z: int = 2
    l_x: int = 2
    support: str = "truncated"      # full_line | truncated
    eta_upper: str = "cutoff"       # cutoff | infinity
    n_ph: int = 6
    bias: float = 0.0
    # dmrg
    bond_dim: int = 16
    n_opt: int = 8
    mix_a: float = 0.5
    warmup_bias: float = 1e-8
    max_sweeps: int = 40
    max_opt_passes: int = 6
    # variational
    n_terms: int = 4
    n_modes: int = 40
    restarts: int = 8
    damping: float = 0.3
    max_iter: int = 6000
    rotational_opt: bool = True
    n_theta: int = 400
    # order parameter
    compute_zeta: bool = True
    dtheta_over_pi: float = 1.0 / 200.0
    # sweep
    sweep_param: str = "alpha_x"
    sweep_start: float = 0.0
    sweep_stop: float = 0.0
    sweep_step: float = 0.0
    # phase diagram
    s_values: list = field(default_factory=list)
    alpha_values: list = field(default_factory=list)
    theta_loc: float = 0.05
    zeta_band: float = 0.05
    # bookkeeping
    out: str = "."
    seed: int = 0
    workers: int = 1

    def resolved(self) -> dict:
        return dataclasses.asdict(self)

    def bath_specs(self):
        return (BathSpec(s=self.s, alpha=self.alpha_z, omega_c=self.omega_c),
                BathSpec(s=self.s, alpha=self.alpha_x, omega_c=self.omega_c))

    def support_enum(self) -> Support:
        return Support.FULL_LINE if self.support == "full_line" \
            else Support.TRUNCATED_AT_CUTOFF

    def dense_model(self) -> DenseModel:
        spec_z, spec_x = self.bath_specs()
        cz = chain_coefficients(spec_z, self.l_z, self.support_enum(),
                                eta_upper=self.eta_upper)
        cx = chain_coefficients(spec_x, self.l_x, self.support_enum(),
                                eta_upper=self.eta_upper)
        return DenseModel(chain_z=cz, chain_x=cx, n_ph=self.n_ph, bias=self.bias)

    def dmrg_config(self) -> DmrgConfig:
        return DmrgConfig(
            bond_dim=self.bond_dim, warmup_bias=self.warmup_bias,
            max_opt_passes=self.max_opt_passes,
            sopb=SopbConfig(a=self.mix_a, n_opt=self.n_opt, sweeps=self.max_sweeps))

    def mode_grid(self) -> ModeGrid:
        spec_z, spec_x = self.bath_specs()
        return ModeGrid.from_specs(spec_z, spec_x, self.n_modes, bias=self.bias)


def load_config(path) -> ExperimentConfig:
    """Flat ``key = value`` text; values parsed as JSON, falling back to str."""
    data = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            try:
                data[key] = json.loads(value)
            except json.JSONDecodeError:
                data[key] = value
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data)


def config_header(config: ExperimentConfig) -> str:
    """Resolved config and code version, embedded in every output file.

    The output directory and worker count are execution environment, not
    physics, and are omitted so identical configs give identical bytes.
    """
    lines = [f"# tbsbm {__version__}"]
    for key, value in sorted(config.resolved().items()):
        if key in ("out", "workers"):
            continue
        lines.append(f"# {key} = {json.dumps(value)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# single-point solves

def run_point(config: ExperimentConfig) -> ObservableReport:
    """Solve one model point with the configured solver."""
    if config.solver == "ed":
        model = config.dense_model()
        res = ed_ground_state(model, k=2)
        report = measure_dense(model, res.vectors[:, 0], energy=res.energies[0])
        if config.compute_zeta:
            from .symmetry import DenseState
            op = order_parameter(DenseState(vector=res.vectors[:, 0], model=model),
                                 dtheta=np.pi * config.dtheta_over_pi)
            report.o_z, report.o_x, report.zeta = op.o_z, op.o_x, op.zeta
            report.imag_residual = op.imag_residual
            report.low_confidence = op.low_confidence
        return report
    if config.solver == "dmrg":
        model = config.dense_model()
        state, report = dmrg_ground_state(model, BasisPolicy(config.policy),
                                          config.dmrg_config())
        if config.compute_zeta:
            op = order_parameter(state, dtheta=np.pi * config.dtheta_over_pi)
            report.o_z, report.o_x, report.zeta = op.o_z, op.o_x, op.zeta
            report.imag_residual = op.imag_residual
            report.low_confidence = op.low_confidence
        return report
    if config.solver == "variational":
        grid = config.mode_grid()
        schedule = RelaxSchedule(damping=config.damping, max_iter=config.max_iter,
                                 n_restarts=config.restarts)
        out = relax_best(grid, config.n_terms, schedule, seed=config.seed)
        state = out.state
        energy = out.energy
        if config.rotational_opt:
            thetas = np.linspace(0.0, 2.0 * np.pi, config.n_theta, endpoint=False)
            _, state, energies = rotational_optimization(
                state, grid, thetas,
                schedule=dataclasses.replace(schedule, n_restarts=0, max_iter=400))
            energy = float(np.min(energies))
        o_z, o_x, zeta, imag = order_parameter_coherent(state, grid)
        disp = np.sqrt(2.0) * np.real(mode_expectations(state, grid))
        sz, sx = _spin_expectations(state, grid)
        return ObservableReport(energy=energy, sigma_z=sz, sigma_x=sx,
                                displacements=disp, o_z=o_z, o_x=o_x, zeta=zeta,
                                imag_residual=imag)
    raise ValueError(f"unknown solver {config.solver!r}")


def _spin_expectations(state, grid):
    from .variational import _overlap_matrix
    _, d = energy_and_norm(state, grid)
    a, b, f, g = state.a, state.b, state.f, state.g
    r = _overlap_matrix(f, f)
    w = _overlap_matrix(g, g)
    c = _overlap_matrix(f, g)
    sz = float(np.real(np.conj(a) @ r @ a - np.conj(b) @ w @ b) / d)
    sx = float(np.real(2.0 * np.real(np.conj(a) @ c @ b)) / d)
    return sz, sx


# ---------------------------------------------------------------------------
# sweeps

def _sweep_values(config: ExperimentConfig) -> np.ndarray:
    if config.sweep_step <= 0:
        raise ValueError("sweep_step must be positive")
    if config.sweep_stop < config.sweep_start:
        raise ValueError("sweep bounds must be ordered")
    n = int(np.floor((config.sweep_stop - config.sweep_start) / config.sweep_step + 1e-9))
    return config.sweep_start + config.sweep_step * np.arange(n + 1)


def _point_config(config: ExperimentConfig, value: float, index: int) -> ExperimentConfig:
    cfg = dataclasses.replace(config, seed=config.seed + index)
    if not hasattr(cfg, config.sweep_param):
        raise ValueError(f"unknown sweep parameter {config.sweep_param!r}")
    setattr(cfg, config.sweep_param, float(value))
    return cfg


def _run_point_row(args):
    cfg, value = args
    try:
        report = run_point(cfg)
        return report.csv_row(param_value=value), True
    except Exception as exc:  # noqa: BLE001 - a failed point must not kill the sweep
        empty = ObservableReport(energy=np.nan, sigma_z=np.nan, sigma_x=np.nan)
        return empty.csv_row(param_value=value,
                             status=f"error: {type(exc).__name__}: {exc}"), False


@dataclass
class SweepResult:
    values: np.ndarray
    rows: list[str]
    ok: bool

    def table(self, config: ExperimentConfig) -> str:
        return (config_header(config) + "\n" + ObservableReport.csv_header()
                + ("\n" if self.rows else "") + "\n".join(self.rows) + "\n")


def run_sweep(config: ExperimentConfig) -> SweepResult:
    """One ObservableReport row per sweep value; failures logged, not fatal.

    Points fan out over ``workers`` processes; rows merge in sweep order
    regardless of completion order, and each point derives its own seed
    from the sweep seed and its index, so the worker count never changes
    the output.
    """
    values = _sweep_values(config)
    jobs = [(_point_config(config, v, i), v) for i, v in enumerate(values)]
    if config.workers > 1 and len(jobs) > 1:
        with multiprocessing.get_context("spawn").Pool(config.workers) as pool:
            results = pool.map(_run_point_row, jobs)
    else:
        results = [_run_point_row(j) for j in jobs]
    rows = [r for r, _ in results]
    ok = all(flag for _, flag in results)
    return SweepResult(values=values, rows=rows, ok=ok)


# ---------------------------------------------------------------------------
# phase classification

@dataclass
class Thresholds:
    theta_loc: float = 0.05
    zeta_band: float = 0.05


def classify_phase(report: ObservableReport, thresholds: Thresholds,
                   symmetric_line: bool) -> str:
    """Localized / Delocalized / Critical / Unknown from zeta and the spins.

    Ambiguity is reported as Unknown, never silently forced to a phase.
    """
    if report.zeta is None or not np.isfinite(report.energy):
        return "Unknown"
    zeta_is_one = abs(report.zeta - 1.0) <= thresholds.zeta_band
    sz, sx = abs(report.sigma_z), abs(report.sigma_x)
    if zeta_is_one and sz > thresholds.theta_loc and sz >= sx:
        return "Localized"
    if zeta_is_one and sx > thresholds.theta_loc and sx > sz:
        return "Delocalized"
    if zeta_is_one and symmetric_line and sz <= thresholds.theta_loc \
            and sx <= thresholds.theta_loc:
        return "Critical"
    return "Unknown"


@dataclass
class PhaseDiagramResult:
    rows: list[dict]
    transition_points: dict     # alpha -> s where zeta first reaches 1

    def table(self, config: ExperimentConfig) -> str:
        head = config_header(config) + "\ns,alpha,zeta,sigma_z,sigma_x,energy,label"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r['s']:.17g},{r['alpha']:.17g},{r['zeta']:.17g},"
                         f"{r['sigma_z']:.17g},{r['sigma_x']:.17g},"
                         f"{r['energy']:.17g},{r['label']}")
        return "\n".join(lines) + "\n"


def run_phase_diagram(config: ExperimentConfig) -> PhaseDiagramResult:
    """Solve on the (s, alpha) grid along the symmetric line alpha_x = alpha_z.

    Each alpha row reports the smallest s whose zeta reaches the unity band
    (the localized-to-critical transition estimate).
    """
    thresholds = Thresholds(theta_loc=config.theta_loc, zeta_band=config.zeta_band)
    rows = []
    transitions = {}
    for alpha in config.alpha_values:
        zeta_by_s = []
        for i, s in enumerate(config.s_values):
            cfg = dataclasses.replace(config, s=float(s), alpha_z=float(alpha),
                                      alpha_x=float(alpha),
                                      seed=config.seed + 1000 * len(rows))
            try:
                report = run_point(cfg)
                label = classify_phase(report, thresholds, symmetric_line=True)
                rows.append({"s": s, "alpha": alpha, "zeta": report.zeta,
                             "sigma_z": report.sigma_z, "sigma_x": report.sigma_x,
                             "energy": report.energy, "label": label})
                zeta_by_s.append((s, report.zeta))
            except Exception as exc:  # noqa: BLE001
                rows.append({"s": s, "alpha": alpha, "zeta": np.nan,
                             "sigma_z": np.nan, "sigma_x": np.nan,
                             "energy": np.nan, "label": f"error:{type(exc).__name__}"})
        hit = [s for s, z in zeta_by_s
               if z is not None and abs(z - 1.0) <= thresholds.zeta_band]
        transitions[float(alpha)] = float(min(hit)) if hit else float("nan")
    return PhaseDiagramResult(rows=rows, transition_points=transitions)


# ---------------------------------------------------------------------------
# file outputs

def write_text(path, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# variational critical-point study

@dataclass
class CriticalSweepResult:
    alpha_x: np.ndarray
    sigma_z: np.ndarray
    sigma_x: np.ndarray
    energies: np.ndarray

    def jump_location(self) -> float:
        """Midpoint of the first grid interval where |sigma_z| collapses."""
        mags = np.abs(self.sigma_z)
        top = mags.max()
        for i in range(len(mags) - 1):
            if mags[i] > 0.5 * top and mags[i + 1] < 0.5 * top:
                return float(0.5 * (self.alpha_x[i] + self.alpha_x[i + 1]))
        return float(self.alpha_x[-1])


def variational_critical_sweep(s: float, alpha_z: float, alpha_x_values,
                               n_modes: int = 40, n_terms: int = 4,
                               lo_factor: float = 1e-3,
                               use_rotational_opt: bool = True,
                               seed: int = 0) -> CriticalSweepResult:
    """|sigma_z|(alpha_x) by warm-started continuation, optionally with
    rotational optimization at every point.

    Without the rotation the continuation tracks one polarization branch
    and overshoots the true crossing (hysteresis).  With it, a quarter-turn
    of the carried state seeds the competing branch; both branches are then
    continued and relaxed with identical effort and the lower energy wins,
    which pins the jump to the true crossing.
    """
    from .variational import relax, rotate

    alpha_x_values = np.asarray(alpha_x_values, dtype=float)
    spec_z = BathSpec(s=s, alpha=alpha_z)
    full = RelaxSchedule(max_iter=600, polish_iter=8000, n_restarts=4)
    cont = RelaxSchedule(max_iter=300, polish_iter=5000, n_restarts=0)

    szs, sxs, es = [], [], []
    branches = []    # carried states, one per tracked branch
    for i, ax in enumerate(alpha_x_values):
        grid = ModeGrid.from_specs(spec_z, BathSpec(s=s, alpha=ax), n_modes,
                                   lo_factor=lo_factor)
        if not branches:
            base = relax_best(grid, n_terms, full, seed=seed)
            branches = [base.state]
            if use_rotational_opt:
                branches.append(base.state)
        outs = [relax(st, grid, cont) for st in branches]
        if use_rotational_opt:
            # refresh each branch with the quarter-turn of the other: the
            # rotation is exact, so both branches inherit the better
            # converged structure and neither lags systematically
            for j in (0, 1):
                seed_state = rotate(outs[1 - j].state, np.pi / 2.0, grid,
                                    compress_to=n_terms)
                cand = relax(seed_state, grid, cont)
                if cand.energy < outs[j].energy:
                    outs[j] = cand
        branches = [o.state for o in outs]
        best = min(outs, key=lambda o: o.energy)
        sz, sx = _spin_expectations(best.state, grid)
        szs.append(sz)
        sxs.append(sx)
        es.append(best.energy)
    return CriticalSweepResult(alpha_x=alpha_x_values, sigma_z=np.array(szs),
                               sigma_x=np.array(sxs), energies=np.array(es))


def run_chain_coeffs(config: ExperimentConfig, out_path):
    spec_z, _ = config.bath_specs()
    coeffs = chain_coefficients(spec_z, config.l_z, config.support_enum(),
                                eta_upper=config.eta_upper)
    lines = [config_header(config), "index,omega,t"]
    for i in range(coeffs.length):
        t = f"{coeffs.hops[i]:.17g}" if i < coeffs.length - 1 else ""
        lines.append(f"{i},{coeffs.omegas[i]:.17g},{t}")
    write_text(out_path, "\n".join(lines) + "\n")
    return coeffs
