"""Parity-symmetry operators, incremental rotations and the order parameter.

The combined spin/bath-parity operators

    O_z^(+-) = +- sigma^z exp(i pi N_x),   O_x^(+-) = +- sigma^x exp(i pi N_z)

commute with the Hamiltonian at zero bias; together with I^(+-) and
O_y = O_z O_x they form a non-abelian eight-element group whose center is
{I^(+-)}.  The order parameter is zeta = sqrt(<O_z>**2 + <O_x>**2).

The bath parity is applied incrementally: the angle is divided into small
steps delta_theta and each boson site is multiplied by

    P_i(delta_theta) = Proj_even + exp(i delta_theta) Proj_odd

restricted to the site's current local basis.  In a parity-closed basis
(bare, restricted, or symmetrically optimized) the restriction is exactly
unitary and accumulating to theta = pi reproduces the parity operator; in
an asymmetrically optimized basis the restriction leaks norm, and the
failure of displacements to return after a full 2 pi rotation measures the
symmetry content lost by the truncation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dmrg import MpsState, build_mpo, mpo_expectation
from .ed import DenseModel, SIGMA_X, SIGMA_Z, build_hamiltonian, site_operator
from .fock import ladder_matrices, local_parity


class SiteSet(enum.Enum):
    X_BATH = "x"
    Z_BATH = "z"
    ALL = "all"


class ParityClassificationError(RuntimeError):
    """Number-operator eigenvalues too far from integers to classify."""


@dataclass
class DenseState:
    """Dense vector plus the model that defines its site layout."""

    vector: np.ndarray
    model: DenseModel

    def copy(self):
        return DenseState(vector=self.vector.copy(), model=self.model)


@dataclass
class OrderParameterReport:
    o_z: float
    o_x: float
    zeta: float
    imag_residual: float = 0.0
    low_confidence: bool = False


@dataclass
class RotationScan:
    """Displacements and energy along an incremental rotation 0 .. 2 pi."""

    thetas: np.ndarray
    displacements: np.ndarray      # (n_theta, n_tracked)
    energies: np.ndarray
    tracked_sites: list[int]
    norm_drift: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.thetas, dtype=float)
        if len(t) < 2 or np.any(np.diff(t) <= 0) or abs(t[0]) > 1e-12 \
                or abs(t[-1] - 2.0 * np.pi) > 1e-9:
            raise ValueError("theta grid must increase strictly from 0 to 2 pi")

    @property
    def return_deviation(self) -> float:
        return float(np.max(np.abs(self.displacements[-1] - self.displacements[0])))

    def to_csv(self, path=None) -> str:
        lines = ["theta,site,X,energy"]
        for k, theta in enumerate(self.thetas):
            for j, site in enumerate(self.tracked_sites):
                lines.append(f"{theta:.17g},{site},{self.displacements[k, j]:.17g},"
                             f"{self.energies[k]:.17g}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# dense group operators

def bath_parity_matrix(model: DenseModel, which: str):
    """exp(i pi sum_l n_l) over the chosen bath's sites (dense diagonal)."""
    dims = model.dims
    ops = {}
    off = 1 if which == "z" else 1 + model.chain_z.length
    length = model.chain_z.length if which == "z" else model.chain_x.length
    for i in range(length):
        ops[off + i] = local_parity(dims[off + i])
    return site_operator(dims, ops)


def group_elements(model: DenseModel) -> dict[str, np.ndarray]:
    """The eight dense operators {I, O_z, O_x, O_y} x {+, -}."""
    dims = model.dims
    eye = site_operator(dims, {}).toarray()
    pz = bath_parity_matrix(model, "z").toarray()
    px = bath_parity_matrix(model, "x").toarray()
    sz = site_operator(dims, {0: SIGMA_Z}).toarray()
    sx = site_operator(dims, {0: SIGMA_X}).toarray()
    i_sy = site_operator(dims, {0: np.array([[0.0, 1.0], [-1.0, 0.0]])}).toarray()
    o_z = sz @ px
    o_x = sx @ pz
    o_y = i_sy @ (px @ pz)   # i sigma_y exp(i pi (N_x + N_z)), real
    out = {}
    for name, op in (("I", eye), ("O_z", o_z), ("O_x", o_x), ("O_y", o_y)):
        out[f"{name}+"] = op
        out[f"{name}-"] = -op
    return out


@dataclass
class GroupReport:
    closed: bool
    table: dict
    o_y_identity_error: float
    max_h_commutator: float
    anticommutation_error: float


def verify_group(model: DenseModel, tol: float = 1e-12) -> GroupReport:
    """Multiplication-table closure of the eight operators and [H, O] = 0.

    Intended for small dense models (the spin factors are 2x2 blocks, so
    the products are cheap); the Hamiltonian commutators are evaluated at
    the model's own bias, which should be zero for an exact symmetry.
    """
    g = group_elements(model)
    names = list(g)
    scale = max(np.abs(g["O_z+"]).max(), 1.0)
    table = {}
    closed = True
    for a in names:
        for b in names:
            prod = g[a] @ g[b]
            match = None
            for c in names:
                if np.max(np.abs(prod - g[c])) < tol * scale:
                    match = c
                    break
            table[(a, b)] = match
            closed = closed and match is not None
    o_y_err = float(np.max(np.abs(g["O_z+"] @ g["O_x+"] - g["O_y+"])))
    anti = float(np.max(np.abs(g["O_z+"] @ g["O_x+"] + g["O_x+"] @ g["O_z+"])))
    h = build_hamiltonian(model).toarray()
    comm = 0.0
    for name in ("O_z+", "O_x+", "O_y+"):
        comm = max(comm, float(np.max(np.abs(h @ g[name] - g[name] @ h))))
    return GroupReport(closed=closed, table=table, o_y_identity_error=o_y_err,
                       max_h_commutator=comm, anticommutation_error=anti)


# ---------------------------------------------------------------------------
# incremental parity rotations

def _bath_site_positions(state_or_model, site_set: SiteSet):
    if isinstance(state_or_model, MpsState):
        sites = state_or_model.sites
        out = []
        for i, s in enumerate(sites):
            if s.kind == "spin":
                continue
            if site_set is SiteSet.ALL or s.kind == site_set.value:
                out.append(i)
        return out
    model = state_or_model
    dims = model.dims
    out = []
    for i in range(1, len(dims)):
        kind = "z" if i <= model.chain_z.length else "x"
        if site_set is SiteSet.ALL or kind == site_set.value:
            out.append(i)
    return out


def _parity_projectors(basis):
    """(Proj_even, Proj_odd) of the bare parity restricted to the basis."""
    nb = basis.bare_dim
    par = (-1.0) ** np.arange(nb)
    v = basis.transform
    pe = v.T @ (v * ((1.0 + par) / 2.0)[:, None])
    po = v.T @ (v * ((1.0 - par) / 2.0)[:, None])
    return pe, po


def classification_residual(basis) -> float:
    """Distance of the restricted number operator's spectrum from integers."""
    nb = basis.bare_dim
    _, _, num = ladder_matrices(nb)
    n_t = basis.project(num)
    evals = np.linalg.eigvalsh(n_t)
    return float(np.max(np.abs(evals - np.round(evals))))


def incremental_parity_step(state, site: int, dtheta: float,
                            check_classification: bool = True):
    """Apply P_site(dtheta) once and return the new state.

    Phases exp(i dtheta) multiply the odd-parity components of the site's
    local basis; the norm is preserved exactly whenever the basis is
    parity-closed.  With ``check_classification`` the restricted number
    operator is required to have near-integer spectrum (residual <= 0.1),
    the regime where even/odd classification is meaningful.
    """
    if isinstance(state, DenseState):
        out = state.copy()
        dims = state.model.dims
        d = dims[site]
        step = np.diag(np.where(np.arange(d) % 2 == 0, 1.0, np.exp(1j * dtheta)))
        op = site_operator(dims, {site: step})
        out.vector = np.asarray(out.vector, complex)
        out.vector = op @ out.vector
        return out
    new = state.copy()
    basis = new.bases[site]
    if check_classification:
        res = classification_residual(basis)
        if res > 0.1:
            raise ParityClassificationError(
                f"site {site}: number-operator residual {res:.3f} exceeds 0.1")
    pe, po = _parity_projectors(basis)
    step = pe + np.exp(1j * dtheta) * po
    new.tensors[site] = np.einsum("pq,aqb->apb", step, np.asarray(new.tensors[site], complex))
    return new


class _Rotator:
    """Cached per-site step machinery for repeated incremental rotations."""

    def __init__(self, state, site_set: SiteSet, dtheta: float):
        self.dtheta = dtheta
        self.is_mps = isinstance(state, MpsState)
        if self.is_mps:
            self.positions = _bath_site_positions(state, site_set)
            self.steps = {}
            self.parity_defect = 0.0
            for i in self.positions:
                pe, po = _parity_projectors(state.bases[i])
                self.steps[i] = pe + np.exp(1j * dtheta) * po
                defect = np.max(np.abs(pe @ pe - pe))
                self.parity_defect = max(self.parity_defect, float(defect))
            self.work = state.copy()
            self.work.tensors = [np.asarray(t, complex) for t in self.work.tensors]
        else:
            self.positions = _bath_site_positions(state.model, site_set)
            dims = state.model.dims
            odd_count = np.zeros(state.model.dim)
            for i in self.positions:
                n_local = np.arange(dims[i]) % 2
                diag = site_operator(dims, {i: np.diag(n_local.astype(float))}).diagonal()
                odd_count += diag
            self.phase = np.exp(1j * dtheta * odd_count)
            self.work = state.copy()
            self.work.vector = np.asarray(self.work.vector, complex)
            self.parity_defect = 0.0
        self.norm_drift = 0.0
        self.norm_factor = 1.0

    def step(self, renormalize: bool = True):
        if self.is_mps:
            for i in self.positions:
                self.work.tensors[i] = np.einsum(
                    "pq,aqb->apb", self.steps[i], self.work.tensors[i])
            nrm = self.work.norm()
        else:
            self.work.vector *= self.phase
            nrm = float(np.linalg.norm(self.work.vector))
        self.norm_drift = max(self.norm_drift, abs(nrm - 1.0))
        if renormalize and nrm > 0:
            if self.is_mps:
                c = self.work.tensors[self.work.center]
                self.work.tensors[self.work.center] = c / nrm
            else:
                self.work.vector /= nrm

    def state(self):
        return self.work


def rotate_all_sites(state, theta: float, dtheta: float,
                     site_set: SiteSet = SiteSet.ALL, renormalize: bool = True):
    """Accumulate incremental parity steps to a total angle ``theta``.

    ``dtheta`` must divide ``theta``.  At theta = pi this equals the bath
    parity on the selected sites (exactly so in parity-closed bases), at
    theta = 2 pi the identity.
    """
    n_steps = round(theta / dtheta)
    if abs(n_steps * dtheta - theta) > 1e-10:
        raise ValueError("dtheta must divide theta")
    rot = _Rotator(state, site_set, dtheta)
    for _ in range(n_steps):
        rot.step(renormalize=renormalize)
    out = rot.state()
    if isinstance(out, MpsState):
        out.info["rotation_norm_drift"] = rot.norm_drift
    return out


# ---------------------------------------------------------------------------
# observables along rotations

def _displacement_ops(state: MpsState, tracked):
    ops = {}
    for i in tracked:
        site = state.sites[i]
        b, bdag, _ = ladder_matrices(site.bare_dim)
        ops[i] = state.bases[i].project((b + bdag) / np.sqrt(2.0))
    return ops


def _dense_displacement(vec, model, tracked):
    dims = model.dims
    out = []
    nrm = np.linalg.norm(vec) ** 2
    for i in tracked:
        b, bdag, _ = ladder_matrices(dims[i])
        x = site_operator(dims, {i: (b + bdag) / np.sqrt(2.0)})
        out.append(float(np.real(np.conj(vec) @ (x @ vec))) / nrm)
    return np.array(out)


def displacement_rotation_scan(state, thetas, dtheta: float,
                               tracked_sites=None,
                               site_set: SiteSet = SiteSet.ALL) -> RotationScan:
    """X_i(theta) for tracked sites along an incremental 0 .. 2 pi rotation."""
    thetas = np.asarray(thetas, dtype=float)
    if isinstance(state, MpsState):
        tracked = list(tracked_sites) if tracked_sites is not None else \
            [i for i, s in enumerate(state.sites) if s.kind != "spin"]
        ops = _displacement_ops(state, tracked)
        mpo = build_mpo(state)
    else:
        model = state.model
        tracked = list(tracked_sites) if tracked_sites is not None else \
            list(range(1, len(model.dims)))
        h = build_hamiltonian(model)
    rot = _Rotator(state, site_set, dtheta)
    disp = np.zeros((len(thetas), len(tracked)))
    energies = np.zeros(len(thetas))

    def sample(k):
        if isinstance(state, MpsState):
            work = rot.work
            vals = work.one_site_expectations(ops)
            disp[k] = [np.real(vals[i]) for i in tracked]
            energies[k] = mpo_expectation(work, mpo)
        else:
            v = rot.work.vector
            disp[k] = _dense_displacement(v, state.model, tracked)
            energies[k] = float(np.real(np.conj(v) @ (h @ v)) / (np.linalg.norm(v) ** 2))

    done = 0
    sample(0)
    for k, theta in enumerate(thetas):
        if k == 0:
            if abs(theta) > 1e-12:
                raise ValueError("theta grid must start at 0")
            continue
        target = round(theta / dtheta)
        if abs(target * dtheta - theta) > 1e-9:
            raise ValueError("every grid angle must be a multiple of dtheta")
        while done < target:
            rot.step()
            done += 1
        sample(k)
    return RotationScan(thetas=thetas, displacements=disp, energies=energies,
                        tracked_sites=tracked, norm_drift=rot.norm_drift)


def default_theta_grid(n: int = 81) -> np.ndarray:
    return np.linspace(0.0, 2.0 * np.pi, n)


# ---------------------------------------------------------------------------
# order parameter

def order_parameter(state, dtheta: float = np.pi / 200,
                    calibrate: bool = False) -> OrderParameterReport:
    """<O_z>, <O_x> and zeta on an MPS or dense state.

    <O_z> applies the pi-rotation to the x-bath sites and sigma^z to the
    spin; <O_x> the mirror image.  With ``calibrate`` a full 2 pi scan on
    all sites measures the rotation's return deviation first and the report
    is flagged low-confidence when it exceeds 1e-4.
    """
    low_conf = False
    if calibrate:
        grid = np.linspace(0.0, 2.0 * np.pi, 9)
        scan = displacement_rotation_scan(state, grid, dtheta)
        low_conf = scan.return_deviation > 1e-4
    if isinstance(state, MpsState):
        spin = next(i for i, s in enumerate(state.sites) if s.kind == "spin")
        rot_x = rotate_all_sites(state, np.pi, dtheta, SiteSet.X_BATH, renormalize=False)
        rot_z = rotate_all_sites(state, np.pi, dtheta, SiteSet.Z_BATH, renormalize=False)
        nrm = state.norm() ** 2
        o_z = state.overlap(rot_x, ops={spin: SIGMA_Z}) / nrm
        o_x = state.overlap(rot_z, ops={spin: SIGMA_X}) / nrm
    else:
        model = state.model
        v = np.asarray(state.vector, complex)
        nrm = np.linalg.norm(v) ** 2
        rot_x = rotate_all_sites(state, np.pi, dtheta, SiteSet.X_BATH, renormalize=False)
        rot_z = rotate_all_sites(state, np.pi, dtheta, SiteSet.Z_BATH, renormalize=False)
        sz = site_operator(model.dims, {0: SIGMA_Z})
        sx = site_operator(model.dims, {0: SIGMA_X})
        o_z = complex(np.conj(v) @ (sz @ rot_x.vector)) / nrm
        o_x = complex(np.conj(v) @ (sx @ rot_z.vector)) / nrm
    imag = max(abs(np.imag(o_z)), abs(np.imag(o_x)))
    o_z, o_x = float(np.real(o_z)), float(np.real(o_x))
    return OrderParameterReport(o_z=o_z, o_x=o_x, zeta=float(np.hypot(o_z, o_x)),
                                imag_residual=imag, low_confidence=low_conf)
