"""Dense exact diagonalization of the two-bath model on tiny chains.

The ground-truth oracle for the DMRG and variational solvers.  The Hilbert
space is spin (x) z-chain sites (x) x-chain sites in Kronecker order, every
boson site truncated at ``n_ph`` Fock states.  The Hamiltonian is the
chain-mapped form

    H = sum_nu [ sqrt(eta_nu / 4 pi) sigma^nu (b_0^dag + b_0)
                 + sum_i omega_i n_i + sum_i t_i (b_{i+1}^dag b_i + h.c.) ]
        + (bias / 2) sigma^z .

In the one-mode-per-bath convention H = omega n + (sigma/2) lambda (b+b^dag),
the vertex identification sqrt(eta/4pi) = lambda/2 gives eta = pi lambda**2
(see ``single_mode_model``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bath import ChainCoefficients
from .fock import ladder_matrices
from .observables import ObservableReport

SIGMA_Z = np.diag([1.0, -1.0])
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]])


@dataclass(frozen=True)
class DenseModel:
    """Two chains, a spin, a per-site Fock truncation and a small bias."""

    chain_z: ChainCoefficients
    chain_x: ChainCoefficients
    n_ph: int | tuple[int, int] = 6
    bias: float = 0.0
    dim_cap: int = 2 ** 22

    @property
    def n_ph_z(self) -> int:
        return self.n_ph[0] if isinstance(self.n_ph, tuple) else self.n_ph

    @property
    def n_ph_x(self) -> int:
        return self.n_ph[1] if isinstance(self.n_ph, tuple) else self.n_ph

    @property
    def dims(self) -> list[int]:
        """Kronecker-ordered site dimensions: [spin, z-sites..., x-sites...]."""
        return [2] + [self.n_ph_z] * self.chain_z.length + [self.n_ph_x] * self.chain_x.length

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def check_dimension(self):
        """The cap applies when the full Hilbert space is materialized."""
        if self.dim > self.dim_cap:
            raise ValueError(f"Hilbert dimension {self.dim} exceeds cap {self.dim_cap}")

    def params(self) -> dict:
        return {
            "l_z": self.chain_z.length, "l_x": self.chain_x.length,
            "n_ph": [self.n_ph_z, self.n_ph_x], "bias": self.bias,
            "eta_z": self.chain_z.eta, "eta_x": self.chain_x.eta,
        }


@dataclass
class SpectrumResult:
    """Lowest eigenpairs, sorted ascending."""

    energies: np.ndarray
    vectors: np.ndarray  # (dim, k)
    params: dict = field(default_factory=dict)

    @property
    def degeneracy_gap(self) -> float:
        return float(self.energies[1] - self.energies[0])

    def to_json(self) -> str:
        return json.dumps({
            "energies": [float(e) for e in self.energies],
            "degeneracy_gap": self.degeneracy_gap,
            "params": self.params,
        }, sort_keys=True)


def site_operator(dims: list[int], ops: dict[int, np.ndarray]) -> sp.csr_matrix:
    """Kronecker embedding of per-site operators (identity elsewhere)."""
    out = None
    for i, d in enumerate(dims):
        op = sp.csr_matrix(ops[i]) if i in ops else sp.identity(d, format="csr")
        out = op if out is None else sp.kron(out, op, format="csr")
    return out


def build_hamiltonian(model: DenseModel) -> sp.csr_matrix:
    """Assemble the chain-mapped Hamiltonian as a sparse Hermitian matrix."""
    model.check_dimension()
    dims = model.dims
    h = sp.csr_matrix((model.dim, model.dim))
    if model.bias != 0.0:
        h = h + (model.bias / 2.0) * site_operator(dims, {0: SIGMA_Z})
    offsets = {"z": 1, "x": 1 + model.chain_z.length}
    for tag, chain, sigma, nb in (
        ("z", model.chain_z, SIGMA_Z, model.n_ph_z),
        ("x", model.chain_x, SIGMA_X, model.n_ph_x),
    ):
        if chain.length == 0:
            continue
        b, bdag, num = ladder_matrices(nb)
        off = offsets[tag]
        g = np.sqrt(chain.eta / (4.0 * np.pi))
        if g != 0.0:
            h = h + g * site_operator(dims, {0: sigma, off: b + bdag})
        for i in range(chain.length):
            h = h + chain.omegas[i] * site_operator(dims, {off + i: num})
        for i in range(chain.length - 1):
            hop = site_operator(dims, {off + i + 1: bdag, off + i: b})
            h = h + chain.hops[i] * (hop + hop.T)
    return h


def _gershgorin_lower_bound(h: sp.csr_matrix) -> float:
    diag = h.diagonal()
    row_sums = np.abs(h).sum(axis=1).A1 - np.abs(diag)
    return float(np.min(diag - row_sums))


def ground_state(model: DenseModel, k: int = 2, dense_cutoff: int = 4096) -> SpectrumResult:
    """Lowest ``k`` eigenpairs (k >= 2, so the ground doublet is visible).

    Dense diagonalization below ``dense_cutoff``; shift-invert Lanczos with
    the shift below the Gershgorin lower bound above it.
    """
    if k < 2:
        raise ValueError("request at least k = 2 eigenpairs")
    h = build_hamiltonian(model)
    dim = h.shape[0]
    k = min(k, dim)
    if dim <= dense_cutoff:
        energies, vectors = np.linalg.eigh(h.toarray())
        energies, vectors = energies[:k], vectors[:, :k]
    else:
        sigma = _gershgorin_lower_bound(h) - 1.0
        energies, vectors = spla.eigsh(h.tocsc(), k=k, sigma=sigma, which="LM", tol=0)
        order = np.argsort(energies)
        energies, vectors = energies[order], vectors[:, order]
    return SpectrumResult(energies=energies, vectors=vectors, params=model.params())


def single_mode_model(lambda_z: float, lambda_x: float, omega: float = 1.0,
                      n_ph: int | tuple[int, int] = 60, bias: float = 0.0) -> DenseModel:
    """One boson mode per bath with coupling (sigma/2) lambda (b + b^dag)."""
    def chain(lam):
        return ChainCoefficients(omegas=np.array([omega]), hops=np.zeros(0),
                                 eta=np.pi * lam ** 2)
    return DenseModel(chain_z=chain(lambda_z), chain_x=chain(lambda_x),
                      n_ph=n_ph, bias=bias)


def measure_dense(model: DenseModel, vector: np.ndarray,
                  energy: float | None = None) -> ObservableReport:
    """Energy, spin expectations and per-site displacements of a state."""
    dims = model.dims
    v = vector / np.linalg.norm(vector)
    if energy is None:
        h = build_hamiltonian(model)
        energy = float(np.real(np.conj(v) @ (h @ v)))

    def expect(ops):
        return float(np.real(np.conj(v) @ (site_operator(dims, ops) @ v)))

    sz = expect({0: SIGMA_Z})
    sx = expect({0: SIGMA_X})
    xs = []
    for site in range(1, len(dims)):
        b, bdag, _ = ladder_matrices(dims[site])
        xs.append(expect({site: (b + bdag) / np.sqrt(2.0)}))
    return ObservableReport(energy=float(energy), sigma_z=sz, sigma_x=sx,
                            displacements=np.array(xs))


def _hermite_functions(n_max: int, omega: float, grid: np.ndarray) -> np.ndarray:
    """phi_n(u) for the oscillator H = omega b^dag b (mass 1), rows n, cols u."""
    u = np.sqrt(omega) * grid
    phi = np.empty((n_max, len(grid)))
    phi[0] = omega ** 0.25 * np.pi ** -0.25 * np.exp(-0.5 * u ** 2)
    if n_max > 1:
        phi[1] = np.sqrt(2.0) * u * phi[0]
    for n in range(1, n_max - 1):
        phi[n + 1] = np.sqrt(2.0 / (n + 1)) * u * phi[n] - np.sqrt(n / (n + 1.0)) * phi[n - 1]
    return phi


def single_mode_population(model: DenseModel, vector: np.ndarray,
                           x_grid: np.ndarray, z_grid: np.ndarray) -> np.ndarray:
    """Phonon population P(x, z) = |psi_+(x, z)|**2 + |psi_-(x, z)|**2.

    Requires one mode per bath.  ``P[i, j]`` samples (x_grid[i], z_grid[j]);
    a warning is issued when the grid fails to normalize within 1%.
    """
    if model.chain_z.length != 1 or model.chain_x.length != 1:
        raise ValueError("phonon population needs a single-mode-per-bath model")
    psi = np.asarray(vector).reshape(2, model.n_ph_z, model.n_ph_x)
    phi_z = _hermite_functions(model.n_ph_z, model.chain_z.omegas[0], z_grid)
    phi_x = _hermite_functions(model.n_ph_x, model.chain_x.omegas[0], x_grid)
    p = np.zeros((len(x_grid), len(z_grid)))
    for sigma in range(2):
        amp = phi_x.T @ psi[sigma].T @ phi_z  # (x, z)
        p += np.abs(amp) ** 2
    total = np.trapz(np.trapz(p, z_grid, axis=1), x_grid)
    if abs(total - 1.0) > 0.01:
        import warnings
        warnings.warn(f"population grid integrates to {total:.4f}; refine the grid",
                      stacklevel=2)
    return p


def population_centroid(p: np.ndarray, x_grid: np.ndarray, z_grid: np.ndarray):
    """Mean (x, z) of a population field."""
    total = np.trapz(np.trapz(p, z_grid, axis=1), x_grid)
    cx = np.trapz(np.trapz(p * x_grid[:, None], z_grid, axis=1), x_grid) / total
    cz = np.trapz(np.trapz(p * z_grid[None, :], z_grid, axis=1), x_grid) / total
    return float(cx), float(cz)
