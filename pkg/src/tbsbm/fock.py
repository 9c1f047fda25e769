"""Truncated Fock-space toolbox shared by every solver.

Ladder operators, coherent states, displacement expectations and the local
parity exp(i pi n) on a boson mode truncated at ``dim`` states, plus the
``LocalBasis`` transform from the bare Fock basis into an optimized one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln


def ladder_matrices(dim: int):
    """Truncated (b, b_dagger, n_hat) matrices.

    The truncated commutator [b, b_dagger] equals the identity except for
    the last diagonal entry, which is 1 - dim.
    """
    if dim < 1:
        raise ValueError("local dimension must be at least 1")
    b = np.diag(np.sqrt(np.arange(1.0, dim)), k=1)
    return b, b.T.copy(), np.diag(np.arange(float(dim)))


def position_operator(dim: int) -> np.ndarray:
    """X = (b + b_dagger) / sqrt(2)."""
    b, bdag, _ = ladder_matrices(dim)
    return (b + bdag) / np.sqrt(2.0)


def local_parity(dim: int) -> np.ndarray:
    """Diagonal parity matrix (-1)**n, starting at +1."""
    return np.diag((-1.0) ** np.arange(dim))


def coherent_overlap(f: complex, g: complex) -> complex:
    """<f|g> = exp(-|f-g|**2 / 2 + i Im(conj(f) g))."""
    return np.exp(-0.5 * abs(f) ** 2 - 0.5 * abs(g) ** 2 + np.conj(f) * g)


@dataclass(frozen=True)
class LocalBasis:
    """Basis of one site: ``transform`` maps bare Fock -> current basis.

    Columns of ``transform`` (shape bare_dim x dim) are the current basis
    vectors expressed in the bare Fock basis; the identity when bare.
    """

    dim: int
    transform: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.transform, dtype=float)
        t.flags.writeable = False
        object.__setattr__(self, "transform", t)
        if t.shape != (self.bare_dim, self.dim):
            raise ValueError(f"transform shape {t.shape} does not match dim {self.dim}")
        gram = t.T @ t
        if not np.allclose(gram, np.eye(self.dim), atol=1e-12):
            raise ValueError("basis transform must have orthonormal columns to 1e-12")

    @property
    def bare_dim(self) -> int:
        return np.shape(self.transform)[0]

    @classmethod
    def bare(cls, dim: int) -> "LocalBasis":
        return cls(dim=dim, transform=np.eye(dim))

    @classmethod
    def restricted(cls, bare_dim: int, dim: int) -> "LocalBasis":
        """Plain lowest-``dim`` Fock truncation of a ``bare_dim`` space."""
        if dim > bare_dim:
            raise ValueError("restricted dimension cannot exceed the bare one")
        return cls(dim=dim, transform=np.eye(bare_dim)[:, :dim])

    def project(self, bare_operator: np.ndarray) -> np.ndarray:
        """Operator matrix in the current basis, V^dag O V."""
        return self.transform.T @ bare_operator @ self.transform


@dataclass(frozen=True)
class CoherentState:
    """Normalized truncated expansion of |f> = exp(f b^dag - f* b)|0>."""

    displacement: complex
    dim: int
    eps_trunc: float = 1e-10
    vector: np.ndarray = field(init=False)
    series_norm: float = field(init=False)

    def __post_init__(self):
        n = np.arange(self.dim)
        log_mag = n * np.log(abs(self.displacement)) - 0.5 * gammaln(n + 1.0) \
            if self.displacement != 0 else np.where(n == 0, 0.0, -np.inf)
        phase = np.exp(1j * np.angle(self.displacement) * n)
        amp = np.exp(log_mag - 0.5 * abs(self.displacement) ** 2) * phase
        series_norm = float(np.linalg.norm(amp))
        if series_norm < 1.0 - self.eps_trunc:
            warnings.warn(
                f"coherent state |f|={abs(self.displacement):.3g} truncated at dim {self.dim}: "
                f"series norm {series_norm:.12f}", stacklevel=2)
        vec = amp / series_norm
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)
        object.__setattr__(self, "series_norm", series_norm)


def coherent_vector(f: complex, dim: int, eps_trunc: float = 1e-10) -> np.ndarray:
    return CoherentState(displacement=f, dim=dim, eps_trunc=eps_trunc).vector


def displacement_expectation(state_vector: np.ndarray, basis: LocalBasis | None = None) -> float:
    """<b^dag + b> / sqrt(2) of a normalized single-site state.

    When ``basis`` is given the state lives in the current (optimized) basis
    and the operator is conjugated through the transform.
    """
    v = np.asarray(state_vector)
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"state must be normalized, got |v| = {norm}")
    dim = len(v) if basis is None else basis.bare_dim
    x = position_operator(dim)
    if basis is not None:
        x = basis.project(x)
    return float(np.real(np.conj(v) @ x @ v))
