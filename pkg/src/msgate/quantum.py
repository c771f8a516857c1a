"""Dense operator algebra on truncated qubit x Fock tensor-product spaces.

Basis conventions: qubit index 0 is |up>, index 1 is |down>.  Tensor factors
are ordered qubits first, then motional modes in the order listed by the
layout (gate mode r2, then the optional spectator mode r1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

DEFAULT_FOCK_CUTOFF = 25

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = -1e-8


class DimensionError(ValueError):
    """Raised when operator or layout dimensions are inconsistent."""


@dataclass(frozen=True)
class HilbertLayout:
    qubit_count: int = 2
    fock_dims: tuple[int, ...] = (DEFAULT_FOCK_CUTOFF,)

    def __post_init__(self):
        object.__setattr__(self, "fock_dims", tuple(int(d) for d in self.fock_dims))
        if self.qubit_count < 1:
            raise DimensionError("qubit_count must be >= 1")
        if any(d < 2 for d in self.fock_dims):
            raise DimensionError(f"every Fock dimension must be >= 2, got {self.fock_dims}")

    @property
    def factor_dims(self) -> tuple[int, ...]:
        return (2,) * self.qubit_count + self.fock_dims

    @property
    def dim(self) -> int:
        return int(np.prod(self.factor_dims))

    @property
    def n_factors(self) -> int:
        return len(self.factor_dims)

    def qubit_factor(self, j: int) -> int:
        if not 0 <= j < self.qubit_count:
            raise IndexError(f"qubit {j} out of range")
        return j

    def mode_factor(self, m: int) -> int:
        if not 0 <= m < len(self.fock_dims):
            raise IndexError(f"mode {m} not in layout with {len(self.fock_dims)} modes")
        return self.qubit_count + m


@dataclass(frozen=True, eq=False)
class Operator:
    """A dense square matrix bound to a layout (or a bare factor when layout is None)."""

    matrix: np.ndarray
    layout: HilbertLayout | None = None
    hermitian: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got shape {m.shape}")
        if self.layout is not None and m.shape[0] != self.layout.dim:
            raise DimensionError(f"operator dimension {m.shape[0]} != layout dimension {self.layout.dim}")
        if self.hermitian:
            scale = max(np.abs(m).max(), 1e-300)
            if np.abs(m - m.conj().T).max() > 1e-12 * scale:
                raise ValueError("operator flagged Hermitian is not Hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.layout, self.hermitian)

    def _coerce(self, other):
        if isinstance(other, Operator):
            if self.layout is not None and other.layout is not None and self.layout != other.layout:
                raise DimensionError("layout mismatch")
            return other.matrix, self.layout or other.layout
        return other, self.layout

    def __matmul__(self, other):
        m, lay = self._coerce(other)
        return Operator(self.matrix @ m, lay)

    def __add__(self, other):
        m, lay = self._coerce(other)
        return Operator(self.matrix + m, lay)

    def __sub__(self, other):
        m, lay = self._coerce(other)
        return Operator(self.matrix - m, lay)

    def __mul__(self, c):
        return Operator(self.matrix * c, self.layout)

    __rmul__ = __mul__

    def __neg__(self):
        return Operator(-self.matrix, self.layout, self.hermitian)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    layout: HilbertLayout | None = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"density matrix must be square, got shape {m.shape}")
        if self.layout is not None and m.shape[0] != self.layout.dim:
            raise DimensionError(f"state dimension {m.shape[0]} != layout dimension {self.layout.dim}")
        if self.check:
            validate_density(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_ket(cls, psi, layout: HilbertLayout | None = None) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), layout)


def density_diagnostics(m: np.ndarray) -> tuple[float, float, float]:
    """Return (|trace - 1|, hermiticity deviation, minimum eigenvalue)."""
    herm = float(np.abs(m - m.conj().T).max())
    tr = float(abs(np.trace(m) - 1.0))
    min_eig = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min())
    return tr, herm, min_eig


def validate_density(m: np.ndarray, herm_tol: float = HERMITIAN_TOL, trace_tol: float = TRACE_TOL,
                     positivity_tol: float = POSITIVITY_TOL) -> None:
    tr, herm, min_eig = density_diagnostics(m)
    if herm > herm_tol:
        raise ValueError(f"density matrix not Hermitian (deviation {herm:.3g})")
    if tr > trace_tol:
        raise ValueError(f"density matrix trace deviates from 1 by {tr:.3g}")
    if min_eig < positivity_tol:
        raise ValueError(f"density matrix has negative eigenvalue {min_eig:.3g}")


def fock_ladder(n_max: int) -> Operator:
    """Annihilation operator on the Fock basis |0>..|n_max-1>."""
    if n_max < 2:
        raise DimensionError(f"Fock cutoff must be >= 2, got {n_max}")
    return Operator(np.diag(np.sqrt(np.arange(1, n_max)), k=1).astype(complex))


def number_op(n_max: int) -> Operator:
    return Operator(np.diag(np.arange(n_max, dtype=float)).astype(complex), hermitian=True)


def qubit_ops() -> tuple[Operator, Operator, Operator, Operator, Operator]:
    """Return (sx, sy, sz, s_plus, s_minus) with |up> at index 0."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    sp = 0.5 * (sx + 1j * sy)
    sm = 0.5 * (sx - 1j * sy)
    return (Operator(sx, hermitian=True), Operator(sy, hermitian=True), Operator(sz, hermitian=True),
            Operator(sp), Operator(sm))


def identity(layout: HilbertLayout) -> Operator:
    return Operator(np.eye(layout.dim, dtype=complex), layout, hermitian=True)


def tensor(*mats) -> np.ndarray:
    mats = [m.matrix if isinstance(m, Operator | DensityMatrix) else np.asarray(m) for m in mats]
    return reduce(np.kron, mats)


def embed(op: Operator | np.ndarray, factor_index: int, layout: HilbertLayout) -> Operator:
    """Lift a single-factor operator to the full layout (identity elsewhere)."""
    m = op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    dims = layout.factor_dims
    if not 0 <= factor_index < len(dims):
        raise IndexError(f"factor {factor_index} out of range for {len(dims)} factors")
    if m.shape != (dims[factor_index],) * 2:
        raise DimensionError(f"operator shape {m.shape} does not match factor dimension {dims[factor_index]}")
    left = int(np.prod(dims[:factor_index]))
    right = int(np.prod(dims[factor_index + 1:]))
    full = np.kron(np.kron(np.eye(left), m), np.eye(right))
    herm = isinstance(op, Operator) and op.hermitian
    return Operator(full, layout, herm)


def thermal_populations(nbar: float, n_max: int) -> np.ndarray:
    if nbar < 0:
        raise ValueError(f"mean occupation must be >= 0, got {nbar}")
    if n_max < 2:
        raise DimensionError(f"Fock cutoff must be >= 2, got {n_max}")
    if nbar == 0:
        p = np.zeros(n_max)
        p[0] = 1.0
        return p
    q = nbar / (1.0 + nbar)
    p = q ** np.arange(n_max) / (1.0 + nbar)
    return p / p.sum()


def thermal_state(nbar: float, n_max: int) -> DensityMatrix:
    """Thermal state of one mode, renormalized on the truncated basis."""
    return DensityMatrix(np.diag(thermal_populations(nbar, n_max)).astype(complex))


def product_state(*states: DensityMatrix | np.ndarray, layout: HilbertLayout | None = None) -> DensityMatrix:
    return DensityMatrix(tensor(*states), layout)


def partial_trace(rho: DensityMatrix | np.ndarray, keep: Iterable[int],
                  layout: HilbertLayout | None = None) -> DensityMatrix:
    """Reduced state on the factors in ``keep`` (indices into layout.factor_dims)."""
    layout = layout or getattr(rho, "layout", None)
    if layout is None:
        raise ValueError("partial_trace needs a layout")
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep set must be non-empty")
    dims = layout.factor_dims
    n = len(dims)
    if keep[0] < 0 or keep[-1] >= n:
        raise IndexError(f"factor index out of range for {n} factors")
    traced = [i for i in range(n) if i not in keep]
    t = m.reshape(dims + dims)
    perm = keep + traced + [n + i for i in keep] + [n + i for i in traced]
    t = t.transpose(perm)
    dk = int(np.prod([dims[i] for i in keep]))
    dt = int(np.prod([dims[i] for i in traced])) if traced else 1
    t = t.reshape(dk, dt, dk, dt)
    red = np.einsum("ajbj->ab", t)
    return DensityMatrix(red, None, check=False)


def spin_state(rho: DensityMatrix | np.ndarray, layout: HilbertLayout | None = None) -> DensityMatrix:
    layout = layout or getattr(rho, "layout", None)
    return partial_trace(rho, range(layout.qubit_count), layout)


def expect(op: Operator | np.ndarray, rho: DensityMatrix | np.ndarray) -> complex:
    if isinstance(op, Operator) and isinstance(rho, DensityMatrix):
        if op.layout is not None and rho.layout is not None and op.layout != rho.layout:
            raise DimensionError("layout mismatch")
    a = op.matrix if isinstance(op, Operator) else np.asarray(op)
    r = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if a.shape != r.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {r.shape}")
    # tr(A rho) without forming the product
    return complex(np.einsum("ij,ji->", a, r))


def basis_ket(dims: Sequence[int], indices: Sequence[int]) -> np.ndarray:
    flat = np.ravel_multi_index(tuple(indices), tuple(dims))
    v = np.zeros(int(np.prod(dims)), dtype=complex)
    v[flat] = 1.0
    return v


def embed_sparse(op, factor_index: int, layout: HilbertLayout) -> sparse.csr_matrix:
    """Sparse counterpart of :func:`embed`, used for large two-mode layouts."""
    m = op.matrix if isinstance(op, Operator) else op
    dims = layout.factor_dims
    if not 0 <= factor_index < len(dims):
        raise IndexError(f"factor {factor_index} out of range for {len(dims)} factors")
    if m.shape != (dims[factor_index],) * 2:
        raise DimensionError(f"operator shape {m.shape} does not match factor dimension {dims[factor_index]}")
    left = int(np.prod(dims[:factor_index]))
    right = int(np.prod(dims[factor_index + 1:]))
    out = sparse.kron(sparse.kron(sparse.identity(left, dtype=complex), sparse.csr_matrix(m)),
                      sparse.identity(right, dtype=complex))
    return out.tocsr()


@dataclass(frozen=True, eq=False)
class KetEnsemble:
    """rho = sum_k weights[k] |kets[:, k]><kets[:, k]| without forming rho.

    The propagator accepts this in place of a DensityMatrix, which avoids a
    dim x dim eigendecomposition for product thermal states.
    """

    weights: np.ndarray
    kets: np.ndarray
    layout: HilbertLayout | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        k = np.asarray(self.kets, dtype=complex)
        if k.ndim != 2 or k.shape[1] != w.size:
            raise DimensionError("kets must be (dim, n) with one weight per column")
        if np.any(w < 0) or abs(w.sum() - 1) > TRACE_TOL:
            raise ValueError("ensemble weights must be non-negative and sum to 1")
        if self.layout is not None and k.shape[0] != self.layout.dim:
            raise DimensionError("ket dimension does not match layout")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kets", k)

    @property
    def dim(self) -> int:
        return self.kets.shape[0]

    @property
    def amplitudes(self) -> np.ndarray:
        return self.kets * np.sqrt(self.weights)

    @property
    def matrix(self) -> np.ndarray:
        a = self.amplitudes
        return a @ a.conj().T

    def density(self) -> DensityMatrix:
        return DensityMatrix(self.matrix, self.layout)


def thermal_ensemble(spin_ket, nbars: Sequence[float], layout: HilbertLayout,
                     cutoff: float = 1e-15) -> KetEnsemble:
    """Spin ket times a product of thermal modes, as an ensemble of Fock product states.

    Fock components with joint weight below ``cutoff`` are dropped and the
    remaining weights renormalized.
    """
    spin_ket = np.asarray(spin_ket, dtype=complex).ravel()
    spin_ket = spin_ket / np.linalg.norm(spin_ket)
    if len(nbars) != len(layout.fock_dims):
        raise DimensionError("one mean occupation per motional mode required")
    pops = [thermal_populations(nb, d) for nb, d in zip(nbars, layout.fock_dims)]
    joint = reduce(np.multiply.outer, pops) if len(pops) > 1 else pops[0]
    joint = np.asarray(joint).ravel()
    idx = np.nonzero(joint > cutoff)[0]
    w = joint[idx] / joint[idx].sum()
    mode_dim = int(np.prod(layout.fock_dims))
    kets = np.zeros((layout.dim, idx.size), dtype=complex)
    for col, i in enumerate(idx):
        # spin amplitude s sits at row s*mode_dim + i
        kets[i::mode_dim, col] = spin_ket
    return KetEnsemble(w, kets, layout)


def reduced_from_kets(amplitudes: np.ndarray, layout: HilbertLayout, keep: Iterable[int]) -> np.ndarray:
    """Reduced density matrix of sum_k |a_k><a_k| on the ``keep`` factors."""
    dims = layout.factor_dims
    keep = sorted(set(keep))
    traced = [i for i in range(len(dims)) if i not in keep]
    n = amplitudes.shape[1]
    t = amplitudes.reshape(dims + (n,)).transpose(keep + traced + [len(dims)])
    dk = int(np.prod([dims[i] for i in keep]))
    t = t.reshape(dk, -1)
    return t @ t.conj().T
