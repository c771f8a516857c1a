"""Time-dependent Lindblad propagation.

``evolve`` integrates

    drho/dt = -i[H(t), rho] + sum_k rate_k D[L_k] rho,
    D[L] rho = L rho L^dag - {L^dag L, rho}/2

with an embedded Dormand-Prince 5(4) pair.  When there are no collapse
terms the state is propagated as an ensemble of weighted kets taken from the
spectral decomposition of the initial density matrix, which is exact for
unitary dynamics and far cheaper on the two-mode layout.

``evolve_exact_oracle`` is an independent reference for small systems: it
exponentiates the column-stacked Liouvillian on piecewise-constant segments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import expm

from .gate import TimeDependentHamiltonian
from .quantum import (DensityMatrix, HilbertLayout, KetEnsemble, Operator, density_diagnostics, partial_trace,
                      reduced_from_kets)

# rel 1e-8 leaves ~4e-9 of integration error in the ideal-gate fidelity
DEFAULT_REL_TOL = 1e-9
DEFAULT_ABS_TOL = 1e-11
ORACLE_MAX_DIM = 64
ENSEMBLE_WEIGHT_CUTOFF = 1e-15

# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B_LOW = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_LOW


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t_reached: float):
        super().__init__(f"{message} (reached t = {t_reached:.6g} s)")
        self.t_reached = t_reached


@dataclass
class Tolerances:
    rel_tol: float = DEFAULT_REL_TOL
    abs_tol: float = DEFAULT_ABS_TOL
    max_step: float = math.inf
    max_steps: int = 2_000_000


@dataclass
class EvolutionProblem:
    hamiltonian: TimeDependentHamiltonian
    collapse_terms: Sequence[tuple[Operator | np.ndarray, float]]
    initial_state: DensityMatrix | KetEnsemble
    t_final: float
    output_grid: Sequence[float] | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    # times where H(t) may be discontinuous; the integrator never steps across them
    breakpoints: Sequence[float] = ()

    def __post_init__(self):
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        for _, rate in self.collapse_terms:
            if rate < 0:
                raise ValueError("collapse rates must be >= 0")
        grid = [self.t_final] if self.output_grid is None else list(self.output_grid)
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise ValueError("output_grid must be sorted")
        if grid and (grid[0] < 0 or grid[-1] > self.t_final * (1 + 1e-12)):
            raise ValueError("output_grid must lie within [0, t_final]")
        self.output_grid = grid

    @property
    def layout(self) -> HilbertLayout:
        return self.hamiltonian.layout


class Trajectory:
    """States on the output grid plus per-state diagnostics.

    Unitary runs keep the propagated ket ensemble and only build full density
    matrices on access; reduced spin states come straight from the kets.
    """

    def __init__(self, times, layout, mats=None, amplitudes=None, steps=0, rejected=0):
        self.times = list(times)
        self.layout = layout
        self.steps = steps
        self.rejected = rejected
        self._mats = mats
        self._amps = amplitudes
        self._states = None
        self.trace_deviation, self.hermiticity_deviation, self.min_eigenvalue = [], [], []
        if mats is not None:
            for m in mats:
                tr, herm, mn = density_diagnostics(m)
                self.trace_deviation.append(tr)
                self.hermiticity_deviation.append(herm)
                self.min_eigenvalue.append(mn)
        else:
            for amp in amplitudes:
                # nonzero spectrum of A A^dag equals that of the small Gram matrix A^dag A
                gram = amp.conj().T @ amp
                ev = np.linalg.eigvalsh(gram)
                self.trace_deviation.append(float(abs(ev.sum() - 1.0)))
                self.hermiticity_deviation.append(0.0)
                self.min_eigenvalue.append(float(min(ev.min(), 0.0)) if amp.shape[1] >= amp.shape[0] else 0.0)

    @property
    def states(self) -> list[DensityMatrix]:
        if self._states is None:
            mats = self._mats if self._mats is not None else [a @ a.conj().T for a in self._amps]
            self._states = [DensityMatrix(m, self.layout, check=False) for m in mats]
        return self._states

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]

    def reduced(self, index: int = -1, keep=None) -> np.ndarray:
        """Reduced density matrix (default: the qubits) at output ``index``."""
        keep = list(range(self.layout.qubit_count)) if keep is None else list(keep)
        if self._amps is not None:
            return reduced_from_kets(self._amps[index], self.layout, keep)
        return partial_trace(self._mats[index], keep, self.layout).matrix


def dissipator_apply(L: Operator | np.ndarray, rho: DensityMatrix | np.ndarray) -> np.ndarray:
    """D[L] rho = L rho L^dag - (L^dag L rho + rho L^dag L) / 2."""
    lm = L.matrix if isinstance(L, Operator) else np.asarray(L)
    r = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if isinstance(L, Operator) and isinstance(rho, DensityMatrix):
        if L.layout is not None and rho.layout is not None and L.layout != rho.layout:
            raise ValueError("layout mismatch")
    if lm.shape != r.shape:
        raise ValueError(f"shape mismatch {lm.shape} vs {r.shape}")
    ld = lm.conj().T
    ldl = ld @ lm
    return lm @ r @ ld - 0.5 * (ldl @ r + r @ ldl)


def _rk_integrate(rhs: Callable[[float, np.ndarray], np.ndarray], y0: np.ndarray, grid: Sequence[float],
                  breakpoints: Sequence[float], tol: Tolerances):
    """Adaptive DP5(4) from t=0 landing exactly on every grid point and breakpoint."""
    stops = sorted(set([float(g) for g in grid] + [float(b) for b in breakpoints if 0 < b < grid[-1]]))
    wanted = set(float(g) for g in grid)
    y = y0.copy()
    t = 0.0
    out = []
    if stops and stops[0] == 0.0:
        out.append(y.copy())
        stops = stops[1:]
    steps = rejected = 0
    f = rhs(t, y)
    h = _initial_step(rhs, t, y, f, tol, stops[-1] if stops else 0.0)
    k = [None] * 7
    for stop in stops:
        while t < stop:
            h = min(h, tol.max_step)
            if not h >= 1e-14 * max(1.0, abs(t)):
                raise IntegrationError("step size underflow", t)
            last = t + h >= stop * (1 - 1e-14)
            hh = stop - t if last else h
            k[0] = f
            for i in range(1, 7):
                acc = y.copy()
                for j, a in enumerate(_A[i]):
                    if a:
                        acc += (hh * a) * k[j]
                k[i] = rhs(t + _C[i] * hh, acc)
            y_new = acc  # stage 7 argument is the 5th-order solution (FSAL)
            err = sum((hh * e) * kk for e, kk in zip(_E, k) if e)
            scale = tol.abs_tol + tol.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            en = _rms(np.abs(err) / scale)
            steps += 1
            if steps > tol.max_steps:
                raise IntegrationError("maximum number of steps exceeded", t)
            if en <= 1.0:
                t = stop if last else t + hh
                y = y_new
                f = k[6]
                fac = 0.9 * en ** -0.2 if en > 0 else 5.0
                if not last:
                    h = hh * min(5.0, max(0.2, fac))
            else:
                rejected += 1
                h = hh * max(0.1, 0.9 * en ** -0.2)
                if h < 1e-14 * max(1.0, abs(t)) or not np.isfinite(en):
                    raise IntegrationError("step size underflow", t)
        if stop in wanted:
            out.append(y.copy())
    return out, steps, rejected


def _rms(x: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        return math.sqrt(float(np.mean(x ** 2)))


def _initial_step(rhs, t, y, f, tol: Tolerances, t_end: float) -> float:
    scale = tol.abs_tol + tol.rel_tol * np.abs(y)
    d0 = _rms(np.abs(y) / scale)
    d1 = _rms(np.abs(f) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 or not math.isfinite(d0 / d1) else 0.01 * d0 / d1
    y1 = y + h0 * f
    d2 = _rms(np.abs(rhs(t + h0, y1) - f) / scale) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    if not h1 > 0:
        h1 = h0
    h = min(100 * h0, h1, tol.max_step)
    return min(h, t_end) if t_end > 0 else h


def _collapse_arrays(terms, dense: bool = False):
    out = []
    for L, r in terms:
        if r <= 0:
            continue
        if isinstance(L, Operator):
            L = L.matrix
        if sparse.issparse(L):
            L = L.toarray() if dense else sparse.csr_matrix(L, dtype=complex)
        else:
            L = np.asarray(L, dtype=complex)
        out.append((L, float(r)))
    return out


def _is_diagonal(m) -> bool:
    if sparse.issparse(m):
        c = m.tocoo()
        return bool(np.all(c.row[c.data != 0] == c.col[c.data != 0]))
    return bool(np.count_nonzero(m - np.diag(np.diag(m))) == 0)


class _HamiltonianKernel:
    """Fast H(t) @ X for a fixed set of terms.

    Terms share one sparsity pattern, so H(t) is a CSR matrix whose data array
    is a coefficient-weighted sum of per-term data; dense when the pattern is
    not sparse enough to pay off.
    """

    SPARSE_FILL = 0.1

    def __init__(self, H: TimeDependentHamiltonian, extra=None):
        self.H = H
        mats = [sparse.csr_matrix(m) for _, m in H.terms]
        if extra is not None:
            mats.append(sparse.csr_matrix(extra))
        self.n_static = len(mats) - len(H.terms)
        dim = H.layout.dim
        pattern = sum(abs(m) for m in mats).tocsr()
        pattern.sort_indices()
        rows = np.repeat(np.arange(dim), np.diff(pattern.indptr))
        cols = pattern.indices
        self.sparse = pattern.nnz < self.SPARSE_FILL * dim * dim
        if pattern.nnz:
            self.data = np.array([np.asarray(m[rows, cols]).ravel() for m in mats], dtype=complex)
        else:
            self.data = np.zeros((len(mats), 0), dtype=complex)
        if self.sparse:
            self.csr = sparse.csr_matrix((np.zeros(pattern.nnz, dtype=complex), cols.copy(), pattern.indptr.copy()),
                                         shape=(dim, dim))
        else:
            self.rows, self.cols, self.dim = rows, cols, dim

    def matrix(self, t: float):
        coeffs = np.asarray(list(self.H.coefficients(t)) + [1.0] * self.n_static, dtype=complex)
        data = coeffs @ self.data
        if self.sparse:
            self.csr.data = data
            return self.csr
        out = np.zeros((self.dim, self.dim), dtype=complex)
        out[self.rows, self.cols] = data
        return out


def evolve(problem: EvolutionProblem) -> Trajectory:
    """Integrate the master equation and return states on ``problem.output_grid``."""
    layout = problem.layout
    coll = _collapse_arrays(problem.collapse_terms)
    init = problem.initial_state

    if coll:
        rho0 = init.matrix
        damping = sum(0.5 * r * (L.conj().T @ L) for L, r in coll)
        if sparse.issparse(damping):
            damping = damping.tocsr()
        kernel = _HamiltonianKernel(problem.hamiltonian, -1j * damping)
        diag_jumps, jumps = [], []
        for L, r in coll:
            J = math.sqrt(r) * L
            if _is_diagonal(J):
                v = np.asarray(J.diagonal()).ravel()
                diag_jumps.append(np.outer(v, v.conj()))
            else:
                jumps.append(J)
        diag_factor = sum(diag_jumps) if diag_jumps else None

        def rhs(t, r):
            # -i(Heff r - r Heff^dag) with Heff = H - i/2 sum L^dag L
            x = kernel.matrix(t) @ r
            d = -1j * x + 1j * x.conj().T
            if diag_factor is not None:
                d += diag_factor * r
            for J in jumps:
                # J r J^dag = J (J r)^dag for Hermitian r; avoids dense @ sparse
                d += J @ (J @ r).conj().T
            return d

        raw, steps, rejected = _rk_integrate(rhs, np.array(rho0, dtype=complex), problem.output_grid,
                                             problem.breakpoints, problem.tolerances)
        return Trajectory(problem.output_grid, layout, mats=[0.5 * (m + m.conj().T) for m in raw],
                          steps=steps, rejected=rejected)

    kernel = _HamiltonianKernel(problem.hamiltonian)
    if isinstance(init, KetEnsemble):
        psi0 = init.amplitudes
    else:
        rho0 = init.matrix
        w, v = np.linalg.eigh(0.5 * (rho0 + rho0.conj().T))
        keep = w > ENSEMBLE_WEIGHT_CUTOFF
        psi0 = v[:, keep] * np.sqrt(w[keep])

    def rhs(t, psi):
        return -1j * (kernel.matrix(t) @ psi)

    raw, steps, rejected = _rk_integrate(rhs, psi0, problem.output_grid, problem.breakpoints, problem.tolerances)
    return Trajectory(problem.output_grid, layout, amplitudes=raw, steps=steps, rejected=rejected)


def liouvillian(H: np.ndarray, collapse_terms=()) -> np.ndarray:
    """Column-stacking superoperator, vec(rho) = rho.flatten(order='F')."""
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    eye = np.eye(n)
    sup = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for L, rate in _collapse_arrays(collapse_terms, dense=True):
        ldl = L.conj().T @ L
        sup += rate * (np.kron(L.conj(), L) - 0.5 * np.kron(eye, ldl) - 0.5 * np.kron(ldl.T, eye))
    return sup


def evolve_exact_oracle(segments: Sequence[tuple[float, np.ndarray]], collapse_terms, initial_state: DensityMatrix,
                        output_grid: Sequence[float], frame_hamiltonian: np.ndarray | None = None) -> Trajectory:
    """Exact propagation for a piecewise-constant Hamiltonian.

    ``segments`` is a list of ``(t_end, H)`` with increasing ``t_end``; H is
    constant on ``(previous t_end, t_end]``.  With ``frame_hamiltonian`` H0 the
    returned states are ``exp(i H0 t) rho(t) exp(-i H0 t)``, which turns a
    static rotating-frame problem into its interaction-frame counterpart.
    """
    rho0 = initial_state.matrix
    n = rho0.shape[0]
    if n > ORACLE_MAX_DIM:
        raise ValueError(f"oracle limited to dimension {ORACLE_MAX_DIM}, got {n}")
    grid = sorted(float(t) for t in output_grid)
    if grid and grid[-1] > segments[-1][0] * (1 + 1e-12):
        raise ValueError("output grid extends beyond the last segment")
    gens = [liouvillian(Hs, collapse_terms) for _, Hs in segments]
    ends = [float(te) for te, _ in segments]
    vec = rho0.flatten(order="F").astype(complex)
    t = 0.0
    seg = 0
    states = []
    for tg in grid:
        while seg < len(ends) and ends[seg] < tg:
            vec = expm(gens[seg] * (ends[seg] - t)) @ vec
            t = ends[seg]
            seg += 1
        vec = expm(gens[min(seg, len(gens) - 1)] * (tg - t)) @ vec
        t = tg
        states.append(vec.reshape((n, n), order="F"))
    if frame_hamiltonian is not None:
        w, v = np.linalg.eigh(frame_hamiltonian)
        rotated = []
        for tg, m in zip(grid, states):
            u = (v * np.exp(1j * w * tg)) @ v.conj().T
            rotated.append(u @ m @ u.conj().T)
        states = rotated
    return Trajectory(grid, initial_state.layout, mats=states)
