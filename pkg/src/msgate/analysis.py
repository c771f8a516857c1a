"""Bell-state fidelity, analysis pulses, parity scans and fringe fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .quantum import DensityMatrix, validate_density

SQRT_HALF = 1.0 / math.sqrt(2.0)

# computational basis of the two spins, |up> = index 0
UU, UD, DU, DD = 0, 1, 2, 3


class FitError(ValueError):
    pass


def bell_target() -> np.ndarray:
    """(|up,up> + i|down,down>) / sqrt(2)."""
    return np.array([SQRT_HALF, 0, 0, 1j * SQRT_HALF], dtype=complex)


def _spin_matrix(state) -> np.ndarray:
    m = state.matrix if isinstance(state, DensityMatrix) else np.asarray(state, dtype=complex)
    if m.shape != (4, 4):
        raise ValueError(f"expected a two-qubit (4x4) state, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class Fidelity:
    """Both fidelity forms for a two-qubit state.

    ``value`` is the phase-insensitive 1/2(P_uu + P_dd) + |rho_uu,dd| used for
    the error budget; ``overlap`` is <Psi|rho|Psi> for the fixed target phase.
    """

    value: float
    overlap: float
    population_half_sum: float
    coherence: complex

    @property
    def infidelity(self) -> float:
        return 1.0 - self.value


def fidelity(spin_state, check: bool = True) -> Fidelity:
    m = _spin_matrix(spin_state)
    if check:
        validate_density(m, herm_tol=1e-8, trace_tol=1e-8)
    psi = bell_target()
    overlap = float(np.real(psi.conj() @ m @ psi))
    half = 0.5 * float(np.real(m[UU, UU] + m[DD, DD]))
    c = complex(m[UU, DD])
    return Fidelity(half + abs(c), overlap, half, c)


def fidelity_from_fits(population_sum: float, parity_amplitude: float) -> float:
    """1/2 (P_uu + P_dd) + |A|/2, the parity amplitude being |2 rho_uu,dd|."""
    return 0.5 * population_sum + 0.5 * abs(parity_amplitude)


def fidelity_error(population_sum_err: float, amplitude_err: float) -> float:
    """Quadrature propagation of the two fit errors."""
    return 0.5 * math.hypot(population_sum_err, amplitude_err)


def _rotation(phi: float) -> np.ndarray:
    c = math.cos(math.pi / 4)
    s = math.sin(math.pi / 4)
    n_sigma = np.array([[0, math.cos(phi) - 1j * math.sin(phi)], [math.cos(phi) + 1j * math.sin(phi), 0]])
    return c * np.eye(2) - 1j * s * n_sigma


def analysis_unitary(phi: float) -> np.ndarray:
    """exp(-i pi/4 sum_j (cos phi sx_j + sin phi sy_j)) on both qubits."""
    r = _rotation(phi)
    return np.kron(r, r)


def analysis_pulse(spin_state, phi: float) -> np.ndarray:
    m = _spin_matrix(spin_state)
    u = analysis_unitary(phi)
    return u @ m @ u.conj().T


@dataclass(frozen=True)
class SpinPopulations:
    p_uu: float
    p_mixed: float
    p_dd: float

    def __post_init__(self):
        vals = (self.p_uu, self.p_mixed, self.p_dd)
        if any(v < -1e-9 or v > 1 + 1e-9 for v in vals) or abs(sum(vals) - 1) > 1e-9:
            raise ValueError(f"invalid populations {vals}")

    @property
    def parity(self) -> float:
        return self.p_dd + self.p_uu - self.p_mixed

    def as_array(self) -> np.ndarray:
        """Ordered (dark-dark, mixed, bright-bright) = (p_dd, p_mixed, p_uu)."""
        return np.array([self.p_dd, self.p_mixed, self.p_uu])


def populations(spin_state) -> SpinPopulations:
    d = np.real(np.diag(_spin_matrix(spin_state)))
    d = np.clip(d, 0.0, None)
    d = d / d.sum()
    return SpinPopulations(float(d[UU]), float(d[UD] + d[DU]), float(d[DD]))


@dataclass
class ParityScan:
    phases: np.ndarray
    populations: list[SpinPopulations]
    parity: np.ndarray
    # populations without analysis pulse, when measured
    reference: SpinPopulations | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["phi_a", "p_dd", "p_mixed", "p_uu", "parity"])
            for phi, pops, par in zip(self.phases, self.populations, self.parity):
                w.writerow([f"{phi:.17e}", f"{pops.p_dd:.17e}", f"{pops.p_mixed:.17e}",
                            f"{pops.p_uu:.17e}", f"{par:.17e}"])

    @classmethod
    def from_csv(cls, path) -> "ParityScan":
        phases, pops, par = [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                phases.append(float(row["phi_a"]))
                pops.append(SpinPopulations(float(row["p_uu"]), float(row["p_mixed"]), float(row["p_dd"])))
                par.append(float(row["parity"]))
        return cls(np.array(phases), pops, np.array(par))


def default_phase_grid(n: int = 21) -> np.ndarray:
    return np.linspace(0.0, 2 * math.pi, n, endpoint=False)


def parity_scan(spin_state, phase_grid: Sequence[float]) -> ParityScan:
    phases = np.asarray(phase_grid, dtype=float)
    if phases.size == 0:
        raise ValueError("phase grid must be non-empty")
    pops = [populations(analysis_pulse(spin_state, phi)) for phi in phases]
    parity = np.array([p.p_dd + p.p_uu - p.p_mixed for p in pops])
    return ParityScan(phases, pops, parity, populations(spin_state))


@dataclass(frozen=True)
class FringeFit:
    amplitude: float
    phase: float
    offset: float
    amplitude_err: float
    phase_err: float
    offset_err: float
    covariance: np.ndarray  # of the linear (sin, cos, const) coefficients


def fit_fringe(phases, parity, sigma=None) -> FringeFit:
    """Least-squares fit of parity = A sin(2 phi + phi0) + C.

    Solved linearly in the (sin 2phi, cos 2phi, 1) basis.  With ``sigma`` the
    per-point errors are taken as absolute; without it the covariance is
    scaled by the residual variance.
    """
    phi = np.asarray(phases, dtype=float)
    y = np.asarray(parity, dtype=float)
    if phi.size < 5:
        raise FitError("fringe fit needs at least 5 points")
    X = np.column_stack([np.sin(2 * phi), np.cos(2 * phi), np.ones_like(phi)])
    if sigma is not None:
        sig = np.asarray(sigma, dtype=float)
        if np.any(sig <= 0):
            raise FitError("point errors must be positive")
        wts = 1.0 / sig
    else:
        wts = np.ones_like(y)
    Xw = X * wts[:, None]
    yw = y * wts
    if np.linalg.matrix_rank(Xw, tol=1e-10 * max(1.0, np.abs(Xw).max())) < 3:
        raise FitError("phase grid does not determine a 2*phi sinusoid (rank-deficient design)")
    coef, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    cov = np.linalg.inv(Xw.T @ Xw)
    if sigma is None:
        dof = phi.size - 3
        resid = yw - Xw @ coef
        cov = cov * (float(resid @ resid) / dof if dof > 0 else 0.0)
    a, b, c = coef
    amp = math.hypot(a, b)
    phase = math.atan2(b, a)
    if amp > 0:
        g_amp = np.array([a / amp, b / amp, 0.0])
        g_ph = np.array([-b / amp**2, a / amp**2, 0.0])
        amp_err = math.sqrt(max(g_amp @ cov @ g_amp, 0.0))
        ph_err = math.sqrt(max(g_ph @ cov @ g_ph, 0.0))
    else:
        amp_err = math.sqrt(max(0.5 * (cov[0, 0] + cov[1, 1]), 0.0))
        ph_err = math.inf
    return FringeFit(amp, phase, float(c), amp_err, ph_err, math.sqrt(max(cov[2, 2], 0.0)), cov)

