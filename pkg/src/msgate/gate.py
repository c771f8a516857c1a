"""Mølmer-Sørensen gate Hamiltonians in the sideband interaction frame.

All frequencies are angular (rad/s) and times are in seconds.  Hamiltonians
are returned as :class:`TimeDependentHamiltonian` objects, i.e. a sum of
static matrices with scalar time-dependent coefficients, which lets the
propagator assemble ``H(t)`` with a handful of axpy operations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import ndtr

from .quantum import HilbertLayout, Operator, embed_sparse, fock_ladder, number_op, qubit_ops

TWO_PI = 2.0 * math.pi

# Gate parameters as quoted for the experiment (ordinary frequencies in Hz).
PAPER_OMEGA_HZ = 1.071e3
PAPER_LOOPS = 3
PAPER_DETUNING_MEASURED_HZ = 3.4e3
PAPER_ACZS_HZ = 4.37e3
PAPER_MODE_R1_HZ = 6.275e6
PAPER_MODE_R2_HZ = 6.318e6
PAPER_QUBIT_HZ = 1082.55e6
PAPER_RAMP_TIME = 2e-6
PAPER_SPECTATOR_SPACING_HZ = 42.5e3


def derive_gate(omega_gate: float, loops: int) -> tuple[float, float]:
    """Return ``(gate_time, detuning)`` closing ``loops`` phase-space loops.

    The detuning 2*Omega*sqrt(K) makes the accumulated two-qubit phase
    exactly pi/2 when the motion closes its K-th loop at pi*sqrt(K)/Omega.
    """
    if omega_gate <= 0:
        raise ValueError(f"gate Rabi frequency must be positive, got {omega_gate}")
    if loops < 1 or int(loops) != loops:
        raise ValueError(f"loops must be a positive integer, got {loops}")
    root_k = math.sqrt(loops)
    return math.pi * root_k / omega_gate, 2.0 * omega_gate * root_k


@dataclass(frozen=True)
class GateParams:
    omega_gate: float
    loops: int
    detuning: float
    gate_time: float
    aczs: float = TWO_PI * PAPER_ACZS_HZ
    mode_freq_r2: float = TWO_PI * PAPER_MODE_R2_HZ
    mode_freq_r1: float = TWO_PI * PAPER_MODE_R1_HZ
    qubit_freq: float = TWO_PI * PAPER_QUBIT_HZ
    ramp_time: float = 0.0
    rabi_red: float | None = None
    rabi_blue: float | None = None
    spectator_rabi: float | None = None

    def __post_init__(self):
        for name in ("omega_gate", "detuning", "aczs", "mode_freq_r2", "mode_freq_r1", "qubit_freq", "ramp_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.loops < 1:
            raise ValueError("loops must be >= 1")
        if self.gate_time <= 2 * self.ramp_time:
            raise ValueError("gate_time must exceed twice the ramp time")
        for name in ("rabi_red", "rabi_blue", "spectator_rabi"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, self.omega_gate)
            elif getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def derive(cls, omega_gate: float, loops: int, **kw) -> "GateParams":
        tau, delta = derive_gate(omega_gate, loops)
        return cls(omega_gate=omega_gate, loops=loops, detuning=delta, gate_time=tau, **kw)

    @classmethod
    def paper(cls, **kw) -> "GateParams":
        return cls.derive(TWO_PI * PAPER_OMEGA_HZ, PAPER_LOOPS, **kw)

    @property
    def spectator_spacing(self) -> float:
        return self.mode_freq_r2 - self.mode_freq_r1

    def with_imbalance(self, rel: float) -> "GateParams":
        """Split the gate Rabi frequency so that (red - blue)/blue == rel.

        The mean of the two sideband Rabi frequencies stays at omega_gate.
        """
        blue = 2.0 * self.omega_gate / (2.0 + rel)
        return replace(self, rabi_blue=blue, rabi_red=blue * (1.0 + rel))


@dataclass(frozen=True)
class PulseEnvelope:
    gate_time: float
    ramp_time: float = 0.0
    shape: str = "rectangular"
    transient_amp: float = 0.0
    transient_time: float = 0.0

    def __post_init__(self):
        if self.shape not in ("rectangular", "erf_ramp"):
            raise ValueError(f"unknown envelope shape {self.shape!r}")
        if self.shape == "erf_ramp" and not 0 < 2 * self.ramp_time < self.gate_time:
            raise ValueError("erf_ramp needs 0 < 2*ramp_time < gate_time")
        if self.transient_amp and self.transient_time <= 0:
            raise ValueError("transient_time must be positive when transient_amp is set")

    def _ramp(self, t):
        r = self.ramp_time
        edge = np.minimum(t, self.gate_time - t)
        return np.where(edge < r, ndtr((edge - r / 2) / (r / 6)), 1.0)

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-15 * self.gate_time) or np.any(t > self.gate_time * (1 + 1e-12)):
            raise ValueError("time outside the pulse")
        v = np.ones_like(t) if self.shape == "rectangular" else self._ramp(t)
        if self.transient_amp:
            v = v * (1.0 + self.transient_amp * np.exp(-t / self.transient_time))
        return float(v) if scalar else v

    @property
    def is_flat(self) -> bool:
        return self.shape == "rectangular" and not self.transient_amp


def envelope_value(env: PulseEnvelope, t: float) -> float:
    return env(t)


Coefficient = Callable[[float], complex] | complex | float


class TimeDependentHamiltonian:
    """H(t) = sum_k c_k(t) M_k with static matrices M_k.

    Coefficients are either numbers or callables of time.  Hermiticity is the
    caller's responsibility: every non-Hermitian term must appear together
    with its adjoint term.
    """

    def __init__(self, layout: HilbertLayout, terms: Sequence[tuple[Coefficient, np.ndarray]] = ()):
        self.layout = layout
        self.terms: list[tuple[Coefficient, np.ndarray]] = []
        for c, m in terms:
            self.add(c, m)

    def add(self, coeff: Coefficient, matrix) -> None:
        if isinstance(matrix, Operator):
            m = matrix.matrix
        elif sparse.issparse(matrix):
            m = sparse.csr_matrix(matrix, dtype=complex)
        else:
            m = np.asarray(matrix, dtype=complex)
        if m.shape != (self.layout.dim, self.layout.dim):
            raise ValueError(f"term shape {m.shape} does not match layout dimension {self.layout.dim}")
        self.terms.append((coeff, m))

    def __add__(self, other: "TimeDependentHamiltonian") -> "TimeDependentHamiltonian":
        if other.layout != self.layout:
            raise ValueError("layout mismatch")
        return TimeDependentHamiltonian(self.layout, self.terms + other.terms)

    def coefficients(self, t: float) -> list[complex]:
        return [c(t) if callable(c) else c for c, _ in self.terms]

    def __call__(self, t: float) -> np.ndarray:
        out = np.zeros((self.layout.dim, self.layout.dim), dtype=complex)
        for c, m in zip(self.coefficients(t), (m for _, m in self.terms)):
            if c != 0:
                out += c * (m.toarray() if sparse.issparse(m) else m)
        return out

    def operator(self, t: float) -> Operator:
        return Operator(self(t), self.layout)

    @property
    def is_static(self) -> bool:
        return not any(callable(c) for c, _ in self.terms)


def _require_mode(layout: HilbertLayout, mode: int, what: str) -> int:
    if len(layout.fock_dims) <= mode:
        raise ValueError(f"layout has no {what} (needs at least {mode + 1} motional modes)")
    return layout.mode_factor(mode)


def collective_spin(layout: HilbertLayout, which: str) -> sparse.csr_matrix:
    """Sum over qubits of one single-qubit operator ('x', 'y', 'z', '+', '-')."""
    sx, sy, sz, sp, sm = qubit_ops()
    op = {"x": sx, "y": sy, "z": sz, "+": sp, "-": sm}[which]
    return sum(embed_sparse(op, layout.qubit_factor(j), layout) for j in range(layout.qubit_count)).tocsr()


def mode_operators(layout: HilbertLayout, mode: int) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Sparse (a, a^dag) of motional mode ``mode`` on the full layout."""
    f = layout.mode_factor(mode)
    a = embed_sparse(fock_ladder(layout.fock_dims[mode]), f, layout)
    return a, a.conj().T.tocsr()


def build_ms_ideal(params: GateParams, layout: HilbertLayout) -> TimeDependentHamiltonian:
    _require_mode(layout, 0, "gate mode")
    a, ad = mode_operators(layout, 0)
    sx = collective_spin(layout, "x")
    half = params.omega_gate / 2
    d = params.detuning
    return TimeDependentHamiltonian(layout, [
        (lambda t: half * np.exp(1j * d * t), sx @ a),
        (lambda t: half * np.exp(-1j * d * t), sx @ ad),
    ])


def build_ms_extended(params: GateParams, env: PulseEnvelope | None, layout: HilbertLayout) -> TimeDependentHamiltonian:
    """Bichromatic Hamiltonian with independent red/blue Rabi frequencies and a pulse envelope."""
    _require_mode(layout, 0, "gate mode")
    a, ad = mode_operators(layout, 0)
    sp = collective_spin(layout, "+")
    sm = collective_spin(layout, "-")
    d = params.detuning
    hb, hr = params.rabi_blue / 2, params.rabi_red / 2
    if env is None or env.is_flat:
        shape = lambda t: 1.0
    else:
        shape = env
    return TimeDependentHamiltonian(layout, [
        (lambda t: hb * shape(t) * np.exp(-1j * d * t), sp @ ad),
        (lambda t: hr * shape(t) * np.exp(1j * d * t), sp @ a),
        (lambda t: hb * shape(t) * np.exp(1j * d * t), sm @ a),
        (lambda t: hr * shape(t) * np.exp(-1j * d * t), sm @ ad),
    ])


def build_mode_instability(delta_eps: Callable[[float], float] | float, layout: HilbertLayout) -> TimeDependentHamiltonian:
    """delta_eps(t) * a^dag a on the gate mode."""
    _require_mode(layout, 0, "gate mode")
    n = embed_sparse(number_op(layout.fock_dims[0]), layout.mode_factor(0), layout)
    return TimeDependentHamiltonian(layout, [(delta_eps, n)])


def build_aczs(delta_zeeman_eps: float, layout: HilbertLayout) -> Operator:
    """(Delta_eps / 2) * sum_j sigma^z_j."""
    return Operator(0.5 * delta_zeeman_eps * collective_spin(layout, "z").toarray(), layout, hermitian=True)


def build_spectator(params: GateParams, layout: HilbertLayout, spacing: float | None = None) -> TimeDependentHamiltonian:
    """Off-resonant coupling to the spectator mode r1 detuned by spacing + delta."""
    _require_mode(layout, 1, "spectator mode")
    a, ad = mode_operators(layout, 1)
    sx = collective_spin(layout, "x")
    half = params.spectator_rabi / 2
    w = (params.spectator_spacing if spacing is None else spacing) + params.detuning
    return TimeDependentHamiltonian(layout, [
        (lambda t: half * np.exp(1j * w * t), sx @ a),
        (lambda t: half * np.exp(-1j * w * t), sx @ ad),
    ])
