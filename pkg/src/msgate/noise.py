"""Noise scenarios and reproducible shot-to-shot sampling."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Callable

import numpy as np

from .gate import PAPER_RAMP_TIME, PAPER_SPECTATOR_SPACING_HZ, TWO_PI, GateParams

# channel tags keep the per-shot random streams independent
CHANNEL_MODE = 1
CHANNEL_ACZS = 2


@dataclass(frozen=True)
class NoiseScenario:
    """Switchable noise channels.  Every field at zero/off is the ideal gate.

    ``dephasing_time`` of 0 means no dephasing (an infinite coherence time).
    ``chirp_rate`` is in Hz per microsecond; ``spectator_spacing`` is angular.
    """

    mode_jitter_rel_std: float = 0.0
    chirp_rate: float = 0.0
    chirp_duration: float = 0.0
    chirp_start: float = 0.0
    spectator_enabled: bool = False
    spectator_spacing: float = TWO_PI * PAPER_SPECTATOR_SPACING_HZ
    nbar_gate_mode: float = 0.0
    nbar_spectator: float = 0.0
    heating_rate: float = 0.0
    dephasing_time: float = 0.0
    aczs_rel_std: float = 0.0
    rabi_imbalance: float = 0.0
    envelope_shape: str = "rectangular"
    ramp_time: float = 0.0
    transient_amp: float = 0.0
    transient_time: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("chirp_rate", "chirp_start", "rabi_imbalance", "transient_amp"):
                continue  # signed: sensitivity sweeps use negative values
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be >= 0, got {v}")
        if self.envelope_shape not in ("rectangular", "erf_ramp"):
            raise ValueError(f"unknown envelope shape {self.envelope_shape!r}")
        if self.rabi_imbalance <= -2:
            raise ValueError("rabi_imbalance must exceed -2")

    @property
    def is_stochastic(self) -> bool:
        return self.mode_jitter_rel_std > 0 or self.aczs_rel_std > 0

    @property
    def dephasing_rate(self) -> float:
        return 1.0 / self.dephasing_time if self.dephasing_time > 0 else 0.0

    @property
    def has_chirp(self) -> bool:
        return self.chirp_rate != 0 and self.chirp_duration > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseScenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown noise field(s): {sorted(unknown)}")
        return cls(**d)


IDEAL = NoiseScenario()


@dataclass(frozen=True)
class ShotSample:
    delta_eps_offset: float
    aczs_offset: float
    seed_path: tuple[int, int]


def _stream(seed: int, shot_index: int, channel: int) -> np.random.Generator:
    # Philox is counter-based; the key is derived from the (seed, shot, channel) triple
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, shot_index, channel])))


def sample_shot(scenario: NoiseScenario, params: GateParams, seed: int, shot_index: int) -> ShotSample:
    """Draw the quasi-static offsets for one shot.

    The mode offset is referenced to the gate detuning, the Zeeman offset to
    the differential AC Zeeman shift.
    """
    mode = aczs = 0.0
    if scenario.mode_jitter_rel_std > 0:
        mode = scenario.mode_jitter_rel_std * params.detuning * _stream(seed, shot_index, CHANNEL_MODE).standard_normal()
    if scenario.aczs_rel_std > 0:
        aczs = scenario.aczs_rel_std * params.aczs * _stream(seed, shot_index, CHANNEL_ACZS).standard_normal()
    return ShotSample(float(mode), float(aczs), (int(seed), int(shot_index)))


def delta_eps_profile(sample: ShotSample | None, scenario: NoiseScenario) -> Callable[[float], float]:
    """delta_eps(t) = offset + 2*pi*rate*clip(t - start, 0, duration) in rad/s."""
    offset = sample.delta_eps_offset if sample is not None else 0.0
    slope = TWO_PI * scenario.chirp_rate * 1e6  # Hz/us -> rad/s^2
    start, dur = scenario.chirp_start, scenario.chirp_duration

    def profile(t: float) -> float:
        return offset + slope * min(max(t - start, 0.0), dur)

    return profile


@dataclass(frozen=True)
class BudgetRow:
    name: str
    parameter: str
    paper_infidelity: float
    scenario: NoiseScenario | None
    bound: bool = False
    simulate: bool = True


def table1_scenarios() -> list[BudgetRow]:
    """The single-effect error-budget rows with the measured parameters."""
    return [
        BudgetRow("Mode instability", "rel. std 1.1e-2; chirp 0.3 Hz/us for 600 us", 1.3e-2,
                  NoiseScenario(mode_jitter_rel_std=1.1e-2, chirp_rate=0.3, chirp_duration=600e-6)),
        BudgetRow("Spectator mode", "spacing 2pi x 42.5 kHz; nbar_r1 = 0.27", 5.2e-3,
                  NoiseScenario(spectator_enabled=True, nbar_spectator=0.27)),
        BudgetRow("Motional heating", "heating rate 28 quanta/s", 3.8e-3,
                  NoiseScenario(heating_rate=28.0)),
        BudgetRow("Off-resonant scattering loss", "measured, not simulated", 2.3e-3, None,
                  bound=True, simulate=False),
        BudgetRow("Qubit decoherence", "tau_d = 0.5 s", 9.3e-4,
                  NoiseScenario(dephasing_time=0.5), bound=True),
        BudgetRow("Pulse shape", "2 us erf ramps", 6.3e-4,
                  NoiseScenario(envelope_shape="erf_ramp", ramp_time=PAPER_RAMP_TIME), bound=True),
        BudgetRow("ACZS fluctuations", "rel. std 8e-4 of Delta", 1.1e-4,
                  NoiseScenario(aczs_rel_std=8e-4)),
        BudgetRow("Rabi frequency imbalance", "(Omega_R - Omega_B)/Omega_B = 2.33e-2", 4.1e-6,
                  NoiseScenario(rabi_imbalance=2.33e-2)),
    ]


def combined_paper_noise() -> NoiseScenario:
    """All simulated budget effects switched on at once."""
    merged = {}
    for row in table1_scenarios():
        if row.scenario is None:
            continue
        for k, v in row.scenario.to_dict().items():
            if v != getattr(IDEAL, k):
                merged[k] = v
    return replace(IDEAL, **merged)
