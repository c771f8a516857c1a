"""Strict JSON scenario configuration.

Frequencies are ordinary frequencies in Hz and converted to angular units
here, at the boundary.  Every key must be present unless the caller asks for
the built-in defaults, which then fill whatever the file leaves out.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

from .gate import (PAPER_ACZS_HZ, PAPER_DETUNING_MEASURED_HZ, PAPER_LOOPS, PAPER_MODE_R1_HZ, PAPER_MODE_R2_HZ,
                   PAPER_OMEGA_HZ, PAPER_QUBIT_HZ, PAPER_SPECTATOR_SPACING_HZ, TWO_PI, GateParams, derive_gate)
from .lindblad import DEFAULT_ABS_TOL, DEFAULT_REL_TOL
from .noise import NoiseScenario, combined_paper_noise
from .readout import (DEFAULT_T_DETECT, PLACEHOLDER_DEPUMP_RT, PLACEHOLDER_LAMBDA_BRIGHT, PLACEHOLDER_LAMBDA_DARK,
                      DetectionModel)
from .simulate import Numerics

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


NUM = (int, float)
# key -> (types, nullable)
GATE_KEYS = {
    "rabi_hz": (NUM, False),
    "loops": ((int,), False),
    "detuning_hz": (NUM, True),  # null: closes the loops exactly
    "gate_time_s": (NUM, True),  # null: derived together with the detuning
    "aczs_hz": (NUM, False),
    "mode_r2_hz": (NUM, False),
    "mode_r1_hz": (NUM, False),
    "qubit_hz": (NUM, False),
    "rabi_red_hz": (NUM, True),
    "rabi_blue_hz": (NUM, True),
    "spectator_rabi_hz": (NUM, True),
}
NOISE_KEYS = {
    "mode_jitter_rel_std": (NUM, False),
    "chirp_rate_hz_per_us": (NUM, False),
    "chirp_duration_s": (NUM, False),
    "chirp_start_s": (NUM, False),
    "spectator_enabled": ((bool,), False),
    "spectator_spacing_hz": (NUM, False),
    "nbar_gate_mode": (NUM, False),
    "nbar_spectator": (NUM, False),
    "heating_rate": (NUM, False),
    "dephasing_time_s": (NUM, False),
    "aczs_rel_std": (NUM, False),
    "rabi_imbalance": (NUM, False),
    "envelope_shape": ((str,), False),
    "ramp_time_s": (NUM, False),
    "transient_amp": (NUM, False),
    "transient_time_s": (NUM, False),
}
NUMERICS_KEYS = {
    "fock_cutoff": ((int,), False),
    "spectator_fock_cutoff": ((int,), True),
    "rel_tol": (NUM, False),
    "abs_tol": (NUM, False),
    "n_shots": ((int,), False),
    "seed": ((int,), False),
    "workers": ((int,), False),
}
READOUT_KEYS = {
    "t_detect_s": (NUM, False),
    "lambda_bright": (NUM, False),
    "lambda_dark": (NUM, False),
    "depump_rt": (NUM, False),
    "shots_per_phase": ((int,), False),
    "calibration_shots": ((int,), False),
    "n_phases": ((int,), False),
}
SWEEP_KEYS = {
    "rel_std": ((list,), False),
    "t_chirp_us": ((list,), False),
    "chirp_rate_hz_per_us": (NUM, False),
    "n_shots": ((int,), False),
}
OUTPUTS_KEYS = {
    "dir": ((str,), False),
    "time_series_points": ((int,), False),
}
SECTIONS = {"gate": GATE_KEYS, "noise": NOISE_KEYS, "numerics": NUMERICS_KEYS, "readout": READOUT_KEYS,
            "sweep": SWEEP_KEYS, "outputs": OUTPUTS_KEYS}

# noise config key -> NoiseScenario field, with a scale factor
_NOISE_MAP = {
    "mode_jitter_rel_std": ("mode_jitter_rel_std", 1.0),
    "chirp_rate_hz_per_us": ("chirp_rate", 1.0),
    "chirp_duration_s": ("chirp_duration", 1.0),
    "chirp_start_s": ("chirp_start", 1.0),
    "spectator_enabled": ("spectator_enabled", None),
    "spectator_spacing_hz": ("spectator_spacing", TWO_PI),
    "nbar_gate_mode": ("nbar_gate_mode", 1.0),
    "nbar_spectator": ("nbar_spectator", 1.0),
    "heating_rate": ("heating_rate", 1.0),
    "dephasing_time_s": ("dephasing_time", 1.0),
    "aczs_rel_std": ("aczs_rel_std", 1.0),
    "rabi_imbalance": ("rabi_imbalance", 1.0),
    "envelope_shape": ("envelope_shape", None),
    "ramp_time_s": ("ramp_time", 1.0),
    "transient_amp": ("transient_amp", 1.0),
    "transient_time_s": ("transient_time", 1.0),
}


def noise_to_config(sc: NoiseScenario) -> dict:
    out = {}
    for key, (name, scale) in _NOISE_MAP.items():
        v = getattr(sc, name)
        out[key] = v / scale if scale else v
    return out


def noise_from_config(d: dict) -> NoiseScenario:
    kw = {}
    for key, (name, scale) in _NOISE_MAP.items():
        kw[name] = d[key] * scale if scale else d[key]
    return NoiseScenario(**kw)


def paper_defaults() -> dict:
    """Gate parameters as quoted, all simulated noise channels on, placeholder readout levels."""
    return {
        "schema_version": SCHEMA_VERSION,
        "gate": {
            "rabi_hz": PAPER_OMEGA_HZ,
            "loops": PAPER_LOOPS,
            "detuning_hz": None,
            "gate_time_s": None,
            "aczs_hz": PAPER_ACZS_HZ,
            "mode_r2_hz": PAPER_MODE_R2_HZ,
            "mode_r1_hz": PAPER_MODE_R1_HZ,
            "qubit_hz": PAPER_QUBIT_HZ,
            "rabi_red_hz": None,
            "rabi_blue_hz": None,
            "spectator_rabi_hz": None,
        },
        "noise": noise_to_config(combined_paper_noise()),
        "numerics": {"fock_cutoff": 25, "spectator_fock_cutoff": None, "rel_tol": DEFAULT_REL_TOL, "abs_tol": DEFAULT_ABS_TOL,
                     "n_shots": 1000, "seed": 0, "workers": 1},
        "readout": {"t_detect_s": DEFAULT_T_DETECT, "lambda_bright": PLACEHOLDER_LAMBDA_BRIGHT,
                    "lambda_dark": PLACEHOLDER_LAMBDA_DARK, "depump_rt": PLACEHOLDER_DEPUMP_RT,
                    "shots_per_phase": 200, "calibration_shots": 5000, "n_phases": 21},
        "sweep": {"rel_std": [0.0, 5e-3, 1.1e-2, 2e-2], "t_chirp_us": [0.0, 300.0, 600.0],
                  "chirp_rate_hz_per_us": 0.3, "n_shots": 200},
        "outputs": {"dir": ".", "time_series_points": 0},
    }


def default_provenance() -> list[tuple[str, object, str]]:
    """(key, value, source) for every default, for display."""
    measured = "measured value"
    rows = [
        ("gate.rabi_hz", PAPER_OMEGA_HZ, measured),
        ("gate.loops", PAPER_LOOPS, measured),
        ("gate.detuning_hz", round(derive_gate(TWO_PI * PAPER_OMEGA_HZ, PAPER_LOOPS)[1] / TWO_PI, 3),
         f"derived 2*Omega*sqrt(K); the experimentally set value was {PAPER_DETUNING_MEASURED_HZ:g} Hz"),
        ("gate.gate_time_s", derive_gate(TWO_PI * PAPER_OMEGA_HZ, PAPER_LOOPS)[0], "derived pi*sqrt(K)/Omega"),
        ("gate.aczs_hz", PAPER_ACZS_HZ, measured),
        ("gate.mode_r2_hz", PAPER_MODE_R2_HZ, measured),
        ("gate.mode_r1_hz", PAPER_MODE_R1_HZ, measured),
        ("gate.qubit_hz", PAPER_QUBIT_HZ, measured),
        ("noise.spectator_spacing_hz", PAPER_SPECTATOR_SPACING_HZ, "error-budget parameter"),
    ]
    for key, v in noise_to_config(combined_paper_noise()).items():
        if key != "spectator_spacing_hz":
            rows.append((f"noise.{key}", v, "error-budget parameter"))
    rows.append(("numerics.fock_cutoff", 25, "quoted convergence cutoff"))
    for key in ("lambda_bright", "lambda_dark", "depump_rt"):
        rows.append((f"readout.{key}", paper_defaults()["readout"][key], "placeholder, not a measured value"))
    rows.append(("readout.t_detect_s", DEFAULT_T_DETECT, measured))
    rows.append(("readout.shots_per_phase", 200, "quoted repetitions per phase"))
    return rows


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate_raw(d: dict) -> None:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - set(SECTIONS) - {"schema_version"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {d.get('schema_version')!r}")
    for sec, keys in SECTIONS.items():
        if sec not in d:
            raise ConfigError(f"missing section '{sec}' (use --paper-defaults to fill defaults)")
        body = d[sec]
        if not isinstance(body, dict):
            raise ConfigError(f"section '{sec}' must be an object")
        extra = set(body) - set(keys)
        if extra:
            raise ConfigError(f"unknown key(s) in '{sec}': {', '.join(sorted(extra))}")
        for key, (types, nullable) in keys.items():
            if key not in body:
                raise ConfigError(f"missing key '{sec}.{key}' (use --paper-defaults to fill defaults)")
            v = body[key]
            if v is None:
                if not nullable:
                    raise ConfigError(f"'{sec}.{key}' must not be null")
                continue
            if isinstance(v, bool) and bool not in types:
                raise ConfigError(f"'{sec}.{key}' has wrong type bool")
            if not isinstance(v, types):
                raise ConfigError(f"'{sec}.{key}' has wrong type {type(v).__name__}")
            if isinstance(v, float) and not math.isfinite(v):
                raise ConfigError(f"'{sec}.{key}' must be finite")
    for axis in ("rel_std", "t_chirp_us"):
        vals = d["sweep"][axis]
        if not vals or not all(isinstance(x, NUM) and not isinstance(x, bool) for x in vals):
            raise ConfigError(f"'sweep.{axis}' must be a non-empty list of numbers")


@dataclass
class ScenarioConfig:
    raw: dict = field(default_factory=paper_defaults)

    def __post_init__(self):
        validate_raw(self.raw)
        try:
            self.gate_params()
            self.noise()
            self.detection_model()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        n = self.raw["numerics"]
        if n["fock_cutoff"] < 2 or n["n_shots"] < 1 or n["workers"] < 1 or n["seed"] < 0:
            raise ConfigError("numerics: fock_cutoff >= 2, n_shots >= 1, workers >= 1 and seed >= 0 required")
        if n["rel_tol"] <= 0 or n["abs_tol"] <= 0:
            raise ConfigError("numerics: tolerances must be positive")
        r = self.raw["readout"]
        if r["shots_per_phase"] < 1 or r["calibration_shots"] < 1 or r["n_phases"] < 5:
            raise ConfigError("readout: shots must be >= 1 and n_phases >= 5")

    @classmethod
    def from_dict(cls, d: dict, paper_defaults_fill: bool = False) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls(_merge(paper_defaults(), d) if paper_defaults_fill else copy.deepcopy(d))

    @classmethod
    def load(cls, path, paper_defaults_fill: bool = False) -> "ScenarioConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        return cls.from_dict(d, paper_defaults_fill)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    def gate_params(self) -> GateParams:
        g = self.raw["gate"]
        omega = TWO_PI * g["rabi_hz"]
        tau, delta = derive_gate(omega, g["loops"])
        opt = lambda k: None if g[k] is None else TWO_PI * g[k]
        return GateParams(
            omega_gate=omega, loops=g["loops"],
            detuning=delta if g["detuning_hz"] is None else TWO_PI * g["detuning_hz"],
            gate_time=tau if g["gate_time_s"] is None else g["gate_time_s"],
            aczs=TWO_PI * g["aczs_hz"], mode_freq_r2=TWO_PI * g["mode_r2_hz"], mode_freq_r1=TWO_PI * g["mode_r1_hz"],
            qubit_freq=TWO_PI * g["qubit_hz"], ramp_time=self.raw["noise"]["ramp_time_s"],
            rabi_red=opt("rabi_red_hz"), rabi_blue=opt("rabi_blue_hz"), spectator_rabi=opt("spectator_rabi_hz"))

    def noise(self) -> NoiseScenario:
        return noise_from_config(self.raw["noise"])

    def numerics(self) -> Numerics:
        n = self.raw["numerics"]
        return Numerics(fock_cutoff=n["fock_cutoff"], spectator_fock_cutoff=n["spectator_fock_cutoff"],
                        rel_tol=n["rel_tol"], abs_tol=n["abs_tol"], n_shots=n["n_shots"], seed=n["seed"],
                        workers=n["workers"])

    def detection_model(self) -> DetectionModel:
        r = self.raw["readout"]
        return DetectionModel.from_counts(r["lambda_bright"], r["lambda_dark"], r["depump_rt"], r["t_detect_s"])

    def override(self, section: str, key: str, value) -> "ScenarioConfig":
        d = self.to_dict()
        d[section][key] = value
        return ScenarioConfig(d)
