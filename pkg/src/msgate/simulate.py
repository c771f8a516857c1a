"""Assemble gate + noise into master-equation problems and run Monte-Carlo shots."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import Fidelity, fidelity
from .gate import (GateParams, PulseEnvelope, TimeDependentHamiltonian, build_aczs, build_mode_instability,
                   build_ms_extended, build_spectator, mode_operators)
from .lindblad import DEFAULT_ABS_TOL, DEFAULT_REL_TOL, EvolutionProblem, Tolerances, Trajectory, evolve
from .noise import IDEAL, NoiseScenario, ShotSample, delta_eps_profile, sample_shot
from .quantum import DEFAULT_FOCK_CUTOFF, HilbertLayout, basis_ket, embed_sparse, qubit_ops, thermal_ensemble

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class Numerics:
    fock_cutoff: int = DEFAULT_FOCK_CUTOFF
    spectator_fock_cutoff: int | None = None
    rel_tol: float = DEFAULT_REL_TOL
    abs_tol: float = DEFAULT_ABS_TOL
    max_step: float | None = None
    n_shots: int = 1000
    seed: int = 0
    workers: int = 1


def layout_for(scenario: NoiseScenario, numerics: Numerics) -> HilbertLayout:
    if scenario.spectator_enabled:
        return HilbertLayout(2, (numerics.fock_cutoff, numerics.spectator_fock_cutoff or numerics.fock_cutoff))
    return HilbertLayout(2, (numerics.fock_cutoff,))


def default_max_step(params: GateParams, scenario: NoiseScenario) -> float:
    """1/(50 f) with f the fastest rotating-frame frequency in the problem (Hz)."""
    w = params.detuning
    if scenario.spectator_enabled:
        w = max(w, scenario.spectator_spacing + params.detuning)
    return 1.0 / (50.0 * w / TWO_PI)


def build_dissipators(scenario: NoiseScenario, layout: HilbertLayout) -> list:
    """Collapse terms (L, rate): heating on the gate mode, dephasing on each qubit.

    gamma_h (D[a] + D[a^dag]) raises <n> at gamma_h per second; dephasing
    at gamma_d/2 per sigma_z decays the Bell coherence as exp(-2 gamma_d t).
    """
    out = []
    if scenario.heating_rate > 0:
        a, ad = mode_operators(layout, 0)
        out += [(a, scenario.heating_rate), (ad, scenario.heating_rate)]
    if scenario.dephasing_rate > 0:
        sz = qubit_ops()[2]
        out += [(embed_sparse(sz, layout.qubit_factor(j), layout), scenario.dephasing_rate / 2)
                for j in range(layout.qubit_count)]
    return out


def envelope_for(params: GateParams, scenario: NoiseScenario) -> PulseEnvelope:
    return PulseEnvelope(params.gate_time, scenario.ramp_time, scenario.envelope_shape,
                         scenario.transient_amp, scenario.transient_time)


def build_hamiltonian(params: GateParams, scenario: NoiseScenario, sample: ShotSample | None,
                      layout: HilbertLayout) -> TimeDependentHamiltonian:
    if scenario.rabi_imbalance:
        params = params.with_imbalance(scenario.rabi_imbalance)
    H = build_ms_extended(params, envelope_for(params, scenario), layout)
    if scenario.has_chirp or (sample is not None and sample.delta_eps_offset):
        H = H + build_mode_instability(delta_eps_profile(sample, scenario), layout)
    if sample is not None and sample.aczs_offset:
        H = H + TimeDependentHamiltonian(layout, [(1.0, build_aczs(sample.aczs_offset, layout))])
    if scenario.spectator_enabled:
        H = H + build_spectator(params, layout, spacing=scenario.spectator_spacing)
    return H


def initial_state(scenario: NoiseScenario, layout: HilbertLayout):
    """|up,up> with thermal motion, as a ket ensemble."""
    nbars = [scenario.nbar_gate_mode]
    if scenario.spectator_enabled:
        nbars.append(scenario.nbar_spectator)
    return thermal_ensemble(basis_ket((2, 2), (0, 0)), nbars, layout)


def build_problem(params: GateParams, scenario: NoiseScenario, sample: ShotSample | None = None,
                  numerics: Numerics = Numerics(), output_grid=None) -> EvolutionProblem:
    layout = layout_for(scenario, numerics)
    H = build_hamiltonian(params, scenario, sample, layout)
    collapse = build_dissipators(scenario, layout)
    init = initial_state(scenario, layout)
    if collapse:
        init = init.density()
    tol = Tolerances(numerics.rel_tol, numerics.abs_tol,
                     numerics.max_step or default_max_step(params, scenario))
    breaks = []
    if scenario.envelope_shape == "erf_ramp":
        breaks += [scenario.ramp_time, params.gate_time - scenario.ramp_time]
    if scenario.has_chirp:
        breaks += [scenario.chirp_start, scenario.chirp_start + scenario.chirp_duration]
    return EvolutionProblem(H, collapse, init, params.gate_time, output_grid, tol, breakpoints=breaks)


def simulate_shot(params: GateParams, scenario: NoiseScenario, sample: ShotSample | None = None,
                  numerics: Numerics = Numerics(), output_grid=None) -> Trajectory:
    return evolve(build_problem(params, scenario, sample, numerics, output_grid))


def _shot_spin_state(args) -> tuple[np.ndarray, tuple[float, float, float]]:
    params, scenario, numerics, index = args
    sample = sample_shot(scenario, params, numerics.seed, index) if scenario.is_stochastic else None
    tr = simulate_shot(params, scenario, sample, numerics)
    diag = (max(tr.trace_deviation), max(tr.hermiticity_deviation), min(tr.min_eigenvalue))
    return tr.reduced(), diag


def _compensated_mean(states: list[np.ndarray]) -> np.ndarray:
    stack = np.stack(states)
    out = np.empty(stack.shape[1:], dtype=complex)
    for idx in np.ndindex(out.shape):
        col = stack[(slice(None),) + idx]
        out[idx] = complex(math.fsum(col.real), math.fsum(col.imag)) / len(states)
    return out


@dataclass
class ShotResult:
    """Monte-Carlo outcome for one scenario.

    ``fidelity`` is evaluated on the shot-averaged spin state (the ensemble
    the experiment measures); ``stderr`` is its jackknife error.  The mean of
    per-shot fidelities is kept as ``per_shot_fidelity`` for comparison.
    """

    fidelity: float
    stderr: float
    mean_state: np.ndarray
    n_shots: int
    per_shot_fidelity: float
    per_shot_stderr: float
    detail: Fidelity = field(repr=False, default=None)
    wall_time: float = 0.0
    # worst case over shots of the full-state checks
    max_trace_deviation: float = 0.0
    max_hermiticity_deviation: float = 0.0
    min_eigenvalue: float = 0.0

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity


def run_shots(scenario: NoiseScenario, params: GateParams, n_shots: int | None = None, seed: int | None = None,
              numerics: Numerics = Numerics()) -> ShotResult:
    """Average final spin states over sampled shots.

    Deterministic scenarios run exactly one shot.  Shots are keyed by index,
    so worker count and completion order never change the result.
    """
    n_shots = numerics.n_shots if n_shots is None else n_shots
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    numerics = replace(numerics, seed=numerics.seed if seed is None else seed)
    if not scenario.is_stochastic:
        n_shots = 1
    t0 = time.perf_counter()
    tasks = [(params, scenario, numerics, i) for i in range(n_shots)]
    if numerics.workers > 1 and n_shots > 1:
        with ProcessPoolExecutor(numerics.workers) as pool:
            out = list(pool.map(_shot_spin_state, tasks, chunksize=max(1, n_shots // (4 * numerics.workers))))
    else:
        out = [_shot_spin_state(t) for t in tasks]
    states = [o[0] for o in out]
    diags = np.array([o[1] for o in out])
    mean = _compensated_mean(states)
    detail = fidelity(mean, check=False)
    per_shot = np.array([fidelity(s, check=False).value for s in states])
    if n_shots > 1:
        # leave-one-out means of the averaged state
        total = mean * n_shots
        loo = np.array([fidelity((total - s) / (n_shots - 1), check=False).value for s in states])
        se = math.sqrt((n_shots - 1) / n_shots * float(np.sum((loo - loo.mean()) ** 2)))
        ps_se = float(per_shot.std(ddof=1) / math.sqrt(n_shots))
    else:
        se = ps_se = 0.0
    return ShotResult(detail.value, se, mean, n_shots, float(per_shot.mean()), ps_se, detail,
                      time.perf_counter() - t0, float(diags[:, 0].max()), float(diags[:, 1].max()),
                      float(diags[:, 2].min()))


def averaged_series(scenario: NoiseScenario, params: GateParams, grid, n_shots: int | None = None,
                    numerics: Numerics = Numerics()) -> list[np.ndarray]:
    """Shot-averaged spin state at every time in ``grid``."""
    n_shots = numerics.n_shots if n_shots is None else n_shots
    if not scenario.is_stochastic:
        n_shots = 1
    per_time = [[] for _ in grid]
    for i in range(n_shots):
        sample = sample_shot(scenario, params, numerics.seed, i) if scenario.is_stochastic else None
        tr = simulate_shot(params, scenario, sample, numerics, output_grid=grid)
        for j in range(len(grid)):
            per_time[j].append(tr.reduced(j))
    return [_compensated_mean(states) for states in per_time]


def ideal_result(params: GateParams, numerics: Numerics = Numerics()) -> ShotResult:
    return run_shots(IDEAL, params, 1, numerics=numerics)


__all__ = ["Numerics", "ShotResult", "averaged_series", "build_problem", "build_hamiltonian", "run_shots", "simulate_shot",
           "layout_for", "default_max_step", "initial_state", "build_dissipators"]
