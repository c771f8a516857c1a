import math

import numpy as np
import pytest

from msgate.analysis import fidelity
from msgate.gate import TWO_PI, GateParams, build_ms_ideal
from msgate.lindblad import EvolutionProblem, Tolerances, evolve
from msgate.noise import IDEAL, NoiseScenario, sample_shot
from msgate.quantum import HilbertLayout, basis_ket, thermal_ensemble
from msgate.simulate import (Numerics, averaged_series, build_problem, default_max_step, layout_for, run_shots,
                             simulate_shot)

PAPER = GateParams.paper()
SMALL = Numerics(fock_cutoff=10)


def test_zero_noise_matches_ideal_evolution():
    res = run_shots(IDEAL, PAPER, n_shots=50, numerics=Numerics(fock_cutoff=25))
    assert res.n_shots == 1 and res.stderr == 0.0
    lay = HilbertLayout(2, (25,))
    ens = thermal_ensemble(basis_ket((2, 2), (0, 0)), [0.0], lay)
    tol = Tolerances(max_step=default_max_step(PAPER, IDEAL))
    ref = evolve(EvolutionProblem(build_ms_ideal(PAPER, lay), [], ens, PAPER.gate_time, tolerances=tol)).reduced()
    assert np.abs(res.mean_state - ref).max() <= 1e-12
    assert res.fidelity >= 0.9999


def test_layout_and_step():
    assert layout_for(IDEAL, SMALL).fock_dims == (10,)
    spec = NoiseScenario(spectator_enabled=True)
    assert layout_for(spec, Numerics(fock_cutoff=10, spectator_fock_cutoff=6)).fock_dims == (10, 6)
    assert default_max_step(PAPER, IDEAL) == pytest.approx(1 / (50 * PAPER.detuning / TWO_PI))
    assert default_max_step(PAPER, spec) < default_max_step(PAPER, IDEAL) / 10


def test_dissipative_problem_uses_density_path():
    prob = build_problem(PAPER, NoiseScenario(heating_rate=28.0), numerics=SMALL)
    assert prob.collapse_terms and prob.initial_state.matrix.shape == (40, 40)


def test_deterministic_rows_have_zero_error():
    for sc in (NoiseScenario(rabi_imbalance=2.33e-2), NoiseScenario(dephasing_time=0.5)):
        res = run_shots(sc, PAPER, n_shots=20, numerics=SMALL)
        assert res.n_shots == 1 and res.stderr == 0.0
        assert res.per_shot_fidelity == res.fidelity


def test_stochastic_rows_have_error():
    res = run_shots(NoiseScenario(aczs_rel_std=8e-4), PAPER, n_shots=8, numerics=SMALL)
    assert res.n_shots == 8 and res.stderr > 0
    assert 0 <= res.infidelity <= 1


def test_shot_keying_is_prefix_stable():
    sc = NoiseScenario(mode_jitter_rel_std=1.1e-2)
    a = run_shots(sc, PAPER, n_shots=3, numerics=SMALL)
    b = run_shots(sc, PAPER, n_shots=6, numerics=SMALL)
    # the averaged state over 6 shots contains the first 3 exactly
    s3 = simulate_shot(PAPER, sc, sample_shot(sc, PAPER, 0, 2), SMALL).reduced()
    assert not np.allclose(a.mean_state, b.mean_state)
    assert np.allclose(3 * a.mean_state - s3,
                       sum(simulate_shot(PAPER, sc, sample_shot(sc, PAPER, 0, i), SMALL).reduced() for i in range(2)),
                       atol=1e-14)


def test_worker_count_does_not_change_result():
    sc = NoiseScenario(mode_jitter_rel_std=1.1e-2, aczs_rel_std=8e-4)
    one = run_shots(sc, PAPER, n_shots=6, numerics=Numerics(fock_cutoff=8, workers=1))
    two = run_shots(sc, PAPER, n_shots=6, numerics=Numerics(fock_cutoff=8, workers=2))
    assert np.array_equal(one.mean_state, two.mean_state)
    assert one.fidelity == two.fidelity and one.stderr == two.stderr


def test_monte_carlo_error_scales_as_inverse_sqrt():
    sc = NoiseScenario(mode_jitter_rel_std=1.1e-2)
    small = run_shots(sc, PAPER, n_shots=100, numerics=SMALL)
    large = run_shots(sc, PAPER, n_shots=400, numerics=SMALL)
    ratio = small.stderr / large.stderr
    # sqrt(400/100) = 2, allowing for the sampling error of the error estimates themselves
    assert 1.4 < ratio < 2.8
    assert abs(small.infidelity - large.infidelity) < 3 * math.hypot(small.stderr, large.stderr)
    # averaging states can only raise the coherence loss seen per shot
    assert large.fidelity <= large.per_shot_fidelity + 1e-12


def test_jackknife_matches_delta_method():
    # fidelity of the averaged state is linear in the populations and in |rho_uu,dd|;
    # with coherence of nearly fixed phase the jackknife reduces to the per-shot spread of the projection
    sc = NoiseScenario(aczs_rel_std=8e-4 * 20)
    res = run_shots(sc, PAPER, n_shots=40, numerics=SMALL)
    states = [simulate_shot(PAPER, sc, sample_shot(sc, PAPER, 0, i), SMALL).reduced() for i in range(40)]
    c = res.mean_state[0, 3]
    u = c / abs(c)
    proj = np.array([0.5 * (s[0, 0] + s[3, 3]).real + (s[0, 3] * np.conj(u)).real for s in states])
    delta = proj.std(ddof=1) / math.sqrt(40)
    assert res.stderr == pytest.approx(delta, rel=0.05)
    assert res.fidelity == pytest.approx(proj.mean(), abs=1e-12)


def test_averaged_series_endpoints():
    grid = [0.0, PAPER.gate_time / 2, PAPER.gate_time]
    series = averaged_series(IDEAL, PAPER, grid, numerics=SMALL)
    uu = np.zeros((4, 4))
    uu[0, 0] = 1
    assert np.allclose(series[0], uu, atol=1e-14)
    assert fidelity(series[-1]).value >= 0.9999


def test_heating_raises_error_monotonically():
    f = [run_shots(NoiseScenario(heating_rate=g), PAPER, numerics=SMALL).infidelity for g in (0.0, 28.0, 56.0)]
    assert f[0] < f[1] < f[2]
    # weak channel: linear in the rate
    assert f[2] - f[0] == pytest.approx(2 * (f[1] - f[0]), rel=0.05)


def test_imbalance_scales_quadratically():
    f = [run_shots(NoiseScenario(rabi_imbalance=x), PAPER, numerics=SMALL).infidelity for x in (1e-2, 2e-2)]
    assert f[1] / f[0] == pytest.approx(4.0, rel=0.05)


def test_spectator_requires_second_mode():
    res = run_shots(NoiseScenario(spectator_enabled=True, nbar_spectator=0.27), PAPER,
                    numerics=Numerics(fock_cutoff=8, spectator_fock_cutoff=5))
    assert res.n_shots == 1 and 0 < res.infidelity < 0.05


def test_bad_shot_count():
    with pytest.raises(ValueError):
        run_shots(IDEAL, PAPER, n_shots=0)
