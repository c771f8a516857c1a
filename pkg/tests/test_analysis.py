import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msgate.analysis import (FitError, ParityScan, SpinPopulations, analysis_pulse, analysis_unitary, bell_target,
                             default_phase_grid, fidelity, fidelity_error, fidelity_from_fits, fit_fringe,
                             parity_scan, populations)
from msgate.gate import GateParams, build_ms_ideal
from msgate.lindblad import EvolutionProblem, Tolerances, evolve
from msgate.quantum import HilbertLayout, basis_ket, thermal_ensemble

PSI = bell_target()
RHO_BELL = np.outer(PSI, PSI.conj())


def random_pure(rng):
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    return v / np.linalg.norm(v)


def random_rho(rng):
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    m = g @ g.conj().T
    return m / np.trace(m)


def test_bell_target_properties():
    assert np.linalg.norm(PSI) == pytest.approx(1.0, abs=1e-15)
    assert PSI[1] == 0 and PSI[2] == 0
    q1 = RHO_BELL.reshape(2, 2, 2, 2).trace(axis1=1, axis2=3)
    assert np.allclose(q1, np.eye(2) / 2, atol=1e-15)


def test_fidelity_examples():
    f = fidelity(RHO_BELL)
    assert f.value == pytest.approx(1.0, abs=1e-15)
    assert f.overlap == pytest.approx(1.0, abs=1e-15)
    mixed = fidelity(np.eye(4) / 4)
    assert mixed.value == pytest.approx(0.25) and mixed.overlap == pytest.approx(0.25)


def test_fidelity_assembly_from_fits():
    # the binary doubles nearest 0.990 and 0.975 sum to just below the double nearest 0.9825
    assert abs(fidelity_from_fits(0.990, 0.975) - 0.9825) <= math.ulp(0.9825)
    assert fidelity_from_fits(0.990, -0.975) == pytest.approx(0.9825, abs=1e-15)
    assert fidelity_error(0.03, 0.04) == pytest.approx(0.025)


def test_fidelity_decomposition_matches_state():
    # population half-sum 0.990/2 and coherence 0.975/2
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[3, 3] = 0.495
    rho[1, 1] = rho[2, 2] = 0.005
    rho[0, 3] = -0.4875j
    rho[3, 0] = 0.4875j
    f = fidelity(rho)
    assert f.value == pytest.approx(0.9825, abs=1e-12)
    assert f.population_half_sum == pytest.approx(0.495)
    # target phase: both forms agree
    assert f.overlap == pytest.approx(0.9825, abs=1e-12)
    # conjugate phase: the overlap with the fixed target loses the coherence, the |.| form does not
    g = fidelity(rho.conj())
    assert g.value == pytest.approx(0.9825, abs=1e-12)
    assert g.overlap == pytest.approx(0.495 - 0.4875, abs=1e-12)


def test_fidelity_rejects_invalid():
    with pytest.raises(ValueError):
        fidelity(np.diag([0.5, 0.6, 0.0, 0.0]))
    with pytest.raises(ValueError):
        fidelity(np.eye(3) / 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fidelity_ranges(seed):
    rng = np.random.default_rng(seed)
    rho = random_rho(rng)
    f = fidelity(rho)
    assert -1e-12 <= f.overlap <= 1 + 1e-12
    assert -1e-12 <= f.value <= 1 + 1e-12
    assert f.value >= f.overlap - 1e-12
    v = random_pure(rng)
    g = fidelity(np.outer(v, v.conj()))
    assert g.overlap < 1 - 1e-9 or np.isclose(abs(np.vdot(PSI, v)), 1)


def test_pure_state_overlap_one_only_at_target():
    rng = np.random.default_rng(5)
    for _ in range(20):
        v = random_pure(rng)
        ov = fidelity(np.outer(v, v.conj())).overlap
        assert ov == pytest.approx(abs(np.vdot(PSI, v)) ** 2, abs=1e-12)
        assert ov < 1 - 1e-6
    phased = PSI * np.exp(0.7j)
    assert fidelity(np.outer(phased, phased.conj())).overlap == pytest.approx(1.0, abs=1e-14)


@given(st.floats(0, 2 * math.pi))
def test_analysis_unitary(phi):
    u = analysis_unitary(phi)
    assert np.abs(u @ u.conj().T - np.eye(4)).max() <= 1e-12


def test_double_pulse_swaps_populations():
    uu = np.zeros((4, 4))
    uu[0, 0] = 1
    twice = analysis_pulse(analysis_pulse(uu, 0.0), 0.0)
    p = populations(twice)
    assert p.p_dd == pytest.approx(1.0, abs=1e-12) and p.p_uu == pytest.approx(0.0, abs=1e-12)


def test_populations_examples():
    assert populations(RHO_BELL) == pytest.approx(SpinPopulations(0.5, 0.0, 0.5))
    ud = np.zeros((4, 4))
    ud[1, 1] = 1
    p = populations(ud)
    assert (p.p_uu, p.p_mixed, p.p_dd) == pytest.approx((0, 1, 0))
    p = populations(np.eye(4) / 4)
    assert (p.p_uu, p.p_mixed, p.p_dd) == pytest.approx((0.25, 0.5, 0.25))
    with pytest.raises(ValueError):
        SpinPopulations(0.5, 0.6, 0.0)


def direct_parity(rho, phi):
    """Independent route: parity operator sz x sz measured after the rotation."""
    sz = np.diag([1.0, -1.0])
    u = analysis_unitary(phi)
    return float(np.real(np.trace(np.kron(sz, sz) @ u @ rho @ u.conj().T)))


def test_bell_parity_is_pure_two_phi_sinusoid():
    grid = np.linspace(0, 2 * math.pi, 40, endpoint=False)
    scan = parity_scan(RHO_BELL, grid)
    ref = np.array([direct_parity(RHO_BELL, phi) for phi in grid])
    assert np.allclose(scan.parity, ref, atol=1e-12)
    spec = np.fft.rfft(scan.parity) / len(grid)
    # only the second harmonic (two periods over [0, 2pi)) is present, amplitude 1
    assert 2 * abs(spec[2]) == pytest.approx(1.0, abs=1e-12)
    others = np.delete(np.abs(spec), 2)
    assert others.max() < 1e-12
    fit = fit_fringe(grid, scan.parity)
    assert fit.amplitude == pytest.approx(1.0, abs=1e-12)
    assert fit.offset == pytest.approx(0.0, abs=1e-12)
    assert fit.amplitude_err <= 1e-10


def test_bright_state_parity_vanishes():
    # a pi/2 pulse on |up,up> leaves a product of equal superpositions: parity 0 at every phase
    uu = np.zeros((4, 4))
    uu[0, 0] = 1
    grid = default_phase_grid(40)
    scan = parity_scan(uu, grid)
    assert np.abs(scan.parity).max() < 1e-12
    assert np.abs([direct_parity(uu, phi) for phi in grid]).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_parity_identity_and_range(seed):
    rho = random_rho(np.random.default_rng(seed))
    scan = parity_scan(rho, default_phase_grid(11))
    for p, par in zip(scan.populations, scan.parity):
        assert par == p.p_dd + p.p_uu - p.p_mixed
        assert -1 - 1e-12 <= par <= 1 + 1e-12
    fit = fit_fringe(scan.phases, scan.parity)
    # the fringe amplitude is twice the Bell coherence
    assert fit.amplitude == pytest.approx(2 * abs(rho[0, 3]), abs=1e-10)
    assert fit.amplitude <= 1 + 3 * fit.amplitude_err + 1e-12


def test_parity_scan_empty_grid():
    with pytest.raises(ValueError):
        parity_scan(RHO_BELL, [])


def test_fringe_fit_synthetic_noise():
    rng = np.random.default_rng(11)
    grid = default_phase_grid(21)
    hits = 0
    for _ in range(50):
        y = 0.975 * np.sin(2 * grid + 0.4) + 0.01 + rng.normal(0, 0.02, grid.size)
        fit = fit_fringe(grid, y, sigma=np.full(grid.size, 0.02))
        hits += abs(fit.amplitude - 0.975) <= 3 * fit.amplitude_err
    assert hits >= 48
    y = 0.975 * np.sin(2 * grid + 0.4) + rng.normal(0, 0.02, grid.size)
    fit = fit_fringe(grid, y)
    assert abs(fit.amplitude - 0.975) <= 3 * fit.amplitude_err
    assert fit.phase == pytest.approx(0.4, abs=0.1)


def test_fringe_fit_constant_parity():
    grid = default_phase_grid(21)
    rng = np.random.default_rng(2)
    fit = fit_fringe(grid, 0.3 + rng.normal(0, 0.02, grid.size))
    assert fit.amplitude <= 3 * fit.amplitude_err
    assert fit.offset == pytest.approx(0.3, abs=0.03)


def test_fringe_fit_degenerate_grids():
    with pytest.raises(FitError):
        fit_fringe([0.0, math.pi, 2 * math.pi, 3 * math.pi, 4 * math.pi], np.zeros(5))
    with pytest.raises(FitError):
        fit_fringe([0.0, 1.0, 2.0], np.zeros(3))
    with pytest.raises(FitError):
        fit_fringe(default_phase_grid(8), np.zeros(8), sigma=np.zeros(8))


def test_ideal_gate_end_to_end():
    p = GateParams.paper()
    lay = HilbertLayout(2, (25,))
    ens = thermal_ensemble(basis_ket((2, 2), (0, 0)), [0.0], lay)
    tol = Tolerances(1e-10, 1e-12)
    rho = evolve(EvolutionProblem(build_ms_ideal(p, lay), [], ens, p.gate_time, tolerances=tol)).reduced()
    scan = parity_scan(rho, default_phase_grid(21))
    fit = fit_fringe(scan.phases, scan.parity)
    psum = scan.reference.p_uu + scan.reference.p_dd
    f = fidelity(rho)
    assert fidelity_from_fits(psum, fit.amplitude) == pytest.approx(f.value, abs=1e-6)
    assert fit.amplitude == pytest.approx(1.0, abs=1e-6)
    assert psum == pytest.approx(1.0, abs=1e-6)


def test_parity_csv_round_trip(tmp_path):
    rho = random_rho(np.random.default_rng(9))
    scan = parity_scan(rho, default_phase_grid(7))
    scan.to_csv(tmp_path / "p.csv")
    back = ParityScan.from_csv(tmp_path / "p.csv")
    assert np.array_equal(back.phases, scan.phases)
    assert np.array_equal(back.parity, scan.parity)
    assert back.populations == scan.populations
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "phi_a,p_dd,p_mixed,p_uu,parity"
