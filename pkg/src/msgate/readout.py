"""Fluorescence readout: photon-count models, histogram synthesis and population fits.

A bright ion scatters Poisson(lambda_b) photons during the detection window.
A dark ion gives Poisson(lambda_d) unless it is depumped to the bright state
at a random time t ~ Exp(r), after which it scatters at the bright rate for the
rest of the window.  Background counts are folded into the per-ion dark rate.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .analysis import (FringeFit, SpinPopulations, analysis_pulse, fidelity_error, fidelity_from_fits, fit_fringe,
                       populations)

QUADRATURE_ORDER = 64
DEFAULT_T_DETECT = 400e-6
# representative count levels, not measured values
PLACEHOLDER_LAMBDA_BRIGHT = 30.0
PLACEHOLDER_LAMBDA_DARK = 2.0
PLACEHOLDER_DEPUMP_RT = 0.04
N_STARTS = 5
N_BOOTSTRAP = 200
MAX_OVERLAP = 0.5
EDGE_WEIGHT = 1e-6
SINGULAR_RATIO = 1e-10
_GL_X, _GL_W = np.polynomial.legendre.leggauss(QUADRATURE_ORDER)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionModel:
    t_detect: float = DEFAULT_T_DETECT
    rate_bright: float = PLACEHOLDER_LAMBDA_BRIGHT / DEFAULT_T_DETECT
    rate_dark: float = PLACEHOLDER_LAMBDA_DARK / DEFAULT_T_DETECT
    depump_rate: float = PLACEHOLDER_DEPUMP_RT / DEFAULT_T_DETECT

    def __post_init__(self):
        if self.t_detect <= 0:
            raise ValueError("t_detect must be positive")
        if min(self.rate_bright, self.rate_dark, self.depump_rate) < 0:
            raise ValueError("rates must be >= 0")
        if self.lambda_bright <= self.lambda_dark:
            raise ValueError("bright counts must exceed dark counts")

    @property
    def lambda_bright(self) -> float:
        return self.rate_bright * self.t_detect

    @property
    def lambda_dark(self) -> float:
        return self.rate_dark * self.t_detect

    @classmethod
    def from_counts(cls, lambda_bright: float, lambda_dark: float, depump_rt: float = 0.0,
                    t_detect: float = DEFAULT_T_DETECT) -> "DetectionModel":
        return cls(t_detect, lambda_bright / t_detect, lambda_dark / t_detect, depump_rt / t_detect)

    def count_cutoff(self) -> int:
        """Largest count kept: two bright ions' mean + 10 sqrt(mean)."""
        m = 2 * self.lambda_bright
        return int(math.ceil(m + 10 * math.sqrt(m))) + 1


def _dark_pmf(k: np.ndarray, lam_d: float, lam_b: float, rT: float) -> np.ndarray:
    out = math.exp(-rT) * stats.poisson.pmf(k, lam_d)
    if rT > 0:
        # substitute s = t/T on [0, 1]
        s = 0.5 * (_GL_X + 1)
        w = 0.5 * _GL_W * rT * np.exp(-rT * s)
        mu = lam_d * s + lam_b * (1 - s)
        out = out + stats.poisson.pmf(k[:, None], mu[None, :]) @ w
    return out


def ion_count_pmf(model: DetectionModel, bright: bool, cutoff: int | None = None) -> np.ndarray:
    """Single-ion count distribution on 0..cutoff."""
    k = np.arange((model.count_cutoff() if cutoff is None else cutoff) + 1)
    if bright:
        return stats.poisson.pmf(k, model.lambda_bright)
    return _dark_pmf(k, model.lambda_dark, model.lambda_bright, model.depump_rate * model.t_detect)


def component_pmfs(model: DetectionModel, cutoff: int | None = None) -> np.ndarray:
    """Rows: two dark, one bright + one dark, two bright."""
    n = (model.count_cutoff() if cutoff is None else cutoff) + 1
    b = ion_count_pmf(model, True, n - 1)
    d = ion_count_pmf(model, False, n - 1)
    return np.array([np.convolve(d, d)[:n], np.convolve(b, d)[:n], np.convolve(b, b)[:n]])


def two_ion_mixture_pmf(model: DetectionModel, pops: SpinPopulations, cutoff: int | None = None) -> np.ndarray:
    return pops.as_array() @ component_pmfs(model, cutoff)


@dataclass
class HistogramSet:
    """Count histograms, one per analysis phase; ``hist[i][k]`` = occurrences of count k.

    A phase of NaN marks the reference point taken without analysis pulse.
    """

    phases: np.ndarray
    hist: list[np.ndarray]

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)
        self.hist = [np.asarray(h, dtype=np.int64) for h in self.hist]
        if len(self.hist) != self.phases.size:
            raise ValueError("one histogram per phase required")
        for h in self.hist:
            if h.ndim != 1 or np.any(h < 0) or h.sum() < 1:
                raise ValueError("histograms must be non-empty non-negative count vectors")

    @property
    def shots(self) -> list[int]:
        return [int(h.sum()) for h in self.hist]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["phi_a", "count", "occurrences"])
            for phi, h in zip(self.phases, self.hist):
                for k in np.nonzero(h)[0]:
                    w.writerow([f"{phi:.17e}", int(k), int(h[k])])

    @classmethod
    def from_csv(cls, path) -> "HistogramSet":
        order: list[str] = []
        data: dict[str, dict[int, int]] = {}
        for row in _read_rows(path, ("phi_a", "count", "occurrences")):
            key = row["phi_a"].strip()
            float(key)
            if key not in data:
                order.append(key)
                data[key] = {}
            k, n = _int_field(row, "count"), _int_field(row, "occurrences")
            data[key][k] = data[key].get(k, 0) + n
        if not order:
            raise ValueError(f"{path}: no histogram rows")
        hist = []
        for key in order:
            h = np.zeros(max(data[key]) + 1, dtype=np.int64)
            for k, n in data[key].items():
                h[k] = n
            hist.append(h)
        return cls(np.array([float(k) for k in order]), hist)


def _read_rows(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != list(columns):
            raise ValueError(f"{path}: expected header {','.join(columns)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise ValueError(f"{path}:{lineno}: wrong number of fields")
            row["_line"] = lineno
            yield row


def _int_field(row, name) -> int:
    try:
        v = int(row[name])
    except ValueError:
        raise ValueError(f"line {row['_line']}: {name} must be an integer, got {row[name]!r}") from None
    if v < 0:
        raise ValueError(f"line {row['_line']}: {name} must be >= 0")
    return v


def synthesize_histograms(model: DetectionModel, phases, populations: list[SpinPopulations], shots: int,
                          seed: int) -> HistogramSet:
    """Sample ``shots`` counts per phase from the mixture pmf."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if len(populations) != len(phases):
        raise ValueError("one population triple per phase required")
    rng = np.random.default_rng(seed)
    comps = component_pmfs(model)
    hist = []
    for pops in populations:
        pmf = np.clip(pops.as_array() @ comps, 0, None)
        hist.append(rng.multinomial(shots, pmf / pmf.sum()))
    return HistogramSet(np.asarray(phases, dtype=float), hist)


@dataclass(frozen=True)
class PopulationFit:
    populations: SpinPopulations
    stderr: np.ndarray  # (p_dd, p_mixed, p_uu)
    covariance: np.ndarray  # 3x3 in the same order
    log_likelihood: float
    method: str  # "fisher" or "bootstrap"
    low_confidence: bool = False

    @property
    def half_sum(self) -> float:
        return 0.5 * (self.populations.p_uu + self.populations.p_dd)

    @property
    def half_sum_err(self) -> float:
        g = np.array([0.5, 0.0, 0.5])
        return math.sqrt(max(g @ self.covariance @ g, 0.0))

    @property
    def parity(self) -> float:
        return self.populations.parity

    @property
    def parity_err(self) -> float:
        g = np.array([1.0, -1.0, 1.0])
        return math.sqrt(max(g @ self.covariance @ g, 0.0))


def _softmax(z):
    z = np.concatenate([[0.0], z])
    e = np.exp(z - z.max())
    return e / e.sum()


def _ml_weights(counts, occ, comps, rng, starts=None) -> tuple[np.ndarray, float]:
    f = comps[:, counts]  # (3, n_distinct)

    def nll(z):
        p = _softmax(z)
        m = np.maximum(p @ f, 1e-300)
        g_p = -(f / m) @ occ
        # chain rule through softmax, first logit pinned to zero
        g_z = p * (g_p - p @ g_p)
        return -float(occ @ np.log(m)), g_z[1:]

    if starts is None:
        starts = [np.zeros(2)] + [rng.normal(0, 2, 2) for _ in range(N_STARTS - 1)]
    best = None
    for z0 in starts:
        r = optimize.minimize(nll, z0, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 1000})
        if best is None or r.fun < best.fun:
            best = r
    p = _softmax(best.x)
    return p, -best.fun


def _observed_information(p, counts, occ, comps) -> np.ndarray:
    """Hessian of -log L in the free coordinates (p_dd, p_uu), p_mixed = 1 - p_dd - p_uu."""
    f = comps[:, counts]
    m = p @ f
    g = np.array([f[0] - f[1], f[2] - f[1]])
    return (g * (occ / m**2)) @ g.T


def fit_populations(histogram: np.ndarray, model: DetectionModel, seed: int = 0) -> PopulationFit:
    """Maximum-likelihood weights of the three-component mixture for one histogram."""
    h = np.asarray(histogram, dtype=np.int64)
    if h.sum() < 1:
        raise ValueError("empty histogram")
    cutoff = max(model.count_cutoff(), h.size - 1)
    comps = component_pmfs(model, cutoff)
    counts = np.nonzero(h)[0]
    occ = h[counts].astype(float)
    rng = np.random.default_rng(seed)
    p, ll = _ml_weights(counts, occ, comps, rng)

    n = int(h.sum())
    active = np.nonzero(p > EDGE_WEIGHT)[0]
    low_conf = counts.size == 1
    method = "fisher"
    cov = np.zeros((3, 3))
    if active.size == 3:
        info = _observed_information(p, counts, occ, comps)
        ev = np.linalg.eigvalsh(info)
        singular = ev.min() <= SINGULAR_RATIO * max(ev.max(), 1e-300)
        if not singular:
            # map (p_dd, p_uu) covariance to all three weights
            J = np.array([[1.0, 0.0], [-1.0, -1.0], [0.0, 1.0]])
            cov = J @ np.linalg.inv(info) @ J.T
    elif active.size == 2:
        # MLE on an edge: the vanishing weight is held at zero, one free direction remains
        i, j = active
        f = comps[:, counts]
        info1 = float(occ @ ((f[i] - f[j]) / (p @ f)) ** 2)
        singular = info1 <= 1e-300
        if not singular:
            cov[i, i] = cov[j, j] = 1.0 / info1
            cov[i, j] = cov[j, i] = -1.0 / info1
    else:
        singular = False  # vertex: no free direction
    if singular or low_conf:
        method = "bootstrap"
        low_conf = True
        boots = []
        z0 = np.log(np.maximum(p, 1e-12))
        z0 = z0[1:] - z0[0]
        for _ in range(N_BOOTSTRAP):
            hb = rng.multinomial(n, h / n)
            cb = np.nonzero(hb)[0]
            boots.append(_ml_weights(cb, hb[cb].astype(float), comps, rng, starts=[z0])[0])
        cov = np.cov(np.array(boots).T)
    pops = SpinPopulations(float(p[2]), float(p[1]), float(p[0]))
    return PopulationFit(pops, np.sqrt(np.clip(np.diag(cov), 0, None)), cov, ll, method, low_conf)


@dataclass(frozen=True)
class Calibration:
    model: DetectionModel
    lambda_bright_err: float
    lambda_dark_err: float
    depump_rt_err: float
    overlap: float = field(default=0.0)


def bhattacharyya_overlap(p: np.ndarray, q: np.ndarray) -> float:
    n = max(p.size, q.size)
    p = np.pad(p, (0, n - p.size))
    q = np.pad(q, (0, n - q.size))
    return float(np.sum(np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None))))


def calibrate_reference(bright: np.ndarray, dark: np.ndarray, t_detect: float = DEFAULT_T_DETECT,
                        max_overlap: float = MAX_OVERLAP) -> Calibration:
    """Fit count levels from two-ion references with both ions bright or both dark.

    Two bright ions give Poisson(2 lambda_b), so lambda_b is half the sample
    mean.  lambda_d and the depumping rate follow from a likelihood fit of the
    two-dark distribution with lambda_b held fixed.
    """
    bright = np.asarray(bright, dtype=np.int64)
    dark = np.asarray(dark, dtype=np.int64)
    if bright.sum() < 1 or dark.sum() < 1:
        raise CalibrationError("reference histograms must be non-empty")
    k_b = np.arange(bright.size)
    n_b = bright.sum()
    lam_b = float(k_b @ bright) / n_b / 2
    lam_b_err = math.sqrt(max(lam_b, 1e-300) / (2 * n_b))
    k_d = np.nonzero(dark)[0]
    occ_d = dark[k_d].astype(float)
    n_d = dark.sum()
    mean_d = float(k_d @ occ_d) / n_d / 2
    if lam_b <= mean_d:
        raise CalibrationError(f"bright reference mean ({2 * lam_b:.3g}) does not exceed dark ({2 * mean_d:.3g}); "
                               "references swapped or indistinguishable")
    cutoff = int(max(k_d.max(), 2 * lam_b + 10 * math.sqrt(2 * lam_b))) + 1
    kk = np.arange(cutoff + 1)

    def pair_pmf(lam_d, rT):
        d = _dark_pmf(kk, lam_d, lam_b, rT)
        return np.convolve(d, d)[:cutoff + 1]

    def nll(x):
        return -float(occ_d @ np.log(np.maximum(pair_pmf(x[0], x[1])[k_d], 1e-300)))

    x0 = np.array([max(mean_d, 1e-3), 0.0])
    res = optimize.minimize(nll, x0, method="L-BFGS-B", bounds=[(1e-9, lam_b), (0.0, 50.0)])
    lam_d, rT = (float(v) for v in res.x)
    hess = _numeric_hessian(nll, res.x, np.array([1e-4 * max(lam_d, 1e-2), 1e-4 * max(rT, 1e-2)]))
    try:
        cov = np.linalg.inv(hess)
        errs = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        errs = np.array([math.inf, math.inf])
    if rT < 1e-6 or not np.all(np.isfinite(errs)) or np.any(np.diag(hess) <= 0):
        # on the r = 0 boundary: lambda_d from the plain Poisson curvature, r from its one-sided curvature
        errs = np.array([math.sqrt(lam_d / (2 * n_d)), 1.0 / math.sqrt(max(hess[1, 1], 1e-300))])
    model = DetectionModel.from_counts(lam_b, lam_d, rT, t_detect)
    ov = bhattacharyya_overlap(ion_count_pmf(model, True), ion_count_pmf(model, False))
    if ov > max_overlap:
        raise CalibrationError(f"bright and dark distributions overlap too much (Bhattacharyya {ov:.3f})")
    return Calibration(model, lam_b_err, float(errs[0]), float(errs[1]), ov)


def _numeric_hessian(f, x, h) -> np.ndarray:
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.eye(n)[i] * h[i]
            ej = np.eye(n)[j] * h[j]
            # forward differences keep the boundary point r = 0 inside the domain
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei) - f(x + ej) + f(x)) / (h[i] * h[j])
    return H


def reference_histograms(model: DetectionModel, shots: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample two-ion bright and dark calibration references."""
    rng = np.random.default_rng(seed)
    comps = component_pmfs(model)
    b = rng.multinomial(shots, comps[2] / comps[2].sum())
    d = rng.multinomial(shots, comps[0] / comps[0].sum())
    return b, d


def write_calibration_csv(path, bright: np.ndarray, dark: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "count", "occurrences"])
        for label, h in (("bright", bright), ("dark", dark)):
            for k in np.nonzero(h)[0]:
                w.writerow([label, int(k), int(h[k])])


def read_calibration_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = {"bright": {}, "dark": {}}
    for row in _read_rows(path, ("label", "count", "occurrences")):
        label = row["label"].strip()
        if label not in data:
            raise ValueError(f"{path}:{row['_line']}: label must be 'bright' or 'dark', got {label!r}")
        k = _int_field(row, "count")
        data[label][k] = data[label].get(k, 0) + _int_field(row, "occurrences")
    out = []
    for label in ("bright", "dark"):
        if not data[label]:
            raise ValueError(f"{path}: no {label} reference rows")
        h = np.zeros(max(data[label]) + 1, dtype=np.int64)
        for k, n in data[label].items():
            h[k] = n
        out.append(h)
    return out[0], out[1]


@dataclass
class MeasuredFidelity:
    fidelity: float
    stderr: float
    half_sum: float
    half_sum_err: float
    amplitude: float
    amplitude_err: float
    fringe: FringeFit
    phases: np.ndarray
    fits: list[PopulationFit]
    reference: PopulationFit
    calibration: Calibration


def analyze_histograms(hset: HistogramSet, calibration: Calibration, seed: int = 0) -> MeasuredFidelity:
    """Populations per phase, parity fringe and fidelity from count histograms.

    The population half-sum comes from the reference point (phase NaN, no
    analysis pulse); the parity amplitude from a fringe fit over the rest.
    """
    ref_idx = [i for i, phi in enumerate(hset.phases) if math.isnan(phi)]
    if len(ref_idx) != 1:
        raise ValueError("histogram set needs exactly one reference point (phi_a = nan)")
    model = calibration.model
    ref = fit_populations(hset.hist[ref_idx[0]], model, seed=seed)
    idx = [i for i in range(len(hset.hist)) if i != ref_idx[0]]
    fits = [fit_populations(hset.hist[i], model, seed=seed + 1 + i) for i in idx]
    phases = hset.phases[idx]
    fringe = fit_fringe(phases, [f.parity for f in fits])
    half, half_err = ref.half_sum, ref.half_sum_err
    F = fidelity_from_fits(2 * half, fringe.amplitude)
    err = fidelity_error(2 * half_err, fringe.amplitude_err)
    return MeasuredFidelity(F, err, half, half_err, fringe.amplitude, fringe.amplitude_err, fringe, phases, fits,
                            ref, calibration)


def measurement_histograms(spin_state, model: DetectionModel, phases, shots: int, seed: int) -> HistogramSet:
    """Histograms for a reference point (no analysis pulse) followed by each analysis phase."""
    phases = np.concatenate([[math.nan], np.asarray(phases, dtype=float)])
    pops = [populations(spin_state)] + [populations(analysis_pulse(spin_state, phi)) for phi in phases[1:]]
    return synthesize_histograms(model, phases, pops, shots, seed)
