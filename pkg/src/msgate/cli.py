"""Command-line runner.

Exit codes: 0 success, 2 configuration or file-format error, 3 integration
failure, 4 readout calibration failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import FitError, default_phase_grid, fidelity, fidelity_error, fidelity_from_fits, fit_fringe, parity_scan, populations
from .config import SCHEMA_VERSION, ConfigError, ScenarioConfig, default_provenance, paper_defaults
from .lindblad import IntegrationError
from .noise import NoiseScenario, table1_scenarios
from .readout import (CalibrationError, HistogramSet, MeasuredFidelity, analyze_histograms, calibrate_reference,
                      measurement_histograms, read_calibration_csv, reference_histograms, write_calibration_csv)
from .simulate import averaged_series, run_shots

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRATION, EXIT_CALIBRATION = 0, 2, 3, 4

log = logging.getLogger("msgate")


def _fmt(x) -> str:
    return f"{float(x):.17e}"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def write_report(path: Path, command: str, result: dict, wall_time: float, extra_meta: dict | None = None) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "result": _jsonable(result),
        # run-dependent fields live here so the rest of the file is reproducible byte for byte
        "metadata": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(), "wall_time_s": wall_time,
                     "version": __version__, **(extra_meta or {})},
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _load_config(args) -> ScenarioConfig:
    if args.config is None:
        if not args.paper_defaults:
            raise ConfigError("no --config given (pass --paper-defaults to use the built-in defaults)")
        cfg = ScenarioConfig.from_dict(paper_defaults())
    else:
        cfg = ScenarioConfig.load(args.config, paper_defaults_fill=args.paper_defaults)
    if args.seed is not None:
        cfg = cfg.override("numerics", "seed", args.seed)
    if args.shots is not None:
        cfg = cfg.override("numerics", "n_shots", args.shots)
    if args.fock is not None:
        cfg = cfg.override("numerics", "fock_cutoff", args.fock)
    return cfg


def _out_dir(args, cfg: ScenarioConfig | None) -> Path:
    out = Path(args.out if args.out is not None else (cfg.raw["outputs"]["dir"] if cfg else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pops_dict(spin) -> dict:
    p = populations(spin)
    return {"p_uu": p.p_uu, "p_mixed": p.p_mixed, "p_dd": p.p_dd}


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    params, scenario, numerics = cfg.gate_params(), cfg.noise(), cfg.numerics()
    res = run_shots(scenario, params, numerics=numerics)
    f = res.detail
    result = {
        "fidelity": res.fidelity, "infidelity": res.infidelity, "stderr": res.stderr, "n_shots": res.n_shots,
        "per_shot_mean_fidelity": res.per_shot_fidelity, "per_shot_stderr": res.per_shot_stderr,
        "target_overlap": f.overlap, "population_half_sum": f.population_half_sum,
        "coherence_abs": abs(f.coherence), "populations": _pops_dict(res.mean_state),
        "diagnostics": {"max_trace_deviation": res.max_trace_deviation,
                        "max_hermiticity_deviation": res.max_hermiticity_deviation,
                        "min_eigenvalue": res.min_eigenvalue},
        "config": cfg.to_dict(),
    }
    n_ts = cfg.raw["outputs"]["time_series_points"]
    if n_ts > 0:
        grid = list(np.linspace(0.0, params.gate_time, n_ts))
        series = averaged_series(scenario, params, grid, numerics=numerics)
        rows = []
        for t, s in zip(grid, series):
            fs = fidelity(s, check=False)
            p = populations(s)
            rows.append([t, fs.value, p.p_uu, p.p_mixed, p.p_dd])
        write_csv(out / "simulate_timeseries.csv", ["t_s", "fidelity", "p_uu", "p_mixed", "p_dd"], rows)
    write_report(out / "simulate.json", "simulate", result, time.perf_counter() - t0)
    print(f"fidelity {res.fidelity:.6f} (infidelity {res.infidelity:.3e} +- {res.stderr:.1e}, {res.n_shots} shots)")
    return EXIT_OK


def run_budget(cfg: ScenarioConfig, n_shots: int | None = None) -> list[dict]:
    params, numerics = cfg.gate_params(), cfg.numerics()
    rows = []
    for row in table1_scenarios():
        if not row.simulate:
            rows.append({"name": row.name, "parameter": row.parameter, "paper_infidelity": row.paper_infidelity,
                         "infidelity": row.paper_infidelity, "stderr": 0.0, "n_shots": 0, "bound": row.bound,
                         "simulated": False, "wall_time_s": 0.0})
            continue
        log.info("budget row %s", row.name)
        # budget rows use the nominal gate; the envelope comes from the row itself
        p = replace(params, ramp_time=row.scenario.ramp_time)
        res = run_shots(row.scenario, p, n_shots=n_shots, numerics=numerics)
        rows.append({"name": row.name, "parameter": row.parameter, "paper_infidelity": row.paper_infidelity,
                     "infidelity": res.infidelity, "stderr": res.stderr, "n_shots": res.n_shots, "bound": row.bound,
                     "simulated": True, "wall_time_s": res.wall_time,
                     "max_trace_deviation": res.max_trace_deviation, "min_eigenvalue": res.min_eigenvalue})
    return rows


def cmd_budget(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    rows = run_budget(cfg, args.shots)
    header = ["name", "parameter", "paper_infidelity", "infidelity", "stderr", "n_shots", "bound", "simulated"]
    write_csv(out / "budget.csv", header, ([r[k] for k in header] for r in rows))
    walls = {r["name"]: r.pop("wall_time_s") for r in rows}
    write_report(out / "budget.json", "budget", {"rows": rows, "config": cfg.to_dict()},
                 time.perf_counter() - t0, {"row_wall_time_s": walls})
    for r in rows:
        tag = "bound" if r["bound"] else ""
        src = "" if r["simulated"] else " (not simulated)"
        print(f"{r['name']:<30s} {r['infidelity']:.3e} +- {r['stderr']:.1e}  paper {r['paper_infidelity']:.1e} "
              f"{tag}{src}  [{walls[r['name']]:.1f} s]")
    return EXIT_OK


def run_sweep(cfg: ScenarioConfig, n_shots: int | None = None,
              results: list | None = None) -> list[tuple[float, float, float, float]]:
    """Grid rows (rel_std, t_chirp_us, infidelity, stderr); full results are appended to ``results`` if given."""
    params, numerics = cfg.gate_params(), cfg.numerics()
    sw = cfg.raw["sweep"]
    shots = sw["n_shots"] if n_shots is None else n_shots
    rows = []
    for t_chirp in sw["t_chirp_us"]:
        for rel in sw["rel_std"]:
            sc = NoiseScenario(mode_jitter_rel_std=float(rel), chirp_rate=sw["chirp_rate_hz_per_us"],
                               chirp_duration=float(t_chirp) * 1e-6)
            # the same seed at every grid point: common random numbers along both axes
            res = run_shots(sc, params, n_shots=shots, numerics=numerics)
            rows.append((float(rel), float(t_chirp), res.infidelity, res.stderr))
            if results is not None:
                results.append(res)
    return rows


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    rows = run_sweep(cfg, args.shots)
    write_csv(out / "sweep.csv", ["rel_std", "t_chirp_us", "infidelity", "stderr"], rows)
    write_report(out / "sweep.json", "sweep",
                 {"points": [dict(zip(["rel_std", "t_chirp_us", "infidelity", "stderr"], r)) for r in rows],
                  "config": cfg.to_dict()}, time.perf_counter() - t0)
    for r in rows:
        print(f"rel_std {r[0]:.2e}  T_chirp {r[1]:6.1f} us  infidelity {r[2]:.3e} +- {r[3]:.1e}")
    return EXIT_OK


def measured_dict(m: MeasuredFidelity) -> dict:
    return {
        "fidelity": m.fidelity, "stderr": m.stderr,
        "population_half_sum": m.half_sum, "population_half_sum_err": m.half_sum_err,
        "parity_amplitude": m.amplitude, "parity_amplitude_err": m.amplitude_err,
        "fringe_phase": m.fringe.phase, "fringe_offset": m.fringe.offset,
        "reference_populations": {"p_uu": m.reference.populations.p_uu, "p_mixed": m.reference.populations.p_mixed,
                                  "p_dd": m.reference.populations.p_dd},
        "phase_points": [{"phi_a": float(phi), "p_uu": f.populations.p_uu, "p_mixed": f.populations.p_mixed,
                          "p_dd": f.populations.p_dd, "parity": f.parity, "parity_err": f.parity_err,
                          "method": f.method, "low_confidence": bool(f.low_confidence)}
                         for phi, f in zip(m.phases, m.fits)],
        "calibration": {"lambda_bright": m.calibration.model.lambda_bright,
                        "lambda_bright_err": m.calibration.lambda_bright_err,
                        "lambda_dark": m.calibration.model.lambda_dark,
                        "lambda_dark_err": m.calibration.lambda_dark_err,
                        "depump_rt": m.calibration.model.depump_rate * m.calibration.model.t_detect,
                        "depump_rt_err": m.calibration.depump_rt_err,
                        "overlap": m.calibration.overlap},
    }


def cmd_parity(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    params, scenario, numerics = cfg.gate_params(), cfg.noise(), cfg.numerics()
    rd = cfg.raw["readout"]
    res = run_shots(scenario, params, numerics=numerics)
    rho = res.mean_state
    scan = parity_scan(rho, default_phase_grid(rd["n_phases"]))
    scan.to_csv(out / "parity.csv")
    fit = fit_fringe(scan.phases, scan.parity)
    psum = scan.reference.p_uu + scan.reference.p_dd
    result = {
        "density_matrix_fidelity": res.fidelity, "density_matrix_stderr": res.stderr,
        "population_sum": psum, "parity_amplitude": fit.amplitude, "parity_amplitude_err": fit.amplitude_err,
        "fringe_phase": fit.phase, "fringe_offset": fit.offset,
        "fidelity": fidelity_from_fits(psum, fit.amplitude),
        "fidelity_err": fidelity_error(0.0, fit.amplitude_err),
        "config": cfg.to_dict(),
    }
    if args.with_readout:
        model = cfg.detection_model()
        seed = numerics.seed
        hset = measurement_histograms(rho, model, scan.phases, rd["shots_per_phase"], [seed, 1])
        bright, dark = reference_histograms(model, rd["calibration_shots"], [seed, 2])
        hset.to_csv(out / "histograms.csv")
        write_calibration_csv(out / "calibration.csv", bright, dark)
        cal = calibrate_reference(bright, dark, model.t_detect)
        result["readout"] = measured_dict(analyze_histograms(hset, cal, seed=seed))
    write_report(out / "parity.json", "parity", result, time.perf_counter() - t0)
    print(f"parity amplitude {fit.amplitude:.6f}, population sum {psum:.6f}, fidelity {result['fidelity']:.6f}")
    if args.with_readout:
        r = result["readout"]
        print(f"readout fidelity {r['fidelity']:.4f} +- {r['stderr']:.4f}")
    return EXIT_OK


def cmd_fit_histograms(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args) if (args.config or args.paper_defaults) else None
    out = _out_dir(args, cfg)
    try:
        hset = HistogramSet.from_csv(args.histograms)
        bright, dark = read_calibration_csv(args.calibration)
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    t_detect = cfg.detection_model().t_detect if cfg else None
    seed = args.seed if args.seed is not None else (cfg.raw["numerics"]["seed"] if cfg else 0)
    cal = calibrate_reference(bright, dark, *(() if t_detect is None else (t_detect,)))
    m = analyze_histograms(hset, cal, seed=seed)
    write_report(out / "fit.json", "fit-histograms", {"readout": measured_dict(m)}, time.perf_counter() - t0)
    print(f"fidelity {m.fidelity:.4f} +- {m.stderr:.4f} (half-sum {m.half_sum:.4f}, amplitude {m.amplitude:.4f})")
    return EXIT_OK


def cmd_print_defaults(args) -> int:
    for key, value, source in default_provenance():
        print(f"{key:<34s} {value!s:<24s} # {source}")
    if args.out is not None:
        out = _out_dir(args, None)
        (out / "paper_defaults.json").write_text(json.dumps(paper_defaults(), indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msgate", description="Microwave Molmer-Sorensen gate simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--shots", type=int)
        sp.add_argument("--fock", type=int)
        sp.add_argument("--paper-defaults", action="store_true", help="fill missing config keys with built-in defaults")
        return sp

    common(sub.add_parser("simulate", help="single scenario")).set_defaults(func=cmd_simulate)
    common(sub.add_parser("budget", help="single-effect error budget")).set_defaults(func=cmd_budget)
    common(sub.add_parser("sweep", help="mode jitter x chirp length grid")).set_defaults(func=cmd_sweep)
    sp = common(sub.add_parser("parity", help="parity scan and fringe fit"))
    sp.add_argument("--with-readout", action="store_true", help="also synthesize and refit count histograms")
    sp.set_defaults(func=cmd_parity)
    sp = common(sub.add_parser("fit-histograms", help="fit count histograms"))
    sp.add_argument("--histograms", type=Path, required=True)
    sp.add_argument("--calibration", type=Path, required=True)
    sp.set_defaults(func=cmd_fit_histograms)
    sp = sub.add_parser("print-defaults", help="show built-in defaults and their sources")
    sp.add_argument("--out", type=Path)
    sp.set_defaults(func=cmd_print_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (ValueError, FitError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
