"""Command-line front end: ``fairisac {run,sweep,check-grad,report}``."""

from __future__ import annotations

import argparse
import copy
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts
from .config import ConfigError, ExperimentConfig, load_config_document, parse_config
from .gradients import check_gradients
from .metrics import SensingMode, SingularFIMError
from .optimizer import optimize
from .scenario import ScenarioError, build_scenario

log = logging.getLogger("fairisac")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
GRAD_TOL = 1e-5


def _load(args) -> tuple:
    doc = load_config_document(args.config)
    if getattr(args, "seed", None) is not None:
        doc = copy.deepcopy(doc)
        doc.setdefault("scenario", {})["seed"] = args.seed
    return doc, parse_config(doc)


def _modes(args, default):
    if getattr(args, "mode", None) is None:
        return default
    if args.mode == "both":
        return [SensingMode.MULTISTATIC, SensingMode.MONOSTATIC]
    return [SensingMode(args.mode)]


def _out_dir(args, cfg: ExperimentConfig, fallback: str) -> Path:
    return Path(args.out or cfg.output_dir or fallback)


def cmd_run(args) -> int:
    doc, cfg = _load(args)
    scenario = build_scenario(cfg.scenario)
    out = _out_dir(args, cfg, "run")
    modes = _modes(args, [cfg.optimizer.mode])
    for mode in modes:
        opt = replace(cfg.optimizer, mode=mode)
        result = optimize(scenario, opt)
        target = out if len(modes) == 1 else out / mode.value
        payload = artifacts.write_run(target, scenario, result, doc)
        print(f"[{mode.value}] {result.termination.value} after {result.iterations} iterations; "
              f"sum CRLB {payload['sum_crlb']:.6g}, max CRLB {payload['max_crlb']:.6g}, "
              f"min rate {payload['min_rate_bps'] / 1e6:.3f} Mbps -> {target}")
    return EXIT_OK


def _sweep_doc(doc: dict, param: str, value) -> dict:
    d = copy.deepcopy(doc)
    d.pop("sweep", None)
    sc = d["scenario"]
    opt = d.setdefault("optimizer", {})
    if param == "alpha":
        opt["alpha"] = value
    elif param == "r_min":
        opt["r_min"] = f"{value!r} bps"
    else:
        if isinstance(sc.get("noise_power"), list) and len(sc["noise_power"]) > 1:
            raise ConfigError(["scenario.noise_power: an n_users sweep needs a single noise power"])
        sc.pop("users", None)
        sc["n_users"] = int(value)
        # per-count seed: same base seed, salted with the user count
        base = int(sc.get("seed", 0))
        sc["seed"] = int(np.random.SeedSequence([base, int(value)]).generate_state(1)[0])
    return d


def _sweep_job(job):
    doc, mode_value, directory = job
    cfg = parse_config(doc)
    scenario = build_scenario(cfg.scenario)
    result = optimize(scenario, replace(cfg.optimizer, mode=SensingMode(mode_value)))
    return artifacts.write_run(directory, scenario, result, doc)


def cmd_sweep(args) -> int:
    doc, cfg = _load(args)
    if cfg.sweep is None:
        raise ConfigError(["sweep: section required for the sweep command"])
    sw = cfg.sweep
    out = _out_dir(args, cfg, "sweep")
    modes = _modes(args, sw.modes)
    jobs, keys = [], []
    for mode in modes:
        for value in sw.values:
            sub = _sweep_doc(doc, sw.parameter, value)
            directory = out / "runs" / mode.value / f"{sw.parameter}={value:g}"
            jobs.append((sub, mode.value, str(directory)))
            keys.append((mode.value, value))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            payloads = list(pool.map(_sweep_job, jobs))
    else:
        payloads = [_sweep_job(j) for j in jobs]
    rows = [artifacts.sweep_row(m, v, p) for (m, v), p in zip(keys, payloads)]
    artifacts.write_sweep(out / "sweep.csv", rows, len(payloads[0]["crlbs"]))
    for (m, v), p in zip(keys, payloads):
        print(f"[{m}] {sw.parameter}={v:g}: sum CRLB {p['sum_crlb']:.6g}, "
              f"max CRLB {p['max_crlb']:.6g}, min rate {p['min_rate_bps'] / 1e6:.3f} Mbps")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def _scale_first_block(family_prefix: str, n_tx: int, factor: float = 1.01):
    """Test hook: corrupt the first N_T entries of one gradient family."""

    def perturb(family, g):
        if family.startswith(family_prefix):
            g = g.copy()
            g[:n_tx] *= factor
        return g

    return perturb


def cmd_check_grad(args) -> int:
    doc, cfg = _load(args)
    if args.n_states < 1:
        raise ConfigError([f"--n-states: must be >= 1, got {args.n_states}"])
    scenario = build_scenario(cfg.scenario)
    perturb = None
    if args.perturb_block is not None:
        perturb = _scale_first_block(args.perturb_block, scenario.params.n_tx)
    worst = check_gradients(scenario, cfg.optimizer, n_states=args.n_states,
                            seed=cfg.scenario.seed, perturb=perturb)
    ok = True
    for family, err in worst.items():
        flag = "ok" if err < GRAD_TOL else "FAIL"
        ok &= err < GRAD_TOL
        print(f"{family:<22s} worst relative error {err:.3e}  {flag}")
    return EXIT_OK if ok else EXIT_FAILURE


def _write_convergence(path, trace: dict) -> None:
    cols = ["iter", "objective", "utility", "sum_crlb", "max_crlb", "min_rate", "grad_norm"]
    rows = zip(*(trace[c] for c in cols))
    artifacts.write_rows(path, cols, rows)


def _summarize_run(directory: Path) -> None:
    res = artifacts.read_result(directory / "result.json")
    sysp = res["system"]
    delta_f = sysp["delta_f"]
    print(f"run: {directory}")
    print(f"  termination: {res['termination']} after {res['iterations']} iterations "
          f"({res['mode']}, alpha={res['alpha']:g}, rho={res['rho']:g})")
    print(f"  feasibility residual max_k[R_min - R_k]_+: {res['rate_residual_bps'] / 1e6:.6g} Mbps"
          f" (R_min = {res['r_min_bps'] / 1e6:.6g} Mbps)")
    for k, r in enumerate(res["rates_bps"]):
        print(f"  user {k}: rate {r / 1e6:.4f} Mbps")
    for q, (c, (j11, j12, j22)) in enumerate(zip(res["crlbs"], res["fim"])):
        det = j11 * j22 - j12**2
        var_tau = j22 / det  # [J^-1]_11 in normalized-delay units^2
        rmse_ns = math.sqrt(var_tau) / delta_f * 1e9
        tau_true_ns = res["links"][q][-1]["tau_bar"] / delta_f * 1e9
        print(f"  target {q}: CRLB {c:.6g} (normalized units^2); delay RMSE >= {rmse_ns:.4g} ns "
              f"(monostatic path delay {tau_true_ns:.4g} ns)")


def cmd_report(args) -> int:
    d = Path(args.directory)
    if not d.is_dir():
        print(f"error: {d} is not a directory", file=sys.stderr)
        return EXIT_FAILURE
    plot = d / "plotdata"
    if (d / "sweep.csv").is_file():
        rows = artifacts.read_sweep(d / "sweep.csv")
        print(f"sweep: {d} ({len(rows)} runs)")
        for r in rows:
            print(f"  [{r['mode']}] value={r['value']:g}: sum {r['sum_crlb']:.6g} "
                  f"max {r['max_crlb']:.6g} min {r['min_crlb']:.6g} "
                  f"min rate {r['min_rate'] / 1e6:.4f} Mbps residual {r['rate_residual'] / 1e6:.4g} Mbps")
        by_mode = {}
        for r in rows:
            by_mode.setdefault(r["mode"], []).append(r)
        for mode, rs in by_mode.items():
            cols = ["value", "sum_crlb", "max_crlb", "min_crlb", "min_rate", "mean_rate"]
            artifacts.write_rows(plot / f"sweep_{mode}.csv", cols,
                                  [[r[c] for c in cols] for r in rs])
        for run_dir in sorted((d / "runs").glob("*/*")):
            if (run_dir / "trace.csv").is_file():
                trace = artifacts.read_trace(run_dir / "trace.csv")
                _write_convergence(plot / f"convergence_{run_dir.parent.name}_{run_dir.name}.csv",
                                   trace)
        return EXIT_OK
    run_dirs = [d] if (d / "result.json").is_file() else sorted(
        p for p in d.iterdir() if (p / "result.json").is_file())
    if not run_dirs:
        print(f"error: {d} has no result.json, sweep.csv or run subdirectories", file=sys.stderr)
        return EXIT_FAILURE
    for rd in run_dirs:
        if not (rd / "trace.csv").is_file():
            print(f"error: {rd / 'trace.csv'} missing", file=sys.stderr)
            return EXIT_FAILURE
        _summarize_run(rd)
        name = "convergence.csv" if rd == d else f"convergence_{rd.name}.csv"
        _write_convergence(plot / name, artifacts.read_trace(rd / "trace.csv"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairisac",
        description="Alpha-fair multistatic ISAC beamforming (Riemannian conjugate gradient).")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True,
                       help="JSON config path, or a packaged preset name (desk, full)")
        p.add_argument("--seed", type=int, help="override scenario.seed")

    p = sub.add_parser("run", help="optimize one scenario and write run artifacts")
    common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["multistatic", "monostatic", "both"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="optimize over a list of alpha / r_min / n_users values")
    common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["multistatic", "monostatic", "both"])
    p.add_argument("--jobs", type=int, default=1, help="parallel sub-runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-grad", help="compare analytic and finite-difference gradients")
    common(p)
    p.add_argument("--n-states", type=int, default=10)
    p.add_argument("--perturb-block", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("report", help="summarize a run or sweep directory, emit plot data")
    p.add_argument("directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, SingularFIMError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
