"""Run artifacts: ``trace.csv``, ``beams.csv``, ``result.json`` and ``sweep.csv``.

Every writer has a matching reader. Floats are written with ``repr`` so CSV
round trips are exact. Files are written to a temporary name and renamed.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .metrics import BeamformingState, evaluate
from .optimizer import RunResult
from .scenario import Scenario, link_delay_doppler

TRACE_FIXED = ["iter", "objective", "utility", "sum_crlb", "max_crlb", "min_rate", "grad_norm",
               "step", "beta", "backtracks", "power_residual", "tangency_residual"]
SWEEP_FIXED = ["mode", "value", "sum_crlb", "max_crlb", "min_crlb"]
SWEEP_TAIL = ["min_rate", "mean_rate", "rate_residual", "iterations", "termination", "wall_time"]


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_rows(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    atomic_write_text(path, buf.getvalue())


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_trace(path, result: RunResult) -> None:
    q = len(result.final.crlbs)
    k = len(result.final.rates)
    header = TRACE_FIXED + [f"crlb_{j}" for j in range(q)] + [f"rate_{j}" for j in range(k)]
    rows = []
    for rec in result.trace:
        rows.append([rec.iter, rec.objective, rec.utility, sum(rec.crlbs), max(rec.crlbs),
                     min(rec.rates), rec.grad_norm, rec.step, rec.beta, rec.backtracks,
                     rec.power_residual, rec.tangency_residual, *rec.crlbs, *rec.rates])
    write_rows(path, header, rows)


def read_trace(path) -> dict:
    """Columns of a trace file as float arrays (``iter``/``backtracks`` as int)."""
    rows = read_rows(path)
    if not rows:
        raise ValueError(f"{path}: empty trace")
    out = {}
    for key in rows[0]:
        conv = int if key in ("iter", "backtracks") else float
        out[key] = np.array([conv(r[key]) for r in rows])
    return out


def write_beams(path, beams: BeamformingState) -> None:
    """Rows ``i,k,p,re,im``; ``k == K`` is the sensing beam of subcarrier ``i``.

    Row order equals the stacked vector order ``z``.
    """
    n_sc, kp1, n_tx = beams.blocks.shape
    rows = []
    for i in range(n_sc):
        for k in range(kp1):
            for p in range(n_tx):
                val = beams.blocks[i, k, p]
                rows.append([i, k, p, float(val.real), float(val.imag)])
    write_rows(path, ["i", "k", "p", "re", "im"], rows)


def read_beams(path) -> BeamformingState:
    rows = read_rows(path)
    idx = np.array([[int(r["i"]), int(r["k"]), int(r["p"])] for r in rows])
    shape = tuple(idx.max(axis=0) + 1)
    blocks = np.zeros(shape, dtype=complex)
    for (i, k, p), r in zip(idx, rows):
        blocks[i, k, p] = complex(float(r["re"]), float(r["im"]))
    return BeamformingState(blocks)


def result_payload(scenario: Scenario, result: RunResult, config_doc: dict) -> dict:
    par = scenario.params
    final = result.final
    ev = evaluate(scenario, result.final_beams, result.config.mode)
    fims = [[float(J[0, 0]), float(J[0, 1]), float(J[1, 1])] for J in ev.fim]
    links = [[dict(zip(("tau_bar", "fd_bar"), link_delay_doppler(scenario, q, m)))
              for m in range(scenario.n_nodes)] for q in range(scenario.n_targets)]
    return {
        "termination": result.termination.value,
        "iterations": final.iter,
        "objective": final.objective,
        "utility": final.utility,
        "crlbs": list(final.crlbs),
        "sum_crlb": float(sum(final.crlbs)),
        "max_crlb": float(max(final.crlbs)),
        "fim": fims,
        "rates_bps": list(final.rates),
        "min_rate_bps": float(min(final.rates)),
        "r_min_bps": result.config.r_min,
        "rate_residual_bps": result.rate_residual,
        "mode": result.config.mode.value,
        "alpha": result.config.alpha,
        "rho": result.config.rho,
        "seed": scenario.seed,
        "p_total_watts": par.p_total,
        "system": {"n_tx": par.n_tx, "n_sc": par.n_sc, "n_sym": par.n_sym, "f_c": par.f_c,
                   "delta_f": par.delta_f, "bandwidth": par.bandwidth, "t_sym": par.t_sym,
                   "n_users": scenario.n_users, "n_targets": scenario.n_targets},
        "links": links,
        "config": config_doc,
        "wall_time": result.wall_time,
    }


def write_result(path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_result(path) -> dict:
    return json.loads(Path(path).read_text())


def write_run(directory, scenario: Scenario, result: RunResult, config_doc: dict) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    payload = result_payload(scenario, result, config_doc)
    write_trace(d / "trace.csv", result)
    write_beams(d / "beams.csv", result.final_beams)
    write_result(d / "result.json", payload)
    return payload


def sweep_row(mode: str, value, payload: dict) -> list:
    c = payload["crlbs"]
    rates = payload["rates_bps"]
    return [mode, value, sum(c), max(c), min(c), *c, min(rates), float(np.mean(rates)),
            payload["rate_residual_bps"], payload["iterations"], payload["termination"],
            payload["wall_time"]]


def write_sweep(path, rows: list, n_targets: int) -> None:
    header = SWEEP_FIXED + [f"crlb_{q}" for q in range(n_targets)] + SWEEP_TAIL
    write_rows(path, header, rows)


def read_sweep(path) -> list:
    rows = read_rows(path)
    out = []
    for r in rows:
        rec = {}
        for key, val in r.items():
            if key in ("mode", "termination"):
                rec[key] = val
            elif key == "iterations":
                rec[key] = int(val)
            else:
                rec[key] = float(val)
        out.append(rec)
    return out
