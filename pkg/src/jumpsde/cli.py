"""Command-line front end.

Usage::

    jumpsde --config run.yaml [--command NAME] [--seed N] [--reps N] [-T REAL]
            [--k N] [--x0 REAL] [--x0b REAL] [--out DIR] [--format {csv,json}]

The config file is YAML (JSON also parses). Top-level keys::

    command      simulate | couple | probe | ladder | ks | check-monotone |
                 check-integrability | tanaka
    model        {family: lfv, law: {family: atom|power, ...}}
                 {family: additive, rate, dist, a, b, drift, compensated}
                 {family: scripted, events: [[t, u], ...], drift}
                 {family: reflection}          (check-monotone only)
    k, T, x0, x0b, reps, seed, output, format
    grid_points  simulate: extra dense samples per path (default 0)
    variant      probe: {substep_scale, tie_order} (default {substep_scale: 0.5})
    kmin, kmax   ladder levels (default k .. k + 6)
    model_b      ks: second model; when absent the level-k LFV model is
                 compared against itself driven by a level-(k+1) master stream
    marks, grid  check-monotone sample sizes (default 10000 x 1000)
    levels       tanaka: levels per path (default 100)

Flags override config values. Exit status: 0 success, 2 invalid config,
3 engine abort; failures print a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import _io
from .errors import IntegrationError, InvalidInput
from .experiments import (
    SchemeVariant,
    compare_paths,
    couple_paths,
    direct,
    filtered,
    pathwise_uniqueness_probe,
    run_replicates,
    truncation_ladder_run,
    weak_uniqueness_check,
)
from .lfv import TruncationLevel, check_integrability, lfv_region, monotonicity_grid
from .models import kernel_from_config, law_from_config, model_from_config
from .point_process import StreamRole, derive_seed
from .sde_core import check_monotone, integrate
from .semimartingale import max_identity_residual, sample_levels, tanaka_sweep, verify_max_is_solution

COMMANDS = (
    "simulate",
    "couple",
    "probe",
    "ladder",
    "ks",
    "check-monotone",
    "check-integrability",
    "tanaka",
)

ANCHORS = {
    "simulate": "sde-solution",
    "couple": "max-solution",
    "probe": "pathwise-uniqueness",
    "ladder": "truncation-limit",
    "ks": "weak-uniqueness",
    "check-monotone": "monotone-jump-condition",
    "check-integrability": "radius-integrability",
    "tanaka": "tanaka-formula",
}

DEFAULTS = {
    "command": "simulate",
    "model": {"family": "lfv", "law": {"family": "atom", "w": 1.0, "zeta": 0.5}},
    "k": 1,
    "T": 1.0,
    "x0": 0.0,
    "x0b": None,
    "reps": 1,
    "seed": 0,
    "output": "jumpsde-out",
    "format": "csv",
}

COMMAND_DEFAULTS = {
    "simulate": {"grid_points": 0},
    "couple": {"x0b": 0.1},
    "probe": {"variant": {"substep_scale": 0.5, "tie_order": "forward"}},
    "ladder": {},
    "ks": {"model_b": None},
    "check-monotone": {"marks": 10000, "grid": 1000},
    "check-integrability": {"d": 1},
    "tanaka": {"levels": 100},
}


class ConfigError(InvalidInput):
    pass


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return data


def resolve_config(file_cfg: dict, overrides: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    command = cfg["command"]
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    for key, value in COMMAND_DEFAULTS[command].items():
        if cfg.get(key) is None:
            cfg[key] = copy.deepcopy(value)
    if command == "ladder":
        cfg.setdefault("kmin", cfg["k"])
        cfg.setdefault("kmax", cfg["kmin"] + 6)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    def num(key, cond, what):
        value = cfg.get(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not cond(value):
            raise ConfigError(f"{key} must be {what}, got {value!r}")

    num("T", lambda v: math.isfinite(v) and v > 0, "a finite positive number")
    num("x0", math.isfinite, "finite")
    if cfg.get("x0b") is not None:
        num("x0b", math.isfinite, "finite")
    num("k", lambda v: int(v) == v and v >= 1, "an integer >= 1")
    num("reps", lambda v: int(v) == v and v >= 1, "an integer >= 1")
    num("seed", lambda v: int(v) == v and 0 <= v < 2**64, "a 64-bit unsigned integer")
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {cfg['format']!r}")
    if not isinstance(cfg.get("model"), dict):
        raise ConfigError("model must be a mapping with a 'family' key")
    if cfg["command"] == "ladder":
        num("kmin", lambda v: int(v) == v and v >= 1, "an integer >= 1")
        num("kmax", lambda v: int(v) == v and v > cfg["kmin"], "an integer > kmin")
    if cfg["command"] == "tanaka":
        num("levels", lambda v: int(v) == v and v >= 1, "an integer >= 1")
    if cfg["command"] == "ks":
        num("reps", lambda v: v >= 100, "at least 100 for the KS check")


class Writer:
    """Writes tabular and JSON artifacts, all tagged with the command anchor."""

    def __init__(self, cfg):
        self.out = Path(cfg["output"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.fmt = cfg["format"]
        self.meta = {"anchor": ANCHORS[cfg["command"]], "command": cfg["command"], "seed": cfg["seed"]}
        self.files = []

    def json(self, name, payload):
        body = dict(self.meta)
        body["data"] = payload
        _io.write_json(self.out / name, body)
        self.files.append(name)

    def table(self, stem, header, rows):
        rows = [list(r) for r in rows]
        if self.fmt == "csv":
            _io.write_csv(self.out / f"{stem}.csv", header, rows, self.meta)
            self.files.append(f"{stem}.csv")
        else:
            self.json(f"{stem}.json", [dict(zip(header, r)) for r in rows])


def _rep_width(reps):
    return max(1, len(str(reps - 1)))


def cmd_simulate(cfg, w: Writer):
    model = model_from_config(cfg["model"], int(cfg["k"]), cfg["T"])
    width = _rep_width(cfg["reps"])

    def one(i):
        stream = model.sample_noise(cfg["T"], int(cfg["seed"]), i)
        return stream, integrate(model, stream, cfg["x0"], cfg["T"])

    summaries = []
    for i, (stream, path) in enumerate(run_replicates(one, int(cfg["reps"]))):
        tag = f"{i:0{width}d}"
        w.table(f"path_{tag}", ["t", "x_minus", "x", "kind"], path.rows(int(cfg["grid_points"])))
        stream.to_csv(w.out / f"stream_{tag}.csv", meta=w.meta)
        w.files.append(f"stream_{tag}.csv")
        summary = path.summary()
        summary["replicate"] = i
        summaries.append(summary)
    w.json("summary.json", summaries)
    return 0


def cmd_couple(cfg, w: Writer):
    model = model_from_config(cfg["model"], int(cfg["k"]), cfg["T"])
    T, seed = cfg["T"], int(cfg["seed"])

    def one(i):
        p1, p2 = couple_paths(model, cfg["x0"], cfg["x0b"], T, seed, i)
        rep = compare_paths(p1, p2)
        mx = max_identity_residual(p1, p2)
        stream = model.sample_noise(T, seed, i)
        ms = verify_max_is_solution(p1, p2, model, stream)
        return [
            i,
            rep.sup_distance,
            rep.order_violations,
            rep.terminal_gap,
            mx.residual,
            mx.down_correction,
            mx.up_correction,
            ms.deviation,
            ms.ok,
            p1.boundary_touched or p2.boundary_touched,
        ]

    rows = run_replicates(one, int(cfg["reps"]))
    header = [
        "replicate",
        "sup_distance",
        "order_violations",
        "terminal_gap",
        "max_identity_residual",
        "down_correction",
        "up_correction",
        "max_solution_deviation",
        "max_solution_ok",
        "boundary_touched",
    ]
    w.table("couple", header, rows)
    w.json(
        "summary.json",
        {
            "reps": len(rows),
            "order_violations": sum(r[2] for r in rows),
            "max_identity_residual": max(r[4] for r in rows),
            "corrections_all_zero": all(r[5] == 0.0 and r[6] == 0.0 for r in rows),
            "max_solution_deviation": max(r[7] for r in rows),
            "max_solution_all_ok": all(r[8] for r in rows),
        },
    )
    return 0


def cmd_probe(cfg, w: Writer):
    model = model_from_config(cfg["model"], int(cfg["k"]), cfg["T"])
    variant = SchemeVariant(**cfg["variant"])

    def one(i):
        r = pathwise_uniqueness_probe(model, cfg["x0"], cfg["T"], int(cfg["seed"]), variant, replicate_id=i)
        return [i, r.sup_distance, r.order_violations, r.terminal_gap]

    rows = run_replicates(one, int(cfg["reps"]))
    w.table("probe", ["replicate", "sup_distance", "order_violations", "terminal_gap"], rows)
    w.json("summary.json", {"reps": len(rows), "max_sup_distance": max(r[1] for r in rows)})
    return 0


def cmd_ladder(cfg, w: Writer):
    if cfg["model"].get("family", "lfv") != "lfv":
        raise ConfigError("ladder needs an lfv model")
    law = law_from_config(cfg["model"].get("law"))
    report = truncation_ladder_run(
        law, int(cfg["kmin"]), int(cfg["kmax"]), cfg["T"], cfg["x0"], int(cfg["reps"]), int(cfg["seed"])
    )
    header = ["k", "mean_gap", "std_error", "replicates", "invalidated"]
    w.table("ladder", header, [[r.k, r.mean_gap, r.std_error, r.replicates, r.invalidated] for r in report.rows])
    w.json("ladder_report.json", report.to_dict())
    return 0


def cmd_ks(cfg, w: Writer):
    k = int(cfg["k"])
    model_a = model_from_config(cfg["model"], k, cfg["T"])
    if cfg.get("model_b"):
        rep_b = direct(model_from_config(cfg["model_b"], k, cfg["T"]))
    else:
        if cfg["model"].get("family", "lfv") != "lfv":
            raise ConfigError("the default ks comparison needs an lfv model")
        law = law_from_config(cfg["model"].get("law"))
        rep_b = filtered(model_a, lfv_region(k + 1, law), TruncationLevel(k).contains)
    seed = int(cfg["seed"])
    report = weak_uniqueness_check(
        direct(model_a), rep_b, cfg["T"], int(cfg["reps"]), (seed, seed + 1), cfg["x0"]
    )
    w.json("ks_report.json", report.to_dict())
    w.table(
        "ks",
        ["statistic", "threshold", "n_a", "n_b", "exceeds"],
        [[report.statistic, report.threshold, report.n_a, report.n_b, report.exceeds]],
    )
    return 0


def cmd_check_monotone(cfg, w: Writer):
    kernel, region = kernel_from_config(cfg["model"], int(cfg["k"]))
    rng = derive_seed(int(cfg["seed"]), 0, StreamRole.AUXILIARY).generator()
    marks = region.mark_sampler(rng, int(cfg["marks"]))
    if cfg["model"].get("family", "lfv") == "lfv":
        grid = monotonicity_grid(marks, int(cfg["grid"]))
    else:
        grid = np.linspace(-10.0, 10.0, int(cfg["grid"]))
    report = check_monotone(kernel, marks, grid)
    w.json("monotone_report.json", report.to_dict())
    return 0


def cmd_check_integrability(cfg, w: Writer):
    law = law_from_config(cfg["model"].get("law"))
    report = check_integrability(law, int(cfg.get("d", 1)))
    w.json("integrability_report.json", report.to_dict())
    return 0


def cmd_tanaka(cfg, w: Writer):
    model = model_from_config(cfg["model"], int(cfg["k"]), cfg["T"])
    seed = int(cfg["seed"])

    def one(i):
        stream = model.sample_noise(cfg["T"], seed, i)
        path = integrate(model, stream, cfg["x0"], cfg["T"])
        rng = derive_seed(seed, i, StreamRole.AUXILIARY).generator()
        levels = sample_levels(path, int(cfg["levels"]), rng)
        return [dict(replicate=i, **r.to_dict()) for r in tanaka_sweep(path, np.sort(levels))]

    entries = [e for chunk in run_replicates(one, int(cfg["reps"])) for e in chunk]
    w.json("tanaka.json", entries)
    if w.fmt == "csv":
        header = ["replicate", "level", "lhs", "stieltjes_term", "down_corrections", "up_corrections", "residual"]
        w.table("tanaka", header, [[e[h] for h in header] for e in entries])
    w.json(
        "summary.json",
        {"max_abs_residual": max(abs(e["residual"]) for e in entries), "n_levels": len(entries)},
    )
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "probe": cmd_probe,
    "ladder": cmd_ladder,
    "ks": cmd_ks,
    "check-monotone": cmd_check_monotone,
    "check-integrability": cmd_check_integrability,
    "tanaka": cmd_tanaka,
}


def run(cfg: dict) -> int:
    """Execute a resolved config; returns the exit status."""
    w = Writer(cfg)
    _io.write_json(w.out / "config.json", cfg)
    return HANDLERS[cfg["command"]](cfg, w)


def build_parser():
    p = argparse.ArgumentParser(prog="jumpsde", description="Event-driven pure-jump SDE experiments.")
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("-T", dest="T", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--x0", type=float)
    p.add_argument("--x0b", type=float)
    p.add_argument("--out", dest="output")
    p.add_argument("--format", choices=("csv", "json"))
    return p


def _fail(code, kind, message, extra=None):
    payload = {"status": code, "kind": kind, "error": message}
    if extra:
        payload.update(extra)
    sys.stderr.write(json.dumps(_io.to_jsonable(payload), sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail(2, "invalid-config", "could not parse command-line flags")
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        file_cfg = load_config(args.config) if args.config else {}
        cfg = resolve_config(file_cfg, overrides)
    except InvalidInput as exc:
        return _fail(2, "invalid-config", str(exc))
    try:
        return run(cfg)
    except IntegrationError as exc:
        return _fail(3, "engine-abort", str(exc), {"diagnostic": exc.diagnostic()})
    except InvalidInput as exc:
        return _fail(2, "invalid-config", str(exc))


if __name__ == "__main__":
    sys.exit(main())
