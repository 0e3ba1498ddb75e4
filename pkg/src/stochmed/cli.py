"""Command-line front end: ``stochmed analyze``, ``stochmed simulate`` and ``stochmed oracle``.

Settings come from an optional JSON file (``--config``) overridden by flags.
Every output embeds the resolved configuration, the seed and the package
version. Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from stochmed import __version__
from stochmed.exceptions import (
    DegenerateVariance,
    FoldFitError,
    NormalizerOverflow,
    QuadratureError,
    StochMedError,
)
from stochmed.model import SCHEMA_VERSION, InterventionKind, InterventionSpec, validate_dataset

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

DEFAULTS: Dict[str, Any] = {
    "input": None,
    "output": None,
    "roles": None,
    "intervention": "ips",
    "delta": 0.5,
    "delta_grid": None,
    "lower": None,
    "upper": None,
    "estimator": "onestep",
    "folds": 5,
    "boot": 2000,
    "multiplier": "rademacher",
    "alpha": 0.05,
    "seed": 0,
    "threads": 1,
    "emit_data": False,
    "misspecify": [],
    "reps": 300,
    "n": [400, 1600, 6400],
}

_NUMERIC_ERRORS = (NormalizerOverflow, QuadratureError, DegenerateVariance, FloatingPointError, np.linalg.LinAlgError)


class InputError(StochMedError, ValueError):
    """Bad configuration or command-line values."""


# =============================================================================
# Configuration
# =============================================================================


def parse_grid(text) -> List[float]:
    """``LO:HI:K`` for K log-spaced (ips) or even points, or a JSON list of values."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    parts = str(text).split(":")
    if len(parts) != 3:
        raise InputError(f"delta grid must look like LO:HI:K, got {text!r}")
    try:
        lo, hi, k = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise InputError(f"cannot parse delta grid {text!r}") from exc
    if k < 1 or hi < lo:
        raise InputError(f"invalid delta grid {text!r}")
    return [lo, hi, k]


def _expand_grid(spec: Sequence[float], kind: str) -> List[float]:
    if len(spec) == 3 and float(spec[2]).is_integer() and spec[0] <= spec[1] and spec[2] >= 1:
        lo, hi, k = float(spec[0]), float(spec[1]), int(spec[2])
        if k == 1:
            return [lo]
        if kind == "ips" and lo > 0:
            return list(np.exp(np.linspace(np.log(lo), np.log(hi), k)))
        return list(np.linspace(lo, hi, k))
    return [float(v) for v in spec]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochmed", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"stochmed {__version__}")
    sub = p.add_subparsers(dest="mode", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with settings; flags override it")
    common.add_argument("--output", type=Path, help="output path (stdout when omitted)")
    common.add_argument("--intervention", choices=[k.value for k in InterventionKind])
    common.add_argument("--delta", type=float)
    common.add_argument("--delta-grid", dest="delta_grid", type=parse_grid, metavar="LO:HI:K")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker processes; 0 uses every core")

    a = sub.add_parser("analyze", parents=[common], help="estimate effects from a CSV file")
    a.add_argument("--input", type=Path)
    a.add_argument("--roles", type=json.loads, help='JSON like {"W": [...], "Z": [...], "A": "a", "Y": "y"}')
    a.add_argument("--estimator", choices=["sub", "ipw", "onestep"])
    a.add_argument("--folds", type=int)
    a.add_argument("--boot", type=int)
    a.add_argument("--multiplier", choices=["rademacher", "gaussian"])
    a.add_argument("--alpha", type=float)
    a.add_argument("--lower", type=float, help="shift policy lower support bound")
    a.add_argument("--upper", type=float, help="shift policy upper support bound")
    a.add_argument("--misspecify", action="append", choices=["G", "E", "M", "Phi"])

    s = sub.add_parser("simulate", parents=[common], help="run the benchmark replication study")
    s.add_argument("--reps", type=int)
    s.add_argument("--n", type=int, action="append", help="sample size (repeatable)")
    s.add_argument("--estimator", action="append", choices=["sub", "ipw", "onestep"])
    s.add_argument("--misspecify", action="append", choices=["G", "E", "M", "Phi"])
    s.add_argument("--emit-data", dest="emit_data", action="store_true", default=None,
                   help="also write one generated dataset per sample size as CSV")

    sub.add_parser("oracle", parents=[common], help="exact effects on the benchmark DGP")
    return p


def resolve_config(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise InputError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS) - {"mode", "estimators"}
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key == "config" or value is None:
            continue
        cfg[key] = str(value) if isinstance(value, Path) else value
    cfg["mode"] = args.mode
    if cfg.get("delta_grid") is not None:
        cfg["delta_grid"] = _expand_grid(parse_grid(cfg["delta_grid"]), cfg["intervention"])
    if isinstance(cfg.get("n"), int):
        cfg["n"] = [cfg["n"]]
    if args.mode == "simulate" and isinstance(cfg.get("estimator"), str):
        cfg["estimator"] = None
    return cfg


def _intervention(cfg: Dict[str, Any], delta: Optional[float] = None) -> InterventionSpec:
    d = cfg["delta"] if delta is None else delta
    kind = InterventionKind(cfg["intervention"])
    if kind is InterventionKind.SHIFT_POLICY:
        return InterventionSpec.shift(d, cfg.get("lower"), cfg.get("upper"))
    return InterventionSpec(kind, d)


def _infer_roles(columns: Sequence[str]) -> Dict[str, Any]:
    """Default roles from column names: W* covariates, Z* mediators, A exposure, Y outcome."""
    if "A" not in columns or "Y" not in columns:
        raise InputError("no roles given and the data lack columns named 'A' and 'Y'")
    return {
        "W": [c for c in columns if c.upper().startswith("W")],
        "Z": [c for c in columns if c.upper().startswith("Z")],
        "A": "A",
        "Y": "Y",
    }


# =============================================================================
# Commands
# =============================================================================


def _envelope(cfg: Dict[str, Any], payload_key: str, payload: Any) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        payload_key: payload,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _write_json(obj: Dict[str, Any], path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def cmd_analyze(cfg: Dict[str, Any]) -> Dict[str, Any]:
    from stochmed.crossfit import NuisanceLearners
    from stochmed.estimators import analyze

    if not cfg.get("input"):
        raise InputError("analyze needs --input")
    try:
        raw = pd.read_csv(cfg["input"])
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputError(f"cannot read {cfg['input']}: {exc}") from exc
    roles = cfg.get("roles") or _infer_roles(list(raw.columns))
    cfg["roles"] = roles
    data = validate_dataset(raw, roles)
    learners = NuisanceLearners().misspecify(cfg.get("misspecify") or [])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = analyze(
            data, _intervention(cfg), cfg.get("delta_grid"), cfg["estimator"], learners,
            folds=cfg["folds"], seed=cfg["seed"], n_boot=cfg["boot"], multiplier=cfg["multiplier"],
            alpha=cfg["alpha"],
        )
    for w in caught:
        msg = f"{type(w.message).__name__}: {w.message}"
        if msg not in report.flags:
            report.flags.append(msg)
    report.config = cfg
    out = _envelope(cfg, "report", report.to_dict())
    _write_json(out, cfg.get("output"))
    return out


def cmd_simulate(cfg: Dict[str, Any]) -> Dict[str, Any]:
    from stochmed.sim import generate, run_table1

    ns = [int(n) for n in cfg["n"]]
    if any(n < 1 for n in ns) or int(cfg["reps"]) < 1:
        raise InputError("n and reps must be positive")
    estimators = cfg.get("estimator") or cfg.get("estimators")
    toggles = cfg.get("misspecify") or None
    if toggles:
        toggles = ["none"] + list(toggles)
    result = run_table1(ns, int(cfg["reps"]), estimators, toggles, seed=cfg["seed"],
                        delta=cfg["delta"], threads=cfg["threads"])
    out = _envelope(cfg, "result", result.to_dict())
    base = cfg.get("output")
    if base is None:
        _write_json(out, None)
    else:
        stem = Path(base).with_suffix("")
        result.to_csv(stem.with_suffix(".csv"))
        _write_json(out, str(stem.with_suffix(".json")))
        if cfg.get("emit_data"):
            for n in ns:
                generate(n, np.random.SeedSequence([cfg["seed"], n, -1 % 2**32])).to_frame().to_csv(
                    f"{stem}_data_n{n}.csv", index=False
                )
    return out


def cmd_oracle(cfg: Dict[str, Any]) -> Dict[str, Any]:
    from stochmed.sim import oracle_truth

    grid = cfg.get("delta_grid") or [cfg["delta"]]
    values = [{"delta": float(d), **oracle_truth(_intervention(cfg, d)).to_dict()} for d in grid]
    out = _envelope(cfg, "truth", values)
    _write_json(out, cfg.get("output"))
    return out


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "oracle": cmd_oracle}


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "col", "fold", "nuisance"):
        if hasattr(exc, attr):
            err[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(err, default=str) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        COMMANDS[args.mode](cfg)
    except _NUMERIC_ERRORS as exc:
        return _fail(EXIT_NUMERIC, exc)
    except FoldFitError as exc:
        code = EXIT_NUMERIC if isinstance(exc.cause, _NUMERIC_ERRORS) else EXIT_INPUT
        return _fail(code, exc)
    except (StochMedError, ValueError, KeyError, OSError) as exc:
        return _fail(EXIT_INPUT, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
