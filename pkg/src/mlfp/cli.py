"""Command-line front end: ``mlfp {constants,estimate,experiment,check}``.

Exit codes: 0 success, 1 usage or configuration error, 2 bound-check failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .mlfp import MlfpParams, greedy_action, mlfp_q, value_from_q
from .harness import (
    ExperimentConfig,
    check_bounds,
    emit_csv,
    emit_json,
    expected_sampler_calls,
    read_csv,
    run_experiment,
)
from .model import build_model, load_model
from .rng import CostLedger
from .theory import (
    TheoryConstants,
    complexity_budget,
    complexity_constant,
    cost_bound,
    cost_recursion,
    min_M,
    n_for_eps,
    simple_min_M,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _encode(obj) -> str:
    """JSON with sorted keys and floats at 17 significant digits."""
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {_encode(obj[k])}" for k in sorted(obj))
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        text = format(v, ".17g")
        return text if any(ch in text for ch in ".en") else text + ".0"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _default_seed() -> int:
    raw = os.environ.get("MLFP_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MLFP_SEED must be an integer, got {raw!r}") from None


def _contraction(cw_l: float) -> None:
    if not 0.0 <= cw_l < 1.0:
        raise UsageError(f"--cw-l must satisfy 0 <= cw-l < 1 (contraction condition), got {cw_l}")


def cmd_constants(args) -> int:
    _contraction(args.cw_l)
    need = min_M(args.cw_l, args.actions)
    kappa = 0.0 if args.kappa is None else args.kappa
    tc = TheoryConstants.from_params(args.cw_l, args.actions, args.M, kappa)
    out = {
        "min_M": need,
        "alpha": tc.alpha,
        "beta": tc.beta,
        "convergence_condition": args.M >= need,
    }
    if args.delta is not None:
        if not 0.0 <= args.delta < 1.0:
            raise UsageError(f"--delta must lie in [0, 1), got {args.delta}")
        out["simple_min_M"] = simple_min_M(args.delta, args.actions)
    if args.kappa is not None:
        out["gamma"] = tc.gamma
    if args.eps is not None:
        if args.kappa is None:
            raise UsageError("--eps needs --kappa")
        if not 0.0 < args.eps <= 1.0:
            raise UsageError(f"--eps must lie in (0, 1], got {args.eps}")
        if tc.alpha < 1.0:
            n = n_for_eps(args.eps, tc)
            out["n_for_eps"] = n
            out["cost_recursion"] = cost_recursion(n, args.M, 1)
            out["cost_bound"] = cost_bound(n, args.M, 1)
            out["complexity_budget"] = complexity_budget(args.eps, tc)
            out["c"] = complexity_constant(tc)
    print(_encode(out))
    return 0


def _parse_state(text: str, model):
    try:
        parts = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"malformed state vector {text!r}") from None
    base = getattr(model, "stopping", None) or model.control
    if base.state_shape == ():
        if len(parts) != 1 or not parts[0].is_integer():
            raise UsageError(f"state {text!r} must be a single integer index")
        x = int(parts[0])
    else:
        x = np.array(parts)
    try:
        model.control.encode_state(x)
    except ValueError as exc:
        raise UsageError(f"malformed state vector {text!r}: {exc}") from None
    return x


def _load(path):
    try:
        return load_model(path)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}") from None


def cmd_estimate(args) -> int:
    built = _load(args.model)
    x = _parse_state(args.state, built)
    seed = _default_seed() if args.seed is None else args.seed
    ledger = CostLedger()
    try:
        q = mlfp_q(built.control, MlfpParams(args.M, args.n, seed, ledger), x)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(_encode({
        "q": q,
        "value": value_from_q(q),
        "greedy_action": greedy_action(q),
        "sampler_calls": ledger.sampler_calls,
    }))
    return 0


def _experiment_config(args) -> ExperimentConfig:
    try:
        data = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        if args.model:
            with open(args.model, encoding="utf-8") as fh:
                data["model"] = json.load(fh)
        if args.test_states:
            with open(args.test_states, encoding="utf-8") as fh:
                data["test_states"] = json.load(fh)
        for key, val in (("M", args.M), ("n_max", args.n_max), ("replications", args.reps),
                         ("master_seed", args.seed), ("threads", args.threads)):
            if val is not None:
                data[key] = val
        data.setdefault("master_seed", _default_seed())
        data.setdefault("threads", os.cpu_count() or 1)
        if args.no_timing:
            data["record_timing"] = False
        if args.no_bound_check:
            data["check_bounds"] = False
        if "model" not in data:
            raise UsageError("need --model or a config file with a model entry")
        return ExperimentConfig.from_dict(data)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"bad experiment configuration: {exc}") from None


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    try:
        rows = run_experiment(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    emit_csv(rows, args.out)
    if args.json:
        emit_json(rows, args.json)
    n_actions = build_model(cfg.model).control.n_actions
    ledger_ok = all(r.sampler_calls == expected_sampler_calls(r.n, r.M, n_actions) for r in rows)
    total = sum(r.sampler_calls * r.reps for r in rows)
    print(f"rows={len(rows)} max_rmse={max(r.weighted_sup_rmse for r in rows):.17g} "
          f"total_sampler_calls={total} ledger={'pass' if ledger_ok else 'fail'}")
    return 0


def cmd_check(args) -> int:
    _contraction(args.cw_l)
    try:
        rows = read_csv(args.report)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot parse report: {exc}") from None
    tc = TheoryConstants.from_params(args.cw_l, args.actions, args.M, args.kappa)
    result = check_bounds(rows, tc, args.slack)
    for v in result.rows:
        print(f"row {v.index} n={v.n}: {'PASS' if v.passed else 'FAIL'} {v.message}")
    return 0 if result.passed else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlfp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("constants", help="print theory constants as JSON")
    c.add_argument("--cw-l", type=float, required=True)
    c.add_argument("--actions", type=int, required=True)
    c.add_argument("--M", type=int, required=True)
    c.add_argument("--kappa", type=float)
    c.add_argument("--eps", type=float)
    c.add_argument("--delta", type=float)
    c.set_defaults(func=cmd_constants)

    e = sub.add_parser("estimate", help="one MLFP evaluation at the root node")
    e.add_argument("--model", required=True)
    e.add_argument("--M", type=int, required=True)
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--state", required=True, help="comma-separated state vector or index")
    e.set_defaults(func=cmd_estimate)

    x = sub.add_parser("experiment", help="replication experiment, writes a CSV report")
    x.add_argument("--config")
    x.add_argument("--model")
    x.add_argument("--M", type=int)
    x.add_argument("--n-max", type=int)
    x.add_argument("--reps", type=int)
    x.add_argument("--seed", type=int)
    x.add_argument("--test-states")
    x.add_argument("--out", required=True)
    x.add_argument("--json")
    x.add_argument("--threads", type=int)
    x.add_argument("--no-timing", action="store_true", help="write wall_ms as nan for byte-stable output")
    x.add_argument("--no-bound-check", action="store_true",
                   help="skip the M-condition and bound column (models without a usable certificate)")
    x.set_defaults(func=cmd_experiment)

    k = sub.add_parser("check", help="check a report against the error and cost bounds")
    k.add_argument("--report", required=True)
    k.add_argument("--cw-l", type=float, required=True)
    k.add_argument("--actions", type=int, required=True)
    k.add_argument("--M", type=int, required=True)
    k.add_argument("--kappa", type=float, required=True)
    k.add_argument("--slack", type=float, default=1.05)
    k.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mlfp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
