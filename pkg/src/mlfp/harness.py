"""Replication experiments: weighted RMSE, bias, cost and variance decay."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .mlfp import estimate_q_batch, level_summands
from .model import BuiltModel, build_model
from .oracle import exact_q, picard_iterate
from .rng import ROOT, STREAM_VERSION, CostLedger
from .theory import TheoryConstants, cost_recursion, min_M

CSV_HEADER = ("model", "M", "n", "reps", "weighted_sup_rmse", "bound", "mean_abs_bias",
              "sampler_calls", "wall_ms", "stream_version")

# reference estimates for models without an exact table live on a disjoint subtree
REFERENCE_ROOT = (1,)


@dataclass
class ExperimentConfig:
    model: dict[str, Any]
    M: int
    n_max: int
    replications: int
    master_seed: int = 0
    test_states: list = field(default_factory=list)
    slack: float = 1.05
    check_bounds: bool = True
    threads: int = 1
    record_timing: bool = True
    block_size: int = 50

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("replications must be >= 2")
        if not self.test_states:
            raise ValueError("test_states must be nonempty")
        if self.M < 1 or self.n_max < 1:
            raise ValueError("need M >= 1 and n_max >= 1")
        if self.threads < 1 or self.block_size < 1:
            raise ValueError("threads and block_size must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {', '.join(sorted(extra))}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ReportRow:
    model: str
    M: int
    n: int
    reps: int
    weighted_sup_rmse: float
    bound: float
    mean_abs_bias: float
    sampler_calls: int
    wall_ms: float
    stream_version: str = STREAM_VERSION
    reference: str = "exact"


def theory_constants_for(built: BuiltModel, M: int) -> TheoryConstants:
    cert = built.control.certificate
    return TheoryConstants.from_params(cert.cwL, built.control.n_actions, M, cert.kappa)


def _replicate(control, M: int, n: int, seeds: np.ndarray, xs: Sequence, theta, threads: int,
               block: int) -> tuple[np.ndarray, int]:
    """Estimates for all replications, assembled in replication order."""
    blocks = [seeds[i:i + block] for i in range(0, len(seeds), block)]

    def run(b):
        ledger = CostLedger()
        return estimate_q_batch(control, M, n, b, xs, theta, ledger), ledger.sampler_calls

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts)


def replication_seeds(master_seed: int, R: int) -> np.ndarray:
    return np.uint64(master_seed) ^ np.arange(R, dtype=np.uint64)


def run_experiment(config: ExperimentConfig) -> list[ReportRow]:
    built = build_model(config.model)
    control = built.control
    xs = list(config.test_states)
    encoded = np.stack([control.encode_state(x) for x in xs])
    w = control.weight(encoded)
    R = config.replications
    seeds = replication_seeds(config.master_seed, R)

    constants = None
    if config.check_bounds:
        constants = theory_constants_for(built, config.M)
        need = min_M(constants.cwL, constants.action_count)
        if config.M < need:
            raise ValueError(f"M={config.M} violates the convergence condition (need M >= {need})")

    if built.finite is not None:
        exact = exact_q(built.finite).values[np.asarray(xs, dtype=np.intp)]
        picard1 = picard_iterate(built.finite, 1).values[np.asarray(xs, dtype=np.intp)]
        reference = "exact"
    else:
        ref, _ = _replicate(control, config.M, config.n_max + 2, seeds, xs, REFERENCE_ROOT,
                            config.threads, config.block_size)
        exact = ref.mean(axis=0)
        picard1 = None
        reference = "self"

    rows = []
    for n in range(1, config.n_max + 1):
        t0 = time.perf_counter()
        est, calls = _replicate(control, config.M, n, seeds, xs, ROOT, config.threads,
                                config.block_size)
        elapsed = (time.perf_counter() - t0) * 1e3
        if calls % R:
            raise AssertionError(f"ledger total {calls} is not a multiple of R={R}")
        err = np.max(np.abs(est - exact[None]), axis=-1) ** 2  # (R, P)
        rmse = float(np.max(np.sqrt(err.mean(axis=0)) / w))
        if reference == "exact":
            target = picard1 if n == 1 else exact
            bias = float(np.mean(np.abs(est.mean(axis=0) - target)))
        else:
            bias = math.nan
        bound = constants.bound(n) if constants is not None and reference == "exact" else math.nan
        rows.append(ReportRow(built.model_id, config.M, n, R, rmse, bound, bias, calls // R,
                              elapsed if config.record_timing else math.nan,
                              STREAM_VERSION, reference))
    return rows


@dataclass
class LevelStat:
    level: int
    sd: float
    stderr: float


def variance_decay_probe(config: ExperimentConfig, levels: Sequence[int]) -> list[LevelStat]:
    """Replication sd of the level-l telescoping summand, max over (x, a)."""
    built = build_model(config.model)
    seeds = replication_seeds(config.master_seed, config.replications)
    R = config.replications
    out = []
    for l in levels:
        parts = [level_summands(built.control, config.M, l, seeds[i:i + config.block_size],
                                config.test_states)
                 for i in range(0, R, config.block_size)]
        vals = np.concatenate(parts)
        sd = vals.std(axis=0, ddof=1)
        k = np.unravel_index(np.argmax(sd), sd.shape)
        s = float(sd[k])
        # normal-theory standard error of a sample sd
        out.append(LevelStat(l, s, s / math.sqrt(2.0 * (R - 1))))
    return out


@dataclass
class RowVerdict:
    index: int
    n: int
    passed: bool
    message: str


@dataclass
class BoundCheckResult:
    passed: bool
    rows: list[RowVerdict]

    def failures(self) -> list[RowVerdict]:
        return [r for r in self.rows if not r.passed]


def expected_sampler_calls(n: int, M: int, action_count: int) -> int:
    return action_count * cost_recursion(n, M, 1)


def check_bounds(rows: Sequence[ReportRow], constants: TheoryConstants, slack: float = 1.05) -> BoundCheckResult:
    """Each row must satisfy rmse <= slack * gamma * alpha^n and the exact ledger count.

    Rows whose bound column is NaN (self-referenced models) only get the
    ledger check.
    """
    verdicts = []
    for i, row in enumerate(rows):
        problems = []
        want = expected_sampler_calls(row.n, row.M, constants.action_count)
        if int(row.sampler_calls) != want:
            problems.append(f"cost: sampler_calls={row.sampler_calls} but ledger predicts {want}")
        if not math.isnan(row.bound):
            limit = slack * constants.bound(row.n)
            if not row.weighted_sup_rmse <= limit:
                problems.append(f"error: rmse={row.weighted_sup_rmse:.6g} exceeds {slack}*gamma*alpha^{row.n}={limit:.6g}")
        msg = "; ".join(problems) if problems else "ok"
        verdicts.append(RowVerdict(i, row.n, not problems, msg))
    return BoundCheckResult(all(v.passed for v in verdicts), verdicts)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def csv_text(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
    return buf.getvalue()


def emit_csv(rows: Sequence[ReportRow], path: str | Path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    _atomic_write(path, csv_text(rows))


def _json_float(v: float):
    # JSON has no NaN; keep the 17-digit text form so values round-trip
    return v if math.isfinite(v) else None


def emit_json(rows: Sequence[ReportRow], path: str | Path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    data = []
    for r in rows:
        d = asdict(r)
        data.append({k: _json_float(v) if isinstance(v, float) else v for k, v in d.items()})
    _atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_csv(path: str | Path) -> list[ReportRow]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            rows = []
            for rec in reader:
                bound = float(rec["bound"])
                rows.append(ReportRow(
                    rec["model"], int(rec["M"]), int(rec["n"]), int(rec["reps"]),
                    float(rec["weighted_sup_rmse"]), bound, float(rec["mean_abs_bias"]),
                    int(rec["sampler_calls"]), float(rec["wall_ms"]), rec["stream_version"],
                    "self" if math.isnan(bound) else "exact"))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed report row ({exc})") from exc
    return rows
