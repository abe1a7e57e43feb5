"""Base score, step counting and the Dynamic Quality Score."""

from __future__ import annotations

import csv
import io
import json
import math
import threading
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .errors import (
    EmptySeason,
    MalformedTrace,
    NonpositiveK,
    OutOfRange,
    UnfrozenSeason,
    WeightMismatch,
)

METRIC_NAMES = ("precision", "recall", "design", "blank", "readability", "align")
MODES = ("T2I", "TI2I")
RECORD_SCHEMA_VERSION = 1

DEFAULT_STEP_TOOLS = frozenset(
    {
        "insert_shape",
        "insert_line",
        "insert_text",
        "set_format",
        "move",
        "align",
        "connect",
        "delete",
    }
)


@dataclass(frozen=True)
class MetricVector:
    precision: float
    recall: float
    design: float
    blank: float
    readability: float
    align: float

    def __post_init__(self):
        for name in METRIC_NAMES:
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise OutOfRange(f"metric {name}={value} outside [0, 1]")

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> "MetricVector":
        if set(values) != set(METRIC_NAMES):
            raise WeightMismatch(f"metrics must be exactly {METRIC_NAMES}, got {sorted(values)}")
        return cls(**{k: float(values[k]) for k in METRIC_NAMES})

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass(frozen=True)
class WeightProfile:
    precision: float
    recall: float
    design: float
    blank: float
    readability: float
    align: float
    profile_id: str = "custom"

    def __post_init__(self):
        values = [getattr(self, n) for n in METRIC_NAMES]
        if any(v < 0 for v in values):
            raise WeightMismatch(f"weights must be non-negative: {values}")
        if abs(math.fsum(values) - 1.0) > 1e-9:
            raise WeightMismatch(f"weights must sum to 1, got {math.fsum(values)}")

    @classmethod
    def from_mapping(cls, weights: Mapping[str, float], profile_id: str = "custom") -> "WeightProfile":
        if set(weights) != set(METRIC_NAMES):
            raise WeightMismatch(f"weights must name exactly {METRIC_NAMES}, got {sorted(weights)}")
        return cls(**{k: float(weights[k]) for k in METRIC_NAMES}, profile_id=profile_id)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


DEFAULT_WEIGHTS = WeightProfile(0.20, 0.20, 0.20, 0.05, 0.25, 0.10, profile_id="default")
EQUAL_WEIGHTS = WeightProfile(*([1 / 6] * 6), profile_id="equal")
WEIGHT_PROFILES = {"default": DEFAULT_WEIGHTS, "equal": EQUAL_WEIGHTS}


def base_score(metrics: MetricVector | Mapping[str, float], weights: WeightProfile = DEFAULT_WEIGHTS) -> float:
    """Weighted sum of the six metrics, bound by metric name."""
    if not isinstance(metrics, MetricVector):
        metrics = MetricVector.from_mapping(metrics)
    if not isinstance(weights, WeightProfile):
        raise WeightMismatch(f"expected a WeightProfile, got {type(weights).__name__}")
    return math.fsum(getattr(weights, n) * getattr(metrics, n) for n in METRIC_NAMES)


# --------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceEntry:
    tool: str
    args: dict = field(default_factory=dict)
    status: str = "ok"
    timestamp: float | str | None = None


@dataclass(frozen=True)
class TraceLog:
    entries: tuple[TraceEntry, ...] = ()
    step_tools: frozenset[str] = DEFAULT_STEP_TOOLS
    task_id: str | None = None

    @classmethod
    def from_records(cls, records: Iterable, step_tools: Iterable[str] | None = None, task_id: str | None = None) -> "TraceLog":
        entries = []
        for i, rec in enumerate(records):
            if not isinstance(rec, dict):
                raise MalformedTrace(f"entry {i}: expected an object")
            tool = rec.get("tool")
            status = rec.get("status", "ok")
            if not isinstance(tool, str) or not tool:
                raise MalformedTrace(f"entry {i}: missing tool name")
            if status not in ("ok", "error"):
                raise MalformedTrace(f"entry {i}: status must be 'ok' or 'error', got {status!r}")
            args = rec.get("args", {})
            if not isinstance(args, dict):
                raise MalformedTrace(f"entry {i}: args must be an object")
            entries.append(TraceEntry(tool, args, status, rec.get("timestamp")))
        tools = frozenset(step_tools) if step_tools is not None else DEFAULT_STEP_TOOLS
        return cls(tuple(entries), tools, task_id)

    @classmethod
    def from_jsonl(cls, text: str, step_tools: Iterable[str] | None = None) -> "TraceLog":
        """Parse a JSONL trace; a leading ``{"task_id": ...}`` header line is optional."""
        records, task_id = [], None
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedTrace(f"line {lineno}: {exc}") from exc
            if isinstance(rec, dict) and "tool" not in rec and "task_id" in rec:
                task_id = rec["task_id"]
                continue
            records.append(rec)
        return cls.from_records(records, step_tools, task_id)


def count_steps(trace: TraceLog) -> int:
    """Successful calls to whitelisted drawing tools."""
    return sum(1 for e in trace.entries if e.status == "ok" and e.tool in trace.step_tools)


# --------------------------------------------------------------------------
# season parameters and DQS


class SeasonParams:
    """Per-season constants: mean step count ``K`` and tolerance ``r``.

    Mutable until :meth:`freeze`; afterwards every attribute is read-only.
    """

    def __init__(self, K: float, r: float, season_id: str = "", mode: str | None = None, frozen: bool = False):
        if not K > 0:
            raise NonpositiveK(f"K must be positive, got {K}")
        if not 0.0 <= r <= 1.0:
            raise OutOfRange(f"r must lie in [0, 1], got {r}")
        self._lock = threading.Lock()
        self.K = float(K)
        self.r = float(r)
        self.season_id = season_id
        self.mode = mode
        self.frozen = bool(frozen)

    def __setattr__(self, name, value):
        if getattr(self, "frozen", False) and name != "_lock":
            raise UnfrozenSeason(f"season params {self.season_id!r} are frozen")
        super().__setattr__(name, value)

    def freeze(self) -> "SeasonParams":
        with self._lock:
            if not self.frozen:
                super().__setattr__("frozen", True)
        return self

    def __eq__(self, other):
        if not isinstance(other, SeasonParams):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"SeasonParams(K={self.K!r}, r={self.r!r}, season_id={self.season_id!r}, mode={self.mode!r}, frozen={self.frozen})"

    def to_dict(self) -> dict:
        return {"K": self.K, "r": self.r, "season_id": self.season_id, "mode": self.mode, "frozen": self.frozen}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SeasonParams":
        return cls(d["K"], d["r"], d.get("season_id", ""), d.get("mode"), d.get("frozen", False))


def saturation(n: float, K: float) -> float:
    if not K > 0:
        raise NonpositiveK(f"K must be positive, got {K}")
    if n < 0:
        raise ValueError(f"step count must be non-negative, got {n}")
    return n / (n + K)


def dqs(s: float, n: float, params: SeasonParams) -> float:
    """Dynamic Quality Score: base score adjusted by a step-count reward or penalty."""
    if not params.frozen:
        raise UnfrozenSeason("season params must be frozen before scoring")
    if not 0.0 <= s <= 1.0:
        raise OutOfRange(f"base score {s} outside [0, 1]")
    sat = saturation(n, params.K)
    return s * (1.0 - (1.0 - s) * sat) + params.r * s * (1.0 - sat)


def dqs_delta(s, n, K: float, r: float):
    """Net reward (positive) or penalty (negative) that DQS adds to ``s``."""
    return s / (n + K) * (r * K - (1.0 - s) * n)


def break_even_steps(s: float, K: float, r: float) -> float:
    """Step count at which DQS equals the base score."""
    if s >= 1.0:
        return math.inf
    return r * K / (1.0 - s)


def dqs_delta_surface(K: float, r: float, s_grid: Sequence[float], n_grid: Sequence[float]) -> np.ndarray:
    """Matrix of net change, rows indexed by ``s_grid`` and columns by ``n_grid``."""
    s = np.asarray(s_grid, dtype=np.float64)
    n = np.asarray(n_grid, dtype=np.float64)
    if s.size == 0 or n.size == 0:
        raise ValueError("grids must be non-empty")
    if not K > 0:
        raise NonpositiveK(f"K must be positive, got {K}")
    return dqs_delta(s[:, None], n[None, :], K, r)


def fit_season_params(records: Sequence["ScoreRecord"], season_id: str = "", mode: str | None = None) -> SeasonParams:
    """Freeze ``K`` as the mean step count and ``r`` as one minus the mean base score."""
    if not records:
        raise EmptySeason("cannot fit season parameters from zero records")
    K = math.fsum(rec.n for rec in records) / len(records)
    r = 1.0 - math.fsum(rec.s for rec in records) / len(records)
    return SeasonParams(K, r, season_id, mode).freeze()


# --------------------------------------------------------------------------
# records and reports


@dataclass(frozen=True)
class ScoreRecord:
    task_id: str
    mode: str
    metrics: MetricVector
    n: float
    s: float
    dqs: float | None = None
    system: str | None = None
    weights_id: str = "default"
    season_id: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["metrics"] = self.metrics.as_dict()
        d["schema_version"] = RECORD_SCHEMA_VERSION
        d["tool_version"] = __version__
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreRecord":
        return cls(
            task_id=d["task_id"],
            mode=d["mode"],
            metrics=MetricVector.from_mapping(d["metrics"]),
            n=d["n"],
            s=d["s"],
            dqs=d.get("dqs"),
            system=d.get("system"),
            weights_id=d.get("weights_id", "default"),
            season_id=d.get("season_id", ""),
            provenance=d.get("provenance", {}),
        )


SUMMARY_COLUMNS = (
    "system", "mode", "tasks", "precision", "recall", "design", "blank",
    "readability", "align", "steps", "score", "dqs",
)


def summarize(records: Sequence[ScoreRecord]) -> list[dict]:
    """Per (system, mode) means, ranked by DQS descending within each mode."""
    groups: dict[tuple[str, str], list[ScoreRecord]] = {}
    for rec in records:
        groups.setdefault((rec.system or "-", rec.mode), []).append(rec)
    rows = []
    for (system, mode), recs in groups.items():
        k = len(recs)
        row = {"system": system, "mode": mode, "tasks": k}
        for name in METRIC_NAMES:
            row[name] = math.fsum(getattr(r.metrics, name) for r in recs) / k
        row["steps"] = math.fsum(r.n for r in recs) / k
        row["score"] = math.fsum(r.s for r in recs) / k
        scored = [r.dqs for r in recs if r.dqs is not None]
        row["dqs"] = math.fsum(scored) / len(scored) if scored else None
        rows.append(row)
    mode_rank = {m: i for i, m in enumerate(MODES)}
    # stable sort keeps first-seen order among ties
    rows.sort(key=lambda r: (mode_rank.get(r["mode"], 99), -(r["dqs"] if r["dqs"] is not None else -math.inf)))
    return rows


def summary_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# diagrameval {__version__} schema {RECORD_SCHEMA_VERSION}\n")
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k) for k in SUMMARY_COLUMNS})
    return buf.getvalue()


def summary_to_json(rows: Sequence[dict]) -> str:
    return json.dumps(
        {"tool_version": __version__, "schema_version": RECORD_SCHEMA_VERSION, "rows": list(rows)},
        indent=2,
    )


def format_table(rows: Sequence[dict]) -> str:
    header = f"{'System':<20}{'Mode':<6}{'Prec':>6}{'Rec':>6}{'Des':>6}{'Blank':>6}{'Read':>6}{'Align':>6}{'Steps':>8}{'s':>6}{'DQS':>6}"
    lines = [header, "-" * len(header)]
    for r in rows:
        dq = f"{r['dqs']:.2f}" if r["dqs"] is not None else "-"
        lines.append(
            f"{r['system']:<20}{r['mode']:<6}{r['precision']:>6.2f}{r['recall']:>6.2f}{r['design']:>6.2f}"
            f"{r['blank']:>6.2f}{r['readability']:>6.2f}{r['align']:>6.2f}{r['steps']:>8.2f}{r['score']:>6.2f}{dq:>6}"
        )
    return "\n".join(lines)
