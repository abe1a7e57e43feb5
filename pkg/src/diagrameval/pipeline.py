"""End-to-end evaluation of one generated diagram: document -> metrics -> record."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .content import ContentSets, precision, recall
from .document import (
    VectorDocument,
    extract_text_set,
    normalize_set,
    parse_document,
    rasterize,
    serialize_document,
)
from .errors import DiagramEvalError, MalformedInput, UnfrozenSeason
from .judge import JudgeClient, grid_overlay_png
from .layout import DEFAULT_CELL, alignment_score, blank_score, estimate_blank
from .perceptual import assess_readability, design_score, detect_design_errors, readability_score
from .registry import CorpusItem
from .scoring import (
    DEFAULT_WEIGHTS,
    RECORD_SCHEMA_VERSION,
    MetricVector,
    ScoreRecord,
    SeasonParams,
    TraceLog,
    WeightProfile,
    base_score,
    count_steps,
    dqs,
    summarize,
)

logger = logging.getLogger(__name__)

METRIC_MODES = ("deterministic", "judge")


@dataclass(frozen=True)
class EvalRequest:
    item: CorpusItem
    document: VectorDocument | bytes | str
    trace: TraceLog | None = None
    perceptual: str = "deterministic"
    blank: str = "deterministic"
    weights: WeightProfile = DEFAULT_WEIGHTS
    system: str | None = None
    document_format: str = "manifest-json"
    raster_short_side: int = 1024

    def __post_init__(self):
        for name in ("perceptual", "blank"):
            if getattr(self, name) not in METRIC_MODES:
                raise ValueError(f"{name} mode must be one of {METRIC_MODES}")
        if self.trace is not None and self.trace.task_id not in (None, self.item.id):
            raise MalformedInput(f"trace belongs to task {self.trace.task_id!r}, not {self.item.id!r}")

    def resolve_document(self) -> VectorDocument:
        if isinstance(self.document, VectorDocument):
            return self.document
        return parse_document(self.document, self.document_format)


def _needs_judge(req: EvalRequest) -> bool:
    return "judge" in (req.perceptual, req.blank)


def evaluate(req: EvalRequest, season: SeasonParams, judge: JudgeClient | None = None) -> ScoreRecord:
    """Measure all six metrics, count steps and score one task.

    Judge failures propagate; there is no fallback to the deterministic path.
    """
    if not season.frozen:
        raise UnfrozenSeason("season params must be frozen before scoring")
    if _needs_judge(req) and judge is None:
        raise ValueError("judge mode requested but no judge client given")
    doc = req.resolve_document()
    grid = rasterize(doc, req.raster_short_side)
    prov: dict = {
        "document_sha256": hashlib.sha256(serialize_document(doc)).hexdigest(),
        "raster": [grid.width, grid.height],
        "weights": req.weights.as_dict(),
    }

    required = normalize_set(req.item.required_text)
    generated = extract_text_set(doc)
    sets = ContentSets(required, generated)

    if req.perceptual == "judge":
        verdict = judge.design_errors(grid)
        e = verdict.mean_count
        prov["design"] = {"mode": "judge", "runs": verdict.runs_used, "discarded": verdict.discarded,
                          "cached": verdict.cached, "counts": list(verdict.parsed_counts)}
    else:
        report = detect_design_errors(doc)
        e = report.count_e
        prov["design"] = {"mode": "deterministic", "errors": report.to_dict()["errors"]}

    if req.blank == "judge":
        verdict = judge.blank_ratio(grid_overlay_png(grid, DEFAULT_CELL))
        beta = verdict.mean_count
        prov["blank"] = {"mode": "judge", "runs": verdict.runs_used, "discarded": verdict.discarded,
                         "cached": verdict.cached, "ratios": list(verdict.parsed_counts)}
    else:
        est = estimate_blank(grid)
        beta = est.beta
        prov["blank"] = {"mode": "deterministic", "cells_total": est.cells_total, "cells_blank": est.cells_blank}

    readable = assess_readability(doc, grid)
    prov["readability"] = {"mode": "deterministic", "unreadable": sorted(
        c.string for c in readable.per_text if not c.readable)}

    metrics = MetricVector(
        precision=precision(sets),
        recall=recall(sets),
        design=design_score(e),
        blank=blank_score(beta),
        readability=readability_score(readable, generated),
        align=alignment_score(grid),
    )

    if req.trace is None:
        logger.warning("task %s: no interaction trace, scoring with n=0", req.item.id)
        n = 0
        prov["trace"] = "missing"
    else:
        n = count_steps(req.trace)
        prov["trace"] = {"entries": len(req.trace.entries)}

    s = base_score(metrics, req.weights)
    return ScoreRecord(
        task_id=req.item.id,
        mode=req.item.mode,
        metrics=metrics,
        n=n,
        s=s,
        dqs=dqs(s, n, season),
        system=req.system,
        weights_id=req.weights.profile_id,
        season_id=season.season_id,
        provenance=prov,
    )


@dataclass(frozen=True)
class BatchError:
    index: int
    task_id: str
    error_type: str
    message: str

    def to_dict(self) -> dict:
        return {"index": self.index, "task_id": self.task_id, "error_type": self.error_type, "message": self.message}


@dataclass(frozen=True)
class BatchResult:
    records: tuple[ScoreRecord, ...]
    errors: tuple[BatchError, ...] = ()
    summary: list = field(default_factory=list)


def evaluate_batch(
    requests: Sequence[EvalRequest],
    season: SeasonParams | dict[str, SeasonParams],
    judge: JudgeClient | None = None,
    workers: int = 1,
) -> BatchResult:
    """Evaluate every request, keeping input order and collecting per-item errors.

    ``season`` may be a single parameter set or one per mode.
    """

    def params_for(req):
        return season[req.item.mode] if isinstance(season, dict) else season

    def run(i_req):
        i, req = i_req
        try:
            return evaluate(req, params_for(req), judge), None
        except (DiagramEvalError, ValueError, KeyError) as exc:
            return None, BatchError(i, req.item.id, type(exc).__name__, str(exc))

    indexed = list(enumerate(requests))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, indexed))
    else:
        outcomes = [run(x) for x in indexed]
    records = tuple(rec for rec, _ in outcomes if rec is not None)
    errors = tuple(err for _, err in outcomes if err is not None)
    return BatchResult(records, errors, summarize(records))


_write_lock = threading.Lock()


def write_records_jsonl(records: Sequence[ScoreRecord], path: Path | str, append: bool = False) -> None:
    with _write_lock, open(path, "a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records_jsonl(path: Path | str) -> list[ScoreRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            out.append(ScoreRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedInput(f"{path}:{lineno}: {exc}") from exc
    return out


def records_from_metrics(rows: Sequence[dict], weights: WeightProfile = DEFAULT_WEIGHTS,
                         season: SeasonParams | None = None) -> list[ScoreRecord]:
    """Build records from already measured metrics, e.g. published per-system means."""
    out = []
    for row in rows:
        metrics = MetricVector.from_mapping({k: row[k] for k in MetricVector.__dataclass_fields__})
        s = base_score(metrics, weights)
        n = float(row.get("steps", row.get("n", 0.0)))
        out.append(
            ScoreRecord(
                task_id=str(row.get("task_id", row.get("system", ""))),
                mode=row["mode"],
                metrics=metrics,
                n=n,
                s=s,
                dqs=dqs(s, n, season) if season is not None else None,
                system=row.get("system"),
                weights_id=weights.profile_id,
                season_id=season.season_id if season is not None else "",
                provenance={"metrics": "given"},
            )
        )
    return out


def file_header() -> str:
    return f"# diagrameval {__version__} schema {RECORD_SCHEMA_VERSION}"
