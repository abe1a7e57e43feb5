"""Corpus ledger and seasonal lifecycle: stage, pre-commit cohorts, advance.

On-disk layout under a registry root::

    registry.json          {"schema_version", "tool_version", "current_season"}
    items.jsonl            one CorpusItem per line, append-only
    seasons/<id>.json      one file per season; archived seasons are never rewritten

All writes go to a temporary file first and are moved into place with
``os.replace``.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .errors import (
    DuplicateId,
    ImmutableCohort,
    InsufficientCorpus,
    InvalidCohortSize,
    SeasonIncomplete,
)
from .sampler import MAX_COHORT, MIN_COHORT, CohortResult, sample_cohort
from .scoring import MODES, SeasonParams

REGISTRY_SCHEMA_VERSION = 1
DEFAULT_SPLIT = {"T2I": 15, "TI2I": 15}


@dataclass(frozen=True)
class CorpusItem:
    id: str
    mode: str
    element_count: int
    description: str = ""
    reference_image: str | None = None
    required_text: frozenset[str] = frozenset()
    license_url: str = ""
    added_at: dt.date = field(default_factory=dt.date.today)

    def __post_init__(self):
        if not self.id:
            raise ValueError("item id must be non-empty")
        if self.mode not in MODES:
            raise ValueError(f"item {self.id}: mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.element_count, bool) or not isinstance(self.element_count, int) or self.element_count < 1:
            raise ValueError(f"item {self.id}: element_count must be an integer >= 1")
        if self.mode == "TI2I" and not self.reference_image:
            raise ValueError(f"item {self.id}: TI2I items need a reference_image")
        if self.mode == "T2I" and self.reference_image:
            raise ValueError(f"item {self.id}: T2I items must not carry a reference_image")
        object.__setattr__(self, "required_text", frozenset(self.required_text))
        if isinstance(self.added_at, str):
            object.__setattr__(self, "added_at", dt.date.fromisoformat(self.added_at))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "mode": self.mode,
            "element_count": self.element_count,
            "description": self.description,
            "reference_image": self.reference_image,
            "required_text": sorted(self.required_text),
            "license_url": self.license_url,
            "added_at": self.added_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusItem":
        known = {"id", "mode", "element_count", "description", "reference_image", "required_text", "license_url", "added_at"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown item fields: {sorted(unknown)}")
        if "id" not in d or "mode" not in d or "element_count" not in d:
            raise ValueError("item needs id, mode and element_count")
        return cls(**dict(d))


def _month_key(month: int) -> str:
    return f"{month:02d}"


@dataclass(frozen=True)
class Season:
    season_id: str
    active_pool: tuple[str, ...] = ()
    staging_pool: tuple[str, ...] = ()
    committed_cohorts: Mapping[str, Mapping[str, CohortResult]] = field(default_factory=dict)
    params: Mapping[str, SeasonParams] = field(default_factory=dict)
    master_seed: int = 0
    months: int = 12

    def __post_init__(self):
        object.__setattr__(self, "active_pool", tuple(self.active_pool))
        object.__setattr__(self, "staging_pool", tuple(self.staging_pool))
        overlap = set(self.active_pool) & set(self.staging_pool)
        if overlap:
            raise ValueError(f"items in both active and staging pools: {sorted(overlap)[:5]}")

    def is_complete(self) -> bool:
        return all(_month_key(m) in self.committed_cohorts for m in range(1, self.months + 1))

    def to_dict(self) -> dict:
        return {
            "schema_version": REGISTRY_SCHEMA_VERSION,
            "tool_version": __version__,
            "season_id": self.season_id,
            "master_seed": self.master_seed,
            "months": self.months,
            "active_pool": list(self.active_pool),
            "staging_pool": list(self.staging_pool),
            "committed_cohorts": {
                month: {mode: c.to_dict() for mode, c in sorted(by_mode.items())}
                for month, by_mode in sorted(self.committed_cohorts.items())
            },
            "params": {mode: p.to_dict() for mode, p in sorted(self.params.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Season":
        if d.get("schema_version") != REGISTRY_SCHEMA_VERSION:
            raise ValueError(f"unsupported season schema_version {d.get('schema_version')!r}")
        return cls(
            season_id=d["season_id"],
            active_pool=tuple(d["active_pool"]),
            staging_pool=tuple(d["staging_pool"]),
            committed_cohorts={
                month: {mode: CohortResult.from_dict(c) for mode, c in by_mode.items()}
                for month, by_mode in d["committed_cohorts"].items()
            },
            params={mode: SeasonParams.from_dict(p) for mode, p in d.get("params", {}).items()},
            master_seed=d["master_seed"],
            months=d.get("months", 12),
        )


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 63-bit seed from a master seed and labels."""
    h = hashlib.sha256(str(master_seed).encode())
    for part in parts:
        h.update(b"\x00" + str(part).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1


def next_season_id(season_id: str) -> str:
    m = re.match(r"^(.*?)(\d+)$", season_id)
    if m:
        return f"{m.group(1)}{int(m.group(2)) + 1}"
    return f"{season_id}-2"


def stage_items(season: Season, items: Sequence[CorpusItem], known_ids: Iterable[str] = ()) -> Season:
    """Append new items to the staging pool; the active pool is untouched."""
    present = set(season.active_pool) | set(season.staging_pool) | set(known_ids)
    batch = set()
    for item in items:
        if item.id in present or item.id in batch:
            raise DuplicateId(item.id)
        batch.add(item.id)
    return replace(season, staging_pool=season.staging_pool + tuple(i.id for i in items))


def advance_season(season: Season, new_season_id: str | None = None, months: int = 12) -> Season:
    """Open the next season with the staged items merged into the active pool."""
    if not season.is_complete():
        missing = [m for m in range(1, season.months + 1) if _month_key(m) not in season.committed_cohorts]
        raise SeasonIncomplete(f"season {season.season_id} lacks cohorts for months {missing}")
    active = season.active_pool + tuple(i for i in season.staging_pool if i not in set(season.active_pool))
    return Season(
        season_id=new_season_id or next_season_id(season.season_id),
        active_pool=active,
        staging_pool=(),
        committed_cohorts={},
        params={},
        master_seed=derive_seed(season.master_seed, "advance"),
        months=months,
    )


def precommit_cohorts(
    season: Season,
    catalog: Mapping[str, CorpusItem],
    months: int | None = None,
    n_per_month: int = 30,
    split: Mapping[str, int] | None = None,
) -> Season:
    """Draw one cohort per mode for every month of the season.

    Seeds derive from ``(master_seed, month, mode)`` so re-running is
    idempotent. Already committed months must come out identical.
    """
    months = season.months if months is None else months
    split = dict(split or DEFAULT_SPLIT)
    if sum(split.values()) != n_per_month:
        raise InvalidCohortSize(f"split {split} does not add up to {n_per_month}")
    for mode, k in split.items():
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if not MIN_COHORT <= k <= MAX_COHORT:
            raise InvalidCohortSize(f"{mode} cohort size {k} outside [{MIN_COHORT}, {MAX_COHORT}]")
    pools = {}
    for mode, k in split.items():
        pool = [(i, catalog[i].element_count) for i in season.active_pool if catalog[i].mode == mode]
        if len(pool) < k:
            raise InsufficientCorpus(f"{mode} pool has {len(pool)} items, monthly cohort needs {k}")
        pools[mode] = pool

    committed = {m: dict(c) for m, c in season.committed_cohorts.items()}
    for month in range(1, months + 1):
        key = _month_key(month)
        drawn = {
            mode: sample_cohort(pools[mode], k, mode, derive_seed(season.master_seed, key, mode))
            for mode, k in sorted(split.items())
        }
        if key in committed:
            if committed[key] != drawn:
                raise ImmutableCohort(f"month {key} is already committed with different cohorts")
            continue
        committed[key] = drawn
    return replace(season, committed_cohorts=committed, months=max(season.months, months))


# --------------------------------------------------------------------------
# persistence


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class Registry:
    """File-backed registry. Single writer; readers may run concurrently."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    @property
    def meta_path(self) -> Path:
        return self.root / "registry.json"

    @property
    def ledger_path(self) -> Path:
        return self.root / "items.jsonl"

    def season_path(self, season_id: str) -> Path:
        return self.root / "seasons" / f"{season_id}.json"

    def exists(self) -> bool:
        return self.meta_path.exists()

    @classmethod
    def init(cls, root: Path | str, season_id: str = "S0", master_seed: int = 0, months: int = 0) -> "Registry":
        """Create an empty registry whose first season has no cohorts to commit."""
        reg = cls(root)
        if reg.exists():
            raise FileExistsError(f"registry already exists at {reg.root}")
        reg.root.mkdir(parents=True, exist_ok=True)
        reg.ledger_path.touch()
        reg.save_season(Season(season_id, master_seed=master_seed, months=months))
        reg._set_current(season_id)
        return reg

    def _set_current(self, season_id: str) -> None:
        meta = {
            "schema_version": REGISTRY_SCHEMA_VERSION,
            "tool_version": __version__,
            "current_season": season_id,
        }
        _atomic_write(self.meta_path, json.dumps(meta, sort_keys=True, indent=1) + "\n")

    def current_season_id(self) -> str:
        meta = json.loads(self.meta_path.read_text(encoding="utf-8"))
        if meta.get("schema_version") != REGISTRY_SCHEMA_VERSION:
            raise ValueError(f"unsupported registry schema_version {meta.get('schema_version')!r}")
        return meta["current_season"]

    def load_season(self, season_id: str | None = None) -> Season:
        sid = season_id or self.current_season_id()
        return Season.from_dict(json.loads(self.season_path(sid).read_text(encoding="utf-8")))

    def save_season(self, season: Season) -> None:
        _atomic_write(self.season_path(season.season_id), season.to_json() + "\n")

    def items(self) -> dict[str, CorpusItem]:
        out = {}
        if not self.ledger_path.exists():
            return out
        for line in self.ledger_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                item = CorpusItem.from_dict(json.loads(line))
                out[item.id] = item
        return out

    def _append_items(self, items: Sequence[CorpusItem]) -> None:
        existing = self.ledger_path.read_text(encoding="utf-8") if self.ledger_path.exists() else ""
        if existing and not existing.endswith("\n"):
            existing += "\n"
        lines = "".join(json.dumps(i.to_dict(), sort_keys=True) + "\n" for i in items)
        _atomic_write(self.ledger_path, existing + lines)

    def stage(self, items: Sequence[CorpusItem]) -> Season:
        season = self.load_season()
        staged = stage_items(season, items, known_ids=self.items().keys())
        self._append_items(items)
        self.save_season(staged)
        return staged

    def precommit(self, **kwargs) -> Season:
        season = precommit_cohorts(self.load_season(), self.items(), **kwargs)
        self.save_season(season)
        return season

    def set_params(self, params: Mapping[str, SeasonParams]) -> Season:
        season = self.load_season()
        merged = dict(season.params)
        for mode, p in params.items():
            if mode in merged and merged[mode].frozen and merged[mode] != p:
                raise ImmutableCohort(f"season params for {mode} are already frozen")
            merged[mode] = p
        season = replace(season, params=merged)
        self.save_season(season)
        return season

    def advance(self, new_season_id: str | None = None, months: int = 12) -> Season:
        new = advance_season(self.load_season(), new_season_id, months)
        if self.season_path(new.season_id).exists():
            raise FileExistsError(f"season {new.season_id} already exists")
        self.save_season(new)
        self._set_current(new.season_id)
        return new

    def corpus(self, mode: str) -> list[tuple[str, int]]:
        """(id, element_count) for the current season's active items of ``mode``."""
        catalog = self.items()
        return [(i, catalog[i].element_count) for i in self.load_season().active_pool if catalog[i].mode == mode]
