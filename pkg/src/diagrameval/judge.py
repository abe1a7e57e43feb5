"""Client for external vision-language judges with an on-disk response cache.

Each query sends one PNG plus a fixed instruction to a chat-completion style
endpoint ``cfg.runs`` times and averages the parsed answers. Responses are
cached per (image digest, model, instruction) so a warm cache makes scoring
fully offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import statistics
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .document import RasterGrid, overlay_grid
from .errors import JudgeUnreachable, UnparseableVerdict

logger = logging.getLogger(__name__)

DESIGN_INSTRUCTION = (
    "You need to observe this picture carefully. This is a scientific research drawing. "
    "How many unreasonable aspects do you think there are in this image? Unreasonable aspects "
    "refer to: position conflicts or mismatches of modules; text content and module size "
    "conflicts resulting in text going out of range or unexpected line breaks; redundant or "
    "repetitive designs in the image. For each unreasonable aspect you find, you need to "
    "provide some analysis, in the format like: Module 1: The position conflicts with Module 2, "
    "causing overlap... When finding problems, you must be strict and try to find as many "
    "design errors as possible. But at the same time, each problem must be well - founded. At "
    "the end, you need to output only one number representing the number of errors. Make a "
    "line break from the previous content. Write only one integer on a separate line at the "
    "end to represent the total number of errors."
)

BLANK_INSTRUCTION = (
    "This is a scientific research drawing with a regular grid overlaid on it. Estimate the "
    "ratio of invalid blank space: large, meaningless gaps between visual elements, not the "
    "normal spacing inside modules and not the outer margins. Count grid cells inside the "
    "region occupied by the drawing. Briefly explain your estimate, then write only the ratio "
    "as a decimal number between 0 and 1 on a separate line at the end."
)

_INT_LINE = re.compile(r"^\**\s*(\d+)\s*\**$")
_RATIO_LINE = re.compile(r"^\**\s*(\d*\.?\d+)\s*(%?)\s*\**$")

Transport = Callable[[str, dict, dict, float], dict]


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: str
    model_name: str
    temperature: float = 0.0
    runs: int = 3
    cache_dir: Path = Path(".judge-cache")
    timeout: float = 60.0
    api_key: str | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "cache_dir", Path(self.cache_dir))

    @classmethod
    def from_env(cls, cache_dir: Path | str = ".judge-cache", **overrides) -> "JudgeConfig":
        """Build a config from JUDGE_ENDPOINT, JUDGE_MODEL and JUDGE_API_KEY."""
        values = {
            "endpoint": os.environ.get("JUDGE_ENDPOINT", ""),
            "model_name": os.environ.get("JUDGE_MODEL", ""),
            "api_key": os.environ.get("JUDGE_API_KEY"),
            "cache_dir": cache_dir,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class JudgeVerdict:
    raw_responses: tuple[str, ...]
    parsed_counts: tuple[float, ...]
    mean_count: float
    cached: bool = False
    discarded: int = 0

    @property
    def runs_used(self) -> int:
        return len(self.parsed_counts)


class Adapter(Protocol):
    def build_request(self, instruction: str, png: bytes, cfg: JudgeConfig) -> tuple[dict, dict]: ...

    def parse_response(self, body: dict) -> str: ...


class ChatCompletionAdapter:
    """Generic chat-completion request shape with an inline data-URL image."""

    def build_request(self, instruction: str, png: bytes, cfg: JudgeConfig) -> tuple[dict, dict]:
        image_url = "data:image/png;base64," + base64.b64encode(png).decode("ascii")
        payload = {
            "model": cfg.model_name,
            "temperature": cfg.temperature,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": instruction},
                        {"type": "image_url", "image_url": {"url": image_url}},
                    ],
                }
            ],
        }
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        return payload, headers

    def parse_response(self, body: dict) -> str:
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise UnparseableVerdict(f"unexpected response shape: {str(body)[:200]}") from exc
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
        return str(content)


def http_transport(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import httpx

    try:
        resp = httpx.post(url, json=payload, headers=headers, timeout=timeout)
        resp.raise_for_status()
        return resp.json()
    except (httpx.HTTPError, ValueError) as exc:
        raise JudgeUnreachable(f"{url}: {exc}") from exc


def _last_line(text: str) -> str:
    lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
    return lines[-1] if lines else ""


def parse_count(text: str) -> int:
    """Integer on the final non-empty line of a judge response."""
    m = _INT_LINE.match(_last_line(text))
    if not m:
        raise UnparseableVerdict(f"no trailing integer line in response: {text[-120:]!r}")
    return int(m.group(1))


def parse_ratio(text: str) -> float:
    m = _RATIO_LINE.match(_last_line(text))
    if not m:
        raise UnparseableVerdict(f"no trailing ratio line in response: {text[-120:]!r}")
    value = float(m.group(1)) / (100.0 if m.group(2) else 1.0)
    if not 0.0 <= value <= 1.0:
        raise UnparseableVerdict(f"ratio {value} outside [0, 1]")
    return value


def cache_key(image_digest: str, model_name: str, instruction: str) -> str:
    h = hashlib.sha256()
    for part in (image_digest, model_name, instruction):
        data = part.encode("utf-8")
        h.update(len(data).to_bytes(8, "big"))
        h.update(data)
    return h.hexdigest()


class JudgeClient:
    """Queries a judge endpoint, caching raw responses on disk.

    ``transport`` is any callable ``(url, payload, headers, timeout) -> dict``;
    the default posts JSON over HTTP. Duplicate in-flight requests for the
    same cache key are serialized so only one reaches the network.
    """

    def __init__(self, cfg: JudgeConfig, transport: Transport | None = None, adapter: Adapter | None = None):
        self.cfg = cfg
        self.transport = transport or http_transport
        self.adapter = adapter or ChatCompletionAdapter()
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def _cache_path(self, key: str) -> Path:
        return self.cfg.cache_dir / f"{key}.json"

    def _read_cache(self, key: str) -> dict | None:
        path = self._cache_path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            logger.warning("ignoring unreadable cache entry %s", path)
            return None

    def _write_cache(self, key: str, entry: dict) -> None:
        self.cfg.cache_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.cfg.cache_dir, prefix=".tmp-", suffix=".json")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, sort_keys=True, indent=1)
        os.replace(tmp, self._cache_path(key))

    def raw_responses(self, instruction: str, png: bytes) -> tuple[list[str], bool]:
        """Run the judge ``cfg.runs`` times, or return the cached responses."""
        digest = hashlib.sha256(png).hexdigest()
        key = cache_key(digest, self.cfg.model_name, instruction)
        with self._lock_for(key):
            entry = self._read_cache(key)
            if entry is not None and len(entry["responses"]) >= self.cfg.runs:
                return entry["responses"][: self.cfg.runs], True
            if not self.cfg.endpoint:
                raise JudgeUnreachable("no judge endpoint configured and no cached response")
            payload, headers = self.adapter.build_request(instruction, png, self.cfg)
            responses, stamps = [], []
            for _ in range(self.cfg.runs):
                try:
                    body = self.transport(self.cfg.endpoint, payload, headers, self.cfg.timeout)
                except JudgeUnreachable:
                    raise
                except Exception as exc:
                    raise JudgeUnreachable(f"{self.cfg.endpoint}: {exc}") from exc
                responses.append(self.adapter.parse_response(body))
                stamps.append(time.time())
            self._write_cache(
                key,
                {
                    "image_sha256": digest,
                    "model_name": self.cfg.model_name,
                    "instruction_sha256": hashlib.sha256(instruction.encode("utf-8")).hexdigest(),
                    "temperature": self.cfg.temperature,
                    "responses": responses,
                    "timestamps": stamps,
                },
            )
            return responses, False

    def _verdict(self, instruction: str, png: bytes, parse) -> JudgeVerdict:
        responses, cached = self.raw_responses(instruction, png)
        values = []
        for text in responses:
            try:
                values.append(parse(text))
            except UnparseableVerdict as exc:
                logger.warning("discarding judge run: %s", exc)
        if not values:
            raise UnparseableVerdict(f"all {len(responses)} judge runs were unparseable")
        return JudgeVerdict(
            tuple(responses),
            tuple(values),
            statistics.fmean(values),
            cached=cached,
            discarded=len(responses) - len(values),
        )

    def design_errors(self, image: bytes | RasterGrid) -> JudgeVerdict:
        png = image.to_png() if isinstance(image, RasterGrid) else image
        return self._verdict(DESIGN_INSTRUCTION, png, parse_count)

    def blank_ratio(self, image_with_grid: bytes | RasterGrid) -> JudgeVerdict:
        png = image_with_grid.to_png() if isinstance(image_with_grid, RasterGrid) else image_with_grid
        return self._verdict(BLANK_INSTRUCTION, png, parse_ratio)


def judge_design_errors(image: bytes | RasterGrid, cfg: JudgeConfig, transport: Transport | None = None) -> JudgeVerdict:
    return JudgeClient(cfg, transport).design_errors(image)


def judge_blank_ratio(image_with_grid: bytes | RasterGrid, cfg: JudgeConfig, transport: Transport | None = None) -> float:
    return JudgeClient(cfg, transport).blank_ratio(image_with_grid).mean_count


def grid_overlay_png(grid: RasterGrid, cell: int = 128) -> bytes:
    return overlay_grid(grid, cell).to_png()
