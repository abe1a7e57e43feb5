"""Design-error and readability metrics, deterministic mode.

The detectors below stand in for a vision-language judge so the metric
suite runs offline. Judge-backed design counting lives in
:mod:`diagrameval.judge`.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .document import (
    LINEAR_KINDS,
    BBox,
    DiagramElement,
    RasterGrid,
    VectorDocument,
    luminance,
    normalize_text,
    text_extent,
    text_region,
)
from .errors import NegativeCount

ERROR_KINDS = ("overlap", "off_canvas", "text_overflow", "duplicate", "dangling_connector")

OVERLAP_RATIO = 0.02
SNAP_DISTANCE = 5.0
MIN_FONT_PX = 6.0
MIN_CONTRAST = 64.0
MAX_OCCLUSION = 0.30
_EPS = 1e-9


@dataclass(frozen=True)
class DesignError:
    kind: str
    element_ids: tuple[str, ...]
    detail: str = ""


@dataclass(frozen=True)
class ErrorReport:
    errors: tuple[DesignError, ...]
    count_e: float
    mode: str = "deterministic"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "count_e": self.count_e,
            "errors": [
                {"kind": e.kind, "element_ids": list(e.element_ids), "detail": e.detail}
                for e in self.errors
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def is_opaque_fill(el: DiagramElement) -> bool:
    return el.kind not in LINEAR_KINDS and el.fill is not None and el.fill.opacity >= 1.0


def _linked(a: DiagramElement, b: DiagramElement) -> bool:
    # text placed into a container by reference is intended to overlap it
    return (a.text is not None and a.text.container_id == b.id) or (
        b.text is not None and b.text.container_id == a.id
    )


def _overlaps(doc: VectorDocument, ratio: float) -> list[DesignError]:
    shapes = sorted((el for el in doc.elements if is_opaque_fill(el)), key=lambda el: el.bbox.x)
    found = []
    for i, a in enumerate(shapes):
        for b in shapes[i + 1 :]:
            if b.bbox.x >= a.bbox.x1:
                break
            inter = a.bbox.intersection_area(b.bbox)
            if inter > ratio * min(a.bbox.area, b.bbox.area) and not _linked(a, b):
                found.append(
                    DesignError("overlap", tuple(sorted((a.id, b.id))), f"area={inter:.6g}")
                )
    return found


def _off_canvas(doc: VectorDocument) -> list[DesignError]:
    w, h = doc.canvas_width, doc.canvas_height
    return [
        DesignError("off_canvas", (el.id,))
        for el in doc.elements
        if el.bbox.x < -_EPS or el.bbox.y < -_EPS or el.bbox.x1 > w + _EPS or el.bbox.y1 > h + _EPS
    ]


def _text_overflow(doc: VectorDocument) -> list[DesignError]:
    found = []
    for el in doc.elements:
        if el.text is None:
            continue
        container = el
        if el.text.container_id is not None:
            container = doc.get(el.text.container_id) or el
        tw, th = text_extent(el.text)
        if tw > container.bbox.w + _EPS or th > container.bbox.h + _EPS:
            ids = (el.id,) if container is el else (el.id, container.id)
            found.append(DesignError("text_overflow", ids, f"extent={tw:.4g}x{th:.4g}"))
    return found


def _duplicates(doc: VectorDocument) -> list[DesignError]:
    groups = defaultdict(list)
    for el in doc.elements:
        key = (el.kind, tuple(el.bbox.as_list()), el.text.content if el.text else None)
        groups[key].append(el.id)
    found = []
    for ids in groups.values():
        for pair in combinations(sorted(ids), 2):
            found.append(DesignError("duplicate", pair))
    return found


def _dangling(doc: VectorDocument, snap: float) -> list[DesignError]:
    connectors = [el for el in doc.elements if el.kind == "connector"]
    if not connectors:
        return []
    boxes = np.array([[el.bbox.x, el.bbox.y, el.bbox.x1, el.bbox.y1] for el in doc.elements])
    ids = np.array([el.id for el in doc.elements], dtype=object)
    found = []
    for conn in connectors:
        others = ids != conn.id
        for label, (px, py) in zip(("start", "end"), conn.endpoints()):
            dx = np.maximum(np.maximum(boxes[:, 0] - px, 0.0), px - boxes[:, 2])
            dy = np.maximum(np.maximum(boxes[:, 1] - py, 0.0), py - boxes[:, 3])
            dist = np.hypot(dx, dy)[others]
            if dist.size == 0 or dist.min() > snap:
                found.append(DesignError("dangling_connector", (conn.id,), label))
    return found


def detect_design_errors(
    doc: VectorDocument,
    overlap_ratio: float = OVERLAP_RATIO,
    snap_distance: float = SNAP_DISTANCE,
) -> ErrorReport:
    """Count rule-based design errors in ``doc``.

    One error is reported per overlapping pair of opaque filled shapes, per
    element leaving the canvas, per text overflowing its container, per pair
    of identical elements and per connector endpoint not attached to any
    other element.
    """
    errors = (
        _overlaps(doc, overlap_ratio)
        + _off_canvas(doc)
        + _text_overflow(doc)
        + _duplicates(doc)
        + _dangling(doc, snap_distance)
    )
    errors.sort(key=lambda e: (e.kind, e.element_ids, e.detail))
    return ErrorReport(tuple(errors), float(len(errors)))


def design_score(e: float) -> float:
    if e < 0:
        raise NegativeCount(f"error count must be non-negative, got {e}")
    return 1.0 / (1.0 + 2.0 * e)


# --------------------------------------------------------------------------
# readability


@dataclass(frozen=True)
class TextCheck:
    string: str
    element_id: str
    readable: bool
    reasons: tuple[str, ...] = ()
    font_px: float = 0.0
    contrast: float = 0.0
    occlusion: float = 0.0


@dataclass(frozen=True)
class ReadabilityReport:
    readable: frozenset[str]
    per_text: tuple[TextCheck, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "readable": sorted(self.readable),
            "per_text": [asdict(c) | {"reasons": list(c.reasons)} for c in self.per_text],
        }


def _covers(el: DiagramElement, px: float, py: float) -> bool:
    if el.kind == "ellipse":
        cx, cy = el.bbox.center
        rx, ry = el.bbox.w / 2, el.bbox.h / 2
        if rx <= 0 or ry <= 0:
            return False
        return ((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2 <= 1.0
    return el.bbox.contains_point(px, py)


def union_area(rects: list[BBox]) -> float:
    """Exact area of a union of axis-aligned rectangles."""
    rects = [r for r in rects if r.w > 0 and r.h > 0]
    if not rects:
        return 0.0
    xs = sorted({r.x for r in rects} | {r.x1 for r in rects})
    total = 0.0
    for xa, xb in zip(xs, xs[1:]):
        spans = sorted((r.y, r.y1) for r in rects if r.x <= xa and r.x1 >= xb)
        covered, cur_lo, cur_hi = 0.0, None, None
        for lo, hi in spans:
            if cur_hi is None or lo > cur_hi:
                if cur_hi is not None:
                    covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        if cur_hi is not None:
            covered += cur_hi - cur_lo
        total += covered * (xb - xa)
    return total


def _clip(r: BBox, to: BBox) -> BBox | None:
    x0, y0 = max(r.x, to.x), max(r.y, to.y)
    x1, y1 = min(r.x1, to.x1), min(r.y1, to.y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return BBox(x0, y0, x1 - x0, y1 - y0)


def assess_readability(
    doc: VectorDocument,
    grid: RasterGrid,
    min_font_px: float = MIN_FONT_PX,
    min_contrast: float = MIN_CONTRAST,
    max_occlusion: float = MAX_OCCLUSION,
) -> ReadabilityReport:
    """Decide for every text in ``doc`` whether it is legible once rendered.

    A text is readable when its font is at least ``min_font_px`` on the
    raster, its color differs from the fill behind it by at least
    ``min_contrast`` luma levels, and opaque elements painted above it hide
    at most ``max_occlusion`` of its area. The backing is the composite of
    the filled elements under the text center, painted up to and including
    the text's own element, over a white canvas.
    """
    scale = min(grid.width, grid.height) / min(doc.canvas_width, doc.canvas_height)
    order = doc.paint_order()
    checks = []
    for pos, el in enumerate(order):
        if el.text is None:
            continue
        string = normalize_text(el.text.content)
        if not string:
            continue
        region = text_region(el)
        cx, cy = region.center

        backing = 255.0
        for below in order[: pos + 1]:
            if below.fill is not None and below.kind not in LINEAR_KINDS and _covers(below, cx, cy):
                a = below.fill.opacity
                backing = a * luminance(below.fill.color) + (1 - a) * backing
        contrast = abs(luminance(el.text.color) - backing)

        occlusion = 0.0
        if region.area > 0:
            covers = [_clip(above.bbox, region) for above in order[pos + 1 :] if is_opaque_fill(above)]
            occlusion = union_area([c for c in covers if c is not None]) / region.area

        font_px = el.text.font_size * scale
        reasons = []
        if font_px < min_font_px:
            reasons.append("small_font")
        if contrast < min_contrast:
            reasons.append("low_contrast")
        if occlusion > max_occlusion:
            reasons.append("occluded")
        checks.append(TextCheck(string, el.id, not reasons, tuple(reasons), font_px, contrast, occlusion))

    readable = frozenset(c.string for c in checks if c.readable)
    return ReadabilityReport(readable, tuple(checks))


def readability_score(report: ReadabilityReport, generated: frozenset[str] | set[str]) -> float:
    """Share of generated strings that are readable; 1 when nothing was generated."""
    generated = frozenset(generated)
    if not generated:
        return 1.0
    return len(report.readable & generated) / len(generated)
