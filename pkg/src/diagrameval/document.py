"""Diagram object model, input parsers, text extraction and rasterization.

Two input formats carry the same object model:

* ``manifest-json`` -- the canonical JSON manifest::

      {"canvas": {"w": 800, "h": 600},
       "source_id": "optional",
       "elements": [{"id": "a", "kind": "rect", "bbox": [x, y, w, h],
                     "fill": {"color": "#ffffff", "opacity": 1.0},
                     "stroke": {"color": "#000000", "width": 1.0},
                     "text": {"content": "Encoder", "font_size": 12,
                              "color": "#000000", "container_id": "b"},
                     "points": [[x, y], ...],
                     "z": 0}]}

* ``svg-subset`` -- ``rect``, ``ellipse``, ``line``, ``polyline`` and ``text``
  elements, with ``g`` groups flattened (translate transforms and inherited
  presentation attributes only). Anything else raises ``UnsupportedFeature``.

Document units are treated as points: a font size of 12 means 12 document
units tall before scaling to the raster.
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from PIL import Image, ImageColor

from .errors import (
    DegenerateCanvas,
    EmptyDocument,
    MalformedInput,
    UnsupportedFeature,
)

SCHEMA_VERSION = 1
ELEMENT_KINDS = ("rect", "ellipse", "line", "polyline", "connector", "text-box")
LINEAR_KINDS = ("line", "polyline", "connector")
FORMATS = ("manifest-json", "svg-subset")

# glyph box estimate used wherever text extent matters
GLYPH_ASPECT = 0.6
LINE_HEIGHT = 1.2
TEXT_GRAY = 128


def parse_color(value: str) -> str:
    """Return ``value`` as a lowercase ``#rrggbb`` string."""
    try:
        rgb = ImageColor.getrgb(value.strip())
    except (ValueError, AttributeError) as exc:
        raise MalformedInput(f"bad color {value!r}") from exc
    return "#{:02x}{:02x}{:02x}".format(*rgb[:3])


def luminance(color: str) -> float:
    """Rec. 601 luma of a ``#rrggbb`` color on the 0-255 scale."""
    r, g, b = (int(color[i : i + 2], 16) for i in (1, 3, 5))
    return 0.299 * r + 0.587 * g + 0.114 * b


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.w < 0 or self.h < 0:
            raise MalformedInput(f"negative bbox size: {self}")

    @property
    def x1(self) -> float:
        return self.x + self.w

    @property
    def y1(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def intersection_area(self, other: "BBox") -> float:
        dx = min(self.x1, other.x1) - max(self.x, other.x)
        dy = min(self.y1, other.y1) - max(self.y, other.y)
        if dx <= 0 or dy <= 0:
            return 0.0
        return dx * dy

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x1 and self.y <= py <= self.y1

    def distance_to(self, px: float, py: float) -> float:
        dx = max(self.x - px, 0.0, px - self.x1)
        dy = max(self.y - py, 0.0, py - self.y1)
        return math.hypot(dx, dy)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Fill:
    color: str
    opacity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "opacity", float(self.opacity))
        if not 0.0 <= self.opacity <= 1.0:
            raise MalformedInput(f"opacity {self.opacity} outside [0, 1]")


@dataclass(frozen=True)
class Stroke:
    color: str
    width: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "width", float(self.width))
        if self.width < 0:
            raise MalformedInput(f"negative stroke width {self.width}")


@dataclass(frozen=True)
class TextPayload:
    content: str
    font_size: float
    color: str = "#000000"
    container_id: str | None = None

    def __post_init__(self):
        if not self.content.strip():
            raise MalformedInput("text content is empty")
        object.__setattr__(self, "font_size", float(self.font_size))
        if self.font_size <= 0:
            raise MalformedInput(f"font size must be positive, got {self.font_size}")


@dataclass(frozen=True)
class DiagramElement:
    id: str
    kind: str
    bbox: BBox
    fill: Fill | None = None
    stroke: Stroke | None = None
    text: TextPayload | None = None
    z_order: int = 0
    points: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in ELEMENT_KINDS:
            raise MalformedInput(f"unknown element kind {self.kind!r}")
        if self.points is not None:
            pts = tuple((float(px), float(py)) for px, py in self.points)
            object.__setattr__(self, "points", pts)

    def endpoints(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """First and last point of a linear element."""
        if self.points:
            return self.points[0], self.points[-1]
        b = self.bbox
        return (b.x, b.y), (b.x1, b.y1)

    def path(self) -> tuple[tuple[float, float], ...]:
        if self.points:
            return self.points
        return self.endpoints()


@dataclass(frozen=True)
class VectorDocument:
    canvas_width: float
    canvas_height: float
    elements: tuple[DiagramElement, ...] = field(default_factory=tuple)
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "canvas_width", float(self.canvas_width))
        object.__setattr__(self, "canvas_height", float(self.canvas_height))
        if not (self.canvas_width > 0 and self.canvas_height > 0):
            raise DegenerateCanvas(
                f"canvas must have positive size, got {self.canvas_width}x{self.canvas_height}"
            )
        seen = set()
        for el in self.elements:
            if el.id in seen:
                raise MalformedInput(f"duplicate element id {el.id!r}")
            seen.add(el.id)

    def element_count(self) -> int:
        return len(self.elements)

    def get(self, element_id: str) -> DiagramElement | None:
        for el in self.elements:
            if el.id == element_id:
                return el
        return None

    def paint_order(self) -> list[DiagramElement]:
        """Elements bottom to top: by z, then by document order."""
        indexed = sorted(enumerate(self.elements), key=lambda p: (p[1].z_order, p[0]))
        return [el for _, el in indexed]


def text_extent(payload: TextPayload) -> tuple[float, float]:
    """Estimated (width, height) of a text payload in document units."""
    lines = payload.content.strip().splitlines() or [""]
    chars = max(len(line.strip()) for line in lines)
    return (
        GLYPH_ASPECT * payload.font_size * chars,
        LINE_HEIGHT * payload.font_size * len(lines),
    )


def text_region(el: DiagramElement) -> BBox | None:
    """Area where an element's text is drawn.

    A text-box draws into its own bbox. Text carried by a shape is centered
    in the shape's bbox at its estimated extent, clipped to the shape.
    """
    if el.text is None:
        return None
    if el.kind == "text-box":
        return el.bbox
    tw, th = text_extent(el.text)
    tw, th = min(tw, el.bbox.w), min(th, el.bbox.h)
    cx, cy = el.bbox.center
    return BBox(cx - tw / 2, cy - th / 2, tw, th)


# --------------------------------------------------------------------------
# manifest JSON


def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedInput(f"{where}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise MalformedInput(f"{where}: non-finite number")
    return float(value)


def _element_from_manifest(raw, index: int) -> DiagramElement:
    where = f"elements[{index}]"
    if not isinstance(raw, dict):
        raise MalformedInput(f"{where}: expected an object")
    try:
        el_id = raw["id"]
        kind = raw["kind"]
        bbox_raw = raw["bbox"]
    except KeyError as exc:
        raise MalformedInput(f"{where}: missing key {exc.args[0]!r}") from None
    if not isinstance(el_id, str) or not el_id:
        raise MalformedInput(f"{where}: id must be a non-empty string")
    if kind not in ELEMENT_KINDS:
        raise MalformedInput(f"{where}: unknown kind {kind!r}")
    if not isinstance(bbox_raw, list) or len(bbox_raw) != 4:
        raise MalformedInput(f"{where}: bbox must be [x, y, w, h]")
    bbox = BBox(*(_num(v, f"{where}.bbox") for v in bbox_raw))

    fill = stroke = text = None
    if raw.get("fill") is not None:
        f = raw["fill"]
        if not isinstance(f, dict) or "color" not in f:
            raise MalformedInput(f"{where}.fill: expected {{color, opacity?}}")
        fill = Fill(parse_color(f["color"]), _num(f.get("opacity", 1.0), f"{where}.fill.opacity"))
    if raw.get("stroke") is not None:
        s = raw["stroke"]
        if not isinstance(s, dict) or "color" not in s:
            raise MalformedInput(f"{where}.stroke: expected {{color, width?}}")
        stroke = Stroke(parse_color(s["color"]), _num(s.get("width", 1.0), f"{where}.stroke.width"))
    if raw.get("text") is not None:
        t = raw["text"]
        if not isinstance(t, dict) or not isinstance(t.get("content"), str):
            raise MalformedInput(f"{where}.text: expected {{content, font_size, ...}}")
        container = t.get("container_id")
        if container is not None and not isinstance(container, str):
            raise MalformedInput(f"{where}.text.container_id must be a string")
        text = TextPayload(
            t["content"],
            _num(t.get("font_size"), f"{where}.text.font_size"),
            parse_color(t.get("color", "#000000")),
            container,
        )
    z = raw.get("z", index)
    if isinstance(z, bool) or not isinstance(z, int):
        raise MalformedInput(f"{where}.z must be an integer")
    points = None
    if raw.get("points") is not None:
        pts = raw["points"]
        if not isinstance(pts, list) or len(pts) < 2:
            raise MalformedInput(f"{where}.points needs at least two points")
        if kind not in LINEAR_KINDS:
            raise MalformedInput(f"{where}.points only allowed on {LINEAR_KINDS}")
        points = tuple(
            (_num(p[0], f"{where}.points"), _num(p[1], f"{where}.points"))
            if isinstance(p, list) and len(p) == 2
            else _bad_point(where)
            for p in pts
        )
    return DiagramElement(el_id, kind, bbox, fill, stroke, text, z, points)


def _bad_point(where):
    raise MalformedInput(f"{where}.points entries must be [x, y]")


def document_from_manifest(obj) -> VectorDocument:
    if not isinstance(obj, dict):
        raise MalformedInput("manifest must be a JSON object")
    canvas = obj.get("canvas")
    if not isinstance(canvas, dict) or "w" not in canvas or "h" not in canvas:
        raise MalformedInput("manifest needs canvas {w, h}")
    w, h = _num(canvas["w"], "canvas.w"), _num(canvas["h"], "canvas.h")
    elements = obj.get("elements")
    if not isinstance(elements, list):
        raise MalformedInput("manifest needs an elements list")
    if not elements:
        raise EmptyDocument("document has no elements")
    source_id = obj.get("source_id", "")
    if not isinstance(source_id, str):
        raise MalformedInput("source_id must be a string")
    parsed = [_element_from_manifest(raw, i) for i, raw in enumerate(elements)]
    return VectorDocument(w, h, tuple(parsed), source_id)


def document_to_manifest(doc: VectorDocument) -> dict:
    """Canonical manifest dict for ``doc``: all defaults explicit."""
    elements = []
    for el in doc.elements:
        out = {"id": el.id, "kind": el.kind, "bbox": el.bbox.as_list(), "z": el.z_order}
        if el.fill is not None:
            out["fill"] = {"color": el.fill.color, "opacity": el.fill.opacity}
        if el.stroke is not None:
            out["stroke"] = {"color": el.stroke.color, "width": el.stroke.width}
        if el.text is not None:
            t = {
                "content": el.text.content,
                "font_size": el.text.font_size,
                "color": el.text.color,
            }
            if el.text.container_id is not None:
                t["container_id"] = el.text.container_id
            out["text"] = t
        if el.points is not None:
            out["points"] = [list(p) for p in el.points]
        elements.append(out)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "canvas": {"w": doc.canvas_width, "h": doc.canvas_height},
        "elements": elements,
    }
    if doc.source_id:
        manifest["source_id"] = doc.source_id
    return manifest


def serialize_document(doc: VectorDocument) -> bytes:
    return json.dumps(document_to_manifest(doc), sort_keys=True, ensure_ascii=False).encode("utf-8")


# --------------------------------------------------------------------------
# SVG subset

_SVG_IGNORED = {"title", "desc", "metadata"}
_SVG_SHAPES = {"rect", "ellipse", "line", "polyline", "text"}
_REJECT_ATTRS = ("filter", "clip-path", "mask")
_INHERITED = ("fill", "stroke", "stroke-width", "font-size", "fill-opacity", "text-anchor")
# style properties that do not affect the object model
_COSMETIC_PROPS = {
    "font-family", "font-weight", "font-style", "stroke-linecap", "stroke-linejoin",
    "stroke-dasharray", "stroke-opacity", "stroke-miterlimit",
}
_TRANSLATE = re.compile(r"^\s*translate\(\s*([-+\d.eE]+)(?:[\s,]+([-+\d.eE]+))?\s*\)\s*$")
_LENGTH = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(px)?\s*$")


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1] if "}" in tag else tag


def _length(value: str | None, default: float = 0.0) -> float:
    if value is None:
        return default
    m = _LENGTH.match(value)
    if not m:
        raise UnsupportedFeature("length unit", value)
    return float(m.group(1))


def _attrs(node: ET.Element, inherited: dict) -> dict:
    """Effective presentation attributes: inherited < attribute < style."""
    attrs = dict(inherited)
    tag = _local(node.tag)
    for name in _REJECT_ATTRS:
        if name in node.attrib:
            raise UnsupportedFeature(name)
    for key, value in node.attrib.items():
        attrs[_local(key)] = value
    style = node.attrib.get("style")
    if style:
        for decl in style.split(";"):
            if not decl.strip():
                continue
            prop, _, value = decl.partition(":")
            prop, value = prop.strip(), value.strip()
            if prop in _REJECT_ATTRS or prop in ("display", "visibility"):
                raise UnsupportedFeature(f"{prop}:{value}")
            if prop in _COSMETIC_PROPS:
                continue
            if prop not in _INHERITED and prop != "opacity":
                raise UnsupportedFeature(f"style property {prop}", tag)
            attrs[prop] = value
    return attrs


def _translate(node: ET.Element) -> tuple[float, float]:
    tf = node.attrib.get("transform")
    if tf is None:
        return (0.0, 0.0)
    m = _TRANSLATE.match(tf)
    if not m:
        raise UnsupportedFeature("transform", tf)
    return (float(m.group(1)), float(m.group(2) or 0.0))


def _paint(value: str | None) -> str | None:
    if value is None or value.strip() == "none":
        return None
    return parse_color(value)


def _opacity(attrs: dict, key: str) -> float:
    value = float(attrs.get(key, 1.0))
    return value * float(attrs.get("_group_opacity", 1.0))


def document_from_svg(data: bytes | str) -> VectorDocument:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedInput(f"invalid SVG: {exc}") from exc
    if _local(root.tag) != "svg":
        raise MalformedInput("root element must be <svg>")

    width = root.attrib.get("width")
    height = root.attrib.get("height")
    view_box = root.attrib.get("viewBox")
    vb = None
    if view_box is not None:
        try:
            vb = [float(v) for v in view_box.replace(",", " ").split()]
        except ValueError:
            raise MalformedInput(f"bad viewBox {view_box!r}") from None
        if len(vb) != 4:
            raise MalformedInput(f"bad viewBox {view_box!r}")
        if vb[0] != 0 or vb[1] != 0:
            raise UnsupportedFeature("viewBox offset", view_box)
    if width is not None and height is not None:
        cw, ch = _length(width), _length(height)
        if vb is not None and (vb[2] != cw or vb[3] != ch):
            raise UnsupportedFeature("viewBox scaling", view_box)
    elif vb is not None:
        cw, ch = vb[2], vb[3]
    else:
        raise MalformedInput("svg needs width/height or a viewBox")

    elements: list[DiagramElement] = []
    ids: set[str] = set()

    def visit(node: ET.Element, offset: tuple[float, float], inherited: dict):
        for child in node:
            tag = _local(child.tag)
            if tag in _SVG_IGNORED:
                continue
            if tag != "g" and tag not in _SVG_SHAPES:
                raise UnsupportedFeature(tag)
            attrs = _attrs(child, inherited)
            tx, ty = _translate(child)
            off = (offset[0] + tx, offset[1] + ty)
            if tag == "g":
                group = {k: v for k, v in attrs.items() if k in _INHERITED}
                group["_group_opacity"] = float(inherited.get("_group_opacity", 1.0)) * float(
                    attrs.get("opacity", 1.0)
                )
                visit(child, off, group)
                continue
            el_id = child.attrib.get("id") or f"{tag}-{len(elements)}"
            if el_id in ids:
                raise MalformedInput(f"duplicate element id {el_id!r}")
            ids.add(el_id)
            elements.append(_svg_element(child, tag, el_id, attrs, off, len(elements)))

    visit(root, (0.0, 0.0), {})
    if not elements:
        raise EmptyDocument("svg has no drawable elements")
    return VectorDocument(cw, ch, tuple(elements), root.attrib.get("id", ""))


def _svg_element(node, tag, el_id, attrs, off, z) -> DiagramElement:
    ox, oy = off
    stroke_color = _paint(attrs.get("stroke"))
    stroke = Stroke(stroke_color, _length(attrs.get("stroke-width"), 1.0)) if stroke_color else None
    container = attrs.get("data-container")
    if tag == "text":
        if len(node):
            raise UnsupportedFeature(_local(node[0].tag), "inside <text>")
        content = (node.text or "").strip()
        if not content:
            raise MalformedInput(f"text element {el_id!r} is empty")
        size = _length(attrs.get("font-size"), 16.0)
        color = _paint(attrs.get("fill", "black")) or "#000000"
        payload = TextPayload(content, size, color, container)
        tw, th = text_extent(payload)
        x = _length(attrs.get("x")) + ox
        y = _length(attrs.get("y")) + oy
        anchor = attrs.get("text-anchor", "start")
        if anchor == "middle":
            x -= tw / 2
        elif anchor == "end":
            x -= tw
        elif anchor != "start":
            raise UnsupportedFeature("text-anchor", anchor)
        return DiagramElement(el_id, "text-box", BBox(x, y - size, tw, th), text=payload, z_order=z)

    fill_color = _paint(attrs.get("fill", "black"))
    fill = Fill(fill_color, _opacity(attrs, "fill-opacity") * float(attrs.get("opacity", 1.0))) if fill_color else None
    if tag == "rect":
        bbox = BBox(
            _length(attrs.get("x")) + ox,
            _length(attrs.get("y")) + oy,
            _length(attrs.get("width")),
            _length(attrs.get("height")),
        )
        return DiagramElement(el_id, "rect", bbox, fill, stroke, z_order=z)
    if tag == "ellipse":
        cx, cy = _length(attrs.get("cx")) + ox, _length(attrs.get("cy")) + oy
        rx, ry = _length(attrs.get("rx")), _length(attrs.get("ry"))
        return DiagramElement(el_id, "ellipse", BBox(cx - rx, cy - ry, 2 * rx, 2 * ry), fill, stroke, z_order=z)

    kind = "connector" if attrs.get("data-kind") == "connector" else tag
    if tag == "line":
        pts = (
            (_length(attrs.get("x1")) + ox, _length(attrs.get("y1")) + oy),
            (_length(attrs.get("x2")) + ox, _length(attrs.get("y2")) + oy),
        )
    else:
        nums = [float(v) for v in re.split(r"[\s,]+", attrs.get("points", "").strip()) if v]
        if len(nums) < 4 or len(nums) % 2:
            raise MalformedInput(f"polyline {el_id!r} needs an even list of >= 4 coordinates")
        pts = tuple((nums[i] + ox, nums[i + 1] + oy) for i in range(0, len(nums), 2))
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    bbox = BBox(min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))
    return DiagramElement(el_id, kind, bbox, None, stroke, z_order=z, points=pts)


def parse_document(data: bytes | str, format: str = "manifest-json") -> VectorDocument:
    """Parse ``data`` in one of the supported formats into a VectorDocument.

    Raises:
        MalformedInput: syntax or schema errors.
        UnsupportedFeature: SVG constructs outside the supported subset.
        EmptyDocument: the document has no elements.
    """
    if format == "manifest-json":
        try:
            obj = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedInput(f"invalid JSON: {exc}") from exc
        return document_from_manifest(obj)
    if format == "svg-subset":
        return document_from_svg(data)
    raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")


def load_document(path) -> VectorDocument:
    """Read a document file, choosing the format by extension."""
    from pathlib import Path

    path = Path(path)
    fmt = "svg-subset" if path.suffix.lower() == ".svg" else "manifest-json"
    return parse_document(path.read_bytes(), fmt)


# --------------------------------------------------------------------------
# text


def normalize_text(text: str) -> str:
    """NFC, lowercase, drop punctuation and symbols, collapse whitespace."""
    text = unicodedata.normalize("NFC", unicodedata.normalize("NFC", text).lower())
    kept = "".join(ch for ch in text if unicodedata.category(ch)[0] not in "PS")
    return " ".join(kept.split())


def normalize_set(strings: Iterable[str]) -> frozenset[str]:
    out = (normalize_text(s) for s in strings)
    return frozenset(s for s in out if s)


def extract_text_set(doc: VectorDocument) -> frozenset[str]:
    """Normalized set of all text carried by the document's elements."""
    return normalize_set(el.text.content for el in doc.elements if el.text is not None)


# --------------------------------------------------------------------------
# rasterization


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Grayscale raster; 255 is background, lower values are ink."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("raster must be a non-empty 2-D array")
        arr = np.ascontiguousarray(arr, dtype=np.uint8).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def to_pgm(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.pixels.tobytes()

    @classmethod
    def from_pgm(cls, data: bytes) -> "RasterGrid":
        tokens = []
        pos = 0
        while len(tokens) < 4:
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                pos = data.index(b"\n", pos) + 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
        if tokens[0] != b"P5" or int(tokens[3]) != 255:
            raise MalformedInput("only binary P5 PGM with maxval 255 is supported")
        w, h = int(tokens[1]), int(tokens[2])
        body = data[pos + 1 : pos + 1 + w * h]
        if len(body) != w * h:
            raise MalformedInput("truncated PGM payload")
        return cls(np.frombuffer(body, dtype=np.uint8).reshape(h, w))

    def to_png(self) -> bytes:
        import io

        buf = io.BytesIO()
        Image.fromarray(self.pixels).save(buf, format="PNG")
        return buf.getvalue()


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def raster_size(width: float, height: float, short_side: int = 1024) -> tuple[int, int, float]:
    """Raster (width, height, scale) with the short side fixed."""
    if not (width > 0 and height > 0):
        raise DegenerateCanvas(f"zero-area canvas {width}x{height}")
    scale = short_side / min(width, height)
    if width <= height:
        return short_side, _round_half_up(height * scale), scale
    return _round_half_up(width * scale), short_side, scale


def _span(a: float, b: float, limit: int) -> tuple[int, int]:
    # pixel i is covered when its center i + 0.5 lies in [a, b)
    lo = max(0, math.ceil(a - 0.5))
    hi = min(limit, math.ceil(b - 0.5))
    return lo, max(lo, hi)


def _blend(canvas: np.ndarray, region, mask, value: float, alpha: float) -> None:
    target = canvas[region]
    if mask is None:
        canvas[region] = alpha * value + (1.0 - alpha) * target
    else:
        target[mask] = alpha * value + (1.0 - alpha) * target[mask]


def _paint_segment(canvas, p0, p1, half_width: float, value: float) -> None:
    h, w = canvas.shape
    (x0, y0), (x1, y1) = p0, p1
    c0, c1 = _span(min(x0, x1) - half_width, max(x0, x1) + half_width + 1.0, w)
    r0, r1 = _span(min(y0, y1) - half_width, max(y0, y1) + half_width + 1.0, h)
    if c0 >= c1 or r0 >= r1:
        return
    xs = np.arange(c0, c1) + 0.5
    ys = np.arange(r0, r1)[:, None] + 0.5
    dx, dy = x1 - x0, y1 - y0
    length_sq = dx * dx + dy * dy
    if length_sq == 0:
        t = 0.0
    else:
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / length_sq, 0.0, 1.0)
    dist = np.hypot(xs - (x0 + t * dx), ys - (y0 + t * dy))
    mask = dist <= half_width
    _blend(canvas, (slice(r0, r1), slice(c0, c1)), mask, value, 1.0)


def _ellipse_mask(b: BBox, scale: float, shape, grow: float = 0.0):
    h, w = shape
    cx, cy = b.center[0] * scale, b.center[1] * scale
    rx, ry = b.w * scale / 2, b.h * scale / 2
    c0, c1 = _span(cx - rx - grow, cx + rx + grow, w)
    r0, r1 = _span(cy - ry - grow, cy + ry + grow, h)
    if c0 >= c1 or r0 >= r1 or rx <= 0 or ry <= 0:
        return None, None
    dx = np.arange(c0, c1) + 0.5 - cx
    dy = np.arange(r0, r1)[:, None] + 0.5 - cy
    rho = np.sqrt((dx / rx) ** 2 + (dy / ry) ** 2)
    return (slice(r0, r1), slice(c0, c1)), (dx, dy, rho)


def _paint_element(canvas: np.ndarray, el: DiagramElement, scale: float) -> None:
    h, w = canvas.shape
    b = el.bbox

    if el.fill is not None and el.kind not in LINEAR_KINDS:
        value, alpha = luminance(el.fill.color), el.fill.opacity
        if el.kind == "ellipse":
            region, geo = _ellipse_mask(b, scale, canvas.shape)
            if region is not None:
                _blend(canvas, region, geo[2] <= 1.0, value, alpha)
        else:
            c0, c1 = _span(b.x * scale, b.x1 * scale, w)
            r0, r1 = _span(b.y * scale, b.y1 * scale, h)
            if c0 < c1 and r0 < r1:
                _blend(canvas, (slice(r0, r1), slice(c0, c1)), None, value, alpha)

    if el.stroke is not None and el.stroke.width > 0:
        value = luminance(el.stroke.color)
        half = max(1, _round_half_up(el.stroke.width * scale)) / 2.0
        if el.kind == "ellipse" and b.w > 0 and b.h > 0:
            region, geo = _ellipse_mask(b, scale, canvas.shape, grow=half + 1.0)
            if region is not None:
                dx, dy, rho = geo
                radial = np.hypot(dx, dy)
                with np.errstate(divide="ignore", invalid="ignore"):
                    dist = np.where(rho > 0, radial * np.abs(1.0 - 1.0 / rho), np.inf)
                _blend(canvas, region, dist <= half, value, 1.0)
        else:
            if el.kind in LINEAR_KINDS:
                pts = [(x * scale, y * scale) for x, y in el.path()]
            else:
                x0, y0, x1, y1 = b.x * scale, b.y * scale, b.x1 * scale, b.y1 * scale
                pts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
            for p0, p1 in zip(pts, pts[1:]):
                _paint_segment(canvas, p0, p1, half, value)

    region = text_region(el)
    if region is not None:
        c0, c1 = _span(region.x * scale, region.x1 * scale, w)
        r0, r1 = _span(region.y * scale, region.y1 * scale, h)
        if c0 < c1 and r0 < r1:
            canvas[r0:r1, c0:c1] = TEXT_GRAY


def rasterize(doc: VectorDocument, short_side: int = 1024) -> RasterGrid:
    """Paint ``doc`` onto a grayscale grid whose short side is ``short_side``.

    Footprint renderer for layout metrics, not a display renderer: fills
    paint at the fill's luma, strokes at the stroke's luma with a width of at
    least one pixel, and text paints its region flat at mid-gray.
    """
    if not doc.elements:
        raise EmptyDocument("cannot rasterize an empty document")
    width, height, scale = raster_size(doc.canvas_width, doc.canvas_height, short_side)
    canvas = np.full((height, width), 255.0)
    for el in doc.paint_order():
        _paint_element(canvas, el, scale)
    return RasterGrid(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


def overlay_grid(grid: RasterGrid, cell: int = 128, value: int = 160) -> RasterGrid:
    """Copy of ``grid`` with 1-px grid lines burned in every ``cell`` pixels."""
    arr = grid.pixels.copy()
    arr[::cell, :] = np.minimum(arr[::cell, :], value)
    arr[:, ::cell] = np.minimum(arr[:, ::cell], value)
    return RasterGrid(arr)

