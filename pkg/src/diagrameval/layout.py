"""Blank-space and alignment scores computed on a raster grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .document import RasterGrid
from .errors import OutOfRange

DEFAULT_CELL = 128
DEFAULT_INK_THRESHOLD = 0.005
ALIGN_SCALE = 1e4


@dataclass(frozen=True)
class BlankEstimate:
    beta: float
    grid_cell: int
    cells_total: int
    cells_blank: int


@dataclass(frozen=True, eq=False)
class ProjectionProfile:
    p: np.ndarray
    variance: float


def cell_ink_fractions(grid: RasterGrid, cell: int = DEFAULT_CELL) -> np.ndarray:
    """Fraction of ink pixels (value < 255) in each grid cell.

    Cells are anchored at the top-left corner; the last row and column of
    cells may be partial and are measured over their actual pixel count.
    """
    ink = (grid.pixels < 255).astype(np.int64)
    rows = -(-grid.height // cell)
    cols = -(-grid.width // cell)
    padded = np.zeros((rows * cell, cols * cell), dtype=np.int64)
    padded[: grid.height, : grid.width] = ink
    counts = padded.reshape(rows, cell, cols, cell).sum(axis=(1, 3))
    heights = np.minimum(cell, grid.height - np.arange(rows) * cell)
    widths = np.minimum(cell, grid.width - np.arange(cols) * cell)
    return counts / np.outer(heights, widths)


def estimate_blank(
    grid: RasterGrid,
    cell: int = DEFAULT_CELL,
    ink_threshold: float = DEFAULT_INK_THRESHOLD,
) -> BlankEstimate:
    """Invalid-blank ratio inside the content's cell-aligned bounding box.

    Outer margins are excluded: only cells between the first and last cell
    row/column that hold any ink are counted. A cell is blank when its ink
    fraction is below ``ink_threshold``. A grid with no ink has ratio 1.
    """
    fractions = cell_ink_fractions(grid, cell)
    inked = np.argwhere(fractions > 0)
    if inked.size == 0:
        return BlankEstimate(1.0, cell, 0, 0)
    (r0, c0), (r1, c1) = inked.min(axis=0), inked.max(axis=0)
    box = fractions[r0 : r1 + 1, c0 : c1 + 1]
    total = int(box.size)
    blank = int(np.count_nonzero(box < ink_threshold))
    return BlankEstimate(blank / total, cell, total, blank)


def blank_score(beta: float) -> float:
    if not 0.0 <= beta <= 1.0:
        raise OutOfRange(f"blank ratio {beta} outside [0, 1]")
    return 1.0 / (1.0 + 2.0 * beta)


def projection_profile(grid: RasterGrid) -> ProjectionProfile:
    # raw grayscale, background 255, no inversion
    p = grid.pixels.astype(np.float64).mean(axis=1)
    return ProjectionProfile(p, float(p.var()))


def alignment_score(grid: RasterGrid) -> float:
    return 1.0 / (1.0 + projection_profile(grid).variance / ALIGN_SCALE)
