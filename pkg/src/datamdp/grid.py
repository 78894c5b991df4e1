"""Uniform box partitions of the state set and the projection onto cell centers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .blackbox import StateBox
from .errors import InvalidParameter


def _snap(values) -> np.ndarray:
    # Strip float noise so that decimal boundaries like 0.1 land on the
    # intended double (e.g. -0.5 + 6 * 0.1 -> 0.1, not 0.10000000000000009).
    return np.array([float(f"{v:.15g}") for v in np.ravel(values)]).reshape(np.shape(values))


class Projection(NamedTuple):
    index: np.ndarray  # flat cell index; ``grid.absorbing`` for out-of-box points
    point: np.ndarray  # cell center; NaN for out-of-box points
    absorbing: np.ndarray  # bool mask


@dataclass(frozen=True)
class Grid:
    """Partition of ``box`` into ``prod(counts)`` half-open cells.

    Cells are ``[a, b)`` per dimension except the last one, which is closed.
    Flat indices follow C order (last dimension varies fastest).  Index
    ``n_cells`` denotes the absorbing out-of-box state.
    """

    box: StateBox
    counts: tuple
    edges: tuple = field(init=False, repr=False, compare=False)
    centers_1d: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        counts = tuple(int(k) for k in np.atleast_1d(self.counts))
        if len(counts) != self.box.n:
            raise InvalidParameter(f"need one cell count per dimension ({self.box.n})")
        if any(k < 1 for k in counts):
            raise InvalidParameter("cell counts must be >= 1")
        object.__setattr__(self, "counts", counts)
        edges, centers = [], []
        for lo, hi, k in zip(self.box.lo, self.box.hi, counts):
            e = _snap(lo + (hi - lo) * np.arange(k + 1) / k)
            e[0], e[-1] = lo, hi
            edges.append(e)
            centers.append(_snap(0.5 * (e[:-1] + e[1:])))
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "centers_1d", tuple(centers))

    @property
    def n(self) -> int:
        return self.box.n

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def absorbing(self) -> int:
        return self.n_cells

    @property
    def widths(self) -> np.ndarray:
        return self.box.widths / np.asarray(self.counts)

    @property
    def eta(self) -> float:
        """Discretization parameter: diameter of a cell."""
        return float(np.linalg.norm(self.widths))

    @property
    def centers(self) -> np.ndarray:
        """All representative points, shape ``(n_cells, n)`` in flat-index order."""
        mesh = np.meshgrid(*self.centers_1d, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_bounds(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        multi = np.unravel_index(int(index), self.counts)
        lo = np.array([self.edges[d][m] for d, m in enumerate(multi)])
        hi = np.array([self.edges[d][m + 1] for d, m in enumerate(multi)])
        return lo, hi

    def multi_index(self, x) -> np.ndarray:
        """Per-dimension cell indices (no box check; clipped into range)."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape, dtype=np.int64)
        for d in range(self.n):
            idx = np.searchsorted(self.edges[d], x[..., d], side="right") - 1
            out[..., d] = np.clip(idx, 0, self.counts[d] - 1)
        return out

    def project(self, x) -> Projection:
        """Map points to (cell index, cell center); out-of-box -> absorbing."""
        x = np.asarray(x, dtype=float)
        inside = self.box.contains(x)
        multi = self.multi_index(np.where(inside[..., None], x, self.box.lo_array))
        flat = np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.counts)
        flat = np.where(inside, flat, self.absorbing)
        point = np.stack([self.centers_1d[d][multi[..., d]] for d in range(self.n)], axis=-1)
        point = np.where(inside[..., None], point, np.nan)
        return Projection(flat, point, ~inside)

    def project_clipped(self, x) -> Projection:
        """Project after clipping to the box, so every point gets a real cell."""
        return self.project(self.box.clip(x))

    def to_dict(self) -> dict:
        return {"box": self.box.to_list(), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(StateBox.from_bounds(d["box"]), tuple(d["counts"]))


def build_grid(box: StateBox, counts) -> Grid:
    return Grid(box, tuple(np.atleast_1d(counts)))


class DeflatedSet(NamedTuple):
    """Result of :func:`deflate`; may be empty (some ``lo_d > hi_d``)."""

    lo: np.ndarray
    hi: np.ndarray
    empty: bool

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def as_box(self) -> StateBox:
        return StateBox(tuple(self.lo), tuple(self.hi))


def deflate(phi: StateBox, eps: float, state_box: StateBox | None = None) -> DeflatedSet:
    """Shrink ``phi`` by ``eps`` on every face interior to ``state_box``.

    For an axis-aligned box this is exactly the set of points of ``phi`` at
    distance at least ``eps`` from ``state_box`` minus ``phi``: leaving
    ``phi`` through an interior face only requires moving along that axis.
    ``state_box`` defaults to ``phi`` itself (nothing to deflate).
    """
    if eps < 0:
        raise InvalidParameter("eps must be non-negative")
    state_box = phi if state_box is None else state_box
    lo, hi = phi.lo_array, phi.hi_array
    lo = np.where(lo > state_box.lo_array, lo + eps, lo)
    hi = np.where(hi < state_box.hi_array, hi - eps, hi)
    return DeflatedSet(lo, hi, bool(np.any(lo > hi)))
