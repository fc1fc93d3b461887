"""Spatial serialization of tile coordinates.

Raw tile coordinates are rank-densified per axis, mapped onto a space-filling
curve and sorted. Training windows are then cut as contiguous runs of the
sorted sequence. Z-order, row-major and random orderings are provided as
ablation baselines.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .errors import CoordinateRangeError, DimensionError, EmptyBagError

Strategy = Literal["hilbert", "zorder", "rowmajor", "random"]
STRATEGIES: tuple[str, ...] = ("hilbert", "zorder", "rowmajor", "random")


@dataclass
class SurvivalLabel:
    time_months: float
    event: int


Label = Union[int, SurvivalLabel, None]


@dataclass
class TileBag:
    """One slide: ``features[i]`` sits at grid cell ``coords_raw[i]``.

    ``truth`` optionally flags tiles known to carry signal (synthetic data).
    """

    features: np.ndarray
    coords_raw: np.ndarray
    label: Label = None
    truth: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.coords_raw = np.asarray(self.coords_raw, dtype=np.int64).reshape(-1, 2)
        if self.features.ndim != 2:
            raise DimensionError(f"features must be N x D, got {self.features.shape}")
        if len(self.coords_raw) == 0:
            raise EmptyBagError("a bag needs at least one tile")
        if len(self.coords_raw) != len(self.features):
            raise DimensionError(
                f"{len(self.features)} feature rows but {len(self.coords_raw)} coordinates")
        if len(np.unique(self.coords_raw, axis=0)) != len(self.coords_raw):
            raise ValueError("tile coordinates must be unique within a bag")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class HilbertOrder:
    """Per-tile curve indices and the permutation sorting them ascending.

    The name is historical; baseline strategies fill the same fields.
    """

    dense_coords: np.ndarray
    order_k: int
    indices: np.ndarray
    perm: np.ndarray
    strategy: str = "hilbert"

    def __len__(self) -> int:
        return len(self.perm)


def densify(coords_raw) -> np.ndarray:
    """Replace each axis value by its 0-based rank among the unique values of that axis."""
    c = np.asarray(coords_raw, dtype=np.int64).reshape(-1, 2)
    if len(c) == 0:
        raise EmptyBagError("cannot densify an empty coordinate list")
    out = np.empty_like(c)
    for axis in range(2):
        _, out[:, axis] = np.unique(c[:, axis], return_inverse=True)
    return out


def grid_order(dense_coords: np.ndarray) -> int:
    """Smallest k with 2**k > every dense coordinate."""
    top = int(np.max(dense_coords)) if np.size(dense_coords) else 0
    return max(top, 0).bit_length()


def hilbert_index(x, y, k: int):
    """Hilbert curve index of cell (x, y) on a 2**k x 2**k grid.

    The curve enters at (0, 0) and leaves at (2**k - 1, 0). Accepts scalars
    or equal-shape integer arrays.
    """
    xa = np.array(x, dtype=np.int64)
    ya = np.array(y, dtype=np.int64)
    side = 1 << k
    if np.any(xa < 0) or np.any(ya < 0) or np.any(xa >= side) or np.any(ya >= side):
        raise CoordinateRangeError(f"coordinate outside the {side}x{side} grid")
    h = np.zeros(np.broadcast(xa, ya).shape, dtype=np.int64)
    for level in range(k - 1, -1, -1):
        s = 1 << level
        rx = (xa & s) > 0
        ry = (ya & s) > 0
        quadrant = (3 * rx) ^ ry
        h += (s * s) * quadrant
        # Rotate the sub-square so the child curve starts where the parent enters.
        swap = ~ry
        flip = swap & rx
        xa = np.where(flip, side - 1 - xa, xa)
        ya = np.where(flip, side - 1 - ya, ya)
        xa, ya = np.where(swap, ya, xa), np.where(swap, xa, ya)
    return int(h) if h.ndim == 0 else h


def morton_index(x, y, k: int):
    """Bit-interleaved Z-order index: x bits on even positions, y bits on odd."""
    xa = np.asarray(x, dtype=np.int64)
    ya = np.asarray(y, dtype=np.int64)
    h = np.zeros(np.broadcast(xa, ya).shape, dtype=np.int64)
    for b in range(k):
        h |= ((xa >> b) & 1) << (2 * b)
        h |= ((ya >> b) & 1) << (2 * b + 1)
    return int(h) if h.ndim == 0 else h


def order_coords(coords_raw, strategy: str = "hilbert", seed: int | None = 0) -> HilbertOrder:
    dense = densify(coords_raw)
    k = grid_order(dense)
    x, y = dense[:, 0], dense[:, 1]
    if strategy == "hilbert":
        idx = hilbert_index(x, y, k)
    elif strategy == "zorder":
        idx = morton_index(x, y, k)
    elif strategy == "rowmajor":
        idx = y * (1 << k) + x
    elif strategy == "random":
        shuffled = np.random.default_rng(seed).permutation(len(dense))
        idx = np.empty(len(dense), dtype=np.int64)
        idx[shuffled] = np.arange(len(dense))
    else:
        raise ValueError(f"unknown ordering strategy {strategy!r}")
    idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
    perm = np.argsort(idx, kind="stable")
    return HilbertOrder(dense, k, idx, perm, strategy)


def order_bag(bag: TileBag, strategy: str = "hilbert", seed: int | None = 0) -> HilbertOrder:
    """Serialize a bag's tiles; ``seed`` is only used by the random strategy."""
    return order_coords(bag.coords_raw, strategy, seed)


def contiguous_chunk(order: HilbertOrder, window: int, rng) -> np.ndarray:
    """Tile indices of a uniformly placed run of ``window`` consecutive sorted tiles.

    ``rng`` may be a seed or a numpy Generator. Bags no longer than the
    window come back whole, in sorted order.
    """
    if window < 1:
        raise ValueError("window length must be >= 1")
    n = len(order.perm)
    if n <= window:
        return order.perm.copy()
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    start = int(gen.integers(0, n - window + 1))
    return order.perm[start:start + window].copy()


def locality_score(order: HilbertOrder) -> float:
    """Mean Manhattan step, in dense coordinates, between consecutive tiles."""
    if len(order.perm) < 2:
        raise ValueError("locality needs at least two tiles")
    path = order.dense_coords[order.perm]
    return float(np.abs(np.diff(path, axis=0)).sum(axis=1).mean())
