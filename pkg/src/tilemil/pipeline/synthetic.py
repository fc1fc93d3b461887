"""Seeded synthetic slides.

A slide is an irregular tissue mask on a square grid; each tissue cell is
one tile. Background tiles carry isotropic Gaussian noise. Positive slides
additionally contain one contiguous planted region whose tiles add a
class-specific signal vector. With ``decoys`` set, negative slides carry the
same number of signal tiles scattered over the tissue instead, so only the
spatial arrangement separates the classes. Survival slides plant a region of random
size and draw survival time from the fraction of tiles it covers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..errors import SpecError
from ..hilbert import SurvivalLabel, TileBag

_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class SyntheticSpec:
    task: str = "classification"
    grid: int = 64
    dim: int = 64
    tissue_fraction: float = 0.12
    tissue_jitter: float = 0.5
    blob_sigma: float = 5.0
    snr: float = 2.0
    noise: float = 1.0
    num_classes: int = 2
    region_fraction: tuple[float, float] = (0.05, 0.15)
    region_tiles: int | None = None
    decoys: bool = False
    # survival
    max_risk_fraction: float = 0.3
    risk_scale: float = 3.0
    base_time: float = 60.0
    time_noise: float = 0.25
    censor_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("classification", "survival"):
            raise SpecError(f"unknown task {self.task!r}")
        if not 0 < self.tissue_fraction <= 1:
            raise SpecError("tissue_fraction must lie in (0, 1]")
        if not 0 <= self.tissue_jitter < 1:
            raise SpecError("tissue_jitter must lie in [0, 1)")
        if self.noise < 0:
            raise SpecError("noise must be >= 0")


def signal_vectors(spec: SyntheticSpec) -> np.ndarray:
    """One orthogonal signal vector of norm ``snr`` per planted class (and one for risk)."""
    rng = np.random.default_rng([spec.seed, 0])
    n = max(spec.num_classes - 1, 1)
    q, _ = np.linalg.qr(rng.standard_normal((spec.dim, n)))
    return spec.snr * q.T


def tissue_mask(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal((spec.grid, spec.grid)), spec.blob_sigma)
    jitter = rng.uniform(1.0 - spec.tissue_jitter, 1.0 + spec.tissue_jitter)
    cut = np.quantile(field, 1.0 - min(1.0, spec.tissue_fraction * jitter))
    return field >= cut


def largest_component(mask: np.ndarray) -> int:
    labels, n = ndimage.label(mask)
    return int(np.bincount(labels.ravel())[1:].max()) if n else 0


def grow_region(mask: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Random contiguous (4-connected) set of ``size`` cells inside ``mask``."""
    region = np.zeros_like(mask)
    if size == 0:
        return region
    labels, n = ndimage.label(mask)
    sizes = ndimage.sum(mask, labels, index=np.arange(1, n + 1))
    # Seed in a component chosen proportionally to its size among those big enough.
    ok = np.flatnonzero(sizes >= size)
    if len(ok) == 0:
        raise SpecError(f"region of {size} tiles does not fit in any tissue component")
    comp = rng.choice(ok + 1, p=sizes[ok] / sizes[ok].sum())
    cells = np.argwhere(labels == comp)
    start = tuple(cells[rng.integers(len(cells))])
    region[start] = True
    frontier = [start]
    seen = {start}
    count = 1
    while count < size:
        i = int(rng.integers(len(frontier)))
        cy, cx = frontier[i]
        options = [(cy + dy, cx + dx) for dy, dx in _NEIGHBOURS
                   if 0 <= cy + dy < mask.shape[0] and 0 <= cx + dx < mask.shape[1]
                   and mask[cy + dy, cx + dx] and (cy + dy, cx + dx) not in seen]
        if not options:
            frontier.pop(i)
            continue
        cell = options[int(rng.integers(len(options)))]
        seen.add(cell)
        region[cell] = True
        frontier.append(cell)
        count += 1
    return region


def _bag_rng(spec: SyntheticSpec, index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, 1, index])


def generate_bag(spec: SyntheticSpec, index: int = 0, label=None) -> TileBag:
    """Build slide ``index`` of the dataset defined by ``spec``.

    ``label`` overrides the sampled class for classification tasks.
    """
    rng = _bag_rng(spec, index)
    mask = tissue_mask(spec, rng)
    n_tissue = int(mask.sum())
    signals = signal_vectors(spec)

    if spec.task == "classification":
        cls = int(rng.integers(spec.num_classes)) if label is None else int(label)
        if spec.region_tiles is not None:
            size = spec.region_tiles
        else:
            size = max(1, int(round(rng.uniform(*spec.region_fraction) * n_tissue)))
        if cls > 0:
            region = grow_region(mask, size, rng)
            signal = signals[cls - 1]
        elif spec.decoys:
            region = np.zeros_like(mask)
            cells = np.argwhere(mask)
            pick = cells[rng.choice(len(cells), size=min(size, len(cells)), replace=False)]
            region[pick[:, 0], pick[:, 1]] = True
            signal = signals[int(rng.integers(len(signals)))]
        else:
            region, signal = np.zeros_like(mask), None
    else:
        frac = rng.uniform(0.0, spec.max_risk_fraction)
        # Survival risk follows the planted fraction actually achieved.
        size = min(int(round(frac * n_tissue)), largest_component(mask))
        region = grow_region(mask, size, rng)
        signal = signals[0]

    ys, xs = np.nonzero(mask)
    coords = np.stack([xs, ys], axis=1).astype(np.int64)
    feats = spec.noise * rng.standard_normal((len(coords), spec.dim))
    planted = region[ys, xs]
    if signal is not None:
        feats[planted] += signal

    if spec.task == "classification":
        bag_label = cls
    else:
        risk = spec.risk_scale * planted.mean() / spec.max_risk_fraction
        t = spec.base_time * np.exp(-risk + spec.time_noise * rng.standard_normal())
        event = int(rng.random() >= spec.censor_rate)
        if not event:
            t *= rng.uniform(0.2, 1.0)
        bag_label = SurvivalLabel(float(t), event)

    return TileBag(feats, coords, bag_label, truth=planted)


def generate_dataset(spec: SyntheticSpec, n_bags: int) -> list[TileBag]:
    return [generate_bag(spec, i) for i in range(n_bags)]


def split_indices(n: int, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle ``range(n)`` and cut it into consecutive parts of the given fractions."""
    perm = np.random.default_rng([seed, 2]).permutation(n)
    bounds = np.round(np.cumsum(fractions)[:-1] * n).astype(int)
    return [part.tolist() for part in np.split(perm, bounds)]
