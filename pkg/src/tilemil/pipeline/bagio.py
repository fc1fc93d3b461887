"""Bag files and dataset directories.

A bag file is a tensor container holding ``coords`` (i64, N x 2),
``features`` (f32, N x D) and optionally ``truth`` (i64, N); the label is
kept in the JSON metadata. CSV files (``x,y,f0..f{D-1}``) are accepted for
small debug bags. A dataset directory holds one bag file per slide and a
``manifest.json`` listing files, labels and splits.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core.serialize import load_tensors, save_tensors
from ..errors import FormatError
from ..hilbert import SurvivalLabel, TileBag

CSV_MAX_DIM = 64
MANIFEST = "manifest.json"


def _label_to_json(label):
    if isinstance(label, SurvivalLabel):
        return {"time_months": label.time_months, "event": label.event}
    return None if label is None else int(label)


def _label_from_json(value):
    if isinstance(value, dict):
        return SurvivalLabel(float(value["time_months"]), int(value["event"]))
    return None if value is None else int(value)


def write_bag(path: str | Path, bag: TileBag) -> None:
    tensors = {"coords": bag.coords_raw.astype(np.int64), "features": bag.features.astype(np.float32)}
    if bag.truth is not None:
        tensors["truth"] = np.asarray(bag.truth, dtype=np.int64)
    save_tensors(path, tensors, {"label": _label_to_json(bag.label)})


def write_bag_csv(path: str | Path, bag: TileBag) -> None:
    if bag.dim > CSV_MAX_DIM:
        raise FormatError(f"CSV bags are limited to {CSV_MAX_DIM} features, got {bag.dim}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"] + [f"f{i}" for i in range(bag.dim)])
        for (x, y), row in zip(bag.coords_raw, bag.features):
            w.writerow([int(x), int(y)] + [repr(float(v)) for v in row])


def read_bag(path: str | Path, label=None) -> TileBag:
    """Load a binary or CSV bag; ``label`` overrides the stored label."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_bag_csv(path, label)
    tensors, meta = load_tensors(path)
    if "coords" not in tensors or "features" not in tensors:
        raise FormatError(f"{path}: bag file needs 'coords' and 'features'")
    truth = tensors.get("truth")
    stored = _label_from_json(meta.get("label"))
    return TileBag(tensors["features"], tensors["coords"], stored if label is None else label,
                   None if truth is None else truth.astype(bool))


def _read_bag_csv(path: Path, label) -> TileBag:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["x", "y"]:
        raise FormatError(f"{path}: CSV bag must start with columns x,y")
    body = rows[1:]
    if not body:
        raise FormatError(f"{path}: CSV bag has no tiles")
    try:
        coords = np.array([[int(r[0]), int(r[1])] for r in body], dtype=np.int64)
        feats = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float32)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if feats.ndim != 2 or feats.shape[1] != len(rows[0]) - 2:
        raise FormatError(f"{path}: ragged feature rows")
    return TileBag(feats, coords, label)


def save_dataset(directory: str | Path, bags: Sequence[TileBag], meta: dict | None = None,
                 splits: dict[str, list[int]] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, bag in enumerate(bags):
        name = f"bag_{i:05d}.bin"
        write_bag(directory / name, bag)
        files.append({"file": name, "n_tiles": len(bag), "label": _label_to_json(bag.label)})
    manifest = {"bags": files, "splits": splits or {}, **(meta or {})}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory / MANIFEST


def load_dataset(directory: str | Path) -> tuple[list[TileBag], dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{directory}: no {MANIFEST}") from exc
    bags = [read_bag(directory / entry["file"]) for entry in manifest["bags"]]
    return bags, manifest


def spec_to_json(spec) -> dict:
    out = asdict(spec)
    out["region_fraction"] = list(out["region_fraction"])
    return out
