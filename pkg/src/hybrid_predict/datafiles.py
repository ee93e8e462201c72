"""Dataset files: one JSON segment per line, reference paths in a shared table.

See docs/schemas.md for the field layout.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Optional

import numpy as np

from .core import Dataset, Scene, Segment, Trajectory
from .frenet import ReferencePath

SEGMENT_SCHEMA = "hybrid-predict/segment"
MAPS_SCHEMA = "hybrid-predict/paths"
MANIFEST_SCHEMA = "hybrid-predict/dataset-manifest"
VERSION = 1


def _pts(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def path_key(path: ReferencePath) -> str:
    digest = hashlib.sha1(np.ascontiguousarray(path.polyline, dtype="<f8").tobytes()).hexdigest()[:10]
    return f"{path.path_id or 'path'}#{digest}"


class PathTable:
    """Deduplicating store of reference paths keyed by id plus content digest."""

    def __init__(self, paths: Optional[dict] = None):
        self.paths = dict(paths or {})

    def add(self, path: Optional[ReferencePath]) -> Optional[str]:
        if path is None:
            return None
        key = path_key(path)
        self.paths.setdefault(key, path)
        return key

    def get(self, key: Optional[str]) -> Optional[ReferencePath]:
        if key is None:
            return None
        try:
            return self.paths[key]
        except KeyError:
            raise ValueError(f"segment references unknown path {key!r}") from None

    def to_dict(self) -> dict:
        return {
            "schema": MAPS_SCHEMA, "version": VERSION,
            "paths": {k: {"path_id": p.path_id, "polyline": _pts(p.polyline)} for k, p in sorted(self.paths.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathTable":
        if d.get("schema") != MAPS_SCHEMA:
            raise ValueError("not a path table file")
        return cls({k: ReferencePath(np.array(v["polyline"]), v["path_id"]) for k, v in d["paths"].items()})


def segment_to_dict(seg: Segment, table: PathTable) -> dict:
    sc = seg.scene
    return {
        "segment_id": seg.segment_id,
        "map_id": sc.map_id,
        "dt": sc.target_history.dt,
        "speed_limit": sc.speed_limit,
        "lane_width": sc.lane_width,
        "noisy": sc.noisy,
        "target_history": _pts(sc.target_history.points),
        "reference_path": table.add(sc.reference_path),
        "neighbors": [{"history": _pts(h.points), "path": table.add(p)}
                      for h, p in zip(sc.neighbor_histories, sc.neighbor_paths)],
        "stop_signs": _pts(sc.stop_signs),
        "label": _pts(seg.label.points),
    }


def segment_from_dict(d: dict, table: PathTable) -> Segment:
    dt = float(d["dt"])
    neigh = d.get("neighbors", [])
    scene = Scene(
        Trajectory(np.array(d["target_history"]), dt),
        tuple(Trajectory(np.array(n["history"]), dt) for n in neigh),
        table.get(d.get("reference_path")),
        d.get("map_id", ""),
        np.array(d.get("stop_signs", []), dtype=float).reshape(-1, 2),
        float(d.get("speed_limit", 10.0)),
        tuple(table.get(n.get("path")) for n in neigh),
        float(d.get("lane_width", 3.5)),
        bool(d.get("noisy", False)),
    )
    return Segment(scene, Trajectory(np.array(d["label"]), dt), d["segment_id"])


def _dump(obj, path) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_jsonl(data, path, table: PathTable) -> str:
    """Write segments to ``path`` and return the file's sha256."""
    h = hashlib.sha256()
    try:
        with open(path, "w") as fh:
            for seg in data:
                line = json.dumps(segment_to_dict(seg, table), sort_keys=True) + "\n"
                h.update(line.encode())
                fh.write(line)
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc
    return h.hexdigest()


def read_jsonl(path, table: PathTable, split: str = "train") -> Dataset:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset not found: expected {path}")
    segs = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                segs.append(segment_from_dict(json.loads(line), table))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{n}: bad segment record ({exc})") from exc
    return Dataset(segs, split, str(path))


def write_datasets(out_dir, datasets, manifest: dict) -> dict:
    """Write ``{split}.jsonl`` files, ``maps.json`` and ``manifest.json``; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    table = PathTable()
    files = {}
    for ds in datasets:
        name = f"{ds.split}.jsonl"
        files[ds.split] = {"file": name, "segments": len(ds),
                           "sha256": write_jsonl(ds, os.path.join(out_dir, name), table)}
    _dump(table.to_dict(), os.path.join(out_dir, "maps.json"))
    man = {"schema": MANIFEST_SCHEMA, "version": VERSION, **manifest, "files": files, "maps_file": "maps.json"}
    _dump(man, os.path.join(out_dir, "manifest.json"))
    return man


def read_datasets(data_dir) -> tuple[dict, dict]:
    """Returns (manifest, {split: Dataset})."""
    mp = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(mp):
        raise FileNotFoundError(f"no dataset manifest: expected {mp} (run `gen` first)")
    with open(mp) as fh:
        man = json.load(fh)
    if man.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"{mp}: not a dataset manifest")
    with open(os.path.join(data_dir, man["maps_file"])) as fh:
        table = PathTable.from_dict(json.load(fh))
    out = {split: read_jsonl(os.path.join(data_dir, f["file"]), table, split) for split, f in man["files"].items()}
    return man, out
