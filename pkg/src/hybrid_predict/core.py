"""Domain types and small shared helpers.

Everything here is immutable value data. Arrays handed to the constructors
are copied and frozen so a ``Trajectory`` can be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .frenet import ReferencePath

DT = 0.1
HISTORY_LEN = 10
LABEL_LEN = 30
SIGMA_FLOOR = 1e-3
DEFAULT_STRIDE = 15


def _frozen(a, shape_tail=(2,)) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped 2-D positions sampled every ``dt`` seconds."""

    points: np.ndarray
    dt: float = DT

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (n, 2), got {pts.shape}")
        if len(pts) < 1:
            raise ValueError("trajectory needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory coordinates must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.points, other.points)

    def translated(self, offset) -> "Trajectory":
        return Trajectory(self.points + np.asarray(offset, dtype=float), self.dt)

    def __getitem__(self, item) -> "Trajectory":
        return Trajectory(self.points[item], self.dt)


@dataclass(frozen=True, eq=False)
class GaussianTrajectory:
    """Per-step independent Gaussians; ``steps`` rows are (mu_x, mu_y, sigma_x, sigma_y)."""

    steps: np.ndarray
    dt: float = DT

    def __post_init__(self):
        st = _frozen(self.steps, (4,))
        if st.ndim != 2 or st.shape[1] != 4 or len(st) < 1:
            raise ValueError(f"steps must have shape (n, 4), got {st.shape}")
        if np.any(st[:, 2:] < SIGMA_FLOOR * (1 - 1e-12)):
            raise ValueError("sigma below floor")
        object.__setattr__(self, "steps", st)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def means(self) -> np.ndarray:
        return self.steps[:, :2]

    @property
    def sigmas(self) -> np.ndarray:
        return self.steps[:, 2:]

    def translated(self, offset) -> "GaussianTrajectory":
        st = np.array(self.steps)
        st[:, :2] += np.asarray(offset, dtype=float)
        return GaussianTrajectory(st, self.dt)


@dataclass(frozen=True, eq=False)
class Scene:
    """One prediction problem centred on a target agent.

    ``neighbor_paths`` runs parallel to ``neighbor_histories``; an entry is
    ``None`` when the neighbour's route is unknown (e.g. ingested data).
    """

    target_history: Trajectory
    neighbor_histories: tuple = ()
    reference_path: Optional["ReferencePath"] = None
    map_id: str = ""
    stop_signs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    speed_limit: float = 10.0
    neighbor_paths: tuple = ()
    lane_width: float = 3.5
    noisy: bool = False

    def __post_init__(self):
        object.__setattr__(self, "neighbor_histories", tuple(self.neighbor_histories))
        paths = tuple(self.neighbor_paths)
        if not paths:
            paths = (None,) * len(self.neighbor_histories)
        if len(paths) != len(self.neighbor_histories):
            raise ValueError("neighbor_paths must match neighbor_histories")
        object.__setattr__(self, "neighbor_paths", paths)
        object.__setattr__(self, "stop_signs", _frozen(self.stop_signs).reshape(-1, 2))

    @property
    def origin(self) -> np.ndarray:
        return self.target_history.points[-1]


@dataclass(frozen=True, eq=False)
class Segment:
    scene: Scene
    label: Trajectory
    segment_id: str = ""


@dataclass(frozen=True, eq=False)
class Dataset:
    segments: tuple
    split: str = "train"
    provenance: str = ""

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        object.__setattr__(self, "segments", tuple(self.segments))

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)


def extract_segments(
    track: Trajectory,
    history_len: int = HISTORY_LEN,
    label_len: int = LABEL_LEN,
    stride: int = DEFAULT_STRIDE,
) -> list[Segment]:
    """Cut a track into history/label windows advancing by ``stride``.

    The returned scenes carry only the target history; scenario code attaches
    neighbours and map context. ``segment_id`` holds the window offset.
    A track shorter than one window yields an empty list.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    window = history_len + label_len
    out = []
    for start in range(0, len(track) - window + 1, stride):
        pts = track.points[start:start + window]
        scene = Scene(target_history=Trajectory(pts[:history_len], track.dt))
        out.append(Segment(scene, Trajectory(pts[history_len:], track.dt), str(start)))
    return out


def center_on_target(scene: Scene) -> Scene:
    """Translate every coordinate so the target's latest position is the origin."""
    offset = -scene.origin
    if not np.any(offset):
        return scene
    ref = scene.reference_path.translated(offset) if scene.reference_path is not None else None
    paths = tuple(p.translated(offset) if p is not None else None for p in scene.neighbor_paths)
    return replace(
        scene,
        target_history=scene.target_history.translated(offset),
        neighbor_histories=tuple(h.translated(offset) for h in scene.neighbor_histories),
        reference_path=ref,
        neighbor_paths=paths,
        stop_signs=scene.stop_signs + offset,
    )


def step_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])


def ade(predicted, truth) -> float:
    """Average Euclidean distance between corresponding points."""
    p = predicted.points if isinstance(predicted, Trajectory) else np.asarray(predicted, float)
    t = truth.points if isinstance(truth, Trajectory) else np.asarray(truth, float)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if len(p) < 1:
        raise ValueError("ade needs at least one step")
    return float(np.mean(step_distances(p, t)))


def final_position(traj: Trajectory) -> tuple[float, float]:
    pts = traj.points if isinstance(traj, Trajectory) else np.asarray(traj, float)
    if len(pts) == 0:
        raise ValueError("empty trajectory has no final position")
    return float(pts[-1, 0]), float(pts[-1, 1])


def speeds(points: np.ndarray, dt: float) -> np.ndarray:
    """Finite-difference speeds, one per point; the last reuses the previous."""
    v = np.hypot(*np.diff(points, axis=0).T) / dt
    return np.append(v, v[-1])


def as_points(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.points
    return np.asarray(traj, dtype=float)


def stack_points(trajs: Sequence[Trajectory]) -> np.ndarray:
    return np.stack([t.points for t in trajs]) if trajs else np.zeros((0, 0, 2))
