"""Reference-path geometry and Cartesian <-> Frenet conversion.

A path is a polyline. The lateral direction is a unit normal defined at each
vertex (bisector of the adjacent segment normals) and interpolated linearly
along every segment. Projecting along that continuous normal field keeps the
mapping one-to-one near the path, including the outer side of vertices where
a plain perpendicular projection would collapse a wedge of points onto the
vertex. On straight stretches the two coincide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_T_TOL = 1e-9
_CHUNK = 512


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


class FrenetState(NamedTuple):
    s: float
    d: float


@dataclass(frozen=True, eq=False)
class ReferencePath:
    polyline: np.ndarray
    path_id: str = ""

    def __post_init__(self):
        pts = np.array(self.polyline, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("reference path needs at least two (x, y) points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("reference path coordinates must be finite")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths <= 0):
            raise ValueError("consecutive path points must be distinct")
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        tangents = seg / lengths[:, None]
        seg_normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
        normals = np.empty_like(pts)
        normals[0] = seg_normals[0]
        normals[-1] = seg_normals[-1]
        mid = seg_normals[:-1] + seg_normals[1:]
        normals[1:-1] = mid / np.hypot(mid[:, 0], mid[:, 1])[:, None]
        for name, arr in (("polyline", pts), ("cumulative_arclength", cum),
                          ("_seg", seg), ("_seg_len", lengths),
                          ("_tangents", tangents), ("_normals", normals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    def translated(self, offset) -> "ReferencePath":
        return ReferencePath(self.polyline + np.asarray(offset, dtype=float), self.path_id)

    def _locate(self, s: np.ndarray):
        s = np.clip(s, 0.0, self.length)
        idx = np.searchsorted(self.cumulative_arclength, s, side="right") - 1
        idx = np.clip(idx, 0, len(self._seg) - 1)
        t = (s - self.cumulative_arclength[idx]) / self._seg_len[idx]
        return idx, t

    def point_at(self, s):
        return from_frenet_many(np.atleast_1d(s), np.zeros(np.size(s)), self)

    def heading_at(self, s) -> np.ndarray:
        idx, _ = self._locate(np.atleast_1d(np.asarray(s, dtype=float)))
        tg = self._tangents[idx]
        return np.arctan2(tg[:, 1], tg[:, 0])

    def curvature(self) -> np.ndarray:
        """Unsigned curvature estimate at each vertex (turn angle / mean spacing)."""
        tg = self._tangents
        turn = np.abs(np.arctan2(_cross(tg[:-1, 0], tg[:-1, 1], tg[1:, 0], tg[1:, 1]),
                                 np.einsum("ij,ij->i", tg[:-1], tg[1:])))
        spacing = 0.5 * (self._seg_len[:-1] + self._seg_len[1:])
        return np.concatenate([[0.0], turn / spacing, [0.0]])


def _project_chunk(p: np.ndarray, path: ReferencePath):
    A = path.polyline[:-1]
    e = path._seg
    nA = path._normals[:-1]
    m = path._normals[1:] - nA
    qx = p[:, 0:1] - A[None, :, 0]
    qy = p[:, 1:2] - A[None, :, 1]
    a = -_cross(e[:, 0], e[:, 1], m[:, 0], m[:, 1])[None, :]
    b = _cross(qx, qy, m[None, :, 0], m[None, :, 1]) - _cross(e[:, 0], e[:, 1], nA[:, 0], nA[:, 1])[None, :]
    c = _cross(qx, qy, nA[None, :, 0], nA[None, :, 1])
    a = np.broadcast_to(a, b.shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        qq = -0.5 * (b + np.where(b >= 0, 1.0, -1.0) * sq)
        r1 = c / qq
        r2 = np.where(np.abs(a) > 1e-15 * (np.abs(b) + 1e-300), qq / a, np.nan)

    best_abs = np.full(len(p), np.inf)
    best_s = np.zeros(len(p))
    best_d = np.zeros(len(p))
    seg_start = path.cumulative_arclength[:-1][None, :]
    seg_len = path._seg_len[None, :]
    for r in (r1, r2):
        ok = (r >= -_T_TOL) & (r <= 1 + _T_TOL)
        t = np.clip(np.where(ok, r, 0.0), 0.0, 1.0)
        nx = nA[None, :, 0] + t * m[None, :, 0]
        ny = nA[None, :, 1] + t * m[None, :, 1]
        rx = qx - t * e[None, :, 0]
        ry = qy - t * e[None, :, 1]
        d = (rx * nx + ry * ny) / (nx * nx + ny * ny)
        s = seg_start + t * seg_len
        absd = np.where(ok, np.abs(d), np.inf)
        # smallest |d|, ties to the smallest s: segments are ordered by s so argmin picks the first
        j = np.argmin(absd, axis=1)
        rows = np.arange(len(p))
        cand_abs = absd[rows, j]
        cand_s = s[rows, j]
        better = (cand_abs < best_abs) | ((cand_abs == best_abs) & (cand_s < best_s))
        best_abs = np.where(better, cand_abs, best_abs)
        best_s = np.where(better, cand_s, best_s)
        best_d = np.where(better, d[rows, j], best_d)

    missing = ~np.isfinite(best_abs)
    if np.any(missing):
        # beyond the path ends: clamp to the nearest end and measure along its normal
        q = p[missing]
        ends = np.array([0.0, path.length])
        end_pts = path.polyline[[0, -1]]
        end_n = path._normals[[0, -1]]
        dist = np.hypot(q[:, None, 0] - end_pts[None, :, 0], q[:, None, 1] - end_pts[None, :, 1])
        k = np.argmin(dist, axis=1)
        best_s[missing] = ends[k]
        best_d[missing] = np.einsum("ij,ij->i", q - end_pts[k], end_n[k])
    return best_s, best_d


def to_frenet_many(points, path: ReferencePath) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``to_frenet``; ``points`` has shape (n, 2)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    s = np.empty(len(p))
    d = np.empty(len(p))
    for lo in range(0, len(p), _CHUNK):
        s[lo:lo + _CHUNK], d[lo:lo + _CHUNK] = _project_chunk(p[lo:lo + _CHUNK], path)
    return s, d


def to_frenet(point, path: ReferencePath) -> FrenetState:
    s, d = to_frenet_many(np.asarray(point, dtype=float)[None, :], path)
    return FrenetState(float(s[0]), float(d[0]))


def from_frenet_many(s, d, path: ReferencePath) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    idx, t = path._locate(s.ravel())
    A = path.polyline[idx]
    nA = path._normals[idx]
    n = nA + t[:, None] * (path._normals[idx + 1] - nA)
    out = A + t[:, None] * path._seg[idx] + d.ravel()[:, None] * n
    return out.reshape(s.shape + (2,))


def from_frenet(state, path: ReferencePath) -> tuple[float, float]:
    s, d = state
    x, y = from_frenet_many(np.array([s]), np.array([d]), path)[0]
    return float(x), float(y)
