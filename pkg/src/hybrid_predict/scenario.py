"""Synthetic driving worlds and the three distribution-shift splits.

Maps are built from straight legs and circular arcs sampled densely enough
that the polyline stays smooth. Traffic is simulated with IDM along each
agent's reference path; lateral motion is a decaying offset plus a slow
sinusoidal wobble. ``ingest_csv`` reads INTERACTION-style track files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_STRIDE,
    DT,
    HISTORY_LEN,
    LABEL_LEN,
    Dataset,
    Scene,
    Segment,
    Trajectory,
    extract_segments,
)
from .frenet import ReferencePath, from_frenet_many, to_frenet_many

VERTEX_SPACING = 0.4
VEHICLE_LENGTH = 4.0
STOP_DWELL_S = 1.0
STOP_SPEED = 0.2
STOP_RADIUS = 2.0


# ---------------------------------------------------------------- IDM


@dataclass(frozen=True)
class IdmParams:
    s0: float = 2.0
    T: float = 1.5
    a_max: float = 1.0
    b_comf: float = 1.5
    v0: float = 10.0

    def __post_init__(self):
        for name in ("s0", "T", "a_max", "b_comf", "v0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IdmParams.{name} must be positive")


def idm_desired_gap(v, dv, p: IdmParams):
    """Desired bumper-to-bumper gap; ``dv`` is own speed minus leader speed."""
    dyn = v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    return p.s0 + np.maximum(0.0, dyn)


def idm_acceleration(v, gap, dv, p: IdmParams, v0: Optional[float] = None):
    v0 = p.v0 if v0 is None else v0
    if gap <= 0:
        return -4.0 * p.b_comf
    s_star = idm_desired_gap(v, dv, p)
    return p.a_max * (1.0 - (v / v0) ** 4 - (s_star / gap) ** 2)


def idm_free_acceleration(v, p: IdmParams, v0: Optional[float] = None):
    v0 = p.v0 if v0 is None else v0
    return p.a_max * (1.0 - (v / v0) ** 4)


# ---------------------------------------------------------------- maps


@dataclass(frozen=True)
class MapSpec:
    """Road layout parameters.

    ``size`` is the circle radius for roundabouts, the bend radius for
    curved roads and the total length for straight roads.
    ``stop_sign_positions`` are arclengths along entry legs (roundabout) or
    along the single path; ``stop_sign_entries`` restricts which roundabout
    entries carry them (``None`` means every entry).
    """

    kind: str = "roundabout"
    size: float = 20.0
    exit_count: int = 4
    lane_width: float = 3.5
    stop_sign_positions: tuple = ()
    stop_sign_entries: Optional[tuple] = None
    speed_limit: float = 10.0
    arm_length: float = 60.0
    fillet_radius: float = 12.0
    include_uturns: bool = True
    map_id: str = ""

    def __post_init__(self):
        if self.kind not in ("roundabout", "curved_road", "straight_road"):
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.kind == "roundabout" and self.exit_count < 2:
            raise ValueError("roundabouts need exit_count >= 2")
        for name in ("size", "lane_width", "speed_limit", "arm_length", "fillet_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"MapSpec.{name} must be positive")

    @property
    def name(self) -> str:
        return self.map_id or f"{self.kind}-{self.size:g}-{self.exit_count}"


@dataclass(frozen=True, eq=False)
class RoadMap:
    map_id: str
    spec: MapSpec
    paths: dict
    path_entry: dict
    path_exit: dict
    stop_signs: np.ndarray
    road_polygons: dict = field(default_factory=dict)
    circle_span: dict = field(default_factory=dict)  # roundabout path id -> (s_in, s_out) on the circle

    @property
    def speed_limit(self) -> float:
        return self.spec.speed_limit

    @property
    def lane_width(self) -> float:
        return self.spec.lane_width


def _line(p0, p1, spacing=VERTEX_SPACING):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(1, int(math.ceil(np.hypot(*(p1 - p0)) / spacing)))
    t = np.linspace(0.0, 1.0, n + 1)
    return p0 + t[:, None] * (p1 - p0)


def _arc(center, radius, a0, sweep, spacing=VERTEX_SPACING):
    n = max(1, int(math.ceil(abs(sweep) * radius / spacing)))
    a = a0 + np.linspace(0.0, sweep, n + 1)
    return np.asarray(center, float) + radius * np.stack([np.cos(a), np.sin(a)], axis=1)


def _join(*pieces):
    out = [pieces[0]]
    for p in pieces[1:]:
        out.append(p[1:])
    pts = np.concatenate(out)
    keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-9])
    return pts[keep]


def _lane_polygon(path: ReferencePath, width: float) -> np.ndarray:
    left = from_frenet_many(path.cumulative_arclength, np.full(len(path.polyline), width / 2), path)
    right = from_frenet_many(path.cumulative_arclength, np.full(len(path.polyline), -width / 2), path)
    return np.concatenate([left, right[::-1]])


def _roundabout_paths(spec: MapSpec, rng: np.random.Generator):
    R, rf, w = spec.size, spec.fillet_radius, spec.lane_width
    n = spec.exit_count
    base = rng.uniform(0, 2 * math.pi)
    phis = [base + 2 * math.pi * k / n + rng.uniform(-0.12, 0.12) for k in range(n)]
    rho = math.sqrt((R + rf) ** 2 - (w / 2 + rf) ** 2)
    far = R + spec.arm_length

    def frame(phi):
        return np.array([math.cos(phi), math.sin(phi)]), np.array([-math.sin(phi), math.cos(phi)])

    entries, exits = [], []
    for phi in phis:
        u, v = frame(phi)
        # entering: drive inward on the +v side, right turn onto the circle
        cf = rho * u + (w / 2 + rf) * v
        t1 = rho * u + (w / 2) * v
        t2 = R * cf / np.linalg.norm(cf)
        g1 = math.atan2(*(t1 - cf)[::-1])
        g2 = math.atan2(*(t2 - cf)[::-1])
        sweep = -((g1 - g2) % (2 * math.pi))
        entry_pts = _join(_line(far * u + (w / 2) * v, t1), _arc(cf, rf, g1, sweep))
        entries.append((entry_pts, math.atan2(t2[1], t2[0])))
        # exiting: leave the circle with a right turn onto the -v side
        ce = rho * u - (w / 2 + rf) * v
        e1 = R * ce / np.linalg.norm(ce)
        e2 = rho * u - (w / 2) * v
        h1 = math.atan2(*(e1 - ce)[::-1])
        h2 = math.atan2(*(e2 - ce)[::-1])
        sweep_e = -((h1 - h2) % (2 * math.pi))
        exit_pts = _join(_arc(ce, rf, h1, sweep_e), _line(e2, far * u - (w / 2) * v))
        exits.append((exit_pts, math.atan2(e1[1], e1[0])))

    paths, p_entry, p_exit, span = {}, {}, {}, {}
    for i, (entry_pts, alpha) in enumerate(entries):
        for j, (exit_pts, beta) in enumerate(exits):
            if i == j and not spec.include_uturns:
                continue
            ang = (beta - alpha) % (2 * math.pi)
            pts = _join(entry_pts, _arc((0.0, 0.0), R, alpha, ang), exit_pts)
            pid = f"{i}->{j}"
            paths[pid] = ReferencePath(pts, pid)
            p_entry[pid], p_exit[pid] = i, j
            s_in = ReferencePath(entry_pts).length
            span[pid] = (s_in, s_in + R * ang)
    entry_paths = [ReferencePath(e[0], f"entry{i}") for i, e in enumerate(entries)]
    return paths, p_entry, p_exit, entry_paths, span


def generate_map(spec: MapSpec, seed: int = 0) -> RoadMap:
    """Build reference paths, lane polygons and stop signs for ``spec``."""
    rng = np.random.default_rng([seed, 7919])
    stop_pts = []
    span = {}
    if spec.kind == "roundabout":
        paths, p_entry, p_exit, entry_paths, span = _roundabout_paths(spec, rng)
        entries = range(spec.exit_count) if spec.stop_sign_entries is None else spec.stop_sign_entries
        for i in entries:
            for s in spec.stop_sign_positions:
                stop_pts.append(entry_paths[i].point_at(min(s, entry_paths[i].length))[0])
    else:
        heading = rng.uniform(0, 2 * math.pi)
        rot = np.array([[math.cos(heading), -math.sin(heading)], [math.sin(heading), math.cos(heading)]])
        if spec.kind == "straight_road":
            pts = _line((0.0, 0.0), (spec.size, 0.0))
        else:
            R = spec.size
            lead = spec.arm_length
            bend = _arc((lead, R), R, -math.pi / 2, math.pi / 2)
            tail = _line(bend[-1], bend[-1] + np.array([0.0, spec.arm_length + 20.0]))
            pts = _join(_line((0.0, 0.0), (lead, 0.0)), bend, tail)
        pts = pts @ rot.T
        path = ReferencePath(pts, "0->0")
        paths, p_entry, p_exit = {"0->0": path}, {"0->0": 0}, {"0->0": 0}
        for s in spec.stop_sign_positions:
            stop_pts.append(path.point_at(min(s, path.length))[0])
    polys = {pid: _lane_polygon(p, spec.lane_width) for pid, p in paths.items()}
    signs = np.array(stop_pts, dtype=float).reshape(-1, 2)
    return RoadMap(spec.name, spec, paths, p_entry, p_exit, signs, polys, span)


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True, eq=False)
class SimTrack:
    trajectory: Trajectory
    path_id: str
    start_step: int
    frenet: np.ndarray  # (n, 2) of (s, d)
    desired_speed: float


@dataclass
class _Agent:
    idx: int
    path_id: str
    spawn_step: int
    v_des: float
    a_lat: float
    d0: float
    wobble_amp: float
    wobble_omega: float
    wobble_phase: float
    s: float = 0.0
    v: float = 0.0
    t_alive: int = 0
    signs: list = field(default_factory=list)
    dwell: int = 0
    alive: bool = False
    done: bool = False
    history: list = field(default_factory=list)


class _PairMaps:
    """Cached projections of every path's vertices onto every other path."""

    def __init__(self, road: RoadMap):
        self.road = road
        self._cache = {}

    def get(self, src: str, dst: str):
        key = (src, dst)
        if key not in self._cache:
            p_src = self.road.paths[src]
            grid = np.arange(0.0, p_src.length, 1.0)
            grid = np.append(grid, p_src.length)
            if src == dst:
                self._cache[key] = (grid, grid.copy(), np.zeros_like(grid))
            else:
                xy = p_src.point_at(grid)
                s, d = to_frenet_many(xy, self.road.paths[dst])
                self._cache[key] = (grid, s, d)
        return self._cache[key]

    def project(self, src: str, s_src: float, dst: str):
        grid, s, d = self.get(src, dst)
        return float(np.interp(s_src, grid, s)), float(np.interp(s_src, grid, d))


def _smoothed_curvature(path: ReferencePath, window_m: float = 4.0) -> np.ndarray:
    k = path.curvature()
    n = max(1, int(round(window_m / VERTEX_SPACING)))
    kernel = np.ones(n) / n
    return np.convolve(k, kernel, mode="same")


def _speed_cap_profile(path: ReferencePath, a_lat: float, b_comf: float) -> tuple[np.ndarray, np.ndarray]:
    """Highest speed at each vertex from which curve speeds ahead stay comfortably reachable."""
    s = path.cumulative_arclength
    k = _smoothed_curvature(path)
    with np.errstate(divide="ignore"):
        v_curve = np.where(k > 1e-6, np.sqrt(a_lat / np.maximum(k, 1e-12)), np.inf)
    cap = v_curve.copy()
    # backward pass: v(s)^2 <= v(s')^2 + 2 b (s' - s)
    for i in range(len(s) - 2, -1, -1):
        reach = math.sqrt(cap[i + 1] ** 2 + 2 * b_comf * (s[i + 1] - s[i])) if np.isfinite(cap[i + 1]) else np.inf
        cap[i] = min(cap[i], reach)
    return s, cap


def simulate_tracks(
    road: RoadMap,
    n_agents: int,
    duration_steps: int,
    idm: Optional[IdmParams] = None,
    seed: int = 0,
    speed_noise: float = 0.1,
    path_ids: Optional[Sequence[str]] = None,
    spawn_gap: float = 20.0,
    dt: float = DT,
) -> list[SimTrack]:
    """Run IDM traffic on ``road`` and return every agent's trajectory.

    Agents spawn at the start of a randomly chosen reference path at seeded
    times and leave when they reach its end. Longitudinally each follows IDM
    against the nearest agent ahead on its own path (others are projected
    onto it) and against stop signs, which act as a standing leader until the
    agent has dwelt at rest for one second. In a roundabout, agents on the
    circle ignore agents still on an entry leg, so entering traffic yields.
    ``speed_noise`` scales every
    agent's desired speed and curve comfort by a factor in
    ``1 +- speed_noise``.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    idm = idm or IdmParams(v0=road.speed_limit)
    rng = np.random.default_rng([seed, 104729])
    pair = _PairMaps(road)
    ids = list(path_ids) if path_ids is not None else sorted(road.paths)
    lane_w = road.lane_width
    v_base = min(idm.v0, road.speed_limit)

    sign_s = {}
    for pid, path in road.paths.items():
        if len(road.stop_signs):
            s, d = to_frenet_many(road.stop_signs, path)
            ok = (np.abs(d) < 1.0) & (s > 0) & (s < path.length)
            sign_s[pid] = sorted(s[ok].tolist())
        else:
            sign_s[pid] = []
    caps = {}

    spawn_hi = max(1, duration_steps - int(10.0 / dt))
    spawn_steps = np.sort(rng.integers(0, spawn_hi, size=n_agents))
    agents = []
    for k in range(n_agents):
        f = 1.0 + rng.uniform(-speed_noise, speed_noise) if speed_noise > 0 else 1.0
        a = _Agent(
            idx=k,
            path_id=ids[int(rng.integers(len(ids)))],
            spawn_step=int(spawn_steps[k]),
            v_des=v_base * f,
            a_lat=2.0 * f,
            d0=float(rng.uniform(-0.3, 0.3)),
            wobble_amp=float(rng.uniform(0.0, 0.08)),
            wobble_omega=2 * math.pi / float(rng.uniform(4.0, 8.0)),
            wobble_phase=float(rng.uniform(0, 2 * math.pi)),
        )
        a.signs = list(sign_s[a.path_id])
        agents.append(a)

    def lateral(a: _Agent, t: float) -> float:
        wob = a.wobble_amp * (math.sin(a.wobble_omega * t + a.wobble_phase) - math.sin(a.wobble_phase))
        return a.d0 * math.exp(-t / 3.0) + wob

    def cap_at(a: _Agent, s: float) -> float:
        key = (a.path_id, round(a.a_lat, 12))
        if key not in caps:
            caps[key] = _speed_cap_profile(road.paths[a.path_id], a.a_lat, idm.b_comf)
        grid, cap = caps[key]
        c = float(np.interp(s, grid, np.minimum(cap, 1e6)))
        return max(c, 0.5)

    def entering(a: _Agent) -> bool:
        span = road.circle_span.get(a.path_id)
        return span is not None and a.s < span[0]

    def leaders(a: _Agent, alive: list[_Agent]):
        best_gap, best_v = math.inf, 0.0
        circulating = a.path_id in road.circle_span and not entering(a)
        for o in alive:
            if o is a:
                continue
            if circulating and entering(o):
                # circulating traffic has priority; entering agents yield
                continue
            s_o, d_o = pair.project(o.path_id, o.s, a.path_id)
            if abs(d_o) > 0.75 * lane_w:
                continue
            ds = s_o - a.s
            if 0.0 < ds < 60.0 and ds < best_gap:
                best_gap, best_v = ds, o.v
        return best_gap - VEHICLE_LENGTH, best_v

    for step in range(duration_steps):
        alive = [a for a in agents if a.alive]
        # spawn when the start of the path is clear
        for a in agents:
            if a.alive or a.done or a.spawn_step > step:
                continue
            blocked = False
            for o in alive:
                s_o, d_o = pair.project(o.path_id, o.s, a.path_id)
                if abs(d_o) < lane_w and s_o < spawn_gap + VEHICLE_LENGTH:
                    blocked = True
                    break
            if blocked:
                continue
            a.alive = True
            a.s = 0.0
            a.v = min(a.v_des, cap_at(a, 0.0))
            a.spawn_step = step
            alive.append(a)

        accels = {}
        for a in alive:
            v0 = min(a.v_des, cap_at(a, a.s))
            gap, v_lead = leaders(a, alive)
            acc = idm_free_acceleration(a.v, idm, v0)
            if math.isfinite(gap):
                acc = idm_acceleration(a.v, gap, a.v - v_lead, idm, v0)
            while a.signs and a.signs[0] < a.s - 0.5:
                a.signs.pop(0)
            if a.signs:
                to_sign = a.signs[0] - a.s
                if a.dwell > 0 or (a.v < STOP_SPEED and 0 <= to_sign < STOP_RADIUS):
                    accels[a.idx] = None
                    continue
                sign_gap = to_sign + 0.75 * idm.s0
                acc = min(acc, idm_acceleration(a.v, sign_gap, a.v, idm, v0))
            accels[a.idx] = max(acc, -4.0 * idm.b_comf)

        for a in alive:
            t = a.t_alive * dt
            a.history.append((a.s, lateral(a, t)))
            acc = accels[a.idx]
            if acc is None:
                a.v = 0.0
                a.dwell += 1
                if a.dwell >= int(round(STOP_DWELL_S / dt)):
                    a.dwell = 0
                    a.signs.pop(0)
            else:
                a.v = max(0.0, a.v + acc * dt)
                a.s += a.v * dt
            a.t_alive += 1
            if a.s >= road.paths[a.path_id].length - 0.5:
                a.alive = False
                a.done = True

    tracks = []
    for a in agents:
        if len(a.history) < 1:
            continue
        fr = np.array(a.history)
        xy = from_frenet_many(fr[:, 0], fr[:, 1], road.paths[a.path_id])
        tracks.append(SimTrack(Trajectory(xy, dt), a.path_id, a.spawn_step, fr, a.v_des))
    return tracks


# ---------------------------------------------------------------- scenes


def scenes_from_tracks(
    road: RoadMap,
    tracks: Sequence[SimTrack],
    stride: int = DEFAULT_STRIDE,
    neighbor_radius: float = 30.0,
    history_len: int = HISTORY_LEN,
    label_len: int = LABEL_LEN,
    id_prefix: str = "",
) -> list[Segment]:
    """Slice every track into segments and attach neighbours and map context."""
    out = []
    for ti, tr in enumerate(tracks):
        for seg in extract_segments(tr.trajectory, history_len, label_len, stride):
            offset = int(seg.segment_id)
            t_last = tr.start_step + offset + history_len - 1
            t_first = t_last - history_len + 1
            origin = seg.scene.target_history.points[-1]
            neigh, neigh_paths = [], []
            for oj, o in enumerate(tracks):
                if oj == ti:
                    continue
                lo = t_first - o.start_step
                hi = t_last - o.start_step
                if lo < 0 or hi >= len(o.trajectory):
                    continue
                pts = o.trajectory.points[lo:hi + 1]
                if np.hypot(*(pts[-1] - origin)) > neighbor_radius:
                    continue
                neigh.append(Trajectory(pts, tr.trajectory.dt))
                neigh_paths.append(road.paths[o.path_id])
            scene = Scene(
                target_history=seg.scene.target_history,
                neighbor_histories=tuple(neigh),
                reference_path=road.paths[tr.path_id],
                map_id=road.map_id,
                stop_signs=road.stop_signs,
                speed_limit=road.speed_limit,
                neighbor_paths=tuple(neigh_paths),
                lane_width=road.lane_width,
            )
            out.append(Segment(scene, seg.label, f"{id_prefix}t{ti}o{offset}"))
    return out


# ---------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseSpec:
    mu: float = 0.5
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")


def add_noise(history: Trajectory, noise: NoiseSpec) -> Trajectory:
    """Add i.i.d. Normal(mu, sigma^2) to every coordinate of ``history``."""
    rng = np.random.default_rng(noise.seed)
    offsets = noise.mu + noise.sigma * rng.standard_normal(history.points.shape)
    return Trajectory(history.points + offsets, history.dt)


def noisy_scene(scene: Scene, noise: NoiseSpec) -> Scene:
    """Noise the target and every neighbour history with independent draws."""
    target = add_noise(scene.target_history, replace(noise, seed=noise.seed * 1000003))
    neigh = tuple(
        add_noise(h, replace(noise, seed=noise.seed * 1000003 + k + 1))
        for k, h in enumerate(scene.neighbor_histories)
    )
    return replace(scene, target_history=target, neighbor_histories=neigh, noisy=True)


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    train_maps: tuple
    test_maps: tuple
    train_exit_filter: Optional[int] = None
    noise: Optional[NoiseSpec] = None
    counts: tuple = (2000, 400, 800)
    seed: int = 0
    agents_per_episode: int = 40
    episode_steps: int = 900
    stride: int = DEFAULT_STRIDE
    neighbor_radius: float = 30.0
    max_episodes: int = 400
    min_episodes: int = 8  # each split draws from at least this many episodes

    def __post_init__(self):
        if self.id not in ("I", "II", "III"):
            raise ValueError(f"unknown experiment id {self.id!r}")
        if not self.train_maps or not self.test_maps:
            raise ValueError("experiment needs train and test maps")
        if any(c < 1 for c in self.counts):
            raise ValueError("segment counts must be positive")


# U-turns are off in the presets: a U-turn through the selected exit sweeps the
# whole circle and would hide most of the Experiment I shift
ROUNDABOUT_A = MapSpec("roundabout", 20.0, 4, stop_sign_positions=(52.0,), stop_sign_entries=(1,),
                       include_uturns=False, map_id="roundabout-A")
ROUNDABOUT_B = MapSpec("roundabout", 24.0, 3, stop_sign_positions=(52.0,), stop_sign_entries=(0,),
                       fillet_radius=9.0, include_uturns=False, map_id="roundabout-B")
CURVED_C = MapSpec("curved_road", 22.0, stop_sign_positions=(150.0,), arm_length=70.0, map_id="curved-C")


def default_experiment(exp_id: str, seed: int = 0, **overrides) -> ExperimentSpec:
    if exp_id == "I":
        spec = ExperimentSpec("I", (ROUNDABOUT_A,), (ROUNDABOUT_A,), train_exit_filter=0, seed=seed)
    elif exp_id == "II":
        spec = ExperimentSpec("II", (ROUNDABOUT_A,), (ROUNDABOUT_B, CURVED_C), seed=seed)
    elif exp_id == "III":
        spec = ExperimentSpec("III", (ROUNDABOUT_A, CURVED_C), (ROUNDABOUT_A, CURVED_C),
                              noise=NoiseSpec(0.5, 0.1, seed), seed=seed)
    else:
        raise ValueError(f"unknown experiment id {exp_id!r}")
    return replace(spec, **overrides) if overrides else spec


def _collect(spec: ExperimentSpec, maps: Sequence[RoadMap], needed: int, stream: int,
             exit_filter: Optional[int], split: str) -> list[Segment]:
    pool: list[Segment] = []
    ep = 0
    cap = max(1, math.ceil(needed / spec.min_episodes))
    while len(pool) < needed:
        if ep >= spec.max_episodes:
            raise ValueError(
                f"experiment {spec.id}: {split} split needs {needed} segments but only "
                f"{len(pool)} were generated in {spec.max_episodes} episodes (short by {needed - len(pool)})"
            )
        road = maps[ep % len(maps)]
        tracks = simulate_tracks(road, spec.agents_per_episode, spec.episode_steps,
                                 seed=hash_seed(spec.seed, stream, ep))
        segs = scenes_from_tracks(road, tracks, spec.stride, spec.neighbor_radius,
                                  id_prefix=f"{split}-e{ep}-")
        if exit_filter is not None:
            segs = [s for s in segs if road.path_exit[s.scene.reference_path.path_id] == exit_filter]
        if len(segs) > cap:
            keep = np.random.default_rng([spec.seed, stream, ep, 17]).choice(len(segs), cap, replace=False)
            segs = [segs[i] for i in sorted(keep)]
        pool.extend(segs)
        ep += 1
    rng = np.random.default_rng([spec.seed, stream, 31])
    order = rng.permutation(len(pool))[:needed]
    return [pool[i] for i in sorted(order)]


def hash_seed(*parts: int) -> int:
    """Stable 63-bit seed derived from integer parts."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(2, np.uint64)[0] >> 1)


def build_maps(specs: Sequence[MapSpec], seed: int) -> list[RoadMap]:
    return [generate_map(m, hash_seed(seed, 11, i)) for i, m in enumerate(specs)]


def build_experiment(spec: ExperimentSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Generate the train/val/test datasets of one distribution-shift protocol.

    I: train and val keep only targets leaving through ``train_exit_filter``;
    test uses every path of the same map. II: train/val on ``train_maps``,
    test on ``test_maps``. III: same map pool everywhere, test histories get
    ``spec.noise``.
    """
    n_train, n_val, n_test = spec.counts
    train_maps = build_maps(spec.train_maps, spec.seed)
    if spec.id == "II":
        test_maps = build_maps(spec.test_maps, spec.seed + 1)
        if {m.map_id for m in test_maps} & {m.map_id for m in train_maps}:
            raise ValueError("experiment II needs test maps distinct from the training maps")
    else:
        test_maps = train_maps
    flt = spec.train_exit_filter if spec.id == "I" else None
    train = _collect(spec, train_maps, n_train, 1, flt, "train")
    val = _collect(spec, train_maps, n_val, 2, flt, "val")
    test = _collect(spec, test_maps, n_test, 3, None, "test")
    if spec.id == "III":
        noise = spec.noise or NoiseSpec()
        test = [
            Segment(noisy_scene(s.scene, replace(noise, seed=hash_seed(noise.seed, k))), s.label, s.segment_id)
            for k, s in enumerate(test)
        ]
    prov = f"experiment {spec.id} seed {spec.seed}"
    return Dataset(train, "train", prov), Dataset(val, "val", prov), Dataset(test, "test", prov)


# ---------------------------------------------------------------- ingestion

CSV_COLUMNS = ("track_id", "frame_id", "timestamp_ms", "agent_type", "x", "y", "vx", "vy",
               "psi_rad", "length", "width")


def ingest_csv(path) -> dict:
    """Read an INTERACTION-style track CSV into position trajectories.

    Returns ``{track_id: [Trajectory, ...]}``; a track is split wherever
    consecutive frames are more than one frame apart.
    """
    rows: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in CSV_COLUMNS:
            if col not in header:
                raise ValueError(f"{path}: missing required column {col!r}")
        for line_no, row in enumerate(reader, start=2):
            try:
                tid = row["track_id"].strip()
                ts = int(float(row["timestamp_ms"]))
                x, y = float(row["x"]), float(row["y"])
            except (TypeError, ValueError, AttributeError) as exc:
                raise ValueError(f"{path}: malformed row at line {line_no}: {exc}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"{path}: malformed row at line {line_no}: non-finite coordinate")
            rows.setdefault(tid, []).append((ts, x, y))

    frame_ms = int(round(DT * 1000))
    out = {}
    for tid, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        pieces, cur = [], [recs[0]]
        for prev, rec in zip(recs, recs[1:]):
            if rec[0] - prev[0] > frame_ms:
                pieces.append(cur)
                cur = []
            cur.append(rec)
        pieces.append(cur)
        out[tid] = [Trajectory(np.array([(r[1], r[2]) for r in p]), DT) for p in pieces]
    return out
