"""Planning-based predictor: linear feature cost, max-ent IRL, argmin decoding.

Trajectories scored by the cost always include the agent's current position
as step 0 followed by the ``label_len`` predicted steps, so every sum runs
over ``label_len + 1`` points.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import DT, LABEL_LEN, Dataset, Scene, Trajectory, as_points, speeds
from .frenet import ReferencePath, from_frenet_many, to_frenet_many
from .scenario import VEHICLE_LENGTH, IdmParams, idm_desired_gap

log = logging.getLogger(__name__)

FEATURE_NAMES = ("speed", "idm", "acc", "jerk", "dist", "goal")
N_FEATURES = len(FEATURE_NAMES)
LEADER_RANGE = 30.0
STOP_SIGN_LATERAL = 2.0


@dataclass(frozen=True)
class CostWeights:
    theta: tuple
    beta: float = 1.0

    def __post_init__(self):
        th = tuple(float(x) for x in self.theta)
        if len(th) != N_FEATURES:
            raise ValueError(f"theta needs {N_FEATURES} weights")
        if any(x < 0 or not np.isfinite(x) for x in th):
            raise ValueError("theta must be finite and nonnegative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "theta", th)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.theta)

    def to_json(self) -> str:
        return json.dumps({"theta": list(self.theta), "beta": self.beta})

    @classmethod
    def from_json(cls, text: str) -> "CostWeights":
        obj = json.loads(text)
        return cls(tuple(obj["theta"]), float(obj["beta"]))


@dataclass(frozen=True)
class CandidateFamily:
    accel_grid: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0)
    phases: int = 3
    lateral_decay_steps: int = 10
    label_len: int = LABEL_LEN
    max_candidates: int = 343

    def __post_init__(self):
        if not self.accel_grid:
            raise ValueError("accel_grid must be nonempty")
        if self.phases < 1 or self.lateral_decay_steps < 1:
            raise ValueError("phases and lateral_decay_steps must be >= 1")
        if len(self.accel_grid) ** self.phases > self.max_candidates:
            raise ValueError("candidate count exceeds max_candidates")

    @property
    def size(self) -> int:
        return len(self.accel_grid) ** self.phases


@dataclass(frozen=True)
class IrlConfig:
    learning_rate: float = 0.5
    iterations: int = 300
    l2_reg: float = 1e-4
    beta: float = 1.0
    seed: int = 0
    family: CandidateFamily = field(default_factory=CandidateFamily)
    idm: IdmParams = field(default_factory=IdmParams)
    vehicle_length: float = 4.0
    vehicle_width: float = 1.8


# ---------------------------------------------------------------- features


def _sq_speed_dev(v: np.ndarray, v_lim: float) -> np.ndarray:
    return np.sum((v - v_lim) ** 2, axis=-1)


def _long_speeds(s: np.ndarray, dt: float) -> np.ndarray:
    """(..., T) arclengths -> (..., T) longitudinal speeds, last step reused."""
    step = np.diff(s, axis=-1) / dt
    return np.concatenate([step, step[..., -1:]], axis=-1)


def kinematic_sums(acc: np.ndarray, dt: float) -> tuple:
    """(sum a_t^2, sum ((a_t - a_{t-1}) / dt)^2) over the last axis."""
    acc = np.asarray(acc, dtype=float)
    f_acc = np.sum(acc ** 2, axis=-1)
    f_jerk = np.sum((np.diff(acc, axis=-1) / dt) ** 2, axis=-1)
    return f_acc, f_jerk


def _kinematics_from_speeds(v: np.ndarray, dt: float):
    # drop the reused last speed so accelerations come from true differences
    acc = np.diff(v[..., :-1], axis=-1) / dt
    return kinematic_sums(acc, dt)


def _idm_term(gap, v, v_lead, idm: IdmParams):
    desired = idm_desired_gap(v, v - v_lead, idm)
    return np.sum((gap - desired) ** 2, axis=-1)


def _dist_term(sd: np.ndarray, others_sd: np.ndarray, l: float, w: float):
    """sd (..., T, 2); others_sd (K, T, 2)."""
    if len(others_sd) == 0:
        return np.zeros(sd.shape[:-2])
    ds = sd[..., None, :, 0] - others_sd[:, :, 0]
    dd = sd[..., None, :, 1] - others_sd[:, :, 1]
    return np.sum(np.exp(-(ds ** 2) / l ** 2 - (dd ** 2) / w ** 2), axis=(-2, -1))


def _traj_speeds(pts: np.ndarray, dt: float, path: Optional[ReferencePath]) -> np.ndarray:
    if path is None:
        return speeds(pts, dt)
    return _long_speeds(to_frenet_many(pts, path)[0], dt)


def feature_speed(traj, v_lim: float, dt: Optional[float] = None, path: Optional[ReferencePath] = None) -> float:
    """Sum over steps of (v_t - v_lim)^2 with finite-difference speeds.

    With a ``path`` the speeds are longitudinal (arclength rate), so the
    lateral settling of a candidate does not count as speed.
    """
    pts = as_points(traj)
    dt = dt if dt is not None else getattr(traj, "dt", DT)
    if len(pts) < 2:
        raise ValueError("feature_speed needs at least two points")
    return float(_sq_speed_dev(_traj_speeds(pts, dt, path), v_lim))


def feature_idm(traj, leader, idm: IdmParams, path: Optional[ReferencePath] = None,
                vehicle_length: float = VEHICLE_LENGTH) -> float:
    """Squared deviation of the headway to ``leader`` from the IDM desired gap.

    Headway is the bumper-to-bumper gap: Frenet arclength difference along
    ``path`` (Euclidean distance when no path is given) minus the vehicle
    length. Without a leader the feature is zero.
    """
    if leader is None:
        return 0.0
    a, b = as_points(traj), as_points(leader)
    if a.shape != b.shape:
        raise ValueError("leader must be aligned with the trajectory")
    dt = getattr(traj, "dt", DT)
    if path is not None:
        s_a, _ = to_frenet_many(a, path)
        s_b, _ = to_frenet_many(b, path)
        gap = s_b - s_a - vehicle_length
        return float(_idm_term(gap, _long_speeds(s_a, dt), _long_speeds(s_b, dt), idm))
    gap = np.hypot(*(b - a).T) - vehicle_length
    return float(_idm_term(gap, speeds(a, dt), speeds(b, dt), idm))


def feature_kinematics(traj, path: Optional[ReferencePath] = None) -> tuple[float, float]:
    """(sum a_t^2, sum jerk_t^2); speeds are longitudinal when ``path`` is given."""
    pts = as_points(traj)
    if len(pts) < 3:
        raise ValueError("feature_kinematics needs at least three points")
    dt = getattr(traj, "dt", DT)
    f_acc, f_jerk = _kinematics_from_speeds(_traj_speeds(pts, dt, path), dt)
    return float(f_acc), float(f_jerk)


def feature_distance(traj, others: Sequence, l: float, w: float, path: ReferencePath) -> float:
    """Gaussian-shaped proximity to other agents, measured in Frenet coordinates."""
    if not others:
        return 0.0
    sd = np.stack(to_frenet_many(as_points(traj), path), axis=-1)
    osd = np.stack([np.stack(to_frenet_many(as_points(o), path), axis=-1) for o in others])
    return float(_dist_term(sd, osd, l, w))


def goal_points(scene: Scene, current_s: float, n_steps: int, dt: float) -> np.ndarray:
    """Per-step short-term goal: a stop sign inside the speed-limit horizon, else speed-limit progress."""
    path = scene.reference_path
    horizon = scene.speed_limit * (n_steps - 1) * dt
    if len(scene.stop_signs):
        s_sign, d_sign = to_frenet_many(scene.stop_signs, path)
        ahead = (np.abs(d_sign) < STOP_SIGN_LATERAL) & (s_sign > current_s + 1.0) & (s_sign <= current_s + horizon)
        if np.any(ahead):
            s_goal = float(np.min(s_sign[ahead]))
            return np.repeat(path.point_at(s_goal), n_steps, axis=0)
    s = current_s + scene.speed_limit * dt * np.arange(n_steps)
    return path.point_at(s)


def feature_goal(traj, scene: Scene) -> float:
    pts = as_points(traj)
    dt = getattr(traj, "dt", DT)
    s0, _ = to_frenet_many(pts[:1], scene.reference_path)
    g = goal_points(scene, float(s0[0]), len(pts), dt)
    return float(np.sum((pts - g) ** 2))


def cost(theta, f) -> float:
    th = theta.vector if isinstance(theta, CostWeights) else np.asarray(theta, float)
    return float(np.dot(th, np.asarray(f, dtype=float)))


# ---------------------------------------------------------------- context


@dataclass
class _FeatureContext:
    """Everything the batched feature kernel needs for one agent."""

    path: ReferencePath
    v_lim: float
    dt: float
    goals: np.ndarray
    others_sd: np.ndarray
    leader_sd: Optional[np.ndarray]
    leader_v: Optional[np.ndarray]
    idm: IdmParams
    l: float
    w: float
    vehicle_length: float


SPEED_WINDOW = 4  # history steps averaged by estimate_speed; longer lags, shorter amplifies input noise


def estimate_speed(history: Trajectory, path: Optional[ReferencePath] = None, window: int = SPEED_WINDOW) -> float:
    """Mean finite-difference speed over the last ``window`` history steps (progress along ``path`` if given)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    pts = history.points[-(window + 1):]
    if len(pts) < 2:
        return 0.0
    if path is not None:
        s, _ = to_frenet_many(pts, path)
        return max(0.0, float((s[-1] - s[0]) / ((len(pts) - 1) * history.dt)))
    return float(np.mean(np.hypot(*np.diff(pts, axis=0).T)) / history.dt)


def _with_current(history: Trajectory, future) -> np.ndarray:
    return np.concatenate([history.points[-1:], as_points(future)], axis=0)


def _find_leader(path: ReferencePath, s0: float, others_sd: np.ndarray, lane_width: float):
    best, best_ds = None, np.inf
    for k in range(len(others_sd)):
        ds = others_sd[k, 0, 0] - s0
        if abs(others_sd[k, 0, 1]) < 0.75 * lane_width and 0.0 < ds < LEADER_RANGE and ds < best_ds:
            best, best_ds = k, ds
    return best


def _context(scene: Scene, others_full: Sequence[np.ndarray], cfg: IrlConfig, s0: float, n_steps: int,
             dt: float) -> _FeatureContext:
    path = scene.reference_path
    if others_full:
        flat = np.concatenate(others_full)
        s, d = to_frenet_many(flat, path)
        others_sd = np.stack([s, d], axis=-1).reshape(len(others_full), n_steps, 2)
    else:
        others_sd = np.zeros((0, n_steps, 2))
    lead = _find_leader(path, s0, others_sd, scene.lane_width)
    leader_sd = leader_v = None
    if lead is not None:
        leader_sd = others_sd[lead]
        leader_v = _long_speeds(leader_sd[:, 0], dt)
    return _FeatureContext(
        path=path, v_lim=scene.speed_limit, dt=dt, goals=goal_points(scene, s0, n_steps, dt),
        others_sd=others_sd, leader_sd=leader_sd, leader_v=leader_v, idm=cfg.idm,
        l=cfg.vehicle_length, w=cfg.vehicle_width, vehicle_length=VEHICLE_LENGTH,
    )


def batch_features(xy: np.ndarray, sd: np.ndarray, ctx: _FeatureContext) -> np.ndarray:
    """Feature matrix (..., 6) for trajectories xy/sd of shape (..., T, 2)."""
    v = _long_speeds(sd[..., 0], ctx.dt)
    f_v = _sq_speed_dev(v, ctx.v_lim)
    if ctx.leader_sd is not None:
        gap = ctx.leader_sd[:, 0] - sd[..., 0] - ctx.vehicle_length
        f_idm = _idm_term(gap, v, ctx.leader_v, ctx.idm)
    else:
        f_idm = np.zeros(xy.shape[:-2])
    f_acc, f_jerk = _kinematics_from_speeds(v, ctx.dt)
    f_dist = _dist_term(sd, ctx.others_sd, ctx.l, ctx.w)
    f_g = np.sum((xy - ctx.goals) ** 2, axis=(-2, -1))
    return np.stack([f_v, f_idm, f_acc, f_jerk, f_dist, f_g], axis=-1)


# ---------------------------------------------------------------- candidates


@dataclass(frozen=True, eq=False)
class Candidates:
    xy: np.ndarray  # (C, L, 2) predicted steps only
    sd: np.ndarray  # (C, L, 2)
    accels: np.ndarray  # (C, phases)
    s0: float
    d0: float
    v0: float


def _rollout(s0, d0, v0, acc_steps: np.ndarray, family: CandidateFamily, path: ReferencePath, dt: float):
    C, L = acc_steps.shape
    v = np.empty((C, L))
    cur = np.full(C, v0)
    for t in range(L):
        cur = np.maximum(0.0, cur + acc_steps[:, t] * dt)
        v[:, t] = cur
    s = s0 + np.cumsum(v * dt, axis=1)
    k = np.arange(1, L + 1)
    d = d0 * np.maximum(0.0, 1.0 - k / family.lateral_decay_steps)
    d = np.broadcast_to(d, (C, L))
    xy = from_frenet_many(s, d, path)
    return xy, np.stack([np.minimum(s, path.length), d], axis=-1)


def sample_candidates(scene: Scene, family: CandidateFamily = CandidateFamily(), dt: Optional[float] = None) -> Candidates:
    """Enumerate piecewise-constant-acceleration trajectories along the reference path."""
    path = scene.reference_path
    if path is None:
        raise ValueError("scene has no reference path")
    dt = dt or scene.target_history.dt
    s_cur, d_cur = to_frenet_many(scene.target_history.points[-1:], path)
    v0 = estimate_speed(scene.target_history, path)
    combos = np.array(list(itertools.product(family.accel_grid, repeat=family.phases)), dtype=float)
    L = family.label_len
    phase_of_step = np.minimum((np.arange(L) * family.phases) // L, family.phases - 1)
    acc_steps = combos[:, phase_of_step]
    xy, sd = _rollout(float(s_cur[0]), float(d_cur[0]), v0, acc_steps, family, path, dt)
    return Candidates(xy, sd, combos, float(s_cur[0]), float(d_cur[0]), v0)


# ---------------------------------------------------------------- prediction


def constant_speed_prediction(history: Trajectory, path: Optional[ReferencePath], n_steps: int = LABEL_LEN) -> Trajectory:
    """Continue at the current speed, along ``path`` when known, else straight ahead."""
    dt = history.dt
    v = estimate_speed(history, path)
    if path is not None:
        s_cur, d_cur = to_frenet_many(history.points[-1:], path)
        s = s_cur[0] + v * dt * np.arange(1, n_steps + 1)
        d = np.full(n_steps, d_cur[0])
        return Trajectory(from_frenet_many(s, d, path), dt)
    pts = history.points
    if len(pts) >= 2:
        step = (pts[-1] - pts[max(0, len(pts) - 4)]) / (min(3, len(pts) - 1))
    else:
        step = np.zeros(2)
    return Trajectory(pts[-1] + np.arange(1, n_steps + 1)[:, None] * step, dt)


def _scene_features(scene: Scene, cands: Candidates, others_pred: Sequence, cfg: IrlConfig):
    dt = scene.target_history.dt
    n = cands.xy.shape[1] + 1
    others_full = [_with_current(h, p) for h, p in others_pred]
    ctx = _context(scene, others_full, cfg, cands.s0, n, dt)
    cur_xy = np.broadcast_to(scene.target_history.points[-1], (len(cands.xy), 1, 2))
    cur_sd = np.broadcast_to(np.array([cands.s0, cands.d0]), (len(cands.xy), 1, 2))
    xy = np.concatenate([cur_xy, cands.xy], axis=1)
    sd = np.concatenate([cur_sd, cands.sd], axis=1)
    return batch_features(xy, sd, ctx), ctx


def _others_pairs(scene: Scene, others_pred: Sequence) -> list:
    """Pair each neighbour's history with its predicted future (aligned by index)."""
    if not others_pred:
        return []
    pairs = []
    for h, p in zip(scene.neighbor_histories, others_pred):
        if p is not None:
            pairs.append((h, p))
    return pairs


def predict_plan(scene: Scene, theta: CostWeights, others_pred: Sequence = (),
                 family: CandidateFamily = CandidateFamily(), cfg: Optional[IrlConfig] = None) -> Trajectory:
    """Lowest-cost candidate given the predicted futures of the scene's neighbours.

    ``others_pred`` is aligned with ``scene.neighbor_histories``; ``None``
    entries are ignored.
    """
    cfg = cfg or IrlConfig(family=family)
    cands = sample_candidates(scene, family)
    F, _ = _scene_features(scene, cands, _others_pairs(scene, others_pred), cfg)
    costs = F @ theta.vector
    best = int(np.argmin(costs))
    return Trajectory(cands.xy[best], scene.target_history.dt)


def _idm_follow(history: Trajectory, path: ReferencePath, leader_hist: Trajectory, leader_pred: Trajectory,
                v_lim: float, idm: IdmParams, family: CandidateFamily) -> Trajectory:
    dt = history.dt
    s_cur, d_cur = to_frenet_many(history.points[-1:], path)
    v = estimate_speed(history, path)
    lead = _with_current(leader_hist, leader_pred)
    s_lead, _ = to_frenet_many(lead, path)
    v_lead = _long_speeds(s_lead, dt)
    p = replace(idm, v0=v_lim)
    s = float(s_cur[0])
    out_s = np.empty(family.label_len)
    for t in range(family.label_len):
        gap = s_lead[t] - s - VEHICLE_LENGTH
        acc = p.a_max * (1 - (v / p.v0) ** 4) if gap > 60 else \
            (-4 * p.b_comf if gap <= 0 else p.a_max * (1 - (v / p.v0) ** 4 - (idm_desired_gap(v, v - v_lead[t], p) / gap) ** 2))
        v = max(0.0, v + max(acc, -4 * p.b_comf) * dt)
        s += v * dt
        out_s[t] = s
    k = np.arange(1, family.label_len + 1)
    d = d_cur[0] * np.maximum(0.0, 1.0 - k / family.lateral_decay_steps)
    return Trajectory(from_frenet_many(out_s, d, path), dt)


@dataclass(frozen=True, eq=False)
class IterativePrediction:
    target: Trajectory
    neighbors: dict
    order: tuple
    methods: dict


def _lead_gap(path: ReferencePath, follower_pos: np.ndarray, leader_pos: np.ndarray, lane_width: float):
    """Along-path gap to ``leader_pos`` if it is ahead in the follower's lane, else None."""
    s, d = to_frenet_many(np.stack([follower_pos, leader_pos]), path)
    ds = s[1] - s[0]
    return ds if abs(d[1]) < 0.75 * lane_width and 0.0 < ds < LEADER_RANGE else None


def predict_iterative(scene: Scene, theta: CostWeights, radius: float = 30.0,
                      family: CandidateFamily = CandidateFamily(), cfg: Optional[IrlConfig] = None) -> IterativePrediction:
    """Predict neighbours farthest-first, then the target conditioned on all of them.

    The farthest neighbour keeps its current speed; a neighbour that follows
    an already-predicted agent on its own path is rolled out with IDM; every
    other neighbour, and finally the target, gets ``predict_plan``
    conditioned on everything predicted so far.
    """
    cfg = cfg or IrlConfig(family=family)
    origin = scene.origin
    dists = [float(np.hypot(*(h.points[-1] - origin))) for h in scene.neighbor_histories]
    within = [k for k, dd in enumerate(dists) if dd <= radius]
    # farthest first; ties by index for determinism
    order = sorted(within, key=lambda k: (-dists[k], k))
    preds: dict = {}
    methods: dict = {}
    # provisional constant-speed future for the target, so neighbours queued
    # behind it do not drive into its current position
    hists = {-1: scene.target_history}
    known = {-1: constant_speed_prediction(scene.target_history, scene.reference_path, family.label_len)}
    for rank, k in enumerate(order):
        hist = scene.neighbor_histories[k]
        path = scene.neighbor_paths[k]
        if rank == 0 or path is None:
            preds[k] = constant_speed_prediction(hist, path, family.label_len)
            methods[k] = "constant_speed"
        else:
            leader, best = None, np.inf
            for j in known:
                gap = _lead_gap(path, hist.points[-1], hists[j].points[-1], scene.lane_width)
                if gap is not None and gap < best:
                    leader, best = j, gap
            if leader is not None:
                preds[k] = _idm_follow(hist, path, hists[leader], known[leader],
                                       scene.speed_limit, cfg.idm, family)
                methods[k] = "idm"
            else:
                sub = Scene(
                    target_history=hist,
                    neighbor_histories=tuple(hists[j] for j in known),
                    reference_path=path,
                    map_id=scene.map_id,
                    stop_signs=scene.stop_signs,
                    speed_limit=scene.speed_limit,
                    lane_width=scene.lane_width,
                )
                preds[k] = predict_plan(sub, theta, list(known.values()), family, cfg)
                methods[k] = "plan"
        known[k] = preds[k]
        hists[k] = hist
    others = [preds.get(k) for k in range(len(scene.neighbor_histories))]
    target = predict_plan(scene, theta, others, family, cfg)
    return IterativePrediction(target, preds, tuple(order), methods)


# ---------------------------------------------------------------- IRL


@dataclass(frozen=True, eq=False)
class SegmentFeatures:
    """Candidate feature matrix (C, 6) and demonstration features (6,)."""

    candidates: np.ndarray
    demo: np.ndarray


def training_others(scene: Scene, n_steps: int = LABEL_LEN) -> list:
    """Constant-speed futures for every neighbour (the training-time estimate)."""
    return [constant_speed_prediction(h, p, n_steps) for h, p in zip(scene.neighbor_histories, scene.neighbor_paths)]


def segment_features(scene: Scene, label: Trajectory, cfg: IrlConfig, others_pred: Optional[Sequence] = None) -> SegmentFeatures:
    fam = replace(cfg.family, label_len=len(label))
    cands = sample_candidates(scene, fam)
    if others_pred is None:
        others_pred = training_others(scene, len(label))
    F, ctx = _scene_features(scene, cands, _others_pairs(scene, others_pred), cfg)
    demo_xy = _with_current(scene.target_history, label)
    s, d = to_frenet_many(demo_xy, scene.reference_path)
    f_demo = batch_features(demo_xy, np.stack([s, d], axis=-1), ctx)
    return SegmentFeatures(F, f_demo)


def dataset_features(data, cfg: IrlConfig) -> list[SegmentFeatures]:
    return [segment_features(seg.scene, seg.label, cfg) for seg in data]


def _logsumexp(z: np.ndarray) -> float:
    m = np.max(z)
    return float(m + np.log(np.sum(np.exp(z - m))))


def irl_objective(theta: np.ndarray, feats: Sequence[SegmentFeatures], beta: float, l2_reg: float):
    """Mean negative log-likelihood of the demonstrations plus L2, and its gradient.

    The partition function runs over the candidate set plus the
    demonstration itself.
    """
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    grad = np.zeros_like(theta)
    for i, sf in enumerate(feats):
        allf = np.vstack([sf.candidates, sf.demo[None, :]])
        z = -beta * (allf @ theta)
        lse = _logsumexp(z)
        nll = beta * float(sf.demo @ theta) + lse
        if not np.isfinite(nll):
            raise FloatingPointError(f"non-finite IRL loss at segment {i}")
        p = np.exp(z - lse)
        total += nll
        grad += beta * (sf.demo - p @ allf)
    n = max(1, len(feats))
    loss = total / n + l2_reg * float(theta @ theta)
    return loss, grad / n + 2 * l2_reg * theta


def feature_scales(feats: Sequence[SegmentFeatures]) -> np.ndarray:
    allf = np.concatenate([sf.candidates for sf in feats]) if feats else np.ones((1, N_FEATURES))
    return np.mean(np.abs(allf), axis=0) + 1e-6


@dataclass
class IrlResult:
    weights: CostWeights
    losses: list


def irl_train_features(feats: Sequence[SegmentFeatures], config: IrlConfig = IrlConfig(),
                       scales: Optional[np.ndarray] = None) -> IrlResult:
    """Projected, diagonally preconditioned gradient descent on ``irl_objective``.

    Steps are taken in feature-normalised coordinates (each feature divided
    by its mean magnitude over the candidates), which is a fixed diagonal
    preconditioner on theta; theta is clipped at zero after every step.
    """
    if not feats:
        raise ValueError("no training segments")
    scales = feature_scales(feats) if scales is None else np.asarray(scales, float)
    theta = np.full(N_FEATURES, 1.0 / N_FEATURES) / scales
    losses = []
    for it in range(config.iterations):
        loss, g = irl_objective(theta, feats, config.beta, config.l2_reg)
        losses.append(loss)
        theta = np.maximum(0.0, theta - config.learning_rate * g / scales ** 2)
    loss, _ = irl_objective(theta, feats, config.beta, config.l2_reg)
    losses.append(loss)
    log.info("irl: loss %.4f -> %.4f", losses[0], losses[-1])
    return IrlResult(CostWeights(tuple(theta), config.beta), losses)


def irl_train(data, config: IrlConfig = IrlConfig()) -> CostWeights:
    """Fit cost weights to the demonstrations in ``data`` by max-ent IRL."""
    feats = dataset_features(data, config)
    return irl_train_features(feats, config).weights
