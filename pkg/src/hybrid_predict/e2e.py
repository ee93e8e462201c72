"""End-to-end predictor: shared recurrent encoder, social max-pooling, Gaussian decoder.

Every agent's 10-step history, expressed relative to the target's latest
position, runs through one gated recurrent cell. Final hidden states of the
neighbours inside ``pooling_radius`` are max-pooled element-wise and
concatenated with the target's state and with a sampling of the reference
path ahead of the target; a two-layer decoder emits
(mu_x, mu_y, sigma_x, sigma_y) for every future step. Means are a residual on
top of a constant-velocity extrapolation of the last history step.
Gradients are derived by hand.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .frenet import to_frenet
from .core import LABEL_LEN, SIGMA_FLOOR, GaussianTrajectory, Scene, Trajectory, center_on_target
from .artifacts import read_blob, write_blob
from .nn import MomentumSGD, clip_by_global_norm, sigmoid, softplus, uniform_init

log = logging.getLogger(__name__)

POS_SCALE = 10.0
MEAN_SCALE = 2.0
N_INPUT = 4
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)

CELL_PARAMS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wn", "Un", "bn")
DECODER_PARAMS = ("D1", "c1", "D2", "c2")
PARAM_NAMES = CELL_PARAMS + DECODER_PARAMS


@dataclass(frozen=True)
class E2EConfig:
    hidden_size: int = 32
    decoder_hidden: int = 64
    pooling_radius: float = 15.0
    learning_rate: float = 1e-2
    momentum: float = 0.9
    epochs: int = 150
    batch_size: int = 32
    seed: int = 0
    grad_clip: float = 10.0
    label_len: int = LABEL_LEN
    path_points: int = 20  # reference-path samples fed to the decoder (0 disables)
    path_spacing: float = 2.0

    def __post_init__(self):
        if self.hidden_size < 1 or self.decoder_hidden < 1:
            raise ValueError("hidden sizes must be >= 1")
        if self.path_points < 0 or not self.path_spacing > 0:
            raise ValueError("path_points must be >= 0 and path_spacing positive")
        if not self.pooling_radius > 0:
            raise ValueError("pooling_radius must be positive")


@dataclass(eq=False)
class E2EModel:
    config: E2EConfig
    params: dict
    losses: list = field(default_factory=list)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "E2EModel":
        return E2EModel(self.config, {k: v.copy() for k, v in self.params.items()}, list(self.losses))


def param_shapes(cfg: E2EConfig) -> dict:
    H, Dh, L = cfg.hidden_size, cfg.decoder_hidden, cfg.label_len
    shapes = {}
    for g in "zrn":
        shapes[f"W{g}"] = (N_INPUT, H)
        shapes[f"U{g}"] = (H, H)
        shapes[f"b{g}"] = (H,)
    shapes.update(D1=(2 * H + 2 * cfg.path_points, Dh), c1=(Dh,), D2=(Dh, 4 * L), c2=(4 * L,))
    return shapes


def init_model(cfg: E2EConfig) -> E2EModel:
    rng = np.random.default_rng([cfg.seed, 1])
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = uniform_init(rng, shape[0], shape)
    return E2EModel(cfg, params)


# ---------------------------------------------------------------- featurisation


def history_features(points: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """(T, 2) positions -> (T, 4) of scaled relative position and displacement."""
    rel = (points - origin) / POS_SCALE
    disp = np.vstack([np.zeros((1, 2)), np.diff(points, axis=0)])
    return np.hstack([rel, disp])


def cv_base(points: np.ndarray, label_len: int) -> np.ndarray:
    """Constant-velocity extrapolation from the last observed displacement."""
    vel = points[-1] - points[-2] if len(points) > 1 else np.zeros(2)
    return np.arange(1, label_len + 1)[:, None] * vel[None, :]


@dataclass
class _Encoded:
    """A scene reduced to network inputs (centred frame)."""

    target: np.ndarray  # (T, 4)
    neighbors: np.ndarray  # (K, T, 4)
    base: np.ndarray  # (L, 2)
    route: np.ndarray  # (2 * path_points,)


def route_features(path, cfg: E2EConfig) -> np.ndarray:
    """Path points ahead of the origin at fixed arclength spacing, scaled; zeros without a path."""
    if cfg.path_points == 0 or path is None:
        return np.zeros(2 * cfg.path_points)
    s0 = to_frenet(np.zeros(2), path).s
    ahead = path.point_at(s0 + cfg.path_spacing * np.arange(1, cfg.path_points + 1))
    return (ahead / POS_SCALE).ravel()


def encode_scene(scene: Scene, cfg: E2EConfig) -> _Encoded:
    c = center_on_target(scene)
    origin = np.zeros(2)
    tgt = c.target_history.points
    neigh = [h.points for h in c.neighbor_histories
             if len(h) == len(tgt) and np.hypot(*h.points[-1]) <= cfg.pooling_radius]
    nf = np.stack([history_features(p, origin) for p in neigh]) if neigh else np.zeros((0, len(tgt), N_INPUT))
    return _Encoded(history_features(tgt, origin), nf, cv_base(tgt, cfg.label_len),
                    route_features(c.reference_path, cfg))


# ---------------------------------------------------------------- forward / backward


def _cell_forward(p: dict, X: np.ndarray):
    """X (N, T, 4) -> final hidden (N, H) and per-step caches."""
    N, T, _ = X.shape
    H = p["Uz"].shape[0]
    h = np.zeros((N, H))
    caches = []
    for t in range(T):
        x = X[:, t]
        z = sigmoid(x @ p["Wz"] + h @ p["Uz"] + p["bz"])
        r = sigmoid(x @ p["Wr"] + h @ p["Ur"] + p["br"])
        n = np.tanh(x @ p["Wn"] + (r * h) @ p["Un"] + p["bn"])
        h_new = (1.0 - z) * n + z * h
        caches.append((x, h, z, r, n))
        h = h_new
    return h, caches


def _cell_backward(p: dict, caches, dh: np.ndarray, grads: dict):
    for x, h_prev, z, r, n in reversed(caches):
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z
        dn_pre = dn * (1.0 - n * n)
        grads["Wn"] += x.T @ dn_pre
        grads["bn"] += dn_pre.sum(axis=0)
        grads["Un"] += (r * h_prev).T @ dn_pre
        drh = dn_pre @ p["Un"].T
        dr = drh * h_prev
        dh_prev += drh * r
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        grads["Wz"] += x.T @ dz_pre
        grads["Uz"] += h_prev.T @ dz_pre
        grads["bz"] += dz_pre.sum(axis=0)
        grads["Wr"] += x.T @ dr_pre
        grads["Ur"] += h_prev.T @ dr_pre
        grads["br"] += dr_pre.sum(axis=0)
        dh_prev += dz_pre @ p["Uz"].T + dr_pre @ p["Ur"].T
        dh = dh_prev


def _assemble(batch: Sequence[_Encoded]):
    seqs = [e.target for e in batch]
    tgt_idx = np.arange(len(batch))
    K = max((len(e.neighbors) for e in batch), default=0)
    nb_idx = np.full((len(batch), max(K, 1)), -1, dtype=int)
    nxt = len(batch)
    for i, e in enumerate(batch):
        for k in range(len(e.neighbors)):
            seqs.append(e.neighbors[k])
            nb_idx[i, k] = nxt
            nxt += 1
    X = np.stack(seqs)
    base = np.stack([e.base for e in batch])
    route = np.stack([e.route for e in batch])
    return X, tgt_idx, nb_idx, base, route


def _forward_batch(p: dict, batch: Sequence[_Encoded]):
    X, tgt_idx, nb_idx, base, route = _assemble(batch)
    h_all, caches = _cell_forward(p, X)
    h_t = h_all[tgt_idx]
    B, H = h_t.shape
    mask = nb_idx >= 0
    gathered = np.where(mask[:, :, None], h_all[np.maximum(nb_idx, 0)], -np.inf)
    arg = np.argmax(gathered, axis=1)  # (B, H) first maximum
    pooled = np.take_along_axis(gathered, arg[:, None, :], axis=1)[:, 0]
    has_nb = mask.any(axis=1)
    pooled = np.where(has_nb[:, None], pooled, 0.0)
    feat = np.hstack([h_t, pooled, route])
    a1 = np.tanh(feat @ p["D1"] + p["c1"])
    out = (a1 @ p["D2"] + p["c2"]).reshape(B, -1, 4)
    mu = base + MEAN_SCALE * out[..., :2]
    sigma = softplus(out[..., 2:]) + SIGMA_FLOOR
    cache = dict(X=X, caches=caches, h_all=h_all, tgt_idx=tgt_idx, nb_idx=nb_idx, arg=arg, has_nb=has_nb,
                 feat=feat, a1=a1, out=out)
    return mu, sigma, cache


def _nll_terms(mu, sigma, truth):
    z = (truth - mu) / sigma
    return np.log(sigma) + HALF_LOG_2PI + 0.5 * z * z


def _backward_batch(p: dict, mu, sigma, truth, cache) -> dict:
    """Gradient of the batch-mean NLL (summed over steps and axes)."""
    B = mu.shape[0]
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    out = cache["out"]
    diff = mu - truth
    dmu = diff / sigma ** 2 / B
    dsig = (1.0 / sigma - diff ** 2 / sigma ** 3) / B
    dout = np.empty_like(out)
    dout[..., :2] = MEAN_SCALE * dmu
    dout[..., 2:] = dsig * sigmoid(out[..., 2:])
    dout = dout.reshape(B, -1)
    a1, feat = cache["a1"], cache["feat"]
    grads["D2"] = a1.T @ dout
    grads["c2"] = dout.sum(axis=0)
    dz1 = (dout @ p["D2"].T) * (1.0 - a1 * a1)
    grads["D1"] = feat.T @ dz1
    grads["c1"] = dz1.sum(axis=0)
    dfeat = dz1 @ p["D1"].T
    H = p["Uz"].shape[0]
    dh_all = np.zeros_like(cache["h_all"])
    dh_all[cache["tgt_idx"]] += dfeat[:, :H]
    dpool = np.where(cache["has_nb"][:, None], dfeat[:, H:2 * H], 0.0)
    src = np.take_along_axis(cache["nb_idx"], cache["arg"], axis=1)  # (B, H) sequence index per element
    rows = np.broadcast_to(np.arange(H), src.shape)
    valid = cache["has_nb"][:, None] & (src >= 0)
    np.add.at(dh_all, (src[valid], rows[valid]), dpool[valid])
    _cell_backward(p, cache["caches"], dh_all, grads)
    return grads


def batch_loss_and_grad(model: E2EModel, batch: Sequence[_Encoded], truths: np.ndarray):
    mu, sigma, cache = _forward_batch(model.params, batch)
    loss = float(np.sum(_nll_terms(mu, sigma, truths)) / len(batch))
    return loss, _backward_batch(model.params, mu, sigma, truths, cache)


def batch_loss(model: E2EModel, batch: Sequence[_Encoded], truths: np.ndarray) -> float:
    mu, sigma, _ = _forward_batch(model.params, batch)
    return float(np.sum(_nll_terms(mu, sigma, truths)) / len(batch))


# ---------------------------------------------------------------- public API


def forward(model: E2EModel, scene: Scene) -> GaussianTrajectory:
    """Predicted distribution in the target-centred frame."""
    return forward_many(model, [scene])[0]


def forward_many(model: E2EModel, scenes: Sequence[Scene], chunk: int = 256) -> list[GaussianTrajectory]:
    out = []
    for lo in range(0, len(scenes), chunk):
        enc = [encode_scene(s, model.config) for s in scenes[lo:lo + chunk]]
        mu, sigma, _ = _forward_batch(model.params, enc)
        for i in range(len(enc)):
            out.append(GaussianTrajectory(np.hstack([mu[i], sigma[i]]), scenes[lo + i].target_history.dt))
    return out


def predict(model: E2EModel, scene: Scene) -> GaussianTrajectory:
    """Predicted distribution in world coordinates."""
    return forward(model, scene).translated(scene.origin)


def predict_many(model: E2EModel, scenes: Sequence[Scene]) -> list[GaussianTrajectory]:
    return [g.translated(s.origin) for g, s in zip(forward_many(model, scenes), scenes)]


def most_probable(pred: GaussianTrajectory) -> Trajectory:
    return Trajectory(pred.means, pred.dt)


def nll_loss(pred: GaussianTrajectory, truth: Trajectory) -> float:
    """Negative log-likelihood of ``truth`` under independent per-axis Gaussians."""
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(truth)}")
    return float(np.sum(_nll_terms(pred.means, pred.sigmas, truth.points)))


def _prepare(data) -> tuple[list, np.ndarray]:
    segs = list(data)
    return segs, np.stack([s.label.points - s.scene.origin for s in segs])


def train(data, config: E2EConfig = E2EConfig(), init: Optional[E2EModel] = None) -> E2EModel:
    """Mini-batch momentum SGD on the mean NLL; deterministic given ``config.seed``."""
    segs, truths = _prepare(data)
    if not segs:
        raise ValueError("training data is empty")
    model = init.copy() if init is not None else init_model(config)
    enc = [encode_scene(s.scene, config) for s in segs]
    rng = np.random.default_rng([config.seed, 2])
    opt = MomentumSGD(model.params, config.learning_rate, config.momentum)
    n = len(enc)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            loss, grads = batch_loss_and_grad(model, [enc[i] for i in idx], truths[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite e2e loss at epoch {epoch}, batch {b}")
            clip_by_global_norm(grads, config.grad_clip)
            opt.step(grads)
            total += loss * len(idx)
        model.losses.append(total / n)
        log.info("e2e epoch %d loss %.4f", epoch, model.losses[-1])
    return model


def evaluate_loss(model: E2EModel, data) -> float:
    segs, truths = _prepare(data)
    enc = [encode_scene(s.scene, model.config) for s in segs]
    return batch_loss(model, enc, truths)


# ---------------------------------------------------------------- serialisation


def save_model(model: E2EModel, path) -> None:
    write_blob(path, "e2e", asdict(model.config), {k: model.params[k] for k in PARAM_NAMES},
               {"losses": list(model.losses)})


def load_model(path) -> E2EModel:
    config, arrays, meta = read_blob(path, "e2e")
    cfg = E2EConfig(**config)
    shapes = param_shapes(cfg)
    for k in PARAM_NAMES:
        if k not in arrays or arrays[k].shape != shapes[k]:
            raise ValueError(f"{path}: parameter {k} missing or mis-shaped")
    return E2EModel(cfg, {k: arrays[k] for k in PARAM_NAMES}, list(meta.get("losses", [])))
