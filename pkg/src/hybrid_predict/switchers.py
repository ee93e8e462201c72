"""Detectors that decide when the end-to-end prediction should not be trusted.

Every detector maps an input (and possibly the e2e prediction) to a scalar
score and a binary decision: 0 keeps the e2e output, 1 switches to the
planner. Direction conventions:

* ensemble disagreement: switch when the score is ABOVE the threshold
* GAN realness, Bayes likelihood: switch when the score is BELOW it
* classifier: switch when P(bad) >= 0.5
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import e2e
from .artifacts import read_blob, write_blob
from .core import Scene, Trajectory, ade, as_points, center_on_target, step_distances
from .frenet import to_frenet_many
from .nn import MomentumSGD, clip_by_global_norm, log_sigmoid, sigmoid, uniform_init

log = logging.getLogger(__name__)

ABOVE = "above"
BELOW = "below"
ENSEMBLE_SIZE = 5
HIST_SCALE = e2e.POS_SCALE
NO_STOP_SIGN_DIST = 100.0
LOGIT_CLIP = 30.0


@dataclass(frozen=True)
class SwitchDecision:
    score: float
    decision: int
    threshold_used: float


def _decide(score: float, tau: float, direction: str) -> SwitchDecision:
    if direction == ABOVE:
        d = score > tau
    elif direction == BELOW:
        d = score < tau
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return SwitchDecision(float(score), int(d), float(tau))


def decisions_for(scores, tau: float, direction: str) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if direction == ABOVE:
        return (s > tau).astype(int)
    if direction == BELOW:
        return (s < tau).astype(int)
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------- labels and thresholds


def two_sigma_labels(ades, mean: float, std: float) -> np.ndarray:
    """1 where the ADE lies strictly more than two standard deviations above the mean."""
    return (np.asarray(ades, dtype=float) > mean + 2.0 * std).astype(int)


def e2e_ades(model: e2e.E2EModel, data) -> np.ndarray:
    segs = list(data)
    preds = e2e.predict_many(model, [s.scene for s in segs])
    return np.array([ade(e2e.most_probable(p), s.label) for p, s in zip(preds, segs)])


def label_bad_predictions(model: e2e.E2EModel, data) -> tuple[list, float, float]:
    ades = e2e_ades(model, data)
    if len(ades) == 0:
        raise ValueError("cannot label an empty dataset")
    mean, std = float(np.mean(ades)), float(np.std(ades))
    return two_sigma_labels(ades, mean, std).tolist(), mean, std


def balanced_accuracy(decisions, labels) -> float:
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    pos, neg = y == 1, y == 0
    parts = []
    if pos.any():
        parts.append(np.mean(d[pos] == 1))
    if neg.any():
        parts.append(np.mean(d[neg] == 0))
    return float(np.mean(parts))


def tune_threshold(scores, labels, direction: str) -> float:
    """Midpoint threshold maximising balanced accuracy; ties go to the smallest tau."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if len(s) != len(y):
        raise ValueError("scores and labels differ in length")
    if len(np.unique(y)) < 2:
        raise ValueError("threshold tuning needs both classes in the labels")
    u = np.unique(s)
    cands = (u[:-1] + u[1:]) / 2.0 if len(u) > 1 else u
    pos = y == 1
    n_pos, n_neg = pos.sum(), (~pos).sum()
    # vectorised sweep: decisions for every candidate at once
    if direction == ABOVE:
        dec = s[None, :] > cands[:, None]
    elif direction == BELOW:
        dec = s[None, :] < cands[:, None]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    tpr = (dec & pos[None, :]).sum(axis=1) / n_pos
    tnr = (~dec & ~pos[None, :]).sum(axis=1) / n_neg
    bal = 0.5 * (tpr + tnr)
    return float(cands[int(np.argmax(bal))])  # cands ascending, argmax takes the first


# ---------------------------------------------------------------- ensemble


@dataclass(frozen=True, eq=False)
class Ensemble:
    members: tuple

    def __post_init__(self):
        if len(self.members) != ENSEMBLE_SIZE:
            raise ValueError(f"an ensemble has exactly {ENSEMBLE_SIZE} members, got {len(self.members)}")
        base = replace(self.members[0].config, seed=0)
        if any(replace(m.config, seed=0) != base for m in self.members):
            raise ValueError("ensemble members must share their config apart from the seed")


def train_ensemble(data, config: e2e.E2EConfig, first: Optional[e2e.E2EModel] = None) -> Ensemble:
    """Five members with seeds seed, seed+1, ..., seed+4; ``first`` may supply member 0."""
    members = []
    for k in range(ENSEMBLE_SIZE):
        if k == 0 and first is not None:
            if first.config != config:
                raise ValueError("supplied first member was trained with a different config")
            members.append(first)
            continue
        members.append(e2e.train(data, replace(config, seed=config.seed + k)))
    return Ensemble(tuple(members))


def disagreement_from_finals(finals) -> float:
    f = np.asarray(finals, dtype=float)
    return float(max(np.var(f[:, 0]), np.var(f[:, 1])))


def ensemble_disagreement(ensemble: Ensemble, scene: Scene) -> float:
    finals = [e2e.forward(m, scene).means[-1] for m in ensemble.members]
    return disagreement_from_finals(finals)


def ensemble_scores(ensemble: Ensemble, scenes: Sequence[Scene]) -> np.ndarray:
    finals = np.stack([np.stack([g.means[-1] for g in e2e.forward_many(m, scenes)]) for m in ensemble.members],
                      axis=1)  # (N, 5, 2)
    return np.array([disagreement_from_finals(f) for f in finals])


def ensemble_switch(ensemble: Ensemble, scene: Scene, tau: float) -> SwitchDecision:
    return _decide(ensemble_disagreement(ensemble, scene), tau, ABOVE)


# ---------------------------------------------------------------- GAN


@dataclass(frozen=True)
class GanConfig:
    noise_dim: int = 8
    hidden: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.5
    steps: int = 3000
    batch_size: int = 64
    real_label: float = 0.9
    grad_clip: float = 5.0
    seed: int = 0


@dataclass(eq=False)
class GanPair:
    config: GanConfig
    gen: dict  # W1 (noise, h), b1, W2 (h, 20), b2
    disc: dict  # W1 (20, h), b1, W2 (h, 1), b2
    log: list = field(default_factory=list)


def history_vector(history: Trajectory) -> np.ndarray:
    pts = history.points - history.points[-1]
    return pts.ravel() / HIST_SCALE


def _scene_history_vector(scene: Scene) -> np.ndarray:
    return history_vector(center_on_target(scene).target_history)


def _mlp(p, x):
    h = np.tanh(x @ p["W1"] + p["b1"])
    return h, h @ p["W2"] + p["b2"]


def _mlp_back(p, x, h, dout):
    g = {"W2": h.T @ dout, "b2": dout.sum(axis=0)}
    dh = (dout @ p["W2"].T) * (1.0 - h * h)
    g["W1"] = x.T @ dh
    g["b1"] = dh.sum(axis=0)
    return g, dh @ p["W1"].T


def _bce_logits(logit, target):
    """Mean binary cross-entropy with soft targets, and its gradient w.r.t. the logits."""
    loss = -(target * log_sigmoid(logit) + (1.0 - target) * log_sigmoid(-logit))
    n = logit.shape[0]
    return float(np.sum(loss) / n), (sigmoid(logit) - target) / n


def gan_losses(pair: GanPair, real: np.ndarray, z: np.ndarray):
    """Discriminator loss/grads and (non-saturating) generator loss/grads for one batch."""
    cfg = pair.config
    hg, fake = _mlp(pair.gen, z)
    hr, lr_ = _mlp(pair.disc, real)
    hf, lf = _mlp(pair.disc, fake)
    lr_loss, dlr = _bce_logits(lr_, np.full_like(lr_, cfg.real_label))
    lf_loss, dlf = _bce_logits(lf, np.zeros_like(lf))
    gr, _ = _mlp_back(pair.disc, real, hr, dlr)
    gf, _ = _mlp_back(pair.disc, fake, hf, dlf)
    d_grads = {k: gr[k] + gf[k] for k in gr}
    g_loss, dlg = _bce_logits(lf, np.ones_like(lf))
    _, dfake = _mlp_back(pair.disc, fake, hf, dlg)
    g_grads, _ = _mlp_back(pair.gen, z, hg, dfake)
    return lr_loss + lf_loss, d_grads, g_loss, g_grads


def _init_gan(cfg: GanConfig, n_out: int) -> GanPair:
    rng = np.random.default_rng([cfg.seed, 3])
    h = cfg.hidden
    gen = {"W1": uniform_init(rng, cfg.noise_dim, (cfg.noise_dim, h)), "b1": np.zeros(h),
           "W2": uniform_init(rng, h, (h, n_out)), "b2": np.zeros(n_out)}
    disc = {"W1": uniform_init(rng, n_out, (n_out, h)), "b1": np.zeros(h),
            "W2": uniform_init(rng, h, (h, 1)), "b2": np.zeros(1)}
    return GanPair(cfg, gen, disc)


def gan_train(histories: Sequence[Trajectory], config: GanConfig = GanConfig()) -> GanPair:
    """Alternating discriminator / generator steps with one-sided label smoothing."""
    X = np.stack([history_vector(h) for h in histories])
    if len(X) == 0:
        raise ValueError("GAN training needs at least one history")
    pair = _init_gan(config, X.shape[1])
    rng = np.random.default_rng([config.seed, 4])
    opt_d = MomentumSGD(pair.disc, config.learning_rate, config.momentum)
    opt_g = MomentumSGD(pair.gen, config.learning_rate, config.momentum)
    low_streak, warned = 0, False
    for step in range(config.steps):
        real = X[rng.integers(0, len(X), size=config.batch_size)]
        z = rng.standard_normal((config.batch_size, config.noise_dim))
        d_loss, d_grads, _, _ = gan_losses(pair, real, z)
        clip_by_global_norm(d_grads, config.grad_clip)
        opt_d.step(d_grads)
        z = rng.standard_normal((config.batch_size, config.noise_dim))
        _, _, g_loss, g_grads = gan_losses(pair, real, z)
        clip_by_global_norm(g_grads, config.grad_clip)
        opt_g.step(g_grads)
        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise FloatingPointError(f"non-finite GAN loss at step {step}")
        low_streak = low_streak + 1 if d_loss < 1e-6 else 0
        if low_streak >= 100 and not warned:
            msg = f"discriminator collapse: loss below 1e-6 for 100 steps (step {step})"
            warnings.warn(msg, RuntimeWarning)
            pair.log.append({"step": step, "warning": msg})
            warned = True
        if step % 100 == 0 or step == config.steps - 1:
            pair.log.append({"step": step, "d_loss": d_loss, "g_loss": g_loss})
    return pair


def discriminator_scores(pair: GanPair, X: np.ndarray) -> np.ndarray:
    _, logit = _mlp(pair.disc, np.atleast_2d(X))
    return sigmoid(np.clip(logit[:, 0], -LOGIT_CLIP, LOGIT_CLIP))


def generate(pair: GanPair, n: int, seed: int = 0) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((n, pair.config.noise_dim))
    return _mlp(pair.gen, z)[1]


def gan_score(pair: GanPair, scene: Scene) -> float:
    return float(discriminator_scores(pair, _scene_history_vector(scene))[0])


def gan_scores(pair: GanPair, scenes: Sequence[Scene]) -> np.ndarray:
    if not scenes:
        return np.zeros(0)
    return discriminator_scores(pair, np.stack([_scene_history_vector(s) for s in scenes]))


def gan_switch(pair: GanPair, scene: Scene, tau: float) -> SwitchDecision:
    return _decide(gan_score(pair, scene), tau, BELOW)


def save_gan(pair: GanPair, path) -> None:
    arrays = {f"gen.{k}": v for k, v in pair.gen.items()}
    arrays.update({f"disc.{k}": v for k, v in pair.disc.items()})
    write_blob(path, "gan", asdict(pair.config), arrays, {"log": pair.log})


def load_gan(path) -> GanPair:
    config, arrays, meta = read_blob(path, "gan")
    gen = {k[4:]: v for k, v in arrays.items() if k.startswith("gen.")}
    disc = {k[5:]: v for k, v in arrays.items() if k.startswith("disc.")}
    return GanPair(GanConfig(**config), gen, disc, list(meta.get("log", [])))


# ---------------------------------------------------------------- bad-prediction classifier


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: int = 32
    learning_rate: float = 0.02
    momentum: float = 0.9
    epochs: int = 150
    batch_size: int = 64
    l2_reg: float = 1e-4
    seed: int = 0


@dataclass(eq=False)
class BadPredictionClassifier:
    config: ClassifierConfig
    params: dict  # W1 (84, h), b1, W2 (h, 2), b2
    mu: np.ndarray
    sd: np.ndarray
    losses: list = field(default_factory=list)


N_CLF_FEATURES = 84


def classifier_features(scene: Scene, prediction) -> np.ndarray:
    """Centred history (20) + centred predicted means (60) + context summary (4)."""
    origin = scene.origin
    hist = (scene.target_history.points - origin).ravel()
    means = prediction.means if hasattr(prediction, "means") else as_points(prediction)
    pred = (means - origin).ravel()
    path = scene.reference_path
    dt = scene.target_history.dt
    if path is not None:
        s, d = to_frenet_many(np.vstack([origin[None, :], means]), path)
        max_lat = float(np.max(np.abs(d[1:])))
        progress = float(s[-1] - s[0])
    else:
        max_lat = 0.0
        progress = float(np.hypot(*(means[-1] - origin)))
    if len(scene.stop_signs):
        dist = np.hypot(means[:, None, 0] - scene.stop_signs[None, :, 0], means[:, None, 1] - scene.stop_signs[None, :, 1])
        min_sign = float(np.min(dist))
    else:
        min_sign = NO_STOP_SIGN_DIST
    steps = np.vstack([origin[None, :], means])
    min_speed = float(np.min(step_distances(steps[1:], steps[:-1])) / dt)
    return np.concatenate([hist, pred, [max_lat, progress, min_sign, min_speed]])


def _clf_forward(p, x):
    h = np.tanh(x @ p["W1"] + p["b1"])
    logits = h @ p["W2"] + p["b2"]
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return h, logits, e / e.sum(axis=1, keepdims=True)


def classifier_loss(p: dict, x: np.ndarray, y: np.ndarray, class_w: np.ndarray, l2: float = 0.0):
    """Class-weighted softmax cross-entropy (normalised by total weight) plus L2; returns (loss, grads)."""
    h, logits, prob = _clf_forward(p, x)
    w = class_w[y]
    W = w.sum()
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-np.sum(w * logp[np.arange(len(y)), y]) / W)
    loss += l2 * float(np.sum(p["W1"] ** 2) + np.sum(p["W2"] ** 2))
    dlogits = prob.copy()
    dlogits[np.arange(len(y)), y] -= 1.0
    dlogits *= (w / W)[:, None]
    g = {"W2": h.T @ dlogits + 2 * l2 * p["W2"], "b2": dlogits.sum(axis=0)}
    dh = (dlogits @ p["W2"].T) * (1.0 - h * h)
    g["W1"] = x.T @ dh + 2 * l2 * p["W1"]
    g["b1"] = dh.sum(axis=0)
    return loss, g


def class_weights(y: np.ndarray) -> np.ndarray:
    counts = np.bincount(y, minlength=2).astype(float)
    return len(y) / (2.0 * counts)


def train_classifier_features(X: np.ndarray, y, config: ClassifierConfig = ClassifierConfig()) -> BadPredictionClassifier:
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise ValueError("bad-prediction labels contain a single class; "
                         "use a larger dataset or one with a longer error tail")
    mu = X.mean(axis=0)
    sd = np.maximum(X.std(axis=0), 1e-6)
    Xs = (X - mu) / sd
    rng = np.random.default_rng([config.seed, 5])
    h = config.hidden
    params = {"W1": uniform_init(rng, X.shape[1], (X.shape[1], h)), "b1": np.zeros(h),
              "W2": uniform_init(rng, h, (h, 2)), "b2": np.zeros(2)}
    cw = class_weights(y)
    opt = MomentumSGD(params, config.learning_rate, config.momentum)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(y))
        tot = 0.0
        for lo in range(0, len(y), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss, g = classifier_loss(params, Xs[idx], y[idx], cw, config.l2_reg)
            opt.step(g)
            tot += loss * len(idx)
        losses.append(tot / len(y))
    return BadPredictionClassifier(config, params, mu, sd, losses)


def classifier_inputs(model: e2e.E2EModel, data):
    segs = list(data)
    preds = e2e.predict_many(model, [s.scene for s in segs])
    return np.stack([classifier_features(s.scene, p) for s, p in zip(segs, preds)]), preds


def classifier_train(model: e2e.E2EModel, data, config: ClassifierConfig = ClassifierConfig(),
                     labels: Optional[Sequence[int]] = None) -> BadPredictionClassifier:
    """Fit the classifier on 2-sigma labels of ``model``'s errors over ``data``."""
    if labels is None:
        labels, _, _ = label_bad_predictions(model, data)
    X, _ = classifier_inputs(model, data)
    return train_classifier_features(X, labels, config)


def classifier_probs(clf: BadPredictionClassifier, X: np.ndarray) -> np.ndarray:
    _, _, prob = _clf_forward(clf.params, (np.atleast_2d(X) - clf.mu) / clf.sd)
    return prob[:, 1]


def classifier_score(clf: BadPredictionClassifier, scene: Scene, prediction) -> float:
    return float(classifier_probs(clf, classifier_features(scene, prediction))[0])


def classifier_switch(clf: BadPredictionClassifier, scene: Scene, prediction) -> SwitchDecision:
    score = classifier_score(clf, scene, prediction)
    return SwitchDecision(score, int(score >= 0.5), 0.5)


def save_classifier(clf: BadPredictionClassifier, path) -> None:
    arrays = dict(clf.params)
    arrays.update(mu=clf.mu, sd=clf.sd)
    write_blob(path, "classifier", asdict(clf.config), arrays, {"losses": clf.losses})


def load_classifier(path) -> BadPredictionClassifier:
    config, arrays, meta = read_blob(path, "classifier")
    params = {k: arrays[k] for k in ("W1", "b1", "W2", "b2")}
    return BadPredictionClassifier(ClassifierConfig(**config), params, arrays["mu"], arrays["sd"],
                                   list(meta.get("losses", [])))


# ---------------------------------------------------------------- online Bayesian detector

GAUSSIAN = "gaussian_likelihood"
L2_PROXY = "l2_proxy"


@dataclass(frozen=True)
class BayesConfig:
    m: int = 30
    tau: float = 0.5
    mode: str = L2_PROXY

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.mode not in (GAUSSIAN, L2_PROXY):
            raise ValueError(f"unknown Bayes mode {self.mode!r}")


def bayes_likelihood(pred, observed, m: int, mode: str = L2_PROXY) -> float:
    """Score of the first ``m`` observed steps under the prediction (higher = more plausible)."""
    obs = as_points(observed)
    means = np.asarray(pred.means)
    if not 1 <= m <= min(len(obs), len(means)):
        raise ValueError(f"m={m} outside 1..{min(len(obs), len(means))}")
    if mode == L2_PROXY:
        # same reduction as ade(), so m = label_len gives exp(-ADE) bit for bit
        return float(np.exp(-np.mean(step_distances(means[:m], obs[:m]))))
    if mode == GAUSSIAN:
        sig = np.asarray(pred.sigmas)[:m]
        z = (obs[:m] - means[:m]) / sig
        logp = -np.log(2 * math.pi) - np.log(sig).sum(axis=1) - 0.5 * np.sum(z * z, axis=1)
        return float(np.exp(np.mean(logp)))
    raise ValueError(f"unknown Bayes mode {mode!r}")


def bayes_switch(score: float, tau: float) -> SwitchDecision:
    return _decide(score, tau, BELOW)


def two_sigma_tau(mean: float, std: float) -> float:
    """l2-proxy threshold equivalent to the 2-sigma ADE rule."""
    return float(np.exp(-(mean + 2.0 * std)))
