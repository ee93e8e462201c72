"""Acceptance criteria, one test each. Full-scale runs; expect about fifteen minutes on one core.

Every test records a one-line PASS/FAIL verdict that is printed in the
terminal summary (see conftest.py).
"""

import math
import time

import numpy as np
import pytest

from hybrid_predict import e2e, planner, switchers
from hybrid_predict.core import Trajectory, ade
from hybrid_predict.frenet import from_frenet_many, to_frenet_many
from hybrid_predict.hybrid_eval import DEFAULT_METHODS, RunConfig, run_experiment
from hybrid_predict.scenario import MapSpec, build_experiment, default_experiment, generate_map

from conftest import SMALL, random_scene

RESULTS = {}
SHIFT_METHODS = ("always0", "always1", "bayes30", "oracle")


def verdict(n, ok, detail):
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    return ok


def run(exp_id, methods):
    t0 = time.perf_counter()
    rep = run_experiment(default_experiment(exp_id, 0), methods, RunConfig())
    rep.elapsed = time.perf_counter() - t0
    return rep


@pytest.fixture(scope="module")
def exp1():
    return run("I", DEFAULT_METHODS)


@pytest.fixture(scope="module")
def exp2():
    return run("II", SHIFT_METHODS)


@pytest.fixture(scope="module")
def exp3():
    return run("III", SHIFT_METHODS)


def split_ades(rep, split):
    recs = [r for r in rep.records if r["method"] == "always0" and r["split"] == split]
    return np.array([r["e2e_ade"] for r in recs]), np.array([r["plan_ade"] for r in recs])


def test_c01_directional_reproduction(exp1):
    e, p = exp1.row("always0"), exp1.row("always1")
    ok = e.val_ade < p.val_ade and e.test_ade > p.test_ade and exp1.elapsed <= 600
    detail = (f"val e2e {e.val_ade:.3f} < plan {p.val_ade:.3f}; test e2e {e.test_ade:.3f} > plan {p.test_ade:.3f}; "
              f"{exp1.elapsed:.0f}s (all detectors included)")
    assert verdict(1, ok, detail)


def test_c02_noise(exp3):
    e, p = exp3.row("always0"), exp3.row("always1")
    re, rp = e.test_ade / e.val_ade, p.test_ade / p.val_ade
    ok = re >= 2.0 and rp <= 1.5
    assert verdict(2, ok, f"e2e x{re:.2f} (need >= 2), plan x{rp:.2f} (need <= 1.5)")


def test_c03_bayes30_identity(exp1, exp2, exp3):
    accs = [(r.experiment, r.row("bayes30").val_accuracy, r.row("bayes30").test_accuracy) for r in (exp1, exp2, exp3)]
    # and on synthetic ADE populations, independent of any trained model
    rng = np.random.default_rng(0)
    synth = []
    for _ in range(20):
        ades = rng.gamma(rng.uniform(0.5, 4), rng.uniform(0.1, 2), 500)
        mean, std = ades.mean(), ades.std()
        dec = switchers.decisions_for(np.exp(-ades), switchers.two_sigma_tau(mean, std), switchers.BELOW)
        synth.append(float(np.mean(dec == switchers.two_sigma_labels(ades, mean, std))))
    ok = all(a == 1.0 and b == 1.0 for _, a, b in accs) and min(synth) == 1.0
    assert verdict(3, ok, " ".join(f"{x}: {a:.3f}/{b:.3f}" for x, a, b in accs) + f"; synthetic min {min(synth):.3f}")


def test_c04_hybrid_dominance(exp1, exp2, exp3):
    parts, ok = [], True
    for rep in (exp1, exp2, exp3):
        h, p, e = (rep.row(m).test_ade for m in ("bayes30", "always1", "always0"))
        ok &= h <= p and h <= e
        parts.append(f"{rep.experiment}: {h:.3f} vs plan {p:.3f} / e2e {e:.3f}")
        for split in ("val", "test"):
            ea, pa = split_ades(rep, split)
            orc = {r["segment_id"]: r for r in rep.records if r["method"] == "oracle" and r["split"] == split}
            base = [r for r in rep.records if r["method"] == "always0" and r["split"] == split]
            ok &= all((orc[r["segment_id"]]["plan_ade"] if orc[r["segment_id"]]["decision"]
                       else orc[r["segment_id"]]["e2e_ade"]) == min(r["e2e_ade"], r["plan_ade"]) for r in base)
    assert verdict(4, ok, "; ".join(parts) + "; oracle = per-example min")


def _fd_rel(f, params, grads, rng, probes=10):
    worst = 0.0
    names = list(params)
    for _ in range(probes):
        k = names[rng.integers(len(names))]
        i = tuple(int(rng.integers(0, n)) for n in params[k].shape)
        old = params[k][i]
        params[k][i] = old + 1e-5
        lp = f()
        params[k][i] = old - 1e-5
        lm = f()
        params[k][i] = old
        num = (lp - lm) / 2e-5
        worst = max(worst, abs(num - grads[k][i]) / max(abs(num), abs(grads[k][i]), 1e-8))
    return worst


def test_c05_gradient_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}

    cfg = e2e.E2EConfig(hidden_size=4, decoder_hidden=6, label_len=5, path_points=3)
    m = e2e.init_model(cfg)
    for k in m.params:
        m.params[k] = m.params[k] + rng.normal(0, 0.2, m.params[k].shape)
    data = [random_scene(rng, cfg.label_len) for _ in range(5)]
    enc = [e2e.encode_scene(s, cfg) for s, _ in data]
    truth = np.stack([lab.points - s.origin for s, lab in data])
    _, g = e2e.batch_loss_and_grad(m, enc, truth)
    worst["e2e"] = _fd_rel(lambda: e2e.batch_loss(m, enc, truth), m.params, g, rng)

    feats = [planner.SegmentFeatures(rng.uniform(0, 3, (12, 6)), rng.uniform(0, 3, 6)) for _ in range(4)]
    th = {"theta": rng.uniform(0.05, 1.0, 6)}
    _, g = planner.irl_objective(th["theta"], feats, 1.0, 1e-3)
    worst["irl"] = _fd_rel(lambda: planner.irl_objective(th["theta"], feats, 1.0, 1e-3)[0], th, {"theta": g}, rng)

    p = {"W1": rng.normal(0, 0.5, (7, 5)), "b1": rng.normal(0, 0.1, 5), "W2": rng.normal(0, 0.5, (5, 2)),
         "b2": rng.normal(0, 0.1, 2)}
    x, y = rng.normal(size=(9, 7)), np.array([0, 1, 1, 0, 0, 1, 0, 0, 1])
    cw = switchers.class_weights(y)
    _, g = switchers.classifier_loss(p, x, y, cw, 1e-3)
    worst["classifier"] = _fd_rel(lambda: switchers.classifier_loss(p, x, y, cw, 1e-3)[0], p, g, rng)

    pair = switchers._init_gan(switchers.GanConfig(hidden=5, noise_dim=3), 20)
    for params in (pair.gen, pair.disc):
        for k in params:
            params[k] = params[k] + rng.normal(0, 0.3, params[k].shape)
    real, z = rng.normal(0, 0.5, (6, 20)), rng.normal(size=(6, 3))
    _, dg, _, gg = switchers.gan_losses(pair, real, z)
    worst["gan D"] = _fd_rel(lambda: switchers.gan_losses(pair, real, z)[0], pair.disc, dg, rng)
    worst["gan G"] = _fd_rel(lambda: switchers.gan_losses(pair, real, z)[2], pair.gen, gg, rng)

    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and secs <= 60
    assert verdict(5, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {secs:.1f}s")


def test_c06_irl_recovery():
    t0 = time.perf_counter()
    train, _, _ = build_experiment(default_experiment("I", 0, **SMALL))
    feats = planner.dataset_features(train.segments[:120], planner.IrlConfig())
    scales = planner.feature_scales(feats)
    true = 3.0 * np.array([1.0, 2.0, 0.5, 1.0, 3.0, 1.0]) / scales
    rng = np.random.default_rng(0)
    demos = []
    for f in feats:
        z = -(f.candidates @ true)
        w = np.exp(z - z.max())
        demos.append(planner.SegmentFeatures(f.candidates, f.candidates[rng.choice(len(w), p=w / w.sum())]))
    est = np.array(planner.irl_train_features(demos, planner.IrlConfig(iterations=500)).weights.theta)

    def cos(a, b):
        return float(a @ b / np.linalg.norm(a) / np.linalg.norm(b))

    raw, normed = cos(est, true), cos(est * scales, true * scales)
    secs = time.perf_counter() - t0
    ok = raw >= 0.9 and normed >= 0.9 and secs <= 120
    assert verdict(6, ok, f"cos {raw:.4f} (feature-normalised {normed:.4f}), 500 iterations, {secs:.0f}s")


def test_c07_frenet_round_trip():
    rng = np.random.default_rng(0)
    road = generate_map(MapSpec("roundabout", 20.0, 4), seed=0)
    paths = list(road.paths.values())
    worst, n = 0.0, 0
    while n < 10_000:
        path = paths[n // 500 % len(paths)]
        s = rng.uniform(0.5, path.length - 0.5, 500)
        d = rng.uniform(-2.0, 2.0, 500)
        pts = from_frenet_many(s, d, path)
        back = from_frenet_many(*to_frenet_many(pts, path), path)
        worst = max(worst, float(np.max(np.hypot(*(back - pts).T))))
        n += 500
    assert verdict(7, worst <= 1e-6, f"max round-trip error {worst:.2e} m over {n} points")


def test_c08_metric_oracles():
    rng = np.random.default_rng(0)
    worst_ade = worst_var = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        a, b = rng.normal(0, 20, (n, 2)), rng.normal(0, 20, (n, 2))
        naive = 0.0
        for (x1, y1), (x2, y2) in zip(a.tolist(), b.tolist()):
            naive += math.sqrt((x1 - x2) ** 2 + (y1 - y2) ** 2)
        worst_ade = max(worst_ade, abs(ade(Trajectory(a), Trajectory(b)) - naive / n))
        f = rng.normal(0, 10, (5, 2))
        vs = []
        for c in range(2):
            col = [float(v) for v in f[:, c]]
            mu = sum(col) / 5
            vs.append(sum((v - mu) ** 2 for v in col) / 5)
        worst_var = max(worst_var, abs(switchers.disagreement_from_finals(f) - max(vs)))
    ok = worst_ade <= 1e-12 and worst_var <= 1e-12
    assert verdict(8, ok, f"ade {worst_ade:.1e}, disagreement {worst_var:.1e} over 1000 cases")


def test_c09_classifier_accuracy(exp1):
    r = exp1.row("classifier")
    others = ", ".join(f"{m} {exp1.row(m).val_accuracy:.3f}" for m in ("ensemble", "gan", "bayes5"))
    assert verdict(9, r.val_accuracy >= 0.75, f"classifier val {r.val_accuracy:.3f} (need >= 0.75); {others}")


def test_c10_determinism(exp1):
    again = run("I", DEFAULT_METHODS)
    same = again.to_json() == exp1.to_json()
    assert verdict(10, same, f"two Experiment I runs {'identical' if same else 'DIFFER'} ({len(exp1.to_json())} bytes)")
