import numpy as np
import pytest

from hybrid_predict.core import DT, Scene, Trajectory
from hybrid_predict.frenet import ReferencePath, to_frenet_many
from hybrid_predict.planner import (
    FEATURE_NAMES, CandidateFamily, CostWeights, IrlConfig, SegmentFeatures, _idm_term, _sq_speed_dev,
    constant_speed_prediction, cost, feature_distance, feature_goal, feature_idm, feature_kinematics,
    feature_speed, irl_objective, irl_train_features, kinematic_sums, predict_iterative, predict_plan,
    sample_candidates, segment_features,
)
from hybrid_predict.scenario import IdmParams

PATH = ReferencePath(np.stack([np.linspace(0, 400, 801), np.zeros(801)], axis=1), "straight")


def history(x0, v, d=0.0, n=10):
    x = x0 + v * DT * np.arange(n)
    return Trajectory(np.stack([x, np.full(n, d)], axis=1))


def scene(neighbors=(), d=0.0, stop_signs=None, v=8.0):
    hs = tuple(neighbors)
    return Scene(history(50.0, v, d), hs, PATH, "straight", stop_signs if stop_signs is not None else np.zeros((0, 2)),
                 10.0, tuple(PATH for _ in hs))


def e(i):
    w = np.zeros(6)
    w[i] = 1.0
    return CostWeights(tuple(w))


class TestFeatures:
    def test_speed(self):
        pts = np.stack([np.arange(31) * 1.0, np.zeros(31)], axis=1)
        assert feature_speed(Trajectory(pts), 10.0) == pytest.approx(0.0, abs=1e-18)
        assert _sq_speed_dev(np.array([10.0, 10.0, 12.0]), 10.0) == pytest.approx(4.0)
        # speeds 10, 10, 12 and the reused 12
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.2, 0.0]])
        assert feature_speed(Trajectory(pts), 10.0) == pytest.approx(8.0)

    def test_speed_dt_scaling(self):
        pts = np.cumsum(np.random.default_rng(0).uniform(0, 1, (20, 2)), axis=0)
        a = feature_speed(Trajectory(pts, 0.1), 0.0)
        b = feature_speed(Trajectory(pts, 0.05), 0.0)
        assert b == pytest.approx(4 * a)

    def test_idm(self):
        p = IdmParams()
        me = history(0.0, 10.0, n=31)
        assert feature_idm(me, None, p) == 0.0
        lead = history(21.0, 10.0, n=31)  # bumper gap 17 = s0 + v*T at equal speed
        assert feature_idm(me, lead, p, PATH) == pytest.approx(0.0, abs=1e-18)
        assert _idm_term(np.array([10.0]), np.array([4.0]), np.array([4.0]), p) == pytest.approx(4.0)

    def test_kinematics(self):
        assert feature_kinematics(history(0.0, 7.0, n=31), PATH) == pytest.approx((0.0, 0.0), abs=1e-18)
        assert kinematic_sums(np.array([1.0, 1.0]), 0.1) == pytest.approx((2.0, 0.0))
        assert kinematic_sums(np.array([0.0, 1.0]), 0.1)[1] == pytest.approx(100.0)

    def test_distance(self):
        me = history(0.0, 5.0, n=31)
        assert feature_distance(me, [me], 4.0, 1.8, PATH) == pytest.approx(31.0)
        one = Trajectory(np.array([[10.0, 0.0]]))
        other = Trajectory(np.array([[14.0, 0.0]]))
        assert feature_distance(one, [other], 4.0, 1.8, PATH) == pytest.approx(np.exp(-1))
        assert feature_distance(me, [], 4.0, 1.8, PATH) == 0.0

    def test_goal(self):
        sc = scene()
        at_limit = Trajectory(np.stack([50.0 + 10.0 * DT * np.arange(31), np.zeros(31)], axis=1))
        assert feature_goal(at_limit, sc) == pytest.approx(0.0, abs=1e-18)
        assert feature_goal(Trajectory(np.array([[60.0, 2.0]])), sc) == pytest.approx(4.0)

    def test_goal_stop_sign(self):
        sc = scene(stop_signs=np.array([[70.0, 0.0]]))
        at_sign = Trajectory(np.tile([70.0, 0.0], (31, 1)))
        first = Trajectory(np.vstack([[[60.0, 0.0]], np.tile([70.0, 0.0], (30, 1))]))
        assert feature_goal(first, sc) == pytest.approx(100.0)
        assert feature_goal(at_sign, scene(stop_signs=np.array([[200.0, 0.0]]))) > 0

    def test_all_nonnegative(self):
        rng = np.random.default_rng(3)
        sc = scene([history(30.0, 6.0), history(70.0, 9.0, 0.5)])
        for _ in range(20):
            lab = Trajectory(np.cumsum(rng.normal(0.8, 0.3, (30, 2)) * [1, 0.1], axis=0) + [57, 0])
            sf = segment_features(sc, lab, IrlConfig())
            assert np.all(sf.demo >= 0) and np.all(sf.candidates >= 0)
            assert np.all(np.isfinite(sf.candidates))


def test_cost():
    f = np.arange(1.0, 7.0)
    assert cost(CostWeights((0,) * 6), f) == 0.0
    for i in range(6):
        assert cost(e(i), f) == f[i]
    assert cost(CostWeights((1,) * 6), f) == 21.0


def test_cost_weights_validation_and_json():
    with pytest.raises(ValueError):
        CostWeights((1, 1, 1))
    with pytest.raises(ValueError):
        CostWeights((-1, 0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        CostWeights((1,) * 6, beta=0.0)
    w = CostWeights((0.1, 0.2, 0.3, 0.4, 0.5, 0.6), 2.0)
    assert CostWeights.from_json(w.to_json()) == w
    assert len(FEATURE_NAMES) == 6


class TestCandidates:
    def test_counts(self):
        sc = scene()
        assert len(sample_candidates(sc, CandidateFamily((0.0,), 1)).xy) == 1
        assert len(sample_candidates(sc, CandidateFamily((-2.0, 0.0, 2.0), 3)).xy) == 27
        assert len(sample_candidates(sc).xy) == 125

    def test_cap(self):
        with pytest.raises(ValueError):
            CandidateFamily(tuple(range(8)), 3)

    def test_lateral_decay(self):
        c = sample_candidates(scene(d=0.8))
        assert np.all(np.abs(c.sd[..., 1]) <= abs(c.d0) + 1e-12)
        assert np.all(c.sd[:, 9:, 1] == 0.0)

    def test_speed_nonnegative(self):
        c = sample_candidates(scene(v=1.0))
        assert np.all(np.diff(c.sd[..., 0], axis=1) >= -1e-12)


class TestPredictPlan:
    def test_acc_only_picks_zero_acceleration(self):
        sc = scene()
        out = predict_plan(sc, e(2))
        c = sample_candidates(sc)
        zero = int(np.flatnonzero(np.all(c.accels == 0, axis=1))[0])
        assert np.array_equal(out.points, c.xy[zero])

    def test_goal_only_matches_brute_force(self):
        sc = scene()
        c = sample_candidates(sc)
        full = [Trajectory(np.vstack([sc.target_history.points[-1:], xy])) for xy in c.xy]
        brute = int(np.argmin([feature_goal(t, sc) for t in full]))
        assert np.array_equal(predict_plan(sc, e(5)).points, c.xy[brute])

    def test_scale_invariance_and_on_path(self):
        sc = scene([history(65.0, 6.0)], d=0.6)
        w = CostWeights((0.01, 0.001, 0.05, 0.001, 0.3, 0.001))
        a = predict_plan(sc, w)
        b = predict_plan(sc, CostWeights(tuple(7.5 * np.array(w.theta))))
        assert np.array_equal(a.points, b.points)
        _, d = to_frenet_many(a.points[10:], PATH)
        assert np.max(np.abs(d)) <= 1e-9


class TestIterative:
    W = CostWeights((0.0, 3e-4, 0.06, 1e-3, 0.5, 2e-4))

    def test_no_neighbors(self):
        sc = scene()
        assert np.array_equal(predict_iterative(sc, self.W).target.points, predict_plan(sc, self.W).points)

    def test_one_neighbor_constant_speed(self):
        nb = history(80.0, 6.0)
        sc = scene([nb])
        it = predict_iterative(sc, self.W)
        assert it.methods == {0: "constant_speed"}
        cs = constant_speed_prediction(nb, PATH)
        assert np.array_equal(it.neighbors[0].points, cs.points)
        assert np.array_equal(it.target.points, predict_plan(sc, self.W, [cs]).points)

    def test_order_farthest_first(self):
        last = 50.0 + 8.0 * DT * 9
        nbs = [history(last + 5.0 - 0.9, 0.1, 3.0), history(last - 10.0 - 0.9, 0.1, -3.0),
               history(last + 20.0 - 0.9, 0.1, 3.0)]
        it = predict_iterative(scene(nbs), self.W)
        assert it.order == (2, 1, 0)

    def test_follower_uses_idm(self):
        last = 50.0 + 8.0 * DT * 9
        nbs = [history(last + 15.0, 8.0), history(last - 20.0, 8.0)]
        it = predict_iterative(scene(nbs), self.W)
        assert it.methods[0] == "constant_speed" and it.methods[1] == "idm"


class TestIrl:
    def toy(self, n=20):
        cand = np.array([[1.0, 0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0, 0]])
        return [SegmentFeatures(cand, cand[0].copy()) for _ in range(n)]

    def test_two_candidate_toy(self):
        res = irl_train_features(self.toy(), IrlConfig(learning_rate=0.1, iterations=200), np.ones(6))
        th = res.weights.theta
        assert th[1] > th[0]

    def test_monotone_small_lr(self):
        res = irl_train_features(self.toy(), IrlConfig(learning_rate=1e-3, iterations=100), np.ones(6))
        assert np.all(np.diff(res.losses) <= 1e-12)

    def test_nonnegative_projection(self):
        res = irl_train_features(self.toy(), IrlConfig(learning_rate=5.0, iterations=50), np.ones(6))
        assert min(res.weights.theta) >= 0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        feats = [SegmentFeatures(rng.uniform(0, 3, (12, 6)), rng.uniform(0, 3, 6)) for _ in range(4)]
        for _ in range(10):
            th = rng.uniform(0.05, 1.0, 6)
            _, g = irl_objective(th, feats, 1.0, 1e-3)
            num = np.zeros(6)
            for i in range(6):
                dp, dm = th.copy(), th.copy()
                dp[i] += 1e-5
                dm[i] -= 1e-5
                num[i] = (irl_objective(dp, feats, 1.0, 1e-3)[0] - irl_objective(dm, feats, 1.0, 1e-3)[0]) / 2e-5
            assert np.max(np.abs(num - g) / np.maximum(np.abs(g), 1e-8)) <= 1e-4

    def test_nonfinite_reports_segment(self):
        feats = self.toy(2) + [SegmentFeatures(np.array([[np.inf] * 6, [0.0] * 6]), np.full(6, np.nan))]
        with pytest.raises(FloatingPointError, match="segment 2"):
            irl_objective(np.ones(6), feats, 1.0, 0.0)


def test_estimate_speed_window():
    from hybrid_predict.planner import estimate_speed
    # step speeds 1, 2, ..., 9 m/s
    x = np.concatenate([[0.0], np.cumsum(np.arange(1, 10) * 0.1)])
    h = Trajectory(np.stack([x, np.zeros(10)], axis=1))
    assert estimate_speed(h, window=1) == pytest.approx(9.0)
    assert estimate_speed(h) == pytest.approx(7.5)
    assert estimate_speed(h, PATH) == pytest.approx(7.5)
    assert estimate_speed(Trajectory(h.points[:1])) == 0.0
    with pytest.raises(ValueError):
        estimate_speed(h, window=0)
