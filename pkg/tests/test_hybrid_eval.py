import json
from dataclasses import replace

import numpy as np
import pytest

from hybrid_predict import e2e, hybrid_eval as he, planner, switchers
from hybrid_predict.core import Trajectory, ade

W = planner.CostWeights((0.0, 3e-4, 0.06, 1e-3, 0.5, 3e-4))
TINY_RUN = he.RunConfig(
    e2e=e2e.E2EConfig(hidden_size=8, decoder_hidden=16, epochs=4, learning_rate=5e-3),
    irl=planner.IrlConfig(iterations=20),
    gan=switchers.GanConfig(hidden=16, steps=200),
    classifier=switchers.ClassifierConfig(epochs=10),
)


@pytest.fixture(scope="module")
def report(small_exp1):
    from hybrid_predict.scenario import default_experiment
    from conftest import SMALL
    timings = {}
    rep = he.run_experiment(default_experiment("I", 0, **SMALL), config=TINY_RUN, datasets=small_exp1,
                            timings=timings)
    rep.timings = timings
    return rep


def test_method_names():
    assert he.bayes_steps("bayes12") == 12 and he.bayes_steps("gan") is None
    with pytest.raises(ValueError):
        he.bayes_steps("bayesX")
    assert he.check_methods(["gan", "gan", "always0"]) == ["gan", "always0"]
    with pytest.raises(ValueError, match="unknown method"):
        he.check_methods(["coinflip"])


def test_predictor_validation(small_e2e):
    with pytest.raises(ValueError, match="trained model"):
        he.HybridPredictor(small_e2e, W, "gan", tau=0.5)
    with pytest.raises(ValueError, match="tau"):
        he.HybridPredictor(small_e2e, W, "bayes30")


def test_switch_accuracy():
    assert he.switch_accuracy([1, 0, 1, 1], [1, 0, 0, 1]) == 0.75
    assert he.switch_accuracy([0, 0], [0, 0]) == 1.0
    with pytest.raises(ValueError):
        he.switch_accuracy([], [])
    with pytest.raises(ValueError):
        he.switch_accuracy([0], [0, 1])


class TestDispatch:
    def test_fixed_detectors(self, small_exp1, small_e2e):
        for seg in small_exp1[1].segments[:5]:
            h0 = he.HybridPredictor(small_e2e, W, "always0")
            out0 = he.hybrid_predict(h0, seg.scene)
            assert np.array_equal(out0.points, e2e.predict(small_e2e, seg.scene).means)
            out1 = he.hybrid_predict(he.HybridPredictor(small_e2e, W, "always1"), seg.scene)
            assert np.array_equal(out1.points, planner.predict_iterative(seg.scene, W).target.points)

    def test_oracle_is_per_example_min(self, small_exp1, small_e2e):
        h = he.HybridPredictor(small_e2e, W, "oracle")
        for seg in small_exp1[2].segments[:6]:
            got = ade(he.hybrid_predict(h, seg.scene, seg.label), seg.label)
            e = ade(e2e.predict(small_e2e, seg.scene).means, seg.label)
            p = ade(planner.predict_iterative(seg.scene, W).target, seg.label)
            assert got == min(e, p)
        with pytest.raises(ValueError, match="observed"):
            he.hybrid_predict(h, seg.scene)

    def test_bayes_splice(self, small_exp1, small_e2e):
        seg = small_exp1[2].segments[0]
        pred = e2e.predict(small_e2e, seg.scene)
        plan = planner.predict_iterative(seg.scene, W).target.points
        h = he.HybridPredictor(small_e2e, W, "bayes5", tau=1.0)  # scores are < 1, so always switches
        out = he.hybrid_predict(h, seg.scene, seg.label).points
        assert np.array_equal(out[:5], pred.means[:5]) and np.array_equal(out[5:], plan[5:])
        never = he.HybridPredictor(small_e2e, W, "bayes5", tau=0.0)
        assert np.array_equal(he.hybrid_predict(never, seg.scene, seg.label).points, pred.means)


class TestReport:
    def test_rows_and_accounting(self, report, small_exp1):
        assert [r.method for r in report.rows] == list(he.DEFAULT_METHODS)
        for split, ds in (("val", small_exp1[1]), ("test", small_exp1[2])):
            # records are sorted by id; restore dataset order so sums add up identically
            pos = {s.segment_id: i for i, s in enumerate(ds.segments)}
            recs = {m: sorted((r for r in report.records if r["method"] == m and r["split"] == split),
                              key=lambda r: pos[r["segment_id"]]) for m in he.DEFAULT_METHODS}
            e = np.array([r["e2e_ade"] for r in recs["always0"]])
            p = np.array([r["plan_ade"] for r in recs["always0"]])
            assert getattr(report.row("always0"), f"{split}_ade") == float(np.mean(e))
            assert getattr(report.row("always1"), f"{split}_ade") == float(np.mean(p))
            assert getattr(report.row("oracle"), f"{split}_ade") == float(np.mean(np.minimum(e, p)))
            assert getattr(report.row("oracle"), f"{split}_ade") <= min(np.mean(e), np.mean(p))

    def test_bayes30_identity(self, report):
        r = report.row("bayes30")
        assert r.val_accuracy == 1.0 and r.test_accuracy == 1.0
        assert r.decision_step == 31 and report.row("bayes5").decision_step == 6
        assert "bayes30 (delayed to step 31)" in report.table()

    def test_label_stats(self, report):
        st = report.label_stats
        assert st["threshold"] == pytest.approx(st["train_ade_mean"] + 2 * st["train_ade_std"])
        assert len(st["plan_weights"]) == 6
        val_labels = [r["label"] for r in report.records if r["method"] == "always0" and r["split"] == "val"]
        assert sum(val_labels) == st["val_positives"]

    def test_stage_timings(self, report):
        for stage in ("data", "train e2e", "train irl", "e2e predictions", "plan predictions", "gan", "bayes30"):
            assert stage in report.timings

    def test_json_round_trip(self, report, tmp_path):
        jp, tp = he.write_report(report, tmp_path)
        back = he.load_report(jp)
        assert back.to_json() == report.to_json()
        d = json.loads(open(jp).read())
        assert d["schema"] == he.REPORT_SCHEMA and d["version"] == 1
        assert open(tp).read() == report.table()
        with pytest.raises(ValueError):
            he.ExperimentReport.from_dict({**d, "version": 99})

    def test_scatter(self, report, tmp_path):
        n = len([r for r in report.records if r["method"] == "gan"])
        a = he.export_scatter(report, tmp_path / "a.csv", "gan")
        lines = open(a).read().splitlines()
        assert len(lines) == n + 1 and lines[0] == ",".join(he.SCATTER_COLUMNS)
        b = he.export_scatter(report, tmp_path / "b.csv", "gan")
        assert open(a, "rb").read() == open(b, "rb").read()
        rows = he.read_scatter(a)
        want = sorted((r for r in report.records if r["method"] == "gan"), key=lambda r: (r["split"], r["segment_id"]))
        for got, rec in zip(rows, want):
            assert got["e2e_ade"] == rec["e2e_ade"] and got["score"] == rec["score"]
            assert got["decision"] == rec["decision"]
        with pytest.raises(OSError, match="cannot write"):
            he.export_scatter(report, tmp_path / "missing" / "x.csv")


def test_stage_error_names_stage(small_exp1):
    from hybrid_predict.scenario import default_experiment
    from conftest import SMALL
    spec = default_experiment("I", 0, **SMALL)
    bad = replace(TINY_RUN, e2e=replace(TINY_RUN.e2e, batch_size=0))
    with pytest.raises(he.StageError) as err:
        he.run_experiment(spec, ["always0"], bad, datasets=small_exp1)
    assert err.value.stage == "train e2e"


def test_plan_ades_parallel_matches_serial(small_exp1):
    segs = small_exp1[1].segments[:6]
    assert np.array_equal(he.plan_ades(segs, W, workers=1), he.plan_ades(segs, W, workers=2))
