"""Hybrid predictor, switch metrics and the experiment runner."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import e2e, planner, switchers
from .core import LABEL_LEN, Scene, Trajectory, ade
from .scenario import ExperimentSpec, build_experiment
from .switchers import ABOVE, BELOW, L2_PROXY

log = logging.getLogger(__name__)

REPORT_SCHEMA = "hybrid-predict/report"
REPORT_VERSION = 1
SCATTER_COLUMNS = ("segment_id", "split", "e2e_ade", "plan_ade", "score", "decision", "label")

DETECTORS = ("ensemble", "gan", "classifier", "bayes30", "bayes5")
DEFAULT_METHODS = ("always0", "always1") + DETECTORS + ("oracle",)


def bayes_steps(method: str) -> Optional[int]:
    if method.startswith("bayes"):
        try:
            return int(method[5:])
        except ValueError:
            raise ValueError(f"bad Bayes method name {method!r}; expected e.g. bayes30") from None
    return None


def check_methods(methods: Sequence[str]) -> list:
    out = []
    for m in methods:
        if m not in ("always0", "always1", "ensemble", "gan", "classifier", "oracle") and bayes_steps(m) is None:
            raise ValueError(f"unknown method {m!r}")
        if m not in out:
            out.append(m)
    return out


# ---------------------------------------------------------------- hybrid predictor


@dataclass(eq=False)
class HybridPredictor:
    e2e_model: e2e.E2EModel
    weights: planner.CostWeights
    detector: str = "always0"
    tau: Optional[float] = None
    ensemble: Optional[switchers.Ensemble] = None
    gan: Optional[switchers.GanPair] = None
    classifier: Optional[switchers.BadPredictionClassifier] = None
    bayes_mode: str = L2_PROXY
    plan_radius: float = 30.0

    def __post_init__(self):
        check_methods([self.detector])
        needs = {"ensemble": self.ensemble, "gan": self.gan, "classifier": self.classifier}
        if self.detector in needs and needs[self.detector] is None:
            raise ValueError(f"detector {self.detector!r} needs its trained model")
        if self.detector in ("ensemble", "gan") or bayes_steps(self.detector):
            if self.tau is None:
                raise ValueError(f"detector {self.detector!r} needs a threshold tau")


def plan_prediction(h: HybridPredictor, scene: Scene) -> Trajectory:
    return planner.predict_iterative(scene, h.weights, h.plan_radius).target


def detect(h: HybridPredictor, scene: Scene, pred, observed: Optional[Trajectory] = None) -> switchers.SwitchDecision:
    """Run the detector on (scene, e2e prediction); Bayes detectors also need the observed future."""
    d = h.detector
    if d == "always0":
        return switchers.SwitchDecision(0.0, 0, 0.0)
    if d == "always1":
        return switchers.SwitchDecision(1.0, 1, 0.0)
    if d == "ensemble":
        return switchers.ensemble_switch(h.ensemble, scene, h.tau)
    if d == "gan":
        return switchers.gan_switch(h.gan, scene, h.tau)
    if d == "classifier":
        return switchers.classifier_switch(h.classifier, scene, pred)
    if d == "oracle":
        if observed is None:
            raise ValueError("the oracle detector needs the observed future")
        plan = plan_prediction(h, scene)
        gap = ade(plan, observed) - ade(e2e.most_probable(pred), observed)
        return switchers.SwitchDecision(gap, int(gap < 0), 0.0)
    m = bayes_steps(d)
    if observed is None:
        raise ValueError(f"{d} needs the first {m} observed future steps")
    score = switchers.bayes_likelihood(pred, observed, m, h.bayes_mode)
    return switchers.bayes_switch(score, h.tau)


def hybrid_predict(h: HybridPredictor, scene: Scene, observed: Optional[Trajectory] = None) -> Trajectory:
    """Dispatch between the two predictors.

    The e2e prediction is always computed first. For ``bayes<m>`` detectors
    the first m output steps are the e2e means (no decision is possible
    before m observations) and the dispatch applies from step m+1.
    """
    pred = e2e.predict(h.e2e_model, scene)
    dec = detect(h, scene, pred, observed)
    e2e_pts = pred.means
    if not dec.decision:
        return Trajectory(e2e_pts, pred.dt)
    plan_pts = plan_prediction(h, scene).points
    m = bayes_steps(h.detector)
    if m:
        return Trajectory(np.vstack([e2e_pts[:m], plan_pts[m:]]), pred.dt)
    return Trajectory(plan_pts, pred.dt)


def switch_accuracy(decisions, labels) -> float:
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    if len(d) != len(y) or len(d) == 0:
        raise ValueError("decisions and labels must be non-empty and of equal length")
    return float(np.mean(d == y))


# ---------------------------------------------------------------- report


@dataclass
class MethodRow:
    method: str
    val_accuracy: Optional[float]
    test_accuracy: Optional[float]
    val_ade: float
    test_ade: float
    threshold: Optional[float] = None
    direction: Optional[str] = None
    decision_step: int = 1  # first step the decision can affect (m+1 for Bayes detectors)


@dataclass
class ExperimentReport:
    experiment: str
    seed: int
    counts: tuple
    label_stats: dict
    rows: list
    records: list = field(default_factory=list)

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "version": REPORT_VERSION,
            "experiment": self.experiment,
            "seed": self.seed,
            "counts": list(self.counts),
            "label_stats": self.label_stats,
            "methods": [asdict(r) for r in self.rows],
            "records": self.records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError("not an experiment report")
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')}")
        rows = [MethodRow(**r) for r in d["methods"]]
        return cls(d["experiment"], d["seed"], tuple(d["counts"]), d["label_stats"], rows, d["records"])

    def table(self) -> str:
        def pct(x):
            return "-" if x is None else f"{100 * x:.2f}%"

        names = {"always0": "e2e only", "always1": "plan only", "oracle": "oracle"}
        head = ("method", "val acc", "test acc", "val ADE", "test ADE")
        lines = [head]
        for r in self.rows:
            label = names.get(r.method, r.method)
            if bayes_steps(r.method):
                label = f"{r.method} (delayed to step {r.decision_step})"
            lines.append((label, pct(r.val_accuracy), pct(r.test_accuracy), f"{r.val_ade:.4f}", f"{r.test_ade:.4f}"))
        widths = [max(len(l[i]) for l in lines) for i in range(5)]
        out = [f"Experiment {self.experiment} (seed {self.seed})"]
        for k, l in enumerate(lines):
            out.append("  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(l)))
            if k == 0:
                out.append("  ".join("-" * w for w in widths))
        return "\n".join(out) + "\n"


def write_report(report: ExperimentReport, out_dir) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    jp = os.path.join(out_dir, "report.json")
    tp = os.path.join(out_dir, "report.txt")
    with open(jp, "w") as fh:
        fh.write(report.to_json())
    with open(tp, "w") as fh:
        fh.write(report.table())
    return jp, tp


def load_report(path) -> ExperimentReport:
    with open(path) as fh:
        return ExperimentReport.from_dict(json.load(fh))


def export_scatter(report: ExperimentReport, path, method: Optional[str] = None) -> str:
    """Per-example CSV for one method (default: the first detector in the report)."""
    if method is None:
        present = [r.method for r in report.rows]
        method = next((m for m in present if m not in ("always0", "always1")), present[0])
    recs = sorted((r for r in report.records if r["method"] == method), key=lambda r: (r["split"], r["segment_id"]))
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCATTER_COLUMNS)
            for r in recs:
                w.writerow([r["segment_id"], r["split"], repr(r["e2e_ade"]), repr(r["plan_ade"]),
                            repr(r["score"]), r["decision"], r["label"]])
    except OSError as exc:
        raise OSError(f"cannot write scatter CSV to {path}: {exc}") from exc
    return str(path)


def read_scatter(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("e2e_ade", "plan_ade", "score"):
            r[k] = float(r[k])
        r["decision"] = int(r["decision"])
        r["label"] = int(r["label"])
    return rows


# ---------------------------------------------------------------- experiment runner


@dataclass(frozen=True)
class RunConfig:
    e2e: e2e.E2EConfig = e2e.E2EConfig()
    irl: planner.IrlConfig = planner.IrlConfig()
    gan: switchers.GanConfig = switchers.GanConfig()
    classifier: switchers.ClassifierConfig = switchers.ClassifierConfig()
    bayes_mode: str = L2_PROXY
    plan_radius: float = 30.0
    workers: int = 1
    reuse_e2e_in_ensemble: bool = True


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage, self.message = stage, message


class _Stage:
    def __init__(self, name: str, timings: dict):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s ...", self.name)

    def __exit__(self, et, ev, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if ev is not None and not isinstance(ev, StageError):
            raise StageError(self.name, str(ev)) from ev
        return False


def _plan_ade_one(args):
    scene, label, weights, radius = args
    return ade(planner.predict_iterative(scene, weights, radius).target, label)


def plan_ades(segments, weights: planner.CostWeights, radius: float = 30.0, workers: int = 1) -> np.ndarray:
    jobs = [(s.scene, s.label, weights, radius) for s in segments]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return np.array(list(ex.map(_plan_ade_one, jobs, chunksize=16)))
    return np.array([_plan_ade_one(j) for j in jobs])


def _tune(scores_val, labels_val, scores_train, labels_train, direction):
    try:
        return switchers.tune_threshold(scores_val, labels_val, direction)
    except ValueError:
        log.warning("validation labels hold one class; tuning the threshold on train instead")
        return switchers.tune_threshold(scores_train, labels_train, direction)


def run_experiment(spec: ExperimentSpec, methods: Sequence[str] = DEFAULT_METHODS,
                   config: RunConfig = RunConfig(), datasets=None, timings: Optional[dict] = None) -> ExperimentReport:
    """Build data, train both predictors and every requested detector, evaluate on val and test.

    Switch labels follow the 2-sigma rule with train-set ADE statistics.
    Thresholds of the ensemble, GAN and short-horizon Bayes detectors are
    tuned on val; the full-horizon Bayes detector uses the threshold implied
    by the 2-sigma rule directly.
    """
    methods = check_methods(methods)
    timings = timings if timings is not None else {}
    e2e_cfg = config.e2e if config.e2e.seed == spec.seed else _with_seed(config.e2e, spec.seed)

    with _Stage("data", timings):
        train, val, test = datasets if datasets is not None else build_experiment(spec)
    splits = {"val": val.segments, "test": test.segments}
    with _Stage("train e2e", timings):
        model = e2e.train(train.segments, e2e_cfg)
    with _Stage("train irl", timings):
        irl_cfg = config.irl if config.irl.seed == spec.seed else _with_seed(config.irl, spec.seed)
        weights = planner.irl_train(train.segments, irl_cfg)
    with _Stage("e2e predictions", timings):
        preds = {k: e2e.predict_many(model, [s.scene for s in v]) for k, v in
                 (("train", train.segments), *splits.items())}
        e_ade = {k: np.array([ade(e2e.most_probable(p), s.label) for p, s in zip(preds[k], segs)])
                 for k, segs in (("train", train.segments), *splits.items())}
        mean, std = float(np.mean(e_ade["train"])), float(np.std(e_ade["train"]))
        labels = {k: switchers.two_sigma_labels(v, mean, std) for k, v in e_ade.items()}
    with _Stage("plan predictions", timings):
        p_ade = {k: plan_ades(v, weights, config.plan_radius, config.workers) for k, v in splits.items()}

    scores: dict = {}
    decisions: dict = {}
    extra: dict = {}
    for m in methods:
        if m == "always0":
            decisions[m] = {k: np.zeros(len(v), dtype=int) for k, v in splits.items()}
            scores[m] = {k: np.zeros(len(v)) for k, v in splits.items()}
        elif m == "always1":
            decisions[m] = {k: np.ones(len(v), dtype=int) for k, v in splits.items()}
            scores[m] = {k: np.ones(len(v)) for k, v in splits.items()}
        elif m == "oracle":
            scores[m] = {k: p_ade[k] - e_ade[k] for k in splits}
            decisions[m] = {k: (scores[m][k] < 0).astype(int) for k in splits}
        elif m == "ensemble":
            with _Stage("ensemble", timings):
                ens = switchers.train_ensemble(train.segments, e2e_cfg,
                                               first=model if config.reuse_e2e_in_ensemble else None)
                scores[m] = {k: switchers.ensemble_scores(ens, [s.scene for s in v]) for k, v in splits.items()}
                tr_scores = switchers.ensemble_scores(ens, [s.scene for s in train.segments])
                tau = _tune(scores[m]["val"], labels["val"], tr_scores, labels["train"], ABOVE)
                decisions[m] = {k: switchers.decisions_for(v, tau, ABOVE) for k, v in scores[m].items()}
                extra[m] = dict(threshold=tau, direction=ABOVE)
        elif m == "gan":
            with _Stage("gan", timings):
                gcfg = config.gan if config.gan.seed == spec.seed else _with_seed(config.gan, spec.seed)
                pair = switchers.gan_train([s.scene.target_history for s in train.segments], gcfg)
                scores[m] = {k: switchers.gan_scores(pair, [s.scene for s in v]) for k, v in splits.items()}
                tr_scores = switchers.gan_scores(pair, [s.scene for s in train.segments])
                tau = _tune(scores[m]["val"], labels["val"], tr_scores, labels["train"], BELOW)
                decisions[m] = {k: switchers.decisions_for(v, tau, BELOW) for k, v in scores[m].items()}
                extra[m] = dict(threshold=tau, direction=BELOW)
        elif m == "classifier":
            with _Stage("classifier", timings):
                ccfg = config.classifier if config.classifier.seed == spec.seed else \
                    _with_seed(config.classifier, spec.seed)
                Xtr = np.stack([switchers.classifier_features(s.scene, p) for s, p in zip(train.segments, preds["train"])])
                clf = switchers.train_classifier_features(Xtr, labels["train"], ccfg)
                scores[m] = {}
                for k, v in splits.items():
                    X = np.stack([switchers.classifier_features(s.scene, p) for s, p in zip(v, preds[k])])
                    scores[m][k] = switchers.classifier_probs(clf, X)
                decisions[m] = {k: (v >= 0.5).astype(int) for k, v in scores[m].items()}
                extra[m] = dict(threshold=0.5, direction=ABOVE)
        else:
            steps = bayes_steps(m)
            with _Stage(m, timings):
                if not 1 <= steps <= LABEL_LEN:
                    raise StageError(m, f"m must lie in 1..{LABEL_LEN}")
                scores[m] = {k: np.array([switchers.bayes_likelihood(p, s.label, steps, config.bayes_mode)
                                          for p, s in zip(preds[k], v)]) for k, v in splits.items()}
                if steps == LABEL_LEN and config.bayes_mode == L2_PROXY:
                    tau = switchers.two_sigma_tau(mean, std)
                else:
                    tr_scores = np.array([switchers.bayes_likelihood(p, s.label, steps, config.bayes_mode)
                                          for p, s in zip(preds["train"], train.segments)])
                    tau = _tune(scores[m]["val"], labels["val"], tr_scores, labels["train"], BELOW)
                decisions[m] = {k: switchers.decisions_for(v, tau, BELOW) for k, v in scores[m].items()}
                extra[m] = dict(threshold=tau, direction=BELOW, decision_step=steps + 1)

    rows, records = [], []
    for m in methods:
        hyb = {k: np.where(decisions[m][k] == 1, p_ade[k], e_ade[k]) for k in splits}
        acc = {k: None if m in ("always0", "always1", "oracle") else switch_accuracy(decisions[m][k], labels[k])
               for k in splits}
        rows.append(MethodRow(m, acc["val"], acc["test"], float(np.mean(hyb["val"])), float(np.mean(hyb["test"])),
                              **extra.get(m, {})))
        for k, segs in splits.items():
            for i, s in enumerate(segs):
                records.append({
                    "method": m, "split": k, "segment_id": s.segment_id,
                    "e2e_ade": float(e_ade[k][i]), "plan_ade": float(p_ade[k][i]),
                    "score": float(scores[m][k][i]), "decision": int(decisions[m][k][i]),
                    "label": int(labels[k][i]),
                })
    records.sort(key=lambda r: (r["method"], r["split"], r["segment_id"]))
    stats = {"train_ade_mean": mean, "train_ade_std": std, "threshold": mean + 2 * std,
             "val_positives": int(labels["val"].sum()), "test_positives": int(labels["test"].sum()),
             "plan_weights": list(weights.theta)}
    return ExperimentReport(spec.id, spec.seed, tuple(spec.counts), stats, rows, records)


def _with_seed(cfg, seed: int):
    from dataclasses import replace
    return replace(cfg, seed=seed)
