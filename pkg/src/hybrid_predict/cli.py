"""Command-line entry point: ``hybrid-predict {gen,train,experiment}``.

Every command echoes its fully resolved configuration, with a hash of it and
of its inputs, into the output directory (``config_gen.json``,
``config_train_<what>.json``, ``config.json`` for experiments).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from typing import Optional

from . import datafiles, e2e, hybrid_eval, planner, scenario, switchers
from .scenario import ExperimentSpec, MapSpec, NoiseSpec

log = logging.getLogger("hybrid_predict")

WHAT = ("e2e", "irl", "ensemble", "gan", "classifier")
THREADS_ENV = "HYBRID_PREDICT_THREADS"


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


# ---------------------------------------------------------------- config


def _tuples(v):
    if isinstance(v, list):
        return tuple(_tuples(x) for x in v)
    return v


def _build(cls, d: Optional[dict], section: str, **fixed):
    d = dict(d or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ValueError(f"config section '{section}': unknown keys {unknown}")
    return cls(**{k: _tuples(v) for k, v in d.items()}, **fixed)


def _irl_config(d: Optional[dict], seed: int) -> planner.IrlConfig:
    d = dict(d or {})
    fixed = {"seed": seed}
    if "family" in d:
        fixed["family"] = _build(planner.CandidateFamily, d.pop("family"), "irl.family")
    if "idm" in d:
        fixed["idm"] = _build(scenario.IdmParams, d.pop("idm"), "irl.idm")
    d.pop("seed", None)
    return _build(planner.IrlConfig, d, "irl", **fixed)


def _seeded(cls, d, section, seed):
    d = {k: v for k, v in (d or {}).items() if k != "seed"}
    return _build(cls, d, section, seed=seed)


def experiment_spec(exp_id: str, seed: int, overrides: Optional[dict] = None) -> ExperimentSpec:
    over = dict(overrides or {})
    for key in ("train_maps", "test_maps"):
        if key in over:
            over[key] = tuple(_build(MapSpec, m, f"experiment.{key}") for m in over[key])
    if "noise" in over and over["noise"] is not None:
        over["noise"] = _build(NoiseSpec, {"seed": seed, **over["noise"]}, "experiment.noise")
    for key in ("id", "seed"):
        if key in over:
            raise ValueError(f"set experiment.{key} with the command-line flag instead")
    names = {f.name for f in dataclasses.fields(ExperimentSpec)}
    unknown = sorted(set(over) - names)
    if unknown:
        raise ValueError(f"config section 'experiment': unknown keys {unknown}")
    return scenario.default_experiment(exp_id, seed, **{k: _tuples(v) for k, v in over.items()})


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise CliError("config", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError("config", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError("config", f"{path} must hold a JSON object")
    return cfg


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError("config", f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run_config(cfg: dict, seed: int) -> hybrid_eval.RunConfig:
    known = {"seed", "experiment", "e2e", "irl", "gan", "classifier", "bayes_mode", "plan_radius", "methods"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ValueError(f"unknown config sections {unknown}")
    return hybrid_eval.RunConfig(
        e2e=_seeded(e2e.E2EConfig, cfg.get("e2e"), "e2e", seed),
        irl=_irl_config(cfg.get("irl"), seed),
        gan=_seeded(switchers.GanConfig, cfg.get("gan"), "gan", seed),
        classifier=_seeded(switchers.ClassifierConfig, cfg.get("classifier"), "classifier", seed),
        bayes_mode=cfg.get("bayes_mode", switchers.L2_PROXY),
        plan_radius=float(cfg.get("plan_radius", 30.0)),
        workers=worker_count(),
    )


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def echo_config(out_dir: str, command: str, resolved: dict, inputs: Optional[dict] = None,
                name: str = "config.json") -> str:
    """Write the resolved config with a content hash of it and of the inputs."""
    body = json.dumps(_jsonable(resolved), sort_keys=True)
    echo = {"command": command, "resolved": json.loads(body),
            "config_sha1": hashlib.sha1(body.encode()).hexdigest(), "inputs": inputs or {}}
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(echo, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def manifest_fields(spec: ExperimentSpec) -> dict:
    noise = None
    if spec.id == "III":
        n = spec.noise or NoiseSpec()
        noise = {"mu": n.mu, "sigma": n.sigma, "seed": n.seed}
    return {
        "experiment": spec.id, "seed": spec.seed, "counts": list(spec.counts),
        "train_maps": [m.name for m in spec.train_maps], "test_maps": [m.name for m in spec.test_maps],
        "train_exit_filter": spec.train_exit_filter if spec.id == "I" else None,
        "noise": noise, "stride": spec.stride,
    }


# ---------------------------------------------------------------- commands


def _write_losses(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_gen(args, cfg: dict) -> dict:
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    try:
        spec = experiment_spec(args.experiment, seed, cfg.get("experiment"))
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc
    echo_config(args.out, "gen", {"experiment": spec}, name="config_gen.json")
    try:
        datasets = scenario.build_experiment(spec)
    except Exception as exc:
        raise CliError("gen", str(exc)) from exc
    try:
        man = datafiles.write_datasets(args.out, datasets, manifest_fields(spec))
    except OSError as exc:
        raise CliError("write datasets", str(exc)) from exc
    log.info("wrote %s", ", ".join(f"{k}: {v['segments']} segments" for k, v in man["files"].items()))
    return man


def _load_data(data_dir: str):
    try:
        return datafiles.read_datasets(data_dir)
    except (OSError, ValueError) as exc:
        raise CliError("load data", str(exc)) from exc


def cmd_train(args, cfg: dict) -> list:
    data_dir = args.data or args.out
    man, splits = _load_data(data_dir)
    if "train" not in splits:
        raise CliError("load data", f"manifest in {data_dir} lists no train split")
    train = splits["train"]
    seed = args.seed if args.seed is not None else int(cfg.get("seed", man.get("seed", 0)))
    try:
        rc = run_config(cfg, seed)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc
    what = args.what
    section = {"e2e": rc.e2e, "ensemble": rc.e2e, "irl": rc.irl, "gan": rc.gan, "classifier": rc.classifier}[what]
    echo_config(args.out, f"train --what {what}", {what: section},
                {"manifest": {k: v["sha256"] for k, v in man["files"].items()}, "data_dir": data_dir},
                name=f"config_train_{what}.json")
    out = args.out
    written = []
    stage = f"train {what}"
    try:
        if what == "e2e":
            model = e2e.train(train, rc.e2e)
            written += [_save_e2e(model, out, "e2e")]
        elif what == "ensemble":
            first = _maybe_load_e2e(os.path.join(out, "e2e.bin"), rc.e2e)
            ens = switchers.train_ensemble(train, rc.e2e, first=first)
            for k, m in enumerate(ens.members):
                written.append(_save_e2e(m, out, f"ensemble_{k}"))
        elif what == "irl":
            weights = planner.irl_train(train, rc.irl)
            path = os.path.join(out, "irl_weights.json")
            with open(path, "w") as fh:
                fh.write(weights.to_json() + "\n")
            written.append(path)
        elif what == "gan":
            pair = switchers.gan_train([s.scene.target_history for s in train], rc.gan)
            path = os.path.join(out, "gan.bin")
            switchers.save_gan(pair, path)
            _write_losses(os.path.join(out, "gan_log.csv"), ("step", "d_loss", "g_loss"),
                          [(r["step"], r["d_loss"], r["g_loss"]) for r in pair.log if "d_loss" in r])
            written.append(path)
        else:
            mpath = os.path.join(out, "e2e.bin")
            if not os.path.exists(mpath):
                raise FileNotFoundError(f"classifier needs the e2e model: expected {mpath} (run train --what e2e)")
            model = e2e.load_model(mpath)
            clf = switchers.classifier_train(model, train, rc.classifier)
            path = os.path.join(out, "classifier.bin")
            switchers.save_classifier(clf, path)
            _write_losses(os.path.join(out, "classifier_loss.csv"), ("epoch", "loss"), enumerate(clf.losses))
            written.append(path)
    except CliError:
        raise
    except Exception as exc:
        raise CliError(stage, str(exc)) from exc
    for p in written:
        log.info("wrote %s", p)
    return written


def _save_e2e(model: e2e.E2EModel, out: str, name: str) -> str:
    path = os.path.join(out, f"{name}.bin")
    e2e.save_model(model, path)
    _write_losses(os.path.join(out, f"{name}_loss.csv"), ("epoch", "loss"), enumerate(model.losses))
    return path


def _maybe_load_e2e(path: str, config: e2e.E2EConfig) -> Optional[e2e.E2EModel]:
    if not os.path.exists(path):
        return None
    model = e2e.load_model(path)
    return model if model.config == config else None


def cmd_experiment(args, cfg: dict) -> hybrid_eval.ExperimentReport:
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    methods = args.methods.split(",") if args.methods else cfg.get("methods", list(hybrid_eval.DEFAULT_METHODS))
    try:
        methods = hybrid_eval.check_methods([m.strip() for m in methods if m.strip()])
        spec = experiment_spec(args.experiment, seed, cfg.get("experiment"))
        rc = run_config(cfg, seed)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc
    out = args.out
    echo_config(out, "experiment", {"experiment": spec, "run": rc, "methods": methods})
    try:
        datasets = scenario.build_experiment(spec)
    except Exception as exc:
        raise CliError("data", str(exc)) from exc
    try:
        datafiles.write_datasets(os.path.join(out, "data"), datasets, manifest_fields(spec))
    except OSError as exc:
        raise CliError("write datasets", str(exc)) from exc
    timings: dict = {}
    try:
        report = hybrid_eval.run_experiment(spec, methods, rc, datasets=datasets, timings=timings)
    except hybrid_eval.StageError as exc:
        raise CliError(exc.stage, exc.message) from exc
    try:
        hybrid_eval.write_report(report, out)
        _write_thresholds(report, os.path.join(out, "thresholds.json"))
        for m in methods:
            hybrid_eval.export_scatter(report, os.path.join(out, f"scatter_{m}.csv"), m)
    except OSError as exc:
        raise CliError("write report", str(exc)) from exc
    for name, sec in timings.items():
        log.info("stage %-16s %7.1f s", name, sec)
    print(report.table(), end="")
    return report


def _write_thresholds(report: hybrid_eval.ExperimentReport, path: str) -> None:
    st = report.label_stats
    body = {
        "label_rule": {"train_ade_mean": st["train_ade_mean"], "train_ade_std": st["train_ade_std"],
                       "threshold": st["threshold"]},
        "detectors": {r.method: {"threshold": r.threshold, "direction": r.direction, "decision_step": r.decision_step}
                      for r in report.rows if r.threshold is not None},
    }
    with open(path, "w") as fh:
        json.dump(body, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybrid-predict", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--seed", type=int, default=None, help="global seed (default: config or 0)")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--config", default=None, help="JSON config file; flags override it")

    g = sub.add_parser("gen", help="generate train/val/test datasets")
    g.add_argument("--experiment", "--id", dest="experiment", choices=("I", "II", "III"), default="I")
    common(g, "runs/data")

    t = sub.add_parser("train", help="train one model from a generated dataset")
    t.add_argument("--what", choices=WHAT, required=True)
    t.add_argument("--data", default=None, help="dataset directory (default: --out)")
    common(t, "runs/data")

    e = sub.add_parser("experiment", help="run one experiment end to end")
    e.add_argument("--id", "--experiment", dest="experiment", choices=("I", "II", "III"), default="I")
    e.add_argument("--methods", default=None, help="comma list, e.g. always0,always1,bayes30")
    common(e, "runs/experiment")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        {"gen": cmd_gen, "train": cmd_train, "experiment": cmd_experiment}[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: stage 'write output' failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
