"""Run a scaled-down Experiment I end to end and print the results table.

Takes about half a minute on one core. The full-size run is

    hybrid-predict experiment --id I --out runs/exp1
"""
import sys

from hybrid_predict import e2e, planner, switchers
from hybrid_predict.hybrid_eval import RunConfig, run_experiment
from hybrid_predict.scenario import default_experiment

exp_id = sys.argv[1] if len(sys.argv) > 1 else "I"
spec = default_experiment(exp_id, seed=0, counts=(300, 100, 150), agents_per_episode=25,
                          episode_steps=500, min_episodes=3)
cfg = RunConfig(
    e2e=e2e.E2EConfig(epochs=30),
    irl=planner.IrlConfig(iterations=100),
    gan=switchers.GanConfig(steps=500),
    classifier=switchers.ClassifierConfig(epochs=40),
)
timings = {}
report = run_experiment(spec, config=cfg, timings=timings)
print(report.table())
for stage, sec in timings.items():
    print(f"  {stage:<18s}{sec:6.1f} s")
