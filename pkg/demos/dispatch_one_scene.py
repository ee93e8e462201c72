"""Train both predictors on a small dataset, then walk one test scene through the hybrid.

Uses a 10-step Bayes detector: after 10 observed steps it compares the e2e
prediction with what actually happened, and hands steps 11-30 to the planner
if the match is poor.
"""
import numpy as np

from hybrid_predict import e2e, planner, switchers
from hybrid_predict.core import ade
from hybrid_predict.hybrid_eval import HybridPredictor, hybrid_predict
from hybrid_predict.scenario import build_experiment, default_experiment

train, val, test = build_experiment(default_experiment("I", 0, counts=(200, 50, 50), agents_per_episode=25,
                                                       episode_steps=500, min_episodes=3))
model = e2e.train(train, e2e.E2EConfig(epochs=20))
weights = planner.irl_train(train, planner.IrlConfig(iterations=100))
print("cost weights:", np.round(weights.theta, 5))

train_ades = switchers.e2e_ades(model, train)
val_labels = switchers.two_sigma_labels(switchers.e2e_ades(model, val), train_ades.mean(), train_ades.std())
val_scores = [switchers.bayes_likelihood(e2e.predict(model, s.scene), s.label, 10) for s in val]
tau = switchers.tune_threshold(val_scores, val_labels, switchers.BELOW)
hyb = HybridPredictor(model, weights, "bayes10", tau=tau)

seg = max(test.segments, key=lambda s: ade(e2e.predict(model, s.scene).means, s.label))
pred = e2e.predict(model, seg.scene)
plan = planner.predict_iterative(seg.scene, weights).target
out = hybrid_predict(hyb, seg.scene, seg.label)
print(f"segment {seg.segment_id}: e2e ADE {ade(pred.means, seg.label):.3f}, plan ADE {ade(plan, seg.label):.3f}")
print(f"Bayes score {switchers.bayes_likelihood(pred, seg.label, 10):.4f} vs tau {tau:.4f}")
print(f"hybrid ADE {ade(out, seg.label):.3f}")
