import numpy as np
import pytest

from hybrid_predict import e2e
from hybrid_predict.core import Scene, Trajectory
from hybrid_predict.frenet import ReferencePath
from hybrid_predict.scenario import build_experiment, default_experiment

SMALL = dict(counts=(160, 60, 80), agents_per_episode=25, episode_steps=500, min_episodes=3)


def random_scene(rng, label_len=30, max_neighbors=3):
    """Gently curved road with a target and a few jittered neighbours."""
    x = np.linspace(-50, 150, 401)
    path = ReferencePath(np.stack([x, 0.002 * x ** 2], axis=1), "bend")

    def hist(x0, y0, v):
        return Trajectory(np.stack([x0 + v * 0.1 * np.arange(10), y0 + rng.normal(0, 0.05, 10)], axis=1))

    tgt = hist(0.0, 0.0, rng.uniform(3, 9))
    nbs = tuple(hist(rng.uniform(-12, 12), rng.uniform(-4, 4), rng.uniform(0, 9))
                for _ in range(int(rng.integers(0, max_neighbors + 1))))
    label = Trajectory(tgt.points[-1] + np.cumsum(rng.normal([0.7, 0], [0.1, 0.05], (label_len, 2)), axis=0))
    return Scene(tgt, nbs, path, "bend", neighbor_paths=(path,) * len(nbs)), label


@pytest.fixture(scope="session")
def small_exp1():
    return build_experiment(default_experiment("I", 0, **SMALL))


@pytest.fixture(scope="session")
def small_e2e(small_exp1):
    cfg = e2e.E2EConfig(hidden_size=16, decoder_hidden=32, epochs=8, learning_rate=5e-3)
    return e2e.train(small_exp1[0], cfg)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
