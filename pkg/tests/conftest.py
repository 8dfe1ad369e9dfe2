import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphloc.data import SynthSpec, synth_generate  # noqa: E402
from graphloc.model import ModelConfig, init_params  # noqa: E402
from graphloc.trainer import TrainConfig  # noqa: E402


def small_config(**kw) -> ModelConfig:
    base = dict(num_classes=3, input_dim=12, hidden_dim=6, phi_dim=5)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cfg():
    return small_config()


@pytest.fixture
def params(cfg):
    return init_params(cfg, np.random.default_rng(7))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 classes, 24 dims, noise-free enough to learn in a few epochs."""
    spec = SynthSpec(num_classes=4, train_videos=16, test_videos=8, segments_range=(10, 20), feature_dim=24,
                     noise_sigma=0.2, cluster_separation=2.0, action_length_range=(2, 5), seed=5)
    return synth_generate(spec, tmp_path_factory.mktemp("tiny"))


@pytest.fixture
def tiny_train_config():
    model = ModelConfig(num_classes=4, input_dim=24, hidden_dim=16, phi_dim=16)
    return TrainConfig(model=model, epochs=3, batch_size=4, seed=11)


# ---------------------------------------------------------------------------
# one pass/fail line per acceptance criterion


_RESULTS = pytest.StashKey[dict]()


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when == "teardown" or (call.when == "setup" and call.excinfo is None):
        return
    item.config.stash.setdefault(_RESULTS, {})[marker.args[0]] = (call.excinfo is None, item)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, item = results[n]
        detail = dict(item.user_properties).get("detail", "")
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {item.name}  {detail}")
