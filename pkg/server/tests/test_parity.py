"""Cross-implementation parity: this server vs the tuning client's builtin
oracle, numerically linked through the exported-weights JSON interface."""

import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import running_server

prompt_tuner = pytest.importorskip(
    "prompt_tuner", reason="parity check needs the tuning client installed"
)

from prompt_tuner.oracle import RemoteOracle, builtin_from_weights  # noqa: E402

CLIENT_CONFIG = {
    "geometry": {"full_h": 32, "full_w": 32, "resized_h": 28, "resized_w": 28,
                 "freq_h": 14, "freq_w": 14},
    "oracle": {"seed": 5},
    "dataset": {"kind": "biased", "rho": 0.9, "n_per_class": 24,
                "n_test_per_class": 8, "seed": 11},
    "iterations": 0,
    "seed": 42,
}


@pytest.fixture(scope="module")
def exported_weights(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("export")
    config = tmp / "run.json"
    config.write_text(json.dumps(CLIENT_CONFIG))
    weights = tmp / "weights.json"
    proc = subprocess.run(
        [sys.executable, "-m", "prompt_tuner.cli", "probe-oracle",
         "--export-weights", str(weights), "--config", str(config)],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    return weights


def test_server_matches_builtin_oracle_on_random_images(exported_weights):
    builtin = builtin_from_weights(exported_weights)
    rng = np.random.default_rng(123)
    images = rng.random((50,) + builtin.input_geometry)
    want = builtin.predict_batch(images)
    with running_server(exported_weights) as endpoint:
        remote = RemoteOracle(endpoint)
        got = remote.predict_batch(images)
    assert np.max(np.abs(got - want)) < 1e-5


def test_meta_matches_export(exported_weights):
    doc = json.loads(exported_weights.read_text())
    with running_server(exported_weights) as endpoint:
        remote = RemoteOracle(endpoint)
    assert remote.num_classes == len(doc["b"])
    assert list(remote.input_geometry) == doc["shape"]
