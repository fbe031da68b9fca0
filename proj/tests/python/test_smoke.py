"""Smoke tests for the python surface: train, sample, score, round-trip."""

import json
import math

import pytest

import riemdiff


CIRCLE_CONFIG = {
    "manifold": {"kind": "sphere", "d": 1},
    "network": {"activation": "sine", "hidden_layers": 1, "hidden_width": 8},
    "train": {
        "steps": 5,
        "batch_size": 4,
        "path_steps": 8,
        "scheduler": "none",
        "learning_rate": 1e-3,
    },
    "paths": {"checkpoint": "ck.json", "metrics": "metrics.tsv"},
    "target": {
        "kind": "vmf-mixture",
        "components": [{"mean": [1.0, 0.0], "spread": 2.0, "weight": 1.0}],
    },
}

LOG_TWO_PI = math.log(2.0 * math.pi)


def config(steps: int) -> str:
    doc = json.loads(json.dumps(CIRCLE_CONFIG))
    doc["train"]["steps"] = steps
    return json.dumps(doc)


def test_manifold_vocabulary():
    sphere = riemdiff.Manifold.sphere(2)
    assert sphere.d == 2 and sphere.m == 3
    assert "sphere" in sphere.name()
    x = riemdiff.prior_sample(sphere, seed=1)
    assert len(x) == 3
    assert riemdiff.on_manifold(sphere, x)
    assert riemdiff.prior_log_density(sphere, x) == pytest.approx(
        -math.log(4.0 * math.pi)
    )


def test_train_sample_and_metrics():
    model = riemdiff.Model.train(config(5), seed=7)
    assert model.step == 5
    assert model.manifold.m == 2

    lines = model.metrics_tsv.splitlines()
    assert lines[0] == "step\tloss\tloss_std\tlr\tproposal_variance"
    assert len(lines) == 6

    points = model.sample(8, seed=1)
    assert len(points) == 8
    for x in points:
        assert len(x) == 2
        assert abs(x[0] ** 2 + x[1] ** 2 - 1.0) < 1e-9

    flow_points = model.sample(3, seed=2, lambda_=1.0)
    assert all(abs(x[0] ** 2 + x[1] ** 2 - 1.0) < 1e-9 for x in flow_points)

    again = riemdiff.Model.train(config(5), seed=7)
    assert again.to_json() == model.to_json()


def test_untrained_model_is_the_prior():
    model = riemdiff.Model.train(config(0), seed=3)
    x = [1.0, 0.0]
    assert model.log_density(x) == pytest.approx(-LOG_TWO_PI, abs=1e-9)
    assert model.evidence_bound(x, k=4, steps=10, seed=2) == pytest.approx(
        -LOG_TWO_PI, abs=1e-9
    )


def test_checkpoint_round_trip(tmp_path):
    model = riemdiff.Model.train(config(2), seed=5)
    path = tmp_path / "ck.json"
    model.save(str(path))
    loaded = riemdiff.Model.load(str(path))
    assert loaded.to_json() == model.to_json()
    assert loaded.step == 2

    rebuilt = riemdiff.Model.from_json(model.to_json())
    assert rebuilt.sample(2, seed=9) == model.sample(2, seed=9)


def test_errors_surface_as_python_exceptions(tmp_path):
    with pytest.raises(riemdiff.ConfigError):
        riemdiff.Model.train("{ not json", seed=1)
    with pytest.raises(riemdiff.ConfigError):
        riemdiff.Model.train(json.dumps({"zap": 1}), seed=1)
    with pytest.raises(riemdiff.IoError):
        riemdiff.Model.load(str(tmp_path / "missing.json"))
    model = riemdiff.Model.train(config(0), seed=1)
    with pytest.raises(riemdiff.ConfigError):
        model.sample(2, seed=1, lambda_=2.0)


def test_config_hash_ignores_whitespace():
    compact = json.dumps(json.loads(config(3)), separators=(",", ":"))
    spaced = json.dumps(json.loads(config(3)), indent=4)
    assert riemdiff.config_hash(compact) == riemdiff.config_hash(spaced)
    assert riemdiff.config_hash(config(3)) != riemdiff.config_hash(config(4))
