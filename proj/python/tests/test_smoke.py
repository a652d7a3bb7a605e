import math

import numpy as np
import pytest

import misder

TINY = {
    "der_len": 4,
    "dim": 16,
    "heads": 2,
    "layers": 1,
    "max_len": 16,
    "warmup_epochs": 2,
    "der_epochs": 1,
    "der_min_steps": 10,
    "batch": 32,
    "lr_detector": 3e-3,
    "lr_der": 1e-2,
    "ode_latent": 8,
    "ode_field_hidden": 8,
    "ode_rtol": 1e-4,
    "ode_atol": 1e-6,
}


def test_config_round_trip_and_validation():
    cfg = misder.resolve_run_config({"variant": "lstm", "seed": 3})
    assert cfg["variant"] == "lstm"
    assert cfg["seed"] == 3
    assert set(misder.default_run_config()) == set(cfg)
    with pytest.raises(Exception, match="learning_rate"):
        misder.resolve_run_config({"learning_rate": 1.0})
    with pytest.raises(Exception):
        misder.resolve_run_config({"variant": "gru"})


def test_generator_is_deterministic(tmp_path):
    a = misder.gen_synthetic_drift(seed=7, per_period_count=20)
    b = misder.gen_synthetic_drift(seed=7, per_period_count=20)
    assert a == b
    assert len(a) == 8 * 20
    assert {x["label"] for x in a} <= {0, 1}
    path = tmp_path / "articles.jsonl"
    misder.save_jsonl(path, a)
    assert misder.load_jsonl(path) == sorted(a, key=lambda x: x["timestamp"])


def test_metrics_match_brute_force():
    rng = np.random.default_rng(0)
    scores = rng.integers(0, 10, size=60) / 10.0
    labels = rng.integers(0, 2, size=60)
    labels[:2] = [0, 1]
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    brute = np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])
    assert misder.auc(scores, labels) == pytest.approx(brute, abs=1e-12)
    assert misder.sp_auc(scores, labels, 1.0) == pytest.approx(brute, abs=1e-12)
    report = misder.metric_report([1, 1, 0, 0], [1, 0, 0, 0])
    assert report["macro_f1"] == pytest.approx(0.7333333333333333)
    assert report["accuracy"] == 0.75


def test_integrator_decay():
    z = misder.integrate(lambda z, t: -z, np.ones((1, 1)), 0.0, 1.0)
    assert abs(z[0, 0] - math.exp(-1.0)) < 1e-6


def test_pipeline_runs_end_to_end():
    articles = misder.gen_synthetic_drift(seed=1, per_period_count=60)
    out = misder.run_pipeline(articles, dict(TINY, variant="ode", seed=1))
    assert 0.0 <= out["report"]["macro_f1"] <= 1.0
    assert len(out["ders"]) == 7
    assert out["future_der"].shape == (4, 16)
    assert out["times"] == sorted(out["times"])
    again = misder.run_pipeline(articles, dict(TINY, variant="ode", seed=1))
    assert again["report"] == out["report"]
    assert np.array_equal(again["future_der"], out["future_der"])
