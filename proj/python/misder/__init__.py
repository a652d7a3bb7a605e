"""Python interface to the misder library.

Configs travel as dicts and are validated by the C++ core; metric reports
come back as dicts with the same keys as the JSON reports written by the
command-line tool.
"""

import json

from . import _core

MisderError = _core.MisderError

__all__ = [
    "MisderError",
    "auc",
    "default_run_config",
    "gen_synthetic_drift",
    "integrate",
    "load_jsonl",
    "metric_report",
    "resolve_run_config",
    "run_pipeline",
    "save_jsonl",
    "sp_auc",
]


def default_run_config():
    return json.loads(_core.default_run_config())


def resolve_run_config(overrides=None):
    """Defaults overlaid with ``overrides``; unknown keys raise."""
    return json.loads(_core.resolve_run_config(json.dumps(overrides or {})))


def gen_synthetic_drift(**config):
    """Synthetic drift benchmark as a list of article dicts."""
    return _core.gen_synthetic_drift(json.dumps(config))


def load_jsonl(path):
    return _core.load_jsonl(str(path))


def save_jsonl(path, articles):
    _core.save_jsonl(str(path), articles)


def auc(scores, labels):
    return _core.auc(list(map(float, scores)), list(map(int, labels)))


def sp_auc(scores, labels, max_fpr=0.1):
    return _core.sp_auc(list(map(float, scores)), list(map(int, labels)), max_fpr)


def metric_report(scores, labels, seed=0):
    return json.loads(_core.metric_report(list(map(float, scores)), list(map(int, labels)), seed))


def integrate(field, z0, t0, t1, rtol=1e-6, atol=1e-8):
    """Adaptive Dormand-Prince integration of dz/dt = field(z, t) for a 2-D array z."""
    return _core.integrate(field, z0, t0, t1, rtol, atol)


def run_pipeline(articles, config=None):
    """Warm-up, dynamic environment learning, prediction and evaluation.

    Returns a dict with the future-period ``report``, the warm-up DER
    ``report_z0``, the DER series (``z0``, ``ders``, ``times``) and, for
    forecasting variants, ``future_der``.
    """
    out = _core.run_pipeline(articles, json.dumps(config or {}))
    out["report"] = json.loads(out["report"])
    out["report_z0"] = json.loads(out["report_z0"])
    return out
