"""Orthogonal quantile regression forests for longitudinal data."""

import json

from ._oqrf import (
    OqrfError,
    SchemaError,
    ValidationError,
    __version__,
    bandwidth_rule,
    check_loss,
    simulate,
    smoothed_loss,
    smoothed_score,
    true_theta,
)
from . import _oqrf

import numpy as np

__all__ = [
    "OqrfError",
    "SchemaError",
    "ValidationError",
    "__version__",
    "bandwidth_rule",
    "check_loss",
    "fit",
    "monte_carlo",
    "selftest",
    "simulate",
    "smoothed_loss",
    "smoothed_score",
    "true_theta",
]


def _matrix(a, rows):
    a = np.asarray(a, dtype=float)
    return a.reshape(rows, -1) if a.ndim == 1 else a


def fit(data, queries, seed=0, config=None, threads=1):
    """Estimate theta(x0) at each query point.

    ``data`` is a mapping with row-aligned arrays ``subject``, ``y``, ``t``,
    ``w`` and ``x`` (the layout returned by :func:`simulate`); rows of a
    subject must be contiguous and ``w`` must start with the intercept column.
    ``config`` takes the same keys as the CLI config file.
    """
    y = np.asarray(data["y"], dtype=float)
    n = y.shape[0]
    q = np.asarray(queries, dtype=float)
    if q.ndim == 1:
        q = q.reshape(-1, 1)
    return _oqrf._fit(
        np.asarray(data["subject"], dtype=np.int32),
        y,
        _matrix(data["t"], n),
        _matrix(data["w"], n),
        _matrix(data["x"], n),
        q,
        seed,
        json.dumps(config or {}),
        threads,
    )


def monte_carlo(methods=("oqrf",), replicates=5, seed=0, config=None, threads=1):
    """Bias and root-MISE of each method over simulated replicates."""
    return _oqrf._monte_carlo(list(methods), replicates, seed, json.dumps(config or {}), threads)


def selftest(only=None, seed=0, threads=1):
    """Run the built-in property checks and return the parsed report."""
    return json.loads(_oqrf._selftest(only, seed, threads))
