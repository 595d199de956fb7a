"""Feature-based baseline detectors: update norm, update std, and cosine
similarity to a randomly chosen reference client. These read only indirect
statistics of the updates, which is exactly what geometry-mimicking
free-rider strategies are built to fool.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nn import ParamVector
from .stats import z_test


@dataclass
class FeatureScores:
    kind: str  # "l2" | "std" | "cosim"
    values: np.ndarray  # one scalar per client
    reference_client: int | None = None  # cosim only

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


def l2_feature(updates: list[ParamVector]) -> FeatureScores:
    """Euclidean norm of each client's flat update."""
    if not updates:
        raise ValueError("need at least one update")
    return FeatureScores("l2", np.asarray([u.norm() for u in updates]))


def std_feature(updates: list[ParamVector]) -> FeatureScores:
    """Population standard deviation of each update's coordinates."""
    if not updates:
        raise ValueError("need at least one update")
    if any(u.values.size < 2 for u in updates):
        raise ValueError("updates must have at least 2 coordinates")
    return FeatureScores("std", np.asarray([u.std() for u in updates]))


def cosim_feature(updates: list[ParamVector], rng: np.random.Generator) -> FeatureScores:
    """Cosine similarity of every update to one per-round reference client.

    The reference is drawn uniformly and shared by the whole cohort; the
    reference client itself is compared against a second draw so nobody
    scores against their own update.
    """
    n = len(updates)
    if n < 2:
        raise ValueError("need at least 2 clients")
    ref = int(rng.integers(n))
    alt = int(rng.integers(n - 1))
    if alt >= ref:
        alt += 1
    values = np.empty(n)
    for i, u in enumerate(updates):
        other = updates[alt] if i == ref else updates[ref]
        values[i] = _cosine(u.values, other.values)
    return FeatureScores("cosim", values, reference_client=ref)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        warnings.warn("zero-norm update in cosim feature, returning 0", RuntimeWarning)
        return 0.0
    return float(u @ v) / (nu * nv)


def feature_decide(scores, tau: float) -> np.ndarray:
    """Two-sided cohort z-test on a per-client feature vector."""
    values = scores.values if isinstance(scores, FeatureScores) else scores
    return np.asarray([v.flag for v in z_test(values, tau, "two_sided")], dtype=bool)
