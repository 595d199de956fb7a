"""Property-style detectors: infer each client's label distribution, then
score how plausible it is for a genuinely training client.

Label inference reads the last-layer part of a client's update. Two
attacks are provided:

  peeling  per-label presence scores from the last-layer weight-row sums,
           iteratively decremented by a per-label impact estimated on
           auxiliary noise data, one count peeled per reported sample
  basis    null classes removed via the bias-row sign test, remaining mass
           from a non-negative least-squares fit of the client's last-layer
           update by per-label basis gradients plus a unified base

Two scoring rules turn inferred distributions into per-round scores:
consistency (distance to the client's previous distribution) and diversity
(log residual of the best fit by global + uniform distributions). Both are
decided with a two-sided cohort z-test: fabricated updates yield
distributions that are either suspiciously stable or suspiciously easy to
reconstruct, so both tails carry evidence.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .nn import DenseNet, ParamVector, loss_and_grad
from .stats import z_test

DIVERSITY_MSE_FLOOR = 1e-12


@dataclass
class LabelDistribution:
    """Normalized per-label frequency vector (a point on the simplex)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probs must be a non-empty vector")
        if (p < -1e-12).any():
            raise ValueError("probs must be non-negative")
        total = p.sum()
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"probs must sum to 1, got {total}")
        self.probs = np.clip(p, 0.0, None)

    @staticmethod
    def uniform(n_labels: int) -> "LabelDistribution":
        return LabelDistribution(np.full(n_labels, 1.0 / n_labels))

    @staticmethod
    def from_counts(counts: np.ndarray) -> "LabelDistribution":
        c = np.asarray(counts, dtype=np.float64)
        total = c.sum()
        if total <= 0:
            return LabelDistribution.uniform(c.size)
        return LabelDistribution(c / total)


def _last_layer_slices(shapes) -> tuple[slice, slice]:
    """Flat-vector slices of the final layer's weight block and bias block."""
    offset = 0
    for rows, cols, has_bias in shapes[:-1]:
        offset += rows * cols + (rows if has_bias else 0)
    rows, cols, has_bias = shapes[-1]
    w = slice(offset, offset + rows * cols)
    b = slice(offset + rows * cols, offset + rows * cols + (rows if has_bias else 0))
    return w, b


def last_layer_weight_rows(pv: ParamVector) -> np.ndarray:
    """Final-layer weight block reshaped to (n_labels, fan_in)."""
    w, _ = _last_layer_slices(pv.shapes)
    rows, cols, _ = pv.shapes[-1]
    return pv.values[w].reshape(rows, cols)


def last_layer_bias(pv: ParamVector) -> np.ndarray:
    _, b = _last_layer_slices(pv.shapes)
    return pv.values[b]


def last_layer_flat(pv: ParamVector) -> np.ndarray:
    w, b = _last_layer_slices(pv.shapes)
    return np.concatenate([pv.values[w], pv.values[b]])


@dataclass
class LabelImpactModel:
    """Per-label last-layer gradient fingerprints, estimated on auxiliary data.

    impacts[k] is the full-batch gradient of the loss restricted to the
    last layer when training only on label-k auxiliary samples, flattened
    as (weights, bias). own_row_impact[k] is the row-k weight sum of that
    gradient, the scalar used by the peeling loop (negative whenever the
    label is actually present). delta_scale converts a client's raw update
    into mean-gradient units: it is the learning rate times the momentum-
    corrected number of optimizer steps the protocol prescribes.
    """

    impacts: np.ndarray  # (n_labels, last_layer_dim)
    own_row_impact: np.ndarray  # (n_labels,)
    delta_scale: float

    @property
    def n_labels(self) -> int:
        return self.impacts.shape[0]


def effective_steps(n_steps: int, momentum: float) -> float:
    """Cumulative weight the last n_steps gradients carry in the final delta.

    With momentum mu each gradient g_i contributes (1 - mu^(E-i+1)) / (1 - mu)
    to the summed parameter change; this returns the total over i = 1..E.
    """
    if n_steps <= 0:
        return 0.0
    if momentum == 0.0:
        return float(n_steps)
    mu = momentum
    return (n_steps - mu * (1.0 - mu**n_steps) / (1.0 - mu)) / (1.0 - mu)


def build_impact_model(
    global_params: ParamVector,
    aux: Dataset,
    *,
    learning_rate: float,
    steps: float,
) -> LabelImpactModel:
    """One full-batch gradient per label on the auxiliary set at the global model."""
    net = DenseNet.from_vector(global_params)
    n_labels = aux.n_labels
    impacts = []
    own = np.empty(n_labels)
    for k in range(n_labels):
        mask = aux.labels == k
        if not mask.any():
            raise ValueError(f"auxiliary set has no samples for label {k}")
        _, g = loss_and_grad(net, aux.features[mask], aux.labels[mask])
        impacts.append(last_layer_flat(g))
        own[k] = last_layer_weight_rows(g)[k].sum()
    return LabelImpactModel(np.vstack(impacts), own, learning_rate * steps)


def peel_label_distribution(
    update: ParamVector,
    global_params: ParamVector,
    n_samples: int,
    impacts: LabelImpactModel,
) -> LabelDistribution:
    """Iterative label-count extraction from the last-layer weight rows.

    The update is rescaled to mean-gradient units, then the label with the
    highest presence (most negative row sum) is counted and its single-
    sample impact removed, n_samples times. A zero-signal update gives no
    ordering to peel, so the uniform distribution is returned.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    row_sums = last_layer_weight_rows(update).sum(axis=1)
    if not row_sums.any():
        return LabelDistribution.uniform(impacts.n_labels)
    # Client deltas point along -lr * accumulated gradient.
    values = -row_sums / impacts.delta_scale
    # Guard against degenerate impact estimates; presence impacts are
    # negative by construction (own-label gradient rows point down).
    unit = np.minimum(impacts.own_row_impact, -1e-12) / n_samples
    counts = np.zeros(impacts.n_labels, dtype=np.int64)
    for _ in range(n_samples):
        k = int(np.argmin(values))
        counts[k] += 1
        values[k] -= unit[k]
    return LabelDistribution.from_counts(counts)


@dataclass
class LabelBasis:
    """Per-label basis gradients plus the unified base, non-null classes only."""

    label_ids: np.ndarray  # (K,) labels that survived the null test
    basis: np.ndarray  # (last_layer_dim, K)
    unified: np.ndarray  # (last_layer_dim,)


def build_label_basis(
    global_params: ParamVector, aux: Dataset, label_ids: np.ndarray
) -> LabelBasis:
    """Simulated single-label and uniform-mix training deltas at the global model."""
    net = DenseNet.from_vector(global_params)
    columns = []
    for k in label_ids:
        mask = aux.labels == k
        if not mask.any():
            raise ValueError(f"auxiliary set has no samples for label {k}")
        _, g = loss_and_grad(net, aux.features[mask], aux.labels[mask])
        columns.append(-last_layer_flat(g))
    mix = np.isin(aux.labels, label_ids)
    _, g_mix = loss_and_grad(net, aux.features[mix], aux.labels[mix])
    return LabelBasis(
        np.asarray(label_ids, dtype=np.int64),
        np.column_stack(columns),
        -last_layer_flat(g_mix),
    )


def nnls(A: np.ndarray, b: np.ndarray, max_iter: int = 500, tol: float = 1e-10) -> np.ndarray:
    """min ||Ax - b|| subject to x >= 0, by projected gradient descent.

    Sized for tiny systems (a handful of columns); the step is 1/L with L
    the largest eigenvalue of A^T A.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ata = A.T @ A
    atb = A.T @ b
    lip = float(np.linalg.eigvalsh(ata)[-1]) if ata.size else 0.0
    if lip <= 0.0:
        return np.zeros(A.shape[1])
    step = 1.0 / lip
    x = np.zeros(A.shape[1])
    for _ in range(max_iter):
        x_new = np.maximum(x - step * (ata @ x - atb), 0.0)
        if np.abs(x_new - x).max() < tol:
            return x_new
        x = x_new
    return x


def basis_label_distribution(
    update: ParamVector,
    global_params: ParamVector,
    n_samples: int,
    aux: Dataset,
) -> LabelDistribution:
    """Null-class removal plus non-negative basis reconstruction.

    A label whose last-layer bias delta is <= 0 never produced a positive
    gradient change, so it is treated as absent. The remaining labels get
    mass from the NNLS coefficients; the unified-base coefficient is spread
    evenly over them since it models an equal mix.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    bias_delta = last_layer_bias(update)
    non_null = np.flatnonzero(bias_delta > 0.0)
    n_labels = aux.n_labels
    if non_null.size == 0:
        warnings.warn("all classes test null, returning uniform distribution", RuntimeWarning)
        return LabelDistribution.uniform(n_labels)

    lb = build_label_basis(global_params, aux, non_null)
    A = np.column_stack([lb.basis, lb.unified])
    coef = nnls(A, last_layer_flat(update))
    k = non_null.size
    mass = coef[:k] + coef[k] / k
    if mass.sum() <= 0.0:
        mass = np.ones(k)
    probs = np.zeros(n_labels)
    probs[non_null] = mass / mass.sum()
    return LabelDistribution(probs)


def global_distribution(dists: list[LabelDistribution]) -> LabelDistribution:
    """Arithmetic client-mean of inferred distributions."""
    if not dists:
        raise ValueError("need at least one distribution")
    return LabelDistribution(np.mean([d.probs for d in dists], axis=0))


def consistency_score(curr: LabelDistribution, prev: LabelDistribution) -> float:
    """Euclidean distance between consecutive inferred distributions."""
    if curr.probs.size != prev.probs.size:
        raise ValueError("distributions must have the same label count")
    return float(np.linalg.norm(curr.probs - prev.probs))


def diversity_score(l_n: LabelDistribution, l_global: LabelDistribution) -> float:
    """log MSE of the best unconstrained fit a*L_global + b*uniform.

    Solved in closed form via the 2x2 normal equations; when the global
    distribution is itself uniform the regressors are collinear and the fit
    drops to a single coefficient. The floor keeps exact fits finite.
    """
    y = l_n.probs
    g = l_global.probs
    n_labels = y.size
    if n_labels < 2:
        raise ValueError("need at least 2 labels")
    u = np.full(n_labels, 1.0 / n_labels)
    if np.abs(g - u).max() < 1e-12:
        a = float(g @ y) / float(g @ g)
        resid = y - a * g
    else:
        X = np.column_stack([g, u])
        coef = np.linalg.solve(X.T @ X, X.T @ y)
        resid = y - X @ coef
    mse = float(resid @ resid) / n_labels
    return math.log(mse + DIVERSITY_MSE_FLOOR)


def pia_decide(scores, tau: float, mode: str = "consistency") -> np.ndarray:
    """Two-sided cohort z-test on the per-client scores.

    mode is informational ("consistency" or "diversity"); both rules share
    the same symmetric threshold.
    """
    if mode not in ("consistency", "diversity"):
        raise ValueError(f"unknown mode {mode!r}")
    return np.asarray([v.flag for v in z_test(scores, tau, "two_sided")], dtype=bool)
