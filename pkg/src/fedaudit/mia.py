"""Membership-style detectors: did this client actually train on the canaries?

Honest clients are required to fine-tune on a fresh server-issued canary
batch every round. Two signals expose clients that skipped it:

  canary_loss    per-sample cross-entropy of the canaries under each
                 client's local model; non-trainers sit on the high side
  canary_cosine  cosine similarity between each client's update and
                 per-sample canary gradients, compared member vs non-member
                 with a per-client t-test
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .nn import DenseNet, ParamVector, loss_and_grad, per_sample_losses
from .stats import t_test, z_test


@dataclass
class ScoreMatrix:
    """clients x samples detection scores for one round."""

    scores: np.ndarray  # (N, c)
    round: int
    kind: str  # "canary_loss" | "cosine_member" | "cosine_nonmember"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError("score matrix must be 2-D (clients x samples)")


@dataclass
class CanaryGradients:
    """Per-sample gradients the server computes at the broadcast model.

    member_grads come from the round's canary window, nonmember_grads from
    an equal-size random batch drawn from the rest of the pool.
    """

    member_grads: list[ParamVector] = field(default_factory=list)
    nonmember_grads: list[ParamVector] = field(default_factory=list)


def canary_gradients(
    global_params: ParamVector, members: Dataset, nonmembers: Dataset
) -> CanaryGradients:
    """Single-sample gradients of both batches at the global model."""
    if len(members) != len(nonmembers):
        raise ValueError("member and non-member batches must have equal size")
    net = DenseNet.from_vector(global_params)

    def grads(ds: Dataset) -> list[ParamVector]:
        out = []
        for i in range(len(ds)):
            _, g = loss_and_grad(net, ds.features[i : i + 1], ds.labels[i : i + 1])
            out.append(g)
        return out

    return CanaryGradients(grads(members), grads(nonmembers))


def loss_scores(
    global_params: ParamVector,
    updates: list[ParamVector],
    canary: Dataset,
    round_t: int = 0,
) -> ScoreMatrix:
    """Entry (n, s): loss of canary sample s under client n's local model.

    Each local model is reconstructed as global + update before scoring.
    """
    rows = []
    for update in updates:
        net = DenseNet.from_vector(global_params + update)
        rows.append(per_sample_losses(net, canary.features, canary.labels))
    return ScoreMatrix(np.vstack(rows), round_t, "canary_loss")


def loss_decide(sm: ScoreMatrix, tau: float) -> np.ndarray:
    """Flag clients whose summed canary loss is a high-side cohort outlier.

    One-sided on purpose: skipping canary training can only raise the loss,
    so a low outlier is never evidence of free-riding.
    """
    sums = sm.scores.sum(axis=1)
    return np.asarray([v.flag for v in z_test(sums, tau, "high")], dtype=bool)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        warnings.warn("zero-norm vector in cosine score, returning 0", RuntimeWarning)
        return 0.0
    return float(u @ v) / (nu * nv)


def cosine_scores(
    global_params: ParamVector,
    updates: list[ParamVector],
    canary_grads: CanaryGradients,
    round_t: int = 0,
) -> tuple[ScoreMatrix, ScoreMatrix]:
    """Cosine similarity of every update against member and non-member gradients."""
    member = np.empty((len(updates), len(canary_grads.member_grads)))
    nonmember = np.empty((len(updates), len(canary_grads.nonmember_grads)))
    for n, update in enumerate(updates):
        u = update.values
        for s, g in enumerate(canary_grads.member_grads):
            member[n, s] = _cosine(g.values, u)
        for s, g in enumerate(canary_grads.nonmember_grads):
            nonmember[n, s] = _cosine(g.values, u)
    return (
        ScoreMatrix(member, round_t, "cosine_member"),
        ScoreMatrix(nonmember, round_t, "cosine_nonmember"),
    )


def cosine_pvalues(member: ScoreMatrix, nonmember: ScoreMatrix) -> np.ndarray:
    """Per-client two-sided p-value of member-vs-nonmember score rows."""
    if member.scores.shape != nonmember.scores.shape:
        raise ValueError("member and non-member score matrices must align")
    if member.scores.shape[1] < 2:
        raise ValueError("need at least 2 scores per group for the t-test")
    return np.asarray(
        [
            t_test(member.scores[n], nonmember.scores[n]).p
            for n in range(member.scores.shape[0])
        ]
    )


def cosine_decide(member: ScoreMatrix, nonmember: ScoreMatrix, alpha: float) -> np.ndarray:
    """Flag clients whose member and non-member cosines are indistinguishable.

    A client that trained on the canaries imprints them on its update, so
    the two distributions separate (p < alpha). The test is per client and
    never looks at the rest of the cohort.
    """
    return cosine_pvalues(member, nonmember) >= alpha
