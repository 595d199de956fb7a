"""Free-rider update fabrication from public protocol signals.

A free-riding client never trains; it fakes a local model for round t using
only quantities every participant sees: the broadcast model, the previous
aggregate gradients, the initial model, and the round index. Three
strategies are implemented, from crudest to stealthiest:

  disguised  previous global model plus decaying Gaussian noise
  delta      previous model plus previous aggregate gradient plus noise
  advanced   previous gradient rescaled to mimic honest update geometry,
             with noise injected into a random subset of coordinates

Cold starts: round 1 has no aggregate gradient, so `disguised` falls back
to a configured noise scale and the other two degrade to `disguised`
(`advanced` additionally needs two past gradients, so it behaves like
`delta` at t = 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import ParamVector

STRATEGY_KINDS = ("disguised", "delta", "advanced")


ECOS_MODES = ("estimate", "model")


@dataclass(frozen=True)
class FrStrategy:
    """Strategy selector plus its noise parameters.

    alpha scales the noise, gamma is the per-round decay exponent, fraction
    is the share of coordinates the advanced strategy perturbs, and
    n_clients is the (public) cohort size the geometry mimicry targets.
    ecos_mode selects how the advanced strategy gauges honest-update
    alignment: "estimate" reads it off consecutive aggregate gradients,
    "model" uses the drift-ratio schedule with rate constant cos_decay.
    """

    kind: str
    alpha: float = 1.0
    gamma: float = 1.0
    fraction: float = 0.6
    ecos_mode: str = "estimate"
    cos_decay: float = 0.01
    sigma_fallback: float = 0.01
    n_clients: int = 2

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown free-rider strategy {self.kind!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        if self.ecos_mode not in ECOS_MODES:
            raise ValueError(f"ecos_mode must be one of {ECOS_MODES}")
        if self.n_clients < 2:
            raise ValueError("n_clients must be >= 2")


@dataclass(frozen=True)
class PublicSignals:
    """Broadcast history available to every client at round t."""

    m_prev: ParamVector  # global model after round t-1
    g_prev: ParamVector | None  # aggregate gradient of round t-1 (None at t=1)
    g_prev2: ParamVector | None  # aggregate gradient of round t-2
    m_zero: ParamVector  # initial model
    t: int

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("rounds are 1-based")


def _noise_sigma(sig: PublicSignals, alpha: float, gamma: float, sigma_fallback: float) -> float:
    base = sig.g_prev.std() if sig.g_prev is not None else sigma_fallback
    return alpha * base * sig.t ** (-gamma)


def disguised_update(
    sig: PublicSignals,
    alpha: float,
    gamma: float,
    rng: np.random.Generator,
    sigma_fallback: float = 0.01,
) -> ParamVector:
    """Previous global model plus iid Gaussian noise of std alpha*sigma*t^-gamma.

    sigma is the per-coordinate std of the previous aggregate gradient
    (the fallback scale when that gradient does not exist yet).
    """
    std = _noise_sigma(sig, alpha, gamma, sigma_fallback)
    if std == 0.0:
        return sig.m_prev.copy()
    noise = rng.normal(0.0, std, size=sig.m_prev.values.size)
    return ParamVector(sig.m_prev.values + noise, sig.m_prev.shapes)


def delta_update(
    sig: PublicSignals,
    alpha: float,
    gamma: float,
    rng: np.random.Generator,
    sigma_fallback: float = 0.01,
) -> ParamVector:
    """Replay the previous aggregate step with the same decaying noise."""
    if sig.g_prev is None:
        return disguised_update(sig, alpha, gamma, rng, sigma_fallback)
    std = _noise_sigma(sig, alpha, gamma, sigma_fallback)
    fake = sig.m_prev.values + sig.g_prev.values
    if std > 0.0:
        fake = fake + rng.normal(0.0, std, size=fake.size)
    return ParamVector(fake, sig.m_prev.shapes)


def expected_cohort_cosine(sig: PublicSignals, cos_decay: float) -> float:
    """Modeled mean pairwise cosine of honest updates at round t.

    Uses the drift ratio C = |M^{t-1} - M^0| / |M^{t-1}| and an exponential
    decay in the round index: C^2 / (C^2 + exp(2 * cos_decay * t)).
    """
    m_norm = sig.m_prev.norm()
    if m_norm == 0.0:
        return 0.0
    c = (sig.m_prev - sig.m_zero).norm() / m_norm
    return c * c / (c * c + math.exp(2.0 * cos_decay * sig.t))


def estimated_cohort_cosine(sig: PublicSignals, n_clients: int) -> float:
    """Pairwise honest-update alignment read off public aggregates.

    If client updates share a persistent signal with pairwise cosine x, the
    cosine c of consecutive aggregate gradients satisfies
    c = n x / (1 + (n - 1) x); invert it and clip to [0, 1].
    """
    if sig.g_prev is None or sig.g_prev2 is None:
        return 0.0
    denom = sig.g_prev.norm() * sig.g_prev2.norm()
    if denom == 0.0:
        return 0.0
    c = float(sig.g_prev.values @ sig.g_prev2.values) / denom
    x = c / (n_clients - (n_clients - 1) * c) if c < 1.0 else 1.0
    return min(max(x, 0.0), 1.0)


def advanced_update(
    sig: PublicSignals,
    fraction: float,
    rng: np.random.Generator,
    *,
    n_clients: int,
    ecos_mode: str = "estimate",
    cos_decay: float = 0.01,
    alpha: float = 1.0,
    gamma: float = 1.0,
    sigma_fallback: float = 0.01,
) -> ParamVector:
    """Geometry-mimicking fake update.

    Scales the previous aggregate gradient by |G^{t-1}| / |G^{t-2}| and adds
    noise sized so the fake's norm tracks an honest client's. The noise
    budget phi solves n^2 / (n + (n^2 - n) * Ecos) - 1 scaled by |G^{t-1}|,
    spread over ceil(fraction * P) uniformly chosen coordinates with total
    energy phi^2. Needs two past gradients; earlier rounds degrade to the
    delta strategy.
    """
    if sig.t < 3 or sig.g_prev is None or sig.g_prev2 is None:
        return delta_update(sig, alpha, gamma, rng, sigma_fallback)

    g_prev = sig.g_prev
    prev2_norm = sig.g_prev2.norm()
    scale = g_prev.norm() / prev2_norm if prev2_norm > 0.0 else 1.0
    fake = sig.m_prev.values + scale * g_prev.values

    if ecos_mode == "estimate":
        ecos = estimated_cohort_cosine(sig, n_clients)
    else:
        ecos = expected_cohort_cosine(sig, cos_decay)
    n = n_clients
    ratio_sq = n * n / (n + (n * n - n) * ecos)
    phi = math.sqrt(max(ratio_sq - 1.0, 0.0)) * g_prev.norm()

    total = fake.size
    k = math.ceil(fraction * total)
    if phi > 0.0 and k > 0:
        # Per-coordinate variance phi^2 / (fraction * P): total injected
        # energy over the k noised coordinates comes out to phi^2.
        coord_std = phi / math.sqrt(fraction * total)
        picked = rng.choice(total, size=k, replace=False)
        fake = fake.copy()
        fake[picked] += rng.normal(0.0, coord_std, size=k)
    return ParamVector(fake, sig.m_prev.shapes)


def fabricate(strategy: FrStrategy, sig: PublicSignals, rng: np.random.Generator) -> ParamVector:
    """Dispatch to the configured strategy; returns the fake local model."""
    if strategy.kind == "disguised":
        return disguised_update(sig, strategy.alpha, strategy.gamma, rng, strategy.sigma_fallback)
    if strategy.kind == "delta":
        return delta_update(sig, strategy.alpha, strategy.gamma, rng, strategy.sigma_fallback)
    return advanced_update(
        sig,
        strategy.fraction,
        rng,
        n_clients=strategy.n_clients,
        ecos_mode=strategy.ecos_mode,
        cos_decay=strategy.cos_decay,
        alpha=strategy.alpha,
        gamma=strategy.gamma,
        sigma_fallback=strategy.sigma_fallback,
    )
