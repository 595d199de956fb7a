"""FedAvg orchestration with free-riders, canary training, and detection.

Each round: the server broadcasts the global model; honest clients run
local mini-batch SGD plus a mandatory fine-tune on the round's canary
window (optionally noising their delta for local DP); free-riding clients
fabricate an update from public signals; selfish clients skip local
training but do train the canaries. The server then scores every update
with the enabled detectors, records detection metrics against the true
roles, and aggregates (optionally excluding flagged clients).

Every client owns an RNG stream derived from (seed, client, round), so
changing one client's role never perturbs another's randomness and the
round loop is schedule-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import baseline, mia, pia
from .config import ExperimentConfig
from .data import CanarySet, Dataset, make_auxiliary, make_synthetic, partition
from .freerider import FrStrategy, PublicSignals, fabricate
from .metrics import RoundMetrics, compute_metrics
from .nn import DenseNet, ParamVector, SgdState, accuracy, loss_and_grad, sgd_step
from .pia import LabelDistribution

# Stream identifiers under the master seed.
_DATA, _TEST, _CANARY, _AUX, _INIT, _SERVER, _CLIENT = range(7)


def _stream(master: int, *ids: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=[master, *ids]))


@dataclass(frozen=True)
class DpConfig:
    """Local-DP parameters: clip then add iid Gaussian noise.

    epsilon_label is bookkeeping only; the mechanism is driven entirely by
    clip_norm and noise_sigma.
    """

    clip_norm: float
    noise_sigma: float
    epsilon_label: float = 0.0

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class ClientRole:
    """What a client does each round.

    honest     local training + canary training (+ optional DP noise)
    selfish    canary training only; a free-rider with compute to spare
    freerider  fabricates the update from public signals, touches no data
    """

    kind: str = "honest"
    strategy: FrStrategy | None = None
    canary_epochs: int = 0
    local_epochs: int | None = None  # None: experiment default
    dp: DpConfig | None = None

    def __post_init__(self):
        if self.kind not in ("honest", "selfish", "freerider"):
            raise ValueError(f"unknown role kind {self.kind!r}")
        if self.kind == "freerider" and self.strategy is None:
            raise ValueError("freerider role needs a strategy")

    @property
    def is_freerider(self) -> bool:
        return self.kind in ("selfish", "freerider")


@dataclass
class RoundState:
    """Everything the server knows after collecting round t's updates."""

    t: int
    global_model: ParamVector  # M^{t-1}, the model that was broadcast
    client_updates: list[ParamVector]  # G_n^t = M_n^t - M^{t-1}
    client_sizes: list[int]
    canary_indices: np.ndarray | None
    prev_label_dists: list[LabelDistribution] | None


@dataclass
class DetectionResult:
    name: str
    scores: np.ndarray  # per-client scalar
    flags: np.ndarray  # per-client bool
    sample_scores: dict[str, mia.ScoreMatrix] = field(default_factory=dict)


@dataclass
class RoundResult:
    state: RoundState
    new_global: ParamVector
    detections: dict[str, DetectionResult]
    metrics: RoundMetrics


def honest_local_round(
    global_params: ParamVector,
    shard: Dataset,
    canary: Dataset | None,
    epochs: int,
    canary_epochs: int,
    opt: SgdState,
    rng: np.random.Generator,
    batch_size: int = 64,
) -> ParamVector:
    """Local mini-batch SGD followed by full-batch canary passes.

    Clients are stateless between rounds: optimizer velocity starts at
    zero (`opt` only supplies the hyperparameters). Batches are reshuffled
    each epoch and the short final batch is kept, so every sample is used.
    Returns the new local parameters.
    """
    if len(shard) == 0:
        raise ValueError("client shard is empty")
    if canary_epochs > 0 and (canary is None or len(canary) == 0):
        raise ValueError("canary training requested without a canary batch")
    net = DenseNet.from_vector(global_params)
    state = SgdState(opt.learning_rate, opt.momentum, opt.weight_decay)
    for _ in range(epochs):
        order = rng.permutation(len(shard))
        for start in range(0, len(shard), batch_size):
            chunk = order[start : start + batch_size]
            _, grad = loss_and_grad(net, shard.features[chunk], shard.labels[chunk])
            sgd_step(net, grad, state)
    for _ in range(canary_epochs):
        _, grad = loss_and_grad(net, canary.features, canary.labels)
        sgd_step(net, grad, state)
    return net.to_vector()


def dp_noise(update: ParamVector, dp: DpConfig, rng: np.random.Generator) -> ParamVector:
    """Clip the update to L2 norm <= clip_norm, then add Gaussian noise.

    Clipping scales only when the norm exceeds the threshold (it never
    inflates a small update). Noise std per coordinate is
    noise_sigma * clip_norm.
    """
    norm = update.norm()
    values = update.values * (dp.clip_norm / norm) if norm > dp.clip_norm else update.values.copy()
    if dp.noise_sigma > 0:
        values += rng.normal(0.0, dp.noise_sigma * dp.clip_norm, size=values.size)
    return ParamVector(values, update.shapes)


def fedavg(models: list[ParamVector], sizes: list[int]) -> ParamVector:
    """Size-weighted average of client models."""
    if not models:
        raise ValueError("need at least one model to aggregate")
    if len(models) != len(sizes):
        raise ValueError("one size per model required")
    total = float(sum(sizes))
    if total <= 0:
        raise ValueError("total client size must be positive")
    acc = np.zeros_like(models[0].values)
    for m, s in zip(models, sizes):
        if m.shapes != models[0].shapes:
            raise ValueError("model shapes disagree")
        acc += (s / total) * m.values
    return ParamVector(acc, models[0].shapes)


def roles_from_config(cfg: ExperimentConfig) -> list[ClientRole]:
    roles = [
        ClientRole("honest", canary_epochs=cfg.canary_epochs,
                   dp=DpConfig(cfg.dp_clip_norm, cfg.dp_noise_sigma, cfg.dp_epsilon_label)
                   if cfg.dp_enabled else None)
        for _ in range(cfg.clients)
    ]
    for idx, strat in cfg.fr_clients:
        if strat == "selfish":
            roles[idx] = ClientRole("selfish", canary_epochs=cfg.canary_epochs, local_epochs=0)
        else:
            roles[idx] = ClientRole(
                "freerider",
                strategy=FrStrategy(
                    kind=strat,
                    alpha=cfg.fr_alpha,
                    gamma=cfg.fr_gamma,
                    fraction=cfg.fr_fraction,
                    ecos_mode=cfg.fr_ecos_mode,
                    cos_decay=cfg.fr_cos_decay,
                    sigma_fallback=cfg.fr_sigma_fallback,
                    n_clients=cfg.clients,
                ),
            )
    return roles


def run_experiment(cfg: ExperimentConfig) -> Iterator[RoundResult]:
    """Run the full federated simulation, yielding one result per round."""
    cfg = cfg.validate()
    master = cfg.seed
    n = cfg.clients
    detectors = cfg.detectors

    total_samples = n * cfg.data_samples_per_client
    train_ds = make_synthetic(
        cfg.data_labels, total_samples, cfg.data_input_dim, seed=[master, _DATA]
    )
    test_ds = make_synthetic(
        cfg.data_labels, cfg.data_test_samples, cfg.data_input_dim, seed=[master, _TEST]
    )
    part = partition(
        train_ds,
        n,
        scheme=cfg.data_partition,
        seed=[master, _DATA],
        alpha=cfg.data_dirichlet_alpha,
    )
    shards = [train_ds.subset(ix) for ix in part.client_indices]
    sizes = part.sizes()

    canaries = CanarySet(
        make_synthetic(
            cfg.data_labels, cfg.resolved_canary_pool(), cfg.data_input_dim,
            seed=[master, _CANARY],
        ),
        cfg.canary_size,
    )

    pia_enabled = "consistency" in detectors or "diversity" in detectors
    aux = (
        make_auxiliary(cfg.data_labels, cfg.aux_per_label, cfg.data_input_dim, seed=[master, _AUX])
        if pia_enabled
        else None
    )

    init_net = DenseNet.create(
        [cfg.data_input_dim, cfg.net_hidden, cfg.data_labels], _stream(master, _INIT)
    )
    m_zero = init_net.to_vector()
    m_prev = m_zero
    g_prev: ParamVector | None = None
    g_prev2: ParamVector | None = None

    roles = roles_from_config(cfg)
    truth = np.asarray([r.is_freerider for r in roles], dtype=bool)
    opt = SgdState(cfg.train_lr, cfg.train_momentum, cfg.train_weight_decay)

    # Honest protocol step count, used to rescale deltas to gradient units
    # for label inference (server-side knowledge of the training recipe).
    local_steps = cfg.train_epochs * math.ceil(cfg.data_samples_per_client / cfg.train_batch_size)
    delta_steps = pia.effective_steps(local_steps + cfg.canary_epochs, cfg.train_momentum)

    prev_dists = [LabelDistribution.uniform(cfg.data_labels) for _ in range(n)] if pia_enabled else None

    for t in range(1, cfg.rounds + 1):
        window = canaries.window(t)
        server_rng = _stream(master, _SERVER, t)
        signals = PublicSignals(m_prev, g_prev, g_prev2, m_zero, t)

        updates: list[ParamVector] = []
        models: list[ParamVector] = []
        for cid, role in enumerate(roles):
            crng = _stream(master, _CLIENT, cid, t)
            if role.kind == "freerider":
                local = fabricate(role.strategy, signals, crng)
            else:
                epochs = cfg.train_epochs if role.local_epochs is None else role.local_epochs
                local = honest_local_round(
                    m_prev, shards[cid], window, epochs, role.canary_epochs, opt, crng,
                    batch_size=cfg.train_batch_size,
                )
            g_n = local - m_prev
            if role.dp is not None and role.kind == "honest":
                g_n = dp_noise(g_n, role.dp, crng)
            updates.append(g_n)
            # Re-derive the local model from the delta so that
            # M^{t-1} + G_n^t reconstructs it bit-exactly everywhere.
            models.append(m_prev + g_n)

        detections, round_dists = _run_detectors(
            cfg, detectors, m_prev, updates, sizes, window, canaries, t,
            server_rng, aux, delta_steps, prev_dists, truth,
        )

        state = RoundState(
            t=t,
            global_model=m_prev,
            client_updates=updates,
            client_sizes=list(sizes),
            canary_indices=canaries.window_indices(t),
            prev_label_dists=prev_dists,
        )
        if round_dists is not None:
            prev_dists = round_dists

        keep = list(range(n))
        if cfg.mitigate:
            flags = detections[cfg.resolved_mitigate_detector()].flags
            unflagged = [i for i in keep if not flags[i]]
            if unflagged:  # never aggregate an empty cohort
                keep = unflagged
        m_new = fedavg([models[i] for i in keep], [sizes[i] for i in keep])

        rm = compute_metrics({name: d.flags for name, d in detections.items()}, truth, t)
        eval_net = DenseNet.from_vector(m_new)
        rm.train_accuracy = accuracy(eval_net, train_ds.features, train_ds.labels)
        rm.test_accuracy = accuracy(eval_net, test_ds.features, test_ds.labels)

        yield RoundResult(state, m_new, detections, rm)

        g_prev2 = g_prev
        g_prev = m_new - m_prev
        m_prev = m_new


def _run_detectors(
    cfg, detectors, m_prev, updates, sizes, window, canaries, t,
    server_rng, aux, delta_steps, prev_dists, truth,
) -> tuple[dict[str, DetectionResult], list[LabelDistribution] | None]:
    out: dict[str, DetectionResult] = {}
    dists: list[LabelDistribution] | None = None

    if "canary_loss" in detectors:
        sm = mia.loss_scores(m_prev, updates, window, t)
        out["canary_loss"] = DetectionResult(
            "canary_loss",
            sm.scores.sum(axis=1),
            mia.loss_decide(sm, cfg.threshold_z),
            {"canary_loss": sm},
        )

    if "canary_cosine" in detectors:
        nonmembers = canaries.complement(t, server_rng)
        grads = mia.canary_gradients(m_prev, window, nonmembers)
        member_sm, nonmember_sm = mia.cosine_scores(m_prev, updates, grads, t)
        pvals = mia.cosine_pvalues(member_sm, nonmember_sm)
        out["canary_cosine"] = DetectionResult(
            "canary_cosine",
            pvals,
            pvals >= cfg.threshold_t_alpha,
            {"cosine_member": member_sm, "cosine_nonmember": nonmember_sm},
        )

    if "consistency" in detectors or "diversity" in detectors:
        if cfg.pia_attack == "peeling":
            impacts = pia.build_impact_model(
                m_prev, aux, learning_rate=cfg.train_lr, steps=delta_steps
            )
            dists = [
                pia.peel_label_distribution(u, m_prev, s, impacts)
                for u, s in zip(updates, sizes)
            ]
        else:
            dists = [
                pia.basis_label_distribution(u, m_prev, s, aux)
                for u, s in zip(updates, sizes)
            ]
        if "consistency" in detectors:
            scores = np.asarray(
                [pia.consistency_score(d, p) for d, p in zip(dists, prev_dists)]
            )
            out["consistency"] = DetectionResult(
                "consistency", scores, pia.pia_decide(scores, cfg.threshold_z, "consistency")
            )
        if "diversity" in detectors:
            l_global = pia.global_distribution(dists)
            scores = np.asarray([pia.diversity_score(d, l_global) for d in dists])
            out["diversity"] = DetectionResult(
                "diversity", scores, pia.pia_decide(scores, cfg.threshold_z, "diversity")
            )

    if "l2" in detectors:
        fs = baseline.l2_feature(updates)
        out["l2"] = DetectionResult("l2", fs.values, baseline.feature_decide(fs, cfg.threshold_z))
    if "std" in detectors:
        fs = baseline.std_feature(updates)
        out["std"] = DetectionResult("std", fs.values, baseline.feature_decide(fs, cfg.threshold_z))
    if "cosim" in detectors:
        fs = baseline.cosim_feature(updates, server_rng)
        out["cosim"] = DetectionResult(
            "cosim", fs.values, baseline.feature_decide(fs, cfg.threshold_z)
        )

    if "oracle" in detectors:
        out["oracle"] = DetectionResult(
            "oracle", truth.astype(np.float64), truth.copy()
        )
    return out, dists
