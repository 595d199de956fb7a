"""Federated-learning free-rider detection lab.

Simulates FedAvg training with honest, selfish, and free-riding clients,
and scores every per-round update with inference-based detectors (canary
loss, canary cosine, label-distribution consistency and diversity) plus
feature-based baselines (update norm, update std, random-reference cosine).
"""

from .baseline import FeatureScores, cosim_feature, feature_decide, l2_feature, std_feature
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .data import (
    CanaryPoolExhausted,
    CanarySet,
    Dataset,
    Partition,
    make_auxiliary,
    make_synthetic,
    partition,
)
from .engine import (
    ClientRole,
    DpConfig,
    RoundResult,
    RoundState,
    dp_noise,
    fedavg,
    honest_local_round,
    run_experiment,
)
from .freerider import (
    FrStrategy,
    PublicSignals,
    advanced_update,
    delta_update,
    disguised_update,
    fabricate,
)
from .metrics import RoundMetrics, compute_metrics, emit_csv, mean_f1_by_detector
from .mia import (
    CanaryGradients,
    ScoreMatrix,
    canary_gradients,
    cosine_decide,
    cosine_scores,
    loss_decide,
    loss_scores,
)
from .nn import DenseNet, ParamVector, SgdState, forward, loss_and_grad, sgd_step
from .pia import (
    LabelBasis,
    LabelDistribution,
    LabelImpactModel,
    basis_label_distribution,
    build_impact_model,
    consistency_score,
    diversity_score,
    peel_label_distribution,
    pia_decide,
)
from .stats import TVerdict, ZVerdict, t_test, z_test

__version__ = "0.1.0"
