"""Experiment configuration: a flat key-value text format with dotted keys.

Example file:

    clients = 8
    rounds = 60
    seed = 1
    fr.clients = 7
    fr.strategy = delta
    detectors = canary_loss,diversity

Unknown keys are rejected by name; every value is validated and defaults
are applied on load, so a parsed config is always runnable. `save` writes
the normalized form (sorted keys), which round-trips losslessly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .freerider import STRATEGY_KINDS

DETECTOR_NAMES = (
    "canary_loss",
    "canary_cosine",
    "consistency",
    "diversity",
    "l2",
    "std",
    "cosim",
    "oracle",
)

DEFAULT_DETECTORS = ("canary_loss", "canary_cosine", "consistency", "diversity", "l2", "std", "cosim")

FR_STRATEGY_VALUES = STRATEGY_KINDS + ("selfish",)

PIA_ATTACKS = ("peeling", "basis")


class ConfigError(ValueError):
    """Raised with the offending key in the message."""


@dataclass(frozen=True)
class ExperimentConfig:
    clients: int = 8
    rounds: int = 40
    seed: int = 0
    mitigate: bool = False
    mitigate_detector: str = ""  # empty: first enabled detector
    skip_rounds: int = 0

    data_labels: int = 3
    data_samples_per_client: int = 200
    data_input_dim: int = 20
    data_test_samples: int = 512
    data_partition: str = "iid"  # "iid" | "dirichlet"
    data_dirichlet_alpha: float = 1.0

    net_hidden: int = 32

    train_epochs: int = 1
    train_batch_size: int = 64
    train_lr: float = 0.01
    train_momentum: float = 0.9
    train_weight_decay: float = 1e-5

    canary_size: int = 100
    canary_epochs: int = 3
    canary_pool: int = 0  # 0: auto, canary_size * rounds

    aux_per_label: int = 20

    dp_enabled: bool = False
    dp_clip_norm: float = 0.5
    dp_noise_sigma: float = 1.0
    dp_epsilon_label: float = 0.0  # metadata only, not used in computation

    fr_clients: tuple[tuple[int, str], ...] = ()  # (client index, strategy)
    fr_alpha: float = 1.0
    fr_gamma: float = 1.0
    fr_fraction: float = 0.6
    fr_ecos_mode: str = "estimate"
    fr_cos_decay: float = 0.01
    fr_sigma_fallback: float = 0.01

    detectors: tuple[str, ...] = DEFAULT_DETECTORS
    pia_attack: str = "peeling"
    threshold_z: float = 1.0
    threshold_t_alpha: float = 0.05

    repeats: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.clients < 2:
            raise ConfigError("clients: need at least 2")
        if self.rounds < 1:
            raise ConfigError("rounds: need at least 1")
        if self.skip_rounds < 0 or self.skip_rounds >= self.rounds:
            raise ConfigError("skip_rounds: must be in [0, rounds)")
        if self.data_labels < 2:
            raise ConfigError("data.labels: need at least 2")
        if self.data_input_dim < 2:
            raise ConfigError("data.input_dim: need at least 2")
        if self.data_samples_per_client < 1:
            raise ConfigError("data.samples_per_client: need at least 1")
        if self.data_partition not in ("iid", "dirichlet"):
            raise ConfigError("data.partition: must be iid or dirichlet")
        if self.data_dirichlet_alpha <= 0:
            raise ConfigError("data.dirichlet_alpha: must be > 0")
        if self.net_hidden < 1:
            raise ConfigError("net.hidden: need at least 1")
        if self.train_epochs < 0:
            raise ConfigError("train.epochs: must be >= 0")
        if self.train_batch_size < 1:
            raise ConfigError("train.batch_size: need at least 1")
        if not 0.0 <= self.train_momentum < 1.0:
            raise ConfigError("train.momentum: must be in [0, 1)")
        if self.canary_size < 1:
            raise ConfigError("canary.size: need at least 1")
        if self.canary_epochs < 0:
            raise ConfigError("canary.epochs: must be >= 0")
        pool = self.resolved_canary_pool()
        if pool < self.canary_size * self.rounds:
            raise ConfigError(
                f"canary.pool: {pool} cannot cover {self.rounds} rounds of {self.canary_size}"
            )
        if self.aux_per_label < 1:
            raise ConfigError("aux.per_label: need at least 1")
        if self.dp_clip_norm <= 0:
            raise ConfigError("dp.clip_norm: must be > 0")
        if self.dp_noise_sigma < 0:
            raise ConfigError("dp.noise_sigma: must be >= 0")
        seen = set()
        for idx, strategy in self.fr_clients:
            if not 0 <= idx < self.clients:
                raise ConfigError(f"fr.clients: index {idx} out of range for {self.clients} clients")
            if idx in seen:
                raise ConfigError(f"fr.clients: duplicate index {idx}")
            seen.add(idx)
            if strategy not in FR_STRATEGY_VALUES:
                raise ConfigError(f"fr.clients: unknown strategy {strategy!r}")
        if not 0.0 < self.fr_fraction <= 1.0:
            raise ConfigError("fr.fraction: must be in (0, 1]")
        if self.fr_ecos_mode not in ("estimate", "model"):
            raise ConfigError("fr.ecos_mode: must be estimate or model")
        if not self.detectors:
            raise ConfigError("detectors: need at least one")
        for d in self.detectors:
            if d not in DETECTOR_NAMES:
                raise ConfigError(f"detectors: unknown detector {d!r}")
        if self.pia_attack not in PIA_ATTACKS:
            raise ConfigError(f"pia.attack: must be one of {PIA_ATTACKS}")
        if self.threshold_z <= 0:
            raise ConfigError("thresholds.z: must be > 0")
        if not 0.0 < self.threshold_t_alpha < 1.0:
            raise ConfigError("thresholds.t_alpha: must be in (0, 1)")
        if self.mitigate:
            det = self.resolved_mitigate_detector()
            if det not in self.detectors:
                raise ConfigError(f"mitigate.detector: {det!r} is not an enabled detector")
        if self.repeats < 1:
            raise ConfigError("repeats: need at least 1")
        return self

    def resolved_canary_pool(self) -> int:
        return self.canary_pool if self.canary_pool > 0 else self.canary_size * self.rounds

    def resolved_mitigate_detector(self) -> str:
        return self.mitigate_detector if self.mitigate_detector else self.detectors[0]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)


# key -> (attribute, parser, formatter)
def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_fr_clients(s: str) -> tuple[tuple[int, str], ...]:
    out = []
    if not s.strip():
        return ()
    for item in s.split(","):
        item = item.strip()
        if ":" in item:
            idx, strat = item.split(":", 1)
            out.append((int(idx), strat.strip()))
        else:
            out.append((int(item), ""))  # strategy filled from fr.strategy
    return tuple(out)


def _fmt_fr_clients(v: tuple[tuple[int, str], ...]) -> str:
    return ",".join(f"{i}:{s}" for i, s in v)


def _parse_detectors(s: str) -> tuple[str, ...]:
    return tuple(d.strip() for d in s.split(",") if d.strip())


def _fmt_float(v: float) -> str:
    return format(v, ".17g")


_SCHEMA: dict[str, tuple[str, object, object]] = {
    "clients": ("clients", int, str),
    "rounds": ("rounds", int, str),
    "seed": ("seed", int, str),
    "mitigate": ("mitigate", _parse_bool, lambda v: "true" if v else "false"),
    "mitigate.detector": ("mitigate_detector", str, str),
    "skip_rounds": ("skip_rounds", int, str),
    "data.labels": ("data_labels", int, str),
    "data.samples_per_client": ("data_samples_per_client", int, str),
    "data.input_dim": ("data_input_dim", int, str),
    "data.test_samples": ("data_test_samples", int, str),
    "data.partition": ("data_partition", str, str),
    "data.dirichlet_alpha": ("data_dirichlet_alpha", float, _fmt_float),
    "net.hidden": ("net_hidden", int, str),
    "train.epochs": ("train_epochs", int, str),
    "train.batch_size": ("train_batch_size", int, str),
    "train.lr": ("train_lr", float, _fmt_float),
    "train.momentum": ("train_momentum", float, _fmt_float),
    "train.weight_decay": ("train_weight_decay", float, _fmt_float),
    "canary.size": ("canary_size", int, str),
    "canary.epochs": ("canary_epochs", int, str),
    "canary.pool": ("canary_pool", int, str),
    "aux.per_label": ("aux_per_label", int, str),
    "dp.enabled": ("dp_enabled", _parse_bool, lambda v: "true" if v else "false"),
    "dp.clip_norm": ("dp_clip_norm", float, _fmt_float),
    "dp.noise_sigma": ("dp_noise_sigma", float, _fmt_float),
    "dp.epsilon_label": ("dp_epsilon_label", float, _fmt_float),
    "fr.clients": ("fr_clients", _parse_fr_clients, _fmt_fr_clients),
    "fr.alpha": ("fr_alpha", float, _fmt_float),
    "fr.gamma": ("fr_gamma", float, _fmt_float),
    "fr.fraction": ("fr_fraction", float, _fmt_float),
    "fr.ecos_mode": ("fr_ecos_mode", str, str),
    "fr.cos_decay": ("fr_cos_decay", float, _fmt_float),
    "fr.sigma_fallback": ("fr_sigma_fallback", float, _fmt_float),
    "detectors": ("detectors", _parse_detectors, ",".join),
    "pia.attack": ("pia_attack", str, str),
    "thresholds.z": ("threshold_z", float, _fmt_float),
    "thresholds.t_alpha": ("threshold_t_alpha", float, _fmt_float),
    "repeats": ("repeats", int, str),
}

# fr.strategy is a load-time convenience that fills bare fr.clients entries.
_DEFAULT_STRATEGY_KEY = "fr.strategy"

REQUIRED_KEYS = ("clients", "rounds")


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict[str, object] = {}
    default_strategy = "delta"
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == _DEFAULT_STRATEGY_KEY:
            if value not in FR_STRATEGY_VALUES:
                raise ConfigError(f"{source}:{lineno}: fr.strategy: unknown strategy {value!r}")
            default_strategy = value
            seen.add(key)
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        attr, parser, _ = _SCHEMA[key]
        try:
            values[attr] = parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from exc

    missing = [k for k in REQUIRED_KEYS if _SCHEMA[k][0] not in values]
    if missing:
        raise ConfigError(f"{source}: missing required keys: {', '.join(missing)}")

    if "fr_clients" in values:
        values["fr_clients"] = tuple(
            (idx, strat if strat else default_strategy) for idx, strat in values["fr_clients"]
        )
    cfg = ExperimentConfig(**values)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def config_text(cfg: ExperimentConfig) -> str:
    """Normalized key=value form, sorted by key. Round-trips through parse."""
    lines = []
    for key in sorted(_SCHEMA):
        attr, _, fmt = _SCHEMA[key]
        lines.append(f"{key} = {fmt(getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config_text(cfg))


def set_key(cfg: ExperimentConfig, key: str, raw_value: str) -> ExperimentConfig:
    """Override one config key from its textual form (used by sweeps)."""
    if key not in _SCHEMA:
        raise ConfigError(f"unknown key {key!r}")
    attr, parser, _ = _SCHEMA[key]
    try:
        value = parser(raw_value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return replace(cfg, **{attr: value}).validate()
