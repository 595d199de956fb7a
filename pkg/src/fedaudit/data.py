"""Synthetic datasets, client partitioning, and server-held sample pools.

The classification task is Gaussian blobs: one cluster mean per label laid
out on a circle in the first two feature dimensions, fixed spread, then
per-feature standardization. It is deliberately small and separable so a
full federated run takes seconds while every detector signal (membership,
label distributions, gradient geometry) survives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOB_RADIUS = 3.0
BLOB_SPREAD = 0.6


def _seed_rng(seed) -> np.random.Generator:
    """Deterministic generator from an int seed or a composite (int, ...) path."""
    entropy = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy))


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64 in [0, n_labels)
    n_labels: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_labels):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.n_labels)

    def label_histogram(self) -> np.ndarray:
        """Normalized per-label frequency vector."""
        counts = np.bincount(self.labels, minlength=self.n_labels).astype(np.float64)
        return counts / counts.sum() if counts.sum() else np.full(self.n_labels, 1.0 / self.n_labels)


def _cluster_means(n_labels: int, input_dim: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n_labels) / n_labels
    means = np.zeros((n_labels, input_dim))
    means[:, 0] = BLOB_RADIUS * np.cos(angles)
    means[:, 1] = BLOB_RADIUS * np.sin(angles)
    return means


def make_synthetic(n_labels: int, n_samples: int, input_dim: int, seed) -> Dataset:
    """Gaussian-blob classification dataset, balanced up to rounding.

    Features are standardized per column (zero mean, unit variance) so the
    noise-generated auxiliary sets live on the same scale as training data.
    """
    if n_labels < 2:
        raise ValueError("need at least 2 labels")
    if input_dim < 2:
        raise ValueError("need at least 2 input dimensions")
    if n_samples < n_labels:
        raise ValueError(f"n_samples={n_samples} smaller than label count {n_labels}")

    rng = _seed_rng(seed)
    base, extra = divmod(n_samples, n_labels)
    counts = [base + (1 if k < extra else 0) for k in range(n_labels)]
    means = _cluster_means(n_labels, input_dim)

    labels = np.concatenate([np.full(c, k, dtype=np.int64) for k, c in enumerate(counts)])
    features = means[labels] + rng.normal(0.0, BLOB_SPREAD, size=(n_samples, input_dim))

    order = rng.permutation(n_samples)
    features, labels = features[order], labels[order]

    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd[sd == 0.0] = 1.0
    return Dataset((features - mu) / sd, labels, n_labels)


def make_auxiliary(n_labels: int, per_label: int, input_dim: int, seed) -> Dataset:
    """Server-side auxiliary set: pure standard-Gaussian noise per sample.

    Labels are assigned per_label times each, exactly uniform. Standard
    Gaussian features already match the standardized training scale.
    """
    if per_label < 1:
        raise ValueError("per_label must be >= 1")
    rng = _seed_rng(seed)
    n = n_labels * per_label
    features = rng.normal(0.0, 1.0, size=(n, input_dim))
    labels = np.repeat(np.arange(n_labels, dtype=np.int64), per_label)
    return Dataset(features, labels, n_labels)


@dataclass
class Partition:
    """Disjoint per-client sample-index lists over one dataset."""

    client_indices: list[np.ndarray]
    scheme: str  # "iid" or "dirichlet(<alpha>)"

    @property
    def n_clients(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> list[int]:
        return [len(ix) for ix in self.client_indices]


def partition(
    ds: Dataset,
    n_clients: int,
    scheme: str = "iid",
    seed=0,
    alpha: float | None = None,
) -> Partition:
    """Split a dataset across clients.

    iid: uniform random equal-size split (quota = n // n_clients, any
    remainder left unassigned). dirichlet: per-client label proportions are
    drawn from Dirichlet(alpha * ones), converted to per-label quotas with
    largest-remainder rounding, then filled without replacement; clients
    short on a label backfill from whatever remains in the global pool.
    """
    if n_clients < 2:
        raise ValueError("need at least 2 clients")
    quota = len(ds) // n_clients
    if quota < 1:
        raise ValueError(f"{len(ds)} samples cannot cover {n_clients} clients")

    rng = _seed_rng(seed)

    if scheme == "iid":
        order = rng.permutation(len(ds))
        indices = [np.sort(order[i * quota : (i + 1) * quota]) for i in range(n_clients)]
        return Partition(indices, "iid")

    if scheme != "dirichlet":
        raise ValueError(f"unknown partition scheme {scheme!r}")
    if alpha is None or alpha <= 0:
        raise ValueError("dirichlet partitioning needs alpha > 0")

    label_pools = []
    for k in range(ds.n_labels):
        pool = np.flatnonzero(ds.labels == k)
        label_pools.append(list(rng.permutation(pool)))

    proportions = rng.dirichlet(np.full(ds.n_labels, alpha), size=n_clients)
    indices = []
    for n in range(n_clients):
        targets = _largest_remainder(proportions[n] * quota, quota)
        taken: list[int] = []
        for k in range(ds.n_labels):
            grab = min(targets[k], len(label_pools[k]))
            if grab:
                taken.extend(label_pools[k][:grab])
                del label_pools[k][:grab]
        short = quota - len(taken)
        if short > 0:
            # Backfill from the global leftover pool, round-robin over labels.
            leftover = [i for pool in label_pools for i in pool]
            leftover_order = rng.permutation(len(leftover))
            refill = [leftover[i] for i in leftover_order[:short]]
            refill_set = set(refill)
            for k in range(ds.n_labels):
                label_pools[k] = [i for i in label_pools[k] if i not in refill_set]
            taken.extend(refill)
        indices.append(np.sort(np.asarray(taken, dtype=np.int64)))
    return Partition(indices, f"dirichlet({alpha:g})")


def _largest_remainder(raw: np.ndarray, total: int) -> np.ndarray:
    """Round non-negative reals to integers that sum exactly to `total`."""
    floors = np.floor(raw).astype(np.int64)
    short = total - int(floors.sum())
    if short > 0:
        remainders = raw - floors
        for k in np.argsort(-remainders)[:short]:
            floors[k] += 1
    return floors


class CanaryPoolExhausted(Exception):
    """The canary pool has fewer than c * t samples."""


@dataclass
class CanarySet:
    """Server-held labeled pool, consumed in disjoint per-round windows.

    Round t uses rows [(t-1)*c, t*c); windows never overlap, so a pool of
    at least c * T samples is required for a T-round run.
    """

    pool: Dataset
    c: int

    def __post_init__(self):
        if self.c < 1:
            raise ValueError("canary window size must be >= 1")

    def window_indices(self, t: int) -> np.ndarray:
        if t < 1:
            raise ValueError("rounds are 1-based")
        if len(self.pool) < self.c * t:
            raise CanaryPoolExhausted(
                f"round {t} needs {self.c * t} pooled canaries, pool has {len(self.pool)}"
            )
        return np.arange((t - 1) * self.c, t * self.c, dtype=np.int64)

    def window(self, t: int) -> Dataset:
        """The round-t canary batch; identical for every client."""
        return self.pool.subset(self.window_indices(t))

    def complement(self, t: int, rng: np.random.Generator) -> Dataset:
        """A random same-size batch from the pool outside the round-t window."""
        used = set(self.window_indices(t).tolist())
        rest = np.asarray([i for i in range(len(self.pool)) if i not in used], dtype=np.int64)
        if len(rest) < self.c:
            raise CanaryPoolExhausted(
                f"pool too small for a non-member batch of {self.c} at round {t}"
            )
        picked = rng.choice(rest, size=self.c, replace=False)
        return self.pool.subset(np.sort(picked))


def save_csv(ds: Dataset, path) -> None:
    """Dump as CSV: feature columns f0..f{d-1}, then `label`."""
    d = ds.features.shape[1]
    header = ",".join([f"f{i}" for i in range(d)] + ["label"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row, lab in zip(ds.features, ds.labels):
            fh.write(",".join(format(v, ".17g") for v in row) + f",{int(lab)}\n")


def load_csv(path, n_labels: int | None = None) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: expected trailing `label` column")
        rows, labels = [], []
        for line in fh:
            parts = line.strip().split(",")
            if not line.strip():
                continue
            rows.append([float(v) for v in parts[:-1]])
            labels.append(int(parts[-1]))
    labels_arr = np.asarray(labels, dtype=np.int64)
    if n_labels is None:
        n_labels = int(labels_arr.max()) + 1 if len(labels_arr) else 1
    return Dataset(np.asarray(rows, dtype=np.float64), labels_arr, n_labels)
