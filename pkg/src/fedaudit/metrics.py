"""Per-round detection metrics and CSV emission.

Free-riders are the positive class. metrics.csv holds one row per round
and detector in a fixed column order; scores.csv holds the per-client
scalar each detector produced; mia_samples.csv (written only when a
membership detector ran) holds the per-sample score matrices. All floats
are formatted with 17 significant digits so reruns are byte-identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

METRICS_COLUMNS = (
    "round",
    "detector",
    "tp",
    "fp",
    "tn",
    "fn",
    "precision",
    "recall",
    "f1",
    "fpr",
    "train_accuracy",
    "test_accuracy",
)

SCORES_COLUMNS = ("round", "client", "detector", "score")
SAMPLE_SCORES_COLUMNS = ("round", "client", "sample", "kind", "score")


def _f(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class DetectorMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    fpr: float


@dataclass
class RoundMetrics:
    round: int
    per_detector: dict[str, DetectorMetrics]
    train_accuracy: float = 0.0
    test_accuracy: float = 0.0


def confusion(flags: np.ndarray, truth: np.ndarray) -> DetectorMetrics:
    """Confusion counts and derived rates; 0/0 ratios resolve to 0."""
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape:
        raise ValueError("flag and truth vectors must align")
    tp = int(np.sum(flags & truth))
    fp = int(np.sum(flags & ~truth))
    tn = int(np.sum(~flags & ~truth))
    fn = int(np.sum(~flags & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    return DetectorMetrics(tp, fp, tn, fn, precision, recall, f1, fpr)


def compute_metrics(flags: dict[str, np.ndarray], truth, round_index: int = 0) -> RoundMetrics:
    """Confusion metrics for every detector's flag vector against the FR roles."""
    truth = np.asarray(truth, dtype=bool)
    return RoundMetrics(
        round_index, {name: confusion(fl, truth) for name, fl in flags.items()}
    )


def emit_csv(results, outdir, config_snapshot: str) -> list[str]:
    """Stream round results to the output directory.

    `results` yields objects exposing `.metrics` (RoundMetrics) and
    `.detections` (name -> object with `.scores` per client and optional
    `.sample_scores` matrices). Returns the paths written.
    """
    os.makedirs(outdir, exist_ok=True)
    metrics_path = os.path.join(outdir, "metrics.csv")
    scores_path = os.path.join(outdir, "scores.csv")
    snapshot_path = os.path.join(outdir, "config.snapshot")
    samples_path = os.path.join(outdir, "mia_samples.csv")

    wrote_samples = False
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as mfh, open(
        scores_path, "w", encoding="utf-8", newline="\n"
    ) as sfh:
        mfh.write(",".join(METRICS_COLUMNS) + "\n")
        sfh.write(",".join(SCORES_COLUMNS) + "\n")
        samples_fh = None
        try:
            for result in results:
                rm = result.metrics
                for name in sorted(rm.per_detector):
                    d = rm.per_detector[name]
                    mfh.write(
                        f"{rm.round},{name},{d.tp},{d.fp},{d.tn},{d.fn},"
                        f"{_f(d.precision)},{_f(d.recall)},{_f(d.f1)},{_f(d.fpr)},"
                        f"{_f(rm.train_accuracy)},{_f(rm.test_accuracy)}\n"
                    )
                for name in sorted(result.detections):
                    det = result.detections[name]
                    for client, score in enumerate(det.scores):
                        sfh.write(f"{rm.round},{client},{name},{_f(score)}\n")
                    for kind in sorted(det.sample_scores):
                        matrix = det.sample_scores[kind]
                        if samples_fh is None:
                            samples_fh = open(
                                samples_path, "w", encoding="utf-8", newline="\n"
                            )
                            samples_fh.write(",".join(SAMPLE_SCORES_COLUMNS) + "\n")
                            wrote_samples = True
                        for client in range(matrix.scores.shape[0]):
                            for sample in range(matrix.scores.shape[1]):
                                samples_fh.write(
                                    f"{rm.round},{client},{sample},{kind},"
                                    f"{_f(matrix.scores[client, sample])}\n"
                                )
        finally:
            if samples_fh is not None:
                samples_fh.close()

    with open(snapshot_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config_snapshot)

    paths = [metrics_path, scores_path, snapshot_path]
    if wrote_samples:
        paths.append(samples_path)
    return paths


def mean_f1_by_detector(rounds: list[RoundMetrics], skip_rounds: int = 0) -> dict[str, float]:
    """Arithmetic mean of per-round F1 per detector, past any warm-up."""
    included = [rm for rm in rounds if rm.round > skip_rounds]
    if not included:
        return {}
    names = sorted({name for rm in included for name in rm.per_detector})
    return {
        name: float(np.mean([rm.per_detector[name].f1 for rm in included if name in rm.per_detector]))
        for name in names
    }


def parse_metrics_csv(path) -> list[RoundMetrics]:
    """Read metrics.csv back into RoundMetrics (lossless for emitted files)."""
    rounds: dict[int, RoundMetrics] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            t = int(parts[0])
            dm = DetectorMetrics(
                tp=int(parts[2]),
                fp=int(parts[3]),
                tn=int(parts[4]),
                fn=int(parts[5]),
                precision=float(parts[6]),
                recall=float(parts[7]),
                f1=float(parts[8]),
                fpr=float(parts[9]),
            )
            rm = rounds.setdefault(
                t, RoundMetrics(t, {}, float(parts[10]), float(parts[11]))
            )
            rm.per_detector[parts[1]] = dm
    return [rounds[t] for t in sorted(rounds)]
