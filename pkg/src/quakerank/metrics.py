"""Regression and ordering metrics over magnitude predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    pairwise_accuracy: float | None
    kendall_tau: float | None
    n_samples: int
    config_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def mae(pred, target) -> float:
    return float(np.mean(np.abs(np.asarray(pred, np.float64) - np.asarray(target, np.float64))))


def rmse(pred, target) -> float:
    d = np.asarray(pred, np.float64) - np.asarray(target, np.float64)
    return float(np.sqrt(np.mean(d * d)))


def pair_signs(pred, target):
    """Sign agreement over all ``i < j`` pairs with distinct targets."""
    pred = np.asarray(pred, np.float64)
    target = np.asarray(target, np.float64)
    i, j = np.triu_indices(len(target), k=1)
    keep = target[i] != target[j]
    i, j = i[keep], j[keep]
    return np.sign(pred[i] - pred[j]), np.sign(target[i] - target[j])


def pairwise_accuracy(pred, target) -> float | None:
    sp, st = pair_signs(pred, target)
    if sp.size == 0:
        return None
    return float(np.mean(sp == st))


def kendall_tau(pred, target) -> float | None:
    """Tau-a over pairs with distinct targets: (concordant - discordant) / pairs."""
    sp, st = pair_signs(pred, target)
    if sp.size == 0:
        return None
    prod = sp * st
    return float((np.count_nonzero(prod > 0) - np.count_nonzero(prod < 0)) / prod.size)


def compute_metrics(pred, target, config_digest: str = "") -> MetricsReport:
    pred = np.asarray(pred, np.float64)
    target = np.asarray(target, np.float64)
    if pred.size == 0:
        raise ValueError("cannot compute metrics on an empty split")
    return MetricsReport(
        mae=mae(pred, target),
        rmse=rmse(pred, target),
        pairwise_accuracy=pairwise_accuracy(pred, target),
        kendall_tau=kendall_tau(pred, target),
        n_samples=int(pred.size),
        config_digest=config_digest,
    )
