"""MSE, within-batch margin ranking, and their sum, with gradients w.r.t. predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_MARGIN = 0.02


@dataclass
class RankingPairBatch:
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    m: float
    pair_index: np.ndarray  # (P, 2) source indices (i, j)

    def __post_init__(self):
        n = len(self.pair_index)
        if not (len(self.x1) == len(self.x2) == len(self.y) == n):
            raise ValueError("x1, x2, y and pair_index must have equal length")
        if not np.all(np.abs(self.y) == 1):
            raise ValueError("labels y must be +1 or -1")
        if self.m < 0:
            raise ValueError(f"margin must be >= 0, got {self.m}")


@dataclass
class LossOutput:
    total: float
    mse: float
    ranking: float
    grad_wrt_predictions: np.ndarray


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("mse_loss needs a non-empty batch")
    if pred.shape != target.shape:
        raise ValueError(f"pred {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / pred.size


def build_pairs(pred, target, m: float = DEFAULT_MARGIN, exclude_ties: bool = False, label_source: str = "target") -> RankingPairBatch:
    """All ``i < j`` pairs with ``y = +1`` where ``target[i] >= target[j]``.

    ``label_source="pred"`` orders pairs by the predictions themselves, the
    literal reading of the pairing rule; it is a diagnostic only, since the
    resulting loss no longer depends on the targets.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    b = len(pred)
    if b < 2:
        raise ValueError(f"need at least 2 predictions to form pairs, got {b}")
    if label_source not in ("target", "pred"):
        raise ValueError(f"label_source must be 'target' or 'pred', got {label_source!r}")
    ref = target if label_source == "target" else pred
    i, j = np.triu_indices(b, k=1)
    if exclude_ties:
        keep = ref[i] != ref[j]
        i, j = i[keep], j[keep]
    y = np.where(ref[i] >= ref[j], 1.0, -1.0)
    return RankingPairBatch(pred[i], pred[j], y, float(m), np.stack([i, j], axis=1))


def margin_ranking_loss(pairs: RankingPairBatch):
    """Mean hinge ``max(0, -y (x1 - x2) + m)``; returns ``(loss, d_x1, d_x2)``.

    The kink itself (term exactly 0) takes the zero-gradient branch.
    """
    p = len(pairs.y)
    if p == 0:
        raise ValueError("margin_ranking_loss needs at least one pair")
    t = -pairs.y * (pairs.x1 - pairs.x2) + pairs.m
    active = t > 0
    loss = float(np.mean(np.where(active, t, 0.0)))
    d_x1 = np.where(active, -pairs.y / p, 0.0)
    return loss, d_x1, -d_x1


def composite_loss(pred, target, m: float = DEFAULT_MARGIN, ranking_enabled: bool = True, exclude_ties: bool = False, label_source: str = "target") -> LossOutput:
    mse, grad = mse_loss(pred, target)
    ranking = 0.0
    if ranking_enabled:
        pairs = build_pairs(pred, target, m, exclude_ties=exclude_ties, label_source=label_source)
        if len(pairs.y):
            ranking, d1, d2 = margin_ranking_loss(pairs)
            grad = grad.copy()
            np.add.at(grad, pairs.pair_index[:, 0], d1)
            np.add.at(grad, pairs.pair_index[:, 1], d2)
    return LossOutput(mse + ranking, mse, ranking, grad)
