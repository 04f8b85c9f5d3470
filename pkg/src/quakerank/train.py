"""Training loop and checkpoint evaluation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DEFAULT_MAX_MAGNITUDE, Manifest, make_batches
from .errors import ConfigError, NonFiniteError
from .losses import DEFAULT_MARGIN, composite_loss
from .metrics import MetricsReport, compute_metrics, mae
from .model import MODEL_NAME, Params, backward, forward, init_params, load_checkpoint, predict, save_checkpoint
from .optim import AdamWState, ScheduleConfig, adamw_step, lr_at_step
from .preprocess import flip_stacked, prepare_input

log = logging.getLogger(__name__)

EPOCH_COLUMNS = ("epoch", "train_mse", "train_ranking", "train_total", "val_mae", "lr_last")
CHECKPOINT_NAME = "model.qrnk"
EPOCH_LOG_NAME = "epochs.csv"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    peak_lr: float = 1e-4
    margin: float = DEFAULT_MARGIN
    ranking_enabled: bool = True
    seed: int = 0
    flip_prob: float = 0.5
    max_magnitude: float = DEFAULT_MAX_MAGNITUDE
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    exclude_ties: bool = False
    # "pred" reproduces the literal prediction-ordered pairing; diagnostic only
    pair_labels: str = "target"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < (2 if self.ranking_enabled else 1):
            raise ConfigError(f"batch_size {self.batch_size} too small (ranking needs >= 2)")
        if not self.peak_lr > 0:
            raise ConfigError(f"peak_lr must be > 0, got {self.peak_lr}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if self.pair_labels not in ("target", "pred"):
            raise ConfigError(f"pair_labels must be 'target' or 'pred', got {self.pair_labels!r}")

    @property
    def loss_name(self) -> str:
        return "mse+rank" if self.ranking_enabled else "mse"

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    train_ranking: float
    train_total: float
    val_mae: float
    lr_last: float


@dataclass
class TrainResult:
    params: Params
    history: list[EpochLog]
    best_epoch: int
    best_val_mae: float
    config: TrainConfig
    total_steps: int = 0
    checkpoint_path: Path | None = None
    extra: dict = field(default_factory=dict)


class SplitData:
    """A split held in memory as preprocessed ``(N, 4, H, W)`` float32 inputs."""

    def __init__(self, manifest: Manifest, split: str):
        recs = manifest.split(split)
        if not recs:
            raise ValueError(f"split {split!r} is empty")
        self.ids = [r.id for r in recs]
        self.index = {sid: k for k, sid in enumerate(self.ids)}
        self.x = np.stack([prepare_input(manifest.load_sample(r).pair, manifest.stats) for r in recs])
        self.y = np.array([r.magnitude for r in recs], dtype=np.float64)

    def __len__(self):
        return len(self.ids)

    @property
    def tile_size(self) -> tuple[int, int]:
        return self.x.shape[2], self.x.shape[3]


def _flip_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, 0xF11B]))


def augment_batch(x: np.ndarray, draws: np.ndarray, p: float) -> np.ndarray:
    out = np.empty_like(x)
    for k in range(len(x)):
        out[k] = flip_stacked(x[k], draws[k, 0] < p, draws[k, 1] < p)
    return out


def clamp_predictions(pred, max_magnitude: float) -> np.ndarray:
    return np.clip(np.asarray(pred, np.float64), 0.0, max_magnitude)


def epoch_csv(history: list[EpochLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_COLUMNS)
    for row in history:
        w.writerow([row.epoch] + [repr(float(getattr(row, c))) for c in EPOCH_COLUMNS[1:]])
    return buf.getvalue()


def train(config: TrainConfig, manifest: Manifest, out_dir=None, train_data: SplitData | None = None, val_data: SplitData | None = None) -> TrainResult:
    """Train from scratch; keep the parameters with the best validation MAE.

    Everything random (init, batch order, flips) is keyed on ``config.seed``.
    ``train_data``/``val_data`` may be passed in to reuse preprocessed splits.
    """
    if manifest.stats is None:
        raise ConfigError("manifest has no train-split dB statistics")
    train_data = train_data or SplitData(manifest, "train")
    val_data = val_data or SplitData(manifest, "val")

    epochs_batches = [
        make_batches(manifest, "train", config.batch_size, config.seed, e, config.ranking_enabled)
        for e in range(config.epochs)
    ]
    total_steps = sum(len(b) for b in epochs_batches)
    schedule = ScheduleConfig.from_total(config.peak_lr, total_steps, config.warmup_frac)

    params = init_params(config.seed)
    state = AdamWState.zeros_like(params, weight_decay=config.weight_decay)
    history: list[EpochLog] = []
    best_params, best_epoch, best_val = None, -1, math.inf
    step = 0
    lr = 0.0

    for epoch, batches in enumerate(epochs_batches):
        flip_rng = _flip_rng(config.seed, epoch)
        sums = np.zeros(3)
        for batch in batches:
            idx = np.array([train_data.index[sid] for sid in batch])
            draws = flip_rng.random((len(idx), 2))
            xb = augment_batch(train_data.x[idx], draws, config.flip_prob)
            yb = train_data.y[idx]

            pred, trace = forward(params, xb)
            out = composite_loss(
                pred,
                yb,
                config.margin,
                config.ranking_enabled,
                exclude_ties=config.exclude_ties,
                label_source=config.pair_labels,
            )
            if not math.isfinite(out.total):
                raise NonFiniteError(
                    f"non-finite loss at step {step}: mse={out.mse} ranking={out.ranking} total={out.total}"
                )
            grads = backward(params, trace, out.grad_wrt_predictions)
            lr = lr_at_step(schedule, step)
            adamw_step(params, grads, state, lr)
            sums += (out.mse, out.ranking, out.total)
            step += 1

        val_pred = clamp_predictions(predict(params, val_data.x), config.max_magnitude)
        val_mae = mae(val_pred, val_data.y)
        means = sums / len(batches)
        history.append(EpochLog(epoch, *map(float, means), val_mae, float(lr)))
        log.info(
            "epoch %d mse=%.4f rank=%.4f total=%.4f val_mae=%.4f",
            epoch, means[0], means[1], means[2], val_mae,
        )
        if val_mae < best_val:
            best_val, best_epoch = val_mae, epoch
            best_params = {k: v.copy() for k, v in params.items()}

    result = TrainResult(best_params, history, best_epoch, best_val, config, total_steps)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {
            "model": MODEL_NAME,
            "config": config.to_dict(),
            "config_digest": config.digest(),
            "epochs": config.epochs,
            "best_epoch": best_epoch,
            "best_val_mae": best_val,
            "total_steps": total_steps,
            "tile_size": list(train_data.tile_size),
        }
        result.checkpoint_path = out_dir / CHECKPOINT_NAME
        save_checkpoint(best_params, meta, result.checkpoint_path)
        (out_dir / EPOCH_LOG_NAME).write_text(epoch_csv(history), encoding="utf-8")
    return result


def evaluate_params(params: Params, data: SplitData, max_magnitude: float = DEFAULT_MAX_MAGNITUDE, config_digest: str = "") -> MetricsReport:
    pred = clamp_predictions(predict(params, data.x), max_magnitude)
    return compute_metrics(pred, data.y, config_digest)


def evaluate(checkpoint, manifest: Manifest, split: str = "test") -> MetricsReport:
    """Metrics for a saved checkpoint on ``split``; no augmentation, manifest order."""
    params, meta = load_checkpoint(checkpoint)
    cfg = meta.get("config", {})
    data = SplitData(manifest, split)
    return evaluate_params(
        params,
        data,
        cfg.get("max_magnitude", DEFAULT_MAX_MAGNITUDE),
        meta.get("config_digest", ""),
    )
