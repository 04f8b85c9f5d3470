"""dB conversion, standardisation, paired flips and channel stacking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import CHANNELS, SarTile, SarTilePair
from .errors import ConfigError, DomainError, ShapeMismatchError

DB_FLOOR_EPS = 1e-10


@dataclass(frozen=True)
class PreprocessConfig:
    db_floor_eps: float = DB_FLOOR_EPS
    flip_prob: float = 0.5
    normalize: str = "train_stats"

    def __post_init__(self):
        if not self.db_floor_eps > 0:
            raise ConfigError(f"db_floor_eps must be > 0, got {self.db_floor_eps}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if self.normalize not in ("train_stats", "none"):
            raise ConfigError(f"normalize must be 'train_stats' or 'none', got {self.normalize!r}")


def to_decibels(x, eps: float = DB_FLOOR_EPS) -> np.ndarray:
    x = np.asarray(x)
    if np.any(x < 0):
        raise DomainError("linear intensity must be non-negative")
    return 10.0 * np.log10(np.maximum(x, eps))


def normalize(x, mean, std, axis: int = 0) -> np.ndarray:
    """Standardise per channel along ``axis`` (channel-first by default)."""
    x = np.asarray(x)
    mean = np.asarray(mean, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    std = np.asarray(std, dtype=mean.dtype)
    if np.any(~(std > 0)):
        raise ConfigError(f"std must be > 0 per channel, got {std.tolist()}")
    shape = [1] * x.ndim
    shape[axis] = -1
    return (x - mean.reshape(shape)) / std.reshape(shape)


def flip_tile(tile: SarTile, horizontal: bool, vertical: bool) -> SarTile:
    data = tile.data
    if horizontal:
        data = data[:, ::-1, :]
    if vertical:
        data = data[::-1, :, :]
    return SarTile(np.ascontiguousarray(data))


def random_flips(pair: SarTilePair, draws, p: float = 0.5) -> SarTilePair:
    """Flip both timesteps identically: horizontal iff ``draws[0] < p``, vertical iff ``draws[1] < p``."""
    h = bool(draws[0] < p)
    v = bool(draws[1] < p)
    if not (h or v):
        return pair
    return SarTilePair(flip_tile(pair.pre, h, v), flip_tile(pair.post, h, v))


def flip_stacked(x: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    """Same flips as :func:`random_flips`, on an already stacked ``(C, H, W)`` input."""
    if horizontal:
        x = x[:, :, ::-1]
    if vertical:
        x = x[:, ::-1, :]
    return x


def stack_pair(pair: SarTilePair) -> np.ndarray:
    """Concatenate to ``(4, H, W)`` ordered pre-VV, pre-VH, post-VV, post-VH."""
    pre, post = pair.pre.data, pair.post.data
    if pre.shape != post.shape:
        raise ShapeMismatchError(f"pre {pre.shape} vs post {post.shape}")
    return np.concatenate([pre.transpose(2, 0, 1), post.transpose(2, 0, 1)], axis=0)


def unstack(x: np.ndarray) -> SarTilePair:
    c = x.shape[0] // 2
    return SarTilePair(SarTile(x[:c].transpose(1, 2, 0)), SarTile(x[c:].transpose(1, 2, 0)))


def stats_vectors(stats: dict) -> tuple[np.ndarray, np.ndarray]:
    """Expand manifest ``{VV: {...}, VH: {...}}`` stats to the 4 stacked channels."""
    mean = [stats[c]["mean_db"] for c in CHANNELS] * 2
    std = [stats[c]["std_db"] for c in CHANNELS] * 2
    return np.asarray(mean, dtype=np.float64), np.asarray(std, dtype=np.float64)


def prepare_input(pair: SarTilePair, stats: dict | None, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Deterministic path: dB, optional standardisation, stack. Returns float32 ``(4, H, W)``."""
    x = to_decibels(stack_pair(pair).astype(np.float64), cfg.db_floor_eps)
    if cfg.normalize == "train_stats":
        if stats is None:
            raise ConfigError("train_stats normalisation requested but manifest has no stats")
        mean, std = stats_vectors(stats)
        x = normalize(x, mean, std)
    return x.astype(np.float32)


def compute_db_stats(pairs, eps: float = DB_FLOOR_EPS) -> dict:
    """Per-polarisation dB mean/std pooled over pre and post tiles."""
    sums = np.zeros(len(CHANNELS))
    sq = np.zeros(len(CHANNELS))
    n = 0
    for pair in pairs:
        for tile in (pair.pre, pair.post):
            db = to_decibels(tile.data.astype(np.float64), eps).reshape(-1, tile.channels)
            sums += db.sum(axis=0)
            sq += np.square(db).sum(axis=0)
            n += db.shape[0]
    if n == 0:
        raise ValueError("no tiles to compute statistics from")
    mean = sums / n
    std = np.sqrt(np.maximum(sq / n - mean**2, 0.0))
    return {c: {"mean_db": float(mean[i]), "std_db": float(std[i])} for i, c in enumerate(CHANNELS)}
