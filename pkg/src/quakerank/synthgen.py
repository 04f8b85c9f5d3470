"""Synthetic bi-temporal SAR-like tiles with a magnitude-driven deformation bump.

Post-event VV/VH intensity gains a Gaussian bump whose peak grows linearly
with magnitude, so the ordering of samples by magnitude is recoverable from
the imagery by construction.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import (
    Manifest,
    Record,
    SarTile,
    SarTilePair,
    Sample,
    save_manifest,
    write_tile,
)
from .errors import ConfigError, DomainError, StorageError
from .preprocess import compute_db_stats, to_decibels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    tile_size: int = 32
    n_train: int = 512
    n_val: int = 128
    n_test: int = 128
    mag_min: float = 4.0
    mag_max: float = 7.0
    n_blobs: int = 6
    vh_ratio: float = 0.25
    deform_amp_max: float = 0.6
    speckle_looks: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.mag_min < self.mag_max:
            raise ConfigError(f"mag_min ({self.mag_min}) must be < mag_max ({self.mag_max})")
        if self.tile_size < 8:
            raise ConfigError(f"tile_size must be >= 8, got {self.tile_size}")
        # deform_amp_max == 0 is allowed as the no-signal control
        if self.deform_amp_max < 0:
            raise ConfigError(f"deform_amp_max must be >= 0, got {self.deform_amp_max}")
        if self.speckle_looks < 1:
            raise ConfigError("speckle_looks must be >= 1")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ConfigError("split sizes must be non-negative")


def sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    """Independent stream per sample so generation order does not matter."""
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def _gaussian_bump(size: int, center, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d2 = (yy - center[0]) ** 2 + (xx - center[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma**2))


def gen_background(size: int, n_blobs: int, rng: np.random.Generator) -> np.ndarray:
    field = np.full((size, size), 0.1)
    for _ in range(n_blobs):
        amp = rng.uniform(0.2, 1.0)
        center = rng.uniform(0.0, size, size=2)
        sigma = rng.uniform(size / 8, size / 3)
        field += amp * _gaussian_bump(size, center, sigma)
    return field


def apply_speckle(field, looks: int, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative unit-mean Gamma(looks, 1/looks) speckle."""
    if looks < 1:
        raise DomainError(f"looks must be >= 1, got {looks}")
    field = np.asarray(field, dtype=np.float64)
    if np.any(~(field > 0)):
        raise DomainError("speckle needs a strictly positive field")
    return field * rng.gamma(shape=looks, scale=1.0 / looks, size=field.shape)


def deform_amplitude(cfg: SynthConfig, magnitude: float) -> float:
    return cfg.deform_amp_max * (magnitude - cfg.mag_min) / (cfg.mag_max - cfg.mag_min)


def expected_fields(cfg: SynthConfig, magnitude: float, rng: np.random.Generator):
    """Noise-free ``(pre, post)`` intensity fields, each ``(H, W, 2)`` in ``[VV, VH]`` order."""
    if not cfg.mag_min <= magnitude <= cfg.mag_max:
        raise DomainError(f"magnitude {magnitude} outside [{cfg.mag_min}, {cfg.mag_max}]")
    size = cfg.tile_size
    bg = gen_background(size, cfg.n_blobs, rng)
    center = rng.uniform(0.0, size, size=2)
    width = rng.uniform(size / 6, size / 3)
    deform = deform_amplitude(cfg, magnitude) * _gaussian_bump(size, center, width)
    pre = np.stack([bg, cfg.vh_ratio * bg], axis=-1)
    post_vv = bg + deform
    post = np.stack([post_vv, cfg.vh_ratio * post_vv], axis=-1)
    return pre, post


def gen_sample(cfg: SynthConfig, magnitude: float, rng: np.random.Generator, sample_id: str = "", split: str = "train") -> Sample:
    pre, post = expected_fields(cfg, magnitude, rng)
    pre = apply_speckle(pre, cfg.speckle_looks, rng)
    post = apply_speckle(post, cfg.speckle_looks, rng)
    pair = SarTilePair(SarTile(pre.astype(np.float32)), SarTile(post.astype(np.float32)))
    return Sample(sample_id, pair, float(magnitude), split)


def sample_ids(cfg: SynthConfig) -> list[tuple[str, str]]:
    out = []
    for split, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        out.extend((f"{split}-{i:05d}", split) for i in range(n))
    return out


def make_sample(cfg: SynthConfig, sample_id: str, split: str) -> Sample:
    rng = sample_rng(cfg.seed, sample_id)
    magnitude = float(rng.uniform(cfg.mag_min, cfg.mag_max))
    return gen_sample(cfg, magnitude, rng, sample_id, split)


def gen_dataset(cfg: SynthConfig, out_dir) -> Manifest:
    """Write tiles under ``out_dir/tiles`` and ``out_dir/manifest.jsonl``; return the manifest."""
    out_dir = Path(out_dir)
    tiles = out_dir / "tiles"
    try:
        tiles.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(tiles, exc.strerror or str(exc)) from exc

    records = []
    train_pairs = []
    for sid, split in sample_ids(cfg):
        s = make_sample(cfg, sid, split)
        pre_rel, post_rel = f"tiles/{sid}_pre.sart", f"tiles/{sid}_post.sart"
        write_tile(s.pair.pre, out_dir / pre_rel)
        write_tile(s.pair.post, out_dir / post_rel)
        records.append(Record(sid, pre_rel, post_rel, s.magnitude, split))
        if split == "train":
            train_pairs.append(s.pair)

    stats = compute_db_stats(train_pairs) if train_pairs else None
    manifest = Manifest(records=records, stats=stats, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    (out_dir / "synth_config.json").write_text(_config_json(cfg), encoding="utf-8")
    log.info("generated %d samples in %s", len(records), out_dir)
    return manifest


def _config_json(cfg: SynthConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n"


def diff_energy_feature(pair: SarTilePair) -> float:
    """Mean absolute VV dB change between timesteps."""
    pre = to_decibels(pair.pre.data[..., 0].astype(np.float64))
    post = to_decibels(pair.post.data[..., 0].astype(np.float64))
    return float(np.mean(np.abs(post - pre)))


def oracle_baseline(manifest: Manifest) -> dict:
    """Least-squares line from :func:`diff_energy_feature` to magnitude; test-split MAE."""
    def features(split):
        recs = manifest.split(split)
        f = np.array([diff_energy_feature(manifest.load_sample(r).pair) for r in recs])
        y = np.array([r.magnitude for r in recs])
        return f, y

    f_tr, y_tr = features("train")
    f_te, y_te = features("test")
    if len(f_tr) < 2 or len(f_te) == 0:
        raise ValueError("oracle needs >= 2 train and >= 1 test samples")
    var = np.var(f_tr)
    if not var > 1e-18:
        raise ValueError("degenerate feature variance on train split")
    slope = np.mean((f_tr - f_tr.mean()) * (y_tr - y_tr.mean())) / var
    intercept = y_tr.mean() - slope * f_tr.mean()
    pred = intercept + slope * f_te
    return {
        "mae": float(np.mean(np.abs(pred - y_te))),
        "constant_mae": float(np.mean(np.abs(y_tr.mean() - y_te))),
        "slope": float(slope),
        "intercept": float(intercept),
        "n_train": int(len(f_tr)),
        "n_test": int(len(f_te)),
    }
