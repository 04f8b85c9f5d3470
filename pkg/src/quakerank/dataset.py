"""Tile files, JSON-lines manifests and deterministic batching."""

from __future__ import annotations

import json
import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ManifestError,
    StorageError,
    TruncatedError,
    VersionMismatchError,
)

log = logging.getLogger(__name__)

TILE_MAGIC = b"SART"
TILE_VERSION = 1
_TILE_HEADER = struct.Struct("<4sIIII")

CHANNELS = ("VV", "VH")
SPLITS = ("train", "val", "test")
RECORD_FIELDS = ("id", "pre_path", "post_path", "magnitude", "split")
DEFAULT_MAX_MAGNITUDE = 10.0


@dataclass(frozen=True, eq=False)
class SarTile:
    """Linear-intensity tile stored as ``(H, W, C)`` float32, channels ``[VV, VH]``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype="<f4")
        if arr.ndim != 3:
            raise ValueError(f"tile data must be (H, W, C), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tile contains non-finite values")
        if np.any(arr < 0):
            raise ValueError("tile contains negative intensities")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, SarTile):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()


@dataclass(frozen=True)
class SarTilePair:
    pre: SarTile
    post: SarTile

    def __post_init__(self):
        if self.pre.data.shape != self.post.data.shape:
            raise ValueError(
                f"pre/post shape mismatch: {self.pre.data.shape} vs {self.post.data.shape}"
            )


@dataclass(frozen=True)
class Sample:
    id: str
    pair: SarTilePair
    magnitude: float
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if not (math.isfinite(self.magnitude) and 0.0 <= self.magnitude <= DEFAULT_MAX_MAGNITUDE):
            raise ValueError(f"magnitude {self.magnitude} outside [0, {DEFAULT_MAX_MAGNITUDE}]")


@dataclass(frozen=True)
class Record:
    id: str
    pre_path: str
    post_path: str
    magnitude: float
    split: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "pre_path": self.pre_path,
                "post_path": self.post_path,
                "magnitude": self.magnitude,
                "split": self.split,
            }
        )


@dataclass
class Manifest:
    records: list[Record]
    stats: dict | None = None
    root: Path = field(default_factory=Path)

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(r.split for r in self.records)
        return {s: c[s] for s in SPLITS if c[s]}

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def by_id(self) -> dict[str, Record]:
        return {r.id: r for r in self.records}

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def load_sample(self, record: Record) -> Sample:
        pair = SarTilePair(
            read_tile(self.resolve(record.pre_path)), read_tile(self.resolve(record.post_path))
        )
        return Sample(record.id, pair, record.magnitude, record.split)


def write_tile(tile: SarTile, path) -> None:
    path = Path(path)
    # SarTile validates on construction; re-check in case data was mutated in place
    if not np.all(np.isfinite(tile.data)) or np.any(tile.data < 0):
        raise ValueError(f"refusing to write invalid tile to {path}")
    h, w, c = tile.data.shape
    header = _TILE_HEADER.pack(TILE_MAGIC, TILE_VERSION, h, w, c)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(tile.data.astype("<f4", copy=False).tobytes(order="C"))
    except OSError as exc:
        raise StorageError(path, exc.strerror or str(exc)) from exc


def read_tile(path) -> SarTile:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError(path, exc.strerror or str(exc)) from exc
    if len(raw) < _TILE_HEADER.size:
        raise TruncatedError(f"{path}: header needs {_TILE_HEADER.size} bytes, got {len(raw)}")
    magic, version, h, w, c = _TILE_HEADER.unpack_from(raw)
    if magic != TILE_MAGIC:
        raise BadMagicError(f"{path}: expected magic {TILE_MAGIC!r}, found {magic!r}")
    if version != TILE_VERSION:
        raise VersionMismatchError(f"{path}: unsupported tile version {version}")
    n = h * w * c
    payload = raw[_TILE_HEADER.size :]
    if len(payload) < 4 * n:
        raise TruncatedError(f"{path}: payload has {len(payload)} bytes, expected {4 * n}")
    data = np.frombuffer(payload, dtype="<f4", count=n).reshape(h, w, c)
    return SarTile(data.copy())


def _parse_magnitude(value, lineno: int, max_magnitude: float) -> float:
    try:
        mag = float(value)
    except (TypeError, ValueError):
        raise ManifestError(f"line {lineno}: magnitude {value!r} is not a number") from None
    if not math.isfinite(mag):
        raise ManifestError(f"line {lineno}: magnitude {value!r} is not finite")
    if not 0.0 <= mag <= max_magnitude:
        raise ManifestError(f"line {lineno}: magnitude {mag} outside [0, {max_magnitude}]")
    return mag


def load_manifest(path, check_paths: bool = True, max_magnitude: float = DEFAULT_MAX_MAGNITUDE) -> Manifest:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StorageError(path, exc.strerror or str(exc)) from exc

    manifest = Manifest(records=[], root=path.parent)
    seen: Counter[str] = Counter()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ManifestError(f"line {lineno}: expected a JSON object")
        if "id" not in obj:
            if "stats" not in obj or manifest.stats is not None or manifest.records:
                raise ManifestError(f"line {lineno}: record without id")
            manifest.stats = obj["stats"]
            continue
        if set(obj) != set(RECORD_FIELDS):
            raise ManifestError(
                f"line {lineno}: fields must be exactly {list(RECORD_FIELDS)}, got {sorted(obj)}"
            )
        if obj["split"] not in SPLITS:
            raise ManifestError(f"line {lineno}: unknown split {obj['split']!r}")
        rec = Record(
            id=str(obj["id"]),
            pre_path=str(obj["pre_path"]),
            post_path=str(obj["post_path"]),
            magnitude=_parse_magnitude(obj["magnitude"], lineno, max_magnitude),
            split=obj["split"],
        )
        seen[rec.id] += 1
        manifest.records.append(rec)

    dupes = sorted(k for k, v in seen.items() if v > 1)
    if dupes:
        raise ManifestError(f"duplicate ids: {', '.join(dupes)}")
    if check_paths:
        missing = [
            p
            for r in manifest.records
            for p in (r.pre_path, r.post_path)
            if not manifest.resolve(p).is_file()
        ]
        if missing:
            raise ManifestError(f"{len(missing)} tile paths do not resolve, first: {missing[0]}")
    log.info("loaded manifest %s: %s", path, manifest.counts)
    return manifest


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    lines = []
    if manifest.stats is not None:
        lines.append(json.dumps({"stats": manifest.stats}, sort_keys=True))
    lines.extend(r.to_json() for r in manifest.records)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(path, exc.strerror or str(exc)) from exc


def batch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, 0xBA7C]))


def make_batches(
    manifest: Manifest,
    split: str,
    batch_size: int,
    seed: int,
    epoch: int,
    ranking_enabled: bool = False,
) -> list[list[str]]:
    """Shuffle ``split`` with a permutation keyed on ``(seed, epoch)`` and chunk it.

    The final short batch is kept unless it holds a single sample and the
    ranking term needs pairs.
    """
    if ranking_enabled and batch_size < 2:
        raise ValueError("batch_size must be >= 2 when the ranking loss is enabled")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    ids = [r.id for r in manifest.split(split)]
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    order = batch_rng(seed, epoch).permutation(len(ids))
    batches = [[ids[i] for i in order[k : k + batch_size]] for k in range(0, len(ids), batch_size)]
    if ranking_enabled and len(batches[-1]) < 2:
        log.warning("dropping final batch of size %d (ranking needs pairs)", len(batches[-1]))
        batches.pop()
    return batches
