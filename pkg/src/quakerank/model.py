"""Reference regressor: three 3x3 conv blocks, global average pool, linear head.

Forward and backward are written out by hand in numpy. Parameters live in an
ordered ``dict[str, ndarray]``; the dtype of the parameters decides the compute
dtype (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadMagicError,
    ShapeMismatchError,
    StorageError,
    TruncatedError,
    VersionMismatchError,
)

MODEL_NAME = "quakerank-cnn3"
IN_CHANNELS = 4
CONV_CHANNELS = (8, 16, 32)
KERNEL = 3

PARAM_SHAPES: dict[str, tuple[int, ...]] = {
    "conv1.w": (8, 4, 3, 3),
    "conv1.b": (8,),
    "conv2.w": (16, 8, 3, 3),
    "conv2.b": (16,),
    "conv3.w": (32, 16, 3, 3),
    "conv3.b": (32,),
    "head.w": (1, 32),
    "head.b": (1,),
}
PARAM_NAMES = tuple(PARAM_SHAPES)
N_PARAMS = sum(int(np.prod(s)) for s in PARAM_SHAPES.values())

Params = dict[str, np.ndarray]


def param_count(params: Params | None = None) -> int:
    if params is None:
        return N_PARAMS
    return sum(p.size for p in params.values())


def init_params(seed: int, dtype=np.float32) -> Params:
    """Uniform(+-sqrt(6 / fan_in)) weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    params: Params = {}
    for name, shape in PARAM_SHAPES.items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def check_params(params: Params) -> None:
    if tuple(params) != PARAM_NAMES:
        raise ShapeMismatchError(f"expected parameters {PARAM_NAMES}, got {tuple(params)}")
    for name, shape in PARAM_SHAPES.items():
        if params[name].shape != shape:
            raise ShapeMismatchError(f"{name}: expected shape {shape}, got {params[name].shape}")


# -- layers -----------------------------------------------------------------


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C*9) patches for a same-padded 3x3 conv."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # B, C, H, W, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * KERNEL * KERNEL)


def _col2im(cols: np.ndarray, shape) -> np.ndarray:
    b, c, h, w = shape
    cols = cols.reshape(b, h, w, c, KERNEL, KERNEL)
    dxp = np.zeros((b, c, h + 2, w + 2), dtype=cols.dtype)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            dxp[:, :, ki : ki + h, kj : kj + w] += cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1]


def conv3x3_forward(x, w, bias):
    b, _, h, wd = x.shape
    cols = _im2col(x)
    out = cols @ w.reshape(w.shape[0], -1).T + bias
    return out.reshape(b, h, wd, -1).transpose(0, 3, 1, 2), cols


def conv3x3_backward(dout, cols, w, x_shape):
    cout = w.shape[0]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (d.T @ cols).reshape(w.shape)
    db = d.sum(axis=0)
    dx = _col2im(d @ w.reshape(cout, -1), x_shape)
    return dx, dw, db


def maxpool2_forward(x):
    """2x2/2 max pool. Returns output and the flat window index (0..3) of the max.

    ``argmax`` picks the first maximum, giving a fixed tie-break.
    """
    b, c, h, w = x.shape
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(dout, idx):
    b, c, h2, w2 = dout.shape
    dwin = np.zeros((b, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)


# -- network ----------------------------------------------------------------


@dataclass
class ForwardTrace:
    input_shape: tuple
    cols: list          # im2col matrices per conv layer
    conv_shapes: list   # conv input shapes
    relu_masks: list
    pool_idx: list
    pooled: np.ndarray  # global-average-pooled features (B, 32)
    dtype: np.dtype

    def pattern(self) -> bytes:
        """Fingerprint of the active ReLU units and pool winners; the network is
        smooth in the parameters wherever this stays constant."""
        return b"".join(m.tobytes() for m in self.relu_masks) + b"".join(p.tobytes() for p in self.pool_idx)

    def shapes(self) -> dict:
        return {
            "cols": [c.shape for c in self.cols],
            "relu": [m.shape for m in self.relu_masks],
            "pool": [p.shape for p in self.pool_idx],
            "pooled": self.pooled.shape,
        }


def check_input(x: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[1] != IN_CHANNELS:
        raise ShapeMismatchError(f"input must be (B, {IN_CHANNELS}, H, W), got {x.shape}")
    h, w = x.shape[2:]
    if h < 8 or w < 8 or h % 4 or w % 4:
        raise ShapeMismatchError(f"H and W must be >= 8 and divisible by 4, got {h}x{w}")


def forward(params: Params, x: np.ndarray):
    """Predict one raw scalar per batch row. Returns ``(pred[B], trace)``."""
    check_params(params)
    check_input(x)
    dtype = params["conv1.w"].dtype
    h = np.ascontiguousarray(x, dtype=dtype)
    cols, shapes, masks, pidx = [], [], [], []
    for i in (1, 2, 3):
        shapes.append(h.shape)
        z, c = conv3x3_forward(h, params[f"conv{i}.w"], params[f"conv{i}.b"])
        cols.append(c)
        mask = z > 0
        masks.append(mask)
        h = z * mask
        if i < 3:
            h, idx = maxpool2_forward(h)
            pidx.append(idx)
    pooled = h.mean(axis=(2, 3))
    pred = pooled @ params["head.w"][0] + params["head.b"][0]
    return pred, ForwardTrace(x.shape, cols, shapes, masks, pidx, pooled, np.dtype(dtype))


def predict(params: Params, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = [forward(params, x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=params["head.b"].dtype)


def backward(params: Params, trace: ForwardTrace, upstream) -> Params:
    """Gradients of ``sum(pred * upstream)`` for every parameter."""
    check_params(params)
    dtype = params["conv1.w"].dtype
    if trace.dtype != dtype:
        raise ShapeMismatchError(f"trace dtype {trace.dtype} does not match params dtype {dtype}")
    g = np.asarray(upstream, dtype=dtype)
    b = trace.input_shape[0]
    if g.shape != (b,):
        raise ShapeMismatchError(f"upstream must have shape ({b},), got {g.shape}")

    grads: Params = {}
    grads["head.w"] = (g @ trace.pooled)[None, :]
    grads["head.b"] = np.array([g.sum()], dtype=dtype)

    hw = trace.relu_masks[2].shape[2] * trace.relu_masks[2].shape[3]
    dpooled = g[:, None] * params["head.w"][0][None, :]
    dh = np.broadcast_to((dpooled / hw)[:, :, None, None], trace.relu_masks[2].shape)
    for i in (3, 2, 1):
        dz = dh * trace.relu_masks[i - 1]
        dx, dw, db = conv3x3_backward(dz, trace.cols[i - 1], params[f"conv{i}.w"], trace.conv_shapes[i - 1])
        grads[f"conv{i}.w"] = dw
        grads[f"conv{i}.b"] = db
        if i > 1:
            dh = maxpool2_backward(dx, trace.pool_idx[i - 2])
    return {name: grads[name].astype(dtype, copy=False) for name in PARAM_NAMES}


# -- cost model -------------------------------------------------------------


def layer_flops(h: int, w: int) -> list[tuple[str, int]]:
    """Per-layer FLOPs: 2*Cout*Cin*K^2*Hout*Wout per conv, 2*in*out per linear,
    one op per output element for ReLU and pooling."""
    if h < 8 or w < 8 or h % 4 or w % 4:
        raise ValueError(f"unsupported input size {h}x{w}")
    rows = []
    cin = IN_CHANNELS
    for i, cout in enumerate(CONV_CHANNELS, start=1):
        rows.append((f"conv{i}", 2 * cout * cin * KERNEL * KERNEL * h * w))
        rows.append((f"relu{i}", cout * h * w))
        if i < len(CONV_CHANNELS):
            h, w = h // 2, w // 2
            rows.append((f"maxpool{i}", cout * h * w))
        cin = cout
    rows.append(("gap", cin))
    rows.append(("head", 2 * cin * 1))
    return rows


def flops_estimate(h: int, w: int | None = None) -> int:
    return sum(n for _, n in layer_flops(h, h if w is None else w))


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"QRNK"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sII")


def save_checkpoint(params: Params, metadata: dict, path) -> None:
    """Write ``QRNK | u32 version | u32 len | JSON | float32 tensors`` (little-endian)."""
    check_params(params)
    header = {
        "metadata": metadata,
        "tensors": [[name, list(PARAM_SHAPES[name])] for name in PARAM_NAMES],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
            fh.write(blob)
            for name in PARAM_NAMES:
                fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    except OSError as exc:
        raise StorageError(path, exc.strerror or str(exc)) from exc


def load_checkpoint(path) -> tuple[Params, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError(path, exc.strerror or str(exc)) from exc
    if len(raw) < _CKPT_HEAD.size:
        raise TruncatedError(f"{path}: checkpoint header truncated")
    magic, version, n = _CKPT_HEAD.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise BadMagicError(f"{path}: expected magic {CKPT_MAGIC!r}, found {magic!r}")
    if version != CKPT_VERSION:
        raise VersionMismatchError(f"{path}: unsupported checkpoint version {version}")
    off = _CKPT_HEAD.size
    if len(raw) < off + n:
        raise TruncatedError(f"{path}: metadata block truncated")
    try:
        header = json.loads(raw[off : off + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedError(f"{path}: metadata block unreadable ({exc})") from None
    off += n
    tensors = [(name, tuple(shape)) for name, shape in header.get("tensors", [])]
    if tensors != list(PARAM_SHAPES.items()):
        raise ShapeMismatchError(f"{path}: tensor layout {tensors} does not match the model")
    params: Params = {}
    for name, shape in tensors:
        size = int(np.prod(shape)) * 4
        if len(raw) < off + size:
            raise TruncatedError(f"{path}: tensor {name} truncated")
        params[name] = np.frombuffer(raw, dtype="<f4", count=size // 4, offset=off).reshape(shape).astype(np.float32)
        off += size
    if off != len(raw):
        raise ShapeMismatchError(f"{path}: {len(raw) - off} trailing bytes after tensors")
    return params, header.get("metadata", {})
