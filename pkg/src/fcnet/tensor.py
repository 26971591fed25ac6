"""Dense-array layer math: explicit forward/backward pairs, no autograd.

Tensors are float64 numpy arrays, row-major.  Callers chain the *_bwd
functions by hand in reverse order; each pair is checked against finite
differences in the tests.  Single precision appears only at the FCT1 file
boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

Tensor = np.ndarray

FCT1_MAGIC = b"FCT1"


@dataclass
class LayerGrads:
    d_input: Tensor
    d_params: list[Tensor] = field(default_factory=list)


def _as_f64(x, name: str, ndim: int) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dims, got shape {a.shape}")
    return a


def conv2d_fwd(input: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1; spatial size preserved."""
    x = _as_f64(input, "input", 3)
    k = _as_f64(kernels, "kernels", 4)
    b = _as_f64(bias, "bias", 1)
    if k.shape[2:] != (3, 3):
        raise ValueError(f"kernels must be 3x3, got {k.shape[2:]}")
    if k.shape[1] != x.shape[0]:
        raise ValueError(f"kernel in-channels {k.shape[1]} != input channels {x.shape[0]}")
    if b.shape[0] != k.shape[0]:
        raise ValueError(f"bias length {b.shape[0]} != out channels {k.shape[0]}")
    return _kernels.conv2d_fwd(x, k, b)


def conv2d_bwd(input: Tensor, kernels: Tensor, d_output: Tensor) -> LayerGrads:
    x = _as_f64(input, "input", 3)
    k = _as_f64(kernels, "kernels", 4)
    d_y = _as_f64(d_output, "d_output", 3)
    if d_y.shape != (k.shape[0],) + x.shape[1:]:
        raise ValueError(f"d_output shape {d_y.shape} inconsistent with input/kernels")
    d_x, d_k, d_b = _kernels.conv2d_bwd(x, k, d_y)
    return LayerGrads(d_x, [d_k, d_b])


def relu_fwd(x: Tensor) -> Tensor:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_bwd(x: Tensor, d_y: Tensor) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    d_y = np.asarray(d_y, dtype=np.float64)
    if x.shape != d_y.shape:
        raise ValueError(f"relu_bwd shape mismatch: {x.shape} vs {d_y.shape}")
    return np.where(x > 0.0, d_y, 0.0)


def maxpool2_fwd(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties go to the first cell in row-major order."""
    x = _as_f64(x, "x", 3)
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"maxpool2 needs even spatial extents, got {x.shape[1:]}")
    y, _ = _kernels.maxpool2_fwd(x)
    return y


def maxpool2_bwd(x: Tensor, d_y: Tensor) -> Tensor:
    x = _as_f64(x, "x", 3)
    d_y = _as_f64(d_y, "d_y", 3)
    if d_y.shape != (x.shape[0], x.shape[1] // 2, x.shape[2] // 2):
        raise ValueError(f"maxpool2_bwd d_y shape {d_y.shape} inconsistent with x {x.shape}")
    _, idx = _kernels.maxpool2_fwd(x)
    return _kernels.maxpool2_bwd(idx, d_y, x.shape[1], x.shape[2])


def gap_fwd(x: Tensor) -> Tensor:
    """Global average pooling: [C,H,W] -> [C]."""
    x = _as_f64(x, "x", 3)
    return x.mean(axis=(1, 2))


def gap_bwd(x: Tensor, d_y: Tensor) -> Tensor:
    x = _as_f64(x, "x", 3)
    d_y = _as_f64(d_y, "d_y", 1)
    if d_y.shape[0] != x.shape[0]:
        raise ValueError(f"gap_bwd channel mismatch: {d_y.shape[0]} vs {x.shape[0]}")
    hw = x.shape[1] * x.shape[2]
    return np.broadcast_to((d_y / hw)[:, None, None], x.shape).copy()


def linear_fwd(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    x = _as_f64(x, "x", 1)
    w = _as_f64(weights, "weights", 2)
    b = _as_f64(bias, "bias", 1)
    if w.shape[1] != x.shape[0] or b.shape[0] != w.shape[0]:
        raise ValueError(f"linear shapes inconsistent: x {x.shape}, w {w.shape}, b {b.shape}")
    return w @ x + b


def linear_bwd(x: Tensor, weights: Tensor, d_y: Tensor) -> LayerGrads:
    x = _as_f64(x, "x", 1)
    w = _as_f64(weights, "weights", 2)
    d_y = _as_f64(d_y, "d_y", 1)
    if d_y.shape[0] != w.shape[0] or w.shape[1] != x.shape[0]:
        raise ValueError(f"linear_bwd shapes inconsistent: x {x.shape}, w {w.shape}, d_y {d_y.shape}")
    return LayerGrads(w.T @ d_y, [np.outer(d_y, x), d_y.copy()])


def softmax_xent_fwd(logits: Tensor, label: int) -> tuple[float, Tensor]:
    """Returns (cross-entropy loss, class probabilities)."""
    z = _as_f64(logits, "logits", 1)
    if z.shape[0] == 0:
        raise ValueError("softmax on empty logits")
    if not 0 <= label < z.shape[0]:
        raise ValueError(f"label {label} out of range for {z.shape[0]} classes")
    shifted = z - z.max()
    e = np.exp(shifted)
    probs = e / e.sum()
    loss = float(np.log(e.sum()) - shifted[label])
    return loss, probs


def softmax_xent_bwd(probs: Tensor, label: int) -> Tensor:
    p = _as_f64(probs, "probs", 1)
    if not 0 <= label < p.shape[0]:
        raise ValueError(f"label {label} out of range for {p.shape[0]} classes")
    d = p.copy()
    d[label] -= 1.0
    return d


def write_fct1(path, arr: Tensor) -> None:
    """FCT1 interchange: magic, u32-LE ndim, u32-LE extents, f32-LE row-major values."""
    a = np.ascontiguousarray(arr, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(FCT1_MAGIC)
        f.write(struct.pack("<I", a.ndim))
        for extent in a.shape:
            f.write(struct.pack("<I", extent))
        f.write(a.astype("<f4").tobytes())


def read_fct1(path) -> Tensor:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != FCT1_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {FCT1_MAGIC!r}")
    if len(blob) < 8:
        raise ValueError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    header_end = 8 + 4 * ndim
    if len(blob) < header_end:
        raise ValueError(f"{path}: truncated extents (ndim={ndim})")
    shape = struct.unpack_from(f"<{ndim}I", blob, 8) if ndim else ()
    count = 1
    for extent in shape:
        count *= extent
    expected = header_end + 4 * count
    if len(blob) < expected:
        raise ValueError(f"{path}: truncated payload, have {len(blob)} bytes, need {expected}")
    if len(blob) > expected:
        raise ValueError(f"{path}: {len(blob) - expected} trailing bytes after payload")
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=header_end)
    return values.astype(np.float64).reshape(shape)
