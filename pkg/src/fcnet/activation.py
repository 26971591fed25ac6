"""Pedestrian activation maps: weighted channel sums, normalization, and
integral-image rectangle queries used by the calibration region search.

The raw map is accumulated strictly in channel order so tests can demand
exact equality with a loop oracle.  Normalization clamps negatives to zero
and min-max scales what remains; a constant map (no spread) normalizes to
all zeros, which downstream turns both calibrations into identities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box
from .tensor import Tensor

SPAN_EPS = 1e-12


@dataclass(frozen=True)
class ActivationMap:
    raw: Tensor       # [M,N], unnormalized
    norm: Tensor      # [M,N], values in [0,1]
    integral: Tensor  # [M+1,N+1] summed-area table over norm

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw.shape


def normalize(raw: Tensor) -> Tensor:
    """Clamp negatives to zero, then min-max scale to [0,1].

    Span at or below SPAN_EPS (constant map after clamping) gives all zeros
    rather than dividing by noise.
    """
    clamped = np.maximum(raw, 0.0)
    lo = clamped.min()
    span = clamped.max() - lo
    if span <= SPAN_EPS:
        return np.zeros_like(clamped)
    return (clamped - lo) / span


def normalize_bwd(raw: Tensor, d_norm: Tensor) -> Tensor:
    """Gradient of normalize.  Min and max positions take the first flat
    (row-major) occurrence, matching np.argmin/argmax on the forward values.
    """
    clamped = np.maximum(raw, 0.0)
    lo = clamped.min()
    span = clamped.max() - lo
    d_raw = np.zeros_like(raw)
    if span <= SPAN_EPS:
        return d_raw
    i_min = int(clamped.argmin())
    i_max = int(clamped.argmax())
    s1 = d_norm.sum()
    s2 = (d_norm * (clamped - lo)).sum()
    d_clamped = d_norm / span
    d_clamped.flat[i_min] += -s1 / span + s2 / span**2
    d_clamped.flat[i_max] += -s2 / span**2
    d_raw[raw > 0.0] = d_clamped[raw > 0.0]
    return d_raw


def _build_integral(norm: Tensor) -> Tensor:
    m, n = norm.shape
    integral = np.zeros((m + 1, n + 1))
    integral[1:, 1:] = norm.cumsum(axis=0).cumsum(axis=1)
    return integral


def self_activation_map(features: Tensor, class_weights: Tensor) -> ActivationMap:
    """raw[m,n] = sum_c w[c] * Y[c,m,n], accumulated in channel order."""
    y = np.asarray(features, dtype=np.float64)
    w = np.asarray(class_weights, dtype=np.float64)
    if y.ndim != 3:
        raise ValueError(f"features must be [C,M,N], got shape {y.shape}")
    if w.ndim != 1 or w.shape[0] != y.shape[0]:
        raise ValueError(f"class_weights length {w.shape} != channel count {y.shape[0]}")
    raw = np.zeros(y.shape[1:])
    for c in range(y.shape[0]):
        raw += w[c] * y[c]
    norm = normalize(raw)
    return ActivationMap(raw=raw, norm=norm, integral=_build_integral(norm))


def self_activation_bwd(features: Tensor, class_weights: Tensor,
                        d_raw: Tensor) -> tuple[Tensor, Tensor]:
    """Gradients of the raw map w.r.t. features and class weights."""
    y = np.asarray(features, dtype=np.float64)
    w = np.asarray(class_weights, dtype=np.float64)
    d_raw = np.asarray(d_raw, dtype=np.float64)
    if d_raw.shape != y.shape[1:]:
        raise ValueError(f"d_raw shape {d_raw.shape} != map shape {y.shape[1:]}")
    d_features = w[:, None, None] * d_raw[None, :, :]
    d_weights = (d_raw[None, :, :] * y).sum(axis=(1, 2))
    return d_features, d_weights


def rect_sum(map: ActivationMap, box: Box) -> float:
    """Sum of norm over the box via four integral lookups."""
    m, n = map.norm.shape
    if not (0 <= box.y0 < box.y1 <= m and 0 <= box.x0 < box.x1 <= n):
        raise ValueError(f"box {box} outside map {m}x{n} or empty")
    ii = map.integral
    return float(ii[box.y1, box.x1] - ii[box.y0, box.x1]
                 - ii[box.y1, box.x0] + ii[box.y0, box.x0])


def write_pgm(path, norm: Tensor) -> None:
    """Binary PGM (P5, maxval 255) of the normalized map."""
    scaled = np.clip(np.rint(np.asarray(norm) * 255.0), 0, 255).astype(np.uint8)
    h, w = scaled.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(scaled.tobytes())


def write_raw_csv(path, raw: Tensor) -> None:
    """Raw map as CSV, one row per map row, repr precision (round-trips)."""
    with open(path, "w", encoding="ascii") as f:
        for row in np.asarray(raw):
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")


def read_raw_csv(path) -> Tensor:
    rows = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows, dtype=np.float64)
