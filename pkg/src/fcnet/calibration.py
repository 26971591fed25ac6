"""Feature calibration: pixel-wise reweighting of conv features by the
activation map, and region calibration of per-proposal pooled features
(pooled proposal, plus the ring between inner box and proposal, minus the
ring between proposal and outer box).

All region coordinates live on the feature-map grid.  Region placement is
a constrained exhaustive search over the activation map's integral image;
gradients never flow through the placement (regions are constants within a
training iteration).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .activation import ActivationMap, normalize_bwd, rect_sum
from .geometry import Box
from .tensor import Tensor

__all__ = [
    "Box",
    "CalibrationRegions",
    "round_half_up",
    "pixel_calibrate_fwd",
    "pixel_calibrate_bwd",
    "find_calibration_regions",
    "roi_pool_masked",
    "roi_pool_masked_bwd",
    "region_calibrate_fwd",
    "region_calibrate_bwd",
    "regions_to_json",
]


def round_half_up(x: float) -> int:
    """round() half-ties go to even; region sizing wants plain .5-up."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class CalibrationRegions:
    proposal: Box
    inner: Box
    outer: Box
    r_h: float
    r_w: float


def pixel_calibrate_fwd(features: Tensor, map: ActivationMap) -> Tensor:
    """out[c] = norm * features[c] + features[c].

    Written in exactly that form so an all-zero map is a bitwise identity.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != map.norm.shape:
        raise ValueError(f"features {x.shape} do not match map {map.norm.shape}")
    return map.norm[None, :, :] * x + x


def pixel_calibrate_bwd(features: Tensor, map: ActivationMap, d_output: Tensor,
                        grad_through_A: bool = False) -> tuple[Tensor, Tensor | None]:
    """d_features always; d_raw (gradient into the unnormalized map) only
    when grad_through_A is set, else None (map treated as a constant).
    """
    x = np.asarray(features, dtype=np.float64)
    d_y = np.asarray(d_output, dtype=np.float64)
    if d_y.shape != x.shape or x.shape[1:] != map.norm.shape:
        raise ValueError(f"shapes inconsistent: features {x.shape}, d_output {d_y.shape}")
    d_features = d_y * (map.norm[None, :, :] + 1.0)
    if not grad_through_A:
        return d_features, None
    d_norm = (d_y * x).sum(axis=0)
    return d_features, normalize_bwd(map.raw, d_norm)


def find_calibration_regions(map: ActivationMap, proposal: Box,
                             r_h: float, r_w: float) -> CalibrationRegions:
    """Place the inner box (proposal dims shrunk by r) inside the proposal
    where the activation mass is largest; the outer box (dims grown by r)
    shares the inner's center, clipped to the map and then expanded just
    enough to keep covering the proposal.

    Ties in the placement search break to the smallest row, then column.
    """
    m, n = map.norm.shape
    if not (0 <= proposal.y0 < proposal.y1 <= m and 0 <= proposal.x0 < proposal.x1 <= n):
        raise ValueError(f"proposal {proposal} outside map {m}x{n}")
    if r_h < 1.0 or r_w < 1.0:
        raise ValueError(f"ratios must be >= 1, got r_h={r_h}, r_w={r_w}")

    ph, pw = proposal.h, proposal.w
    ih = max(1, round_half_up(ph / r_h))
    iw = max(1, round_half_up(pw / r_w))
    oh = round_half_up(ph * r_h)
    ow = round_half_up(pw * r_w)

    # All placements of an ih x iw box inside the proposal, scored through
    # the integral image with the same expression rect_sum uses, so the
    # argmax agrees bitwise with a per-candidate brute force.
    n_y = ph - ih + 1
    n_x = pw - iw + 1
    ii = map.integral
    y0, x0 = proposal.y0, proposal.x0
    sums = (ii[y0 + ih:y0 + ih + n_y, x0 + iw:x0 + iw + n_x]
            - ii[y0:y0 + n_y, x0 + iw:x0 + iw + n_x]
            - ii[y0 + ih:y0 + ih + n_y, x0:x0 + n_x]
            + ii[y0:y0 + n_y, x0:x0 + n_x])
    k = int(sums.argmax())  # first occurrence in row-major order
    iy0 = y0 + k // n_x
    ix0 = x0 + k % n_x
    inner = Box(ix0, iy0, ix0 + iw, iy0 + ih)

    oy0 = round_half_up((inner.y0 + inner.y1 - oh) / 2.0)
    ox0 = round_half_up((inner.x0 + inner.x1 - ow) / 2.0)
    oy0, oy1 = max(0, oy0), min(m, oy0 + oh)
    ox0, ox1 = max(0, ox0), min(n, ox0 + ow)
    # Clipping can break concentric coverage of the proposal; expand back.
    outer = Box(min(ox0, proposal.x0), min(oy0, proposal.y0),
                max(ox1, proposal.x1), max(oy1, proposal.y1))
    return CalibrationRegions(proposal=proposal, inner=inner, outer=outer,
                              r_h=float(r_h), r_w=float(r_w))


def _resolve_mask(roi: Box, zero_box: Box | None):
    if zero_box is None:
        return False, (0, 0, 0, 0)
    y0 = max(roi.y0, zero_box.y0)
    x0 = max(roi.x0, zero_box.x0)
    y1 = min(roi.y1, zero_box.y1)
    x1 = min(roi.x1, zero_box.x1)
    if y0 >= y1 or x0 >= x1:
        return False, (0, 0, 0, 0)
    return True, (y0, x0, y1, x1)


def _out_size(out_size) -> tuple[int, int]:
    if isinstance(out_size, int):
        out_size = (out_size, out_size)
    p_r, p_c = int(out_size[0]), int(out_size[1])
    if p_r < 1 or p_c < 1:
        raise ValueError(f"out_size must be positive, got {out_size}")
    return p_r, p_c


def _check_roi(features: np.ndarray, roi: Box) -> None:
    _, m, n = features.shape
    if not (0 <= roi.y0 < roi.y1 <= m and 0 <= roi.x0 < roi.x1 <= n):
        raise ValueError(f"roi {roi} outside feature map {m}x{n}")


def _bin_edges(extent: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    b = np.arange(p)
    starts = (b * extent) // p
    ends = np.maximum(((b + 1) * extent) // p, starts + 1)
    return starts, ends


def roi_pool_masked(features: Tensor, roi: Box, zero_box: Box | None,
                    out_size, pool: str = "max") -> Tensor:
    """Crop the roi, zero the zero_box intersection, pool to out_size.

    Max pooling by default; masked cells participate as zeros (an all-masked
    bin pools to 0).  pool="mean" averages over the bin instead, masked
    zeros included.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"features must be [C,M,N], got {x.shape}")
    _check_roi(x, roi)
    p_r, p_c = _out_size(out_size)
    use_mask, (my0, mx0, my1, mx1) = _resolve_mask(roi, zero_box)
    if pool == "max":
        return _kernels.roi_pool_max(x, roi.y0, roi.x0, roi.y1, roi.x1,
                                     my0, mx0, my1, mx1, use_mask, p_r, p_c)
    if pool != "mean":
        raise ValueError(f"pool must be 'max' or 'mean', got {pool!r}")
    crop = x[:, roi.y0:roi.y1, roi.x0:roi.x1].copy()
    if use_mask:
        crop[:, my0 - roi.y0:my1 - roi.y0, mx0 - roi.x0:mx1 - roi.x0] = 0.0
    rs, re = _bin_edges(roi.h, p_r)
    cs, ce = _bin_edges(roi.w, p_c)
    out = np.empty((x.shape[0], p_r, p_c))
    for br in range(p_r):
        for bc in range(p_c):
            out[:, br, bc] = crop[:, rs[br]:re[br], cs[bc]:ce[bc]].mean(axis=(1, 2))
    return out


def _pool_argmax(x: np.ndarray, roi: Box, zero_box: Box | None,
                 p_r: int, p_c: int) -> tuple[np.ndarray, np.ndarray]:
    use_mask, (my0, mx0, my1, mx1) = _resolve_mask(roi, zero_box)
    return _kernels.roi_pool_max_argmax(x, roi.y0, roi.x0, roi.y1, roi.x1,
                                        my0, mx0, my1, mx1, use_mask, p_r, p_c)


def _mean_pool_bwd(x_shape, roi: Box, zero_box: Box | None,
                   p_r: int, p_c: int, d_out: np.ndarray) -> np.ndarray:
    use_mask, (my0, mx0, my1, mx1) = _resolve_mask(roi, zero_box)
    d_x = np.zeros(x_shape)
    rs, re = _bin_edges(roi.h, p_r)
    cs, ce = _bin_edges(roi.w, p_c)
    for br in range(p_r):
        for bc in range(p_c):
            count = (re[br] - rs[br]) * (ce[bc] - cs[bc])
            d_x[:, roi.y0 + rs[br]:roi.y0 + re[br],
                roi.x0 + cs[bc]:roi.x0 + ce[bc]] += (d_out[:, br, bc] / count)[:, None, None]
    if use_mask:
        d_x[:, my0:my1, mx0:mx1] = 0.0
    return d_x


def region_calibrate_fwd(features: Tensor, regions: CalibrationRegions,
                         out_size, pool: str = "max") -> Tensor:
    """Pooled proposal + inner-masked proposal - proposal-masked outer."""
    x_r = roi_pool_masked(features, regions.proposal, None, out_size, pool)
    x_i = roi_pool_masked(features, regions.proposal, regions.inner, out_size, pool)
    x_o = roi_pool_masked(features, regions.outer, regions.proposal, out_size, pool)
    return x_r + x_i - x_o


def roi_pool_masked_bwd(features: Tensor, roi: Box, zero_box: Box | None,
                        out_size, d_output: Tensor, pool: str = "max") -> Tensor:
    """Gradient of roi_pool_masked w.r.t. features.  Masked cells fed the
    pool a constant zero, so they receive no gradient; for max pooling a
    bin whose winner was masked routes nothing.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"features must be [C,M,N], got {x.shape}")
    _check_roi(x, roi)
    p_r, p_c = _out_size(out_size)
    d_out = np.ascontiguousarray(d_output, dtype=np.float64)
    if d_out.shape != (x.shape[0], p_r, p_c):
        raise ValueError(f"d_output shape {d_out.shape} != {(x.shape[0], p_r, p_c)}")
    if pool == "mean":
        return _mean_pool_bwd(x.shape, roi, zero_box, p_r, p_c, d_out)
    if pool != "max":
        raise ValueError(f"pool must be 'max' or 'mean', got {pool!r}")
    _, arg = _pool_argmax(x, roi, zero_box, p_r, p_c)
    return _kernels.roi_pool_scatter(arg, d_out, x.shape[1], x.shape[2])


def region_calibrate_bwd(features: Tensor, regions: CalibrationRegions,
                         out_size, d_output: Tensor, pool: str = "max") -> Tensor:
    """Sum of the three pooling branch gradients, outer branch negated.
    Regions are constants (no gradient through the placement search).
    """
    return (roi_pool_masked_bwd(features, regions.proposal, None, out_size, d_output, pool)
            + roi_pool_masked_bwd(features, regions.proposal, regions.inner, out_size, d_output, pool)
            - roi_pool_masked_bwd(features, regions.outer, regions.proposal, out_size, d_output, pool))


def regions_to_json(regions: CalibrationRegions) -> dict:
    return {
        "proposal": regions.proposal.as_list(),
        "inner": regions.inner.as_list(),
        "outer": regions.outer.as_list(),
        "r_h": regions.r_h,
        "r_w": regions.r_w,
    }
