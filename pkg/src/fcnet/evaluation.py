"""Detection metrics: greedy IoU matching with ignore regions, FPPI/miss
curves, log-average miss rate over 9 log-spaced FPPI points in [1e-2, 1],
per-subset evaluation, and background-error (FP far from any GT) analysis.

Detections are (Box, score) pairs here; matching is done once globally in
descending score order, so every threshold along the sweep sees the prefix
of the same matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, iou
from .synthdata import Scene, subset_member

MR2_REFERENCE_FPPI = [10.0 ** (-2.0 + k / 4.0) for k in range(9)]
MISS_FLOOR = 1e-4
BG_ERROR_IOU = 0.2

DEFAULT_SUBSETS = ("all", "reasonable", "partial", "heavy", "reasonable+heavy")


@dataclass(frozen=True)
class EvalCurve:
    thresholds: tuple[float, ...]       # descending score thresholds
    points: tuple[tuple[float, float], ...]  # (fppi, miss) per threshold
    mr2: float
    n_gt: int
    n_det: int
    n_images: int


def _det_key(box: Box, score: float):
    return (-score, box.y0, box.x0, box.y1, box.x1)


def match_detections(detections, gt_boxes, ignore_boxes=(), iou_thresh: float = 0.5):
    """Greedy one-to-one matching in descending score order.

    Returns (labels, gt_hit): labels aligned with the input detection order,
    each "tp", "fp", or "ignored"; gt_hit flags per real GT box.  A
    detection that cannot claim a real GT but overlaps an ignore box at the
    threshold is "ignored" (neither TP nor FP); ignore boxes absorb any
    number of detections.
    """
    order = sorted(range(len(detections)),
                   key=lambda i: _det_key(detections[i][0], detections[i][1]))
    labels = [""] * len(detections)
    gt_hit = [False] * len(gt_boxes)
    for i in order:
        box = detections[i][0]
        best_j = -1
        best_iou = iou_thresh
        for j, gt in enumerate(gt_boxes):
            if gt_hit[j]:
                continue
            v = iou(box, gt)
            if v > best_iou or (best_j < 0 and v >= iou_thresh):
                best_j = j
                best_iou = v
        if best_j >= 0:
            gt_hit[best_j] = True
            labels[i] = "tp"
            continue
        if any(iou(box, ig) >= iou_thresh for ig in ignore_boxes):
            labels[i] = "ignored"
        else:
            labels[i] = "fp"
    return labels, gt_hit


def _interp_miss(points: list[tuple[float, float]], ref_fppi: float) -> float:
    """Miss rate at a reference FPPI: linear interpolation in log10(fppi)
    over positive-fppi points, clamped to the curve's endpoints.  A
    zero-fppi point (no false positives yet) is the low-end clamp target.
    """
    best_at = {}
    for f, m in points:
        if f not in best_at or m < best_at[f]:
            best_at[f] = m
    fs = sorted(best_at)
    low_clamp = best_at[fs[0]]
    pos = [f for f in fs if f > 0.0]
    if not pos or ref_fppi < pos[0]:
        return low_clamp
    if ref_fppi >= pos[-1]:
        return best_at[pos[-1]]
    xs = np.log10(pos)
    ms = np.array([best_at[f] for f in pos])
    return float(np.interp(np.log10(ref_fppi), xs, ms))


def _log_average(points: list[tuple[float, float]]) -> float:
    misses = [max(_interp_miss(points, ref), MISS_FLOOR) for ref in MR2_REFERENCE_FPPI]
    return float(np.exp(np.mean(np.log(misses))))


def fppi_miss_curve(records, total_gt: int, n_images: int) -> EvalCurve:
    """Build the curve from (score, label, ...) records across all images.

    The threshold sweep visits each unique positive score; zero-score
    detections never enter any operating point.  No positive-score
    detections at all means miss 1.0 everywhere, mr2 = 1.0.
    """
    if n_images < 1:
        raise ValueError(f"n_images must be >= 1, got {n_images}")
    if total_gt == 0:
        raise ValueError("no ground truth: miss rate undefined")
    scored = sorted((r[0], r[1]) for r in records
                    if r[0] > 0.0 and r[1] != "ignored")
    thresholds = sorted({s for s, _ in scored}, reverse=True)
    points = []
    n_fp = n_tp = 0
    remaining = list(scored)
    for t in thresholds:
        while remaining and remaining[-1][0] >= t:
            _, label = remaining.pop()
            if label == "fp":
                n_fp += 1
            elif label == "tp":
                n_tp += 1
        points.append((n_fp / n_images, 1.0 - n_tp / total_gt))
    mr2 = _log_average(points) if points else 1.0
    return EvalCurve(thresholds=tuple(thresholds), points=tuple(points), mr2=mr2,
                     n_gt=total_gt, n_det=len(records), n_images=n_images)


def collect_records(per_image_detections, scenes: list[Scene], subset: str):
    """Match every image's detections under one subset's protocol.

    GT outside the subset becomes ignore regions.  Each record is
    (score, label, is_background_error); the background flag is measured
    against all GT boxes of the image regardless of subset.
    """
    if len(per_image_detections) != len(scenes):
        raise ValueError(f"{len(per_image_detections)} detection lists for {len(scenes)} scenes")
    records = []
    total_gt = 0
    for dets, scene in zip(per_image_detections, scenes):
        members = [o.box for o in scene.objects if subset_member(o.subset, subset)]
        ignores = [o.box for o in scene.objects if not subset_member(o.subset, subset)]
        total_gt += len(members)
        labels, _ = match_detections(dets, members, ignores)
        all_gt = [o.box for o in scene.objects]
        for (box, score), label in zip(dets, labels):
            is_bg = all(iou(box, gt) < BG_ERROR_IOU for gt in all_gt)
            records.append((score, label, is_bg))
    return records, total_gt


def evaluate_by_subset(per_image_detections, scenes: list[Scene],
                       subsets=DEFAULT_SUBSETS) -> dict[str, EvalCurve]:
    """One curve per requested subset; subsets with zero GT are omitted."""
    out = {}
    for subset in subsets:
        records, total_gt = collect_records(per_image_detections, scenes, subset)
        if total_gt == 0:
            continue
        out[subset] = fppi_miss_curve(records, total_gt, len(scenes))
    return out


def background_error_fraction(per_image_detections, scenes: list[Scene],
                              at_fppi: float = 1.0) -> float | None:
    """Fraction of false positives that miss every GT (IoU < 0.2) at the
    operating point closest to at_fppi from below (or the lowest-FPPI point
    if the whole curve sits above it).  None when that point has no FPs.
    """
    records, total_gt = collect_records(per_image_detections, scenes, "all")
    if total_gt == 0:
        raise ValueError("no ground truth")
    curve = fppi_miss_curve(records, total_gt, len(scenes))
    if not curve.points:
        return None
    chosen = 0
    for i, (f, _) in enumerate(curve.points):
        if f <= at_fppi:
            chosen = i  # sweep is fppi-ascending; keep the largest under the cap
    t = curve.thresholds[chosen]
    n_fp = n_bg = 0
    for score, label, is_bg in records:
        if score >= t and label == "fp":
            n_fp += 1
            n_bg += int(is_bg)
    if n_fp == 0:
        return None
    return n_bg / n_fp


def _fmt(v: float) -> str:
    return repr(float(v))


def write_curve_csv(path, curve: EvalCurve) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("threshold,fppi,miss\n")
        for t, (fppi, miss) in zip(curve.thresholds, curve.points):
            f.write(f"{_fmt(t)},{_fmt(fppi)},{_fmt(miss)}\n")


def write_summary_csv(path, curves: dict[str, EvalCurve]) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("subset,mr2,n_gt,n_det\n")
        for subset, curve in curves.items():
            f.write(f"{subset},{_fmt(curve.mr2)},{curve.n_gt},{curve.n_det}\n")


def write_background_csv(path, rows: list[tuple[float, float | None]]) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("fppi,bg_fraction\n")
        for fppi, frac in rows:
            f.write(f"{_fmt(fppi)},{'n/a' if frac is None else _fmt(frac)}\n")
