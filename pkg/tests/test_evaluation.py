import numpy as np
import pytest

from fcnet.evaluation import (MISS_FLOOR, MR2_REFERENCE_FPPI, EvalCurve,
                              background_error_fraction, collect_records,
                              evaluate_by_subset, fppi_miss_curve,
                              match_detections, write_background_csv,
                              write_curve_csv, write_summary_csv)
from fcnet.geometry import Box
from fcnet.synthdata import Scene, SceneObject


def scene_with(objects, image=None):
    return Scene(seed=0, index=0, image=image if image is not None else np.zeros((1, 96, 96)),
                 objects=objects, occluders=[], layout={})


def obj(box, subset="reasonable"):
    return SceneObject(box=box, occlusion=0.0, subset=subset, tone=0.8)


def test_match_basic():
    gt = [Box(0, 0, 10, 20)]
    dets = [(Box(0, 0, 10, 20), 0.9), (Box(1, 0, 11, 20), 0.8), (Box(50, 50, 60, 70), 0.7)]
    labels, gt_hit = match_detections(dets, gt)
    assert labels == ["tp", "fp", "fp"]  # one-to-one: second det finds gt taken
    assert gt_hit == [True]


def test_match_prefers_higher_score():
    gt = [Box(0, 0, 10, 20)]
    dets = [(Box(1, 0, 11, 20), 0.5), (Box(0, 0, 10, 20), 0.9)]
    labels, _ = match_detections(dets, gt)
    assert labels == ["fp", "tp"]  # the 0.9 det matched first despite input order


def test_match_best_iou_wins():
    gt = [Box(0, 0, 10, 20), Box(8, 0, 18, 20)]
    dets = [(Box(1, 0, 11, 20), 0.9)]  # overlaps both; closer to the first
    labels, gt_hit = match_detections(dets, gt)
    assert labels == ["tp"]
    assert gt_hit == [True, False]


def test_match_ignore_absorbs_unlimited():
    ignores = [Box(0, 0, 10, 20)]
    dets = [(Box(0, 0, 10, 20), 0.9), (Box(1, 0, 11, 20), 0.8)]
    labels, _ = match_detections(dets, [], ignores)
    assert labels == ["ignored", "ignored"]


def test_match_real_gt_preferred_over_ignore():
    gt = [Box(0, 0, 10, 20)]
    ignores = [Box(0, 0, 10, 20)]
    labels, gt_hit = match_detections([(Box(0, 0, 10, 20), 0.9)], gt, ignores)
    assert labels == ["tp"] and gt_hit == [True]


def test_curve_hand_worked_fixture():
    """Three images, one GT each, four detections; every operating point
    worked out by hand.

    thresholds   tp fp  fppi  miss
    0.9          1  0   0/3   2/3
    0.8          2  0   0/3   1/3
    0.5          2  1   1/3   1/3
    0.3          2  2   2/3   1/3
    """
    records = [
        (0.9, "tp", False),
        (0.8, "tp", False),
        (0.5, "fp", True),
        (0.3, "fp", False),
    ]
    curve = fppi_miss_curve(records, total_gt=3, n_images=3)
    assert curve.thresholds == (0.9, 0.8, 0.5, 0.3)
    want = ((0.0, 2 / 3), (0.0, 1 / 3), (1 / 3, 1 / 3), (2 / 3, 1 / 3))
    for got, exp in zip(curve.points, want):
        assert got[0] == pytest.approx(exp[0]) and got[1] == pytest.approx(exp[1])
    # reference points below 1/3 clamp to miss 1/3 (the zero-fppi end);
    # those at or above 1/3 interpolate a flat 1/3 segment
    assert curve.mr2 == pytest.approx(1 / 3)


def test_curve_mixed_interpolation():
    # two distinct fppi points with different misses force interpolation
    records = [(0.9, "tp", False)] + [(0.8, "fp", False)] * 2 \
        + [(0.7, "tp", False)] + [(0.6, "fp", False)] * 38
    curve = fppi_miss_curve(records, total_gt=4, n_images=40)
    assert curve.points[-1][0] == 1.0
    # refs below the first positive fppi (0.05) clamp to the zero-fppi miss
    # 0.75 (3 refs); the rest ride the flat 0.5 segment (6 refs)
    assert curve.mr2 == pytest.approx(0.75 ** (1 / 3) * 0.5 ** (2 / 3), abs=1e-9)


def test_mr2_no_positive_detections_is_one():
    curve = fppi_miss_curve([(0.0, "fp", False)], total_gt=2, n_images=1)
    assert curve.mr2 == 1.0
    assert curve.thresholds == ()


def test_mr2_perfect_detector_hits_floor():
    records = [(0.9, "tp", False), (0.8, "tp", False)]
    curve = fppi_miss_curve(records, total_gt=2, n_images=2)
    # zero fppi everywhere, miss 0 at the lowest threshold: clamps to the floor
    assert curve.mr2 == pytest.approx(MISS_FLOOR)


def test_zero_score_detections_never_counted():
    base = [(0.9, "tp", False), (0.5, "fp", False)]
    noisy = base + [(0.0, "fp", False)] * 50
    a = fppi_miss_curve(base, total_gt=1, n_images=5)
    b = fppi_miss_curve(noisy, total_gt=1, n_images=5)
    assert a.thresholds == b.thresholds
    assert a.points == b.points
    assert a.mr2 == b.mr2


def test_mr2_monotone_in_false_positives():
    """Adding a high-scored FP can only raise (or keep) the log-average."""
    base = [(0.9, "tp", False), (0.6, "tp", False), (0.3, "fp", False)]
    worse = base + [(0.95, "fp", False)]
    a = fppi_miss_curve(base, total_gt=2, n_images=2)
    b = fppi_miss_curve(worse, total_gt=2, n_images=2)
    assert b.mr2 >= a.mr2


def test_curve_requires_gt_and_images():
    with pytest.raises(ValueError):
        fppi_miss_curve([], total_gt=0, n_images=1)
    with pytest.raises(ValueError):
        fppi_miss_curve([], total_gt=1, n_images=0)


def test_collect_records_subset_ignore_rule():
    """A heavy-only GT under the reasonable protocol becomes an ignore
    region: detections on it are neither TP nor FP."""
    s = scene_with([obj(Box(10, 10, 20, 30), "reasonable"),
                    obj(Box(50, 10, 60, 30), "heavy")])
    dets = [[(Box(10, 10, 20, 30), 0.9), (Box(50, 10, 60, 30), 0.8)]]
    records, total_gt = collect_records(dets, [s], "reasonable")
    assert total_gt == 1
    by_score = {r[0]: r[1] for r in records}
    assert by_score[0.9] == "tp"
    assert by_score[0.8] == "ignored"
    # same detections under "heavy": roles swap
    records, total_gt = collect_records(dets, [s], "heavy")
    by_score = {r[0]: r[1] for r in records}
    assert total_gt == 1
    assert by_score[0.9] == "ignored" and by_score[0.8] == "tp"


def test_reasonable_plus_heavy_is_union():
    objects = [obj(Box(10, 10, 20, 30), "reasonable"),
               obj(Box(30, 10, 40, 30), "partial"),
               obj(Box(50, 10, 60, 30), "heavy")]
    s = scene_with(objects)
    dets = [[(o.box, 0.9 - 0.1 * i) for i, o in enumerate(objects)]]
    _, n_union = collect_records(dets, [s], "reasonable+heavy")
    _, n_reasonable = collect_records(dets, [s], "reasonable")
    _, n_heavy = collect_records(dets, [s], "heavy")
    assert n_union == 3
    assert n_reasonable + n_heavy == n_union  # reasonable includes partial


def test_evaluate_by_subset_skips_empty():
    s = scene_with([obj(Box(10, 10, 20, 30), "reasonable")])
    curves = evaluate_by_subset([[(Box(10, 10, 20, 30), 0.9)]], [s],
                                ("reasonable", "heavy"))
    assert "reasonable" in curves and "heavy" not in curves


def test_background_error_fraction_cases():
    gt = Box(10, 10, 20, 30)
    s = scene_with([obj(gt)])
    # far-away FP: background error; duplicate on a matched GT: an FP but
    # not a background error (IoU 0.54 >= 0.2)
    graze = Box(13, 10, 23, 30)
    far = Box(60, 60, 70, 80)
    dets = [[(gt, 0.9), (graze, 0.8), (far, 0.7)]]
    frac = background_error_fraction(dets, [s], at_fppi=2.0)
    assert frac == pytest.approx(0.5)  # one of two FPs is background
    # all FPs disjoint from GT -> fraction 1.0
    dets = [[(gt, 0.9), (far, 0.7)]]
    assert background_error_fraction(dets, [s], at_fppi=1.0) == pytest.approx(1.0)
    # no FPs at all -> None
    dets = [[(gt, 0.9)]]
    assert background_error_fraction(dets, [s], at_fppi=1.0) is None


def test_background_error_operating_point():
    gt = Box(10, 10, 20, 30)
    s1 = scene_with([obj(gt)])
    s2 = scene_with([obj(gt)])
    far1, far2 = Box(60, 60, 70, 80), Box(40, 60, 50, 80)
    graze = Box(13, 10, 23, 30)
    # fppi sweep: 0.5 (far1), 1.0 (graze joins), 1.5 (far2)
    dets = [[(gt, 0.9), (far1, 0.8), (graze, 0.6), (far2, 0.4)],
            [(gt, 0.85)]]
    # at_fppi=1.0 picks the 2-FP point: 1 bg of 2
    assert background_error_fraction(dets, [s1, s2], at_fppi=1.0) == pytest.approx(0.5)
    # cap below every positive-fppi point: lands on a zero-FP operating
    # point, where the fraction is undefined
    assert background_error_fraction(dets, [s1, s2], at_fppi=0.1) is None
    # at 1.5 the far2 detection joins: 2 bg of 3
    assert background_error_fraction(dets, [s1, s2], at_fppi=2.0) == pytest.approx(2 / 3)


def test_csv_writers(tmp_path):
    curve = EvalCurve(thresholds=(0.9, 0.5), points=((0.0, 0.5), (1.0, 0.25)),
                      mr2=0.3, n_gt=4, n_det=6, n_images=2)
    p = tmp_path / "curve.csv"
    write_curve_csv(p, curve)
    lines = p.read_text().splitlines()
    assert lines[0] == "threshold,fppi,miss"
    assert lines[1] == "0.9,0.0,0.5"
    p = tmp_path / "summary.csv"
    write_summary_csv(p, {"all": curve})
    assert p.read_text().splitlines()[1].startswith("all,0.3,4,6")
    p = tmp_path / "bg.csv"
    write_background_csv(p, [(1.0, 0.25), (0.1, None)])
    lines = p.read_text().splitlines()
    assert lines[1] == "1.0,0.25" and lines[2] == "0.1,n/a"
