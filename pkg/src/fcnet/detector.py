"""Toy two-stage pedestrian detector: two conv/pool blocks, activation-map
calibration of the features, per-proposal RoI pooling (plain or region
calibrated), GAP, and a two-class linear head.

There is no autograd; loss_and_grads walks the cached forward intermediates
backward by hand.  The classifier's pedestrian weight row doubles as the
activation-map weights, closing the X -> W -> A -> X-hat loop: each
iteration's weights calibrate the next iteration's features.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .activation import ActivationMap, self_activation_map, self_activation_bwd
from .calibration import (CalibrationRegions, find_calibration_regions,
                          pixel_calibrate_bwd, pixel_calibrate_fwd,
                          region_calibrate_bwd, region_calibrate_fwd,
                          roi_pool_masked, roi_pool_masked_bwd, round_half_up)
from .geometry import Box, iou
from .synthdata import Scene
from .tensor import (Tensor, conv2d_bwd, conv2d_fwd, gap_bwd, gap_fwd,
                     linear_bwd, linear_fwd, read_fct1, relu_bwd, relu_fwd,
                     softmax_xent_bwd, write_fct1)

log = logging.getLogger("fcnet.detector")

FEAT_STRIDE = 4   # two 2x2 pool layers
ROI_SIZE = 6
N_CHANNELS = 16
PED_CLASS = 1     # classifier row 0 = background, row 1 = pedestrian

# Sliding-window grid for inference: 3 scales x 2 aspect ratios, stride
# matching the feature grid so every RoI alignment gets scored.  Adjacent
# scales stay within a 1.39 linear ratio so concentric windows of
# neighboring scales overlap above the NMS threshold (duplicates collapse).
WINDOW_HEIGHTS = (26, 36, 50)
WINDOW_ASPECTS = (0.41, 0.55)
WINDOW_STRIDE = 4
SCORE_THRESH = 0.05
# Windows one stride step off a pedestrian overlap it below 0.5, so 0.5
# keeps grazing duplicates alive; 0.35 removes them.
NMS_IOU = 0.35

PARAM_FIELDS = ("conv1_k", "conv1_b", "conv2_k", "conv2_b", "fc_w", "fc_b")


@dataclass
class ModelParams:
    conv1_k: Tensor
    conv1_b: Tensor
    conv2_k: Tensor
    conv2_b: Tensor
    fc_w: Tensor
    fc_b: Tensor

    def copy(self) -> "ModelParams":
        return ModelParams(**{f: getattr(self, f).copy() for f in PARAM_FIELDS})


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    pixel: bool = False
    region: bool = False
    r_h: float = 1.8
    r_w: float = 1.0
    proposals_per_iter: int = 16
    positive_fraction: float = 0.25
    grad_through_A: bool = False
    pool: str = "max"

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError(f"positive_fraction must be in (0,1), got {self.positive_fraction}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float


@dataclass
class ProposalCache:
    index: int
    grid_box: Box
    regions: CalibrationRegions | None
    pooled: Tensor
    z: Tensor
    logits: Tensor
    probs: Tensor


@dataclass
class ForwardCache:
    image: Tensor
    conv1_out: Tensor
    pool1_idx: Tensor
    pool1_out: Tensor
    conv2_out: Tensor
    pool2_idx: Tensor
    features: Tensor
    amap: ActivationMap
    feat_cal: Tensor
    proposals: list[ProposalCache]
    scores: list[float | None]   # aligned with the input proposal list


def init_params(rng: np.random.Generator) -> ModelParams:
    return ModelParams(
        conv1_k=rng.normal(0.0, np.sqrt(2.0 / 9.0), (8, 1, 3, 3)),
        conv1_b=np.zeros(8),
        conv2_k=rng.normal(0.0, np.sqrt(2.0 / 72.0), (16, 8, 3, 3)),
        conv2_b=np.zeros(16),
        fc_w=rng.normal(0.0, 0.1, (2, N_CHANNELS)),
        fc_b=np.zeros(2),
    )


def image_box_to_grid(box: Box, m: int, n: int) -> Box | None:
    """Image-pixel box to feature-grid box: floor the start, ceil the end
    (round outward so thin boxes keep at least the cells they touch), then
    clip to the grid.  None if nothing is left.
    """
    gy0 = max(0, box.y0 // FEAT_STRIDE)
    gx0 = max(0, box.x0 // FEAT_STRIDE)
    gy1 = min(m, -(-box.y1 // FEAT_STRIDE))
    gx1 = min(n, -(-box.x1 // FEAT_STRIDE))
    if gy0 >= gy1 or gx0 >= gx1:
        return None
    return Box(gx0, gy0, gx1, gy1)


def forward_image(params: ModelParams, image: Tensor, proposals: list[Box],
                  cfg: TrainConfig, amap_override: ActivationMap | None = None) -> ForwardCache:
    """Run the backbone once, then score every proposal.

    The activation map comes from the current pedestrian classifier row
    unless amap_override pins it (the gradient checker uses that to hold A
    constant).  Proposals that map to an empty grid box are skipped: their
    score slot stays None.
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 1:
        raise ValueError(f"image must be [1,H,W], got {img.shape}")
    conv1_out = conv2d_fwd(img, params.conv1_k, params.conv1_b)
    pool1_out, pool1_idx = _kernels.maxpool2_fwd(relu_fwd(conv1_out))
    conv2_out = conv2d_fwd(pool1_out, params.conv2_k, params.conv2_b)
    features, pool2_idx = _kernels.maxpool2_fwd(relu_fwd(conv2_out))

    amap = amap_override if amap_override is not None else \
        self_activation_map(features, params.fc_w[PED_CLASS])
    feat_cal = pixel_calibrate_fwd(features, amap) if cfg.pixel else features

    m, n = features.shape[1:]
    caches: list[ProposalCache] = []
    scores: list[float | None] = [None] * len(proposals)
    for i, box in enumerate(proposals):
        grid_box = image_box_to_grid(box, m, n)
        if grid_box is None:
            log.warning("proposal %s maps to an empty %dx%d grid box, skipping", box, m, n)
            continue
        if cfg.region:
            regions = find_calibration_regions(amap, grid_box, cfg.r_h, cfg.r_w)
            pooled = region_calibrate_fwd(feat_cal, regions, ROI_SIZE, cfg.pool)
        else:
            regions = None
            pooled = roi_pool_masked(feat_cal, grid_box, None, ROI_SIZE, cfg.pool)
        z = gap_fwd(pooled)
        logits = linear_fwd(z, params.fc_w, params.fc_b)
        shifted = logits - logits.max()
        e = np.exp(shifted)
        probs = e / e.sum()
        caches.append(ProposalCache(index=i, grid_box=grid_box, regions=regions,
                                    pooled=pooled, z=z, logits=logits, probs=probs))
        scores[i] = float(probs[PED_CLASS])
    return ForwardCache(image=img, conv1_out=conv1_out, pool1_idx=pool1_idx,
                        pool1_out=pool1_out, conv2_out=conv2_out, pool2_idx=pool2_idx,
                        features=features, amap=amap, feat_cal=feat_cal,
                        proposals=caches, scores=scores)


def _zero_grads(params: ModelParams) -> dict[str, Tensor]:
    return {f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS}


def loss_and_grads(params: ModelParams, cache: ForwardCache, labels: list[int],
                   cfg: TrainConfig) -> tuple[float, dict[str, Tensor]]:
    """Mean cross-entropy over the scored proposals and its gradient for
    every parameter, walking the cached forward graph backward.
    """
    kept = cache.proposals
    if not kept:
        raise ValueError("no scored proposals to compute a loss on")
    grads = _zero_grads(params)
    d_feat_cal = np.zeros_like(cache.feat_cal)
    n = len(kept)
    loss = 0.0
    for pc in kept:
        label = labels[pc.index]
        loss += -float(np.log(pc.probs[label]))
        d_logits = softmax_xent_bwd(pc.probs, label) / n
        lin = linear_bwd(pc.z, params.fc_w, d_logits)
        grads["fc_w"] += lin.d_params[0]
        grads["fc_b"] += lin.d_params[1]
        d_pooled = gap_bwd(pc.pooled, lin.d_input)
        if cfg.region:
            d_feat_cal += region_calibrate_bwd(cache.feat_cal, pc.regions,
                                               ROI_SIZE, d_pooled, cfg.pool)
        else:
            d_feat_cal += roi_pool_masked_bwd(cache.feat_cal, pc.grid_box, None,
                                              ROI_SIZE, d_pooled, cfg.pool)
    loss /= n

    if cfg.pixel:
        d_features, d_raw = pixel_calibrate_bwd(cache.features, cache.amap,
                                                d_feat_cal, cfg.grad_through_A)
        if d_raw is not None:
            d_y, d_w = self_activation_bwd(cache.features, params.fc_w[PED_CLASS], d_raw)
            d_features = d_features + d_y
            grads["fc_w"][PED_CLASS] += d_w
    else:
        d_features = d_feat_cal

    h1, w1 = cache.conv1_out.shape[1:]
    h2, w2 = cache.conv2_out.shape[1:]
    d_relu2 = _kernels.maxpool2_bwd(cache.pool2_idx, d_features, h2, w2)
    d_conv2 = relu_bwd(cache.conv2_out, d_relu2)
    g2 = conv2d_bwd(cache.pool1_out, params.conv2_k, d_conv2)
    grads["conv2_k"] += g2.d_params[0]
    grads["conv2_b"] += g2.d_params[1]
    d_relu1 = _kernels.maxpool2_bwd(cache.pool1_idx, g2.d_input, h1, w1)
    d_conv1 = relu_bwd(cache.conv1_out, d_relu1)
    g1 = conv2d_bwd(cache.image, params.conv1_k, d_conv1)
    grads["conv1_k"] += g1.d_params[0]
    grads["conv1_b"] += g1.d_params[1]
    return loss, grads


def _jitter_positive(rng: np.random.Generator, gt: Box, width: int, height: int) -> Box:
    for _ in range(20):
        dx = int(rng.integers(-max(1, gt.w // 4), max(1, gt.w // 4) + 1))
        dy = int(rng.integers(-max(1, gt.h // 4), max(1, gt.h // 4) + 1))
        sw = float(rng.uniform(0.85, 1.18))
        sh = float(rng.uniform(0.85, 1.18))
        w = max(6, round_half_up(gt.w * sw))
        h = max(8, round_half_up(gt.h * sh))
        x0 = max(0, min(width - w, gt.x0 + dx))
        y0 = max(0, min(height - h, gt.y0 + dy))
        if x0 + w > width or y0 + h > height:
            continue
        cand = Box(x0, y0, x0 + w, y0 + h)
        if iou(cand, gt) >= 0.5:
            return cand
    return gt


def _sample_negative(rng: np.random.Generator, gt_boxes: list[Box],
                     width: int, height: int,
                     clutter_boxes: list[Box] | None = None) -> Box:
    """Negatives mix offset copies of ground truth (the band a sliding
    window grazes a pedestrian in), rescaled copies, windows planted on
    clutter (poles score like pedestrians unless trained against), and
    random boxes, all capped at IoU < 0.3 against every GT.
    """
    clutter_boxes = clutter_boxes or []
    best = None
    best_iou = 2.0
    for _ in range(30):
        kind = rng.random()
        if clutter_boxes and kind < 0.25:
            # pedestrian-shaped window centred on a clutter item
            src = clutter_boxes[int(rng.integers(len(clutter_boxes)))]
            h = int(rng.integers(24, 53))
            w = max(6, round_half_up(h * float(rng.uniform(0.38, 0.58))))
            cy = (src.y0 + src.y1) // 2 + int(rng.integers(-4, 5))
            cx = (src.x0 + src.x1) // 2 + int(rng.integers(-4, 5))
            x0 = max(0, min(width - w, cx - w // 2))
            y0 = max(0, min(height - h, cy - h // 2))
        elif gt_boxes and kind < 0.6:
            # offset a GT box by 40..100% of its own size
            src = gt_boxes[int(rng.integers(len(gt_boxes)))]
            w, h = src.w, src.h
            dx = int(round(w * float(rng.uniform(0.4, 1.0)))) * (1 if rng.random() < 0.5 else -1)
            dy = int(round(h * float(rng.uniform(0.4, 1.0)))) * (1 if rng.random() < 0.5 else -1)
            if rng.random() < 0.5:
                dy = int(rng.integers(-3, 4))  # purely sideways graze
            x0 = max(0, min(width - w, src.x0 + dx))
            y0 = max(0, min(height - h, src.y0 + dy))
        elif gt_boxes and kind < 0.75:
            # concentric but badly scaled copy
            src = gt_boxes[int(rng.integers(len(gt_boxes)))]
            s = float(rng.choice([0.45, 0.55, 1.9, 2.2]))
            w = max(6, min(width, round_half_up(src.w * s)))
            h = max(8, min(height, round_half_up(src.h * s)))
            cy, cx = (src.y0 + src.y1) // 2, (src.x0 + src.x1) // 2
            x0 = max(0, min(width - w, cx - w // 2))
            y0 = max(0, min(height - h, cy - h // 2))
        else:
            h = int(rng.integers(16, 57))
            w = int(rng.integers(8, 41))
            if h >= height or w >= width:
                continue
            y0 = int(rng.integers(0, height - h + 1))
            x0 = int(rng.integers(0, width - w + 1))
        cand = Box(x0, y0, x0 + w, y0 + h)
        worst = max((iou(cand, gt) for gt in gt_boxes), default=0.0)
        if worst < 0.3:
            return cand
        if worst < best_iou:
            best, best_iou = cand, worst
    return best  # closest thing to a negative this scene offers


def sample_proposals(scene: Scene, rng: np.random.Generator,
                     cfg: TrainConfig) -> tuple[list[Box], list[int]]:
    """B training proposals: jittered ground truth (IoU >= 0.5) as
    positives, random or offset boxes (IoU < 0.3) as negatives.
    """
    if not scene.objects:
        raise ValueError("scene has no objects to sample positives from")
    height, width = scene.image.shape[1:]
    gt_boxes = [o.box for o in scene.objects]
    clutter = [Box.from_list(c["box"]) for c in scene.layout.get("clutter", [])]
    n_pos = max(1, round_half_up(cfg.proposals_per_iter * cfg.positive_fraction))
    proposals: list[Box] = []
    labels: list[int] = []
    for _ in range(n_pos):
        gt = gt_boxes[int(rng.integers(len(gt_boxes)))]
        proposals.append(_jitter_positive(rng, gt, width, height))
        labels.append(1)
    for _ in range(cfg.proposals_per_iter - n_pos):
        proposals.append(_sample_negative(rng, gt_boxes, width, height, clutter))
        labels.append(0)
    return proposals, labels


def sgd_step(params: ModelParams, grads: dict[str, Tensor],
             velocity: dict[str, Tensor], cfg: TrainConfig) -> None:
    for name in PARAM_FIELDS:
        p = getattr(params, name)
        g = grads[name] + cfg.weight_decay * p
        velocity[name] = cfg.momentum * velocity[name] + g
        p -= cfg.lr * velocity[name]


def train(dataset: list[Scene], cfg: TrainConfig,
          params: ModelParams | None = None) -> tuple[ModelParams, list[float]]:
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(rng)
    velocity = {f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS}
    history: list[float] = []
    for it in range(cfg.iterations):
        scene = None
        for _ in range(100):
            cand = dataset[int(rng.integers(len(dataset)))]
            if cand.objects:
                scene = cand
                break
        if scene is None:
            raise ValueError("no scene with objects found in 100 draws")
        proposals, labels = sample_proposals(scene, rng, cfg)
        cache = forward_image(params, scene.image, proposals, cfg)
        loss, grads = loss_and_grads(params, cache, labels, cfg)
        sgd_step(params, grads, velocity, cfg)
        history.append(loss)
        if (it + 1) % 100 == 0:
            log.info("iter %d/%d loss %.4f", it + 1, cfg.iterations, loss)
    return params, history


def sliding_windows(height: int, width: int) -> list[Box]:
    windows = []
    for h in WINDOW_HEIGHTS:
        for aspect in WINDOW_ASPECTS:
            w = max(6, round_half_up(aspect * h))
            if h > height or w > width:
                continue
            for y0 in range(0, height - h + 1, WINDOW_STRIDE):
                for x0 in range(0, width - w + 1, WINDOW_STRIDE):
                    windows.append(Box(x0, y0, x0 + w, y0 + h))
    return windows


def nms(detections: list[Detection], iou_thresh: float = NMS_IOU) -> list[Detection]:
    """Greedy: highest score first, row-major box order on ties."""
    pending = sorted(detections, key=lambda d: (-d.score, d.box.y0, d.box.x0,
                                                d.box.y1, d.box.x1))
    kept: list[Detection] = []
    for det in pending:
        if all(iou(det.box, k.box) < iou_thresh for k in kept):
            kept.append(det)
    return kept


def infer(params: ModelParams, image: Tensor, cfg: TrainConfig,
          score_thresh: float = SCORE_THRESH, nms_iou: float = NMS_IOU) -> list[Detection]:
    height, width = np.asarray(image).shape[1:]
    windows = sliding_windows(height, width)
    cache = forward_image(params, image, windows, cfg)
    dets = [Detection(box=w, score=s) for w, s in zip(windows, cache.scores)
            if s is not None and s > score_thresh]
    return nms(dets, nms_iou)


def save_checkpoint(path, params: ModelParams, cfg: TrainConfig, iteration: int) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format": "FCT1",
        "iteration": iteration,
        "cfg": cfg.to_dict(),
        "params": [{"name": f, "shape": list(getattr(params, f).shape)}
                   for f in PARAM_FIELDS],
    }
    for f in PARAM_FIELDS:
        write_fct1(os.path.join(path, f + ".fct1"), getattr(params, f))
    with open(os.path.join(path, "manifest.json"), "w", encoding="ascii") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig, int]:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path, "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    names = [entry["name"] for entry in manifest["params"]]
    if names != list(PARAM_FIELDS):
        raise ValueError(f"manifest parameter list {names} != {list(PARAM_FIELDS)}")
    tensors = {}
    for entry in manifest["params"]:
        arr = read_fct1(os.path.join(path, entry["name"] + ".fct1"))
        if list(arr.shape) != entry["shape"]:
            raise ValueError(f"{entry['name']}: file shape {list(arr.shape)} != "
                             f"manifest shape {entry['shape']}")
        tensors[entry["name"]] = arr
    cfg = TrainConfig.from_dict(manifest["cfg"])
    return ModelParams(**tensors), cfg, int(manifest["iteration"])
