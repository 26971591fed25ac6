"""Synthetic street-like scenes: bright striped "pedestrians" partially
hidden behind darker occluder rectangles, plus pole/bar clutter as hard
negatives, on a noisy background.

Layout and rendering are split so a dataset file stays small: a JSONL line
records the layout (boxes, tones, texture, noise level) and the image is a
pure function of that line.  Randomness is counter-based (Philox keyed by
seed and scene index), so any scene can be regenerated independently and
the whole dataset is byte-stable across runs and platforms.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box
from .tensor import Tensor

log = logging.getLogger("fcnet.synthdata")

IMAGE_SIZE = 96
PED_ASPECT = 0.41       # width / height, like standard pedestrian anchors
MIN_HEIGHT_PX = 10      # below this a box belongs to no occlusion subset

SUBSETS = ("reasonable", "partial", "heavy")


@dataclass(frozen=True)
class SceneObject:
    box: Box
    occlusion: float
    subset: str
    tone: float


@dataclass(frozen=True)
class Scene:
    seed: int
    index: int
    image: Tensor              # [1,96,96] in [0,1]
    objects: list[SceneObject]
    occluders: list[Box]
    layout: dict               # the JSONL record this scene renders from


@dataclass(frozen=True)
class DatasetSpec:
    scenes: int
    objects_min: int = 1
    objects_max: int = 3
    # Target share of objects per occlusion subset; drawn per object.
    subset_targets: dict = field(default_factory=lambda: {
        "reasonable": 0.45, "partial": 0.25, "heavy": 0.30})
    noise: float = 0.02
    texture_period: int = 4
    texture_contrast: float = 0.12
    clutter_max: int = 3

    def __post_init__(self):
        if self.scenes < 0 or self.objects_min < 1 or self.objects_max < self.objects_min:
            raise ValueError(f"bad counts in {self}")
        total = sum(self.subset_targets.get(s, 0.0) for s in SUBSETS)
        if not np.isclose(total, 1.0):
            raise ValueError(f"subset_targets must sum to 1, got {total}")
        if any(not 0.0 <= self.subset_targets.get(s, 0.0) < 1.0 + 1e-12 for s in SUBSETS):
            raise ValueError(f"subset_targets out of [0,1): {self.subset_targets}")

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**obj)


def subset_tag(fraction: float, height: int) -> str:
    """Partition tag stored per object.  Fractions at exactly 0.35 count as
    heavy; at or below 0.10 as reasonable; boxes at or under 10 px tall get
    no tag.
    """
    if height <= MIN_HEIGHT_PX:
        return "none"
    if fraction >= 0.35:
        return "heavy"
    if fraction > 0.10:
        return "partial"
    return "reasonable"


def subset_member(tag: str, subset: str) -> bool:
    """Membership of a tagged object in a named evaluation subset.

    "reasonable" spans every occlusion under 35%, so it includes objects
    tagged partial; "all" takes everything including untagged boxes.
    """
    if subset == "all":
        return True
    if subset == "reasonable":
        return tag in ("reasonable", "partial")
    if subset == "partial":
        return tag == "partial"
    if subset == "heavy":
        return tag == "heavy"
    if subset == "reasonable+heavy":
        return tag != "none"
    raise ValueError(f"unknown subset {subset!r}")


def occlusion_fraction(object_box: Box, occluders: list[Box]) -> float:
    """Covered pixels / object pixels, overlaps counted once (union)."""
    covered = np.zeros((object_box.h, object_box.w), dtype=bool)
    for occ in occluders:
        y0 = max(object_box.y0, occ.y0) - object_box.y0
        x0 = max(object_box.x0, occ.x0) - object_box.x0
        y1 = min(object_box.y1, occ.y1) - object_box.y0
        x1 = min(object_box.x1, occ.x1) - object_box.x0
        if y0 < y1 and x0 < x1:
            covered[y0:y1, x0:x1] = True
    return float(covered.sum()) / float(object_box.area)


def _layout_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, 2 * index]))


def _render_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, 2 * index + 1]))


def _place_object(rng: np.random.Generator, existing: list[Box]) -> Box | None:
    from .geometry import iou
    for _ in range(40):
        h = int(rng.integers(26, 55))
        aspect = float(rng.uniform(PED_ASPECT - 0.03, PED_ASPECT + 0.17))
        w = max(6, int(np.floor(aspect * h + 0.5)))
        y0 = int(rng.integers(2, IMAGE_SIZE - h - 1))
        x0 = int(rng.integers(2, IMAGE_SIZE - w - 1))
        box = Box(x0, y0, x0 + w, y0 + h)
        if all(iou(box, other) < 0.25 for other in existing):
            return box
    return None


def _occluder_for(rng: np.random.Generator, box: Box, target: float) -> Box:
    """One occluder hitting roughly the target fraction of the box, coming
    from below (usual street furniture) or from a side.  Heavy occlusion
    always comes from below so the head band stays visible; a heavily
    side-occluded sliver is unlearnable and would only add noise.
    """
    from_below = target >= 0.35 or rng.random() < 0.75
    if from_below:
        k = max(1, int(np.floor(target * box.h + 0.5)))
        ext = int(rng.integers(1, 5))
        drop = int(rng.integers(0, 7))
        return Box(max(0, box.x0 - ext), box.y1 - k,
                   min(IMAGE_SIZE, box.x1 + ext), min(IMAGE_SIZE, box.y1 + drop + 1))
    k = max(1, int(np.floor(target * box.w + 0.5)))
    ext = int(rng.integers(1, 5))
    from_left = rng.random() < 0.5
    y0 = max(0, box.y0 - ext)
    y1 = min(IMAGE_SIZE, box.y1 + ext)
    if from_left:
        return Box(max(0, box.x0 - int(rng.integers(0, 4))), y0, box.x0 + k, y1)
    return Box(box.x1 - k, y0, min(IMAGE_SIZE, box.x1 + int(rng.integers(0, 4))), y1)


def _place_clutter(rng: np.random.Generator, objects: list[Box]) -> Box | None:
    from .geometry import iou
    for _ in range(20):
        if rng.random() < 0.5:  # pole: too thin to be a pedestrian
            w = int(rng.integers(2, 5))
            h = int(rng.integers(30, 61))
        else:  # horizontal bar
            w = int(rng.integers(20, 41))
            h = int(rng.integers(3, 7))
        y0 = int(rng.integers(0, IMAGE_SIZE - h))
        x0 = int(rng.integers(0, IMAGE_SIZE - w))
        box = Box(x0, y0, x0 + w, y0 + h)
        if all(iou(box, obj) < 0.2 for obj in objects):
            return box
    return None


def layout_scene(spec: DatasetSpec, seed: int, index: int) -> dict:
    """Roll one scene's layout.  Pure function of (spec, seed, index)."""
    rng = _layout_rng(seed, index)
    n_objects = int(rng.integers(spec.objects_min, spec.objects_max + 1))
    names = list(SUBSETS)
    probs = np.array([spec.subset_targets.get(s, 0.0) for s in names])
    probs = probs / probs.sum()

    boxes: list[Box] = []
    tones: list[float] = []
    occluders: list[Box] = []
    occluder_tones: list[float] = []
    for _ in range(n_objects):
        box = _place_object(rng, boxes)
        if box is None:
            log.warning("scene %d: could not place object without overlap, skipping", index)
            continue
        boxes.append(box)
        tones.append(float(np.round(rng.uniform(0.75, 0.95), 6)))
        want = names[int(rng.choice(len(names), p=probs))]
        if want == "reasonable":
            if rng.random() < 0.5:
                continue  # fully visible
            target = float(rng.uniform(0.02, 0.08))
        elif want == "partial":
            target = float(rng.uniform(0.15, 0.30))
        else:
            target = float(rng.uniform(0.40, 0.62))
        occluders.append(_occluder_for(rng, box, target))
        occluder_tones.append(float(np.round(rng.uniform(0.25, 0.45), 6)))

    clutter = []
    for _ in range(int(rng.integers(0, spec.clutter_max + 1))):
        cbox = _place_clutter(rng, boxes)
        if cbox is not None:
            clutter.append({"box": cbox.as_list(),
                            "tone": float(np.round(rng.uniform(0.45, 0.8), 6))})

    objects = []
    for box, tone in zip(boxes, tones):
        occ = occlusion_fraction(box, occluders)
        objects.append({
            "box": box.as_list(),
            "occ": float(np.round(occ, 6)),
            "subset": subset_tag(occ, box.h),
            "tone": tone,
        })
    return {
        "seed": seed,
        "index": index,
        "noise": spec.noise,
        "texture": {"period": spec.texture_period, "contrast": spec.texture_contrast},
        "objects": objects,
        "occluders": [b.as_list() for b in occluders],
        "occluder_tones": occluder_tones,
        "clutter": clutter,
    }


def render_scene(layout: dict) -> Tensor:
    """Render the [1,96,96] image a layout describes."""
    period = int(layout["texture"]["period"])
    contrast = float(layout["texture"]["contrast"])
    img = np.full((IMAGE_SIZE, IMAGE_SIZE), 0.12)
    noise = float(layout["noise"])
    if noise > 0.0:
        rng = _render_rng(int(layout["seed"]), int(layout["index"]))
        img += rng.uniform(-noise, noise, size=img.shape)

    for item in layout.get("clutter", []):
        b = Box.from_list(item["box"])
        img[b.y0:b.y1, b.x0:b.x1] = item["tone"]

    for obj in layout["objects"]:
        b = Box.from_list(obj["box"])
        tone = float(obj["tone"])
        rows = np.arange(b.y0, b.y1)
        stripe = np.where((rows // period) % 2 == 0, tone, tone - contrast)
        img[b.y0:b.y1, b.x0:b.x1] = stripe[:, None]
        # head blob: brighter, narrower block on top
        head_h = max(2, b.h // 6)
        inset = max(1, b.w // 5)
        img[b.y0:b.y0 + head_h, b.x0 + inset:b.x1 - inset] = min(1.0, tone + 0.05)

    tones = layout.get("occluder_tones", [])
    for i, blist in enumerate(layout["occluders"]):
        b = Box.from_list(blist)
        tone = float(tones[i]) if i < len(tones) else 0.35
        cols = np.arange(b.x0, b.x1)
        stripe = np.where((cols // period) % 2 == 0, tone, tone - 0.6 * contrast)
        img[b.y0:b.y1, b.x0:b.x1] = stripe[None, :]

    return np.clip(img, 0.0, 1.0)[None, :, :]


def scene_from_layout(layout: dict) -> Scene:
    objects = [SceneObject(box=Box.from_list(o["box"]), occlusion=float(o["occ"]),
                           subset=str(o["subset"]), tone=float(o["tone"]))
               for o in layout["objects"]]
    return Scene(seed=int(layout["seed"]), index=int(layout["index"]),
                 image=render_scene(layout),
                 objects=objects,
                 occluders=[Box.from_list(b) for b in layout["occluders"]],
                 layout=layout)


def generate(spec: DatasetSpec, seed: int) -> list[Scene]:
    return [scene_from_layout(layout_scene(spec, seed, index))
            for index in range(spec.scenes)]


def save_dataset(path, scenes: list[Scene]) -> None:
    with open(path, "w", encoding="ascii") as f:
        for scene in scenes:
            f.write(json.dumps(scene.layout, sort_keys=True, separators=(",", ":")))
            f.write("\n")


def load_dataset(path) -> list[Scene]:
    scenes = []
    with open(path, "r", encoding="ascii") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                layout = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad JSON: {e}") from e
            scenes.append(scene_from_layout(layout))
    return scenes


def write_image_pgm(path, image: Tensor) -> None:
    from .activation import write_pgm
    write_pgm(path, np.asarray(image)[0])
