"""Synthetic relational-shapes dataset and the VG-style annotation loader.

Scenes are deterministic functions of (spec, seed): colored shapes placed on
an integer pixel grid, with relations recomputed from box geometry by the
predicate definitions in `predicate_holds`. Entity boxes live on the pixel
grid so normalized center-size coordinates, pixel corners, and the JSON
round trip are all exact in float64 (image sides are powers of two in the
default config; 2-adic halves survive the conversions bit-for-bit).

Held-out label triples support zero-shot evaluation: the train split retries
generation until none of its scenes emit a held-out combination, while the
test split forces its last scene to contain at least one.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .graphs import Box, GroundTruthGraph, Triplet
from .tensor import rng

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue")
PREDICATES = ("left-of", "right-of", "above", "below", "inside", "larger-than")

# RGB fill per color name; background is a flat gray
COLOR_VALUES = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.15, 0.25, 0.90),
}
BACKGROUND = 0.10

CENTER_GAP = 0.05          # min center offset for the directional predicates
LARGER_RATIO = 1.5         # area ratio for larger-than
SMALL_PX = (8, 20)         # inclusive pixel size ranges for entity boxes
BIG_PX = (24, 40)
BIG_PROB = 0.3

DEFAULT_HELD_OUT = frozenset({
    (0, 0, 4),    # red-circle left-of green-square
    (7, 3, 2),    # green-triangle below blue-circle
    (5, 5, 9),    # blue-square larger-than red-cross
})


class GenerationError(RuntimeError):
    """Scene constraints unsatisfiable within the retry budget."""


class AnnotationError(ValueError):
    """Annotation file malformed or inconsistent with the vocabulary."""


def entity_class_names() -> list[str]:
    return [f"{color}-{shape}" for shape in SHAPES for color in COLORS]


@dataclass(frozen=True)
class SyntheticSpec:
    """World definition for the generator; all scenes derive from it + a seed."""

    n_entity_classes: int = len(SHAPES) * len(COLORS)
    n_predicate_classes: int = len(PREDICATES)
    image_size: int = 64
    min_entities: int = 2
    max_entities: int = 5
    max_triplets: int = 12
    seed: int = 0
    held_out: frozenset[tuple[int, int, int]] = DEFAULT_HELD_OUT
    skewed_predicates: bool = False
    max_retries: int = 256

    def __post_init__(self):
        if self.n_entity_classes < 1 or self.n_predicate_classes < 1:
            raise ValueError("vocabularies must be non-empty")
        if self.n_entity_classes > len(SHAPES) * len(COLORS):
            raise ValueError(
                f"at most {len(SHAPES) * len(COLORS)} entity classes available")
        if self.n_predicate_classes > len(PREDICATES):
            raise ValueError(f"at most {len(PREDICATES)} predicate classes available")
        if not (1 <= self.min_entities <= self.max_entities):
            raise ValueError("bad entity count range")


def predicate_holds(pred: int, s: Box, o: Box) -> bool:
    """Geometric truth of predicate `pred` for subject s and object o.

    Definitions (normalized coordinates, y grows downward):
      left-of / right-of: center x offset beyond CENTER_GAP
      above / below:      center y offset beyond CENTER_GAP
      inside:             s's corners within o's, s strictly smaller
      larger-than:        area(s) > LARGER_RATIO * area(o)
    """
    if not 0 <= pred < len(PREDICATES):
        raise ValueError(f"unknown predicate id {pred}")
    name = PREDICATES[pred]
    if name == "left-of":
        return o.cx - s.cx > CENTER_GAP
    if name == "right-of":
        return s.cx - o.cx > CENTER_GAP
    if name == "above":
        return o.cy - s.cy > CENTER_GAP
    if name == "below":
        return s.cy - o.cy > CENTER_GAP
    if name == "inside":
        sx1, sy1, sx2, sy2 = s.corners()
        ox1, oy1, ox2, oy2 = o.corners()
        return (sx1 >= ox1 and sy1 >= oy1 and sx2 <= ox2 and sy2 <= oy2
                and s.area < o.area)
    if name == "larger-than":
        return s.area > LARGER_RATIO * o.area
    raise ValueError(f"unknown predicate id {pred}")


@dataclass
class Scene:
    image_id: int
    width: int
    height: int
    graph: GroundTruthGraph
    image: np.ndarray | None = None    # (3, H, W) float32, or regenerable
    file: str | None = None


@dataclass
class DatasetSplit:
    """Named scene partition plus the train-side predicate frequency table."""

    name: str
    scenes: list[Scene]
    predicate_freqs: np.ndarray
    n_entity_classes: int
    n_predicate_classes: int
    n_clamped: int = 0

    def graphs(self) -> list[GroundTruthGraph]:
        return [s.graph for s in self.scenes]

    def label_triples(self) -> set[tuple[int, int, int]]:
        return {t.label_triple() for s in self.scenes for t in s.graph.triplets}

    def n_triplets(self) -> int:
        return sum(s.graph.m for s in self.scenes)


# -- generation ----------------------------------------------------------


def _shape_mask(shape: str, h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) + 0.5)[:, None] / h  # pixel centers in [0,1] box coords
    xs = (np.arange(w) + 0.5)[None, :] / w
    if shape == "square":
        return np.ones((h, w), dtype=bool)
    if shape == "circle":
        return (2 * xs - 1) ** 2 + (2 * ys - 1) ** 2 <= 1.0
    if shape == "triangle":  # apex top-center, base at the bottom
        return np.abs(2 * xs - 1) <= ys
    if shape == "cross":
        return (np.abs(2 * xs - 1) <= 1 / 3) | (np.abs(2 * ys - 1) <= 1 / 3)
    raise ValueError(f"unknown shape {shape!r}")


def _render(entities: list[tuple[int, tuple[int, int, int, int]]],
            size: int) -> np.ndarray:
    img = np.full((3, size, size), BACKGROUND, dtype=np.float32)
    for class_id, (x1, y1, x2, y2) in entities:
        shape = SHAPES[class_id // len(COLORS)]
        color = COLOR_VALUES[COLORS[class_id % len(COLORS)]]
        mask = _shape_mask(shape, y2 - y1, x2 - x1)
        for c in range(3):
            channel = img[c, y1:y2, x1:x2]
            channel[mask] = color[c]
    return img


def _attempt_scene(spec: SyntheticSpec, attempt_rng) -> tuple[
        list[tuple[int, tuple[int, int, int, int]]], list[tuple[int, int, int]]]:
    """One unconstrained draw: entity list and capped relation triples."""
    size = spec.image_size
    n_ent = int(attempt_rng.integers(spec.min_entities, spec.max_entities + 1))
    entities = []
    for _ in range(n_ent):
        class_id = int(attempt_rng.integers(0, spec.n_entity_classes))
        lo, hi = BIG_PX if attempt_rng.random() < BIG_PROB else SMALL_PX
        w = int(attempt_rng.integers(lo, hi + 1))
        h = int(attempt_rng.integers(lo, hi + 1))
        x1 = int(attempt_rng.integers(0, size - w + 1))
        y1 = int(attempt_rng.integers(0, size - h + 1))
        entities.append((class_id, (x1, y1, x1 + w, y1 + h)))

    boxes = [_pixel_box(px, size) for _, px in entities]
    candidates = []  # (subject entity, predicate, object entity)
    for i in range(n_ent):
        for j in range(n_ent):
            if i == j:
                continue
            for p in range(spec.n_predicate_classes):
                if predicate_holds(p, boxes[i], boxes[j]):
                    candidates.append((i, p, j))

    if len(candidates) > spec.max_triplets:
        if spec.skewed_predicates:
            # geometric tail over predicate ids; rare ids rarely survive the cap
            weights = np.array([0.5 ** p for _, p, _ in candidates])
            probs = weights / weights.sum()
        else:
            probs = None
        keep = attempt_rng.choice(len(candidates), size=spec.max_triplets,
                                  replace=False, p=probs)
        candidates = [candidates[i] for i in sorted(keep)]
    return entities, candidates


def _pixel_box(px: tuple[int, int, int, int], size: int) -> Box:
    x1, y1, x2, y2 = px
    return Box(cx=(x1 + x2) / 2 / size, cy=(y1 + y2) / 2 / size,
               w=(x2 - x1) / size, h=(y2 - y1) / size)


def generate_scene(spec: SyntheticSpec, seed,
                   forbidden: frozenset[tuple[int, int, int]] = frozenset(),
                   require_one_of: frozenset[tuple[int, int, int]] = frozenset(),
                   ) -> tuple[np.ndarray, GroundTruthGraph]:
    """Deterministic scene draw honoring emit-set constraints.

    Retries fresh sub-seeded draws until the emitted label triples avoid
    `forbidden`, intersect `require_one_of` (when non-empty), and number at
    least one; raises GenerationError when the retry budget runs out.
    """
    seed_tuple = seed if isinstance(seed, tuple) else (seed,)
    for attempt in range(spec.max_retries):
        attempt_rng = rng((*seed_tuple, attempt))
        entities, candidates = _attempt_scene(spec, attempt_rng)
        boxes = [_pixel_box(px, spec.image_size) for _, px in entities]
        combos = {(entities[i][0], p, entities[j][0]) for i, p, j in candidates}
        if not candidates or combos & forbidden:
            continue
        if require_one_of and not combos & require_one_of:
            continue
        triplets = [Triplet.make(subject_label=entities[i][0],
                                 subject_box=boxes[i],
                                 predicate_label=p,
                                 object_label=entities[j][0],
                                 object_box=boxes[j])
                    for i, p, j in candidates]
        return _render(entities, spec.image_size), GroundTruthGraph(triplets)
    raise GenerationError(
        f"no admissible scene for seed {seed} in {spec.max_retries} attempts "
        f"(forbidden={len(forbidden)}, required={len(require_one_of)})")


def build_splits(spec: SyntheticSpec, n_train: int, n_test: int
                 ) -> tuple[DatasetSplit, DatasetSplit]:
    """Disjointly seeded train/test splits.

    Train scenes never emit held-out triples; the last test scene is forced to
    contain one so zero-shot recall always has a denominator. Predicate
    frequencies come from the train split and are attached to both.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one scene per split")
    train_scenes = []
    for i in range(n_train):
        img, graph = generate_scene(spec, (spec.seed, 0, i),
                                    forbidden=spec.held_out)
        train_scenes.append(Scene(image_id=i, width=spec.image_size,
                                  height=spec.image_size, graph=graph, image=img))
    test_scenes = []
    for i in range(n_test):
        require = spec.held_out if i == n_test - 1 else frozenset()
        img, graph = generate_scene(spec, (spec.seed, 1, i),
                                    require_one_of=require)
        test_scenes.append(Scene(image_id=i, width=spec.image_size,
                                 height=spec.image_size, graph=graph, image=img))

    counts = np.zeros(spec.n_predicate_classes, dtype=np.int64)
    for s in train_scenes:
        for t in s.graph.triplets:
            counts[t.predicate_label] += 1
    freqs = counts / counts.sum()

    train = DatasetSplit("train", train_scenes, freqs,
                         spec.n_entity_classes, spec.n_predicate_classes)
    test = DatasetSplit("test", test_scenes, freqs.copy(),
                        spec.n_entity_classes, spec.n_predicate_classes)
    return train, test


# -- annotation interchange ---------------------------------------------
#
# Schema (JSON, one document per split):
#   {
#     "entity_classes": int, "predicate_classes": int,
#     "images": [
#       {"id": int, "width": int, "height": int, "file": str | null,
#        "triplets": [
#          {"subject": {"label": int, "box": [x1, y1, x2, y2]},
#           "predicate": int,
#           "object": {"label": int, "box": [x1, y1, x2, y2]}}, ...]}
#     ]
#   }
# Boxes are pixel corners (x right, y down, corners within [0, W] x [0, H]);
# normalized center-size form is derived on load and the predicate GT box is
# always the subject/object union, so neither appears in the schema.


def _corners_px(box: Box, width: int, height: int) -> list[float]:
    x1, y1, x2, y2 = box.corners()
    return [x1 * width, y1 * height, x2 * width, y2 * height]


def save_annotations(split: DatasetSplit, path: str,
                     image_container: str | None = None) -> None:
    """Write the split in the JSON schema above.

    With image_container set, scene images are stored as float32 tensors in
    one checkpoint-format container at that path and each image's "file"
    field points to its basename.
    """
    doc = {"entity_classes": split.n_entity_classes,
           "predicate_classes": split.n_predicate_classes,
           "images": []}
    container: dict[str, np.ndarray] = {}
    for s in split.scenes:
        file_ref = None
        if image_container is not None and s.image is not None:
            container[f"image_{s.image_id:05d}"] = s.image
            file_ref = os.path.basename(image_container)
        doc["images"].append({
            "id": s.image_id, "width": s.width, "height": s.height,
            "file": file_ref,
            "triplets": [
                {"subject": {"label": t.subject_label,
                             "box": _corners_px(t.subject_box, s.width, s.height)},
                 "predicate": t.predicate_label,
                 "object": {"label": t.object_label,
                            "box": _corners_px(t.object_box, s.width, s.height)}}
                for t in s.graph.triplets],
        })
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    if image_container is not None and container:
        checkpoint.save_checkpoint(image_container, container,
                                   meta={"split": split.name,
                                         "images": len(container)})


def _require(mapping, key, where: str):
    if not isinstance(mapping, dict) or key not in mapping:
        raise AnnotationError(f"{where}: missing key {key!r}")
    return mapping[key]


def load_annotations(path: str,
                     n_entity_classes: int | None = None,
                     n_predicate_classes: int | None = None) -> DatasetSplit:
    """Read a split from the JSON schema; see the schema comment above.

    Boxes are normalized to [0,1] center-size form. Corners outside the image
    are clamped and counted in the returned split's n_clamped; boxes with no
    extent left after clamping are rejected. Label ids outside the (declared
    or overridden) vocabularies raise AnnotationError naming the id.
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationError(
            f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e

    n_ent = n_entity_classes or _require(doc, "entity_classes", path)
    n_pred = n_predicate_classes or _require(doc, "predicate_classes", path)
    images = _require(doc, "images", path)
    scenes: list[Scene] = []
    n_clamped = 0
    containers: dict[str, dict[str, np.ndarray]] = {}

    for i, entry in enumerate(images):
        where = f"{path}: images[{i}]"
        width = _require(entry, "width", where)
        height = _require(entry, "height", where)
        image_id = _require(entry, "id", where)
        triplets = []
        for j, t in enumerate(_require(entry, "triplets", where)):
            twhere = f"{where}.triplets[{j}]"
            parts = {}
            for role in ("subject", "object"):
                node = _require(t, role, twhere)
                label = _require(node, "label", f"{twhere}.{role}")
                if not (0 <= label < n_ent):
                    raise AnnotationError(
                        f"{twhere}.{role}: label id {label} outside "
                        f"{n_ent}-class entity vocabulary")
                corners = _require(node, "box", f"{twhere}.{role}")
                if len(corners) != 4:
                    raise AnnotationError(f"{twhere}.{role}: box needs 4 corners")
                x1, y1, x2, y2 = (float(v) for v in corners)
                cx1 = min(max(x1, 0.0), width)
                cy1 = min(max(y1, 0.0), height)
                cx2 = min(max(x2, 0.0), width)
                cy2 = min(max(y2, 0.0), height)
                if (cx1, cy1, cx2, cy2) != (x1, y1, x2, y2):
                    n_clamped += 1
                if cx2 <= cx1 or cy2 <= cy1:
                    raise AnnotationError(
                        f"{twhere}.{role}: box {corners} has no extent inside "
                        f"the {width}x{height} image")
                parts[role] = (label, Box(cx=(cx1 + cx2) / 2 / width,
                                          cy=(cy1 + cy2) / 2 / height,
                                          w=(cx2 - cx1) / width,
                                          h=(cy2 - cy1) / height))
            pred = _require(t, "predicate", twhere)
            if not (0 <= pred < n_pred):
                raise AnnotationError(
                    f"{twhere}: predicate id {pred} outside {n_pred}-class "
                    f"predicate vocabulary")
            triplets.append(Triplet.make(
                subject_label=parts["subject"][0], subject_box=parts["subject"][1],
                predicate_label=pred,
                object_label=parts["object"][0], object_box=parts["object"][1]))

        image = None
        file_ref = entry.get("file")
        if file_ref:
            container_path = os.path.join(os.path.dirname(path) or ".", file_ref)
            if os.path.exists(container_path):
                if container_path not in containers:
                    arrays, _ = checkpoint.load_checkpoint(container_path)
                    containers[container_path] = arrays
                image = containers[container_path].get(f"image_{image_id:05d}")
        scenes.append(Scene(image_id=image_id, width=width, height=height,
                            graph=GroundTruthGraph(triplets), image=image,
                            file=file_ref))

    counts = np.zeros(n_pred, dtype=np.int64)
    for s in scenes:
        for t in s.graph.triplets:
            counts[t.predicate_label] += 1
    freqs = counts / counts.sum() if counts.sum() else counts.astype(np.float64)
    return DatasetSplit(name=os.path.splitext(os.path.basename(path))[0],
                        scenes=scenes, predicate_freqs=freqs,
                        n_entity_classes=n_ent, n_predicate_classes=n_pred,
                        n_clamped=n_clamped)


def splits_equal(a: DatasetSplit, b: DatasetSplit,
                 compare_images: bool = True) -> bool:
    """Structural equality of two splits (exact, including image bytes)."""
    if len(a.scenes) != len(b.scenes):
        return False
    for sa, sb in zip(a.scenes, b.scenes):
        if (sa.image_id, sa.width, sa.height) != (sb.image_id, sb.width, sb.height):
            return False
        if sa.graph.triplets != sb.graph.triplets:
            return False
        if compare_images:
            ia, ib = sa.image, sb.image
            if (ia is None) != (ib is None):
                return False
            if ia is not None and not np.array_equal(ia, ib):
                return False
    return True
