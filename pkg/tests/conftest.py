"""Shared fixtures and small generators used across the test modules."""

from __future__ import annotations

import numpy as np
import pytest

from sgset.data import SyntheticSpec, build_splits
from sgset.graphs import Box, GroundTruthGraph, Triplet


def independent_gt_entities(gt: GroundTruthGraph):
    """Deduped (label, box) list for detection metrics, built its own way."""
    seen, out = set(), []
    for t in gt.triplets:
        for lab, b in ((t.subject_label, t.subject_box),
                       (t.object_label, t.object_box)):
            key = (lab, b.cx, b.cy, b.w, b.h)
            if key not in seen:
                seen.add(key)
                out.append((lab, b))
    return out


@pytest.fixture(scope="session")
def desk_splits():
    """One small train/test pair reused by data, metric, and training tests."""
    return build_splits(SyntheticSpec(seed=7), n_train=12, n_test=6)


def random_gt(gen: np.random.Generator, m: int, n_entity: int = 12,
              n_predicate: int = 6) -> GroundTruthGraph:
    """Random ground-truth graph with boxes comfortably inside the unit square."""
    triplets = []
    for _ in range(m):
        def rbox():
            return Box(float(gen.uniform(0.25, 0.75)), float(gen.uniform(0.25, 0.75)),
                       float(gen.uniform(0.1, 0.3)), float(gen.uniform(0.1, 0.3)))
        triplets.append(Triplet.make(int(gen.integers(n_entity)), rbox(),
                                     int(gen.integers(n_predicate)),
                                     int(gen.integers(n_entity)), rbox()))
    return GroundTruthGraph(triplets)


def random_image_preds(gen: np.random.Generator, n_q: int = 8,
                       n_entity: int = 12, n_predicate: int = 6,
                       spread: float = 2.0) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Random per-image prediction arrays in the evaluate() input format."""
    def boxes():
        cx, cy = gen.uniform(0.15, 0.85, (2, n_q))
        w, h = gen.uniform(0.05, 0.3, (2, n_q))
        return np.stack([cx, cy, w, h], axis=1)

    return {
        "s": (spread * gen.standard_normal((n_q, n_entity + 1)), boxes()),
        "o": (spread * gen.standard_normal((n_q, n_entity + 1)), boxes()),
        "p": (spread * gen.standard_normal((n_q, n_predicate + 1)), boxes()),
    }
