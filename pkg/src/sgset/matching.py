"""Set-prediction training machinery: triplet matching costs, Hungarian
assignment with cross-layer aggregation, one-to-many group matching, and the
matched-pair losses with predicate reweighting.

Matching always runs on detached prediction values (plain numpy); gradients
reach the parameters only through the losses computed afterwards, with the
assignment treated as a constant of the forward pass.

The cost of pairing query i with ground-truth triplet j sums, over the
subject/object/predicate tasks, a class term -p_hat_i(c_j) weighted by
cls_weight, an L1 box term, and a (1 - GIoU) term. The class term enters
negatively so that confidence in the correct class lowers the cost; the
matching geometry never sees the predicate class reweighting, which applies
to the loss alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import assign
from .decoder import TASKS, TripletPredictions
from .graphs import BOX_MIN_EXTENT, Box, GroundTruthGraph, boxes_array, giou_matrix
from .tensor import ShapeError, Tensor, maximum, minimum

DEFAULT_COST_WEIGHTS = {"cls": 1.0, "l1": 5.0, "giou": 2.0}
DEFAULT_EOS_COEF = 0.1
DEFAULT_ALPHA = 0.07
DEFAULT_BETA = 0.75
DEFAULT_WEIGHT_CAP = 100.0


# -- differentiable GIoU -------------------------------------------------


def giou_pairs(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise GIoU of two (n, 4) cxcywh box tensors -> (n,). Differentiable.

    Widths/heights are floored at BOX_MIN_EXTENT so ratios stay finite; the
    subgradient at the floor is zero, which is the usual clamping convention.
    """
    if a.shape != b.shape or a.shape[-1] != 4:
        raise ShapeError(f"giou_pairs expects matching (n, 4) boxes, got "
                         f"{a.shape} and {b.shape}")

    def corners(t: Tensor):
        w = maximum(t[:, 2], BOX_MIN_EXTENT)
        h = maximum(t[:, 3], BOX_MIN_EXTENT)
        cx, cy = t[:, 0], t[:, 1]
        return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5, w * h

    ax1, ay1, ax2, ay2, area_a = corners(a)
    bx1, by1, bx2, by2, area_b = corners(b)
    iw = maximum(minimum(ax2, bx2) - maximum(ax1, bx1), 0.0)
    ih = maximum(minimum(ay2, by2) - maximum(ay1, by1), 0.0)
    inter = iw * ih
    union = area_a + area_b - inter
    hull = (maximum(ax2, bx2) - minimum(ax1, bx1)) * (maximum(ay2, by2) - minimum(ay1, by1))
    return inter / union - (hull - union) / hull


def giou(a: Box, b: Box) -> float:
    """Scalar GIoU of two boxes, in [-1, 1]."""
    return float(giou_matrix(boxes_array([a]), boxes_array([b]))[0, 0])


def giou_loss(a: Box, b: Box) -> float:
    return 1.0 - giou(a, b)


# -- costs and assignment ------------------------------------------------


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def triplet_cost_matrix(preds: dict[str, tuple[np.ndarray, np.ndarray]],
                        gt: GroundTruthGraph,
                        weights: dict[str, float] = DEFAULT_COST_WEIGHTS) -> np.ndarray:
    """Cost of every (query, GT triplet) pairing for one image and one layer.

    preds maps task -> (logits (n_q, n_classes+1), boxes (n_q, 4)), already
    detached to numpy. Returns an (n_q, m) matrix; m = 0 gives a (n_q, 0)
    matrix, in which case every query falls through to the no-object class.
    """
    n_q = next(iter(preds.values()))[0].shape[0]
    if gt.m == 0:
        return np.zeros((n_q, 0), dtype=np.float64)
    cost = np.zeros((n_q, gt.m), dtype=np.float64)
    for task in TASKS:
        logits, boxes = preds[task]
        probs = _softmax_np(np.asarray(logits, dtype=np.float64))
        labels = gt.labels(task)
        gt_boxes = gt.boxes(task)
        pred_boxes = np.asarray(boxes, dtype=np.float64)
        l1 = np.abs(pred_boxes[:, None, :] - gt_boxes[None, :, :]).sum(axis=-1)
        cost += weights["cls"] * (-probs[:, labels])
        cost += weights["l1"] * l1
        cost += weights["giou"] * (1.0 - giou_matrix(pred_boxes, gt_boxes))
    return cost


def aggregate_layer_costs(layer_costs: list[np.ndarray]) -> np.ndarray:
    """Sum per-layer cost matrices; one Hungarian pass serves every layer."""
    if not layer_costs:
        raise ValueError("need at least one layer cost matrix")
    shape = layer_costs[0].shape
    for i, c in enumerate(layer_costs[1:], start=1):
        if c.shape != shape:
            raise ShapeError(f"layer {i} cost shape {c.shape} != {shape}")
    return np.sum(layer_costs, axis=0)


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Optimal GT -> query map for an (n_q, m) cost matrix, m <= n_q.

    Ties break to the lexicographically smallest (GT index, query index)
    pairs; see sgset.assign.
    """
    cost = np.asarray(cost, dtype=np.float64)
    row_to_col, _ = assign.solve(cost.T)  # rows = GT, columns = queries
    return row_to_col


@dataclass
class Assignment:
    """Per-group injective GT -> query maps for one image.

    queries_per_group[g][j] is a GLOBAL query row (into the K*N axis) assigned
    to GT j; rows of group g lie in [g*N, (g+1)*N).
    """

    queries_per_group: list[np.ndarray]
    group_size: int

    @property
    def k_groups(self) -> int:
        return len(self.queries_per_group)

    @property
    def n_matches(self) -> int:
        return sum(len(q) for q in self.queries_per_group)

    def pairs(self):
        """Yield (group, global query row, GT index) for every match."""
        for g, rows in enumerate(self.queries_per_group):
            for j, row in enumerate(rows):
                yield g, int(row), j

    def validate(self, n_rows_total: int, m: int) -> None:
        for g, rows in enumerate(self.queries_per_group):
            lo, hi = g * self.group_size, (g + 1) * self.group_size
            if len(rows) != m:
                raise ValueError(f"group {g}: {len(rows)} matches for {m} GT")
            if len(set(int(r) for r in rows)) != len(rows):
                raise ValueError(f"group {g}: assignment not injective")
            for r in rows:
                if not (lo <= int(r) < hi) or int(r) >= n_rows_total:
                    raise ValueError(
                        f"group {g}: query row {int(r)} outside [{lo},{hi})")


def one_to_many_match(preds: TripletPredictions, gt: GroundTruthGraph,
                      image: int,
                      weights: dict[str, float] = DEFAULT_COST_WEIGHTS) -> Assignment:
    """Independent Hungarian per query group, on cross-layer aggregated costs.

    Every GT triplet is matched exactly once per group, giving K positive
    queries per GT. Costs are computed from detached prediction values.
    """
    k, n = preds.k_groups, preds.group_size
    groups: list[np.ndarray] = []
    for g in range(k):
        rows = preds.group_rows(g)
        layer_costs = []
        for layer in preds.layers:
            detached = {
                t: (layer[t][0].data[image, rows], layer[t][1].data[image, rows])
                for t in TASKS
            }
            layer_costs.append(triplet_cost_matrix(detached, gt, weights))
        gt_to_query = hungarian(aggregate_layer_costs(layer_costs))
        groups.append(gt_to_query + g * n)
    return Assignment(queries_per_group=groups, group_size=n)


def match_batch(preds: TripletPredictions, gts: list[GroundTruthGraph],
                weights: dict[str, float] = DEFAULT_COST_WEIGHTS) -> list[Assignment]:
    return [one_to_many_match(preds, gt, b, weights) for b, gt in enumerate(gts)]


# -- losses --------------------------------------------------------------


def predicate_class_weights(freqs: np.ndarray, alpha: float = DEFAULT_ALPHA,
                            beta: float = DEFAULT_BETA,
                            cap: float = DEFAULT_WEIGHT_CAP) -> np.ndarray:
    """Rare-predicate upweighting: w_c = max((alpha / f_c)^beta, 1), capped.

    Classes absent from training (f_c = 0) take the cap instead of infinity;
    the cap also bounds the blow-up for vanishingly rare classes.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    if np.any(freqs < 0):
        raise ValueError("negative class frequency")
    with np.errstate(divide="ignore"):
        raw = np.where(freqs > 0, (alpha / np.where(freqs > 0, freqs, 1.0)) ** beta,
                       np.inf)
    return np.minimum(np.maximum(raw, 1.0), cap)


@dataclass
class LossBreakdown:
    """Scalar training loss plus its per-task, per-kind components.

    components keys are "<task>.<kind>" with kind in {class, l1, giou} plus
    "<task>.eos" for the unmatched no-object cross-entropy. All values are
    detached floats; `total` is the graph-attached scalar to call backward on.
    """

    total: Tensor
    components: dict[str, float] = field(default_factory=dict)
    n_matches: int = 0

    def per_task(self) -> dict[str, float]:
        out = {t: 0.0 for t in TASKS}
        for key, val in self.components.items():
            out[key.split(".", 1)[0]] += val
        return out


def triplet_loss(preds: TripletPredictions, gts: list[GroundTruthGraph],
                 assignments: list[Assignment],
                 predicate_weights: np.ndarray | None = None,
                 eos_coef: float = DEFAULT_EOS_COEF,
                 l1_weight: float = DEFAULT_COST_WEIGHTS["l1"],
                 giou_weight: float = DEFAULT_COST_WEIGHTS["giou"]) -> LossBreakdown:
    """Cross-entropy + box losses over matched pairs, summed over all layers
    and groups, normalized by the total match count.

    Matched queries pay CE on their GT label and L1 + GIoU on boxes (all three
    tasks); unmatched queries pay CE on the no-object class scaled by
    eos_coef; predicate CE is additionally scaled per-class by
    predicate_weights when given. No-object rows pay no box loss. The divisor
    is the number of (query, GT) matches made per forward pass, i.e.
    sum_images K * m; layers share one matching and all contribute on top of
    the same divisor.
    """
    bs = len(gts)
    if len(assignments) != bs:
        raise ValueError(f"{len(assignments)} assignments for {bs} images")
    kn = preds.layers[0]["s"][0].shape[1]
    for gt, asg in zip(gts, assignments):
        asg.validate(kn, gt.m)

    total_matches = sum(asg.n_matches for asg in assignments)
    denom = float(max(total_matches, 1))

    # Flat index arrays over the whole batch: matched (image, row) pairs with
    # their GT index, and the complementary unmatched pairs.
    m_img, m_row, m_gt = [], [], []
    matched_mask = np.zeros((bs, kn), dtype=bool)
    for b, asg in enumerate(assignments):
        for _, row, j in asg.pairs():
            m_img.append(b)
            m_row.append(row)
            m_gt.append(j)
            matched_mask[b, row] = True
    m_img = np.array(m_img, dtype=np.int64)
    m_row = np.array(m_row, dtype=np.int64)
    m_gt = np.array(m_gt, dtype=np.int64)
    u_img, u_row = np.nonzero(~matched_mask)

    target_labels = {t: np.concatenate([gts[b].labels(t) for b in range(bs)])
                     if any(g.m for g in gts) else np.empty(0, dtype=np.int64)
                     for t in TASKS}
    target_boxes = {t: np.concatenate([gts[b].boxes(t) for b in range(bs)])
                    if any(g.m for g in gts) else np.empty((0, 4))
                    for t in TASKS}
    gt_offsets = np.cumsum([0] + [g.m for g in gts])
    flat_gt = gt_offsets[m_img] + m_gt if len(m_img) else np.empty(0, dtype=np.int64)

    components: dict[str, float] = {}
    pieces: list[Tensor] = []

    def add(key: str, value: Tensor) -> None:
        pieces.append(value)
        components[key] = components.get(key, 0.0) + float(value.data)

    for layer in preds.layers:
        for task in TASKS:
            logits, boxes = layer[task]
            n_classes = logits.shape[-1]
            logp = logits.log_softmax(axis=-1)
            dtype = logits.dtype

            if len(m_img):
                labels = target_labels[task][flat_gt]
                picked = logp[m_img, m_row, labels]
                if task == "p" and predicate_weights is not None:
                    w = predicate_weights[labels].astype(dtype)
                    ce = -(picked * w).sum() / denom
                else:
                    ce = -picked.sum() / denom
                add(f"{task}.class", ce)

                pred_boxes = boxes[m_img, m_row]
                tgt = target_boxes[task][flat_gt].astype(dtype)
                add(f"{task}.l1", (pred_boxes - tgt).abs().sum() * (l1_weight / denom))
                add(f"{task}.giou",
                    (1.0 - giou_pairs(pred_boxes, Tensor(tgt))).sum() * (giou_weight / denom))

            if len(u_img):
                eos = -logp[u_img, u_row, np.full(len(u_img), n_classes - 1)]
                add(f"{task}.eos", eos.sum() * (eos_coef / denom))

    total = pieces[0]
    for piece in pieces[1:]:
        total = total + piece
    return LossBreakdown(total=total, components=components,
                         n_matches=total_matches)
