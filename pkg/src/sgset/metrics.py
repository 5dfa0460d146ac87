"""Scene-graph evaluation: recall family, zero-shot and unconstrained
variants, entity AP@50, and the flat-text metric report.

Conventions, fixed here and relied on by the report format:

  * Candidate triplets come from decoder queries: each query contributes its
    argmax non-background subject and object classes and its top-k predicate
    classes (k = 3 by default, the "top-3 links" protocol); candidate score is
    the product of the three class probabilities.
  * One shared ranking (descending score over all candidates) serves both
    recall modes. Graph-constraint mode makes only each query's best-scoring
    predicate eligible to match; no-graph-constraint (ng) mode makes every
    candidate eligible. Ranks are positions in the shared list, so the ng
    eligible set is a superset of the graph-constrained one at every cutoff
    and ng-R@K >= R@K holds by construction.
  * A candidate hits a ground-truth triplet when all three labels match and
    the subject and object boxes each reach IoU >= 0.5; candidates consume at
    most one GT each, greedily in rank order.
  * R@K averages per image; mR@K averages per-predicate-class recalls
    accumulated over the whole split; hR@K is their harmonic mean; zs-R@K is
    R@K restricted to GT triplets whose label triple never occurs in
    training. Images without (relevant) GT are excluded from each average.
  * All reported values live in [0, 100]; a metric with an empty denominator
    reports NA.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import Box, GroundTruthGraph, boxes_array, iou_matrix

DEFAULT_KS = (20, 50, 100)
DEFAULT_TOP_K_PREDICATES = 3
DEFAULT_IOU = 0.5


@dataclass(frozen=True)
class ScoredTriplet:
    subject_label: int
    subject_box: Box
    predicate_label: int
    object_label: int
    object_box: Box
    score: float
    query_index: int


def _class_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def score_triplets(preds: dict[str, tuple[np.ndarray, np.ndarray]],
                   top_k_predicates: int = DEFAULT_TOP_K_PREDICATES
                   ) -> list[ScoredTriplet]:
    """Candidate triplets for one image, sorted by descending score.

    preds maps task -> (logits (n_q, n_classes+1), boxes (n_q, 4)); the last
    class is background and never emitted. Each query yields exactly
    top_k_predicates candidates (capped at the predicate vocabulary size).
    Score ties break by (query index, predicate label) so the ranking is
    deterministic.
    """
    if top_k_predicates < 1:
        raise ValueError(f"top_k_predicates must be >= 1, got {top_k_predicates}")
    s_logits, s_boxes = preds["s"]
    o_logits, o_boxes = preds["o"]
    p_logits, _ = preds["p"]
    n_q = s_logits.shape[0]
    sp = _class_probs(s_logits)[:, :-1]
    op = _class_probs(o_logits)[:, :-1]
    pp = _class_probs(p_logits)[:, :-1]
    k = min(top_k_predicates, pp.shape[1])

    s_lab = sp.argmax(axis=1)
    o_lab = op.argmax(axis=1)
    cands: list[ScoredTriplet] = []
    for q in range(n_q):
        # stable sort on -prob keeps equal-probability classes in id order
        order = np.argsort(-pp[q], kind="stable")[:k]
        for p_lab in order:
            cands.append(ScoredTriplet(
                subject_label=int(s_lab[q]),
                subject_box=Box(*s_boxes[q].tolist()),
                predicate_label=int(p_lab),
                object_label=int(o_lab[q]),
                object_box=Box(*o_boxes[q].tolist()),
                score=float(sp[q, s_lab[q]] * op[q, o_lab[q]] * pp[q, p_lab]),
                query_index=q,
            ))
    cands.sort(key=lambda c: (-c.score, c.query_index, c.predicate_label))
    return cands


def best_per_query_mask(cands: list[ScoredTriplet]) -> np.ndarray:
    """Graph-constraint eligibility: each query's best-ranked candidate only."""
    mask = np.zeros(len(cands), dtype=bool)
    seen: set[int] = set()
    for i, c in enumerate(cands):
        if c.query_index not in seen:
            seen.add(c.query_index)
            mask[i] = True
    return mask


def match_triplets(cands: list[ScoredTriplet], gt: GroundTruthGraph,
                   iou_thresh: float = DEFAULT_IOU,
                   eligible: np.ndarray | None = None) -> np.ndarray:
    """Rank (position in cands) at which each GT is hit, or -1.

    Greedy in rank order; a candidate consumes at most one GT (the lowest
    still-free GT index it matches). `eligible` masks candidates out of the
    matching without renumbering ranks, which is what keeps ng-R@K >= R@K a
    structural guarantee rather than an empirical one.
    """
    ranks = np.full(gt.m, -1, dtype=np.int64)
    if gt.m == 0 or not cands:
        return ranks
    iou_s = iou_matrix(boxes_array([c.subject_box for c in cands]), gt.boxes("s"))
    iou_o = iou_matrix(boxes_array([c.object_box for c in cands]), gt.boxes("o"))
    labels = [(t.subject_label, t.predicate_label, t.object_label)
              for t in gt.triplets]
    for rank, c in enumerate(cands):
        if eligible is not None and not eligible[rank]:
            continue
        key = (c.subject_label, c.predicate_label, c.object_label)
        for j in range(gt.m):
            if (ranks[j] < 0 and labels[j] == key
                    and iou_s[rank, j] >= iou_thresh
                    and iou_o[rank, j] >= iou_thresh):
                ranks[j] = rank
                break
    return ranks


# -- recall family -------------------------------------------------------


def recall_at_k(per_image_ranks: list[np.ndarray], k: int) -> float | None:
    """Mean over images (with >= 1 GT) of the fraction of GT hit in top-k."""
    fractions = [float(np.count_nonzero((r >= 0) & (r < k))) / len(r)
                 for r in per_image_ranks if len(r)]
    return float(np.mean(fractions)) if fractions else None


def mean_recall_at_k(per_image_ranks: list[np.ndarray],
                     per_image_gts: list[GroundTruthGraph], k: int,
                     n_predicates: int) -> tuple[float | None, dict[int, float]]:
    """Per-predicate-class recall (pooled over the split) and its mean.

    Returns (mR, {class: recall}); classes absent from the GT are excluded
    from both. mR is None when the split has no GT at all.
    """
    hits = np.zeros(n_predicates, dtype=np.int64)
    totals = np.zeros(n_predicates, dtype=np.int64)
    for ranks, gt in zip(per_image_ranks, per_image_gts):
        for j, t in enumerate(gt.triplets):
            totals[t.predicate_label] += 1
            if 0 <= ranks[j] < k:
                hits[t.predicate_label] += 1
    present = totals > 0
    if not present.any():
        return None, {}
    per_class = {int(c): float(hits[c]) / float(totals[c])
                 for c in np.nonzero(present)[0]}
    return float(np.mean(list(per_class.values()))), per_class


def harmonic_recall(r: float | None, mr: float | None) -> float | None:
    """hR = 2*R*mR / (R + mR); 0 when both are 0; NA propagates."""
    if r is None or mr is None:
        return None
    if r == 0.0 and mr == 0.0:
        return 0.0
    return 2.0 * r * mr / (r + mr)


def zero_shot_recall(per_image_cands: list[list[ScoredTriplet]],
                     per_image_gts: list[GroundTruthGraph],
                     train_combos: set[tuple[int, int, int]], k: int,
                     iou_thresh: float = DEFAULT_IOU,
                     per_image_eligible: list[np.ndarray] | None = None
                     ) -> float | None:
    """R@K over only the GT triplets whose label triple is unseen in training.

    Filter-then-match: each image's GT is restricted to unseen triples and the
    candidates are re-matched against that subset. None when no image has any
    unseen GT.
    """
    fractions = []
    for i, (cands, gt) in enumerate(zip(per_image_cands, per_image_gts)):
        unseen = [t for t in gt.triplets if t.label_triple() not in train_combos]
        if not unseen:
            continue
        mask = None if per_image_eligible is None else per_image_eligible[i]
        ranks = match_triplets(cands, GroundTruthGraph(unseen), iou_thresh, mask)
        fractions.append(float(np.count_nonzero((ranks >= 0) & (ranks < k)))
                         / len(unseen))
    return float(np.mean(fractions)) if fractions else None


# -- entity average precision -------------------------------------------


def _nms_per_class(dets: list[tuple[int, float, Box]],
                   iou_thresh: float) -> list[tuple[int, float, Box]]:
    kept: list[tuple[int, float, Box]] = []
    by_class: dict[int, list[tuple[float, Box]]] = {}
    for label, score, box in dets:
        by_class.setdefault(label, []).append((score, box))
    for label in sorted(by_class):
        pool = sorted(by_class[label], key=lambda sb: -sb[0])
        chosen: list[tuple[float, Box]] = []
        for score, box in pool:
            arr = boxes_array([box])
            if all(iou_matrix(arr, boxes_array([cb]))[0, 0] < iou_thresh
                   for _, cb in chosen):
                chosen.append((score, box))
        kept.extend((label, s, b) for s, b in chosen)
    return kept


def entity_detections(preds: dict[str, tuple[np.ndarray, np.ndarray]],
                      iou_thresh: float = DEFAULT_IOU) -> list[tuple[int, float, Box]]:
    """Pool subject and object streams into class-wise NMS'd entity detections."""
    dets: list[tuple[int, float, Box]] = []
    for task in ("s", "o"):
        logits, boxes = preds[task]
        probs = _class_probs(logits)[:, :-1]
        labels = probs.argmax(axis=1)
        for q in range(logits.shape[0]):
            dets.append((int(labels[q]), float(probs[q, labels[q]]),
                         Box(*boxes[q].tolist())))
    return _nms_per_class(dets, iou_thresh)


def gt_entities(gt: GroundTruthGraph) -> list[tuple[int, Box]]:
    """Distinct (label, box) entities mentioned by a graph's triplets."""
    seen: set[tuple[int, tuple[float, float, float, float]]] = set()
    out = []
    for t in gt.triplets:
        for label, box in ((t.subject_label, t.subject_box),
                           (t.object_label, t.object_box)):
            key = (label, (box.cx, box.cy, box.w, box.h))
            if key not in seen:
                seen.add(key)
                out.append((label, box))
    return out


def ap50_entities(per_image_dets: list[list[tuple[int, float, Box]]],
                  per_image_gts: list[list[tuple[int, Box]]],
                  iou_thresh: float = DEFAULT_IOU) -> float | None:
    """All-points-interpolated AP at IoU 0.5, averaged over classes in the GT."""
    classes = sorted({label for gts in per_image_gts for label, _ in gts})
    if not classes:
        return None
    aps = []
    for cls in classes:
        records = []  # (score, image, box)
        for img, dets in enumerate(per_image_dets):
            for label, score, box in dets:
                if label == cls:
                    records.append((score, img, box))
        n_gt = sum(1 for gts in per_image_gts for label, _ in gts if label == cls)
        if not records:
            aps.append(0.0)
            continue
        records.sort(key=lambda r: -r[0])
        consumed: dict[int, np.ndarray] = {}
        tp = np.zeros(len(records))
        for i, (score, img, box) in enumerate(records):
            gts = [b for label, b in per_image_gts[img] if label == cls]
            if img not in consumed:
                consumed[img] = np.zeros(len(gts), dtype=bool)
            if not gts:
                continue
            ious = iou_matrix(boxes_array([box]), boxes_array(gts))[0]
            ious[consumed[img]] = -1.0
            best = int(np.argmax(ious))
            if ious[best] >= iou_thresh:
                consumed[img][best] = True
                tp[i] = 1.0
        cum_tp = np.cumsum(tp)
        recall = cum_tp / max(n_gt, 1)
        precision = cum_tp / np.arange(1, len(records) + 1)
        # precision envelope + integration over recall steps
        for i in range(len(precision) - 2, -1, -1):
            precision[i] = max(precision[i], precision[i + 1])
        ap = 0.0
        prev_r = 0.0
        for i in range(len(recall)):
            if recall[i] > prev_r:
                ap += (recall[i] - prev_r) * precision[i]
                prev_r = recall[i]
        aps.append(ap)
    return float(np.mean(aps))


# -- report --------------------------------------------------------------


@dataclass
class MetricReport:
    """Flat metric table; values in [0, 100] or None for not-applicable."""

    values: dict[str, float | None] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float | None:
        return self.values[key]

    def to_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            lines.append(f"{key}=NA" if val is None else f"{key}={val:.4f}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "MetricReport":
        values: dict[str, float | None] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            values[key] = None if raw == "NA" else float(raw)
        return MetricReport(values)


def evaluate(per_image_preds: list[dict[str, tuple[np.ndarray, np.ndarray]]],
             per_image_gts: list[GroundTruthGraph],
             train_combos: set[tuple[int, int, int]] | None = None,
             n_predicates: int | None = None,
             ks: tuple[int, ...] = DEFAULT_KS,
             top_k_predicates: int = DEFAULT_TOP_K_PREDICATES,
             iou_thresh: float = DEFAULT_IOU) -> MetricReport:
    """Run the whole metric suite over per-image prediction arrays.

    per_image_preds entries map task -> (logits, boxes) numpy arrays for the
    queries used at inference (group 0, last layer). Keys produced:
    R@K / mR@K / hR@K for each K, ng-R@{50,100}, zs-R@{50,100} (when
    train_combos is given), AP50, and per-class predR@K/<label>.
    """
    if n_predicates is None:
        n_predicates = 1 + max((t.predicate_label for gt in per_image_gts
                                for t in gt.triplets), default=0)
    all_cands = [score_triplets(p, top_k_predicates) for p in per_image_preds]
    masks = [best_per_query_mask(c) for c in all_cands]
    gc_ranks = [match_triplets(c, gt, iou_thresh, m)
                for c, gt, m in zip(all_cands, per_image_gts, masks)]
    ng_ranks = [match_triplets(c, gt, iou_thresh)
                for c, gt in zip(all_cands, per_image_gts)]

    def pct(x: float | None) -> float | None:
        return None if x is None else 100.0 * x

    report = MetricReport()
    for k in ks:
        r = recall_at_k(gc_ranks, k)
        mr, per_class = mean_recall_at_k(gc_ranks, per_image_gts, k, n_predicates)
        report.values[f"R@{k}"] = pct(r)
        report.values[f"mR@{k}"] = pct(mr)
        report.values[f"hR@{k}"] = pct(harmonic_recall(r, mr))
        for cls, val in per_class.items():
            report.values[f"predR@{k}/{cls}"] = pct(val)
    for k in (50, 100):
        report.values[f"ng-R@{k}"] = pct(recall_at_k(ng_ranks, k))
        if train_combos is not None:
            report.values[f"zs-R@{k}"] = pct(zero_shot_recall(
                all_cands, per_image_gts, train_combos, k, iou_thresh, masks))
    dets = [entity_detections(p, iou_thresh) for p in per_image_preds]
    gts_e = [gt_entities(gt) for gt in per_image_gts]
    report.values["AP50"] = pct(ap50_entities(dets, gts_e, iou_thresh))
    return report
