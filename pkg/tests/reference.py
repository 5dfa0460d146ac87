"""Slow, independent reference implementations the tests compare against.

Everything in here is deliberately written the dumb way: explicit Python
loops, itertools.permutations, math.exp. None of it calls into the package's
numerics, so agreement between a reference and the real implementation is
evidence, not tautology. Shared data containers (Box, GroundTruthGraph) are
the interface under test and are the only imports from the package.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from sgset.graphs import Box, GroundTruthGraph


# -- linear algebra kernels ---------------------------------------------


def matmul_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product with Python-float accumulation."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def softmax_row(row) -> list[float]:
    top = max(float(v) for v in row)
    exps = [math.exp(float(v) - top) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def attention_loop(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                   heads: int) -> np.ndarray:
    """Per-head scaled dot-product attention, one score at a time.

    q: (lq, d), k/v: (lk, d); d split evenly across heads; output (lq, d).
    """
    lq, d = q.shape
    lk = k.shape[0]
    dh = d // heads
    assert dh * heads == d
    out = np.zeros((lq, d), dtype=np.float64)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(lq):
            scores = []
            for j in range(lk):
                acc = 0.0
                for t in range(dh):
                    acc += float(q[i, sl][t]) * float(k[j, sl][t])
                scores.append(acc / math.sqrt(dh))
            weights = softmax_row(scores)
            for t in range(dh):
                acc = 0.0
                for j in range(lk):
                    acc += weights[j] * float(v[j, sl][t])
                out[i, h * dh + t] = acc
    return out


def layernorm_two_pass(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                       eps: float) -> np.ndarray:
    """Last-axis layer norm computed with separate mean and variance passes."""
    flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
    out = np.zeros_like(flat)
    d = flat.shape[1]
    for r in range(flat.shape[0]):
        mean = sum(float(v) for v in flat[r]) / d
        var = sum((float(v) - mean) ** 2 for v in flat[r]) / d
        scale = 1.0 / math.sqrt(var + eps)
        for c in range(d):
            out[r, c] = (flat[r, c] - mean) * scale * float(gamma[c]) + float(beta[c])
    return out.reshape(x.shape)


# -- assignment ----------------------------------------------------------


def brute_force_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Exhaustive minimum-cost assignment with lexicographic tie-break.

    m x n, m <= n. Tries every injective row->column map; among minimum-cost
    maps, returns the lexicographically smallest (row 0's column first).
    """
    m, n = cost.shape
    best_cols: tuple[int, ...] | None = None
    best_total = math.inf
    for cols in itertools.permutations(range(n), m):
        total = sum(float(cost[i, c]) for i, c in enumerate(cols))
        if (total < best_total - 1e-12
                or (abs(total - best_total) <= 1e-12
                    and (best_cols is None or cols < best_cols))):
            best_total = total
            best_cols = cols
    assert best_cols is not None
    return np.array(best_cols, dtype=np.int64), best_total


# -- box geometry --------------------------------------------------------


def iou_boxes(a: Box, b: Box) -> float:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = max(ax2 - ax1, 1e-7) * max(ay2 - ay1, 1e-7)
    area_b = max(bx2 - bx1, 1e-7) * max(by2 - by1, 1e-7)
    return inter / (area_a + area_b - inter)


def giou_boxes(a: Box, b: Box) -> float:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    # same extent floor as the implementation, applied to w/h before corners
    def floored(x1, y1, x2, y2):
        cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
        w, h = max(x2 - x1, 1e-7), max(y2 - y1, 1e-7)
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2
    ax1, ay1, ax2, ay2 = floored(ax1, ay1, ax2, ay2)
    bx1, by1, bx2, by2 = floored(bx1, by1, bx2, by2)
    iw = max(min(ax2, bx2) - max(ax1, bx1), 0.0)
    ih = max(min(ay2, by2) - max(ay1, by1), 0.0)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    hull = ((max(ax2, bx2) - min(ax1, bx1))
            * (max(ay2, by2) - min(ay1, by1)))
    return inter / union - (hull - union) / hull


# -- triplet scoring and recall -----------------------------------------


def reference_candidates(preds: dict[str, tuple[np.ndarray, np.ndarray]],
                         top_k: int) -> list[dict]:
    """Candidate list as plain dicts, sorted like the implementation sorts.

    Each dict: s_label, s_box, p_label, o_label, o_box, score, query.
    """
    s_logits, s_boxes = preds["s"]
    o_logits, o_boxes = preds["o"]
    p_logits, _ = preds["p"]
    cands = []
    for q in range(s_logits.shape[0]):
        sp = softmax_row(s_logits[q])[:-1]
        op = softmax_row(o_logits[q])[:-1]
        pp = softmax_row(p_logits[q])[:-1]
        s_lab = max(range(len(sp)), key=lambda i: (sp[i], -i))
        o_lab = max(range(len(op)), key=lambda i: (op[i], -i))
        order = sorted(range(len(pp)), key=lambda i: (-pp[i], i))
        for p_lab in order[:min(top_k, len(pp))]:
            cands.append({
                "s_label": s_lab, "s_box": Box(*[float(v) for v in s_boxes[q]]),
                "p_label": p_lab,
                "o_label": o_lab, "o_box": Box(*[float(v) for v in o_boxes[q]]),
                "score": sp[s_lab] * op[o_lab] * pp[p_lab], "query": q,
            })
    cands.sort(key=lambda c: (-c["score"], c["query"], c["p_label"]))
    return cands


def reference_eligible(cands: list[dict]) -> list[bool]:
    seen: set[int] = set()
    out = []
    for c in cands:
        first = c["query"] not in seen
        seen.add(c["query"])
        out.append(first)
    return out


def reference_match(cands: list[dict], gt: GroundTruthGraph, iou_thresh: float,
                    eligible: list[bool] | None) -> list[int]:
    """Greedy rank-order matching; returns the hit rank per GT or -1."""
    hit = [-1] * gt.m
    for rank, c in enumerate(cands):
        if eligible is not None and not eligible[rank]:
            continue
        for j, t in enumerate(gt.triplets):
            if hit[j] >= 0:
                continue
            if (t.subject_label == c["s_label"]
                    and t.predicate_label == c["p_label"]
                    and t.object_label == c["o_label"]
                    and iou_boxes(c["s_box"], t.subject_box) >= iou_thresh
                    and iou_boxes(c["o_box"], t.object_box) >= iou_thresh):
                hit[j] = rank
                break
    return hit


def reference_metrics(per_image_preds, per_image_gts, ks, top_k, iou_thresh,
                      n_predicates, train_combos=None) -> dict[str, float | None]:
    """The whole recall family, recomputed from scratch.

    Candidates, matching, and counting are all reimplemented above; only the
    last step, averaging a list of exact fractions, deliberately uses the same
    float(np.mean(...)) and trailing 100x as the package, so agreement can be
    asserted bitwise instead of within a tolerance.
    """
    all_cands = [reference_candidates(p, top_k) for p in per_image_preds]
    eligible = [reference_eligible(c) for c in all_cands]
    gc = [reference_match(c, g, iou_thresh, e)
          for c, g, e in zip(all_cands, per_image_gts, eligible)]
    ng = [reference_match(c, g, iou_thresh, None)
          for c, g in zip(all_cands, per_image_gts)]

    out: dict[str, float | None] = {}

    def pct(x):
        return None if x is None else 100.0 * x

    def image_mean(ranks_list, k):
        fracs = [sum(1 for r in ranks if 0 <= r < k) / len(ranks)
                 for ranks in ranks_list if ranks]
        return float(np.mean(fracs)) if fracs else None

    for k in ks:
        r = image_mean(gc, k)
        hits = [0] * n_predicates
        totals = [0] * n_predicates
        for ranks, g in zip(gc, per_image_gts):
            for j, t in enumerate(g.triplets):
                totals[t.predicate_label] += 1
                if 0 <= ranks[j] < k:
                    hits[t.predicate_label] += 1
        per_class = {c: hits[c] / totals[c] for c in range(n_predicates)
                     if totals[c] > 0}
        mr = float(np.mean(list(per_class.values()))) if per_class else None
        out[f"R@{k}"] = pct(r)
        out[f"mR@{k}"] = pct(mr)
        if r is None or mr is None:
            out[f"hR@{k}"] = None
        elif r == 0.0 and mr == 0.0:
            out[f"hR@{k}"] = 0.0
        else:
            out[f"hR@{k}"] = pct(2.0 * r * mr / (r + mr))
        for c, v in per_class.items():
            out[f"predR@{k}/{c}"] = pct(v)
    for k in (50, 100):
        out[f"ng-R@{k}"] = pct(image_mean(ng, k))
        if train_combos is not None:
            fracs = []
            for i, g in enumerate(per_image_gts):
                unseen = [t for t in g.triplets
                          if (t.subject_label, t.predicate_label,
                              t.object_label) not in train_combos]
                if not unseen:
                    continue
                ranks = reference_match(all_cands[i], GroundTruthGraph(unseen),
                                        iou_thresh, eligible[i])
                fracs.append(sum(1 for r in ranks if 0 <= r < k) / len(unseen))
            out[f"zs-R@{k}"] = pct(float(np.mean(fracs)) if fracs else None)
    return out


# -- entity AP -----------------------------------------------------------


def reference_ap50(per_image_dets: list[list[tuple[int, float, Box]]],
                   per_image_gts: list[list[tuple[int, Box]]],
                   iou_thresh: float) -> float | None:
    """All-points AP at the given IoU, averaged over classes present in GT.

    Takes already-NMS'd detections so it validates the AP computation, not
    the suppression step (which has its own direct tests).
    """
    classes = sorted({lab for gts in per_image_gts for lab, _ in gts})
    if not classes:
        return None
    aps = []
    for cls in classes:
        recs = []
        for img, dets in enumerate(per_image_dets):
            for lab, score, box in dets:
                if lab == cls:
                    recs.append((score, img, box))
        n_gt = sum(1 for gts in per_image_gts for lab, _ in gts if lab == cls)
        recs.sort(key=lambda r: -r[0])
        used: dict[int, set[int]] = {}
        flags = []
        for score, img, box in recs:
            gts = [b for lab, b in per_image_gts[img] if lab == cls]
            used.setdefault(img, set())
            best_j, best_iou = -1, -1.0
            for j, gb in enumerate(gts):
                if j in used[img]:
                    continue
                v = iou_boxes(box, gb)
                if v > best_iou:
                    best_j, best_iou = j, v
            if best_j >= 0 and best_iou >= iou_thresh:
                used[img].add(best_j)
                flags.append(1)
            else:
                flags.append(0)
        if not recs:
            aps.append(0.0)
            continue
        ap = 0.0
        prev_recall = 0.0
        tp = 0
        for i, f in enumerate(flags):
            tp += f
            recall = tp / max(n_gt, 1)
            if recall > prev_recall:
                # all-points interpolation: best precision at or beyond here
                best_prec = 0.0
                tp2 = tp
                for j in range(i, len(flags)):
                    if j > i:
                        tp2 += flags[j]
                    best_prec = max(best_prec, tp2 / (j + 1))
                ap += (recall - prev_recall) * best_prec
                prev_recall = recall
        aps.append(ap)
    # same final-mean arithmetic as the package; see reference_metrics
    return float(np.mean(aps))
