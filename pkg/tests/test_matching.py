"""Matching costs, Hungarian assignment over groups and layers, and the
matched-pair loss: worked examples, additivity, counting contracts, and a
finite-difference pass through the full cost -> match -> loss pipeline."""

import numpy as np
import pytest

from reference import brute_force_assignment, giou_boxes, softmax_row
from sgset.decoder import TASKS, TripletPredictions
from sgset.gradcheck import finite_diff_check
from sgset.graphs import Box, GroundTruthGraph
from sgset.matching import (Assignment, aggregate_layer_costs, giou,
                            giou_loss, giou_pairs, hungarian, match_batch,
                            one_to_many_match, predicate_class_weights,
                            triplet_cost_matrix, triplet_loss)
from sgset.tensor import ShapeError, Tensor, rng

from conftest import random_gt, random_image_preds


def make_preds(gen, layers=2, bs=1, k=1, n=6, n_entity=12, n_predicate=6,
               dtype=np.float64):
    """Random TripletPredictions with boxes safely inside the unit square."""
    kn = k * n
    out = []
    for _ in range(layers):
        layer = {}
        for task in TASKS:
            c = (n_predicate if task == "p" else n_entity) + 1
            logits = Tensor(gen.standard_normal((bs, kn, c)).astype(dtype))
            boxes = Tensor(np.stack([gen.uniform(0.3, 0.7, (bs, kn)),
                                     gen.uniform(0.3, 0.7, (bs, kn)),
                                     gen.uniform(0.1, 0.3, (bs, kn)),
                                     gen.uniform(0.1, 0.3, (bs, kn))],
                                    axis=-1).astype(dtype))
            layer[task] = (logits, boxes)
        out.append(layer)
    return TripletPredictions(layers=out, k_groups=k, group_size=n)


# -- GIoU ----------------------------------------------------------------


def test_giou_identity_and_touching_corners():
    b = Box(0.5, 0.5, 0.4, 0.2)
    assert giou(b, b) == 1.0
    assert giou_loss(b, b) == 0.0

    # corner contact: zero intersection, union 2, hull 4
    a = Box.from_corners(0.0, 0.0, 1.0, 1.0)
    c = Box.from_corners(1.0, 1.0, 2.0, 2.0)
    assert giou(a, c) == -0.5
    assert giou_loss(a, c) == 1.5


def test_giou_containment_reduces_to_area_ratio():
    inner = Box(0.5, 0.5, 0.2, 0.1)
    outer = Box(0.5, 0.5, 0.8, 0.4)
    # hull == outer, so the hull penalty vanishes and giou == iou
    assert giou(inner, outer) == pytest.approx(inner.area / outer.area, rel=1e-12)
    assert giou(inner, outer) == pytest.approx(
        giou_boxes(inner, outer), rel=1e-12)


def test_giou_symmetry_range_and_oracle():
    gen = rng(20)
    for _ in range(200):
        a = Box(*gen.uniform(0.1, 0.9, 2), *gen.uniform(0.05, 0.5, 2))
        b = Box(*gen.uniform(0.1, 0.9, 2), *gen.uniform(0.05, 0.5, 2))
        g = giou(a, b)
        assert g == giou(b, a)
        assert -1.0 <= g <= 1.0
        assert g == pytest.approx(giou_boxes(a, b), abs=1e-12)


def test_giou_pairs_matches_scalar_path():
    gen = rng(21)
    n = 16
    a = np.stack([gen.uniform(0.1, 0.9, n), gen.uniform(0.1, 0.9, n),
                  gen.uniform(0.05, 0.5, n), gen.uniform(0.05, 0.5, n)], axis=1)
    b = np.stack([gen.uniform(0.1, 0.9, n), gen.uniform(0.1, 0.9, n),
                  gen.uniform(0.05, 0.5, n), gen.uniform(0.05, 0.5, n)], axis=1)
    got = giou_pairs(Tensor(a), Tensor(b)).data
    want = [giou(Box(*a[i]), Box(*b[i])) for i in range(n)]
    np.testing.assert_allclose(got, want, atol=1e-12)

    with pytest.raises(ShapeError):
        giou_pairs(Tensor(a), Tensor(b[:4]))
    with pytest.raises(ShapeError):
        giou_pairs(Tensor(a[:, :3]), Tensor(b[:, :3]))


def test_giou_pairs_grads():
    gen = rng(22)
    n = 5
    # extents well away from the clamp floor so FD sees a smooth function
    a = Tensor(np.stack([gen.uniform(0.3, 0.7, n), gen.uniform(0.3, 0.7, n),
                         gen.uniform(0.2, 0.4, n), gen.uniform(0.2, 0.4, n)],
                        axis=1), requires_grad=True)
    b = Tensor(np.stack([gen.uniform(0.3, 0.7, n), gen.uniform(0.3, 0.7, n),
                         gen.uniform(0.2, 0.4, n), gen.uniform(0.2, 0.4, n)],
                        axis=1), requires_grad=True)
    report = finite_diff_check(lambda: giou_pairs(a, b).sum(),
                               {"a": a, "b": b})
    assert report.passed, str(report)


# -- cost matrix ---------------------------------------------------------


def test_cost_matrix_matches_reference_loop():
    gen = rng(23)
    preds = random_image_preds(gen, n_q=7)
    gt = random_gt(gen, 4)
    weights = {"cls": 1.0, "l1": 5.0, "giou": 2.0}
    got = triplet_cost_matrix(preds, gt, weights)
    assert got.shape == (7, 4)

    for i in range(7):
        for j in range(4):
            want = 0.0
            for task in TASKS:
                logits, boxes = preds[task]
                label = int(gt.labels(task)[j])
                want += weights["cls"] * -softmax_row(list(logits[i]))[label]
                gt_box = gt.boxes(task)[j]
                want += weights["l1"] * float(np.abs(boxes[i] - gt_box).sum())
                want += weights["giou"] * (1.0 - giou_boxes(Box(*boxes[i]),
                                                            Box(*gt_box)))
            assert got[i, j] == pytest.approx(want, rel=1e-9)


def test_cost_matrix_empty_and_perfect():
    gen = rng(24)
    preds = random_image_preds(gen, n_q=5)
    assert triplet_cost_matrix(preds, GroundTruthGraph([])).shape == (5, 0)

    gt = random_gt(gen, 3)
    big = 50.0
    perfect = {}
    for task in TASKS:
        c = (7 if task == "p" else 13)
        logits = np.zeros((3, c))
        logits[np.arange(3), gt.labels(task)] = big
        perfect[task] = (logits, gt.boxes(task).copy())
    cost = triplet_cost_matrix(perfect, gt, {"cls": 1.0, "l1": 1.0, "giou": 1.0})
    # prob ~1 on the right class, exact boxes: the matched diagonal sits at
    # the attainable minimum of -3
    np.testing.assert_allclose(np.diag(cost), -3.0, atol=1e-9)
    assert cost.min() >= -3.0 - 1e-9


def test_cost_matrix_term_additivity():
    gen = rng(25)
    preds = random_image_preds(gen)
    gt = random_gt(gen, 5)
    full = triplet_cost_matrix(preds, gt, {"cls": 1.0, "l1": 5.0, "giou": 2.0})
    parts = [triplet_cost_matrix(preds, gt, w) for w in (
        {"cls": 1.0, "l1": 0.0, "giou": 0.0},
        {"cls": 0.0, "l1": 5.0, "giou": 0.0},
        {"cls": 0.0, "l1": 0.0, "giou": 2.0})]
    np.testing.assert_allclose(full, parts[0] + parts[1] + parts[2],
                               atol=1e-12)


# -- Hungarian over layers and groups ------------------------------------


def test_hungarian_examples():
    assert hungarian(np.array([[1.0, 2.0], [3.0, 0.0]])).tolist() == [0, 1]

    cost = np.full((4, 4), 9.0)
    np.fill_diagonal(cost, 0.0)
    assert hungarian(cost).tolist() == [0, 1, 2, 3]

    summed = aggregate_layer_costs([np.array([[0.0, 10.0], [10.0, 0.0]]),
                                    np.array([[10.0, 0.0], [0.0, 10.0]])])
    np.testing.assert_array_equal(summed, np.full((2, 2), 10.0))
    # all assignments tie at 20; lowest (GT, query) pairs win
    assert hungarian(summed).tolist() == [0, 1]

    with pytest.raises(ShapeError):
        hungarian(np.zeros((2, 3)))  # more GT than queries


def test_aggregate_layer_costs():
    gen = rng(26)
    a, b, c = (gen.standard_normal((5, 3)) for _ in range(3))
    np.testing.assert_array_equal(aggregate_layer_costs([a]), a)
    np.testing.assert_array_equal(aggregate_layer_costs([a, b, c]), a + b + c)

    tripled = aggregate_layer_costs([a, a, a])
    np.testing.assert_allclose(tripled, 3.0 * a, atol=0)
    assert hungarian(tripled).tolist() == hungarian(a).tolist()

    with pytest.raises(ValueError):
        aggregate_layer_costs([])
    with pytest.raises(ShapeError):
        aggregate_layer_costs([a, b[:4]])


def test_one_to_many_counting_contract():
    gen = rng(27)
    preds = make_preds(gen, layers=2, bs=2, k=3, n=6)
    gts = [random_gt(gen, 2), random_gt(gen, 3)]
    assignments = match_batch(preds, gts)
    for gt, asg in zip(gts, assignments):
        assert asg.k_groups == 3
        assert asg.n_matches == 3 * gt.m
        for g, rows in enumerate(asg.queries_per_group):
            assert len(rows) == gt.m
            assert all(g * 6 <= r < (g + 1) * 6 for r in rows)
        asg.validate(18, gt.m)


def test_identical_groups_match_identically():
    gen = rng(28)
    preds = make_preds(gen, layers=2, k=2, n=5)
    for layer in preds.layers:
        for task in TASKS:
            logits, boxes = layer[task]
            logits.data[:, 5:] = logits.data[:, :5]
            boxes.data[:, 5:] = boxes.data[:, :5]
    asg = one_to_many_match(preds, random_gt(gen, 3), image=0)
    np.testing.assert_array_equal(asg.queries_per_group[1],
                                  asg.queries_per_group[0] + 5)


def test_k1_equals_plain_hungarian():
    gen = rng(29)
    preds = make_preds(gen, layers=3, k=1, n=6)
    gt = random_gt(gen, 4)
    asg = one_to_many_match(preds, gt, image=0)

    layer_costs = [triplet_cost_matrix(
        {t: (layer[t][0].data[0], layer[t][1].data[0]) for t in TASKS}, gt)
        for layer in preds.layers]
    agg = aggregate_layer_costs(layer_costs)
    expected = hungarian(agg)
    np.testing.assert_array_equal(asg.queries_per_group[0], expected)
    ref_cols, _ = brute_force_assignment(agg.T)
    np.testing.assert_array_equal(expected, ref_cols)


def test_assignment_validate_errors():
    asg = Assignment([np.array([0, 1])], group_size=4)
    asg.validate(4, 2)
    with pytest.raises(ValueError, match="matches for"):
        asg.validate(4, 3)
    with pytest.raises(ValueError, match="injective"):
        Assignment([np.array([1, 1])], group_size=4).validate(4, 2)
    with pytest.raises(ValueError, match="outside"):
        Assignment([np.array([0]), np.array([1])], group_size=4).validate(8, 1)


# -- loss ----------------------------------------------------------------


def echo_gt_preds(gts, n, layers=2, big=50.0, n_entity=12, n_predicate=6):
    """Predictions that copy each GT into query row j, no-object elsewhere."""
    bs = len(gts)
    out = []
    for _ in range(layers):
        layer = {}
        for task in TASKS:
            c = (n_predicate if task == "p" else n_entity) + 1
            logits = np.zeros((bs, n, c))
            logits[:, :, -1] = big
            boxes = np.full((bs, n, 4), 0.5)
            for b, gt in enumerate(gts):
                for j in range(gt.m):
                    logits[b, j, -1] = 0.0
                    logits[b, j, gt.labels(task)[j]] = big
                    boxes[b, j] = gt.boxes(task)[j]
            layer[task] = (Tensor(logits), Tensor(boxes))
        out.append(layer)
    return TripletPredictions(layers=out, k_groups=1, group_size=n)


def test_loss_perfect_predictions_vanish():
    gen = rng(30)
    gts = [random_gt(gen, 2), random_gt(gen, 3)]
    preds = echo_gt_preds(gts, n=6)
    asgs = match_batch(preds, gts)
    out = triplet_loss(preds, gts, asgs)
    assert out.n_matches == 5
    assert float(out.total.data) < 1e-9
    for task in TASKS:
        assert out.components[f"{task}.l1"] == 0.0
        # giou_pairs derives the intersection from corners but areas from
        # w*h, so identical boxes land an ulp shy of exactly 1
        assert abs(out.components[f"{task}.giou"]) < 1e-12


def test_loss_ignores_unmatched_boxes():
    gen = rng(31)
    gts = [random_gt(gen, 2)]
    preds = make_preds(gen, layers=2, n=6)
    asgs = match_batch(preds, gts)
    base = float(triplet_loss(preds, gts, asgs).total.data)

    matched = {int(r) for asg in asgs for _, r, _ in asg.pairs()}
    for layer in preds.layers:
        for task in TASKS:
            for row in range(6):
                if row not in matched:
                    layer[task][1].data[0, row] = gen.uniform(0.1, 0.9, 4)
    again = float(triplet_loss(preds, gts, asgs).total.data)
    assert again == base


def test_loss_total_equals_component_sum():
    gen = rng(32)
    gts = [random_gt(gen, 3)]
    preds = make_preds(gen, layers=2, k=2, n=5)
    asgs = match_batch(preds, gts)
    out = triplet_loss(preds, gts, asgs)
    assert float(out.total.data) == pytest.approx(
        sum(out.components.values()), rel=1e-12)
    assert all(v >= 0.0 for v in out.components.values())
    per_task = out.per_task()
    for task in TASKS:
        want = sum(v for k, v in out.components.items()
                   if k.startswith(task + "."))
        assert per_task[task] == pytest.approx(want, rel=1e-12)


def test_loss_predicate_weight_doubling():
    gen = rng(33)
    gts = [random_gt(gen, 1)]
    preds = make_preds(gen, layers=1, n=4)
    asgs = match_batch(preds, gts)
    label = int(gts[0].labels("p")[0])

    w = np.ones(7)
    w[label] = 3.0
    first = triplet_loss(preds, gts, asgs, predicate_weights=w)
    w2 = w.copy()
    w2[label] = 6.0
    second = triplet_loss(preds, gts, asgs, predicate_weights=w2)
    assert second.components["p.class"] == 2.0 * first.components["p.class"]
    for key in first.components:
        if key != "p.class":
            assert second.components[key] == first.components[key]


def test_loss_eos_scaling():
    gen = rng(34)
    gts = [GroundTruthGraph([]), GroundTruthGraph([])]
    preds = make_preds(gen, layers=2, bs=2, n=5)
    asgs = [Assignment([np.empty(0, dtype=np.int64)], group_size=5)
            for _ in gts]
    lo = triplet_loss(preds, gts, asgs, eos_coef=0.1)
    hi = triplet_loss(preds, gts, asgs, eos_coef=0.2)
    assert set(lo.components) == {f"{t}.eos" for t in TASKS}
    assert float(hi.total.data) == 2.0 * float(lo.total.data)


def test_loss_k_doubling_invariance():
    # duplicating the query set as a second group doubles both the summed
    # terms and the match-count divisor, leaving the loss unchanged
    gen = rng(35)
    gts = [random_gt(gen, 3)]
    single = make_preds(gen, layers=2, k=1, n=6)
    doubled_layers = []
    for layer in single.layers:
        doubled_layers.append({
            t: (Tensor(np.concatenate([layer[t][0].data] * 2, axis=1)),
                Tensor(np.concatenate([layer[t][1].data] * 2, axis=1)))
            for t in TASKS})
    doubled = TripletPredictions(layers=doubled_layers, k_groups=2,
                                 group_size=6)
    loss1 = triplet_loss(single, gts, match_batch(single, gts))
    loss2 = triplet_loss(doubled, gts, match_batch(doubled, gts))
    assert loss2.n_matches == 2 * loss1.n_matches
    assert float(loss2.total.data) == pytest.approx(float(loss1.total.data),
                                                    rel=1e-12)


def test_loss_grads_through_detached_matching():
    # the assignment is a constant of the forward pass: finite differences
    # agree with backward() as long as the eps nudge never flips the argmin
    gen = rng(36)
    gts = [random_gt(gen, 2)]
    params = {}
    layer = {}
    for task in TASKS:
        c = (7 if task == "p" else 13)
        logits = Tensor(gen.standard_normal((1, 4, c)), requires_grad=True)
        boxes = Tensor(np.stack([gen.uniform(0.3, 0.7, (1, 4)),
                                 gen.uniform(0.3, 0.7, (1, 4)),
                                 gen.uniform(0.2, 0.4, (1, 4)),
                                 gen.uniform(0.2, 0.4, (1, 4))], axis=-1),
                       requires_grad=True)
        params[f"{task}.logits"] = logits
        params[f"{task}.boxes"] = boxes
        layer[task] = (logits, boxes)
    preds = TripletPredictions(layers=[layer], k_groups=1, group_size=4)

    def fn():
        asgs = match_batch(preds, gts)
        return triplet_loss(preds, gts, asgs).total

    report = finite_diff_check(fn, params)
    assert report.passed, str(report)


# -- predicate reweighting ----------------------------------------------


def test_predicate_class_weights():
    w = predicate_class_weights(np.array([0.07, 0.7, 0.0007, 0.0]))
    assert w[0] == 1.0                                # f == alpha
    assert w[1] == 1.0                                # raw 0.1^0.75 floors at 1
    assert w[2] == pytest.approx(100.0 ** 0.75, rel=1e-12)
    assert w[3] == 100.0                              # absent class takes the cap

    assert predicate_class_weights(np.array([0.0]), cap=7.5)[0] == 7.5
    with pytest.raises(ValueError):
        predicate_class_weights(np.array([0.1, -0.2]))
