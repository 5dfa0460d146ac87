"""Optimizer and training loop for the set-prediction model.

The loop is the standard one-stage recipe: forward all decoder layers,
aggregate per-layer matching costs, run one Hungarian pass per query group,
apply the matched-pair losses at every layer, and take an adaptive-moment
step with decoupled weight decay. Everything is driven by explicit seeds;
two runs with the same inputs produce byte-identical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import DatasetSplit
from .matching import (DEFAULT_COST_WEIGHTS, DEFAULT_EOS_COEF, LossBreakdown,
                       match_batch, predicate_class_weights, triplet_loss)
from .model import SceneGraphModel
from .tensor import NumericError, Tensor, rng

_BATCH_STREAM = 1013  # seed-tuple tag for the batch sampler


def default_decay_filter(name: str, param: Tensor) -> bool:
    """Decay weight matrices only; biases, norm scales and the learned query
    embeddings train without shrinkage."""
    return name.endswith(".w") and param.data.ndim >= 2


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Decay multiplies the parameter directly by (1 - lr*wd) before the moment
    update, so it never enters the moment estimates. Moments are kept in the
    parameter dtype.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4, decay_filter=default_decay_filter):
        if lr <= 0:
            raise ValueError(f"step size must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_filter = decay_filter
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self._v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and self.decay_filter(name, p):
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class StepRecord:
    step: int
    loss: float
    per_task: dict[str, float]
    n_matches: int

    def format_line(self) -> str:
        tasks = " ".join(f"{t}={v:.4f}" for t, v in sorted(self.per_task.items()))
        return (f"step={self.step:04d} loss={self.loss:.4f} {tasks} "
                f"matches={self.n_matches}")


@dataclass
class TrainResult:
    records: list[StepRecord] = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])


def train_model(model: SceneGraphModel, split: DatasetSplit, *,
                steps: int, batch_size: int = 4, lr: float = 1e-3,
                seed: int = 0, weight_decay: float = 1e-4,
                reweight_predicates: bool = False,
                eos_coef: float = DEFAULT_EOS_COEF,
                cost_weights: dict[str, float] = DEFAULT_COST_WEIGHTS,
                log=None, diagnostics_path: str | None = None) -> TrainResult:
    """Run `steps` optimizer steps over scenes sampled from `split`.

    `log` is called with one structured text line per step. A non-finite loss
    aborts with NumericError after dumping the offending batch (images, scene
    ids, loss components) to `diagnostics_path` when given.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not split.scenes:
        raise ValueError("empty training split")
    for s in split.scenes:
        if s.image is None:
            raise ValueError(f"scene {s.image_id} has no image data")

    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    weights = (predicate_class_weights(split.predicate_freqs)
               if reweight_predicates else None)
    sampler = rng((seed, _BATCH_STREAM))
    n = len(split.scenes)
    result = TrainResult()

    for step in range(steps):
        idx = sampler.choice(n, size=min(batch_size, n), replace=batch_size > n)
        images = np.stack([split.scenes[i].image for i in idx])
        gts = [split.scenes[i].graph for i in idx]

        preds = model(images)
        assignments = match_batch(preds, gts, cost_weights)
        breakdown: LossBreakdown = triplet_loss(
            preds, gts, assignments, predicate_weights=weights,
            eos_coef=eos_coef, l1_weight=cost_weights["l1"],
            giou_weight=cost_weights["giou"])

        loss_value = float(breakdown.total.data)
        if not np.isfinite(loss_value):
            if diagnostics_path is not None:
                save_checkpoint(
                    diagnostics_path,
                    {"images": images,
                     # container stores floats only; ids are small and exact
                     "scene_ids": np.array([split.scenes[i].image_id for i in idx],
                                           dtype=np.float64)},
                    meta={"step": step, "loss": repr(loss_value),
                          "components": breakdown.components})
            raise NumericError(
                f"non-finite loss {loss_value} at step {step}"
                + (f"; batch dumped to {diagnostics_path}"
                   if diagnostics_path else ""))

        opt.zero_grad()
        breakdown.total.backward()
        opt.step()

        record = StepRecord(step=step, loss=loss_value,
                            per_task=breakdown.per_task(),
                            n_matches=breakdown.n_matches)
        result.records.append(record)
        if log is not None:
            log(record.format_line())
    return result
