"""Unified triplet decoder with task-specific queries, plus its two baselines.

Three variants share this module:

  STA  one task-agnostic query set, a plain decoder stack, and the single
       output stream feeding all prediction heads.
  STS  subject/object/predicate query sets decoded by ONE shared stack; each
       layer optionally starts with a per-triplet fusion MLP (relation_fusion)
       and a within-triplet self-attention (triplet_attention), then runs the
       three streams through the shared layer stacked along the batch axis.
  TTS  the same task-specific queries, but three independent decoder stacks,
       one per task (the expensive baseline the shared stack replaces).

All layers are post-norm residual. Query positional encodings are learned,
layer-independent embeddings; content queries start at zero, like DETR target
queries. Prediction heads (shared entity classifier for subjects and objects,
separate predicate classifier, one box MLP used by all tasks) run after every
layer so each layer's predictions can be supervised.

Queries are organized as K groups of N. Group g occupies rows [g*N, (g+1)*N)
of every (K*N, d) query tensor; with K > 1 the task self-attention receives a
block-diagonal mask so groups never see each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import ImageFeatures
from .nn import LayerNorm, Linear, Mlp, MultiHeadAttention, prefix_params
from .tensor import ShapeError, Tensor, cat, stack

TASKS = ("s", "o", "p")

VARIANT_TAGS = ("STA", "STS", "TTS")


@dataclass(frozen=True)
class DecoderVariant:
    """Which decoder architecture to build, with its optional components.

    relation_fusion and triplet_attention only exist for task-specific
    variants; the constructor applies each tag's defaults (STS gets both, TTS
    gets fusion only, STA gets neither) and rejects impossible combinations.
    """

    tag: str
    relation_fusion: bool
    triplet_attention: bool

    @staticmethod
    def make(tag: str, relation_fusion: bool | None = None,
             triplet_attention: bool | None = None) -> "DecoderVariant":
        if tag not in VARIANT_TAGS:
            raise ValueError(f"unknown variant tag {tag!r}, expected one of {VARIANT_TAGS}")
        if tag == "STA":
            if relation_fusion or triplet_attention:
                raise ValueError(
                    "STA has one task-agnostic query set; relation fusion and "
                    "triplet attention do not apply")
            return DecoderVariant("STA", False, False)
        if tag == "TTS":
            if triplet_attention:
                raise ValueError("TTS decodes tasks in separate stacks; "
                                 "triplet attention does not apply")
            rq = True if relation_fusion is None else relation_fusion
            return DecoderVariant("TTS", rq, False)
        rq = True if relation_fusion is None else relation_fusion
        tsa = True if triplet_attention is None else triplet_attention
        return DecoderVariant("STS", rq, tsa)

    @property
    def task_specific(self) -> bool:
        return self.tag != "STA"


class TaskQuerySet:
    """Learned content embeddings and positional encodings, (K*N, d) each.

    Task-specific sets carry one (content, pe) pair per task; the STA set
    carries a single pair under the task name "q".
    """

    def __init__(self, n_queries: int, k_groups: int, d: int,
                 gen: np.random.Generator, dtype=np.float32,
                 task_specific: bool = True):
        if n_queries < 1 or k_groups < 1:
            raise ValueError(f"need n_queries >= 1 and k_groups >= 1, "
                             f"got {n_queries}, {k_groups}")
        self.n = n_queries
        self.k = k_groups
        self.d = d
        self.task_specific = task_specific
        self.tasks = TASKS if task_specific else ("q",)
        kn = k_groups * n_queries
        self.content = {t: Tensor(np.zeros((kn, d), dtype=dtype), requires_grad=True)
                        for t in self.tasks}
        self.pe = {t: Tensor(gen.standard_normal((kn, d)).astype(dtype),
                             requires_grad=True)
                   for t in self.tasks}

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for t in self.tasks:
            out[f"content.{t}"] = self.content[t]
            out[f"pe.{t}"] = self.pe[t]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())


def group_mask(k_groups: int, n_queries: int) -> np.ndarray | None:
    """Block-diagonal boolean allowed-mask isolating the K query groups."""
    if k_groups == 1:
        return None
    kn = k_groups * n_queries
    mask = np.zeros((kn, kn), dtype=bool)
    for g in range(k_groups):
        lo, hi = g * n_queries, (g + 1) * n_queries
        mask[lo:hi, lo:hi] = True
    return mask


@dataclass
class TripletPredictions:
    """Per-layer, per-task (class logits, boxes); boxes are sigmoid cxcywh.

    layers[l][task] = (logits (bs, K*N, n_classes+1), boxes (bs, K*N, 4)).
    Attention maps are only populated when decode() is asked for them.
    """

    layers: list[dict[str, tuple[Tensor, Tensor]]]
    k_groups: int
    group_size: int
    attention: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def group_rows(self, g: int) -> slice:
        if not 0 <= g < self.k_groups:
            raise ValueError(f"group {g} out of range for K={self.k_groups}")
        return slice(g * self.group_size, (g + 1) * self.group_size)


class RelationFusion:
    """Per-triplet residual update: each task query adds an MLP of [qs;qo;qp].

    One 3-layer MLP (3d -> d -> d -> d, ReLU between) per task; all three
    updates read the pre-update queries, so the op is order-free and strictly
    local to each triplet index.
    """

    def __init__(self, d: int, gen: np.random.Generator, dtype=np.float32):
        self.d = d
        self.mlps = {t: Mlp([3 * d, d, d, d], gen, dtype) for t in TASKS}

    def __call__(self, qs: Tensor, qo: Tensor, qp: Tensor):
        if not (qs.shape == qo.shape == qp.shape):
            raise ShapeError(
                f"task query shapes differ: {qs.shape}, {qo.shape}, {qp.shape}")
        joint = cat([qs, qo, qp], axis=-1)
        return (qs + self.mlps["s"](joint),
                qo + self.mlps["o"](joint),
                qp + self.mlps["p"](joint))

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for t in TASKS:
            out.update(prefix_params(f"mlp.{t}", self.mlps[t].parameters()))
        return out


class TripletSelfAttention:
    """Self-attention inside each triplet, viewed as a length-3 sequence.

    The (bs, K*N, d) streams are stacked to (bs*K*N, 3, d) so that attention
    can only mix a triplet's own subject/object/predicate queries. Task PEs
    enter q and k; residual + post-norm on the content path.
    """

    def __init__(self, d: int, heads: int, gen: np.random.Generator,
                 dtype=np.float32):
        self.attn = MultiHeadAttention(d, heads, gen, dtype)
        self.norm = LayerNorm(d, dtype)

    def __call__(self, qs: Tensor, qo: Tensor, qp: Tensor,
                 pes: Tensor, peo: Tensor, pep: Tensor):
        bs, kn, d = qs.shape
        x = stack([qs, qo, qp], axis=2)            # (bs, KN, 3, d)
        pe = stack([pes, peo, pep], axis=1)        # (KN, 3, d), broadcasts over bs
        qk = (x + pe).reshape(bs * kn, 3, d)
        v = x.reshape(bs * kn, 3, d)
        y = self.norm(v + self.attn(qk, qk, v))
        y = y.reshape(bs, kn, 3, d)
        return y[:, :, 0], y[:, :, 1], y[:, :, 2]

    def parameters(self) -> dict[str, Tensor]:
        out = prefix_params("attn", self.attn.parameters())
        out.update(prefix_params("norm", self.norm.parameters()))
        return out


class DecoderLayer:
    """Standard post-norm decoder layer: masked self-attention over queries,
    cross-attention into the image tokens (image PE on keys only), FFN."""

    def __init__(self, d: int, heads: int, ffn: int, gen: np.random.Generator,
                 dtype=np.float32):
        self.self_attn = MultiHeadAttention(d, heads, gen, dtype)
        self.norm1 = LayerNorm(d, dtype)
        self.cross_attn = MultiHeadAttention(d, heads, gen, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.ffn = Mlp([d, ffn, d], gen, dtype)
        self.norm3 = LayerNorm(d, dtype)

    def __call__(self, q: Tensor, q_pe: Tensor, feat: ImageFeatures,
                 self_mask: np.ndarray | None = None,
                 return_attention: bool = False):
        qk = q + q_pe
        q = self.norm1(q + self.self_attn(qk, qk, q, mask=self_mask))
        keys = feat.tokens + feat.pe
        if return_attention:
            attended, weights = self.cross_attn(q + q_pe, keys, feat.tokens,
                                                return_weights=True)
        else:
            attended, weights = self.cross_attn(q + q_pe, keys, feat.tokens), None
        q = self.norm2(q + attended)
        q = self.norm3(q + self.ffn(q))
        return (q, weights) if return_attention else q

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(prefix_params("self_attn", self.self_attn.parameters()))
        out.update(prefix_params("norm1", self.norm1.parameters()))
        out.update(prefix_params("cross_attn", self.cross_attn.parameters()))
        out.update(prefix_params("norm2", self.norm2.parameters()))
        out.update(prefix_params("ffn", self.ffn.parameters()))
        out.update(prefix_params("norm3", self.norm3.parameters()))
        return out


class TripletHeads:
    """Prediction heads shared across decoder layers (and, where it applies,
    across tasks): one entity classifier for subject and object streams, one
    predicate classifier, one 3-layer box MLP squashed through a sigmoid."""

    def __init__(self, d: int, n_entity: int, n_predicate: int,
                 gen: np.random.Generator, dtype=np.float32):
        self.entity_cls = Linear(d, n_entity + 1, gen, dtype)
        self.predicate_cls = Linear(d, n_predicate + 1, gen, dtype)
        self.box_mlp = Mlp([d, d, d, 4], gen, dtype)

    def __call__(self, zs: Tensor, zo: Tensor, zp: Tensor) -> dict[str, tuple[Tensor, Tensor]]:
        return {
            "s": (self.entity_cls(zs), self.box_mlp(zs).sigmoid()),
            "o": (self.entity_cls(zo), self.box_mlp(zo).sigmoid()),
            "p": (self.predicate_cls(zp), self.box_mlp(zp).sigmoid()),
        }

    def parameters(self) -> dict[str, Tensor]:
        out = prefix_params("entity_cls", self.entity_cls.parameters())
        out.update(prefix_params("predicate_cls", self.predicate_cls.parameters()))
        out.update(prefix_params("box_mlp", self.box_mlp.parameters()))
        return out


def _tile_batch(t: Tensor, bs: int) -> Tensor:
    """(KN, d) parameter -> (bs, KN, d) stream (graph-tracked repeat)."""
    row = t.reshape(1, *t.shape)
    if bs == 1:
        return row
    return cat([row] * bs, axis=0)


class TripletDecoder:
    """Query sets + decoder layers + heads for one variant. See module doc."""

    def __init__(self, variant: DecoderVariant, n_queries: int, k_groups: int,
                 d: int, heads: int, layers: int, ffn: int, n_entity: int,
                 n_predicate: int, gen: np.random.Generator, dtype=np.float32):
        if layers < 1:
            raise ValueError(f"decoder needs at least one layer, got {layers}")
        self.variant = variant
        self.d = d
        self.n_layers = layers
        self.queries = TaskQuerySet(n_queries, k_groups, d, gen, dtype,
                                    task_specific=variant.task_specific)
        self.fusions = ([RelationFusion(d, gen, dtype) for _ in range(layers)]
                        if variant.relation_fusion else [])
        self.triplet_attns = ([TripletSelfAttention(d, heads, gen, dtype)
                               for _ in range(layers)]
                              if variant.triplet_attention else [])
        if variant.tag == "TTS":
            self.stacks = {t: [DecoderLayer(d, heads, ffn, gen, dtype)
                               for _ in range(layers)] for t in TASKS}
        else:
            self.stacks = {"shared": [DecoderLayer(d, heads, ffn, gen, dtype)
                                      for _ in range(layers)]}
        self.heads = TripletHeads(d, n_entity, n_predicate, gen, dtype)
        self._self_mask = group_mask(k_groups, n_queries)

    # -- forward -------------------------------------------------------

    def predict_heads(self, zs: Tensor, zo: Tensor, zp: Tensor):
        return self.heads(zs, zo, zp)

    def decode(self, feat: ImageFeatures, batch_size: int,
               return_attention: bool = False) -> TripletPredictions:
        if feat.tokens.shape[-1] != self.d:
            raise ShapeError(f"feature width {feat.tokens.shape[-1]} != decoder "
                             f"width {self.d}")
        if self.variant.task_specific:
            return self._decode_task_specific(feat, batch_size, return_attention)
        return self._decode_single(feat, batch_size, return_attention)

    def _decode_single(self, feat: ImageFeatures, bs: int,
                       return_attention: bool) -> TripletPredictions:
        q = _tile_batch(self.queries.content["q"], bs)
        pe = self.queries.pe["q"]
        preds = TripletPredictions(layers=[], k_groups=self.queries.k,
                                   group_size=self.queries.n)
        stack_layers = self.stacks["shared"]
        for li, layer in enumerate(stack_layers):
            want = return_attention and li == len(stack_layers) - 1
            if want:
                q, weights = layer(q, pe, feat, self_mask=self._self_mask,
                                   return_attention=True)
                preds.attention["q"] = weights
            else:
                q = layer(q, pe, feat, self_mask=self._self_mask)
            preds.layers.append(self.heads(q, q, q))
        return preds

    def _decode_task_specific(self, feat: ImageFeatures, bs: int,
                              return_attention: bool) -> TripletPredictions:
        qs = _tile_batch(self.queries.content["s"], bs)
        qo = _tile_batch(self.queries.content["o"], bs)
        qp = _tile_batch(self.queries.content["p"], bs)
        pes, peo, pep = (self.queries.pe[t] for t in TASKS)
        preds = TripletPredictions(layers=[], k_groups=self.queries.k,
                                   group_size=self.queries.n)
        for li in range(self.n_layers):
            if self.fusions:
                qs, qo, qp = self.fusions[li](qs, qo, qp)
            if self.triplet_attns:
                qs, qo, qp = self.triplet_attns[li](qs, qo, qp, pes, peo, pep)
            want = return_attention and li == self.n_layers - 1
            if self.variant.tag == "TTS":
                streams = {}
                for t, q in zip(TASKS, (qs, qo, qp)):
                    out = self.stacks[t][li](q, self.queries.pe[t], feat,
                                             self_mask=self._self_mask,
                                             return_attention=want)
                    if want:
                        streams[t], preds.attention[t] = out
                    else:
                        streams[t] = out
                qs, qo, qp = streams["s"], streams["o"], streams["p"]
            else:
                qs, qo, qp = self._shared_layer(li, qs, qo, qp, feat, bs,
                                                want, preds)
            preds.layers.append(self.heads(qs, qo, qp))
        return preds

    def _shared_layer(self, li: int, qs: Tensor, qo: Tensor, qp: Tensor,
                      feat: ImageFeatures, bs: int, want_attention: bool,
                      preds: TripletPredictions):
        """Run one shared layer over the three streams stacked on the batch axis."""
        q_all = cat([qs, qo, qp], axis=0)                       # (3bs, KN, d)
        pe_all = cat([_tile_batch(self.queries.pe[t], bs) for t in TASKS], axis=0)
        feat_all = ImageFeatures(tokens=cat([feat.tokens] * 3, axis=0),
                                 pe=feat.pe, h=feat.h, w=feat.w)
        layer = self.stacks["shared"][li]
        if want_attention:
            q_all, weights = layer(q_all, pe_all, feat_all,
                                   self_mask=self._self_mask, return_attention=True)
            for i, t in enumerate(TASKS):
                preds.attention[t] = weights[i * bs:(i + 1) * bs]
        else:
            q_all = layer(q_all, pe_all, feat_all, self_mask=self._self_mask)
        return (q_all[0 * bs:1 * bs], q_all[1 * bs:2 * bs], q_all[2 * bs:3 * bs])

    # -- bookkeeping ---------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out = prefix_params("queries", self.queries.parameters())
        for i, fusion in enumerate(self.fusions):
            out.update(prefix_params(f"fusion.{i}", fusion.parameters()))
        for i, tsa in enumerate(self.triplet_attns):
            out.update(prefix_params(f"triplet_attn.{i}", tsa.parameters()))
        for name, stack_layers in self.stacks.items():
            for i, layer in enumerate(stack_layers):
                out.update(prefix_params(f"stack.{name}.{i}", layer.parameters()))
        out.update(prefix_params("heads", self.heads.parameters()))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())


# -- symbolic parameter accounting --------------------------------------


def count_parameters(variant: DecoderVariant, *, d: int, heads: int,
                     dec_layers: int, ffn: int, n_queries: int, k_groups: int,
                     n_entity: int, n_predicate: int) -> dict[str, int]:
    """Exact closed-form parameter counts per decoder component.

    Matches a built TripletDecoder exactly (asserted in tests); `heads` does
    not change any count but is part of the config the table describes.
    """
    del heads  # head count repartitions d, it never changes parameter counts
    kn = k_groups * n_queries

    def linear(d_in: int, d_out: int) -> int:
        return d_in * d_out + d_out

    attn = 4 * linear(d, d)
    norm = 2 * d
    fusion_mlp = linear(3 * d, d) + linear(d, d) + linear(d, d)
    stack_layer = attn + norm + attn + norm + (linear(d, ffn) + linear(ffn, d)) + norm

    counts = {
        "query_embeddings": (6 if variant.task_specific else 2) * kn * d,
        "relation_fusion": dec_layers * 3 * fusion_mlp if variant.relation_fusion else 0,
        "triplet_attention": dec_layers * (attn + norm) if variant.triplet_attention else 0,
        "decoder_stack": dec_layers * stack_layer * (3 if variant.tag == "TTS" else 1),
        "heads": (linear(d, n_entity + 1) + linear(d, n_predicate + 1)
                  + linear(d, d) + linear(d, d) + linear(d, 4)),
    }
    counts["total"] = sum(counts.values())
    return counts
