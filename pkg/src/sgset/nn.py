"""Neural building blocks: linear, layer norm, multi-head attention, MLP,
and the 2-D sinusoidal positional encoding.

Every block is a small class holding its parameters as Tensors and exposing
`parameters()` as an ordered {name: Tensor} dict; containers join names with
dots, which is also the naming scheme inside checkpoints. Weights use seeded
Xavier-uniform init, biases start at zero, and there is no dropout anywhere:
this package trades regularization for bit-reproducibility.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, cat, stack

NEG_INF = float("-inf")


def prefix_params(prefix: str, params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {f"{prefix}.{name}": p for name, p in params.items()}


def xavier_uniform(shape: tuple[int, int], gen: np.random.Generator, dtype) -> np.ndarray:
    fan_in, fan_out = shape
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return gen.uniform(-limit, limit, size=shape).astype(dtype)


class Linear:
    """y = x W + b with W of shape (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, gen: np.random.Generator,
                 dtype=np.float32):
        self.d_in = d_in
        self.d_out = d_out
        self.w = Tensor(xavier_uniform((d_in, d_out), gen, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(
                f"linear expects trailing width {self.d_in}, got input shape {x.shape}")
        return x.matmul(self.w) + self.b

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}

    def n_params(self) -> int:
        return self.d_in * self.d_out + self.d_out


class LayerNorm:
    """Normalize the trailing axis to mean 0 / variance 1, then scale and shift."""

    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        self.d = d
        self.eps = eps
        self.gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d:
            raise ShapeError(f"layer_norm built for width {self.d}, got {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / (var + self.eps).sqrt()
        return normed * self.gamma + self.beta

    def parameters(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def n_params(self) -> int:
        return 2 * self.d


class Mlp:
    """Stack of linear layers with ReLU between them and none after the last."""

    def __init__(self, widths: list[int], gen: np.random.Generator,
                 dtype=np.float32):
        if len(widths) < 2:
            raise ValueError(f"mlp needs at least two widths, got {widths}")
        self.widths = list(widths)
        self.layers = [Linear(widths[i], widths[i + 1], gen, dtype)
                       for i in range(len(widths) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = layer(x).relu()
        return self.layers[-1](x)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(prefix_params(f"layers.{i}", layer.parameters()))
        return out

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)


class MultiHeadAttention:
    """Scaled dot-product attention with h heads over width d.

    Inputs are (batch, length, d). The optional mask is a boolean "allowed"
    matrix, (Lq, Lk) or (batch, Lq, Lk); disallowed positions get -inf scores
    and therefore exactly zero attention weight. A query row with no allowed
    key is a caller bug and raises instead of producing NaNs.

    Positional encodings are the caller's business: add them to the q and k
    arguments (never to v) before calling, which is how every user in this
    package follows the DETR convention.
    """

    def __init__(self, d: int, h: int, gen: np.random.Generator, dtype=np.float32):
        if d % h != 0:
            raise ValueError(f"width {d} not divisible by {h} heads")
        self.d = d
        self.h = h
        self.scale = 1.0 / float(np.sqrt(d // h))
        self.wq = Linear(d, d, gen, dtype)
        self.wk = Linear(d, d, gen, dtype)
        self.wv = Linear(d, d, gen, dtype)
        self.wo = Linear(d, d, gen, dtype)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 mask: np.ndarray | None = None, return_weights: bool = False):
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
            raise ShapeError(
                f"attention expects (batch, length, width) inputs, got "
                f"{q.shape}, {k.shape}, {v.shape}")
        if k.shape[:2] != v.shape[:2]:
            raise ShapeError(f"key/value lengths differ: {k.shape} vs {v.shape}")
        bs, lq, _ = q.shape
        lk = k.shape[1]

        def split_heads(t: Tensor) -> Tensor:
            return t.reshape(bs, t.shape[1], self.h, self.d // self.h).transpose(0, 2, 1, 3)

        qh = split_heads(self.wq(q))
        kh = split_heads(self.wk(k))
        vh = split_heads(self.wv(v))

        scores = qh.matmul(kh.transpose(0, 1, 3, 2)) * self.scale  # (bs, h, lq, lk)
        if mask is not None:
            allowed = np.asarray(mask, dtype=bool)
            if allowed.shape == (lq, lk):
                allowed = allowed[None, None]
            elif allowed.shape == (bs, lq, lk):
                allowed = allowed[:, None]
            else:
                raise ShapeError(
                    f"mask shape {allowed.shape} fits neither ({lq},{lk}) "
                    f"nor ({bs},{lq},{lk})")
            if not np.all(allowed.any(axis=-1)):
                raise ValueError("attention mask leaves at least one query row "
                                 "with no allowed key")
            scores = scores.masked_fill(~np.broadcast_to(allowed, scores.shape), NEG_INF)

        weights = scores.softmax(axis=-1)
        out = weights.matmul(vh)  # (bs, h, lq, dh)
        out = out.transpose(0, 2, 1, 3).reshape(bs, lq, self.d)
        out = self.wo(out)
        if return_weights:
            return out, weights.data.copy()
        return out

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, proj in (("wq", self.wq), ("wk", self.wk),
                           ("wv", self.wv), ("wo", self.wo)):
            out.update(prefix_params(name, proj.parameters()))
        return out

    def n_params(self) -> int:
        return 4 * self.wq.n_params()


def sinusoidal_pe_2d(h: int, w: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed sine/cosine encoding of an h x w grid, one d-vector per cell.

    Returned token-major as (h*w, d) so it broadcasts against (batch, h*w, d)
    feature tokens. The first d/2 channels encode the row coordinate, the rest
    the column, each as interleaved sin/cos over a geometric frequency ladder
    (base wavelength 10000, as in the original transformer encoding).
    """
    if d % 4 != 0:
        raise ValueError(f"2-D sinusoidal encoding needs d divisible by 4, got {d}")
    half = d // 2
    freqs = 1.0 / (10000.0 ** (np.arange(0, half, 2, dtype=np.float64) / half))

    def encode_axis(n: int) -> np.ndarray:
        angles = np.arange(n, dtype=np.float64)[:, None] * freqs[None, :]
        enc = np.empty((n, half), dtype=np.float64)
        enc[:, 0::2] = np.sin(angles)
        enc[:, 1::2] = np.cos(angles)
        return enc

    rows = encode_axis(h)  # (h, d/2)
    cols = encode_axis(w)  # (w, d/2)
    grid = np.concatenate([
        np.repeat(rows, w, axis=0),          # row code varies slowly
        np.tile(cols, (h, 1)),               # column code varies fast
    ], axis=1)
    return grid.astype(dtype)


__all__ = [
    "Linear", "LayerNorm", "Mlp", "MultiHeadAttention", "sinusoidal_pe_2d",
    "xavier_uniform", "prefix_params", "cat", "stack",
]
