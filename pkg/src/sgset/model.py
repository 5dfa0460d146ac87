"""Full model: patch encoder + triplet decoder under one config object.

ModelConfig is the single source of truth for architecture hyperparameters.
The default values are the desk configuration this package trains end to end;
published_config() returns the large configuration used only for parameter
accounting (training it is out of scope).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .decoder import DecoderVariant, TripletDecoder, TripletPredictions, count_parameters
from .encoder import ImageEncoder, ImageFeatures
from .nn import prefix_params
from .tensor import Tensor, rng


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "STS"
    relation_fusion: bool | None = None    # None = the variant's default
    triplet_attention: bool | None = None
    d: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn: int = 256
    n_queries: int = 20
    k_groups: int = 1
    patch: int = 8
    backbone_channels: int = 64
    image_size: int = 64
    n_entity: int = 12
    n_predicate: int = 6
    seed: int = 0

    def decoder_variant(self) -> DecoderVariant:
        return DecoderVariant.make(self.variant, self.relation_fusion,
                                   self.triplet_attention)

    def count_table(self) -> dict[str, int]:
        return count_parameters(
            self.decoder_variant(), d=self.d, heads=self.heads,
            dec_layers=self.dec_layers, ffn=self.ffn, n_queries=self.n_queries,
            k_groups=self.k_groups, n_entity=self.n_entity,
            n_predicate=self.n_predicate)


def published_config(**overrides) -> ModelConfig:
    """The published large configuration, for parameter-count identities only."""
    base = ModelConfig(d=256, heads=8, enc_layers=6, dec_layers=6, ffn=2048,
                       n_queries=300, k_groups=3, n_entity=150, n_predicate=50,
                       image_size=512, patch=32, backbone_channels=256)
    return replace(base, **overrides) if overrides else base


class SceneGraphModel:
    """Encoder + decoder; owns parameter naming and checkpoint round-trips."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        gen = rng(config.seed)
        self.encoder = ImageEncoder(config.d, config.heads, config.enc_layers,
                                    config.ffn, config.patch,
                                    config.backbone_channels, gen, self.dtype)
        self.decoder = TripletDecoder(config.decoder_variant(),
                                      config.n_queries, config.k_groups,
                                      config.d, config.heads, config.dec_layers,
                                      config.ffn, config.n_entity,
                                      config.n_predicate, gen, self.dtype)

    def __call__(self, images: Tensor | np.ndarray,
                 return_attention: bool = False) -> TripletPredictions:
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=self.dtype))
        feat: ImageFeatures = self.encoder(images)
        return self.decoder.decode(feat, batch_size=images.shape[0],
                                   return_attention=return_attention)

    def parameters(self) -> dict[str, Tensor]:
        out = prefix_params("encoder", self.encoder.parameters())
        out.update(prefix_params("decoder", self.decoder.parameters()))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # -- persistence ---------------------------------------------------

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"model_config": asdict(self.config)}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.parameters(), meta)

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        unexpected = sorted(set(arrays) - set(params))
        if missing or unexpected:
            raise CheckpointError(
                f"checkpoint does not match model: missing={missing[:5]} "
                f"unexpected={unexpected[:5]}")
        for name, p in params.items():
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"checkpoint entry {name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    @staticmethod
    def from_checkpoint(path, dtype=np.float32) -> tuple["SceneGraphModel", dict]:
        arrays, meta = load_checkpoint(path)
        if "model_config" not in meta:
            raise CheckpointError(f"{path}: metadata lacks model_config")
        config = ModelConfig(**meta["model_config"])
        model = SceneGraphModel(config, dtype)
        model.load_state(arrays)
        return model, meta
