"""Command-line surface: train, eval, ablate, params, dump-attention.

Configuration is a flat key=value text file (one pair per line, # comments);
--set key=value flags override file values and both override the defaults
baked into RunConfig. Every artifact a command produces lands under --out.
Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .checkpoint import (CheckpointError, load_checkpoint, save_checkpoint)
from .data import (AnnotationError, GenerationError, PREDICATES, DatasetSplit,
                   SyntheticSpec, build_splits, entity_class_names)
from .decoder import TASKS, TripletPredictions
from .encoder import count_encoder_parameters
from .matching import DEFAULT_COST_WEIGHTS, DEFAULT_EOS_COEF
from .metrics import evaluate, score_triplets
from .model import ModelConfig, SceneGraphModel
from .tensor import NumericError
from .train import train_model

VARIANTS = ("STA", "STS", "TTS")
TRIBOOL = ("default", "on", "off")


class UsageError(Exception):
    """Bad flags, config keys/values, or missing inputs; exits with code 2."""


@dataclass
class RunConfig:
    """Every knob a command reads, in config-file key order."""

    # architecture
    variant: str = "STS"
    relation_fusion: str = "default"      # default | on | off
    triplet_attention: str = "default"
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
    # loss
    cls_weight: float = DEFAULT_COST_WEIGHTS["cls"]
    l1_weight: float = DEFAULT_COST_WEIGHTS["l1"]
    giou_weight: float = DEFAULT_COST_WEIGHTS["giou"]
    eos_coef: float = DEFAULT_EOS_COEF
    reweight: bool = False
    top_k_predicates: int = 3
    # optimizer
    lr: float = 1e-3
    steps: int = 200
    batch_size: int = 4
    weight_decay: float = 1e-4
    # seeds
    seed: int = 0
    data_seed: int = 0
    train_seed: int = 0
    # synthetic dataset
    n_train: int = 20
    n_test: int = 10
    min_entities: int = 2
    max_entities: int = 5
    max_triplets: int = 12
    skewed_predicates: bool = False
    # output
    out: str = "runs/run"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {VARIANTS}, got "
                             f"{self.variant!r}")
        for name in ("relation_fusion", "triplet_attention"):
            if getattr(self, name) not in TRIBOOL:
                raise UsageError(f"{name} must be one of {TRIBOOL}")
        positive = ("d", "heads", "enc_layers", "dec_layers", "ffn", "n_queries",
                    "k_groups", "patch", "backbone_channels", "image_size",
                    "batch_size", "n_train", "n_test", "top_k_predicates")
        for name in positive:
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.steps < 0:
            raise UsageError("steps must be >= 0")
        if self.lr <= 0:
            raise UsageError("lr must be positive")

    def _tribool(self, name: str) -> bool | None:
        value = getattr(self, name)
        return None if value == "default" else value == "on"

    def model_config(self, **overrides) -> ModelConfig:
        base = dict(
            variant=self.variant,
            relation_fusion=self._tribool("relation_fusion"),
            triplet_attention=self._tribool("triplet_attention"),
            d=self.d, heads=self.heads, enc_layers=self.enc_layers,
            dec_layers=self.dec_layers, ffn=self.ffn,
            n_queries=self.n_queries, k_groups=self.k_groups,
            patch=self.patch, backbone_channels=self.backbone_channels,
            image_size=self.image_size, seed=self.seed)
        base.update(overrides)
        return ModelConfig(**base)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(image_size=self.image_size,
                             min_entities=self.min_entities,
                             max_entities=self.max_entities,
                             max_triplets=self.max_triplets,
                             seed=self.data_seed,
                             skewed_predicates=self.skewed_predicates)

    def cost_weights(self) -> dict[str, float]:
        return {"cls": self.cls_weight, "l1": self.l1_weight,
                "giou": self.giou_weight}

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def _parse_value(name: str, kind: type, raw: str):
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError as e:
        raise UsageError(f"{name}: {e}") from e


def build_config(config_path: str | None, overrides: list[str],
                 out: str | None) -> RunConfig:
    kinds = {f.name: f.type for f in fields(RunConfig)}
    # dataclass field types arrive as strings under `from __future__ annotations`
    resolve = {"int": int, "float": float, "bool": bool, "str": str}
    kinds = {k: resolve[v] if isinstance(v, str) else v for k, v in kinds.items()}

    pairs: list[tuple[str, str]] = []
    if config_path is not None:
        if not os.path.exists(config_path):
            raise UsageError(f"config file not found: {config_path}")
        with open(config_path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(
                        f"{config_path}:{lineno}: expected key=value, got {line!r}")
                key, _, raw = line.partition("=")
                pairs.append((key.strip(), raw))
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        pairs.append((key.strip(), raw))

    config = RunConfig()
    for key, raw in pairs:
        if key not in kinds:
            raise UsageError(f"unknown config key {key!r}")
        setattr(config, key, _parse_value(key, kinds[key], raw))
    if out is not None:
        config.out = out
    config.validate()
    return config


# -- shared helpers ------------------------------------------------------


def _ensure_out(config: RunConfig) -> str:
    os.makedirs(config.out, exist_ok=True)
    return config.out


def _build_model(config: RunConfig, **overrides) -> SceneGraphModel:
    return SceneGraphModel(config.model_config(**overrides))


def _load_into(config: RunConfig, checkpoint_path: str) -> SceneGraphModel:
    if not os.path.exists(checkpoint_path):
        raise UsageError(f"checkpoint not found: {checkpoint_path}")
    arrays, _ = load_checkpoint(checkpoint_path)
    model = _build_model(config)
    model.load_state(arrays)
    return model


def group0_predictions(preds: TripletPredictions
                       ) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Last-layer, group-0 arrays for one image, keyed by task."""
    rows = preds.group_rows(0)
    last = preds.layers[-1]
    return {t: (last[t][0].data[0, rows].copy(), last[t][1].data[0, rows].copy())
            for t in TASKS}


def _infer_split(model: SceneGraphModel, split: DatasetSplit
                 ) -> list[dict[str, tuple[np.ndarray, np.ndarray]]]:
    out = []
    for scene in split.scenes:
        preds = model(scene.image[None])
        out.append(group0_predictions(preds))
    return out


def _gt_oracle_predictions(split: DatasetSplit, n_queries: int
                           ) -> list[dict[str, tuple[np.ndarray, np.ndarray]]]:
    """Predictions that echo the ground truth with full confidence."""
    n_ent, n_pred = split.n_entity_classes, split.n_predicate_classes
    big = 50.0
    out = []
    for scene in split.scenes:
        s_log = np.zeros((n_queries, n_ent + 1))
        o_log = np.zeros((n_queries, n_ent + 1))
        p_log = np.zeros((n_queries, n_pred + 1))
        s_box = np.full((n_queries, 4), 0.5)
        o_box = np.full((n_queries, 4), 0.5)
        p_box = np.full((n_queries, 4), 0.5)
        for q in range(n_queries):
            if q < scene.graph.m:
                t = scene.graph.triplets[q]
                s_log[q, t.subject_label] = big
                o_log[q, t.object_label] = big
                p_log[q, t.predicate_label] = big
                s_box[q] = (t.subject_box.cx, t.subject_box.cy,
                            t.subject_box.w, t.subject_box.h)
                o_box[q] = (t.object_box.cx, t.object_box.cy,
                            t.object_box.w, t.object_box.h)
                p_box[q] = (t.predicate_box.cx, t.predicate_box.cy,
                            t.predicate_box.w, t.predicate_box.h)
            else:
                s_log[q, n_ent] = big
                o_log[q, n_ent] = big
                p_log[q, n_pred] = big
        out.append({"s": (s_log, s_box), "o": (o_log, o_box), "p": (p_log, p_box)})
    return out


# -- commands ------------------------------------------------------------


def cmd_train(config: RunConfig) -> int:
    out = _ensure_out(config)
    train_split, _ = build_splits(config.synthetic_spec(),
                                  config.n_train, config.n_test)
    model = _build_model(config)
    log_path = os.path.join(out, "train_log.txt")
    with open(log_path, "w", encoding="utf-8") as log_file:
        def log(line: str) -> None:
            log_file.write(line + "\n")
            print(line)

        train_model(model, train_split,
                    steps=config.steps, batch_size=config.batch_size,
                    lr=config.lr, seed=config.train_seed,
                    weight_decay=config.weight_decay,
                    reweight_predicates=config.reweight,
                    eos_coef=config.eos_coef,
                    cost_weights=config.cost_weights(),
                    log=log,
                    diagnostics_path=os.path.join(out, "diverged_batch.ckpt"))
    ckpt_path = os.path.join(out, "checkpoint.ckpt")
    model.save(ckpt_path, extra_meta={"steps": config.steps,
                                      "version": __version__})
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as f:
        f.write(config.to_text())
    print(f"checkpoint written to {ckpt_path}")
    return 0


def cmd_eval(config: RunConfig, checkpoint_path: str, split_name: str,
             gt_oracle: bool) -> int:
    out = _ensure_out(config)
    train_split, test_split = build_splits(config.synthetic_spec(),
                                           config.n_train, config.n_test)
    split = train_split if split_name == "train" else test_split
    if gt_oracle:
        per_image = _gt_oracle_predictions(split, config.n_queries)
    else:
        model = _load_into(config, checkpoint_path)
        per_image = _infer_split(model, split)
    report = evaluate(per_image, split.graphs(),
                      train_combos=train_split.label_triples(),
                      n_predicates=split.n_predicate_classes,
                      top_k_predicates=config.top_k_predicates)
    report_path = os.path.join(out, f"metrics_{split_name}.txt")
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(report.to_text())
    sys.stdout.write(report.to_text())
    print(f"report written to {report_path}")
    return 0


ABLATION_ROWS = (
    # variant, relation fusion, triplet attention; mirrors the published
    # ablation axes: baselines, then feature toggles, then the parallel-stacks
    # variant. (None, None) means the variant's own defaults.
    ("STA", None, None),
    ("STS", False, False),
    ("STS", True, False),
    ("STS", False, True),
    ("STS", True, True),
    ("TTS", True, None),
)


def cmd_ablate(config: RunConfig, k_set: list[int]) -> int:
    out = _ensure_out(config)
    spec = config.synthetic_spec()
    train_split, test_split = build_splits(spec, config.n_train, config.n_test)
    lines = [f"{'variant':<8}{'rq':<6}{'tsa':<6}{'K':<4}{'params':>10}"
             f"{'R@20':>9}{'mR@20':>9}{'hR@20':>9}"]
    results = []
    for k in k_set:
        for variant, rq, tsa in ABLATION_ROWS:
            mc_kwargs = dict(variant=variant, k_groups=k)
            if variant != "STA":
                mc_kwargs["relation_fusion"] = rq
                mc_kwargs["triplet_attention"] = tsa
            else:
                mc_kwargs["relation_fusion"] = None
                mc_kwargs["triplet_attention"] = None
            model = _build_model(config, **mc_kwargs)
            train_model(model, train_split,
                        steps=config.steps, batch_size=config.batch_size,
                        lr=config.lr, seed=config.train_seed,
                        weight_decay=config.weight_decay,
                        reweight_predicates=config.reweight,
                        eos_coef=config.eos_coef,
                        cost_weights=config.cost_weights())
            report = evaluate(_infer_split(model, test_split),
                              test_split.graphs(),
                              n_predicates=test_split.n_predicate_classes,
                              top_k_predicates=config.top_k_predicates)
            n_params = model.n_params()
            results.append((variant, rq, tsa, k, n_params, report))

            def fmt(value: float | None) -> str:
                return "NA".rjust(9) if value is None else f"{value:9.2f}"

            def flag(v: bool | None) -> str:
                return "-" if v is None else ("on" if v else "off")

            lines.append(f"{variant:<8}{flag(rq):<6}{flag(tsa):<6}{k:<4}"
                         f"{n_params:>10}{fmt(report['R@20'])}"
                         f"{fmt(report['mR@20'])}{fmt(report['hR@20'])}")
            print(lines[-1])
    table = "\n".join(lines) + "\n"
    path = os.path.join(out, "ablation.txt")
    with open(path, "w", encoding="utf-8") as f:
        f.write(table)
    print(f"table written to {path}")
    return 0


def cmd_params(config: RunConfig) -> int:
    enc = count_encoder_parameters(
        d=config.d, heads=config.heads, enc_layers=config.enc_layers,
        ffn=config.ffn, patch=config.patch,
        backbone_channels=config.backbone_channels)
    mc = config.model_config()
    dec = mc.count_table()
    lines = ["component                 parameters"]
    for name, count in enc.items():
        if name != "total":
            lines.append(f"encoder.{name:<17}{count:>11}")
    for name, count in dec.items():
        if name != "total":
            lines.append(f"decoder.{name:<17}{count:>11}")
    total = enc["total"] + dec["total"]
    lines.append(f"{'encoder total':<25}{enc['total']:>11}")
    lines.append(f"{'decoder total':<25}{dec['total']:>11}")
    lines.append(f"{'model total':<25}{total:>11}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    out = _ensure_out(config)
    with open(os.path.join(out, "params.txt"), "w", encoding="utf-8") as f:
        f.write(text)
    return 0


def cmd_dump_attention(config: RunConfig, checkpoint_path: str,
                       split_name: str, index: int) -> int:
    out = _ensure_out(config)
    train_split, test_split = build_splits(config.synthetic_spec(),
                                           config.n_train, config.n_test)
    split = train_split if split_name == "train" else test_split
    if not (0 <= index < len(split.scenes)):
        raise UsageError(f"--index {index} outside {split_name} split of "
                         f"{len(split.scenes)} scenes")
    model = _load_into(config, checkpoint_path)
    scene = split.scenes[index]
    preds = model(scene.image[None], return_attention=True)

    tasks = TASKS if model.config.decoder_variant().task_specific else ("q",)
    rows = preds.group_rows(0)
    maps = []
    for t in tasks:
        weights = preds.attention[t]          # (1, heads, K*N, H*W)
        maps.append(weights[0].mean(axis=0)[rows])
    stacked = np.stack(maps).astype(np.float32)  # (tasks, N, H*W)

    att_path = os.path.join(out, "attention.ckpt")
    save_checkpoint(att_path, {"maps": stacked},
                    meta={"tasks": list(tasks), "queries": stacked.shape[1],
                          "tokens": stacked.shape[2], "scene": scene.image_id,
                          "split": split_name})

    cands = score_triplets(group0_predictions(preds),
                           top_k_predicates=config.top_k_predicates)[:10]
    ent = entity_class_names()
    txt_lines = []
    for rank, c in enumerate(cands, start=1):
        s_name = ent[c.subject_label] if c.subject_label < len(ent) else str(c.subject_label)
        o_name = ent[c.object_label] if c.object_label < len(ent) else str(c.object_label)
        p_name = (PREDICATES[c.predicate_label]
                  if c.predicate_label < len(PREDICATES) else str(c.predicate_label))
        txt_lines.append(f"rank={rank} score={c.score:.4f} query={c.query_index} "
                         f"subject={s_name} predicate={p_name} object={o_name}")
    top_path = os.path.join(out, "top_triplets.txt")
    with open(top_path, "w", encoding="utf-8") as f:
        f.write("\n".join(txt_lines) + "\n")
    print(f"attention maps {stacked.shape} written to {att_path}")
    print(f"top triplets written to {top_path}")
    return 0


# -- argument parsing ----------------------------------------------------


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgset", description="Scene-graph set prediction workbench")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--out", help="output directory (overrides config)")

    common(sub.add_parser("train", help="train a model on synthetic scenes"))

    p_eval = sub.add_parser("eval", help="compute the metric suite")
    common(p_eval)
    p_eval.add_argument("--checkpoint", help="model checkpoint "
                        "(default: <out>/checkpoint.ckpt)")
    p_eval.add_argument("--split", choices=("train", "test"), default="test")
    p_eval.add_argument("--gt-oracle", action="store_true",
                        help="score the ground truth as predictions")

    p_abl = sub.add_parser("ablate", help="train/eval the variant grid")
    common(p_abl)
    p_abl.add_argument("--k-set", default="1",
                       help="comma-separated query-group counts (default 1)")

    common(sub.add_parser("params", help="symbolic parameter accounting"))

    p_att = sub.add_parser("dump-attention",
                           help="export last-layer cross-attention maps")
    common(p_att)
    p_att.add_argument("--checkpoint")
    p_att.add_argument("--split", choices=("train", "test"), default="test")
    p_att.add_argument("--index", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _make_parser().parse_args(argv)
    try:
        config = build_config(args.config, args.set, args.out)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            ckpt = args.checkpoint or os.path.join(config.out, "checkpoint.ckpt")
            return cmd_eval(config, ckpt, args.split, args.gt_oracle)
        if args.command == "ablate":
            try:
                k_set = [int(v) for v in args.k_set.split(",") if v.strip()]
            except ValueError as e:
                raise UsageError(f"--k-set: {e}") from e
            if not k_set or any(k < 1 for k in k_set):
                raise UsageError("--k-set needs positive integers")
            return cmd_ablate(config, k_set)
        if args.command == "params":
            return cmd_params(config)
        if args.command == "dump-attention":
            ckpt = args.checkpoint or os.path.join(config.out, "checkpoint.ckpt")
            return cmd_dump_attention(config, ckpt, args.split, args.index)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, NumericError, GenerationError, AnnotationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
