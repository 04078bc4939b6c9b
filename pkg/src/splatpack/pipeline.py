"""End-to-end compression pipeline: prune/fine-tune, QAT, entropy-encode.

The configuration is a flat, JSON-serializable record; every run is fully
determined by (inputs, config), including the seed, so repeated runs produce
byte-identical containers and reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec, metrics, ply, prune, quant, render
from .scene import ATTRIBUTE_NAMES, GaussianScene


@dataclass
class PipelineConfig:
    """Flat, JSON-serializable pipeline settings.

    Step-count defaults are desk scale so a full run finishes in seconds;
    production-scale runs typically use rounds=10, prune_interval=500,
    final_finetune_steps=5000, qat_steps=5000.
    """

    seed: int
    gamma_iter: float | None = None
    gamma_target: float | None = None
    rounds: int = 4
    prune_interval: int = 50
    final_finetune_steps: int = 200
    qat_steps: int = 200
    bits: dict = field(default_factory=dict)      # attribute -> bit depth
    morton: bool = True
    learning_rates: dict = field(default_factory=dict)
    n_holdout: int = 1
    deflate_level: int = codec.DEFAULT_DEFLATE_LEVEL

    def __post_init__(self):
        if (self.gamma_iter is None) == (self.gamma_target is None):
            raise ValueError("exactly one of gamma_iter/gamma_target must be set")
        for name in ("rounds", "prune_interval", "final_finetune_steps", "qat_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in self.bits:
            if name not in ATTRIBUTE_NAMES:
                raise ValueError(f"unknown attribute in bits: {name!r}")
        if self.n_holdout < 0:
            raise ValueError("n_holdout must be non-negative")

    @property
    def effective_gamma_iter(self) -> float:
        if self.gamma_iter is not None:
            return self.gamma_iter
        return prune.gamma_schedule(self.gamma_target, max(self.rounds, 1))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "gamma_iter": self.gamma_iter,
            "gamma_target": self.gamma_target,
            "rounds": self.rounds,
            "prune_interval": self.prune_interval,
            "final_finetune_steps": self.final_finetune_steps,
            "qat_steps": self.qat_steps,
            "bits": dict(self.bits),
            "morton": self.morton,
            "learning_rates": dict(self.learning_rates),
            "n_holdout": self.n_holdout,
            "deflate_level": self.deflate_level,
        }

    @classmethod
    def from_dict(cls, data: dict, overrides=None) -> "PipelineConfig":
        merged = dict(data)
        if overrides:
            merged.update({k: v for k, v in overrides.items() if v is not None})
        if "seed" not in merged or merged["seed"] is None:
            raise ValueError("config must set a seed")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(merged) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**merged)

    @classmethod
    def from_json_file(cls, path, overrides=None) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()), overrides)


@dataclass
class PipelineResult:
    scene: GaussianScene
    qscene: quant.QuantizedScene
    container: bytes
    report: dict


def _view_metrics(decoded_renders, reference_images):
    out = []
    for got, ref in zip(decoded_renders, reference_images):
        p = metrics.psnr(got, ref)
        out.append(
            {
                "psnr": "inf" if p == float("inf") else p,
                "ssim": metrics.ssim(got, ref),
            }
        )
    return out


def _attribute_entropies(qscene: quant.QuantizedScene) -> dict:
    return {
        name: codec.entropy_bits(qscene.codes[name]) if qscene.count else None
        for name in ATTRIBUTE_NAMES
    }


def opacity_histogram(scene: GaussianScene, bins: int = 256) -> list:
    """Histogram of activated opacity over equal-width bins on [0, 1]."""
    alpha = scene.activated_opacity()
    hist, _ = np.histogram(alpha, bins=bins, range=(0.0, 1.0))
    return [int(v) for v in hist]


def run_pipeline(scene: GaussianScene, views, cfg: PipelineConfig) -> PipelineResult:
    """Prune/fine-tune, QAT, and encode a scene; report every stage."""
    if cfg.n_holdout >= len(views):
        raise ValueError("n_holdout must leave at least one training view")
    split = len(views) - cfg.n_holdout
    train_views = views[:split]
    eval_views = views[split:] if cfg.n_holdout else views

    baseline_renders = [render.rasterize(scene, cam) for cam, _ in eval_views]
    states0 = quant.resolve_steps(scene, quant.default_states(cfg.bits))
    entropy_before = _attribute_entropies(quant.quantize_scene(scene, states0))

    prune_cfg = prune.PruneConfig(
        gamma_iter=cfg.effective_gamma_iter,
        prune_interval=cfg.prune_interval,
        rounds=cfg.rounds,
        final_finetune_steps=cfg.final_finetune_steps,
    )
    pruned, reports = prune.prune_finetune_loop(
        scene, train_views, prune_cfg,
        seed=cfg.seed, learning_rates=cfg.learning_rates,
    )

    tuned, states = quant.qat_finetune(
        pruned, train_views, quant.default_states(cfg.bits),
        cfg.qat_steps, learning_rates=cfg.learning_rates, seed=cfg.seed + 1000,
    )

    qscene = quant.quantize_scene(tuned, states)
    container = codec.encode(
        qscene, order="morton" if cfg.morton else "original", level=cfg.deflate_level
    )
    decoded = quant.dequantize_scene(codec.decode(container))
    decoded_renders = [render.rasterize(decoded, cam) for cam, _ in eval_views]

    raw_bytes = len(ply.write_scene(scene))
    report = {
        "config": cfg.to_dict(),
        "input_count": scene.count,
        "counts_per_round": [scene.count] + _counts_after(scene.count, reports),
        "final_count": tuned.count,
        "prune_rounds": [r.to_dict() for r in reports],
        "quantizers": {
            name: {
                "bits": states[name].bits,
                "signed": states[name].signed,
                "step": states[name].step,
            }
            for name in ATTRIBUTE_NAMES
        },
        "entropy_bits_before": entropy_before,
        "entropy_bits_after": _attribute_entropies(qscene),
        "raw_bytes": raw_bytes,
        "container_bytes": len(container),
        "compression_ratio": raw_bytes / len(container),
        "metrics_vs_truth": _view_metrics(decoded_renders, [img for _, img in eval_views]),
        "metrics_vs_input_render": _view_metrics(decoded_renders, baseline_renders),
        "opacity_histogram": opacity_histogram(tuned),
    }
    return PipelineResult(scene=tuned, qscene=qscene, container=container, report=report)


def _counts_after(initial: int, reports) -> list:
    counts = []
    current = initial
    for r in reports:
        current = r.kept_count
        counts.append(current)
    return counts
