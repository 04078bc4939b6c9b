"""Gradient-and-opacity-aware pruning and the prune/fine-tune loop.

A Gaussian survives a round when its activated opacity OR its accumulated
gradient score reaches the respective population quantile; it is removed
only when both fall strictly below. Thresholds are recomputed from the
current population each round, with fine-tuning in between so opacity and
gradient mass can redistribute before the next cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import render
from .scene import GaussianScene


@dataclass(frozen=True)
class PruneConfig:
    gamma_iter: float               # per-round prune fraction in [0, 1)
    prune_interval: int = 500       # fine-tune steps after each prune
    rounds: int = 1
    final_finetune_steps: int = 5000

    def __post_init__(self):
        if not 0.0 <= self.gamma_iter < 1.0:
            raise ValueError("gamma_iter must be in [0, 1)")
        if self.prune_interval < 0 or self.final_finetune_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")


@dataclass
class PruneReport:
    kept_mask: np.ndarray
    opacity_threshold: float
    gradient_threshold: float
    kept_count: int
    removed_count: int

    def to_dict(self) -> dict:
        def _num(v):
            return None if math.isnan(v) else float(v)

        return {
            "opacity_threshold": _num(self.opacity_threshold),
            "gradient_threshold": _num(self.gradient_threshold),
            "kept_count": self.kept_count,
            "removed_count": self.removed_count,
        }


def quantile(values, gamma: float) -> float:
    """Lower order statistic: element floor(gamma * N) of the sorted values."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("quantile of empty values")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    idx = min(int(math.floor(gamma * vals.size)), vals.size - 1)
    return float(np.sort(vals)[idx])


def gamma_schedule(gamma_target: float, t: int) -> float:
    """Per-round fraction whose t-fold application removes gamma_target overall."""
    if not 0.0 <= gamma_target < 1.0:
        raise ValueError("gamma_target must be in [0, 1)")
    if t < 1:
        raise ValueError("t must be at least 1")
    return 1.0 - (1.0 - gamma_target) ** (1.0 / t)


def gap_prune(scene: GaussianScene, scores, gamma_iter: float):
    """Remove Gaussians whose opacity and gradient score both fall strictly
    below their gamma_iter quantiles. Returns (pruned scene, report)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (scene.count,):
        raise ValueError(f"scores shape {scores.shape} does not match scene count {scene.count}")
    if scene.count and (not np.all(np.isfinite(scores)) or np.any(scores < 0)):
        raise ValueError("scores must be finite and non-negative")
    if not 0.0 <= gamma_iter < 1.0:
        raise ValueError("gamma_iter must be in [0, 1)")
    if scene.count == 0:
        report = PruneReport(
            kept_mask=np.zeros(0, dtype=bool),
            opacity_threshold=math.nan,
            gradient_threshold=math.nan,
            kept_count=0,
            removed_count=0,
        )
        return scene, report
    alpha = scene.activated_opacity()
    thr_alpha = quantile(np.abs(alpha), gamma_iter)
    thr_grad = quantile(np.abs(scores), gamma_iter)
    kept = (np.abs(alpha) >= thr_alpha) | (np.abs(scores) >= thr_grad)
    report = PruneReport(
        kept_mask=kept,
        opacity_threshold=thr_alpha,
        gradient_threshold=thr_grad,
        kept_count=int(kept.sum()),
        removed_count=int((~kept).sum()),
    )
    return scene.take(kept), report


def prune_finetune_loop(
    scene: GaussianScene,
    views,
    cfg: PruneConfig,
    seed: int = 0,
    learning_rates=None,
    score_fn=render.accumulate_scores,
    finetune_fn=render.finetune,
):
    """Alternate {score -> prune -> fine-tune} for cfg.rounds, then run the
    final fine-tune. Returns (scene, per-round PruneReports)."""
    reports = []
    current = scene
    for round_i in range(cfg.rounds):
        scores = score_fn(current, views)
        current, report = gap_prune(current, scores, cfg.gamma_iter)
        reports.append(report)
        current = finetune_fn(
            current, views, cfg.prune_interval,
            learning_rates=learning_rates, seed=seed + round_i,
        )
    current = finetune_fn(
        current, views, cfg.final_finetune_steps,
        learning_rates=learning_rates, seed=seed + cfg.rounds,
    )
    return current, reports
