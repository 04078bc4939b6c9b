"""splatpack: compression toolkit for Gaussian-splat scenes.

Pipeline stages: gradient/opacity-aware pruning with fine-tuning, learned
step-size quantization-aware training, and Morton-ordered entropy coding,
driven by a CPU differentiable splatting renderer.
"""

from .scene import (
    ATTRIBUTE_NAMES,
    PARAMS_PER_GAUSSIAN,
    SH_C0,
    GaussianScene,
    activate_opacity,
    covariance3d,
    opacity_to_logit,
)
from .ply import read_scene, write_scene
from .render import (
    Camera,
    SceneGradients,
    accumulate_scores,
    backward,
    finetune,
    loss,
    project,
    rasterize,
    rasterize_with_alpha,
)
from .prune import PruneConfig, PruneReport, gamma_schedule, gap_prune, prune_finetune_loop, quantile
from .quant import (
    QuantizedScene,
    QuantizerState,
    dequantize,
    dequantize_scene,
    init_step,
    qat_finetune,
    quantize,
    quantize_scene,
    step_gradient,
    value_gradient,
)
from .codec import decode, encode, entropy_bits, morton_decode, morton_encode, morton_sort
from .metrics import QualityReport, psnr, size_report, ssim
from .synth import SynthSpec, make_scene
from .pipeline import PipelineConfig, PipelineResult, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_NAMES",
    "PARAMS_PER_GAUSSIAN",
    "SH_C0",
    "GaussianScene",
    "activate_opacity",
    "covariance3d",
    "opacity_to_logit",
    "read_scene",
    "write_scene",
    "Camera",
    "SceneGradients",
    "accumulate_scores",
    "backward",
    "finetune",
    "loss",
    "project",
    "rasterize",
    "rasterize_with_alpha",
    "PruneConfig",
    "PruneReport",
    "gamma_schedule",
    "gap_prune",
    "prune_finetune_loop",
    "quantile",
    "QuantizedScene",
    "QuantizerState",
    "dequantize",
    "dequantize_scene",
    "init_step",
    "qat_finetune",
    "quantize",
    "quantize_scene",
    "step_gradient",
    "value_gradient",
    "decode",
    "encode",
    "entropy_bits",
    "morton_decode",
    "morton_encode",
    "morton_sort",
    "QualityReport",
    "psnr",
    "size_report",
    "ssim",
    "SynthSpec",
    "make_scene",
    "PipelineConfig",
    "PipelineResult",
    "run_pipeline",
]
