"""Learned-step-size quantization and quantization-aware fine-tuning.

Sweeps SH bit depth to show where plain quantization starts to hurt, then
runs QAT at 8 bits: the straight-through estimator lets the raw values adapt
to the grid while the analytic step-size gradient tightens the grid itself.
"""

import numpy as np

import splatpack as sp
from splatpack.quant import default_states, dequantize_scene, quantize_scene, resolve_steps

scene, views = sp.make_scene(
    sp.SynthSpec(seed=21, n_gaussians=150, n_views=3, image_size=32)
)
cam, truth = views[0]


def quality_at(bits_sh):
    states = default_states({"sh_dc": bits_sh, "sh_rest": bits_sh})
    fake = dequantize_scene(quantize_scene(scene, states))
    return sp.psnr(truth, sp.rasterize(fake, cam))


print("plain quantization, geometry at 32 bits:")
for bits in (32, 10, 8, 6, 4):
    print(f"  SH at {bits:>2} bits -> view-0 PSNR {quality_at(bits):6.2f} dB")

# Inspect the data-driven initial step sizes.
states0 = resolve_steps(scene, default_states())
print("\ninitial step sizes (2 * mean|v| / sqrt(levels)):")
for name in sp.ATTRIBUTE_NAMES:
    qs = states0[name]
    print(f"  {name:<14} bits {qs.bits:>2}  step {qs.step:.3e}")

# QAT: fine-tune the raw values (straight-through gradients) and the step
# sizes (analytic quantizer gradient) against the rendering loss.
def mean_quantized_loss(s, states):
    fake = dequantize_scene(quantize_scene(s, states))
    return float(np.mean([sp.loss(sp.rasterize(fake, c), img) for c, img in views]))


loss_before = mean_quantized_loss(scene, states0)
sh_only = {"position": 0.0, "rotation": 0.0, "log_scale": 0.0, "opacity_logit": 0.0}
tuned, learned = sp.qat_finetune(scene, views, default_states(), steps=150,
                                 learning_rates=sh_only, seed=2)
loss_after = mean_quantized_loss(tuned, learned)
print(f"\nQAT at SH 8 bits, 150 steps (SH channels learned):")
print(f"  quantized loss before {loss_before:.5f} -> after {loss_after:.5f}")
print(f"  sh_dc step {states0['sh_dc'].step:.4f} -> {learned['sh_dc'].step:.4f} "
      f"(grid tightened by LSQ)")
