"""Learned-step-size scalar quantization of scene attributes.

Codes are round-half-to-even of value/step, clipped to the signed or
unsigned level range; dequantization is code * step. The step of each
attribute group is a learnable parameter: its gradient is the analytic
derivative of the fake-quantized value, and gradients reach the raw values
through a straight-through estimate that dies where the clip saturates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import render
from .optim import Adam
from .scene import ATTRIBUTES, ATTRIBUTE_NAMES, GaussianScene

STEP_FLOOR = 1e-12

DEFAULT_BITS = {
    "position": 32,
    "rotation": 32,
    "log_scale": 32,
    "opacity_logit": 32,
    "sh_dc": 8,
    "sh_rest": 8,
}


@dataclass(frozen=True)
class QuantizerState:
    """Per-attribute quantizer: bit depth, signedness, and step size."""

    attribute: str
    bits: int
    signed: bool = True
    step: float | None = None     # None until initialized from data
    learn_step: bool = True

    def __post_init__(self):
        if self.attribute not in ATTRIBUTE_NAMES:
            raise ValueError(f"unknown attribute {self.attribute!r}")
        if not 2 <= self.bits <= 32:
            raise ValueError("bits must be in [2, 32]")
        if self.step is not None and not (np.isfinite(self.step) and self.step > 0):
            raise ValueError("step must be positive and finite")

    @property
    def q_n(self) -> int:
        """Number of negative levels; codes live in [-q_n, q_p]."""
        return 2 ** (self.bits - 1) if self.signed else 0

    @property
    def q_p(self) -> int:
        return 2 ** (self.bits - 1) - 1 if self.signed else 2 ** self.bits - 1

    def with_step(self, step: float) -> "QuantizerState":
        return replace(self, step=step)


def _require_step(qs: QuantizerState) -> float:
    if qs.step is None:
        raise ValueError(f"quantizer for {qs.attribute!r} has no step size")
    return qs.step


def quantize(values, qs: QuantizerState) -> np.ndarray:
    """Integer codes: round-half-even of values/step clipped to [-q_n, q_p]."""
    step = _require_step(qs)
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    scaled = np.clip(v / step, -float(qs.q_n), float(qs.q_p))
    codes = np.rint(scaled).astype(np.int64)
    if np.ndim(values) == 0:
        return int(codes)
    return codes


def dequantize(codes, qs: QuantizerState):
    """code * step, validating that codes lie in the quantizer's range."""
    step = _require_step(qs)
    c = np.asarray(codes, dtype=np.int64)
    if c.size and (c.min() < -qs.q_n or c.max() > qs.q_p):
        raise ValueError(f"code out of range [-{qs.q_n}, {qs.q_p}]")
    out = c.astype(np.float64) * step
    if np.ndim(codes) == 0:
        return float(out)
    return out


def step_gradient(values, qs: QuantizerState):
    """d(dequantize(quantize(v)))/d(step), elementwise."""
    step = _require_step(qs)
    v = np.asarray(values, dtype=np.float64)
    scaled = v / step
    mid = -scaled + np.rint(scaled)
    out = np.where(scaled <= -qs.q_n, -float(qs.q_n),
                   np.where(scaled >= qs.q_p, float(qs.q_p), mid))
    if np.ndim(values) == 0:
        return float(out)
    return out


def value_gradient(values, qs: QuantizerState):
    """Straight-through estimate: 1 strictly inside the clip range, else 0."""
    step = _require_step(qs)
    scaled = np.asarray(values, dtype=np.float64) / step
    out = ((scaled > -qs.q_n) & (scaled < qs.q_p)).astype(np.float64)
    if np.ndim(values) == 0:
        return float(out)
    return out


def init_step(values, qs: QuantizerState) -> float:
    """Data-driven initial step: 2 * mean|v| / sqrt(q_p), floored."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot initialize step from empty values")
    return max(2.0 * float(np.mean(np.abs(v))) / np.sqrt(qs.q_p), STEP_FLOOR)


def default_states(bits=None, signed=None, learn_step=True) -> dict:
    """QuantizerStates (steps uninitialized) for all six attributes."""
    bit_map = dict(DEFAULT_BITS)
    if bits:
        bit_map.update(bits)
    states = {}
    for name in ATTRIBUTE_NAMES:
        states[name] = QuantizerState(
            attribute=name,
            bits=bit_map[name],
            signed=True if signed is None else signed.get(name, True),
            learn_step=learn_step,
        )
    return states


@dataclass
class QuantizedScene:
    """Integer code arrays plus the quantizers that produced them."""

    codes: dict           # attribute name -> (N, arity) or (N,) int64 array
    states: dict          # attribute name -> QuantizerState (step set)
    count: int
    morton_ordered: bool = False
    aabb: np.ndarray | None = None  # (2, 3) min/max of dequantized positions

    def attribute_codes(self, name: str) -> np.ndarray:
        return self.codes[name]

    def take(self, index) -> "QuantizedScene":
        return QuantizedScene(
            codes={k: v[index] for k, v in self.codes.items()},
            states=dict(self.states),
            count=int(np.asarray(self.codes["opacity_logit"][index]).shape[0]),
            morton_ordered=self.morton_ordered,
            aabb=self.aabb,
        )

    def equals(self, other: "QuantizedScene") -> bool:
        return (
            self.count == other.count
            and all(np.array_equal(self.codes[a], other.codes[a]) for a in ATTRIBUTE_NAMES)
            and all(
                (self.states[a].bits, self.states[a].signed, self.states[a].step)
                == (other.states[a].bits, other.states[a].signed, other.states[a].step)
                for a in ATTRIBUTE_NAMES
            )
        )


def resolve_steps(scene: GaussianScene, states: dict) -> dict:
    """Fill in uninitialized steps from the scene's attribute statistics."""
    resolved = {}
    for name in ATTRIBUTE_NAMES:
        qs = states[name]
        if qs.step is None:
            qs = qs.with_step(init_step(scene.attribute(name), qs))
        resolved[name] = qs
    return resolved


def quantize_scene(scene: GaussianScene, states: dict) -> QuantizedScene:
    states = resolve_steps(scene, states)
    codes = {name: quantize(scene.attribute(name), states[name]) for name in ATTRIBUTE_NAMES}
    return QuantizedScene(codes=codes, states=states, count=scene.count)


def dequantize_scene(qscene: QuantizedScene) -> GaussianScene:
    arrays = {}
    for name, fld, _ in ATTRIBUTES:
        arrays[fld] = dequantize(qscene.codes[name], qscene.states[name]).astype(np.float32)
    return GaussianScene(**arrays)


def _fake_quantized(scene: GaussianScene, states: dict) -> GaussianScene:
    arrays = {}
    for name, fld, _ in ATTRIBUTES:
        vals = scene.attribute(name)
        arrays[fld] = dequantize(quantize(vals, states[name]), states[name]).astype(np.float32)
    return GaussianScene(**arrays)


def qat_finetune(
    scene: GaussianScene,
    views,
    states: dict,
    steps: int,
    learning_rates=None,
    seed: int = 0,
    ssim_weight: float = render.SSIM_WEIGHT,
):
    """Quantization-aware fine-tuning.

    Each step renders from the fake-quantized parameters, backpropagates the
    loss, masks parameter gradients with the straight-through estimate, and
    updates each learnable step size with its analytic gradient scaled by
    1/sqrt(n_elements * q_p). Returns (scene, states with learned steps).
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    states = resolve_steps(scene, states)
    if steps == 0:
        return scene, states
    if len(views) == 0:
        raise ValueError("need at least one view for QAT")
    lrs = dict(render.DEFAULT_LEARNING_RATES)
    if learning_rates:
        lrs.update(learning_rates)
    rng = np.random.default_rng(seed)
    opt = Adam()
    params = {name: scene.attribute(name).astype(np.float64) for name in ATTRIBUTE_NAMES}
    current = scene
    for _ in range(steps):
        camera, truth = views[rng.integers(len(views))]
        fake = _fake_quantized(current, states)
        _, grads = render.backward(fake, camera, truth, ssim_weight=ssim_weight)
        new_states = {}
        for name, fld, _ in ATTRIBUTES:
            qs = states[name]
            g_fake = getattr(grads, fld)
            g_param = g_fake * value_gradient(params[name], qs)
            if qs.learn_step:
                scale = 1.0 / np.sqrt(params[name].size * qs.q_p)
                g_step = float(np.sum(g_fake * step_gradient(params[name], qs))) * scale
                new_step = float(
                    opt.update(("step", name), np.float64(qs.step), np.float64(g_step), lrs[name])
                )
                qs = qs.with_step(max(new_step, STEP_FLOOR))
            params[name] = opt.update(name, params[name], g_param, lrs[name])
            new_states[name] = qs
        states = new_states
        current = scene.replace(
            **{fld: params[name].astype(np.float32) for name, fld, _ in ATTRIBUTES}
        )
    return current, states
