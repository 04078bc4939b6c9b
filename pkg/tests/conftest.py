"""Shared builders for renderer-facing tests.

The gradcheck scene generator keeps every configuration inside the smooth
region of the forward pass (no alpha clamping, no transmittance cutoff, no
pixel at the [0, 1] clamp, rendered-vs-truth gap far from the l1 kink) so
central finite differences are a valid oracle for the analytic gradients.
"""

import numpy as np

import splatpack as sp
from splatpack.scene import ATTRIBUTES


def frontal_camera(size: int, focal_scale: float = 1.4) -> sp.Camera:
    return sp.Camera(
        width=size,
        height=size,
        fx=size * focal_scale,
        fy=size * focal_scale,
        cx=size / 2.0,
        cy=size / 2.0,
        rotation=np.eye(3),
        translation=np.zeros(3),
    )


def random_scene(rng, n: int, depth_range=(2.2, 4.5), alpha_range=(0.15, 0.8),
                 scale_range=(0.06, 0.16), spread=0.8) -> sp.GaussianScene:
    depth = np.sort(rng.uniform(*depth_range, n)) + np.arange(n) * 0.08
    xy = rng.uniform(-spread, spread, (n, 2))
    positions = np.column_stack([xy * depth[:, None] / 3.0, depth])
    colors = rng.uniform(0.15, 0.85, (n, 3))
    return sp.GaussianScene(
        positions=positions,
        rotations=rng.normal(0.0, 1.0, (n, 4)),
        log_scales=np.log(rng.uniform(*scale_range, (n, 3))),
        opacity_logits=sp.opacity_to_logit(rng.uniform(*alpha_range, n)),
        sh_dc=(colors - 0.5) / sp.SH_C0,
        sh_rest=rng.normal(0.0, 0.05, (n, 45)),
    )


def gradcheck_case(seed: int, n: int, size: int):
    """(scene, camera, truth) safely inside the smooth region, by rejection."""
    camera = frontal_camera(size)
    for attempt in range(64):
        rng = np.random.default_rng((seed, attempt))
        scene = random_scene(rng, n)
        image, alpha_map = sp.rasterize_with_alpha(scene, camera)
        if image.max() < 0.97 and alpha_map.max() < 1.0 - 1e-2:
            truth = np.where(image >= 0.5, image - 0.2, image + 0.2)
            return scene, camera, truth
    raise RuntimeError(f"no smooth configuration found for seed {seed}")


def finite_difference_gradients(scene, camera, truth, h=1e-3):
    """Central differences of the rendering loss for every raw parameter.

    Perturbations are applied in float32 (the storage dtype) and the
    quotient uses the actually realized parameter difference.
    """
    grads = {}
    for attr, fld, _ in ATTRIBUTES:
        base = scene.attribute(attr)
        out = np.zeros(base.shape)
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            plus[idx] = np.float32(float(plus[idx]) + h)
            minus = base.copy()
            minus[idx] = np.float32(float(minus[idx]) - h)
            f_plus = sp.loss(sp.rasterize(scene.replace(**{fld: plus}), camera), truth)
            f_minus = sp.loss(sp.rasterize(scene.replace(**{fld: minus}), camera), truth)
            out[idx] = (f_plus - f_minus) / (float(plus[idx]) - float(minus[idx]))
        grads[attr] = out
    return grads


def gradients_match(analytic, fd, rel=1e-3, abs_tol=1e-6):
    err = np.abs(analytic - fd)
    scale = np.maximum(np.abs(analytic), np.abs(fd))
    return np.all((err <= abs_tol) | (err <= rel * scale))
