"""CPU differentiable Gaussian splatting.

Forward: project each Gaussian's center and covariance to screen space with
the affine (Jacobian) approximation, then alpha-composite front to back per
pixel. Backward: analytic chain rule through compositing, projection,
covariance construction, and the l1+SSIM loss, producing gradients for every
raw scene parameter. Computation is float64 and single-threaded so results
are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import Adam
from .scene import (
    ATTRIBUTES,
    PARAMS_PER_GAUSSIAN,
    SH_C0,
    GaussianScene,
    activate_opacity,
    quaternion_rotation_matrices,
)
from .ssim import ssim, ssim_with_grad

NEAR_PLANE = 0.01
COV2D_DILATION = 0.3
ALPHA_CLAMP = 0.99
MIN_TRANSMITTANCE = 1e-4
DET_EPS = 1e-12
SSIM_WEIGHT = 0.2

# Mirrors the reference splat-training configuration.
DEFAULT_LEARNING_RATES = {
    "position": 1.6e-4,
    "rotation": 1e-3,
    "log_scale": 5e-3,
    "opacity_logit": 5e-2,
    "sh_dc": 2.5e-3,
    "sh_rest": 2.5e-3 / 20,
}

_CHUNK = 128


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus a rigid world-to-camera transform.

    `rotation` (3x3) and `translation` (3,) map world points x to camera
    space as R x + t; the camera looks along +z and pixel (i, j) has center
    (j + 0.5, i + 0.5) in projected coordinates.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1x1")
        rot = np.array(self.rotation, dtype=np.float64, copy=True)
        trans = np.array(self.translation, dtype=np.float64, copy=True).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-8):
            raise ValueError("rotation is not orthonormal")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(d["translation"], dtype=np.float64),
        )


@dataclass
class SceneGradients:
    """d(loss)/d(raw parameter) for every scene array."""

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "SceneGradients":
        return cls(
            positions=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            log_scales=np.zeros((n, 3)),
            opacity_logits=np.zeros(n),
            sh_dc=np.zeros((n, 3)),
            sh_rest=np.zeros((n, 45)),
        )

    def attribute(self, name: str) -> np.ndarray:
        for attr, fld, _ in ATTRIBUTES:
            if attr == name:
                return getattr(self, fld)
        raise KeyError(name)

    def per_gaussian_mean_abs(self) -> np.ndarray:
        """Mean |gradient| over all raw parameters, per Gaussian."""
        total = np.abs(self.positions).sum(axis=1)
        total += np.abs(self.rotations).sum(axis=1)
        total += np.abs(self.log_scales).sum(axis=1)
        total += np.abs(self.opacity_logits)
        total += np.abs(self.sh_dc).sum(axis=1)
        total += np.abs(self.sh_rest).sum(axis=1)
        return total / PARAMS_PER_GAUSSIAN


def project(mean, cov3d, camera: Camera, near: float = NEAR_PLANE):
    """Project one Gaussian to screen space.

    Returns (mean2d, cov2d, depth), or None when the center is not strictly
    in front of the near plane. cov2d includes the screen-space dilation term.
    """
    mean = np.asarray(mean, dtype=np.float64).reshape(3)
    cov3d = np.asarray(cov3d, dtype=np.float64).reshape(3, 3)
    t = camera.rotation @ mean + camera.translation
    if t[2] <= near:
        return None
    x, y, z = t
    mean2d = np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])
    jac = np.array(
        [
            [camera.fx / z, 0.0, -camera.fx * x / z ** 2],
            [0.0, camera.fy / z, -camera.fy * y / z ** 2],
        ]
    )
    a = jac @ camera.rotation
    cov2d = a @ cov3d @ a.T + COV2D_DILATION * np.eye(2)
    return mean2d, cov2d, float(z)


@dataclass
class _Projected:
    """Visible Gaussians sorted front to back, with backward caches."""

    n_total: int
    order: np.ndarray       # original indices, depth-sorted
    mean2d: np.ndarray      # (M, 2)
    conic: np.ndarray       # (M, 2, 2) inverse 2D covariance
    alpha: np.ndarray       # (M,)
    color: np.ndarray       # (M, 3)
    t_cam: np.ndarray = field(default=None)   # (M, 3)
    a_mat: np.ndarray = field(default=None)   # (M, 2, 3) J @ W_r
    cov3d: np.ndarray = field(default=None)   # (M, 3, 3)
    m_mat: np.ndarray = field(default=None)   # (M, 3, 3) R @ diag(s)
    rot_mat: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None)   # (M, 3)
    q_hat: np.ndarray = field(default=None)   # (M, 4)
    q_norm: np.ndarray = field(default=None)  # (M,)


def _project_scene(scene: GaussianScene, camera: Camera) -> _Projected:
    n = scene.count
    if n == 0:
        empty = np.zeros
        return _Projected(
            n_total=0,
            order=np.zeros(0, dtype=np.int64),
            mean2d=empty((0, 2)), conic=empty((0, 2, 2)),
            alpha=empty(0), color=empty((0, 3)),
            t_cam=empty((0, 3)), a_mat=empty((0, 2, 3)), cov3d=empty((0, 3, 3)),
            m_mat=empty((0, 3, 3)), rot_mat=empty((0, 3, 3)),
            scale=empty((0, 3)), q_hat=empty((0, 4)), q_norm=empty(0),
        )
    pos = scene.positions.astype(np.float64)
    q = scene.rotations.astype(np.float64)
    q_norm = np.linalg.norm(q, axis=1)
    q_hat = q / q_norm[:, None]
    rot = quaternion_rotation_matrices(q_hat)
    s = np.exp(scene.log_scales.astype(np.float64))
    m_mat = rot * s[:, None, :]
    cov3d = m_mat @ np.transpose(m_mat, (0, 2, 1))

    t = pos @ camera.rotation.T + camera.translation
    in_front = t[:, 2] > NEAR_PLANE
    z = np.where(in_front, t[:, 2], 1.0)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 1, 1] = camera.fy / z
    jac[:, 0, 2] = -camera.fx * t[:, 0] / z ** 2
    jac[:, 1, 2] = -camera.fy * t[:, 1] / z ** 2
    a_mat = jac @ camera.rotation
    cov2d = a_mat @ cov3d @ np.transpose(a_mat, (0, 2, 1))
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    visible = in_front & (det > DET_EPS)

    idx = np.flatnonzero(visible)
    # Front-to-back order; ties broken by ascending original index (lexsort
    # keys are minor-to-major).
    order = idx[np.lexsort((idx, t[idx, 2]))]

    conic = np.empty((order.size, 2, 2))
    c2 = cov2d[order]
    d = det[order]
    conic[:, 0, 0] = c2[:, 1, 1] / d
    conic[:, 1, 1] = c2[:, 0, 0] / d
    conic[:, 0, 1] = -c2[:, 0, 1] / d
    conic[:, 1, 0] = -c2[:, 1, 0] / d

    mean2d = np.stack(
        [
            camera.fx * t[order, 0] / t[order, 2] + camera.cx,
            camera.fy * t[order, 1] / t[order, 2] + camera.cy,
        ],
        axis=1,
    )
    alpha = activate_opacity(scene.opacity_logits.astype(np.float64))[order]
    color = 0.5 + SH_C0 * scene.sh_dc.astype(np.float64)[order]
    return _Projected(
        n_total=n, order=order, mean2d=mean2d, conic=conic, alpha=alpha,
        color=color, t_cam=t[order], a_mat=a_mat[order], cov3d=cov3d[order],
        m_mat=m_mat[order], rot_mat=rot[order], scale=s[order],
        q_hat=q_hat[order], q_norm=q_norm[order],
    )


def _pixel_centers(camera: Camera) -> np.ndarray:
    xs = np.arange(camera.width, dtype=np.float64) + 0.5
    ys = np.arange(camera.height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


def _chunk_weights(proj: _Projected, lo: int, hi: int, pix: np.ndarray, t_entry: np.ndarray):
    """Per-contributor compositing quantities for sorted rows [lo, hi).

    Returns (d, gauss, a_eff, t_before, include, t_exit) where t_before is the
    transmittance ahead of each contributor and include masks contributors
    skipped by the transmittance cutoff.
    """
    mu = proj.mean2d[lo:hi]
    con = proj.conic[lo:hi]
    al = proj.alpha[lo:hi]
    d = pix[None, :, :] - mu[:, None, :]
    quad = (
        con[:, None, 0, 0] * d[:, :, 0] ** 2
        + (con[:, None, 0, 1] + con[:, None, 1, 0]) * d[:, :, 0] * d[:, :, 1]
        + con[:, None, 1, 1] * d[:, :, 1] ** 2
    )
    gauss = np.exp(-0.5 * quad)
    a_eff = np.minimum(al[:, None] * gauss, ALPHA_CLAMP)
    t_inner = np.cumprod(1.0 - a_eff, axis=0)
    t_before = np.empty_like(t_inner)
    t_before[0] = t_entry
    t_before[1:] = t_entry * t_inner[:-1]
    include = t_before >= MIN_TRANSMITTANCE
    t_exit = t_entry * t_inner[-1]
    return d, gauss, a_eff, t_before, include, t_exit


def _composite(proj: _Projected, camera: Camera, keep_entries: bool = False):
    """Front-to-back accumulation.

    Returns (color_px3, weight_px, t_entries) where weight_px is the sum of
    the included compositing weights (in [0, 1]) per pixel.
    """
    n_pix = camera.width * camera.height
    pix = _pixel_centers(camera)
    accum = np.zeros((n_pix, 3))
    weight = np.zeros(n_pix)
    t_run = np.ones(n_pix)
    entries = []
    m = proj.order.size
    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        if keep_entries:
            entries.append(t_run.copy())
        _, _, a_eff, t_before, include, t_exit = _chunk_weights(proj, lo, hi, pix, t_run)
        w = np.where(include, a_eff * t_before, 0.0)
        accum += np.einsum("kp,kc->pc", w, proj.color[lo:hi])
        weight += w.sum(axis=0)
        t_run = t_exit
    return accum, weight, entries


def rasterize(scene: GaussianScene, camera: Camera) -> np.ndarray:
    """Render to an (H, W, 3) float image in [0, 1] on a black background."""
    image, _ = rasterize_with_alpha(scene, camera)
    return image


def rasterize_with_alpha(scene: GaussianScene, camera: Camera):
    """Render, also returning the (H, W) accumulated alpha weight per pixel."""
    proj = _project_scene(scene, camera)
    accum, weight, _ = _composite(proj, camera)
    image = np.clip(accum, 0.0, 1.0).reshape(camera.height, camera.width, 3)
    alpha_map = weight.reshape(camera.height, camera.width)
    return image, alpha_map


def loss(rendered: np.ndarray, truth: np.ndarray, ssim_weight: float = SSIM_WEIGHT) -> float:
    """(1-w) * mean|a-b| + w * (1 - SSIM(a, b))."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    l1 = float(np.mean(np.abs(a - b)))
    if ssim_weight == 0.0:
        return l1
    return (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - ssim(a, b))


def _loss_with_grad(rendered, truth, ssim_weight):
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - ssim_weight) * np.sign(diff) / diff.size
    if ssim_weight == 0.0:
        return l1, np.sign(diff) / diff.size
    s_val, s_grad = ssim_with_grad(a, b)
    value = (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - s_val)
    grad = grad - ssim_weight * s_grad
    return value, grad


def backward(scene: GaussianScene, camera: Camera, truth: np.ndarray,
             ssim_weight: float = SSIM_WEIGHT):
    """Loss and d(loss)/d(raw parameter) for every Gaussian.

    Culled Gaussians (behind the near plane or with a degenerate projected
    covariance) receive exactly zero gradient.
    """
    proj = _project_scene(scene, camera)
    accum, _, entries = _composite(proj, camera, keep_entries=True)
    image = np.clip(accum, 0.0, 1.0).reshape(camera.height, camera.width, 3)
    value, g_image = _loss_with_grad(image, truth, ssim_weight)
    # The clamp passes gradient only strictly inside (0, 1).
    interior = (accum > 0.0) & (accum < 1.0)
    g_c_total = np.where(interior, g_image.reshape(-1, 3), 0.0)

    grads = SceneGradients.zeros(scene.count)
    m = proj.order.size
    if m == 0:
        return value, grads

    pix = _pixel_centers(camera)
    g_mean2d = np.zeros((m, 2))
    g_conic = np.zeros((m, 2, 2))
    g_alpha = np.zeros(m)
    g_color = np.zeros((m, 3))

    prefix = np.zeros((camera.width * camera.height, 3))
    for chunk_i, lo in enumerate(range(0, m, _CHUNK)):
        hi = min(lo + _CHUNK, m)
        d, gauss, a_eff, t_before, include, _ = _chunk_weights(
            proj, lo, hi, pix, entries[chunk_i]
        )
        col = proj.color[lo:hi]
        w = np.where(include, a_eff * t_before, 0.0)
        contrib = w[:, :, None] * col[:, None, :]
        inclusive = prefix[None, :, :] + np.cumsum(contrib, axis=0)
        suffix = accum[None, :, :] - inclusive
        prefix = inclusive[-1]

        g_color[lo:hi] = np.einsum("kp,pc->kc", w, g_c_total)
        # dC/da_eff = color * t_before - suffix / (1 - a_eff)
        da = col[:, None, :] * t_before[:, :, None] - suffix / (1.0 - a_eff)[:, :, None]
        g_aeff = np.where(include, np.einsum("kpc,pc->kp", da, g_c_total), 0.0)
        unclamped = proj.alpha[lo:hi, None] * gauss < ALPHA_CLAMP
        g_aeff = np.where(unclamped, g_aeff, 0.0)
        g_alpha[lo:hi] = np.einsum("kp,kp->k", g_aeff, gauss)
        g_gauss = g_aeff * proj.alpha[lo:hi, None]
        # dG/dmean2d = G * (conic @ d); dG/dconic = -G/2 * d d^T
        cd = np.einsum("kij,kpj->kpi", proj.conic[lo:hi], d)
        g_mean2d[lo:hi] = np.einsum("kp,kpi->ki", g_gauss * gauss, cd)
        half = -0.5 * g_gauss * gauss
        g_conic[lo:hi, 0, 0] = np.einsum("kp,kp->k", half, d[:, :, 0] ** 2)
        g_conic[lo:hi, 0, 1] = np.einsum("kp,kp->k", half, d[:, :, 0] * d[:, :, 1])
        g_conic[lo:hi, 1, 0] = g_conic[lo:hi, 0, 1]
        g_conic[lo:hi, 1, 1] = np.einsum("kp,kp->k", half, d[:, :, 1] ** 2)

    _geometry_backward(proj, camera, g_mean2d, g_conic, g_alpha, g_color, grads)
    return value, grads


def _geometry_backward(proj, camera, g_mean2d, g_conic, g_alpha, g_color, grads):
    """Propagate screen-space gradients back to the raw scene parameters."""
    t = proj.t_cam
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = camera.fx, camera.fy

    # conic = cov2d^-1  =>  g_cov2d = -conic @ g_conic @ conic
    g_cov2d = -np.einsum("nij,njk,nkl->nil", proj.conic, g_conic, proj.conic)
    sym2 = g_cov2d + np.transpose(g_cov2d, (0, 2, 1))
    g_a = np.einsum("nij,njk,nkl->nil", sym2, proj.a_mat, proj.cov3d)
    g_cov3d = np.einsum("nji,njk,nkl->nil", proj.a_mat, g_cov2d, proj.a_mat)
    g_jac = np.einsum("nij,kj->nik", g_a, camera.rotation)

    # Projection Jacobian also maps camera-space center motion to mean2d.
    g_t = np.einsum("nji,nj->ni", _jacobian(proj, camera), g_mean2d)
    g_t[:, 0] += g_jac[:, 0, 2] * (-fx / z ** 2)
    g_t[:, 1] += g_jac[:, 1, 2] * (-fy / z ** 2)
    g_t[:, 2] += (
        g_jac[:, 0, 0] * (-fx / z ** 2)
        + g_jac[:, 1, 1] * (-fy / z ** 2)
        + g_jac[:, 0, 2] * (2 * fx * x / z ** 3)
        + g_jac[:, 1, 2] * (2 * fy * y / z ** 3)
    )
    g_pos = g_t @ camera.rotation

    sym3 = g_cov3d + np.transpose(g_cov3d, (0, 2, 1))
    g_m = np.einsum("nij,njk->nik", sym3, proj.m_mat)
    g_rot = g_m * proj.scale[:, None, :]
    g_scale = np.einsum("nik,nik->nk", g_m, proj.rot_mat)
    g_log_scale = g_scale * proj.scale

    g_qhat = np.einsum("nij,nkij->nk", g_rot, _rotation_quaternion_jacobian(proj.q_hat))
    dot = np.einsum("nk,nk->n", g_qhat, proj.q_hat)
    g_q = (g_qhat - dot[:, None] * proj.q_hat) / proj.q_norm[:, None]

    alpha = proj.alpha
    g_logit = g_alpha * alpha * (1.0 - alpha)
    g_shdc = SH_C0 * g_color

    idx = proj.order
    grads.positions[idx] = g_pos
    grads.rotations[idx] = g_q
    grads.log_scales[idx] = g_log_scale
    grads.opacity_logits[idx] = g_logit
    grads.sh_dc[idx] = g_shdc


def _jacobian(proj, camera):
    t = proj.t_cam
    z = t[:, 2]
    jac = np.zeros((t.shape[0], 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 1, 1] = camera.fy / z
    jac[:, 0, 2] = -camera.fx * t[:, 0] / z ** 2
    jac[:, 1, 2] = -camera.fy * t[:, 1] / z ** 2
    return jac


def _rotation_quaternion_jacobian(q_hat: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions, shape (N, 4, 3, 3)."""
    w, x, y, z = q_hat[:, 0], q_hat[:, 1], q_hat[:, 2], q_hat[:, 3]
    n = q_hat.shape[0]
    o = np.zeros(n)
    jac = np.empty((n, 4, 3, 3))
    jac[:, 0] = 2 * np.stack(
        [np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)], 1
    )
    jac[:, 1] = 2 * np.stack(
        [np.stack([o, y, z], -1), np.stack([y, -2 * x, -w], -1), np.stack([z, w, -2 * x], -1)], 1
    )
    jac[:, 2] = 2 * np.stack(
        [np.stack([-2 * y, x, w], -1), np.stack([x, o, z], -1), np.stack([-w, z, -2 * y], -1)], 1
    )
    jac[:, 3] = 2 * np.stack(
        [np.stack([-2 * z, -w, x], -1), np.stack([w, -2 * z, y], -1), np.stack([x, y, o], -1)], 1
    )
    return jac


def accumulate_scores(scene: GaussianScene, views) -> np.ndarray:
    """Per-Gaussian gradient magnitude: mean over views of the mean absolute
    gradient over all raw parameters."""
    if len(views) == 0:
        raise ValueError("need at least one view to accumulate scores")
    scores = np.zeros(scene.count)
    for camera, truth in views:
        _, grads = backward(scene, camera, truth)
        scores += grads.per_gaussian_mean_abs()
    return scores / len(views)


def finetune(scene: GaussianScene, views, steps: int, learning_rates=None,
             seed: int = 0, ssim_weight: float = SSIM_WEIGHT) -> GaussianScene:
    """Adam fine-tuning of all raw parameters; one random view per step."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return scene
    if len(views) == 0:
        raise ValueError("need at least one view to finetune")
    lrs = dict(DEFAULT_LEARNING_RATES)
    if learning_rates:
        lrs.update(learning_rates)
    rng = np.random.default_rng(seed)
    opt = Adam()
    params = {attr: scene.attribute(attr).astype(np.float64) for attr, _, _ in ATTRIBUTES}
    current = scene
    for _ in range(steps):
        camera, truth = views[rng.integers(len(views))]
        _, grads = backward(current, camera, truth, ssim_weight=ssim_weight)
        for attr, fld, _ in ATTRIBUTES:
            params[attr] = opt.update(attr, params[attr], getattr(grads, fld), lrs[attr])
        current = scene.replace(
            **{fld: params[attr].astype(np.float32) for attr, fld, _ in ATTRIBUTES}
        )
    return current
