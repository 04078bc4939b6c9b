"""Gaussian scene data model: raw parameter storage, activations, covariance.

All per-Gaussian parameters are stored raw (pre-activation), column-oriented,
as float32 arrays: opacity as a logit, scale as its log. Activations are
applied where they are consumed so that I/O and quantization always see the
canonical raw values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

# (attribute name, dataclass field, per-Gaussian arity), in storage order.
ATTRIBUTES = (
    ("position", "positions", 3),
    ("rotation", "rotations", 4),
    ("log_scale", "log_scales", 3),
    ("opacity_logit", "opacity_logits", 1),
    ("sh_dc", "sh_dc", 3),
    ("sh_rest", "sh_rest", 45),
)
ATTRIBUTE_NAMES = tuple(name for name, _, _ in ATTRIBUTES)
ATTRIBUTE_ARITY = {name: arity for name, _, arity in ATTRIBUTES}
_FIELD_BY_ATTRIBUTE = {name: field for name, field, _ in ATTRIBUTES}

PARAMS_PER_GAUSSIAN = sum(arity for _, _, arity in ATTRIBUTES)  # 59

# Degree-0 spherical-harmonic basis value; constant color = 0.5 + SH_C0 * sh_dc.
SH_C0 = 0.28209479177387814


def _as_locked_f32(arr, shape, name) -> np.ndarray:
    out = np.array(arr, dtype=np.float32, copy=True)
    if out.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GaussianScene:
    """Column-oriented raw per-Gaussian parameters.

    Arrays are float32 and locked read-only; build modified scenes with
    `replace` or `take` rather than mutating in place.
    """

    positions: np.ndarray       # (N, 3) world-space centers
    rotations: np.ndarray       # (N, 4) unnormalized quaternions, (w, x, y, z)
    log_scales: np.ndarray      # (N, 3) log of per-axis scale
    opacity_logits: np.ndarray  # (N,)   inverse-sigmoid of opacity
    sh_dc: np.ndarray           # (N, 3) degree-0 SH color coefficients
    sh_rest: np.ndarray         # (N, 45) degree 1..3 SH coefficients

    def __post_init__(self):
        n = np.shape(self.positions)[0] if np.ndim(self.positions) >= 1 else 0
        shapes = {
            "positions": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
            "sh_dc": (n, 3),
            "sh_rest": (n, 45),
        }
        for field, shape in shapes.items():
            locked = _as_locked_f32(getattr(self, field), shape, field)
            object.__setattr__(self, field, locked)
        norms = np.linalg.norm(self.rotations, axis=1)
        if n and not np.all(norms > 0):
            bad = int(np.flatnonzero(norms == 0)[0])
            raise ValueError(f"rotations[{bad}] has zero norm")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def empty(cls, n: int = 0) -> "GaussianScene":
        """Scene of `n` Gaussians with all parameters zero (identity rotation)."""
        rot = np.zeros((n, 4), dtype=np.float32)
        if n:
            rot[:, 0] = 1.0
        return cls(
            positions=np.zeros((n, 3), dtype=np.float32),
            rotations=rot,
            log_scales=np.zeros((n, 3), dtype=np.float32),
            opacity_logits=np.zeros(n, dtype=np.float32),
            sh_dc=np.zeros((n, 3), dtype=np.float32),
            sh_rest=np.zeros((n, 45), dtype=np.float32),
        )

    def attribute(self, name: str) -> np.ndarray:
        """Raw array for one of the six named attributes."""
        return getattr(self, _FIELD_BY_ATTRIBUTE[name])

    def replace(self, **arrays) -> "GaussianScene":
        """New scene with some attribute arrays swapped out."""
        return dataclasses.replace(self, **arrays)

    def take(self, index) -> "GaussianScene":
        """New scene restricted (or permuted) by a boolean mask or index array."""
        return GaussianScene(
            positions=self.positions[index],
            rotations=self.rotations[index],
            log_scales=self.log_scales[index],
            opacity_logits=self.opacity_logits[index],
            sh_dc=self.sh_dc[index],
            sh_rest=self.sh_rest[index],
        )

    def activated_opacity(self) -> np.ndarray:
        return activate_opacity(self.opacity_logits)

    def activated_scale(self) -> np.ndarray:
        return np.exp(self.log_scales.astype(np.float64))

    def allclose(self, other: "GaussianScene") -> bool:
        return self.count == other.count and all(
            np.array_equal(self.attribute(a), other.attribute(a))
            for a in ATTRIBUTE_NAMES
        )


def activate_opacity(logit):
    """Numerically stable sigmoid mapping raw logits to opacity in [0, 1]."""
    x = np.asarray(logit, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if np.ndim(logit) == 0:
        return float(out)
    return out


def opacity_to_logit(alpha):
    """Inverse of activate_opacity on (0, 1)."""
    a = np.asarray(alpha, dtype=np.float64)
    out = np.log(a) - np.log1p(-a)
    if np.ndim(alpha) == 0:
        return float(out)
    return out


def quaternion_rotation_matrices(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (N, 4) quaternions in (w, x, y, z) order.

    Quaternions are normalized first; a zero-norm quaternion is invalid.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    norms = np.linalg.norm(q, axis=1)
    if not np.all(norms > 0):
        raise ValueError("zero-norm quaternion")
    w, x, y, z = (q / norms[:, None]).T
    r = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r[0] if single else r


def covariance3d(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """World-space covariance R S S^T R^T from quaternion q and scale vector s.

    Accepts a single (4,), (3,) pair or batched (N, 4), (N, 3) arrays.
    """
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    s = np.atleast_2d(s)
    if not np.all(s > 0):
        raise ValueError("scale components must be positive")
    r = quaternion_rotation_matrices(q)
    m = r * s[:, None, :]  # R @ diag(s)
    cov = m @ np.transpose(m, (0, 2, 1))
    return cov[0] if single else cov
