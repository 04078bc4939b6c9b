"""Deterministic synthetic scenes and self-rendered ground-truth views.

A generated scene mixes solid Gaussians with a configurable fraction of
redundant ones: activated opacity below 0.01, small extent, tucked inside
the solid structure so they contribute next to nothing to any view. Ground
truth is the renderer's own output on the full scene, which makes zero-loss
and zero-gradient fixed points exactly testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ply, views as views_io
from .render import Camera, rasterize
from .scene import SH_C0, GaussianScene, opacity_to_logit

LAYOUTS = ("curve", "cluster", "grid")


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_gaussians: int
    fraction_redundant: float = 0.0
    layout: str = "curve"
    n_views: int = 4
    image_size: int = 32

    def __post_init__(self):
        if not 0.0 <= self.fraction_redundant <= 1.0:
            raise ValueError("fraction_redundant must be in [0, 1]")
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.n_gaussians < 0 or self.n_views < 1 or self.image_size < 1:
            raise ValueError("invalid scene dimensions")


def _layout_positions(rng, layout: str, n: int) -> np.ndarray:
    if n == 0:
        return np.zeros((0, 3))
    if layout == "curve":
        t = np.sort(rng.uniform(0.0, 1.0, n))
        angle = 2.0 * math.pi * 1.5 * t
        pos = np.stack(
            [np.cos(angle), np.sin(angle), 2.0 * t - 1.0], axis=1
        )
        return pos + rng.normal(0.0, 0.015, (n, 3))
    if layout == "cluster":
        centers = rng.uniform(-0.8, 0.8, (4, 3))
        assign = rng.integers(0, 4, n)
        return centers[assign] + rng.normal(0.0, 0.2, (n, 3))
    side = max(2, math.ceil(n ** (1.0 / 3.0)))
    axis = np.linspace(-1.0, 1.0, side)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    lattice = np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=1)
    return lattice[:n] + rng.normal(0.0, 0.01, (n, 3))


def _orbit_camera(angle: float, height: float, size: int) -> Camera:
    eye = np.array([3.2 * math.cos(angle), 3.2 * math.sin(angle), height])
    forward = -eye / np.linalg.norm(eye)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    trans = -rot @ eye
    focal = 1.2 * size
    return Camera(
        width=size, height=size, fx=focal, fy=focal,
        cx=size / 2.0, cy=size / 2.0, rotation=rot, translation=trans,
    )


def make_cameras(spec: SynthSpec):
    cams = []
    for i in range(spec.n_views):
        angle = 2.0 * math.pi * i / spec.n_views
        height = 0.5 if i % 2 == 0 else -0.5
        cams.append(_orbit_camera(angle, height, spec.image_size))
    return cams


def make_scene(spec: SynthSpec):
    """Build (scene, [(camera, ground-truth image)]) from a spec."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_gaussians
    n_redundant = math.floor(spec.fraction_redundant * n)
    n_solid = n - n_redundant

    solid_pos = _layout_positions(rng, spec.layout, n_solid)
    if n_redundant:
        if n_solid:
            anchors = solid_pos[rng.integers(0, n_solid, n_redundant)]
        else:
            anchors = np.zeros((n_redundant, 3))
        red_pos = anchors + rng.normal(0.0, 0.03, (n_redundant, 3))
    else:
        red_pos = np.zeros((0, 3))

    positions = np.concatenate([solid_pos, red_pos])
    log_scales = np.concatenate(
        [
            np.log(rng.uniform(0.05, 0.12, (n_solid, 3))),
            np.log(rng.uniform(0.01, 0.03, (n_redundant, 3))),
        ]
    )
    alpha = np.concatenate(
        [
            rng.uniform(0.35, 0.9, n_solid),
            rng.uniform(1e-4, 1e-3, n_redundant),
        ]
    )
    colors = np.concatenate(
        [
            rng.uniform(0.15, 0.85, (n_solid, 3)),
            rng.uniform(0.3, 0.7, (n_redundant, 3)),
        ]
    )
    rotations = rng.normal(0.0, 1.0, (n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)

    order = rng.permutation(n)
    scene = GaussianScene(
        positions=positions[order],
        rotations=rotations[order],
        log_scales=log_scales[order],
        opacity_logits=opacity_to_logit(alpha[order]) if n else np.zeros(0),
        sh_dc=(colors[order] - 0.5) / SH_C0,
        sh_rest=rng.normal(0.0, 0.02, (n, 45))[order],
    )
    views = [(cam, rasterize(scene, cam)) for cam in make_cameras(spec)]
    return scene, views


def redundant_mask(scene: GaussianScene) -> np.ndarray:
    """Gaussians with activated opacity below the redundancy cutoff."""
    return scene.activated_opacity() < 0.01


def write_dataset(spec: SynthSpec, directory) -> None:
    """Emit the scene as PLY plus a loadable view directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scene, views = make_scene(spec)
    (directory / "scene.ply").write_bytes(ply.write_scene(scene))
    views_io.save_views(directory / "views", views)
