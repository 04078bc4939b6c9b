"""Windowed SSIM with an analytic gradient w.r.t. the first image.

Local statistics use an 11x11 Gaussian window (sigma 1.5) in "valid" mode:
the map only covers pixels whose window fits entirely inside the image, so
no padding convention leaks into the score. Constants assume a dynamic
range of 1.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

WINDOW = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2

_RADIUS = WINDOW // 2
_taps = np.exp(-0.5 * (np.arange(WINDOW) - _RADIUS) ** 2 / SIGMA ** 2)
_KERNEL = _taps / _taps.sum()


def _filt_same(x: np.ndarray) -> np.ndarray:
    """Separable Gaussian correlation, zero-padded 'same' output."""
    out = correlate1d(x, _KERNEL, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _KERNEL, axis=1, mode="constant", cval=0.0)


def _filt_valid(x: np.ndarray) -> np.ndarray:
    return _filt_same(x)[_RADIUS:-_RADIUS, _RADIUS:-_RADIUS]


def _filt_valid_adjoint(g: np.ndarray, shape) -> np.ndarray:
    """Adjoint of _filt_valid: zero-pad to `shape`, then filter (kernel is symmetric)."""
    padded = np.zeros(shape, dtype=np.float64)
    padded[_RADIUS:-_RADIUS, _RADIUS:-_RADIUS] = g
    return _filt_same(padded)


def _channel_stats(a, b):
    mu_a = _filt_valid(a)
    mu_b = _filt_valid(b)
    var_a = _filt_valid(a * a) - mu_a ** 2
    var_b = _filt_valid(b * b) - mu_b ** 2
    cov = _filt_valid(a * b) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def _require_ssim_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("expected images of shape (H, W, 3)")
    if a.shape[0] < WINDOW or a.shape[1] < WINDOW:
        raise ValueError(f"images must be at least {WINDOW}x{WINDOW} for SSIM")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all valid windows and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_ssim_shape(a, b)
    total = 0.0
    for ch in range(3):
        mu_a, mu_b, var_a, var_b, cov = _channel_stats(a[:, :, ch], b[:, :, ch])
        lum = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
        den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
        total += float(np.mean(lum / den))
    return total / 3.0


def ssim_with_grad(a: np.ndarray, b: np.ndarray):
    """(mean SSIM, d(mean SSIM)/da). Gradient shape matches `a`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_ssim_shape(a, b)
    grad = np.zeros_like(a)
    total = 0.0
    n_map = (a.shape[0] - 2 * _RADIUS) * (a.shape[1] - 2 * _RADIUS) * 3
    for ch in range(3):
        ac, bc = a[:, :, ch], b[:, :, ch]
        mu_a, mu_b, var_a, var_b, cov = _channel_stats(ac, bc)
        a1 = 2 * mu_a * mu_b + C1
        a2 = 2 * cov + C2
        b1 = mu_a ** 2 + mu_b ** 2 + C1
        b2 = var_a + var_b + C2
        s = (a1 * a2) / (b1 * b2)
        total += float(np.sum(s))
        # Map-level partials; each map pixel carries weight 1/n_map in the mean.
        g = 1.0 / n_map
        p_a1 = g * a2 / (b1 * b2)
        p_a2 = g * a1 / (b1 * b2)
        p_b1 = -g * s / b1
        p_b2 = -g * s / b2
        g_cov = 2 * p_a2
        g_var = p_b2
        # var_a = F(a^2) - mu_a^2, cov = F(ab) - mu_a*mu_b
        g_mu = 2 * mu_b * p_a1 + 2 * mu_a * p_b1 - 2 * mu_a * g_var - mu_b * g_cov
        shape = ac.shape
        grad[:, :, ch] = (
            _filt_valid_adjoint(g_mu, shape)
            + 2 * ac * _filt_valid_adjoint(g_var, shape)
            + bc * _filt_valid_adjoint(g_cov, shape)
        )
    return total / n_map, grad
