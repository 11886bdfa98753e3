"""Underwater image colorfulness (UICM) statistics and the normalized loss.

The gradient treats the sort order and the trim membership of each sample
as fixed at the evaluation point, which is exact wherever no sample sits on
a trim boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .color_correction import P_HIGH, P_LOW, percentile_bounds
from .imaging import as_image

ALPHA1 = -0.0268
ALPHA2 = 0.1586
L_MIN = -0.0379009235
L_MAX = 0.897177084


@dataclass(frozen=True)
class TrimmedStats:
    mu: float
    sigma2: float
    t_min: int
    t_max: int


def opponent_planes(image) -> tuple[np.ndarray, np.ndarray]:
    """Return the ``(rg, yb)`` chrominance planes as flat arrays."""
    img = as_image(image)
    r, g, b = img[:, :, 0].ravel(), img[:, :, 1].ravel(), img[:, :, 2].ravel()
    return r - g, (r + g) / 2.0 - b


def _shifted_mean(x: np.ndarray) -> float:
    # mean about the first sample: exact for constant inputs
    ref = x[0]
    return float(ref + np.mean(x - ref))


def _trim_mask(x: np.ndarray, p_low: float, p_high: float) -> np.ndarray:
    v_min, v_max = percentile_bounds(x, p_low, p_high)
    return (x >= v_min) & (x <= v_max)


def trimmed_stats(plane, p_low: float = P_LOW, p_high: float = P_HIGH) -> TrimmedStats:
    """Trimmed mean of ``plane`` and its population variance about that mean.

    Samples strictly outside the percentile bounds are dropped from the mean;
    the variance still sums over every sample.
    """
    x = np.asarray(plane, dtype=np.float64).ravel()
    n = x.size
    v_min, v_max = percentile_bounds(x, p_low, p_high)
    t_min = int(np.count_nonzero(x < v_min))
    t_max = int(np.count_nonzero(x > v_max))
    assert t_min + t_max < n, "nearest-rank bounds always retain at least one sample"
    kept = np.sort(x)[t_min : n - t_max]
    mu = _shifted_mean(kept)
    sigma2 = float(np.mean((x - mu) ** 2))
    return TrimmedStats(mu, sigma2, t_min, t_max)


def uicm_raw(image) -> float:
    rg, yb = opponent_planes(image)
    s_rg, s_yb = trimmed_stats(rg), trimmed_stats(yb)
    return ALPHA1 * math.sqrt(s_rg.mu**2 + s_yb.mu**2) + ALPHA2 * math.sqrt(s_rg.sigma2 + s_yb.sigma2)


def normalize_uicm(raw: float) -> float:
    return (raw - L_MIN) / (L_MAX - L_MIN)


def uicm_loss(image) -> float:
    """Normalized colorfulness. Deliberately not clamped to [0, 1]."""
    return normalize_uicm(uicm_raw(image))


def _plane_grads(x: np.ndarray):
    """Stats of one plane plus d(mu)/dx and d(sigma2)/dx."""
    n = x.size
    keep = _trim_mask(x, P_LOW, P_HIGH)
    k = np.count_nonzero(keep)
    mu = _shifted_mean(x[keep])
    dev = x - mu
    sigma2 = np.mean(dev**2)
    dmu = keep / k
    # d sigma2 / dx_j = 2/N (x_j - mu) - 2/N * sum_i(x_i - mu) * dmu_j
    dsigma2 = 2.0 / n * dev - 2.0 / n * dev.sum() * dmu
    return mu, sigma2, dmu, dsigma2


def uicm_gradient(image) -> np.ndarray:
    """Gradient of ``uicm_loss`` with respect to every sample of ``image``."""
    img = as_image(image)
    rg, yb = opponent_planes(img)
    mu_rg, s2_rg, dmu_rg, ds2_rg = _plane_grads(rg)
    mu_yb, s2_yb, dmu_yb, ds2_yb = _plane_grads(yb)

    # sqrt has no derivative at 0; the radicands are minimized there, so use 0
    m = math.sqrt(mu_rg**2 + mu_yb**2)
    s = math.sqrt(s2_rg + s2_yb)
    g_rg = np.zeros_like(rg)
    g_yb = np.zeros_like(yb)
    if m > 0:
        g_rg += ALPHA1 * mu_rg / m * dmu_rg
        g_yb += ALPHA1 * mu_yb / m * dmu_yb
    if s > 0:
        g_rg += ALPHA2 * 0.5 / s * ds2_rg
        g_yb += ALPHA2 * 0.5 / s * ds2_yb

    scale = 1.0 / (L_MAX - L_MIN)
    grad = np.empty_like(img)
    grad[:, :, 0] = ((g_rg + 0.5 * g_yb) * scale).reshape(img.shape[:2])
    grad[:, :, 1] = ((-g_rg + 0.5 * g_yb) * scale).reshape(img.shape[:2])
    grad[:, :, 2] = (-g_yb * scale).reshape(img.shape[:2])
    return grad
