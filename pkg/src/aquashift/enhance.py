"""Inference pipeline: color correction, shift-map prediction, rectified
channel-wise affine shift and per-channel max normalization.

``apply_shift`` and ``normalize_channels`` accept a single ``H x W x 3``
image or an ``N x H x W x 3`` batch; normalization is always per image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color_correction import color_correct
from .errors import ShapeError
from .imaging import as_image
from .network import NetworkParams, ShiftMaps, forward


@dataclass
class EnhancementResult:
    output: np.ndarray
    o_prime: np.ndarray
    shift: ShiftMaps
    channel_max: np.ndarray


def apply_shift(o_prime, shift: ShiftMaps) -> np.ndarray:
    x = np.asarray(o_prime, dtype=np.float64)
    if not (x.shape == np.shape(shift.w) == np.shape(shift.b)) or x.shape[-1] != 3:
        raise ShapeError(f"o_prime {x.shape}, w {np.shape(shift.w)}, b {np.shape(shift.b)} must share an H x W x 3 shape")
    return np.maximum(shift.w * x + shift.b, 0.0)


def normalize_channels(o_dprime):
    """Divide each channel by its own maximum; an all-zero channel stays zero."""
    x = np.asarray(o_dprime, dtype=np.float64)
    m = x.max(axis=(-3, -2), keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    out = np.where(m > 0, x / safe, 0.0)
    return out, m.reshape(x.shape[:-3] + (x.shape[-1],))


def normalize_backward(o_dprime, grad_out) -> np.ndarray:
    """Gradient through ``normalize_channels`` with the arg-max held fixed."""
    x = np.asarray(o_dprime, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x, g = x[None], g[None]
    n, h, w, c = x.shape
    flat_x = x.reshape(n, h * w, c)
    flat_g = g.reshape(n, h * w, c)
    m = flat_x.max(axis=1)  # (n, c)
    arg = flat_x.argmax(axis=1)
    safe = np.where(m > 0, m, 1.0)
    dx = np.where(m[:, None, :] > 0, flat_g / safe[:, None, :], 0.0)
    # quotient rule through the max: d(x_i/m)/dm = -x_i/m^2
    dm = np.where(m > 0, -(flat_g * flat_x).sum(axis=1) / safe**2, 0.0)
    np.add.at(dx, (np.arange(n)[:, None], arg, np.arange(c)[None, :]), dm)
    dx = dx.reshape(n, h, w, c)
    return dx[0] if single else dx


def shift_backward(o_prime, shift: ShiftMaps, grad_out) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``apply_shift`` with respect to the weight and bias maps."""
    pre = shift.w * o_prime + shift.b
    g = np.where(pre > 0.0, grad_out, 0.0)
    return g * o_prime, g


def enhance(image, params: NetworkParams) -> EnhancementResult:
    img = as_image(image)
    o_prime, _ = color_correct(img)
    shift, _ = forward(params, o_prime)
    output, channel_max = normalize_channels(apply_shift(o_prime, shift))
    return EnhancementResult(output, o_prime, shift, channel_max)
