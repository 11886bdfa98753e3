"""Training objective: pixel MSE, colorfulness reward, edge preservation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colorfulness import uicm_gradient, uicm_loss
from .errors import ShapeError
from .imaging import as_image

LAMBDAS = (1.0, 0.001, 0.0001)


@dataclass(frozen=True)
class LossBreakdown:
    pixel: float
    uicm: float
    edge: float
    total: float
    lambdas: tuple = LAMBDAS

    @classmethod
    def combine(cls, pixel: float, uicm: float, edge: float, lambdas=LAMBDAS) -> "LossBreakdown":
        l1, l2, l3 = lambdas
        return cls(pixel, uicm, edge, l1 * pixel - l2 * uicm + l3 * edge, tuple(lambdas))


def _same_shape(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def pixel_loss(o, ground_truth) -> float:
    o, gt = _same_shape(o, ground_truth)
    return float(np.mean((o - gt) ** 2))


def image_gradients(t) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences; the last column of gx and last row of gy are 0."""
    t = as_image(t, channels=None)
    if t.shape[0] < 2 or t.shape[1] < 2:
        raise ShapeError(f"image gradients need H, W >= 2, got {t.shape[:2]}")
    gx = np.zeros_like(t)
    gy = np.zeros_like(t)
    gx[:, :-1] = t[:, 1:] - t[:, :-1]
    gy[:-1] = t[1:] - t[:-1]
    return gx, gy


def edge_loss(i, o) -> float:
    i, o = _same_shape(i, o)
    ix, iy = image_gradients(i)
    ox, oy = image_gradients(o)
    return float(np.mean(np.abs(ix**2 - ox**2) + np.abs(iy**2 - oy**2)))


def edge_gradient(i, o) -> np.ndarray:
    """d edge_loss / d o, with sign(0) = 0."""
    i, o = _same_shape(i, o)
    ix, iy = image_gradients(i)
    ox, oy = image_gradients(o)
    m = o.size
    dox = -2.0 * ox * np.sign(ix**2 - ox**2) / m
    doy = -2.0 * oy * np.sign(iy**2 - oy**2) / m
    grad = np.zeros_like(o)
    grad[:, 1:] += dox[:, :-1]
    grad[:, :-1] -= dox[:, :-1]
    grad[1:] += doy[:-1]
    grad[:-1] -= doy[:-1]
    return grad


def total_loss(o, ground_truth, input_image, lambdas=LAMBDAS) -> LossBreakdown:
    o, gt = _same_shape(o, ground_truth)
    return LossBreakdown.combine(pixel_loss(o, gt), uicm_loss(o), edge_loss(input_image, o), lambdas)


def total_loss_gradient(o, ground_truth, input_image, lambdas=LAMBDAS) -> np.ndarray:
    o, gt = _same_shape(o, ground_truth)
    l1, l2, l3 = lambdas
    d_pixel = 2.0 * (o - gt) / o.size
    return l1 * d_pixel - l2 * uicm_gradient(o) + l3 * edge_gradient(input_image, o)
