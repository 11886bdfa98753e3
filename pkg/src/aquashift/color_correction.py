"""Parameter-free percentile clip-and-stretch color correction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .imaging import as_image

P_LOW = 0.01
P_HIGH = 0.99


@dataclass(frozen=True)
class ChannelBounds:
    v_min: float
    v_max: float

    def __post_init__(self):
        if self.v_min > self.v_max:
            raise ValueError(f"v_min {self.v_min} exceeds v_max {self.v_max}")


def nearest_rank_index(p: float, n: int) -> int:
    """0-based index of the nearest-rank ``p`` percentile in a sorted list of ``n``.

    ``p`` is read through its shortest decimal repr so that e.g. 0.01 * 100
    ranks as exactly 1 rather than 1 + 2e-18.
    """
    rank = math.ceil(Fraction(repr(float(p))) * n)
    return max(rank, 1) - 1


def percentile_bounds(channel, p_low: float = P_LOW, p_high: float = P_HIGH) -> tuple[float, float]:
    x = np.asarray(channel, dtype=np.float64).reshape(-1)
    n = x.size
    if n == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 <= p_low < p_high <= 1.0:
        raise ValueError(f"need 0 <= p_low < p_high <= 1, got ({p_low}, {p_high})")
    lo, hi = nearest_rank_index(p_low, n), nearest_rank_index(p_high, n)
    # partition is O(N) and returns the same order statistics as a full sort
    part = np.partition(x, (lo, hi))
    return float(part[lo]), float(part[hi])


def clamp_channel(channel, bounds: ChannelBounds) -> np.ndarray:
    return np.minimum(np.maximum(np.asarray(channel, dtype=np.float64), bounds.v_min), bounds.v_max)


def stretch_channel(channel, bounds: ChannelBounds) -> np.ndarray:
    x = np.asarray(channel, dtype=np.float64)
    span = bounds.v_max - bounds.v_min
    if span == 0:
        return np.zeros_like(x)
    return (x - bounds.v_min) / span


def color_correct(image, p_low: float = P_LOW, p_high: float = P_HIGH):
    """Clip each channel to its percentile bounds and stretch it onto [0, 1].

    Returns the corrected image and the per-channel ``ChannelBounds``.
    """
    img = as_image(image)
    out = np.empty_like(img)
    bounds = []
    for c in range(img.shape[2]):
        plane = img[:, :, c]
        b = ChannelBounds(*percentile_bounds(plane, p_low, p_high))
        out[:, :, c] = stretch_channel(clamp_channel(plane, b), b)
        bounds.append(b)
    return out, tuple(bounds)
