import io

import numpy as np
import pytest
from PIL import Image

TINY_PLAN = (("conv", 3, 8), ("pool",), ("conv", 8, 6))


def central_difference(f, x: np.ndarray, idx, h: float = 1e-6) -> float:
    """Central finite difference of scalar ``f()`` w.r.t. ``x.flat[idx]`` (x mutated in place)."""
    old = x.flat[idx]
    x.flat[idx] = old + h
    fp = f()
    x.flat[idx] = old - h
    fm = f()
    x.flat[idx] = old
    return (fp - fm) / (2 * h)


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def png_bytes(pixels: np.ndarray, mode: str | None = None) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def synthetic_pair(size: int = 32, seed: int = 0):
    """A smooth colorful ground truth and a tinted, noisy degraded version of it."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    gt = np.stack(
        [0.5 + 0.5 * np.sin(3 * xx + 1), 0.5 + 0.5 * np.cos(2 * yy), 0.5 + 0.5 * np.sin(2 * (xx + yy))], axis=-1
    )
    gt = gt / gt.max(axis=(0, 1))
    tint = gt * np.array([0.3, 0.7, 0.8]) + np.array([0.0, 0.15, 0.2])
    img = np.clip(tint + 0.01 * rng.standard_normal(gt.shape), 0.0, 1.0)
    return img, gt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"[{status}] criterion {self.number}: {self.title}" + (f" ({self.detail})" if self.detail else "")
        if exc_type is not None and exc is not None:
            line += f" -- {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
