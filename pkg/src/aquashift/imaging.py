"""Image tensors and PNG/JPEG codecs.

An image tensor is a float64 ``numpy`` array of shape ``(H, W, C)``, row-major
with interleaved channels, so ``t.ravel()`` is the (row, column, channel)
sample order and each pixel's color vector is contiguous.
"""

from __future__ import annotations

import io
import logging
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, ShapeError, UnsupportedFormatError

log = logging.getLogger(__name__)

FORMATS = {"png": "PNG", "jpeg": "JPEG"}
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def as_image(t, channels: int | None = 3) -> np.ndarray:
    """Coerce ``t`` to a float64 ``(H, W, C)`` array, checking the channel count."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected an H x W x C tensor, got shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise ShapeError(f"expected {channels} channels, got {arr.shape[2]}")
    return arr


def decode_image(data: bytes) -> np.ndarray:
    """Decode a PNG or JPEG byte stream into an ``H x W x 3`` tensor in [0, 1].

    Grayscale is replicated to three channels and alpha is dropped with a
    warning. Anything other than 8-bit RGB/L/P content is rejected.
    """
    try:
        img = Image.open(io.BytesIO(data))
        fmt = img.format
        img.load()
    except UnidentifiedImageError as exc:
        raise DecodeError("not a recognizable PNG or JPEG stream") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"malformed {_format_name(data)} stream: {exc}") from exc

    if fmt not in FORMATS.values():
        raise UnsupportedFormatError(f"unsupported container {fmt!r}; only PNG and JPEG are accepted")

    mode = img.mode
    if mode in ("RGBA", "LA", "PA") or (mode == "P" and "transparency" in img.info):
        log.warning("dropping alpha channel from %s image", fmt)
    if mode in ("RGB", "RGBA"):
        img = img.convert("RGB")
    elif mode in ("L", "LA", "1"):
        img = img.convert("L").convert("RGB")
    elif mode in ("P", "PA"):
        img = img.convert("RGBA").convert("RGB")
    else:
        raise UnsupportedFormatError(f"unsupported color space {mode!r} in {fmt} image")

    return np.asarray(img, dtype=np.uint8).astype(np.float64) / 255.0


def _format_name(data: bytes) -> str:
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return "PNG"
    if data[:2] == b"\xff\xd8":
        return "JPEG"
    return "image"


def quantize(t) -> np.ndarray:
    """Map [0, 1] samples to bytes with round-half-away-from-zero."""
    arr = np.asarray(t, dtype=np.float64)
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_image(t, format: str = "png") -> bytes:
    """Encode an ``H x W x 3`` tensor in [0, 1] as PNG or JPEG bytes."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"encode needs an H x W x 3 tensor, got shape {arr.shape}")
    if format not in FORMATS:
        raise ValueError(f"format must be one of {sorted(FORMATS)}, got {format!r}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot encode non-finite samples")
    buf = io.BytesIO()
    kwargs = {"quality": 95} if format == "jpeg" else {}
    Image.fromarray(quantize(arr), mode="RGB").save(buf, format=FORMATS[format], **kwargs)
    return buf.getvalue()


def channel_view(t, c: int) -> np.ndarray:
    """Return the N samples of channel ``c`` in row-major pixel order."""
    arr = np.asarray(t)
    if arr.ndim != 3:
        raise ShapeError(f"expected an H x W x C tensor, got shape {arr.shape}")
    if not 0 <= c < arr.shape[2]:
        raise IndexError(f"channel {c} out of range for {arr.shape[2]} channels")
    return arr[:, :, c].reshape(-1)


def read_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_image(path, t) -> None:
    path = Path(path)
    fmt = "jpeg" if path.suffix.lower() in (".jpg", ".jpeg") else "png"
    atomic_write_bytes(path, encode_image(t, fmt))


def list_images(path) -> list[Path]:
    """A single image path, or the images directly inside a directory, sorted by name."""
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    return [path]
