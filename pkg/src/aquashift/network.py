"""Fully convolutional shift-map predictor with hand-written backprop.

Activations are ``(N, H, W, C)`` float64 arrays. Every convolution is 3x3,
stride 1, zero-padded by one pixel; every max-pool is a 2x2 window with
stride 1, zero-padded by one row and column on the bottom/right, so the
spatial size never changes. Each convolution except the last is followed
by a ReLU. The final 6 channels split into the weight map (0..2) and the
bias map (3..5).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointFormatError, ContractError, IncompatibleCheckpointError, ShapeError
from .imaging import atomic_write_bytes

POOL = ("pool",)


def _conv(cin: int, cout: int) -> tuple:
    return ("conv", cin, cout)


TABLE1_PLAN: tuple = (
    _conv(3, 64), _conv(64, 64), POOL,
    _conv(64, 128), _conv(128, 128), POOL,
    _conv(128, 256), _conv(256, 256), _conv(256, 256), _conv(256, 256), POOL,
    _conv(256, 256), _conv(256, 128), _conv(128, 64), _conv(64, 6), POOL,
    _conv(6, 6), _conv(6, 6), _conv(6, 6),
)

MIN_SIZE = 4
KERNEL = 3


def validate_plan(plan) -> tuple:
    plan = tuple(tuple(op) for op in plan)
    channels = 3
    convs = 0
    for op in plan:
        if op[0] == "conv":
            if op[1] != channels:
                raise ValueError(f"conv expects {op[1]} input channels but receives {channels}")
            channels = op[2]
            convs += 1
        elif op != POOL:
            raise ValueError(f"unknown layer {op!r}")
    if convs == 0 or channels != 6:
        raise ValueError("plan must contain convolutions and end with 6 output channels")
    return plan


def conv_shapes(plan) -> list[tuple[int, int, int, int]]:
    return [(op[2], op[1], KERNEL, KERNEL) for op in plan if op[0] == "conv"]


@dataclass
class ConvLayer:
    kernels: np.ndarray  # (out_ch, in_ch, 3, 3)
    biases: np.ndarray  # (out_ch,)


@dataclass
class NetworkParams:
    layers: list[ConvLayer]
    plan: tuple = TABLE1_PLAN

    def __post_init__(self):
        self.plan = validate_plan(self.plan)
        expected = conv_shapes(self.plan)
        got = [layer.kernels.shape for layer in self.layers]
        if got != expected:
            raise ShapeError(f"kernel shapes {got} do not match plan {expected}")

    def arrays(self) -> list[np.ndarray]:
        """Flat view of every parameter array, kernels then biases per layer."""
        out = []
        for layer in self.layers:
            out += [layer.kernels, layer.biases]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams([ConvLayer(l.kernels.copy(), l.biases.copy()) for l in self.layers], self.plan)

    def bit_equal(self, other: "NetworkParams") -> bool:
        if self.plan != other.plan:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class ShiftMaps:
    w: np.ndarray
    b: np.ndarray


@dataclass
class ForwardCache:
    plan: tuple
    input_shape: tuple
    records: list = field(default_factory=list)


def init_params(seed: int, plan=TABLE1_PLAN) -> NetworkParams:
    """He-normal kernels (variance 2 / fan_in), zero biases."""
    plan = validate_plan(plan)
    rng = np.random.default_rng(seed)
    layers = []
    for out_ch, in_ch, kh, kw in conv_shapes(plan):
        std = np.sqrt(2.0 / (in_ch * kh * kw))
        layers.append(ConvLayer(rng.standard_normal((out_ch, in_ch, kh, kw)) * std, np.zeros(out_ch)))
    return NetworkParams(layers, plan)


def zeros_like_params(params: NetworkParams) -> NetworkParams:
    return NetworkParams(
        [ConvLayer(np.zeros_like(l.kernels), np.zeros_like(l.biases)) for l in params.layers], params.plan
    )


# -- primitive layers ---------------------------------------------------------


def _im2col(x: np.ndarray) -> np.ndarray:
    """Patches of the zero-padded input, one row per pixel, columns ordered (ky, kx, C)."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))  # (N, H, W, C, ky, kx)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, KERNEL * KERNEL * c)


def _kernel_matrix(kernels: np.ndarray) -> np.ndarray:
    # (out, in, ky, kx) -> (out, ky*kx*in) to match _im2col column order
    return kernels.transpose(0, 2, 3, 1).reshape(kernels.shape[0], -1)


def conv2d_forward(x: np.ndarray, layer: ConvLayer):
    n, h, w, _ = x.shape
    cols = _im2col(x)
    out = cols @ _kernel_matrix(layer.kernels).T + layer.biases
    return out.reshape(n, h, w, -1), cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, layer: ConvLayer, x_shape, need_dx: bool = True):
    out_ch, in_ch = layer.kernels.shape[:2]
    dflat = dout.reshape(-1, out_ch)
    dk = (dflat.T @ cols).reshape(out_ch, KERNEL, KERNEL, in_ch).transpose(0, 3, 1, 2)
    db = dflat.sum(axis=0)
    if not need_dx:
        return dk, db, None
    # the input gradient of a same-padded stride-1 correlation is a correlation
    # of the upstream gradient with the spatially flipped, transposed kernel
    flipped = layer.kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx = _im2col(dout) @ _kernel_matrix(flipped).T
    return np.ascontiguousarray(dk), db, dx.reshape(x_shape)


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def maxpool_forward(x: np.ndarray):
    _, h, w, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 1), (0, 1), (0, 0)))
    cand = np.stack([xp[:, dy : dy + h, dx : dx + w, :] for dy, dx in _POOL_OFFSETS])
    # argmax returns the first maximal index: scan-order tie-break
    arg = cand.argmax(axis=0)
    return np.take_along_axis(cand, arg[None], axis=0)[0], arg


def maxpool_backward(dout: np.ndarray, arg: np.ndarray) -> np.ndarray:
    n, h, w, c = dout.shape
    dxp = np.zeros((n, h + 1, w + 1, c))
    for k, (dy, dx) in enumerate(_POOL_OFFSETS):
        dxp[:, dy : dy + h, dx : dx + w, :] += np.where(arg == k, dout, 0.0)
    return dxp[:, :h, :w, :]


# -- network --------------------------------------------------------------------


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ShapeError(f"network input must be H x W x 3 (optionally batched), got {np.shape(x)}")
    if arr.shape[1] < MIN_SIZE or arr.shape[2] < MIN_SIZE:
        raise ShapeError(f"network input must be at least {MIN_SIZE}x{MIN_SIZE}, got {arr.shape[1]}x{arr.shape[2]}")
    return arr, single


def forward(params: NetworkParams, x):
    """Predict the weight and bias maps for ``x``.

    ``x`` is ``H x W x 3`` or a batch ``N x H x W x 3``; the maps come back
    with the same leading shape. The cache feeds ``backward``.
    """
    a, single = _as_batch(x)
    cache = ForwardCache(params.plan, a.shape)
    convs = iter(params.layers)
    last_conv = sum(op[0] == "conv" for op in params.plan) - 1
    ci = 0
    for op in params.plan:
        if op[0] == "conv":
            layer = next(convs)
            z, cols = conv2d_forward(a, layer)
            relu = ci != last_conv
            cache.records.append(("conv", cols, a.shape, z if relu else None))
            a = np.maximum(z, 0.0) if relu else z
            ci += 1
        else:
            a, arg = maxpool_forward(a)
            cache.records.append(("pool", arg))
    if single:
        a = a[0]
    return ShiftMaps(a[..., :3], a[..., 3:]), cache


def backward(params: NetworkParams, cache: ForwardCache, grad_w, grad_b, need_dx: bool = True):
    """Reverse-mode pass. Returns ``(param_grads, input_grad)``; the input
    gradient is ``None`` when ``need_dx`` is false."""
    if cache.plan != params.plan or len(cache.records) != len(params.plan):
        raise ContractError("activation cache was produced by a different network")
    gw = np.asarray(grad_w, dtype=np.float64)
    gb = np.asarray(grad_b, dtype=np.float64)
    if gw.shape != gb.shape:
        raise ContractError(f"grad_w {gw.shape} and grad_b {gb.shape} differ")
    g = np.concatenate([gw, gb], axis=-1)
    if g.ndim == 3:
        g = g[None]
    if g.shape[:3] != cache.input_shape[:3]:
        raise ContractError(f"upstream gradient {g.shape} does not match cached input {cache.input_shape}")

    grads: list[ConvLayer] = []
    layers = list(params.layers)
    for idx in range(len(params.plan) - 1, -1, -1):
        rec = cache.records[idx]
        if rec[0] == "pool":
            g = maxpool_backward(g, rec[1])
            continue
        _, cols, x_shape, pre = rec
        if pre is not None:
            g = np.where(pre > 0.0, g, 0.0)
        layer = layers.pop()
        dk, db, g = conv2d_backward(g, cols, layer, x_shape, need_dx or bool(layers))
        grads.append(ConvLayer(dk, db))
    grads.reverse()
    if g is None:
        return NetworkParams(grads, params.plan), None
    dx = g[0] if np.ndim(grad_w) == 3 else g
    return NetworkParams(grads, params.plan), dx


# -- checkpoints ----------------------------------------------------------------

MAGIC = b"AQSH"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_LAYER = struct.Struct("<IIII")


def checkpoint_bytes(params: NetworkParams) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(params.layers))]
    for layer in params.layers:
        parts.append(_LAYER.pack(*layer.kernels.shape))
        parts.append(np.ascontiguousarray(layer.kernels, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())
    return b"".join(parts)


def parse_checkpoint(data: bytes, plan=TABLE1_PLAN) -> NetworkParams:
    if len(data) < _HEADER.size:
        raise CheckpointFormatError("checkpoint truncated in header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    off = _HEADER.size
    layers = []
    for i in range(count):
        if off + _LAYER.size > len(data):
            raise CheckpointFormatError(f"checkpoint truncated at layer {i} header")
        shape = _LAYER.unpack_from(data, off)
        off += _LAYER.size
        nk = shape[0] * shape[1] * shape[2] * shape[3]
        end = off + 8 * (nk + shape[0])
        if end > len(data):
            raise CheckpointFormatError(f"checkpoint truncated in layer {i} data")
        kernels = np.frombuffer(data, "<f8", nk, off).reshape(shape).astype(np.float64)
        biases = np.frombuffer(data, "<f8", shape[0], off + 8 * nk).astype(np.float64)
        layers.append(ConvLayer(kernels, biases))
        off = end
    if off != len(data):
        raise CheckpointFormatError(f"{len(data) - off} trailing bytes after last layer")

    plan = validate_plan(plan)
    got = [l.kernels.shape for l in layers]
    if got != conv_shapes(plan):
        raise IncompatibleCheckpointError(f"checkpoint layers {got} do not match network plan {conv_shapes(plan)}")
    return NetworkParams(layers, plan)


def save_checkpoint(params: NetworkParams, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(params))


def load_checkpoint(path, plan=TABLE1_PLAN) -> NetworkParams:
    return parse_checkpoint(Path(path).read_bytes(), plan)
