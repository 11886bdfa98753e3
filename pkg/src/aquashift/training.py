"""Adam training of the shift-map network against the joint objective.

Batches, crops and per-epoch shuffles are derived from ``(seed, step)``
alone, so a run resumed from a mid-training checkpoint replays exactly the
same steps as an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .color_correction import color_correct
from .enhance import apply_shift, normalize_backward, normalize_channels, shift_backward
from .errors import ContractError, DatasetError
from .imaging import IMAGE_SUFFIXES, atomic_write_bytes, read_image
from .losses import LAMBDAS, LossBreakdown, total_loss, total_loss_gradient
from .network import NetworkParams, backward, forward, init_params, save_checkpoint, zeros_like_params

log = logging.getLogger(__name__)

DEFAULT_LR = 0.0000125


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: NetworkParams, lr: float = DEFAULT_LR) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, lr)

    def save(self, path) -> None:
        import io

        buf = io.BytesIO()
        hyper = np.array([self.lr, self.beta1, self.beta2, self.eps])
        arrays = {f"m{i}": a for i, a in enumerate(self.m)} | {f"v{i}": a for i, a in enumerate(self.v)}
        np.savez(buf, step=np.array(self.step, dtype=np.int64), hyper=hyper, **arrays)
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path) -> "AdamState":
        with np.load(path) as z:
            n = sum(k.startswith("m") for k in z.files)
            lr, b1, b2, eps = (float(x) for x in z["hyper"])
            return cls([z[f"m{i}"] for i in range(n)], [z[f"v{i}"] for i in range(n)], int(z["step"]), lr, b1, b2, eps)


def adam_step(state: AdamState, params: NetworkParams, grads: NetworkParams):
    """One bias-corrected Adam update, applied in place. Returns ``(state, params)``."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.m):
        raise ContractError("parameter, gradient and optimizer state layouts differ")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state, params


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 1
    lr: float = DEFAULT_LR
    lambdas: tuple = LAMBDAS
    seed: int = 0
    checkpoint_every: int = 0
    patch_size: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.checkpoint_every < 0:
            raise ValueError(f"invalid training configuration: {self}")
        if self.patch_size is not None and self.patch_size < 4:
            raise ValueError("patch_size must be at least 4")


@dataclass
class PairedDataset:
    pairs: list[tuple[Path, Path]]
    unmatched: list[Path] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


def _image_size(path: Path):
    from PIL import Image

    try:
        with Image.open(path) as im:
            return im.size
    except Exception:
        return None


def pair_dataset(input_dir, gt_dir) -> PairedDataset:
    """Match images in two directories by filename stem, in lexicographic order."""
    input_dir, gt_dir = Path(input_dir), Path(gt_dir)
    for d in (input_dir, gt_dir):
        if not d.is_dir():
            raise DatasetError(f"{d} is not a directory")

    def by_stem(d: Path) -> dict[str, Path]:
        return {p.stem: p for p in sorted(d.iterdir()) if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}

    inputs, gts = by_stem(input_dir), by_stem(gt_dir)
    unmatched = sorted([inputs[s] for s in inputs.keys() - gts.keys()] + [gts[s] for s in gts.keys() - inputs.keys()])
    for p in unmatched:
        log.warning("no counterpart for %s; excluded", p)

    pairs = []
    for stem in sorted(inputs.keys() & gts.keys()):
        a, b = inputs[stem], gts[stem]
        sa, sb = _image_size(a), _image_size(b)
        if sa is not None and sb is not None and sa != sb:
            log.warning("size mismatch for %s: %s vs %s; excluded", stem, sa, sb)
            unmatched.append(a)
            continue
        pairs.append((a, b))
    if not pairs:
        raise DatasetError(f"no image pairs matched between {input_dir} and {gt_dir}")
    return PairedDataset(pairs, unmatched)


def load_pairs(dataset: PairedDataset) -> list[tuple[np.ndarray, np.ndarray]]:
    """Decode every pair, skipping (with a warning) anything unreadable."""
    out = []
    for a, b in dataset.pairs:
        try:
            img, gt = read_image(a), read_image(b)
        except Exception as exc:  # any decode failure skips the pair
            log.warning("skipping pair %s: %s", a.stem, exc)
            continue
        if img.shape != gt.shape:
            log.warning("skipping pair %s: shapes %s vs %s", a.stem, img.shape, gt.shape)
            continue
        out.append((img, gt))
    if not out:
        raise DatasetError("no decodable image pairs")
    return out


@dataclass
class TrainResult:
    params: NetworkParams
    history: list[dict]
    state: AdamState


def steps_per_epoch(n_pairs: int, batch_size: int) -> int:
    return math.ceil(n_pairs / batch_size)


def batch_for_step(step: int, n_pairs: int, config: TrainConfig) -> list[int]:
    """Pair indices used at 0-based ``step``; each epoch is a seeded shuffle."""
    spe = steps_per_epoch(n_pairs, config.batch_size)
    epoch, j = divmod(step, spe)
    order = np.random.default_rng([config.seed, epoch]).permutation(n_pairs)
    return [int(i) for i in order[j * config.batch_size : (j + 1) * config.batch_size]]


def _crop(img, gt, size: int | None, rng: np.random.Generator):
    if size is None:
        return img, gt
    h, w = img.shape[:2]
    if h < size or w < size:
        raise DatasetError(f"image {h}x{w} smaller than patch size {size}")
    r = int(rng.integers(0, h - size + 1))
    c = int(rng.integers(0, w - size + 1))
    return img[r : r + size, c : c + size], gt[r : r + size, c : c + size]


def loss_and_grads(params: NetworkParams, batch, lambdas=LAMBDAS) -> tuple[LossBreakdown, NetworkParams]:
    """Mean objective over ``batch`` of ``(input, ground_truth)`` and its parameter gradient.

    Each image runs through the pipeline on its own, so batch members may
    differ in size.
    """
    grads = zeros_like_params(params)
    acc = grads.arrays()
    parts = np.zeros(3)
    scale = 1.0 / len(batch)
    for img, gt in batch:
        o_prime, _ = color_correct(img)
        shift, cache = forward(params, o_prime)
        o_dprime = apply_shift(o_prime, shift)
        o, _ = normalize_channels(o_dprime)
        lb = total_loss(o, gt, img, lambdas)
        parts += (lb.pixel, lb.uicm, lb.edge)
        g_o = total_loss_gradient(o, gt, img, lambdas) * scale
        g_w, g_b = shift_backward(o_prime, shift, normalize_backward(o_dprime, g_o))
        pg, _ = backward(params, cache, g_w, g_b, need_dx=False)
        for a, b in zip(acc, pg.arrays()):
            a += b
    parts *= scale
    return LossBreakdown.combine(*(float(x) for x in parts), lambdas=lambdas), grads


def checkpoint_paths(out, step: int) -> tuple[Path, Path]:
    out = Path(out)
    base = out.with_name(f"{out.name}.step{step}")
    return base, base.with_name(base.name + ".adam")


def train(
    config: TrainConfig,
    dataset: PairedDataset | Sequence[tuple[np.ndarray, np.ndarray]],
    params: NetworkParams | int | None = None,
    state: AdamState | None = None,
    checkpoint_out=None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run (or resume) training until ``config.epochs`` worth of steps are done.

    ``params`` may be initial parameters, a seed, or ``None`` (seed from
    config). Passing a saved ``state`` resumes at ``state.step``.
    """
    pairs = load_pairs(dataset) if isinstance(dataset, PairedDataset) else list(dataset)
    if not pairs:
        raise DatasetError("empty dataset")
    if params is None:
        params = init_params(config.seed)
    elif isinstance(params, int):
        params = init_params(params)
    else:
        params = params.copy()
    state = AdamState.fresh(params, config.lr) if state is None else state
    state.lr = config.lr

    total_steps = config.epochs * steps_per_epoch(len(pairs), config.batch_size)
    history = []
    while state.step < total_steps:
        step = state.step
        t0 = time.perf_counter()
        crop_rng = np.random.default_rng([config.seed, step, 1])
        batch = [_crop(*pairs[i], config.patch_size, crop_rng) for i in batch_for_step(step, len(pairs), config)]
        lb, grads = loss_and_grads(params, batch, config.lambdas)
        adam_step(state, params, grads)
        rec = {
            "step": state.step,
            "pixel": lb.pixel,
            "uicm": lb.uicm,
            "edge": lb.edge,
            "total": lb.total,
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        }
        history.append(rec)
        if on_step is not None:
            on_step(rec)
        if checkpoint_out is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            ckpt, adam = checkpoint_paths(checkpoint_out, state.step)
            save_checkpoint(params, ckpt)
            state.save(adam)
    return TrainResult(params, history, state)


LOG_FIELDS = ("step", "pixel", "uicm", "edge", "total", "wall_ms")


def format_record(rec: dict) -> str:
    """One newline-delimited JSON record with the fixed field order."""
    return json.dumps({k: rec[k] for k in LOG_FIELDS})


def config_header(config: TrainConfig) -> dict:
    d = asdict(config)
    d["lambdas"] = list(config.lambdas)
    return d
