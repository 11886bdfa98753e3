"""Two-stage underwater image enhancement: percentile color correction
followed by a CNN-predicted per-pixel channel-wise affine shift."""

__version__ = "0.1.0"

from .color_correction import ChannelBounds, color_correct, percentile_bounds
from .colorfulness import uicm_gradient, uicm_loss, uicm_raw
from .enhance import EnhancementResult, apply_shift, enhance, normalize_channels
from .imaging import channel_view, decode_image, encode_image, read_image, write_image
from .losses import LossBreakdown, edge_loss, pixel_loss, total_loss, total_loss_gradient
from .metrics import MetricReport, mse, psnr, ssim
from .network import NetworkParams, ShiftMaps, backward, forward, init_params, load_checkpoint, save_checkpoint
from .training import AdamState, TrainConfig, adam_step, pair_dataset, train

__all__ = [
    "AdamState", "ChannelBounds", "EnhancementResult", "LossBreakdown", "MetricReport", "NetworkParams",
    "ShiftMaps", "TrainConfig", "adam_step", "apply_shift", "backward", "channel_view", "color_correct",
    "decode_image", "edge_loss", "encode_image", "enhance", "forward", "init_params", "load_checkpoint",
    "mse", "normalize_channels", "pair_dataset", "percentile_bounds", "pixel_loss", "psnr", "read_image",
    "save_checkpoint", "ssim", "total_loss", "total_loss_gradient", "train", "uicm_gradient", "uicm_loss",
    "uicm_raw", "write_image",
]
