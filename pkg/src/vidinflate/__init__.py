"""Pixel-space text-to-video super-resolution by inflating an image diffusion UNet."""

from vidinflate.errors import (
    ConfigError,
    DataError,
    FormatError,
    InflationError,
    MetricError,
    NumericError,
    ParameterError,
    ShapeError,
)
from vidinflate.store import ParameterStore, load_checkpoint, save_checkpoint
from vidinflate.model import ModelConfig, build_image_unet, forward_image, forward_video, fold_frames, unfold_frames
from vidinflate.inflation import InflationReport, count_params, inflate, strip_adapters, verify_inflation

__version__ = "0.1.0"
