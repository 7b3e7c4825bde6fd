"""Synthetic velocity models, acoustic shot gathers, and UNet velocity inversion."""

__version__ = "0.1.0"

from .grid import Grid2D, export_image, normalize_minmax, read_grid, write_grid
from .geology import GeologyConfig, generate_dataset, generate_model
from .wave import AcquisitionGeometry, ShotGather, SpongeConfig, propagate_shot, ricker, simulate_survey
from .unet import UNetConfig, build_unet, count_params, forward
from .metrics import binary_dice, difference_image, soft_dice
from .train import TrainConfig, cross_validate, split_dataset, train_fold
