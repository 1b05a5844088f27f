"""Importance-map guided bit allocation and rate control for a block-transform intra codec."""

from .codec import decode_image, encode_image, psnr, weighted_psnr
from .evaluation import RDCurve, bd_rate, delta_bpp, sweep
from .features import FilterBank, LayerSpec, default_bank, load_bank, run_stack
from .image import load_image, rescale_keep_aspect, save_pgm
from .importance import block_importance, fuse, importance_map
from .pipeline import Settings, encode_rc, encode_uniform_rc, importance_grid
from .rate_control import RCParams, RLambdaModel, RateControlSession, plan_blocks

__version__ = "0.1.0"
