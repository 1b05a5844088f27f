"""End-to-end wiring: importance map -> block plan -> rate-controlled encode."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import EncodeResult, dct2, encode_image, pad_to_blocks, quantize, to_blocks, zigzag_order
from .entropy import block_bit_counts
from .features import FilterBank, default_bank, run_stack
from .image import ScaleInfo
from .importance import BlockImportanceGrid, ImportanceMap, block_importance, importance_map, uniform_grid
from .rate_control import RCParams, RLambdaModel, RateControlSession, plan_blocks

# one quantizer octave apart, none on the usual anchor QPs
PROBE_QPS = (12, 18, 24, 30, 36, 42, 48)
MODEL_SOURCES = ("fit", "fixed")


@dataclass
class Settings:
    """Everything a run needs besides the image itself."""

    layer: int = 3
    cu_size: int = 16
    input_size: int = 416
    model: RLambdaModel = field(default_factory=RLambdaModel)
    model_source: str = "fit"
    params: RCParams = field(default_factory=RCParams)
    bank: FilterBank | None = None

    def __post_init__(self):
        if self.model_source not in MODEL_SOURCES:
            raise ValueError(f"model_source must be one of {MODEL_SOURCES}")

    def filter_bank(self) -> FilterBank:
        if self.bank is None:
            self.bank = default_bank()
        return self.bank


def compute_importance(img: np.ndarray, settings: Settings) -> tuple[ImportanceMap, ScaleInfo]:
    tensor, info = run_stack(img, settings.filter_bank(), settings.layer, settings.input_size)
    return importance_map(tensor), info


def importance_grid(img: np.ndarray, settings: Settings) -> tuple[BlockImportanceGrid, ImportanceMap]:
    imap, info = compute_importance(img, settings)
    return block_importance(imap, settings.cu_size, info), imap


def rate_curve(img: np.ndarray, qps=PROBE_QPS, cu_size: int = 16) -> np.ndarray:
    """Exact fixed-QP bpp of ``img`` at each QP, from the coefficients alone."""
    img = np.asarray(img)
    blocks = to_blocks(pad_to_blocks(img.astype(np.float64), cu_size) - 128.0, cu_size)
    rows, cols = blocks.shape[:2]
    coeffs = dct2(blocks).reshape(rows, cols, cu_size * cu_size)[..., zigzag_order(cu_size)]
    return np.array([block_bit_counts(quantize(coeffs, q)).sum() / img.size for q in qps])


def fit_model(qps, bpps, base: RLambdaModel = RLambdaModel()) -> RLambdaModel:
    """Least-squares ``a`` and ``b`` for one picture, keeping ``c1`` and ``c2``.

    With ``QP = c1 ln(lambda) + c2`` and ``lambda = a bpp^b``, ``ln bpp`` is
    affine in QP; the fitted line is converted back to ``a`` and ``b``.
    Falls back to ``base`` if the curve is flat or not decreasing.
    """
    qps = np.asarray(qps, dtype=np.float64)
    bpps = np.asarray(bpps, dtype=np.float64)
    keep = bpps > 0
    if keep.sum() < 2:
        return base
    slope, icpt = np.polyfit(qps[keep], np.log(bpps[keep]), 1)
    if not slope < 0:
        return base
    b = 1.0 / (base.c1 * slope)
    log_a = -base.c2 / base.c1 - icpt * b
    return replace(base, a=math.exp(log_a), b=b)


def picture_model(img: np.ndarray, settings: Settings) -> RLambdaModel:
    if settings.model_source == "fixed":
        return settings.model
    return fit_model(PROBE_QPS, rate_curve(img, PROBE_QPS, settings.cu_size), settings.model)


@dataclass
class RCResult:
    encoded: EncodeResult
    session: RateControlSession
    model: RLambdaModel

    @property
    def bits(self) -> int:
        return self.encoded.payload_bits


def encode_rc(img: np.ndarray, grid: BlockImportanceGrid, t_bits: float, settings: Settings,
              model: RLambdaModel | None = None) -> RCResult:
    """Rate-controlled encode of ``img`` toward ``t_bits`` guided by ``grid``."""
    model = picture_model(img, settings) if model is None else model
    plan = plan_blocks(grid, t_bits, model, settings.params)
    session = RateControlSession(plan, model, settings.params)
    encoded = encode_image(img, session=session, cu_size=settings.cu_size)
    return RCResult(encoded, session, model)


def encode_uniform_rc(img: np.ndarray, t_bits: float, settings: Settings,
                      model: RLambdaModel | None = None) -> RCResult:
    h, w = np.asarray(img).shape
    return encode_rc(img, uniform_grid(w, h, settings.cu_size), t_bits, settings, model)
