"""Importance-guided block bit allocation and R-lambda rate control.

The flow for one picture:

1. :func:`plan_blocks` turns block importance and the picture budget into
   coarse bpp, preliminary QPs (band ``QP_s +- 3``), model bpp, final
   importance and block weights.
2. :class:`RateControlSession` walks the blocks in raster order. For each
   block it derives the target bits from the remaining budget and the
   remaining-bits estimate, maps them to an actual QP inside the active band,
   and after coding takes the true bit count back into the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .importance import BlockImportanceGrid

QP_MIN, QP_MAX = 0, 51


@dataclass(frozen=True)
class RLambdaModel:
    """``lambda = a * bpp**b`` and ``QP = round(c1 * ln(lambda) + c2)``."""

    a: float = 3.2003
    b: float = -1.367
    c1: float = 4.2005
    c2: float = 13.7122

    def __post_init__(self):
        if not self.b < 0:
            raise ValueError(f"model exponent b must be negative, got {self.b}")
        if not (self.a > 0 and self.c1 > 0):
            raise ValueError("model coefficients a and c1 must be positive")

    def lambda_of_bpp(self, bpp: float) -> float:
        if not bpp > 0:
            raise ValueError(f"bpp must be positive, got {bpp}; zero-rate blocks take the QP increment path")
        return self.a * bpp**self.b

    def qp_float(self, lam: float) -> float:
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        return self.c1 * math.log(lam) + self.c2

    def qp_of_lambda(self, lam: float) -> int:
        return clip_qp(round_half_up(self.qp_float(lam)))

    def qp_of_bpp(self, bpp: float) -> int:
        if not bpp > 0:
            raise ValueError(f"bpp must be positive, got {bpp}")
        # log domain: lambda itself overflows for tiny rates
        ln_lam = math.log(self.a) + self.b * math.log(bpp)
        return clip_qp(round_half_up(self.c1 * ln_lam + self.c2))

    def lambda_of_qp(self, qp: float) -> float:
        return math.exp((qp - self.c2) / self.c1)

    def bpp_of_qp(self, qp: float) -> float:
        return (self.lambda_of_qp(qp) / self.a) ** (1.0 / self.b)


@dataclass(frozen=True)
class RCParams:
    """Sliding window and QP band settings."""

    sw: int = 4
    prelim_band: int = 3
    actual_band: int = 2
    shift_trigger: int = 3
    shifted_band: tuple[int, int] = (0, 4)

    def __post_init__(self):
        if self.sw < 1:
            raise ValueError("sliding window must be >= 1")
        lo, hi = self.shifted_band
        if lo > hi:
            raise ValueError("shifted band lower offset exceeds upper offset")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def clip_qp(qp: int) -> int:
    return max(QP_MIN, min(QP_MAX, int(qp)))


def coarse_bpp(importance: np.ndarray, t_bits: float, n_pixels: np.ndarray) -> np.ndarray:
    """Initial per-block bpp: importance share of the budget over block area."""
    if not t_bits > 0:
        raise ValueError(f"target bits must be positive, got {t_bits}")
    return np.asarray(importance, dtype=np.float64) * t_bits / np.asarray(n_pixels, dtype=np.float64)


def picture_qp(t_bits: float, total_pixels: int, model: RLambdaModel = RLambdaModel()) -> int:
    if not t_bits > 0:
        raise ValueError(f"target bits must be positive, got {t_bits}")
    return model.qp_of_bpp(t_bits / total_pixels)


def preliminary_qp(bpp: np.ndarray, qp_s: int, importance: np.ndarray,
                   model: RLambdaModel = RLambdaModel(), band: int = 3):
    """Preliminary QP and model bpp per block.

    QP from the model is clipped to ``qp_s +- band``; zero-rate blocks sit at
    the top of the band. ``bpp_p`` is the model rate at that QP. Blocks with
    zero importance are then raised by one QP (after clipping, without
    recomputing ``bpp_p``).
    """
    bpp = np.asarray(bpp, dtype=np.float64)
    lo, hi = clip_qp(qp_s - band), clip_qp(qp_s + band)
    qp_p = np.empty(bpp.shape, dtype=np.int64)
    for idx, value in np.ndenumerate(bpp):
        raw = model.qp_of_bpp(value) if value > 0 else hi
        qp_p[idx] = min(hi, max(lo, raw))
    bpp_p = np.vectorize(model.bpp_of_qp, otypes=[np.float64])(qp_p)
    zero = np.asarray(importance) == 0
    qp_p[zero] = np.minimum(qp_p[zero] + 1, QP_MAX)
    return qp_p, bpp_p


def final_importance(bpp_p: np.ndarray) -> np.ndarray:
    bpp_p = np.asarray(bpp_p, dtype=np.float64)
    total = bpp_p.sum()
    if not total > 0:
        return np.full(bpp_p.shape, 1.0 / bpp_p.size)
    return bpp_p / total


def block_weights(i_f: np.ndarray) -> np.ndarray:
    i_f = np.asarray(i_f, dtype=np.float64)
    return i_f / i_f.sum()


def remaining_bits_estimate(bpp_p: np.ndarray, n_pixels: np.ndarray, cursor: int) -> float:
    """Model bits of block ``cursor`` (raster index) and every block after it."""
    bits = (np.asarray(bpp_p, dtype=np.float64) * np.asarray(n_pixels)).ravel()
    if not 0 <= cursor < bits.size:
        raise IndexError(f"cursor {cursor} outside 0..{bits.size - 1}")
    return float(bits[cursor:].sum())


def target_bits_block(l_bits: float, l_blk: int, l_est: float, sw: int, w: float) -> float:
    """Block target from the remaining budget, smoothed over the sliding window.

    ``w`` is the block's weight among the blocks still to be coded. Negative
    results (budget overdrawn) are floored at zero.
    """
    if l_blk < 1:
        raise ValueError("no blocks left to code")
    return max(0.0, (l_bits + l_blk * (l_bits - l_est) / sw) * w)


def actual_qp(t_blk: float, n_pixels: int, qp_s: int, qp_p: int,
              model: RLambdaModel = RLambdaModel(), params: RCParams = RCParams()) -> int:
    """QP for the block from its bit target, bounded by the active band.

    The band is ``qp_s +- actual_band``, shifted to ``qp_s + shifted_band``
    when the preliminary QP reached ``qp_s + shift_trigger``.
    """
    if n_pixels < 1:
        raise ValueError("block has no pixels")
    if qp_p >= qp_s + params.shift_trigger:
        lo, hi = qp_s + params.shifted_band[0], qp_s + params.shifted_band[1]
    else:
        lo, hi = qp_s - params.actual_band, qp_s + params.actual_band
    bpp = t_blk / n_pixels
    raw = model.qp_of_bpp(bpp) if bpp > 0 else hi
    return clip_qp(min(hi, max(lo, raw)))


@dataclass
class BlockPlan:
    """Per-block allocation data, all arrays of the grid's ``(rows, cols)`` shape."""

    grid: BlockImportanceGrid
    t_bits: float
    qp_s: int
    bpp_coarse: np.ndarray = field(repr=False)
    qp_p: np.ndarray = field(repr=False)
    bpp_p: np.ndarray = field(repr=False)
    i_f: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)

    @property
    def est_bits(self) -> np.ndarray:
        return self.bpp_p * self.grid.n_pixels


def plan_blocks(grid: BlockImportanceGrid, t_bits: float,
                model: RLambdaModel = RLambdaModel(), params: RCParams = RCParams()) -> BlockPlan:
    total_pixels = int(grid.n_pixels.sum())
    qp_s = picture_qp(t_bits, total_pixels, model)
    bpp_c = coarse_bpp(grid.values, t_bits, grid.n_pixels)
    qp_p, bpp_p = preliminary_qp(bpp_c, qp_s, grid.values, model, params.prelim_band)
    i_f = final_importance(bpp_p)
    return BlockPlan(grid, float(t_bits), qp_s, bpp_c, qp_p, bpp_p, i_f, block_weights(i_f))


class BudgetError(RuntimeError):
    pass


class RateControlSession:
    """Sequential budget state for coding one picture in raster order.

    Usage::

        session = RateControlSession(plan_blocks(grid, t_bits))
        while not session.done:
            qp = session.next_qp()
            session.commit(code_block(qp))
    """

    def __init__(self, plan: BlockPlan, model: RLambdaModel = RLambdaModel(),
                 params: RCParams = RCParams()):
        self.plan = plan
        self.model = model
        self.params = params
        self.total_blocks = plan.grid.count
        self.l_bits = plan.t_bits
        self.l_blk = self.total_blocks
        self.cursor = 0
        self._w = plan.w.ravel()
        self._est = plan.est_bits.ravel()
        # suffix sums, index k -> blocks k..end
        self._est_left = np.concatenate([np.cumsum(self._est[::-1])[::-1], [0.0]])
        self._w_left = np.concatenate([np.cumsum(self._w[::-1])[::-1], [0.0]])
        self.t_blk = np.zeros(self.total_blocks)
        self.qp_a = np.zeros(self.total_blocks, dtype=np.int64)
        self.bits_actual = np.zeros(self.total_blocks, dtype=np.int64)
        self._pending = False

    @property
    def qp_s(self) -> int:
        return self.plan.qp_s

    @property
    def done(self) -> bool:
        return self.cursor >= self.total_blocks

    def remaining_weight(self) -> float:
        """Weight of the current block among the blocks not yet coded."""
        left = self._w_left[self.cursor]
        return float(self._w[self.cursor] / left) if left > 0 else 1.0 / self.l_blk

    def next_qp(self) -> int:
        if self.done:
            raise BudgetError("all blocks already coded")
        k = self.cursor
        t = target_bits_block(self.l_bits, self.l_blk, float(self._est_left[k]),
                              self.params.sw, self.remaining_weight())
        n = int(self.plan.grid.n_pixels.ravel()[k])
        qp = actual_qp(t, n, self.qp_s, int(self.plan.qp_p.ravel()[k]), self.model, self.params)
        self.t_blk[k] = t
        self.qp_a[k] = qp
        self._pending = True
        return qp

    def commit(self, bits: int) -> None:
        if self.done:
            raise BudgetError("commit after the last block")
        if not self._pending:
            self.next_qp()
        self.bits_actual[self.cursor] = bits
        self.l_bits -= bits
        self.l_blk -= 1
        self.cursor += 1
        self._pending = False
