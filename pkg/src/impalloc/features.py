"""Convolutional feature stack: 3x3 cross-correlation, leaky activation, 2x2 max-pool.

A :class:`FilterBank` is an ordered list of :class:`LayerSpec`. Running the
stack on an image yields the post-activation responses of a chosen layer as a
:class:`FeatureTensor` of shape ``(N, H_l, W_l)``.

Filter bank files are JSON::

    {
      "padding": "edge",            # or "zero"
      "layers": [
        {
          "slope": 0.1,             # leaky negative slope, 0 <= slope < 1
          "pool": true,             # 2x2/2 max-pool after this layer
          "weights": [              # N filters
            [                       #   C_in input channels
              [k00, k01, k02, k10, k11, k12, k20, k21, k22]   # row-major 3x3
            ]
          ]
        }
      ]
    }
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .image import ScaleInfo, rescale_keep_aspect

PADDING_MODES = ("edge", "zero")


@dataclass
class LayerSpec:
    weights: np.ndarray  # (N, C_in, 3, 3)
    slope: float = 0.1
    pool: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim == 3 and self.weights.shape[-1] == 9:
            self.weights = self.weights.reshape(self.weights.shape[0], self.weights.shape[1], 3, 3)
        if self.weights.ndim != 4 or self.weights.shape[2:] != (3, 3):
            raise ValueError(f"kernels must be (N, C_in, 3, 3), got {self.weights.shape}")
        if self.weights.shape[0] < 1 or self.weights.shape[1] < 1:
            raise ValueError("layer needs at least one filter and one input channel")
        if not 0.0 <= self.slope < 1.0:
            raise ValueError(f"leaky slope must lie in [0, 1), got {self.slope}")

    @property
    def filters(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class FilterBank:
    layers: list[LayerSpec]
    padding: str = "edge"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("filter bank has no layers")
        if self.padding not in PADDING_MODES:
            raise ValueError(f"padding must be one of {PADDING_MODES}")
        for k in range(1, len(self.layers)):
            if self.layers[k].in_channels != self.layers[k - 1].filters:
                raise ValueError(
                    f"layer {k + 1} expects {self.layers[k].in_channels} channels, "
                    f"layer {k} produces {self.layers[k - 1].filters}"
                )

    def __len__(self):
        return len(self.layers)


@dataclass
class FeatureTensor:
    """Per-filter response maps of one layer, shape ``(N, H_l, W_l)``."""

    layer: int
    data: np.ndarray = field(repr=False)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _as_channels(x) -> np.ndarray:
    if isinstance(x, FeatureTensor):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] == 0 or x.shape[2] == 0:
        raise ValueError(f"expected a nonempty (C, H, W) input, got shape {x.shape}")
    return x


def cross_correlate(x, kernels: np.ndarray, padding: str = "edge") -> np.ndarray:
    """Same-size 3x3 cross-correlation (no activation).

    ``x`` is ``(C_in, H, W)`` (or a 2-D plane), ``kernels`` is
    ``(N, C_in, 3, 3)``. Borders are padded by one pixel, replicating the edge
    or with zeros.
    """
    x = _as_channels(x)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.shape[1] != x.shape[0]:
        raise ValueError(f"kernels expect {kernels.shape[1]} input channels, got {x.shape[0]}")
    if padding not in PADDING_MODES:
        raise ValueError(f"padding must be one of {PADDING_MODES}")
    mode = "edge" if padding == "edge" else "constant"
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode=mode)
    _, h, w = x.shape
    out = np.zeros((kernels.shape[0], h, w))
    for dy in range(3):
        for dx in range(3):
            window = xp[:, dy : dy + h, dx : dx + w]
            out += np.tensordot(kernels[:, :, dy, dx], window, axes=(1, 0))
    return out


def leaky(t: np.ndarray, slope: float) -> np.ndarray:
    return np.where(t >= 0, t, slope * t)


def conv_layer(x, spec: LayerSpec, padding: str = "edge", layer: int = 0) -> FeatureTensor:
    """Cross-correlate with every filter of ``spec`` and apply leaky activation."""
    return FeatureTensor(layer, leaky(cross_correlate(x, spec.weights, padding), spec.slope))


def max_pool(x) -> FeatureTensor:
    """2x2 max-pool with stride 2; an odd trailing row/column is dropped."""
    layer = x.layer if isinstance(x, FeatureTensor) else 0
    data = _as_channels(x)
    c, h, w = data.shape
    if h < 2 or w < 2:
        raise ValueError(f"map {w}x{h} is smaller than one 2x2 window")
    h2, w2 = h // 2, w // 2
    blocks = data[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2)
    return FeatureTensor(layer, blocks.max(axis=(2, 4)))


def run_stack(img: np.ndarray, bank: FilterBank, stop_layer: int,
              size: int = 416) -> tuple[FeatureTensor, ScaleInfo]:
    """Rescale ``img`` and run the bank up to ``stop_layer`` (1-based).

    The returned tensor is the activated output of ``stop_layer`` itself;
    pooling flagged on that layer is not applied. Pixels are mapped to
    ``[0, 1]`` before the first layer.
    """
    if not 1 <= stop_layer <= len(bank):
        raise ValueError(f"stop_layer {stop_layer} outside 1..{len(bank)}")
    scaled, info = rescale_keep_aspect(img, size)
    h, w = np.asarray(img).shape
    x = scaled.astype(np.float64)[None] / 255.0
    pools = 0
    tensor = None
    for idx in range(stop_layer):
        spec = bank.layers[idx]
        tensor = conv_layer(x, spec, bank.padding, layer=idx + 1)
        if idx + 1 < stop_layer:
            x = max_pool(tensor).data if spec.pool else tensor.data
            pools += int(spec.pool)
    c_l = size // (2 ** pools)
    info = ScaleInfo(
        layer=stop_layer,
        size=c_l,
        scale=c_l / max(w, h),
        width=tensor.width,
        height=tensor.height,
        src_width=w,
        src_height=h,
    )
    return tensor, info


# -- default bank -----------------------------------------------------------

def _k(rows) -> np.ndarray:
    return np.array(rows, dtype=np.float64)


SOBEL_X = _k([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]) / 4.0
SOBEL_Y = SOBEL_X.T.copy()
DIAG_A = _k([[0, 1, 2], [-1, 0, 1], [-2, -1, 0]]) / 4.0
DIAG_B = _k([[2, 1, 0], [1, 0, -1], [0, -1, -2]]) / 4.0
LAPLACE_8 = _k([[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]]) / 8.0
LAPLACE_4 = _k([[0, -1, 0], [-1, 4, -1], [0, -1, 0]]) / 4.0
LINE_H = _k([[-1, -1, -1], [2, 2, 2], [-1, -1, -1]]) / 6.0
LINE_V = LINE_H.T.copy()
GAUSS = _k([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 16.0
SHARPEN = 2.0 * _k([[0, 0, 0], [0, 1, 0], [0, 0, 0]]) - GAUSS


def _first_layer(gain: float) -> np.ndarray:
    oriented = [SOBEL_X, SOBEL_Y, DIAG_A, DIAG_B]
    kernels = [gain * s * k for k in oriented for s in (1.0, -1.0)]
    kernels += [gain * s * k for k in (LAPLACE_8, LAPLACE_4) for s in (1.0, -1.0)]
    kernels += [gain * LINE_H, gain * LINE_V, GAUSS, SHARPEN]
    return np.stack(kernels)[:, None]


_PROTOTYPES = (GAUSS, SOBEL_X, SOBEL_Y, LAPLACE_8, DIAG_A, DIAG_B, LAPLACE_4, GAUSS)


def _mixing_layer(c_in: int, n_out: int, gain: float) -> np.ndarray:
    """Kernels for deeper layers: a spatial prototype times a cosine channel mix.

    Filter ``n`` draws its spatial shape from a fixed prototype list and
    weights input channel ``c`` by ``cos(pi * k * (c + 0.5) / c_in)`` with
    ``k = n // 2``, so filters respond to different combinations of input
    features. Filters 0 and 1 see the plain channel sum.
    """
    w = np.zeros((n_out, c_in, 3, 3))
    for n in range(n_out):
        proto = _PROTOTYPES[n % len(_PROTOTYPES)]
        freq = n // 2
        for c in range(c_in):
            mix = np.cos(np.pi * freq * (c + 0.5) / c_in) if freq else 1.0
            w[n, c] = gain * mix * proto / c_in
    return w


def default_bank(slope: float = 0.1) -> FilterBank:
    """Seven-layer hand-designed bank with pools after layers 1, 2 and 5.

    Layer 1 holds 16 luma filters: 8 signed oriented edges (horizontal,
    vertical, two diagonals), signed 8- and 4-neighbour Laplacians, horizontal
    and vertical line detectors, a Gaussian and a sharpening filter. Deeper
    layers combine the previous layer's channels through
    :func:`_mixing_layer`.
    """
    sizes = [16, 32, 32, 16, 32, 32, 32]
    pools = [True, True, False, False, True, False, False]
    layers = [LayerSpec(_first_layer(gain=4.0), slope, pools[0])]
    for idx in range(1, len(sizes)):
        layers.append(LayerSpec(_mixing_layer(sizes[idx - 1], sizes[idx], gain=8.0), slope, pools[idx]))
    return FilterBank(layers, padding="edge")


def bank_to_dict(bank: FilterBank) -> dict:
    return {
        "padding": bank.padding,
        "layers": [
            {
                "slope": spec.slope,
                "pool": spec.pool,
                "weights": spec.weights.reshape(spec.filters, spec.in_channels, 9).tolist(),
            }
            for spec in bank.layers
        ],
    }


def bank_from_dict(doc: dict) -> FilterBank:
    try:
        layers = [
            LayerSpec(
                np.asarray(entry["weights"], dtype=np.float64),
                float(entry.get("slope", doc.get("slope", 0.1))),
                bool(entry.get("pool", False)),
            )
            for entry in doc["layers"]
        ]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed filter bank: {exc}") from exc
    return FilterBank(layers, padding=doc.get("padding", "edge"))


def load_bank(path: str | os.PathLike) -> FilterBank:
    with open(path) as fh:
        return bank_from_dict(json.load(fh))


def save_bank(path: str | os.PathLike, bank: FilterBank) -> None:
    with open(path, "w") as fh:
        json.dump(bank_to_dict(bank), fh)
