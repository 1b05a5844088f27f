"""Bjøntegaard-delta metrics, rate-control accuracy statistics and corpus sweeps."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .codec import encode_image, psnr, weighted_psnr
from .image import load_image
from .pipeline import Settings, encode_rc, encode_uniform_rc, importance_grid, picture_model

ANCHOR_QPS = (22, 27, 32, 37)
BD_METHODS = ("cubic", "pchip")


class CurveError(ValueError):
    pass


@dataclass
class RDCurve:
    """Rate/quality points sorted by rate; rate in bits or bpp (must be > 0)."""

    rates: np.ndarray
    qualities: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=np.float64)
        qual = np.asarray(self.qualities, dtype=np.float64)
        if rates.shape != qual.shape or rates.ndim != 1:
            raise CurveError("rates and qualities must be equal-length vectors")
        if rates.size < 4:
            raise CurveError(f"need at least 4 points, got {rates.size}")
        if not (np.all(np.isfinite(rates)) and np.all(np.isfinite(qual))):
            raise CurveError("non-finite rate or quality")
        if np.any(rates <= 0):
            raise CurveError("rates must be positive")
        order = np.argsort(rates)
        rates, qual = rates[order], qual[order]
        if np.any(np.diff(rates) <= 0):
            raise CurveError("rates must be strictly increasing")
        if np.any(np.diff(qual) < 0):
            raise CurveError("quality decreases while rate increases")
        self.rates, self.qualities = rates, qual

    @classmethod
    def from_points(cls, points) -> "RDCurve":
        rates, qual = zip(*points)
        return cls(np.array(rates), np.array(qual))


def _log_rate_integral(curve: RDCurve, lo: float, hi: float, method: str) -> float:
    """Integral of ln(rate) as a function of quality over ``[lo, hi]``."""
    q, lr = curve.qualities, np.log(curve.rates)
    if np.any(np.diff(q) <= 0):
        raise CurveError("repeated quality values make the fit degenerate")
    if method == "cubic":
        poly = np.polyint(np.polyfit(q, lr, 3))
        return float(np.polyval(poly, hi) - np.polyval(poly, lo))
    if method == "pchip":
        return float(PchipInterpolator(q, lr).integrate(lo, hi))
    raise ValueError(f"method must be one of {BD_METHODS}")


def bd_rate(anchor: RDCurve, test: RDCurve, method: str = "cubic") -> float:
    """Average rate difference of ``test`` vs ``anchor`` at equal quality, in percent."""
    lo = max(anchor.qualities[0], test.qualities[0])
    hi = min(anchor.qualities[-1], test.qualities[-1])
    if not hi > lo:
        raise CurveError("quality ranges do not overlap")
    diff = (_log_rate_integral(test, lo, hi, method) - _log_rate_integral(anchor, lo, hi, method)) / (hi - lo)
    return 100.0 * math.expm1(diff)


def bd_quality(anchor: RDCurve, test: RDCurve) -> float:
    """Average quality difference of ``test`` vs ``anchor`` at equal rate (BD-PSNR style)."""
    la, lt = np.log(anchor.rates), np.log(test.rates)
    lo, hi = max(la[0], lt[0]), min(la[-1], lt[-1])
    if not hi > lo:
        raise CurveError("rate ranges do not overlap")
    pa = np.polyint(np.polyfit(la, anchor.qualities, 3))
    pt = np.polyint(np.polyfit(lt, test.qualities, 3))
    return float((np.polyval(pt, hi) - np.polyval(pt, lo) - np.polyval(pa, hi) + np.polyval(pa, lo)) / (hi - lo))


@dataclass(frozen=True)
class AccuracyStats:
    delta_bpp: float  # mean absolute bpp deviation
    sigma_bpp: float  # standard deviation of the signed deviation
    count: int


def delta_bpp(reference_bits, achieved_bits, pixels) -> AccuracyStats:
    ref = np.asarray(reference_bits, dtype=np.float64)
    got = np.asarray(achieved_bits, dtype=np.float64)
    pix = np.broadcast_to(np.asarray(pixels, dtype=np.float64), ref.shape)
    if ref.shape != got.shape:
        raise ValueError(f"length mismatch: {ref.size} reference vs {got.size} achieved")
    if ref.size == 0:
        raise ValueError("no images")
    dev = (got - ref) / pix
    return AccuracyStats(float(np.mean(np.abs(dev))), float(np.std(dev)), int(ref.size))


# -- sweeps -------------------------------------------------------------------

MODES = ("anchor", "uniform_rc", "importance_rc")


@dataclass
class Record:
    image: str
    mode: str
    anchor_qp: int
    target_bits: int
    bits: int
    pixels: int
    psnr: float
    wpsnr: float

    @property
    def bpp(self) -> float:
        return self.bits / self.pixels


def sweep_image(path: str | os.PathLike, settings: Settings, anchor_qps=ANCHOR_QPS) -> list[Record]:
    """Anchor runs at fixed QPs, then both rate-control modes at the anchor bit counts."""
    img = load_image(path)
    name = Path(path).stem
    h, w = img.shape
    grid, imap = importance_grid(img, settings)
    weights = imap.upsample(w, h)
    model = picture_model(img, settings)
    out = []

    def record(mode, qp, target, recon, bits):
        out.append(Record(name, mode, qp, int(target), int(bits), img.size,
                          psnr(img, recon), weighted_psnr(img, recon, weights)))

    for qp in anchor_qps:
        anchor = encode_image(img, qp=qp, cu_size=settings.cu_size)
        target = anchor.payload_bits
        record("anchor", qp, target, anchor.recon, target)
        uni = encode_uniform_rc(img, target, settings, model)
        record("uniform_rc", qp, target, uni.encoded.recon, uni.bits)
        imp = encode_rc(img, grid, target, settings, model)
        record("importance_rc", qp, target, imp.encoded.recon, imp.bits)
    return out


def _sweep_job(args):
    return sweep_image(*args)


def sweep(paths, settings: Settings, anchor_qps=ANCHOR_QPS, jobs: int = 1) -> list[Record]:
    paths = [str(p) for p in paths]
    if not paths:
        raise ValueError("empty corpus")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_sweep_job, [(p, settings, anchor_qps) for p in paths]))
    else:
        chunks = [sweep_image(p, settings, anchor_qps) for p in paths]
    return [r for chunk in chunks for r in chunk]


def corpus_paths(directory: str | os.PathLike) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory {directory} not found")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in (".pgm", ".ppm", ".png"))


def bundled_corpus() -> list[Path]:
    return corpus_paths(Path(__file__).parent / "data" / "corpus")


def _select(records, mode, image=None):
    rows = [r for r in records if r.mode == mode and (image is None or r.image == image)]
    return sorted(rows, key=lambda r: -r.anchor_qp)


def curve_for(records, mode, metric="psnr", image=None) -> RDCurve:
    """RD curve of one mode, for one image or pooled (mean bpp and quality per anchor QP)."""
    rows = _select(records, mode, image)
    if image is not None:
        return RDCurve(np.array([r.bpp for r in rows]), np.array([getattr(r, metric) for r in rows]))
    qps = sorted({r.anchor_qp for r in rows}, reverse=True)
    rates = [np.mean([r.bpp for r in rows if r.anchor_qp == q]) for q in qps]
    qual = [np.mean([getattr(r, metric) for r in rows if r.anchor_qp == q]) for q in qps]
    return RDCurve(np.array(rates), np.array(qual))


@dataclass
class ComparisonRow:
    label: str
    reference: str
    test: str
    accuracy: AccuracyStats | None
    bd_psnr_pooled: float
    bd_wpsnr_pooled: float
    bd_psnr_mean: float
    bd_wpsnr_mean: float
    valid_images: int


def _safe_bd(a_fn, b_fn, method):
    try:
        return bd_rate(a_fn(), b_fn(), method)
    except CurveError:
        return math.nan


def compare(records, reference: str, test: str, method: str = "cubic") -> ComparisonRow:
    images = sorted({r.image for r in records})
    acc = None
    if test != "anchor":
        rows = _select(records, test)
        acc = delta_bpp([r.target_bits for r in rows], [r.bits for r in rows], [r.pixels for r in rows])
    per = {"psnr": [], "wpsnr": []}
    valid = 0
    for name in images:
        vals = {m: _safe_bd(lambda m=m: curve_for(records, reference, m, name),
                            lambda m=m: curve_for(records, test, m, name), method) for m in per}
        if all(math.isfinite(v) for v in vals.values()):
            valid += 1
            for m, v in vals.items():
                per[m].append(v)
    pooled = {m: _safe_bd(lambda m=m: curve_for(records, reference, m),
                          lambda m=m: curve_for(records, test, m), method) for m in per}
    mean = {m: float(np.mean(v)) if v else math.nan for m, v in per.items()}
    return ComparisonRow(f"{reference} vs. {test}", reference, test, acc,
                         pooled["psnr"], pooled["wpsnr"], mean["psnr"], mean["wpsnr"], valid)


def comparison_table(records, method: str = "cubic") -> list[ComparisonRow]:
    pairs = [("anchor", "uniform_rc"), ("anchor", "importance_rc"), ("uniform_rc", "importance_rc")]
    return [compare(records, a, b, method) for a, b in pairs]


def wpsnr_gains(records) -> dict[str, float]:
    """Per image BD quality gain in weighted PSNR of importance RC over uniform RC."""
    gains = {}
    for name in sorted({r.image for r in records}):
        try:
            gains[name] = bd_quality(curve_for(records, "uniform_rc", "wpsnr", name),
                                     curve_for(records, "importance_rc", "wpsnr", name))
        except CurveError:
            gains[name] = math.nan
    return gains


def records_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image", "mode", "anchor_qp", "target_bits", "bits", "bpp", "psnr", "wpsnr"])
    for r in records:
        writer.writerow([r.image, r.mode, r.anchor_qp, r.target_bits, r.bits,
                         f"{r.bpp:.6f}", f"{r.psnr:.4f}", f"{r.wpsnr:.4f}"])
    return buf.getvalue()


def _fmt(value, spec):
    return "-" if value is None or (isinstance(value, float) and math.isnan(value)) else format(value, spec)


def summary_text(records, method: str = "cubic") -> str:
    """Table-shaped summary: accuracy and BD-rate per comparison.

    wPSNR is the importance-weighted PSNR, a stand-in for detection accuracy.
    """
    rows = comparison_table(records, method)
    n_images = len({r.image for r in records})
    lines = [
        f"images: {n_images}   BD fit: {method}   quality proxy: wPSNR (importance-weighted PSNR)",
        "",
        f"{'comparison':<30}{'dbpp':>9}{'sbpp':>9}{'BD-BR-PSNR':>13}{'BD-BR-wPSNR':>13}"
        f"{'(per-image mean) PSNR':>23}{'wPSNR':>9}{'n':>4}",
    ]
    for row in rows:
        acc = row.accuracy
        lines.append(
            f"{row.label:<30}{_fmt(acc and acc.delta_bpp, '.4f'):>9}{_fmt(acc and acc.sigma_bpp, '.4f'):>9}"
            f"{_fmt(row.bd_psnr_pooled, '+.2f') + '%':>13}{_fmt(row.bd_wpsnr_pooled, '+.2f') + '%':>13}"
            f"{_fmt(row.bd_psnr_mean, '+.2f') + '%':>23}{_fmt(row.bd_wpsnr_mean, '+.2f') + '%':>9}{row.valid_images:>4}"
        )
    lines.append("")
    lines.append("pooled: BD over corpus-mean curves; per-image mean: average of per-image BD values")
    gains = wpsnr_gains(records)
    wins = sum(1 for g in gains.values() if g > 0.05)
    lines.append(f"wPSNR gain of importance_rc over uniform_rc at equal rate (dB): "
                 + ", ".join(f"{k}={_fmt(v, '+.3f')}" for k, v in gains.items()))
    lines.append(f"images with gain > 0.05 dB: {wins}/{len(gains)}")
    return "\n".join(lines) + "\n"
