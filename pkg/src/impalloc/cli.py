"""Command-line entry point.

Exit codes: 0 success, 1 runtime/I/O error, 2 usage or configuration error,
3 outputs written but an invariant (budget tolerance, QP band, decoder
match) failed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .codec import decode_image, encode_image, parse_header
from .config import ConfigError, load_config
from .entropy import MalformedStreamError
from .evaluation import (RDCurve, CurveError, bd_rate, bundled_corpus, corpus_paths, curve_for,
                         records_csv, summary_text, sweep)
from .image import ImageFormatError, load_image, save_pgm
from .importance import block_importance, uniform_grid
from .pipeline import compute_importance, encode_rc, importance_grid

log = logging.getLogger("impalloc")

EXIT_ERROR, EXIT_USAGE, EXIT_INVARIANT = 1, 2, 3


class InvariantError(RuntimeError):
    pass


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_importance(args, cfg) -> int:
    settings = cfg.settings()
    img = load_image(args.image)
    imap, info = compute_importance(img, settings)
    grid = block_importance(imap, settings.cu_size, info)
    out = _out_dir(cfg)
    stem = Path(args.image).stem
    save_pgm(out / f"{stem}_importance.pgm", imap.to_pgm_array())
    rows = [(i, j, f"{v:.12g}", n) for (i, j), v, n in
            zip(grid.corners(), grid.values.ravel(), grid.n_pixels.ravel())]
    _write_rows(out / f"{stem}_blocks.csv", ["i", "j", "importance", "n_pixels"], rows)
    print(f"layer {settings.layer}: map {imap.width}x{imap.height}, {grid.count} blocks -> {out}")
    return 0


def _check_bands(session) -> None:
    p = session.params
    qp_p = session.plan.qp_p.ravel()
    for k, qa in enumerate(session.qp_a.tolist()):
        if qp_p[k] >= session.qp_s + p.shift_trigger:
            lo, hi = session.qp_s + p.shifted_band[0], session.qp_s + p.shifted_band[1]
        else:
            lo, hi = session.qp_s - p.actual_band, session.qp_s + p.actual_band
        lo, hi = max(0, lo), min(51, hi)
        if not lo <= qa <= hi:
            raise InvariantError(f"block {k}: QP_a {qa} outside [{lo}, {hi}]")


def cmd_encode(args, cfg) -> int:
    settings = cfg.settings()
    img = load_image(args.image)
    out = _out_dir(cfg)
    stem = Path(args.image).stem
    h, w = img.shape
    problems = []
    if args.qp is not None:
        result = encode_image(img, qp=args.qp, cu_size=settings.cu_size)
        session = None
        grid = uniform_grid(w, h, settings.cu_size)
    else:
        target = args.target_bits
        if target is None:
            target = encode_image(img, qp=args.target_from_qp, cu_size=settings.cu_size).payload_bits
        if args.uniform:
            grid = uniform_grid(w, h, settings.cu_size)
        else:
            grid, _ = importance_grid(img, settings)
        rc = encode_rc(img, grid, target, settings)
        result, session = rc.encoded, rc.session
        try:
            _check_bands(session)
        except InvariantError as exc:
            problems.append(str(exc))
        miss = abs(result.payload_bits - target) / target
        print(f"target {target} bits, coded {result.payload_bits} bits ({100 * miss:.2f}% off), QP_s {session.qp_s}")
        if miss > cfg.budget_tolerance:
            problems.append(f"budget miss {100 * miss:.2f}% exceeds {100 * cfg.budget_tolerance:.2f}%")

    (out / f"{stem}.impc").write_bytes(result.data)
    save_pgm(out / f"{stem}_recon.pgm", result.recon)
    corners = grid.corners()
    rows = []
    for k, (i, j) in enumerate(corners):
        r, c = divmod(k, grid.shape[1])
        if session is None:
            rows.append((i, j, f"{grid.values[r, c]:.12g}", "", "", int(result.qp_map[r, c]),
                         int(result.block_bits[r, c])))
        else:
            rows.append((i, j, f"{grid.values[r, c]:.12g}", int(session.plan.qp_p[r, c]),
                         f"{session.t_blk[k]:.3f}", int(session.qp_a[k]), int(session.bits_actual[k])))
    _write_rows(out / f"{stem}_blocks.csv", ["i", "j", "I", "QP_p", "T_bits_blk", "QP_a", "bits_actual"], rows)

    if not np.array_equal(decode_image(result.data), result.recon):
        problems.append("decoder reconstruction differs from encoder reconstruction")
    print(f"wrote {stem}.impc ({len(result.data)} bytes, payload {result.payload_bits} bits, "
          f"{result.payload_bits / img.size:.4f} bpp)")
    for msg in problems:
        log.error(msg)
    return EXIT_INVARIANT if problems else 0


def cmd_decode(args, cfg) -> int:
    data = Path(args.stream).read_bytes()
    img = decode_image(data)
    header = parse_header(data)
    output = Path(args.output) if args.output else _out_dir(cfg) / f"{Path(args.stream).stem}_decoded.pgm"
    save_pgm(output, img)
    print(f"{header.width}x{header.height}, {header.payload_bits} payload bits -> {output}")
    return 0


def _write_curve(path: Path, curve: RDCurve) -> None:
    _write_rows(path, ["rate", "quality"], [(f"{r:.8g}", f"{q:.6f}") for r, q in zip(curve.rates, curve.qualities)])


def cmd_sweep(args, cfg) -> int:
    settings = cfg.settings()
    paths = corpus_paths(cfg.corpus) if cfg.corpus else bundled_corpus()
    if not paths:
        raise ConfigError(f"no images in corpus {cfg.corpus}")
    records = sweep(paths, settings, jobs=cfg.jobs)
    out = _out_dir(cfg)
    (out / "sweep.csv").write_text(records_csv(records))
    summary = summary_text(records, cfg.bd_method)
    (out / "summary.txt").write_text(summary)
    for mode in ("anchor", "uniform_rc", "importance_rc"):
        for metric in ("psnr", "wpsnr"):
            try:
                _write_curve(out / f"curve_{mode}_{metric}.csv", curve_for(records, mode, metric))
            except CurveError as exc:
                log.warning("pooled %s %s curve not written: %s", mode, metric, exc)
    print(summary, end="")
    return 0


def read_curve(path) -> RDCurve:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    try:
        return RDCurve.from_points([(float(r[0]), float(r[1])) for r in rows])
    except (IndexError, ValueError) as exc:
        raise CurveError(f"{path}: {exc}") from exc


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def cmd_bdrate(args, cfg) -> int:
    value = bd_rate(read_curve(args.anchor), read_curve(args.test), args.method or cfg.bd_method)
    print(f"BD-rate: {value:+.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impalloc", description="Importance-guided bit allocation, toy intra codec and BD-rate evaluation.")
    parser.add_argument("-c", "--config", help="flat key = value config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--bank", help="filter bank JSON (default: built-in bank)")
    common.add_argument("--layer", type=int, help="feature layer for the importance map")
    common.add_argument("--cu-size", type=int, dest="cu_size", choices=(8, 16))
    common.add_argument("--model", choices=("fit", "fixed"), help="R-lambda model source")
    common.add_argument("--sw", type=int, help="sliding window size in blocks")
    common.add_argument("-o", "--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("importance", parents=[common], help="write the importance map PGM and block CSV")
    p.add_argument("image")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("encode", parents=[common], help="encode at a fixed QP or under rate control")
    p.add_argument("image")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--qp", type=int, help="fixed QP; importance inputs are ignored")
    target.add_argument("--target-bits", type=int, help="rate-control bit budget")
    target.add_argument("--target-from-qp", type=int, help="budget = bits of a fixed-QP encode at this QP")
    p.add_argument("--uniform", action="store_true", help="uniform importance (plain rate control)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="decode a bitstream to PGM")
    p.add_argument("stream")
    p.add_argument("output", nargs="?")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep", parents=[common], help="anchor / uniform-RC / importance-RC corpus sweep")
    p.add_argument("--corpus", help="directory of PGM/PPM/PNG images (default: bundled corpus)")
    p.add_argument("--jobs", type=int, help="parallel per-image workers")
    p.add_argument("--bd-method", dest="bd_method", choices=("cubic", "pchip"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bdrate", help="BD-rate between two rate,quality CSV curves")
    p.add_argument("anchor")
    p.add_argument("test")
    p.add_argument("--method", choices=("cubic", "pchip"))
    p.set_defaults(func=cmd_bdrate)
    return parser


_OVERRIDE_KEYS = ("bank", "layer", "cu_size", "model", "sw", "out", "corpus", "jobs", "bd_method")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config, {k: getattr(args, k, None) for k in _OVERRIDE_KEYS})
        if args.command == "encode":
            for qp in (args.qp, args.target_from_qp):
                if qp is not None and not 0 <= qp <= 51:
                    raise ConfigError(f"QP {qp} outside [0, 51]")
        return args.func(args, cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_USAGE
    except (ImageFormatError, MalformedStreamError, CurveError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
