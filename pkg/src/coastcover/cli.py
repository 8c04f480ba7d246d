"""Command-line pipeline: one subcommand per processing step, one artifact per step.

Every subcommand reads and writes plain files (PNG/PPM rasters with world-file
sidecars, scheme/model text files, CSV/JSON reports), so steps can be chained
or re-run independently.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assessment import assess
from .change_analysis import (change_mask_image, change_table, class_areas,
                              read_area_table, triptych, with_groups, write_report)
from .classification import (BaselineModel, classify_raster, import_external_labels,
                             majority_filter, train_baseline)
from .preprocess import build_mask, match_color_levels, resample
from .raster_model import (ClassScheme, LabelRaster, RasterError, check_same_grid,
                           default_scheme, encode_labels, parse_rgb, read_image,
                           read_labels, read_mask, read_scheme, write_image,
                           write_labels, write_mask)
from .tiling import pair_tiles, save_tiles, tile_raster

SCHEME_ENV = "COASTCOVER_SCHEME"
PROG = "coastcover"


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1), got {value}")
    return value


def rgb_arg(text: str):
    try:
        return parse_rgb(text)
    except RasterError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def seed_arg(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def load_scheme(path: str | None) -> ClassScheme:
    path = path or os.environ.get(SCHEME_ENV)
    return read_scheme(path) if path else default_scheme()


def _load_mask(path: str | None, like):
    if not path:
        return None
    mask = read_mask(path)
    check_same_grid(like, mask)
    return mask


# --- subcommands -------------------------------------------------------------

def cmd_prep(args) -> None:
    image = read_image(args.input)
    if args.resolution:
        image = resample(image, args.resolution)
    mask = build_mask(image, args.nodata)
    if args.reference:
        ref = read_image(args.reference)
        if args.resolution:
            ref = resample(ref, args.resolution)
        image = match_color_levels(image, ref, mask, build_mask(ref, args.nodata))
    write_image(args.out, image)
    if args.mask_out:
        write_mask(args.mask_out, mask)


def cmd_tile(args) -> None:
    if args.labels:
        raster = read_labels(args.input, load_scheme(args.scheme))
    else:
        raster = read_image(args.input)
    save_tiles(args.out, tile_raster(raster, args.size), raster.width, raster.height)


def cmd_train(args) -> None:
    scheme = load_scheme(args.scheme)
    image = read_image(args.image)
    labels = read_labels(args.labels, scheme, image.geo)
    check_same_grid(image, labels)
    mask = _load_mask(args.mask, image)
    if mask is not None:
        arr = np.array(labels.labels)
        arr[~mask.valid] = scheme.masked_id
        labels = LabelRaster(arr, scheme, labels.geo)
    pairs = pair_tiles(tile_raster(image, args.tile_size), tile_raster(labels, args.tile_size))
    train_baseline(pairs, args.window).save(args.out)


def cmd_classify(args) -> None:
    scheme = load_scheme(args.scheme)
    model = BaselineModel.load(args.model)
    image = read_image(args.input)
    mask = _load_mask(args.mask, image)
    result = classify_raster(model, image, scheme, mask, args.tile_size, args.floor, args.threads)
    write_labels(args.out, result, raw=args.raw)


def cmd_import(args) -> None:
    scheme = load_scheme(args.scheme)
    dims = None
    if args.width or args.height:
        if not (args.width and args.height):
            raise RasterError("--width and --height must be given together")
        dims = (args.width, args.height)
    mask = read_mask(args.mask) if args.mask else None
    labels = import_external_labels(args.input, scheme, dims, mask)
    write_labels(args.out, labels, raw=args.raw)


def cmd_filter(args) -> None:
    labels = read_labels(args.input, load_scheme(args.scheme))
    write_labels(args.out, majority_filter(labels, args.radius, args.iterations), raw=args.raw)


def cmd_assess(args) -> None:
    scheme = load_scheme(args.scheme)
    ref = read_labels(args.ref, scheme)
    pred = read_labels(args.pred, scheme, ref.geo)
    check_same_grid(ref, pred)
    mask = _load_mask(args.mask, ref)
    result = assess(ref, pred, mask, args.n, args.seed, scheme)
    write_report(args.out, result, args.format)


def cmd_area(args) -> None:
    labels = read_labels(args.input, load_scheme(args.scheme))
    table = class_areas(labels, {} if args.no_merge else None,
                        epoch=args.epoch if args.epoch is not None else Path(args.input).stem)
    write_report(args.out, table, args.format)


def cmd_change(args) -> None:
    scheme = load_scheme(args.scheme)
    t0 = with_groups(read_area_table(args.t0), scheme)
    t1 = with_groups(read_area_table(args.t1), scheme)
    report = change_table(t0, t1, args.method)
    write_report(args.out, report, args.format)


def cmd_render(args) -> None:
    scheme = load_scheme(args.scheme)
    t0 = read_labels(args.input, scheme)
    if args.t1 is None:
        if args.change_out:
            raise RasterError("--change-out needs --t1")
        write_image(args.out, encode_labels(t0))
        return
    t1 = read_labels(args.t1, scheme, t0.geo)
    check_same_grid(t0, t1)
    write_image(args.out, triptych(t0, t1))
    if args.change_out:
        write_image(args.change_out, change_mask_image(t0, t1))


def cmd_synth(args) -> None:
    from .synthetic import make_epoch_pair

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    e0, e1 = make_epoch_pair(args.size, args.seed, args.resolution, load_scheme(args.scheme))
    for name, e in (("t0", e0), ("t1", e1)):
        write_image(out / f"{name}_image.png", e.image)
        write_labels(out / f"{name}_truth.png", e.truth)
        write_mask(out / f"{name}_mask.png", build_mask(e.image))


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scheme", help=f"class scheme file (default: ${SCHEME_ENV} or built-in)")
    common.add_argument("--threads", type=positive_int, default=1,
                        help="worker threads for per-tile work; results do not depend on it")
    common.add_argument("--config", help="run-config file of 'flag = value' lines")

    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    fmt = dict(choices=("csv", "json"), default=None,
               help="report format (default: from --out extension)")

    p = add("prep", cmd_prep, "resample, color-match and mask one epoch")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--reference", help="image whose color levels are matched")
    p.add_argument("--resolution", type=positive_float, help="target m/pixel")
    p.add_argument("--nodata", type=rgb_arg, help="R,G,B color treated as no data")
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out", help="write the validity mask here")

    p = add("tile", cmd_tile, "slice a raster into a tile directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--size", type=positive_int, default=256)
    p.add_argument("--labels", action="store_true", help="input is a label map")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", cmd_train, "train the baseline classifier")
    p.add_argument("--image", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mask")
    p.add_argument("--window", type=positive_int, default=9)
    p.add_argument("--tile-size", type=positive_int, default=256)
    p.add_argument("--out", required=True, help="model file")

    p = add("classify", cmd_classify, "classify an image with a baseline model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mask")
    p.add_argument("--tile-size", type=positive_int, default=256)
    p.add_argument("--floor", type=fraction, default=0.0,
                   help="scores below this become not-classified")
    p.add_argument("--raw", action="store_true", help="write raw class ids")
    p.add_argument("--out", required=True)

    p = add("import", cmd_import, "import a label map produced by an external model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--width", type=positive_int)
    p.add_argument("--height", type=positive_int)
    p.add_argument("--mask")
    p.add_argument("--raw", action="store_true")
    p.add_argument("--out", required=True)

    p = add("filter", cmd_filter, "majority-filter a label map")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--radius", type=positive_int, default=1)
    p.add_argument("--iterations", type=positive_int, default=1)
    p.add_argument("--raw", action="store_true")
    p.add_argument("--out", required=True)

    p = add("assess", cmd_assess, "random-point accuracy assessment")
    p.add_argument("--ref", required=True, help="reference label map")
    p.add_argument("--pred", required=True, help="predicted label map")
    p.add_argument("--mask")
    p.add_argument("--n", type=positive_int, default=100_000)
    p.add_argument("--seed", type=seed_arg, required=True)
    p.add_argument("--format", **fmt)
    p.add_argument("--out", required=True)

    p = add("area", cmd_area, "per-class area table in hectares")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--epoch")
    p.add_argument("--no-merge", action="store_true", help="omit merge-group rows")
    p.add_argument("--format", **fmt)
    p.add_argument("--out", required=True)

    p = add("change", cmd_change, "area change between two area tables")
    p.add_argument("--t0", required=True)
    p.add_argument("--t1", required=True)
    p.add_argument("--method", default="")
    p.add_argument("--format", **fmt)
    p.add_argument("--out", required=True)

    p = add("render", cmd_render, "paint a label map, or a t0/t1/change triptych")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--t1")
    p.add_argument("--change-out")
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "write a synthetic two-epoch scene with ground truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=positive_int, default=2048)
    p.add_argument("--seed", type=seed_arg, required=True)
    p.add_argument("--resolution", type=positive_float, default=0.4)
    return parser


def read_config(path: str) -> list[str]:
    """Turn ``flag = value`` lines into argv tokens; ``flag = true`` sets a switch."""
    tokens = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise RasterError(f"{path}: cannot read config ({exc.strerror})") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise RasterError(f"{path}:{lineno}: expected 'flag = value'")
        flag = "--" + key.strip().lstrip("-").replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens += [flag, value]
    return tokens


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        cfg = _config_path(argv)
        if cfg and argv and not argv[0].startswith("-"):
            # file values go first so explicit flags override them
            argv = argv[:1] + read_config(cfg) + argv[1:]
    except RasterError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (RasterError, ValueError, OSError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
