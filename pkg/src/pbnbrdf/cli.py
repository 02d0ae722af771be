"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
divergence.  Outputs go to ``--out`` (default ``$PBNBRDF_OUT`` or
``./pbnbrdf_out``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import metrics
from .data import EmptySourceError, MerlFormatError, parse_source, read_merl, write_merl
from .field import ConfigError, FieldModel, load_checkpoint
from .geom import SphericalDir
from .render import Furnace, PointLight, Scene, furnace_excess, render_direct, render_furnace, save_image
from .train import TrainConfig, TrainingDivergence, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
OUT_ENV = "PBNBRDF_OUT"

log = logging.getLogger("pbnbrdf")


class DataError(Exception):
    pass


def load_source(desc):
    """Checkpoint (``*.json``), MERL binary (existing file) or analytic descriptor."""
    if desc.endswith(".json"):
        try:
            return load_checkpoint(desc)
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load checkpoint {desc}: {exc}") from exc
    if os.path.exists(desc):
        try:
            return read_merl(desc)
        except (OSError, MerlFormatError) as exc:
            raise DataError(str(exc)) from exc
    try:
        return parse_source(desc)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad source {desc!r}: {exc}") from exc


def _out_dir(args):
    out = args.out or os.environ.get(OUT_ENV) or "pbnbrdf_out"
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, obj):
    with open(path, "w") as f:
        f.write(json.dumps(obj, indent=1, sort_keys=True))
        f.write("\n")


def build_config(args):
    d = {}
    if args.config:
        try:
            with open(args.config) as f:
                d = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    if args.seed is not None:
        d["seed"] = args.seed
    if args.epochs is not None:
        d["epochs"] = args.epochs
    if args.n_samples is not None:
        d["n_samples"] = args.n_samples
    if args.no_reciprocity:
        d["reciprocity"] = False
    if args.no_epl:
        d["antiderivative"] = False
    if args.no_ce:
        d["ce"] = False
    try:
        return TrainConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_fit(args):
    cfg = build_config(args)
    src = load_source(args.source)
    out = _out_dir(args)
    _write_json(os.path.join(out, "config.json"), cfg.to_dict())
    try:
        model, report = train(src, cfg, checkpoint_dir=out)
    except EmptySourceError as exc:
        raise DataError(str(exc)) from exc
    except TrainingDivergence as exc:
        _write_json(os.path.join(out, "report.json"), exc.report.to_dict())
        log.error("%s", exc)
        return EXIT_DIVERGED
    report.checkpoint_path = "model.json"
    _write_json(os.path.join(out, "report.json"), report.to_dict())
    _write_json(os.path.join(out, "timing.json"), {"wall_clock_seconds": report.wall_clock})
    with open(os.path.join(out, "loss_curve.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "total", "nbrdf", "epl", "ce"])
        for i, row in enumerate(zip(report.loss_total, report.loss_nbrdf, report.loss_epl, report.loss_ce)):
            w.writerow([i, *(repr(v) for v in row)])
    print(json.dumps({"checkpoint": os.path.join(out, "model.json"),
                      "final_loss_nbrdf": report.final["loss_nbrdf"]}))
    return EXIT_OK


def cmd_eval(args):
    src = load_source(args.source)
    wi = SphericalDir(np.array([args.wi[0]]), np.array([args.wi[1]]))
    wo = SphericalDir(np.array([args.wo[0]]), np.array([args.wo[1]]))
    print(json.dumps({"rgb": [float(v) for v in np.asarray(src.eval(wi, wo))[0]]}))
    return EXIT_OK


def _light(args):
    return PointLight(SphericalDir(args.light_theta, args.light_phi), tuple(args.radiance))


def cmd_render(args):
    src = load_source(args.source)
    out = _out_dir(args)
    img = render_direct(src, Scene(args.resolution, _light(args)))
    save_image(img, os.path.join(out, "render.pfm"))
    save_image(img, os.path.join(out, "render.ppm"))
    return EXIT_OK


def cmd_furnace(args):
    src = load_source(args.source)
    out = _out_dir(args)
    img = render_furnace(src, Scene(args.resolution, Furnace()), args.quad_order)
    save_image(img, os.path.join(out, "furnace.pfm"))
    save_image(furnace_excess(img), os.path.join(out, "furnace_excess.pfm"))
    _write_json(os.path.join(out, "furnace.json"), {"eci": metrics.eci(img)})
    return EXIT_OK


def source_metrics(src, args, resolution=None):
    n, seed = args.n, args.seed if args.seed is not None else 0
    furnace = render_furnace(src, Scene(resolution or args.resolution, Furnace()), args.quad_order)
    rep = metrics.MetricReport(
        hri=metrics.hri(src, n, seed), hci=metrics.hci(src, n, seed),
        epi=metrics.epi(src, args.wi_count, args.quad_order, seed), eci=metrics.eci(furnace),
        samples={"n": n, "wi_count": args.wi_count, "quad_order": args.quad_order, "seed": seed},
    )
    return rep, furnace


def cmd_metrics(args):
    src = load_source(args.source)
    out = _out_dir(args)
    rep, _ = source_metrics(src, args)
    _write_json(os.path.join(out, "metrics.json"), json.loads(rep.to_json()))
    print(rep.format_table())
    return EXIT_OK


def cmd_gen_fixture(args):
    try:
        src = parse_source(args.kind)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"invalid fixture parameters {args.kind!r}: {exc}") from exc
    out = _out_dir(args)
    name = args.name or args.kind.replace(":", "_").replace(",", "_").replace("/", "_")
    with open(os.path.join(out, name + ".binary"), "wb") as f:
        f.write(write_merl(src))
    img = render_furnace(src, Scene(args.resolution, Furnace()), args.quad_order)
    save_image(img, os.path.join(out, name + "_furnace.pfm"))
    return EXIT_OK


def cmd_compare(args):
    res_b = args.resolution_b or args.resolution
    if res_b != args.resolution:
        raise ConfigError(f"resolution mismatch: {args.resolution} vs {res_b}")
    a, b = load_source(args.a), load_source(args.b)
    out = _out_dir(args)
    ma, fa = source_metrics(a, args)
    mb, fb = source_metrics(b, args, res_b)
    ra = render_direct(a, Scene(args.resolution, _light(args)))
    rb = render_direct(b, Scene(res_b, _light(args)))
    doc = {
        "a": json.loads(ma.to_json()), "b": json.loads(mb.to_json()),
        "render": metrics.image_metrics(ra, rb),
        "furnace": metrics.image_metrics(fa, fb),
    }
    _write_json(os.path.join(out, "compare.json"), doc)
    diff = type(ra)(np.abs(ra.pixels - rb.pixels), ra.mask | rb.mask)
    save_image(diff, os.path.join(out, "render_diff.pfm"))
    fdiff = type(fa)(np.abs(fa.pixels - fb.pixels), fa.mask | fb.mask)
    save_image(fdiff, os.path.join(out, "furnace_diff.pfm"))
    print(json.dumps(doc["render"]))
    return EXIT_OK


def _add_common(p, seed=True):
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./pbnbrdf_out)")
    if seed:
        p.add_argument("--seed", type=int)


def _add_render_opts(p):
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--quad-order", type=int, default=64)


def _add_light(p):
    p.add_argument("--light-theta", type=float, default=0.6)
    p.add_argument("--light-phi", type=float, default=0.8)
    p.add_argument("--radiance", type=float, nargs=3, default=(3.0, 3.0, 3.0))


def _add_metric_opts(p):
    p.add_argument("--n", type=int, default=10_000, help="Monte Carlo samples for HRI/HCI")
    p.add_argument("--wi-count", type=int, default=64)


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors; argparse would exit with 2,
    # which is reserved for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="pbnbrdf", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a neural BRDF to a source")
    p.add_argument("source")
    p.add_argument("--config", help="JSON document with TrainConfig fields")
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--no-reciprocity", action="store_true", help="undoubled phi_d embedding")
    p.add_argument("--no-epl", action="store_true", help="direct model, no antiderivative/EPL")
    p.add_argument("--no-ce", action="store_true", help="drop chromaticity enforcement")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a source at one direction pair")
    p.add_argument("source")
    p.add_argument("--wi", type=float, nargs=2, required=True, metavar=("THETA", "PHI"))
    p.add_argument("--wo", type=float, nargs=2, required=True, metavar=("THETA", "PHI"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="point-light sphere render")
    p.add_argument("source")
    _add_common(p, seed=False)
    _add_render_opts(p)
    _add_light(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("furnace", help="white furnace render")
    p.add_argument("source")
    _add_common(p, seed=False)
    _add_render_opts(p)
    p.set_defaults(func=cmd_furnace)

    p = sub.add_parser("metrics", help="HRI/HCI/EPI/ECI for a source")
    p.add_argument("source")
    _add_common(p)
    _add_render_opts(p)
    _add_metric_opts(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gen-fixture", help="rasterize an analytic BRDF to a MERL file")
    p.add_argument("kind", help="analytic descriptor, e.g. lambertian:0.5")
    p.add_argument("--name")
    _add_common(p, seed=False)
    _add_render_opts(p)
    p.set_defaults(func=cmd_gen_fixture)

    p = sub.add_parser("compare", help="metrics and paired renders for two sources")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--resolution-b", type=int)
    _add_common(p)
    _add_render_opts(p)
    _add_light(p)
    _add_metric_opts(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MerlFormatError, EmptySourceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
