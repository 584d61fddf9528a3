"""Command-line entry point.

Every subcommand reads an optional key-value config file, applies
``--set key=value`` overrides, runs, prints a short summary and, with
``--out``, writes a CSV plus JSON sidecar.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 data error.
"""
from __future__ import annotations

import argparse
import math
import sys

from . import background as bg
from . import pipeline as pl
from .atmosphere import TableError
from .config import ConfigError, ScenarioConfig, load_config, parse_overrides, set_path
from .linkbudget import ANALYZER_LOSS_DB
from .orbit import EARTH_RADIUS, classify_passes, import_ephemeris, write_passes_csv

EXIT_OK, EXIT_INVALID, EXIT_DATA = 0, 2, 3


def slant_range(altitude: float, elevation: float) -> float:
    """Distance (m) to a satellite at ``altitude`` seen at ``elevation`` (rad)."""
    r, s = EARTH_RADIUS, math.sin(elevation)
    return math.sqrt((r + altitude) ** 2 - (r * math.cos(elevation)) ** 2) - r * s


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def build_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    cfg = parse_overrides(args.set or [], cfg)
    if args.data_dir:
        cfg = set_path(cfg, "data_dir", args.data_dir)
    if getattr(args, "oracle_spotcheck", False):
        cfg = set_path(cfg, "grid.spotcheck", True)
    return cfg


def _passes(cfg, args):
    if getattr(args, "ephemeris", None):
        return import_ephemeris(args.ephemeris, site=cfg.site)
    return pl.passes_for(cfg)


def _emit(args, header, rows, cfg, meta=None):
    if args.out:
        pl.write_csv(args.out, header, rows, cfg, meta)
        print(f"wrote {args.out}")


# ---------------------------------------------------------------- subcommands

def cmd_link_loss(cfg, args):
    model = pl.LinkModel(cfg)
    header = ["elevation_deg", "distance_km", "geometric_db", "atmosphere_db",
              "detector_db", "analyzer_db", "total_db"]
    rows = []
    for e in _floats(args.elevations):
        el = math.radians(e)
        d = slant_range(cfg.altitude, el)
        geo = float(model.far.geometric_db(d, el, cfg.pointing_sigma))
        atm = float(model.atmosphere_db(el)[0])
        total = geo + atm + model.det_db + ANALYZER_LOSS_DB
        rows.append([e, d / 1e3, geo, atm, model.det_db, ANALYZER_LOSS_DB, total])
        print(f"{e:5.1f} deg  {d / 1e3:7.1f} km  {total:6.2f} dB")
    _emit(args, header, rows, cfg)


def cmd_background(cfg, args):
    model = pl.LinkModel(cfg)
    rows = []
    for e in _floats(args.elevations):
        el = math.radians(e)
        d = slant_range(cfg.altitude, el)
        cps = float(model.background_cps(d, el)[0])
        rows.append([e, d / 1e3, cps])
        print(f"{e:5.1f} deg  {d / 1e3:7.1f} km  {cps:9.2f} cps/detector")
    _emit(args, ["elevation_deg", "distance_km", "background_cps"], rows, cfg)


def cmd_passes(cfg, args):
    passes = _passes(cfg, args)
    ranks = classify_passes(passes) if passes else {}
    print(f"{len(passes)} passes")
    for name, p in ranks.items():
        print(f"{name:15s} {p.start.isoformat()}  usable {p.duration_usable:.0f} s  "
              f"max elevation {math.degrees(p.max_elevation):.1f} deg")
    if args.out:
        write_passes_csv(passes, args.out)
        print(f"wrote {args.out}")


def _select(passes, which):
    if which == "all":
        return passes
    return [classify_passes(passes)[which]]


def _run_experiment(cfg, args, experiment):
    cfg = set_path(cfg, "experiment", experiment)
    passes = _select(_passes(cfg, args), args.pass_rank)
    sim = pl.Simulation(cfg)
    results = sim.evaluate_passes(passes)
    for r in results[:20]:
        res = r.result
        if experiment == "qkd":
            detail = f"{r.secure_bits} bits, QBER {res.mean_qber:.4f}, {res.verdict}"
        elif experiment == "bell":
            detail = f"S = {res.S:.4f} +/- {res.sigma:.4f}"
        else:
            detail = f"V = {res.visibility:.4f} +/- {res.sigma:.4f}"
        print(f"{r.start}  {'PASS' if r.passed else 'FAIL'}  {detail}")
    if len(results) > 20:
        print(f"... {len(results) - 20} more")
    ok = sum(r.passed for r in results)
    print(f"{ok}/{len(results)} passes succeed; max distance {pl.max_distance(results):.0f} km")
    header, rows = pl.pass_rows(results)
    _emit(args, header, rows, cfg, {"spot_deviation": sim.spot_deviation})


def cmd_sweep(cfg, args):
    values = tuple(_floats(args.values)) if args.numeric else tuple(args.values.split(","))
    spec = pl.SweepSpec(args.axis, values, args.metric, args.pass_rank)
    rows = pl.sweep(cfg, spec)
    for v, m in rows:
        print(f"{args.axis} = {v}: {args.metric} = {m:.6g}")
    _emit(args, [args.axis, args.metric], [list(r) for r in rows], cfg,
          {"sweep": {"axis": args.axis, "metric": args.metric}})


def cmd_monthly(cfg, args):
    cfg = set_path(cfg, "experiment", "qkd")
    res = pl.monthly_key(cfg, _passes(cfg, args))
    for m, bits in res.months:
        print(f"{m}  {bits / 1e6:10.3f} Mbit")
    print(f"annual mean {res.annual_mean / 1e6:.3f} Mbit/month")
    _emit(args, ["month", "secure_bits"], [[m, float(b)] for m, b in res.months], cfg,
          {"annual_mean": res.annual_mean})


def cmd_convert_raster(cfg, args):
    grid = bg.convert_esri_ascii(args.src, args.dst, scale=args.scale, provenance=args.provenance)
    print(f"wrote {args.dst}: {grid.radiance.shape[0]} x {grid.radiance.shape[1]} cells")


# ---------------------------------------------------------------- parser

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--data-dir", help="directory with atmosphere/detector/pollution tables")
    common.add_argument("--out", help="CSV output path (a .json sidecar is written next to it)")
    common.add_argument("--oracle-spotcheck", action="store_true",
                        help="compare 1%% of interpolated samples against the exact model")

    p = argparse.ArgumentParser(prog="qsatlink", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    elev = "10,20,30,40,50,60,70,80,90"

    s = sub.add_parser("link-loss", parents=[common], help="loss breakdown vs elevation")
    s.add_argument("--elevations", default=elev, help="degrees, comma separated")
    s.set_defaults(func=cmd_link_loss)

    s = sub.add_parser("background", parents=[common], help="background counts vs elevation")
    s.add_argument("--elevations", default=elev, help="degrees, comma separated")
    s.set_defaults(func=cmd_background)

    s = sub.add_parser("passes", parents=[common], help="propagate the orbit and list passes")
    s.add_argument("--ephemeris", help="read passes from an ephemeris CSV instead")
    s.set_defaults(func=cmd_passes)

    for name, fn in (("qkd", "qkd"), ("bell", "bell"), ("teleport", "teleport")):
        s = sub.add_parser(name, parents=[common], help=f"{name} feasibility per pass")
        s.add_argument("--pass", dest="pass_rank", default="all",
                       choices=["all", "best", "upper_quartile", "median"])
        s.add_argument("--ephemeris", help="read passes from an ephemeris CSV")
        s.set_defaults(func=lambda cfg, args, _e=fn: _run_experiment(cfg, args, _e))

    s = sub.add_parser("sweep", parents=[common], help="one-axis parameter sweep")
    s.add_argument("--axis", required=True, help="dotted config key")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--metric", default="monthly_key", choices=pl.METRICS)
    s.add_argument("--pass", dest="pass_rank", default="upper_quartile",
                   choices=["best", "upper_quartile", "median"])
    s.add_argument("--text", dest="numeric", action="store_false",
                   help="treat values as strings")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("monthly", parents=[common], help="secure key per calendar month")
    s.add_argument("--ephemeris", help="read passes from an ephemeris CSV")
    s.set_defaults(func=cmd_monthly)

    s = sub.add_parser("convert-raster", parents=[common],
                       help="convert an ESRI ASCII raster to the pollution grid CSV")
    s.add_argument("src")
    s.add_argument("dst")
    s.add_argument("--scale", type=float, default=1.0, help="multiplier to W m^-2 sr^-1 nm^-1")
    s.add_argument("--provenance", default="")
    s.set_defaults(func=cmd_convert_raster)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = build_config(args)
        args.func(cfg, args)
    except (TableError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except pl.SpotCheckError as exc:
        print(f"spot-check failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
