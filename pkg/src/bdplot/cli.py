"""Command-line interface: ``bdplot <subcommand> [options]``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure. ``BDPLOT_LOG_LEVEL`` sets verbosity, ``BDPLOT_THREADS`` caps
BLAS/OpenMP threads.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .errors import BDError, ConfigError
from .pipeline import STAGES

log = logging.getLogger("bdplot")

# flag -> (config field, type)
_FLAGS = {
    "design": ("design", str),
    "output": ("output", str),
    "seed": ("seed", int),
    "marker": ("marker", str),
    "boundary_penalty": ("boundary_penalty", float),
    "spline_lambda": ("spline_lambda", float),
    "n_perm": ("n_perm", int),
    "level": ("level", float),
    "score_mode": ("score_mode", str),
    "pda_input": ("pda_input", str),
    "lambda_knot": ("lambda_knot", str),
    "reg_tol": ("reg_tol", float),
    "reg_max_iter": ("reg_max_iter", int),
}


def _add_config_flags(p, need_config=True):
    p.add_argument("-c", "--config", required=need_config, help="YAML run configuration")
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("--design", choices=("unpaired", "paired"))
    p.add_argument("--seed", type=int)
    p.add_argument("--marker", help="channel role analysed in the unpaired design")
    p.add_argument("--groups", nargs=2, metavar=("A", "C"), help="group labels (A scores high)")
    p.add_argument("--paired-roles", nargs=2, metavar=("Y", "R"))
    p.add_argument("--boundary-penalty", type=float)
    p.add_argument("--spline-lambda", type=float, help="fixed curve smoothing penalty (default GCV)")
    p.add_argument("--no-registration", action="store_true")
    p.add_argument("--bracket", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--reg-tol", type=float)
    p.add_argument("--reg-max-iter", type=int)
    p.add_argument("--n-perm", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--score-mode", choices=("midpoint", "raw"))
    p.add_argument("--pda-input", choices=("registered", "scaled"))
    p.add_argument("--lambda-knot", help="knot penalty or 'auto'")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set test.n_perm=2000")


def _apply_overrides(doc, args):
    doc = dict(doc or {})
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        val = yaml.safe_load(raw)
        parts = key.split(".")
        if len(parts) == 1:
            doc[parts[0]] = val
        elif len(parts) == 2:
            sec = dict(doc.get(parts[0]) or {})
            sec[parts[1]] = val
            doc[parts[0]] = sec
        else:
            raise ConfigError(f"--set key too deep: {key}")
    return doc


def build_config(args):
    from .pipeline import RunConfig

    base = None
    doc = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"{path}: config file not found")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent
    doc = _apply_overrides(doc, args)
    out_flag = getattr(args, "output", None)
    if out_flag is not None:
        doc.pop("output", None)
    cfg = RunConfig.from_dict(doc, base_dir=base)
    for flag, (name, typ) in _FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, name, typ(val))
    if getattr(args, "groups", None):
        cfg.groups = tuple(args.groups)
    if getattr(args, "paired_roles", None):
        cfg.paired_roles = tuple(args.paired_roles)
    if getattr(args, "bracket", None):
        cfg.bracket = tuple(args.bracket)
    if getattr(args, "no_registration", False):
        cfg.register = False
    if getattr(args, "no_plots", False):
        cfg.plots = False
    return cfg.normalise()


def _report(outcome, out):
    m = outcome.manifest
    if outcome.status == 0:
        print(f"ok: {len(m.get('artifacts', []))} artifact(s) in {out}")
    else:
        err = m["error"]
        print(f"error in stage {m['failed_stage']}: {err['type']}: {err['message']}", file=sys.stderr)
    for w in m["warnings"]:
        log.warning("%s (x%d)", w["message"], w["count"])
    return outcome.status


def cmd_pipeline(args, stages):
    from .pipeline import run_pipeline

    cfg = build_config(args)
    return _report(run_pipeline(cfg, stages), cfg.output)


def cmd_geometry(args):
    from .pipeline import RunState, execute

    cfg = build_config(args)
    state = RunState(config=cfg)
    outcome = execute(state, ("validate", "geometry"))
    if outcome.status == 0:
        out = Path(cfg.output, "bdmaps")
        out.mkdir(parents=True, exist_ok=True)
        for image, (bdmap, _) in state.bdmaps.items():
            bdmap.export(out / Path(image).name.split(".")[0])
    return _report(outcome, cfg.output)


def cmd_curve_stage(args, stages):
    from .pipeline import execute, state_from_curves

    cfg = build_config(args)
    nuclei = args.nuclei or str(Path(args.curves).with_name(
        Path(args.curves).name.replace("curves.csv", "nuclei.csv")))
    state = state_from_curves(cfg, args.curves, nuclei)
    return _report(execute(state, stages), cfg.output)


def cmd_synth(args):
    from .synth import make_experiment

    path = make_experiment(args.output, preset=args.preset, seed=args.seed,
                           images_per_group=args.images, nuclei_per_image=args.nuclei,
                           noise_sigma=args.noise, boundary_jitter=args.jitter, n_perm=args.n_perm)
    print(f"ok: wrote synthetic dataset; run with: bdplot run -c {path}")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="bdplot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"bdplot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline")
    _add_config_flags(p)
    p = sub.add_parser("geometry", help="smooth boundaries and export BD maps")
    _add_config_flags(p)
    p = sub.add_parser("curves", help="estimate expression curves (curves.csv)")
    _add_config_flags(p)
    for name, hlp in (("register", "scale and register curves from a curve table"),
                      ("test", "permutation sup-|T| test on a curve table"),
                      ("discriminate", "penalised discriminant with LOOCV on a curve table"),
                      ("piecewise", "three-piece linear fits and group comparison")):
        p = sub.add_parser(name, help=hlp)
        _add_config_flags(p, need_config=False)
        p.add_argument("--curves", required=True, help="curves CSV (nucleus_id, channel, r, g)")
        p.add_argument("--nuclei", help="per-curve metadata CSV (default: sibling nuclei table)")
    p = sub.add_parser("synth", help="write a synthetic dataset with ground truth")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--preset", default="two-group",
                   choices=("two-group", "null", "paired", "paired-null"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=2, help="images per group")
    p.add_argument("--nuclei", type=int, default=12, help="nuclei per image")
    p.add_argument("--noise", type=float, default=8.0)
    p.add_argument("--jitter", type=float, default=1.0, help="boundary jitter half-width (px)")
    p.add_argument("--n-perm", type=int, default=2000)
    return parser


def main(argv=None):
    level = os.environ.get("BDPLOT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_pipeline(args, STAGES)
        if args.command == "curves":
            return cmd_pipeline(args, ("validate", "geometry", "curves"))
        if args.command == "geometry":
            return cmd_geometry(args)
        if args.command == "register":
            return cmd_curve_stage(args, ("register",))
        if args.command == "test":
            return cmd_curve_stage(args, ("test",))
        if args.command == "discriminate":
            return cmd_curve_stage(args, ("discriminate",))
        if args.command == "piecewise":
            return cmd_curve_stage(args, ("piecewise",))
        return cmd_synth(args)
    except BDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
