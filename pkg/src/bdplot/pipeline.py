"""Batch driver: images + boundary files -> curves -> registration -> inference.

All artifacts are held in memory and written when the run succeeds; a failed
run writes only ``manifest.json``, naming the failing stage.
"""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__, plots
from .alignment import (DELTA_BRACKET, bregsse, dilate_curve, mean_curve, register_between,
                        register_paired, register_within, scale_correlation, scale_curve)
from .errors import BDError, BDWarning, ConfigError, DataError, NumericalError
from .fda import two_sample_test, paired_tcurve_and_band
from .geometry import build_bd_map, exclude_border_nuclei, smooth_boundary
from .io import curves_csv, nuclei_csv, read_boundaries, read_curves, read_image
from .pda import LAMBDA_GRID, SCORE_MODES, TAU_GRID, loocv_select
from .plm import compare_groups, fit_piecewise, fits_csv
from .profiles import WEIGHT_INTERPRETATION, extract_profile, fit_expression_curve

log = logging.getLogger("bdplot")

STAGES = ("validate", "geometry", "curves", "register", "test", "discriminate", "piecewise", "plots")

INTERPRETATION_NOTES = (
    WEIGHT_INTERPRETATION,
    "BD convention: the discrete boundary lies half a pixel beyond the outermost "
    "interior pixel centres; d_max = max interior EDT - 0.5",
    "registration: each curve is evaluated at r * delta; dilations are normalised "
    "to geometric mean 1 within each registration unit",
    "between-group dilation delta_A minimises int (mu_A(r delta_A) - mu_C(r))^2 dr",
    "registration is applied once before testing; permutations reuse registered curves",
    "discriminant scores are standardised so mu_C -> 0, mu_A -> 2 (score_mode=midpoint)",
    "knot search: kappa2 < 1 < kappa3 strictly, kappa3 searched on (1, 2)",
)


@dataclass
class InputSpec:
    image: str
    boundaries: str
    group: str | None = None
    nucleus_groups: dict | None = None


# config section -> {yaml key: field name}
_SECTIONS = {
    "boundary": {"penalty": "boundary_penalty", "samples": "boundary_samples",
                 "border_margin": "border_margin"},
    "spline": {"lambda": "spline_lambda"},
    "registration": {"enabled": "register", "bracket": "bracket", "tol": "reg_tol",
                     "max_iter": "reg_max_iter"},
    "test": {"n_perm": "n_perm", "level": "level"},
    "discriminant": {"lambda_grid": "lambda_grid", "tau_grid": "tau_grid",
                     "score_mode": "score_mode", "input": "pda_input", "penalty": "pda_penalty"},
    "piecewise": {"lambda_knot": "lambda_knot"},
}


@dataclass
class RunConfig:
    design: str = "unpaired"
    inputs: list = field(default_factory=list)
    channels: dict | None = None
    marker: str = "marker"
    paired_roles: tuple = ("marker", "reference")
    groups: tuple | None = None
    output: str = "bdplot-out"
    seed: int = 0
    boundary_penalty: float | None = None
    boundary_samples: int = 1000
    border_margin: float = 1.0
    spline_lambda: float | None = None
    register: bool = True
    bracket: tuple = DELTA_BRACKET
    reg_tol: float = 1e-3
    reg_max_iter: int = 20
    n_perm: int = 5000
    level: float = 0.95
    lambda_grid: tuple = tuple(float(v) for v in LAMBDA_GRID)
    tau_grid: tuple = tuple(float(v) for v in TAU_GRID)
    score_mode: str = "midpoint"
    pda_input: str = "registered"
    pda_penalty: str = "ridge"
    lambda_knot: object = "auto"
    plots: bool = True

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        doc = dict(doc or {})
        flat = {}
        names = {f.name for f in fields(cls)}
        for key, val in doc.items():
            if key in _SECTIONS:
                if not isinstance(val, dict):
                    raise ConfigError(f"config section {key!r} must be a mapping")
                for sub, v in val.items():
                    if sub not in _SECTIONS[key]:
                        raise ConfigError(f"unknown config key {key}.{sub}")
                    flat[_SECTIONS[key][sub]] = v
            elif key in names:
                flat[key] = val
            else:
                raise ConfigError(f"unknown config key {key!r}")
        inputs = []
        for i, item in enumerate(flat.pop("inputs", []) or []):
            if not isinstance(item, dict) or "image" not in item or "boundaries" not in item:
                raise ConfigError(f"inputs[{i}] needs 'image' and 'boundaries'")
            extra = set(item) - {"image", "boundaries", "group", "nucleus_groups"}
            if extra:
                raise ConfigError(f"inputs[{i}]: unknown keys {sorted(extra)}")
            spec = InputSpec(**item)
            if base_dir is not None:
                spec.image = str(Path(base_dir, spec.image))
                spec.boundaries = str(Path(base_dir, spec.boundaries))
            inputs.append(spec)
        if base_dir is not None and "output" in flat and not Path(flat["output"]).is_absolute():
            flat["output"] = str(Path(base_dir, flat["output"]))
        cfg = cls(inputs=inputs, **flat)
        cfg.normalise()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(doc, base_dir=path.parent)

    def normalise(self):
        """Coerce types and check values; raises :class:`ConfigError`."""
        if self.design not in ("unpaired", "paired"):
            raise ConfigError(f"design must be 'unpaired' or 'paired', got {self.design!r}")
        try:
            self.seed = int(self.seed)
            self.n_perm = int(self.n_perm)
            self.level = float(self.level)
            self.boundary_samples = int(self.boundary_samples)
            self.border_margin = float(self.border_margin)
            self.reg_tol = float(self.reg_tol)
            self.reg_max_iter = int(self.reg_max_iter)
            self.bracket = tuple(float(b) for b in self.bracket)
            self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
            self.tau_grid = tuple(float(v) for v in self.tau_grid)
            if self.boundary_penalty is not None:
                self.boundary_penalty = float(self.boundary_penalty)
            if self.spline_lambda is not None:
                self.spline_lambda = float(self.spline_lambda)
            if self.lambda_knot != "auto":
                self.lambda_knot = float(self.lambda_knot)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from None
        self.paired_roles = tuple(self.paired_roles)
        if self.groups is not None:
            self.groups = tuple(str(g) for g in self.groups)
            if len(self.groups) != 2 or self.groups[0] == self.groups[1]:
                raise ConfigError("groups must name exactly two distinct labels")
        if len(self.paired_roles) != 2 or self.paired_roles[0] == self.paired_roles[1]:
            raise ConfigError("paired_roles must name two distinct channel roles")
        if self.n_perm < 1000:
            raise ConfigError("test.n_perm must be at least 1000")
        if not 0.5 < self.level < 1:
            raise ConfigError("test.level must lie in (0.5, 1)")
        if len(self.bracket) != 2 or not 0.5 <= self.bracket[0] < 1 < self.bracket[1] <= 2:
            raise ConfigError("registration.bracket must satisfy 0.5 <= lo < 1 < hi <= 2")
        if not self.lambda_grid or not self.tau_grid:
            raise ConfigError("discriminant grids must be non-empty")
        if min(self.lambda_grid) <= 0:
            raise ConfigError("discriminant.lambda_grid values must be positive")
        if self.score_mode not in SCORE_MODES:
            raise ConfigError(f"discriminant.score_mode must be one of {SCORE_MODES}")
        if self.pda_input not in ("registered", "scaled"):
            raise ConfigError("discriminant.input must be 'registered' or 'scaled'")
        if self.pda_penalty != "ridge":
            raise ConfigError("only the ridge discriminant penalty is implemented; the "
                              "Laplacian variant is omitted because it is ill-conditioned")
        if self.lambda_knot != "auto" and self.lambda_knot < 0:
            raise ConfigError("piecewise.lambda_knot must be nonnegative or 'auto'")
        if self.boundary_penalty is not None and self.boundary_penalty < 0:
            raise ConfigError("boundary.penalty must be nonnegative")
        if self.spline_lambda is not None and self.spline_lambda <= 0:
            raise ConfigError("spline.lambda must be positive")
        return self

    def roles(self):
        return [self.marker] if self.design == "unpaired" else list(self.paired_roles)

    def echo(self):
        d = asdict(self)
        d["inputs"] = [asdict(i) for i in self.inputs]
        return d


# ---------------------------------------------------------------------------
# run state and manifest
# ---------------------------------------------------------------------------

@dataclass
class Record:
    nucleus_id: str
    image: str
    group: str


@dataclass
class RunState:
    config: RunConfig
    records: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)  # role -> list aligned with records
    registered: dict = field(default_factory=dict)
    scaled: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict)
    boundaries: dict = field(default_factory=dict)
    bdmaps: dict = field(default_factory=dict)
    artifacts: "OrderedDict[str, str | bytes]" = field(default_factory=OrderedDict)
    results: dict = field(default_factory=dict)


@dataclass
class RunOutcome:
    status: int
    manifest: dict
    state: RunState | None = None


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2) + "\n"


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _stem(path):
    return Path(path).name.split(".")[0]


def stage_validate(state):
    cfg = state.config
    if not cfg.inputs:
        raise ConfigError("no inputs configured")
    stems = [_stem(i.image) for i in cfg.inputs]
    if len(set(stems)) != len(stems):
        raise ConfigError("input image names must be unique (they prefix nucleus ids)")
    labels = set()
    for spec in cfg.inputs:
        for p in (spec.image, spec.boundaries):
            if not Path(p).exists():
                raise ConfigError(f"input file not found: {p}")
        if cfg.design == "unpaired":
            if spec.group is None and not spec.nucleus_groups:
                raise ConfigError(f"{spec.image}: unpaired design needs a group label")
            if spec.group is not None:
                labels.add(str(spec.group))
            labels.update(str(g) for g in (spec.nucleus_groups or {}).values())
    if cfg.design == "unpaired":
        if cfg.groups is None:
            if len(labels) != 2:
                raise ConfigError(f"unpaired design needs exactly 2 group labels, found {sorted(labels)}")
            cfg.groups = tuple(sorted(labels))
        elif not labels <= set(cfg.groups) or len(labels) != 2:
            raise ConfigError(f"group labels {sorted(labels)} do not match groups {list(cfg.groups)}")
    for spec in cfg.inputs:
        img = read_image(spec.image, cfg.channels)
        for role in cfg.roles():
            img.channel(role)
        state.images[spec.image] = img
        state.boundaries[spec.image] = read_boundaries(spec.boundaries)


def stage_geometry(state):
    cfg = state.config
    for spec in cfg.inputs:
        img = state.images[spec.image]
        stem = _stem(spec.image)
        curves = []
        for k, (nid, verts) in enumerate(state.boundaries[spec.image]):
            try:
                curves.append(smooth_boundary(verts, penalty=cfg.boundary_penalty,
                                              samples=max(cfg.boundary_samples, len(verts)),
                                              nucleus_id=f"{stem}:{nid}"))
            except DataError as exc:
                raise DataError(f"{spec.boundaries}: nucleus {k}: {exc}") from None
        kept = exclude_border_nuclei(curves, img.shape, cfg.border_margin)
        if len(kept) < len(curves):
            log.info("%s: %d nucleus/nuclei touch the border and were excluded",
                     stem, len(curves) - len(kept))
        if not kept:
            continue
        state.bdmaps[spec.image] = (build_bd_map(kept, img.shape), kept)
    n = sum(len(v[1]) for v in state.bdmaps.values())
    if n == 0:
        raise DataError("no nuclei left after border exclusion")


def _group_of(spec, nid_local):
    if spec.nucleus_groups and str(nid_local) in {str(k) for k in spec.nucleus_groups}:
        return str({str(k): v for k, v in spec.nucleus_groups.items()}[str(nid_local)])
    return str(spec.group) if spec.group is not None else ""


def stage_curves(state):
    cfg = state.config
    roles = cfg.roles()
    state.curves = {role: [] for role in roles}
    for spec in cfg.inputs:
        if spec.image not in state.bdmaps:
            continue
        bdmap, kept = state.bdmaps[spec.image]
        img = state.images[spec.image]
        for k, b in enumerate(kept):
            local = str(b.nucleus_id).split(":", 1)[1]
            got = {}
            for role in roles:
                try:
                    cloud = extract_profile(img, bdmap, k, role)
                except DataError as exc:
                    warnings.warn(f"{b.nucleus_id}: {exc}; nucleus dropped", BDWarning, stacklevel=2)
                    got = None
                    break
                cloud.nucleus_id = b.nucleus_id
                got[role] = fit_expression_curve(cloud, cfg.spline_lambda)
            if got is None:
                continue
            state.records.append(Record(nucleus_id=str(b.nucleus_id), image=_stem(spec.image),
                                        group=_group_of(spec, local)))
            for role in roles:
                state.curves[role].append(got[role])
    if not state.records:
        raise DataError("no expression curves could be estimated")
    all_curves = [c for role in roles for c in state.curves[role]]
    images = [r.image for role in roles for r in state.records]
    groups = [r.group for role in roles for r in state.records]
    state.artifacts["curves.csv"] = curves_csv(all_curves)
    state.artifacts["nuclei.csv"] = nuclei_csv(all_curves, images, groups)


def _split(state, role, source):
    a_lab, c_lab = state.config.groups
    curves = source[role]
    a = [c for c, r in zip(curves, state.records) if r.group == a_lab]
    c = [c for c, r in zip(curves, state.records) if r.group == c_lab]
    return a, c


def _units(state):
    """Registration units: (image, group) cells, in first-seen order."""
    units = OrderedDict()
    for i, r in enumerate(state.records):
        units.setdefault((r.image, r.group), []).append(i)
    return units


def stage_register(state):
    cfg = state.config
    roles = cfg.roles()
    state.scaled = {role: [scale_curve(c) for c in state.curves[role]] for role in roles}
    report = {"design": cfg.design, "enabled": cfg.register, "bracket": list(cfg.bracket),
              "units": [], "curves": []}
    reg = {role: list(state.scaled[role]) for role in roles}
    if cfg.register:
        for (image, group), idx in _units(state).items():
            unit = {"image": image, "group": group, "n": len(idx)}
            if len(idx) < 2:
                warnings.warn(f"{image}/{group}: single nucleus, not registered", BDWarning,
                              stacklevel=2)
                unit.update(dilations=[1.0], sse_trace=[])
            elif cfg.design == "unpaired":
                res = register_within([state.scaled[cfg.marker][i] for i in idx],
                                      max_iter=cfg.reg_max_iter, tol=cfg.reg_tol, bracket=cfg.bracket)
                for j, i in enumerate(idx):
                    reg[cfg.marker][i] = res.curves[j]
                unit.update(res.to_dict())
            else:
                y, r = cfg.paired_roles
                res = register_paired([(state.scaled[y][i], state.scaled[r][i]) for i in idx],
                                      max_iter=cfg.reg_max_iter, tol=cfg.reg_tol, bracket=cfg.bracket)
                for j, i in enumerate(idx):
                    reg[y][i], reg[r][i] = res.curves[j]
                unit.update(res.to_dict())
            report["units"].append(unit)
        if cfg.design == "unpaired":
            a, c = _split(state, cfg.marker, reg)
            if not a or not c:
                raise DataError("both groups need at least one curve")
            mu_a, mu_c = mean_curve(a).values, mean_curve(c).values
            delta_a = register_between(mu_a, mu_c, bracket=cfg.bracket)
            report["group_dilation"] = delta_a
            report["bregsse_before"] = bregsse(mu_a, mu_c, 1.0)
            report["bregsse_after"] = bregsse(mu_a, mu_c, delta_a)
            a_lab = cfg.groups[0]
            for i, rec in enumerate(state.records):
                if rec.group == a_lab:
                    reg[cfg.marker][i] = dilate_curve(reg[cfg.marker][i], delta_a)
    if cfg.design == "paired" and len(state.records) >= 3:
        y, r = cfg.paired_roles
        try:
            report["scale_correlation"] = scale_correlation(
                [c.scale for c in state.scaled[y]], [c.scale for c in state.scaled[r]])
        except DataError as exc:
            warnings.warn(f"scale correlation skipped: {exc}", BDWarning, stacklevel=2)
    for i, rec in enumerate(state.records):
        for role in roles:
            c = reg[role][i]
            report["curves"].append({"nucleus_id": rec.nucleus_id, "channel": role,
                                     "group": rec.group, "scale": c.scale,
                                     "dilation": c.dilation, "flags": list(c.flags)})
    state.registered = reg
    state.results["registration"] = report
    all_reg = [c for role in roles for c in reg[role]]
    images = [r.image for role in roles for r in state.records]
    groups = [r.group for role in roles for r in state.records]
    state.artifacts["registered_curves.csv"] = curves_csv(all_reg)
    state.artifacts["registered_nuclei.csv"] = nuclei_csv(all_reg, images, groups)
    state.artifacts["registration.json"] = dumps(report)


def _pairs(state, source):
    y, r = state.config.paired_roles
    return list(zip(source[y], source[r]))


def stage_test(state):
    cfg = state.config
    src = state.registered
    if cfg.design == "unpaired":
        a, c = _split(state, cfg.marker, src)
        test = two_sample_test(a, c, n_perm=cfg.n_perm, level=cfg.level, seed=cfg.seed)
        labels = list(cfg.groups)
    else:
        test = paired_tcurve_and_band(_pairs(state, src), n_perm=cfg.n_perm, level=cfg.level,
                                      seed=cfg.seed)
        labels = list(cfg.paired_roles)
    state.results["test"] = test
    out = test.to_dict()
    out["groups"] = labels
    out["statistic"] = "(mean of second - mean of first) / se" if cfg.design == "unpaired" \
        else "mean(first - second) / se"
    state.artifacts["test_curve.json"] = dumps(out)


def stage_discriminate(state):
    cfg = state.config
    src = state.registered if cfg.pda_input == "registered" else state.scaled
    if cfg.design == "unpaired":
        a, c = _split(state, cfg.marker, src)
        labels = list(cfg.groups)
    else:
        a, c = list(src[cfg.paired_roles[0]]), list(src[cfg.paired_roles[1]])
        labels = list(cfg.paired_roles)
    ids = [x.nucleus_id for x in a] + [x.nucleus_id for x in c]
    model = loocv_select(a, c, lambda_grid=cfg.lambda_grid, tau_grid=cfg.tau_grid,
                         score_mode=cfg.score_mode, ids=ids)
    state.results["discriminant"] = model
    out = model.to_dict()
    out["groups"] = labels
    out["input"] = cfg.pda_input
    state.artifacts["discriminant.json"] = dumps(out)


def stage_piecewise(state):
    cfg = state.config
    src = state.registered
    roles = cfg.roles()
    fits = {role: [fit_piecewise(c, cfg.lambda_knot) for c in src[role]] for role in roles}
    if cfg.design == "unpaired":
        a_lab, c_lab = cfg.groups
        fa = [f for f, r in zip(fits[cfg.marker], state.records) if r.group == a_lab]
        fc = [f for f, r in zip(fits[cfg.marker], state.records) if r.group == c_lab]
        report = compare_groups(fa, fc, paired=False, labels=(a_lab, c_lab))
        rows = fits[cfg.marker]
        groups = [r.group for r in state.records]
    else:
        y, r = cfg.paired_roles
        fa, fc = fits[y], fits[r]
        report = compare_groups(fa, fc, paired=True, labels=(y, r))
        rows = fa + fc
        groups = [rec.group for rec in state.records] * 2
    state.results["piecewise"] = (fa, fc, report)
    state.artifacts["piecewise.csv"] = fits_csv(rows, groups)
    state.artifacts["piecewise_comparison.json"] = dumps(report)


def stage_plots(state):
    cfg = state.config
    if not cfg.plots:
        return
    if cfg.design == "unpaired":
        a, c = _split(state, cfg.marker, state.registered)
        labels = cfg.groups
    else:
        a, c = (list(state.registered[r]) for r in cfg.paired_roles)
        labels = cfg.paired_roles
    state.artifacts["plots/mean_curves.svg"] = plots.mean_curves({labels[0]: a, labels[1]: c})
    if "test" in state.results:
        state.artifacts["plots/t_curve.svg"] = plots.tcurve(state.results["test"])
    if "discriminant" in state.results:
        state.artifacts["plots/discriminant.svg"] = plots.discriminant(state.results["discriminant"])
    if "piecewise" in state.results:
        fa, fc, _ = state.results["piecewise"]
        state.artifacts["plots/piecewise_parameters.svg"] = plots.parameter_panels(fa, fc, labels)


_STAGE_FUNCS = {"validate": stage_validate, "geometry": stage_geometry, "curves": stage_curves,
                "register": stage_register, "test": stage_test,
                "discriminate": stage_discriminate, "piecewise": stage_piecewise,
                "plots": stage_plots}


def _write(outdir, artifacts):
    outdir = Path(outdir)
    for name, content in artifacts.items():
        p = outdir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            p.write_bytes(content)
        else:
            p.write_text(content)


def execute(state, stages):
    """Run ``stages`` on ``state``; always returns a :class:`RunOutcome` and
    writes the manifest (plus artifacts on success) to the output directory."""
    cfg = state.config
    manifest = {"software": {"name": "bdplot", "version": __version__},
                "config": cfg.echo(), "interpretation_notes": list(INTERPRETATION_NOTES),
                "stages": [], "timings_s": {}, "warnings": [], "status": "ok",
                "failed_stage": None, "error": None}
    status = 0
    current = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            for name in stages:
                current = name
                log.info("stage %s", name)
                t0 = time.perf_counter()
                try:
                    _STAGE_FUNCS[name](state)
                except (np.linalg.LinAlgError, FloatingPointError) as exc:
                    raise NumericalError(f"{type(exc).__name__}: {exc}") from exc
                manifest["timings_s"][name] = round(time.perf_counter() - t0, 4)
                manifest["stages"].append(name)
        except BDError as exc:
            status = exc.exit_code
            manifest.update(status="failed", failed_stage=current,
                            error={"type": type(exc).__name__, "message": str(exc),
                                   "exit_code": exc.exit_code})
            log.error("stage %s failed: %s", current, exc)
        seen = OrderedDict()
        for w in caught:
            key = (w.category.__name__, str(w.message))
            seen[key] = seen.get(key, 0) + 1
    manifest["warnings"] = [{"category": k[0], "message": k[1], "count": n}
                            for k, n in seen.items()]
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if status == 0:
        manifest["artifacts"] = sorted(state.artifacts)
        _write(out, state.artifacts)
    (out / "manifest.json").write_text(dumps(manifest))
    return RunOutcome(status=status, manifest=manifest, state=state)


def run_pipeline(config, stages=STAGES):
    """Run the full pipeline (or a prefix of it) described by ``config``.

    Parameters
    ----------
    config : RunConfig
    stages : sequence of str
        Stage names in execution order.

    Returns
    -------
    RunOutcome
        ``status`` is 0 on success, otherwise the CLI exit code of the
        failure (1 config, 2 data, 3 numerical).
    """
    unknown = [s for s in stages if s not in _STAGE_FUNCS]
    if unknown:
        raise ConfigError(f"unknown stages {unknown}")
    return execute(RunState(config=config), stages)


def state_from_curves(config, curves_path, nuclei_path=None):
    """Rebuild a run state from an exported curve table (for per-stage commands).

    Curves carrying a non-unit scale or dilation are treated as registered.
    """
    curves, meta = read_curves(curves_path, nuclei_path)
    state = RunState(config=config)
    roles = config.roles()
    by_id = OrderedDict()
    for c, m in zip(curves, meta):
        by_id.setdefault(str(c.nucleus_id), {})[c.channel] = (c, m)
    for nid, chans in by_id.items():
        if not all(role in chans for role in roles):
            raise DataError(f"{curves_path}: nucleus {nid} lacks channel(s) "
                            f"{[r for r in roles if r not in chans]}")
        m = chans[roles[0]][1]
        state.records.append(Record(nucleus_id=nid, image=m["image"], group=m["group"]))
        for role in roles:
            state.curves.setdefault(role, []).append(chans[role][0])
    if not state.records:
        raise DataError(f"{curves_path}: no curves")
    if config.design == "unpaired":
        labels = sorted({r.group for r in state.records})
        if config.groups is None:
            if len(labels) != 2:
                raise ConfigError(f"curve table needs exactly 2 group labels, found {labels}")
            config.groups = tuple(labels)
    state.registered = {role: list(v) for role, v in state.curves.items()}
    state.scaled = state.registered
    return state
