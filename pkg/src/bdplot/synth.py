"""Synthetic nucleus images with known boundaries and expression profiles.

Pixel intensities are ``illumination(x, y) * gain_k * profile(BD_true(p))``
plus Gaussian noise, clipped to [0, 255] and stored as 8-bit. Marked
boundaries are the true polygons with every vertex moved radially by
``U[-e, e]`` pixels.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from shapely.geometry import Polygon

from .errors import ConfigError, DataError
from .geometry import build_bd_map, curve_from_points
from .profiles import GRID, LabeledImage

TEMPLATES = ("constant", "step", "ramp", "boundary_peak")
_TRUTH_SAMPLES = 720


@dataclass
class Nucleus:
    center: tuple
    axes: tuple
    rotation: float = 0.0
    star_amplitude: float = 0.0  # radial modulation, geometry stress tests only
    star_lobes: int = 5

    def outline(self, n):
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        a, b = self.axes
        rad = 1.0 + self.star_amplitude * np.cos(self.star_lobes * th)
        x, y = a * rad * np.cos(th), b * rad * np.sin(th)
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        return np.c_[self.center[0] + c * x - s * y, self.center[1] + s * x + c * y]


@dataclass
class Profile:
    """Named intensity template as a function of BD."""

    template: str = "constant"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ConfigError(f"unknown profile template {self.template!r}; choose from {TEMPLATES}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.template == "constant":
            return np.full(r.shape, float(p.get("level", 100.0)))
        if self.template == "step":
            at = float(p.get("at", 1.0))
            return np.where(r <= at, float(p.get("inside", 150.0)), float(p.get("outside", 50.0)))
        if self.template == "ramp":
            r0, r1 = float(p.get("r0", 0.85)), float(p.get("r1", 1.15))
            v0, v1 = float(p.get("start", 150.0)), float(p.get("end", 50.0))
            frac = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
            return v0 + (v1 - v0) * frac
        base, height = float(p.get("base", 60.0)), float(p.get("height", 100.0))
        c, w = float(p.get("center", 1.0)), float(p.get("width", 0.08))
        return base + height * np.exp(-0.5 * ((r - c) / w) ** 2)


@dataclass
class SynthSpec:
    shape: tuple
    nuclei: list
    profiles: dict  # role -> Profile
    noise_sigma: float = 0.0
    illumination: tuple = (1.0,)  # c0, cu, cv, cuu, cuv, cvv on centred unit coords
    boundary_jitter: float = 0.0
    seed: int = 0
    n_vertices: int = 48
    gain_sd: float = 0.0  # log-normal per-nucleus gain
    margin: float = 4.0

    def validate(self):
        if self.noise_sigma < 0 or self.boundary_jitter < 0 or self.gain_sd < 0:
            raise ConfigError("noise_sigma, boundary_jitter and gain_sd must be nonnegative")
        if len(self.illumination) > 6:
            raise ConfigError("illumination takes at most 6 polynomial coefficients")
        if not self.profiles:
            raise ConfigError("at least one channel profile is required")
        if len(self.profiles) > 4:
            raise ConfigError("at most 4 channels")
        h, w = self.shape
        polys = []
        for k, nuc in enumerate(self.nuclei):
            if min(nuc.axes) <= 2:
                raise DataError(f"nucleus {k}: axes too small")
            poly = Polygon(nuc.outline(_TRUTH_SAMPLES))
            x0, y0, x1, y1 = poly.bounds
            if x0 < self.margin or y0 < self.margin or x1 > w - 1 - self.margin or y1 > h - 1 - self.margin:
                raise DataError(f"nucleus {k} does not fit inside the image with margin {self.margin}")
            for i, other in enumerate(polys):
                if poly.distance(other) < self.margin:
                    raise DataError(f"nuclei {i} and {k} overlap or are closer than {self.margin} px")
            polys.append(poly)
        if not self.nuclei:
            raise DataError("no nuclei in layout")


@dataclass
class SynthResult:
    image: LabeledImage
    true_boundaries: list
    marked_boundaries: list
    truth: dict  # role -> values on GRID
    gains: np.ndarray  # (n_nuclei, n_roles)
    bd_true: np.ndarray
    orbit_true: np.ndarray
    spec: SynthSpec

    def truth_dict(self):
        roles = list(self.truth)
        return {
            "grid": [float(r) for r in GRID],
            "curves": {role: [float(v) for v in self.truth[role]] for role in roles},
            "profiles": {role: asdict(self.spec.profiles[role]) for role in roles},
            "gains": {role: [float(g) for g in self.gains[:, i]] for i, role in enumerate(roles)},
            "nuclei": [asdict(n) for n in self.spec.nuclei],
            "noise_sigma": self.spec.noise_sigma,
            "boundary_jitter": self.spec.boundary_jitter,
            "illumination": list(self.spec.illumination),
            "seed": self.spec.seed,
        }

    def write(self, directory, stem="image"):
        """Write ``<stem>.png``, ``<stem>.boundaries.json`` and ``<stem>.truth.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        roles = list(self.image.planes)
        stack = np.stack([self.image.planes[r] for r in roles], axis=-1)
        mode = {1: "L", 2: "LA", 3: "RGB", 4: "RGBA"}[len(roles)]
        arr = stack[..., 0] if len(roles) == 1 else stack
        Image.fromarray(arr, mode=mode).save(d / f"{stem}.png", optimize=False,
                                               dpi=(25400, 25400))  # 1 um pixels
        bnd = [{"id": f"{stem}-{k}", "vertices": [[round(float(x), 6), round(float(y), 6)] for x, y in v]}
               for k, v in enumerate(self.marked_boundaries)]
        (d / f"{stem}.boundaries.json").write_text(json.dumps(bnd, indent=1) + "\n")
        truth = self.truth_dict()
        truth["channels"] = roles
        (d / f"{stem}.truth.json").write_text(json.dumps(truth, indent=1) + "\n")
        return d / f"{stem}.png", d / f"{stem}.boundaries.json", d / f"{stem}.truth.json"


def illumination_field(shape, coeffs):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    u, v = xx / max(w - 1, 1) - 0.5, yy / max(h - 1, 1) - 0.5
    basis = (np.ones_like(u), u, v, u * u, u * v, v * v)
    return sum(c * b for c, b in zip(coeffs, basis))


def jitter_vertices(vertices, center, e, rng):
    """Move each vertex radially (w.r.t. ``center``) by an independent U[-e, e]."""
    v = np.asarray(vertices, dtype=float)
    if e == 0:
        return v.copy()
    d = v - np.asarray(center, dtype=float)
    rad = np.hypot(d[:, 0], d[:, 1])
    eps = rng.uniform(-e, e, size=len(v))
    return np.asarray(center) + d * ((rad + eps) / rad)[:, None]


def generate(spec):
    """Render a synthetic image and its ground truth.

    Returns
    -------
    SynthResult
        ``image`` with one uint8 plane per profile role, the true and
        jittered vertex lists, and truth curves on the 200-point grid.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.Philox(key=int(spec.seed)))
    shape = tuple(int(s) for s in spec.shape)
    true_curves = [curve_from_points(n.outline(_TRUTH_SAMPLES), nucleus_id=k)
                   for k, n in enumerate(spec.nuclei)]
    bdmap = build_bd_map(true_curves, shape)
    illum = illumination_field(shape, spec.illumination)
    roles = list(spec.profiles)
    gains = np.exp(rng.normal(0.0, spec.gain_sd, size=(len(spec.nuclei), len(roles)))) \
        if spec.gain_sd > 0 else np.ones((len(spec.nuclei), len(roles)))
    planes = {}
    for i, role in enumerate(roles):
        g = gains[:, i][bdmap.orbit]
        val = illum * g * spec.profiles[role](bdmap.bd)
        if spec.noise_sigma > 0:
            val = val + rng.normal(0.0, spec.noise_sigma, size=shape)
        planes[role] = np.clip(np.rint(val), 0, 255).astype(np.uint8)
    true_vertices = [n.outline(spec.n_vertices) for n in spec.nuclei]
    marked = [jitter_vertices(v, n.center, spec.boundary_jitter, rng)
              for v, n in zip(true_vertices, spec.nuclei)]
    truth = {role: spec.profiles[role](GRID) for role in roles}
    return SynthResult(image=LabeledImage(planes=planes, source="synthetic"),
                       true_boundaries=true_vertices, marked_boundaries=marked, truth=truth,
                       gains=gains, bd_true=bdmap.bd, orbit_true=bdmap.orbit, spec=spec)


def random_layout(shape, n, axes_range=(14.0, 20.0), aspect_range=(0.75, 1.0),
                  spacing=2.2, margin=4.0, rng=None, max_tries=20000):
    """Random non-overlapping ellipses.

    Centres are rejection-sampled so that bounding circles inflated by
    ``spacing`` do not overlap, which leaves each nucleus an exterior orbit
    reaching roughly BD 2. Raises :class:`DataError` when ``n`` do not fit.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    h, w = shape
    out, radii = [], []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise DataError(f"could not place {n} nuclei in a {h}x{w} image (placed {len(out)})")
        a = rng.uniform(*axes_range)
        b = a * rng.uniform(*aspect_range)
        cx = rng.uniform(a + margin + 1, w - a - margin - 2)
        cy = rng.uniform(a + margin + 1, h - a - margin - 2)
        if any(np.hypot(cx - c[0], cy - c[1]) < spacing * (a + r) for c, r in zip(
                [o.center for o in out], radii)):
            continue
        out.append(Nucleus(center=(float(cx), float(cy)), axes=(float(a), float(b)),
                           rotation=float(rng.uniform(0, np.pi))))
        radii.append(a)
    return out


# ---------------------------------------------------------------------------
# ready-made experiments (used by ``bdplot synth``)
# ---------------------------------------------------------------------------

PRESETS = ("two-group", "null", "paired", "paired-null")

_BASE_RAMP = {"start": 150.0, "end": 60.0, "r0": 0.85, "r1": 1.15}
#: group A differs only inside (0.85, 1.15): a steeper drop centred on the boundary
_ZONE_RAMP = {"start": 150.0, "end": 60.0, "r0": 0.95, "r1": 1.05}


def experiment_profiles(preset):
    """``(design, {image label: {role: Profile}})`` for a preset."""
    base = Profile("ramp", dict(_BASE_RAMP))
    zone = Profile("ramp", dict(_ZONE_RAMP))
    if preset == "two-group":
        return "unpaired", {"A": {"marker": zone}, "C": {"marker": base}}
    if preset == "null":
        return "unpaired", {"A": {"marker": base}, "C": {"marker": base}}
    if preset == "paired":
        return "paired", {"P": {"marker": zone, "reference": base}}
    if preset == "paired-null":
        return "paired", {"P": {"marker": base, "reference": base}}
    raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")


def make_experiment(directory, preset="two-group", seed=0, images_per_group=2, nuclei_per_image=12,
                    shape=(384, 384), noise_sigma=8.0, boundary_jitter=1.0, gain_sd=0.2,
                    illumination=(1.0, 0.15, -0.1), n_perm=2000):
    """Write a complete synthetic dataset plus a ready-to-run ``config.yaml``.

    Returns the config path.
    """
    import yaml

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    design, groups = experiment_profiles(preset)
    root = np.random.SeedSequence(int(seed))
    inputs = []
    n_img = images_per_group if design == "unpaired" else 2 * images_per_group
    children = iter(root.spawn(n_img * len(groups)))
    for label, profiles in groups.items():
        for i in range(n_img):
            child = next(children)
            layout_rng = np.random.default_rng(child.spawn(1)[0])
            nuclei = random_layout(shape, nuclei_per_image, rng=layout_rng)
            spec = SynthSpec(shape=shape, nuclei=nuclei, profiles=profiles, noise_sigma=noise_sigma,
                             illumination=tuple(illumination), boundary_jitter=boundary_jitter,
                             seed=int(child.generate_state(1)[0]), gain_sd=gain_sd)
            stem = f"{label}{i + 1:02d}"
            generate(spec).write(d, stem)
            item = {"image": f"{stem}.png", "boundaries": f"{stem}.boundaries.json"}
            if design == "unpaired":
                item["group"] = label
            inputs.append(item)
    roles = list(next(iter(groups.values())))
    config = {
        "design": design,
        "inputs": inputs,
        "channels": {role: i for i, role in enumerate(roles)},
        "output": "out",
        "seed": int(seed),
        "test": {"n_perm": int(n_perm), "level": 0.95},
    }
    if design == "unpaired":
        config["groups"] = list(groups)
        config["marker"] = "marker"
    else:
        config["paired_roles"] = roles
    path = d / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False))
    return path
