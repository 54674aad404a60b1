"""Readers and writers for images, boundary files and curve tables."""
from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BDWarning, DataError
from .profiles import GRID, ExpressionCurve, LabeledImage

_BAND_NAMES = {"L": "gray", "I;16": "gray", "I;16B": "gray", "I;16L": "gray", "I;16N": "gray",
               "R": "red", "G": "green", "B": "blue", "A": "alpha"}
_SUPPORTED = {"L", "LA", "RGB", "RGBA", "I;16", "I;16B", "I;16L", "I;16N"}


def _bands(img):
    names = [_BAND_NAMES.get(b, b.lower()) for b in img.getbands()]
    if img.mode.startswith("I;16"):
        return [np.asarray(img, dtype=np.uint16)], names
    arr = np.asarray(img)
    if arr.ndim == 2:
        return [arr], names
    return [arr[..., i] for i in range(arr.shape[-1])], names


def read_image(path, roles=None):
    """Read an 8- or 16-bit, 1-4 channel raster and tag channels by role.

    Parameters
    ----------
    path : str or Path
    roles : dict, optional
        ``role -> channel`` where channel is an index or a band name
        (``gray``, ``red``, ``green``, ``blue``, ``alpha``). Without a
        mapping the band names themselves are the roles.

    Returns
    -------
    LabeledImage
    """
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except Exception as exc:
        raise DataError(f"{path}: unsupported or unreadable image container ({exc})") from None
    if img.mode in ("F", "I"):
        raise DataError(f"{path}: 32-bit images are not supported; use 8- or 16-bit channels")
    if img.mode not in _SUPPORTED:
        raise DataError(f"{path}: unsupported pixel mode {img.mode!r}; need 8/16-bit, 1-4 channels")
    planes, names = _bands(img)
    if roles is None:
        tagged = dict(zip(names, planes))
    else:
        tagged = {}
        for role, ch in roles.items():
            if isinstance(ch, (int, np.integer)):
                if not 0 <= ch < len(planes):
                    raise DataError(f"{path}: channel {ch} for role {role!r} not present "
                                    f"({len(planes)} channel(s))")
                tagged[role] = planes[ch]
            elif ch in names:
                tagged[role] = planes[names.index(ch)]
            else:
                raise DataError(f"{path}: channel {ch!r} for role {role!r} not present; have {names}")
    dpi = img.info.get("dpi")
    if dpi and float(dpi[0]) > 0:
        pixel_size = 25400.0 / float(dpi[0])  # micrometres
    else:
        pixel_size = 1.0
        warnings.warn(f"{path.name}: no pixel size in metadata; using 1.0", BDWarning, stacklevel=2)
    return LabeledImage(planes=tagged, pixel_size=pixel_size, source=str(path))


def read_boundaries(path):
    """Parse a boundary JSON file: an array of nuclei, each either a list of
    ``[x, y]`` pairs or an object ``{"id": ..., "vertices": [[x, y], ...]}``.

    Returns a list of ``(id, vertices)``; missing ids default to the index.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(doc, list):
        raise DataError(f"{path}: top level must be an array of nuclei")
    out = []
    for k, item in enumerate(doc):
        if isinstance(item, dict):
            if "vertices" not in item:
                raise DataError(f"{path}: nucleus {k} has no 'vertices'")
            nid, verts = item.get("id", k), item["vertices"]
        else:
            nid, verts = k, item
        try:
            v = np.asarray(verts, dtype=float)
        except (TypeError, ValueError):
            raise DataError(f"{path}: nucleus {k} vertices are not numeric pairs") from None
        if v.ndim != 2 or v.shape[1] != 2:
            raise DataError(f"{path}: nucleus {k} vertices must be [x, y] pairs")
        if len(v) < 3:
            raise DataError(f"{path}: nucleus {k} has fewer than 3 vertices")
        if not np.all(np.isfinite(v)):
            raise DataError(f"{path}: nucleus {k} has non-finite coordinates")
        out.append((nid, v))
    return out


def write_boundaries(path, nuclei):
    doc = [{"id": nid, "vertices": [[float(x), float(y)] for x, y in v]} for nid, v in nuclei]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _fmt(x):
    return repr(float(x))


def curves_csv(curves):
    """Long-format curve table ``nucleus_id, channel, r, g`` (200 rows per curve)."""
    lines = ["nucleus_id,channel,r,g"]
    for c in curves:
        for r, g in zip(GRID, c.values):
            lines.append(f"{c.nucleus_id},{c.channel},{_fmt(r)},{_fmt(g)}")
    return "\n".join(lines) + "\n"


def cloud_csv(clouds):
    lines = ["nucleus_id,channel,r,a"]
    for cl in clouds:
        for r, a in zip(cl.r, cl.a):
            lines.append(f"{cl.nucleus_id},{cl.channel},{_fmt(r)},{_fmt(a)}")
    return "\n".join(lines) + "\n"


NUCLEI_FIELDS = ("nucleus_id", "channel", "image", "group", "scale", "dilation", "flags")


def nuclei_csv(curves, images, groups):
    """Per-curve metadata table accompanying :func:`curves_csv`."""
    lines = [",".join(NUCLEI_FIELDS)]
    for c, img, grp in zip(curves, images, groups):
        lines.append(",".join([str(c.nucleus_id), str(c.channel), str(img), str(grp),
                               _fmt(c.scale), _fmt(c.dilation), ";".join(c.flags)]))
    return "\n".join(lines) + "\n"


def read_curves(path, nuclei_path=None):
    """Read a curve table back into :class:`ExpressionCurve` objects.

    Returns ``(curves, meta)`` with ``meta`` a list of per-curve dicts
    (``image``, ``group``) when a nuclei table is available.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    rows = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"nucleus_id", "channel", "r", "g"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            key = (row["nucleus_id"], row["channel"])
            if key not in rows:
                rows[key] = []
                order.append(key)
            try:
                rows[key].append((float(row["r"]), float(row["g"])))
            except ValueError:
                raise DataError(f"{path}:{line}: non-numeric r or g") from None
    meta_rows = {}
    if nuclei_path is not None and Path(nuclei_path).exists():
        with open(nuclei_path, newline="") as fh:
            for row in csv.DictReader(fh):
                meta_rows[(row["nucleus_id"], row["channel"])] = row
    curves, meta = [], []
    for key in order:
        pts = np.array(rows[key])
        if pts.shape[0] != GRID.size or not np.allclose(pts[:, 0], GRID, atol=1e-9):
            raise DataError(f"{path}: curve {key[0]}/{key[1]} is not on the 200-point grid")
        m = meta_rows.get(key, {})
        flags = tuple(f for f in m.get("flags", "").split(";") if f)
        curves.append(ExpressionCurve(values=pts[:, 1], nucleus_id=key[0], channel=key[1],
                                      scale=float(m.get("scale", 1.0) or 1.0),
                                      dilation=float(m.get("dilation", 1.0) or 1.0), flags=flags))
        meta.append({"image": m.get("image", ""), "group": m.get("group", "")})
    return curves, meta
