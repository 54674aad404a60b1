import json

import numpy as np
import pytest
from PIL import Image

from bdplot.errors import BDWarning, DataError
from bdplot.io import curves_csv, nuclei_csv, read_boundaries, read_curves, read_image
from bdplot.profiles import GRID, ExpressionCurve


def test_rgb_roles(tmp_path):
    arr = np.zeros((8, 9, 3), np.uint8)
    arr[..., 0], arr[..., 1], arr[..., 2] = 10, 20, 30
    Image.fromarray(arr, "RGB").save(tmp_path / "x.png", dpi=(254, 254))
    img = read_image(tmp_path / "x.png", {"body": "blue", "membrane": "red", "marker": "green"})
    assert set(img.planes) == {"body", "membrane", "marker"}
    assert img.planes["marker"][0, 0] == 20
    assert img.pixel_size == pytest.approx(100.0)


def test_single_channel_and_missing_pixel_size(tmp_path):
    Image.fromarray(np.full((5, 5), 7, np.uint8)).save(tmp_path / "g.png")
    with pytest.warns(BDWarning, match="pixel size"):
        img = read_image(tmp_path / "g.png", {"marker": 0})
    assert img.pixel_size == 1.0 and img.planes["marker"].shape == (5, 5)
    with pytest.raises(DataError, match="channel 2"):
        read_image(tmp_path / "g.png", {"marker": 2})


def test_sixteen_bit(tmp_path):
    arr = np.arange(20, dtype=np.uint16).reshape(4, 5) * 1000
    Image.fromarray(arr).save(tmp_path / "w.png")
    with pytest.warns(BDWarning):
        img = read_image(tmp_path / "w.png", {"marker": 0})
    assert img.planes["marker"].dtype == np.uint16
    assert img.planes["marker"][3, 4] == 19000


def test_float_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.float32)).save(tmp_path / "f.tif")
    with pytest.raises(DataError, match="32-bit"):
        read_image(tmp_path / "f.tif")


def test_boundary_errors_name_file_and_nucleus(tmp_path):
    p = tmp_path / "b.json"
    p.write_text(json.dumps([{"id": "n0", "vertices": [[0, 0], [5, 0], [5, 5]]},
                             {"vertices": [[0, 0], [1]]}]))
    with pytest.raises(DataError, match=r"b\.json: nucleus 1"):
        read_boundaries(p)
    p.write_text("{not json")
    with pytest.raises(DataError, match="malformed"):
        read_boundaries(p)
    p.write_text(json.dumps([[[0, 0], [3, 0], [3, 3]]]))
    assert read_boundaries(p)[0][0] == 0


def test_curve_table_roundtrip(tmp_path):
    curves = [ExpressionCurve(values=np.sin(GRID) + k, nucleus_id=f"im:{k}", channel="marker",
                              scale=2.0 + k, dilation=1.05, flags=("low_coverage",)) for k in range(3)]
    (tmp_path / "curves.csv").write_text(curves_csv(curves))
    (tmp_path / "nuclei.csv").write_text(nuclei_csv(curves, ["im"] * 3, ["A", "A", "C"]))
    back, meta = read_curves(tmp_path / "curves.csv", tmp_path / "nuclei.csv")
    assert [c.nucleus_id for c in back] == ["im:0", "im:1", "im:2"]
    assert np.array_equal(back[2].values, curves[2].values)
    assert back[1].scale == 3.0 and back[1].flags == ("low_coverage",)
    assert [m["group"] for m in meta] == ["A", "A", "C"]
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "nucleus_id,channel,r,g" and len(lines) == 601
