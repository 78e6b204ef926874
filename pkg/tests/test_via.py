import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellpheno.classify import CLASS_NAMES, CellType
from cellpheno.detect import BBox
from cellpheno.pipeline import ViaFormatError, ViaImage, export_via, import_via_annotations, parse_via


def project(regions, filename="a.png"):
    return json.dumps({"_via_img_metadata": {f"{filename}123": {"filename": filename, "size": 123, "regions": regions}}},
                      indent=1)


def rect(x, y, w, h, label=None):
    attrs = {} if label is None else {"label": label}
    return {"shape_attributes": {"name": "rect", "x": x, "y": y, "width": w, "height": h}, "region_attributes": attrs}


def test_rect_becomes_box():
    gt = parse_via(project([rect(10, 20, 30, 40)]))
    assert gt["a.png"].boxes == [BBox(10, 20, 40, 60)]
    assert gt["a.png"].box_labels == [None]


def test_empty_regions():
    img = parse_via(project([]))["a.png"]
    assert img.boxes == [] and img.points == []


def test_labelled_point_and_rect():
    point = {"shape_attributes": {"name": "point", "cx": 5, "cy": 7}, "region_attributes": {"label": "hof"}}
    img = parse_via(project([rect(0, 0, 4, 4, "VAS"), point]))["a.png"]
    assert img.box_labels == [CellType.VAS]
    assert img.points == [(5.0, 7.0)] and img.point_labels == [CellType.HOF]


def test_via1_bare_map_with_indexed_regions():
    text = json.dumps({"b.png1": {"filename": "b.png", "regions": {"1": rect(1, 1, 2, 2), "0": rect(0, 0, 1, 1)}}})
    assert parse_via(text)["b.png"].boxes == [BBox(0, 0, 1, 1), BBox(1, 1, 3, 3)]


def test_checkbox_label():
    r = rect(0, 0, 3, 3)
    r["region_attributes"] = {"label": {"SYN": True, "CYT": False}}
    assert parse_via(project([r]))["a.png"].box_labels == [CellType.SYN]


def line_of(text, needle):
    return next(i for i, ln in enumerate(text.splitlines(), 1) if needle in ln)


def test_unknown_label_reports_line():
    text = project([rect(0, 0, 1, 1), rect(0, 0, 1, 1, "LYMPH")])
    with pytest.raises(ViaFormatError) as exc:
        parse_via(text, source="ann.json")
    assert "LYMPH" in str(exc.value) and str(exc.value).startswith("ann.json:")
    # the error points at the offending region, which opens before its label line
    assert exc.value.line is not None and exc.value.line < line_of(text, "LYMPH")
    assert exc.value.line > line_of(text, '"regions"')


def test_unknown_shape_reports_line():
    poly = {"shape_attributes": {"name": "polygon", "all_points_x": [0, 1], "all_points_y": [0, 1]},
            "region_attributes": {}}
    text = project([rect(0, 0, 1, 1), poly])
    with pytest.raises(ViaFormatError, match="polygon") as exc:
        parse_via(text)
    second_shape = [i for i, ln in enumerate(text.splitlines(), 1) if '"shape_attributes"' in ln][1]
    assert exc.value.line == second_shape


def test_point_without_label_rejected():
    point = {"shape_attributes": {"name": "point", "cx": 1, "cy": 1}, "region_attributes": {}}
    with pytest.raises(ViaFormatError, match="label"):
        parse_via(project([point]))


def test_malformed_json():
    with pytest.raises(ViaFormatError) as exc:
        parse_via('{\n "a": [1, 2,\n}')
    assert exc.value.line == 3


def test_bad_geometry():
    with pytest.raises(ViaFormatError, match="non-positive"):
        parse_via(project([rect(0, 0, 0, 5)]))
    with pytest.raises(ViaFormatError, match="number"):
        parse_via(project([rect("1", 0, 2, 5)]))


def test_duplicate_image():
    text = json.dumps({"a1": {"filename": "a.png", "regions": []}, "a2": {"filename": "a.png", "regions": []}})
    with pytest.raises(ViaFormatError, match="duplicate"):
        parse_via(text)


def test_import_from_file(tmp_path):
    p = tmp_path / "ann.json"
    p.write_text(project([rect(1, 2, 3, 4, "FIB")]))
    assert import_via_annotations(p)["a.png"].boxes == [BBox(1, 2, 4, 6)]


coord = st.integers(0, 2000)
size = st.integers(1, 300)
label = st.sampled_from(list(CellType))
images = st.dictionaries(
    st.text("abcxyz0123456789_", min_size=1, max_size=8).map(lambda s: s + ".png"),
    st.tuples(st.lists(st.tuples(coord, coord, size, size, st.none() | label), max_size=6),
              st.lists(st.tuples(coord, coord, label), max_size=6)),
    max_size=4)


@given(images)
def test_export_import_round_trip(spec):
    gt = {name: ViaImage(name,
                         [BBox.from_xywh(x, y, w, h) for x, y, w, h, _ in rects], [r[4] for r in rects],
                         [(float(x), float(y)) for x, y, _ in pts], [p[2] for p in pts])
          for name, (rects, pts) in spec.items()}
    back = parse_via(export_via(gt))
    assert back == gt
    assert {n: g.to_json() for n, g in back.items()} == {n: g.to_json() for n, g in gt.items()}
    assert all(lab is None or CLASS_NAMES[lab] for g in back.values() for lab in g.box_labels)
