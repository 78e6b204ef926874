"""Import and export of VGG Image Annotator (VIA 1.x / 2.x) JSON."""

from __future__ import annotations

import bisect
import json
import json.scanner
from dataclasses import dataclass, field
from pathlib import Path

from ..classify import CLASS_NAMES, CellType
from ..detect import BBox
from ..jsonio import dumps


class ViaFormatError(ValueError):
    def __init__(self, source: str, line: int | None, message: str):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line


class _LineDict(dict):
    line: int | None = None


class _LineDecoder(json.JSONDecoder):
    """JSON decoder that remembers the line on which each object starts."""

    def __init__(self, text: str):
        super().__init__()
        newlines = [i for i, ch in enumerate(text) if ch == "\n"]
        plain = self.parse_object

        def parse_object(s_and_end, *args):
            obj, end = plain(s_and_end, *args)
            out = _LineDict(obj)
            out.line = bisect.bisect_left(newlines, s_and_end[1]) + 1
            return out, end

        self.parse_object = parse_object
        self.scan_once = json.scanner.py_make_scanner(self)


@dataclass
class ViaImage:
    filename: str
    boxes: list[BBox] = field(default_factory=list)
    box_labels: list[CellType | None] = field(default_factory=list)
    points: list[tuple[float, float]] = field(default_factory=list)
    point_labels: list[CellType] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "boxes": [{**b.to_json(), "label": None if lab is None else CLASS_NAMES[lab]}
                      for b, lab in zip(self.boxes, self.box_labels)],
            "points": [{"x": x, "y": y, "label": CLASS_NAMES[lab]} for (x, y), lab in zip(self.points, self.point_labels)],
        }


def _line(obj):
    return getattr(obj, "line", None)


def _label(attrs, label_key, source, line, required):
    raw = attrs.get(label_key) if isinstance(attrs, dict) else None
    if isinstance(raw, dict):  # VIA checkbox attributes: {"HOF": true}
        chosen = [k for k, v in raw.items() if v]
        raw = chosen[0] if len(chosen) == 1 else None
    if raw is None or raw == "":
        if required:
            raise ViaFormatError(source, line, f"point region has no {label_key!r} attribute")
        return None
    try:
        return CellType.parse(str(raw))
    except ValueError:
        raise ViaFormatError(source, line, f"label {raw!r} is not one of {', '.join(CLASS_NAMES)}") from None


def _number(shape, key, source, line):
    v = shape.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ViaFormatError(source, line, f"shape attribute {key!r} must be a number, got {v!r}")
    return float(v)


def _parse_entry(entry, label_key, source) -> ViaImage:
    line = _line(entry)
    if not isinstance(entry, dict) or "filename" not in entry:
        raise ViaFormatError(source, line, "image entry without a filename")
    regions = entry.get("regions", [])
    if isinstance(regions, dict):  # VIA 1.x keys regions by index
        regions = [regions[k] for k in sorted(regions, key=lambda k: int(k) if str(k).isdigit() else k)]
    if not isinstance(regions, list):
        raise ViaFormatError(source, _line(entry), "regions must be a list or an object")
    img = ViaImage(entry["filename"])
    for region in regions:
        rline = _line(region)
        shape = region.get("shape_attributes") if isinstance(region, dict) else None
        if not isinstance(shape, dict):
            raise ViaFormatError(source, rline, "region without shape_attributes")
        attrs = region.get("region_attributes", {})
        kind = shape.get("name")
        sline = _line(shape) or rline
        if kind == "rect":
            x, y = _number(shape, "x", source, sline), _number(shape, "y", source, sline)
            w, h = _number(shape, "width", source, sline), _number(shape, "height", source, sline)
            if w <= 0 or h <= 0:
                raise ViaFormatError(source, sline, f"rect has non-positive size {w}x{h}")
            img.boxes.append(BBox.from_xywh(x, y, w, h))
            img.box_labels.append(_label(attrs, label_key, source, rline, required=False))
        elif kind == "point":
            img.points.append((_number(shape, "cx", source, sline), _number(shape, "cy", source, sline)))
            img.point_labels.append(_label(attrs, label_key, source, rline, required=True))
        else:
            raise ViaFormatError(source, sline, f"unsupported shape type {kind!r} (expected rect or point)")
    return img


def parse_via(text: str, label_key: str = "label", source: str = "<string>") -> dict[str, ViaImage]:
    """Ground truth per image filename from VIA JSON text."""
    try:
        doc = _LineDecoder(text).decode(text)
    except json.JSONDecodeError as exc:
        raise ViaFormatError(source, exc.lineno, f"malformed JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ViaFormatError(source, 1, "top level must be an object")
    entries = doc.get("_via_img_metadata", doc)
    out = {}
    for key, entry in entries.items():
        if key.startswith("_via_"):
            continue
        img = _parse_entry(entry, label_key, source)
        if img.filename in out:
            raise ViaFormatError(source, _line(entry), f"duplicate image {img.filename!r}")
        out[img.filename] = img
    return out


def import_via_annotations(path, label_key: str = "label") -> dict[str, ViaImage]:
    path = Path(path)
    return parse_via(path.read_text(encoding="utf-8"), label_key, str(path))


def export_via(images: dict[str, ViaImage], label_key: str = "label") -> str:
    """VIA 2.x project text holding ``images``; :func:`parse_via` inverts it."""
    meta = {}
    for name, img in images.items():
        regions = []
        for b, lab in zip(img.boxes, img.box_labels):
            attrs = {} if lab is None else {label_key: CLASS_NAMES[lab]}
            regions.append({"shape_attributes": {"name": "rect", "x": b.x_min, "y": b.y_min,
                                                 "width": b.width, "height": b.height},
                            "region_attributes": attrs})
        for (x, y), lab in zip(img.points, img.point_labels):
            regions.append({"shape_attributes": {"name": "point", "cx": x, "cy": y},
                            "region_attributes": {label_key: CLASS_NAMES[lab]}})
        meta[f"{name}-1"] = {"filename": name, "size": -1, "regions": regions, "file_attributes": {}}
    return dumps({"_via_settings": {}, "_via_img_metadata": meta})
