"""Per-class area accounting, two-epoch change tables and report rendering."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .assessment import AssessmentResult
from .raster_model import (ImageRaster, LabelRaster, RasterError, check_same_grid,
                           encode_labels)

M2_PER_HA = 10_000.0
NA = "NA"
AREA_COLUMNS = ("class", "kind", "pixel_count", "pixel_area_m2", "area_ha")
CHANGE_COLUMNS = ("class", "area_ha_t0", "area_ha_t1", "delta_ha", "relative_change")
ASSESSMENT_COLUMNS = ("view", "class", "metric", "value")


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class AreaRow:
    name: str
    kind: str  # "class" or "group"
    pixel_count: int | None
    area_ha: float


@dataclass
class AreaTable:
    """Per-class hectares for one epoch; ``masked_count`` is the masked pixel total."""

    epoch: str = ""
    pixel_area_m2: float | None = None
    rows: list[AreaRow] = field(default_factory=list)
    masked_count: int | None = None

    def row(self, name: str) -> AreaRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def area(self, name: str) -> float:
        return self.row(name).area_ha

    @classmethod
    def from_pixel_counts(cls, counts: Mapping[str, int], pixel_area_m2: float, epoch: str = "",
                          groups: Mapping[str, Sequence[str]] | None = None,
                          masked_count: int | None = None) -> "AreaTable":
        rows = [AreaRow(name, "class", int(n), int(n) * pixel_area_m2 / M2_PER_HA)
                for name, n in counts.items()]
        table = cls(epoch, pixel_area_m2, rows, masked_count)
        for gname, members in (groups or {}).items():
            table.rows.append(_group_row(table, gname, members))
        return table

    @classmethod
    def from_areas(cls, areas: Mapping[str, float], epoch: str = "",
                   groups: Mapping[str, Sequence[str]] | None = None) -> "AreaTable":
        table = cls(epoch, None, [AreaRow(n, "class", None, float(a)) for n, a in areas.items()])
        for gname, members in (groups or {}).items():
            table.rows.append(_group_row(table, gname, members))
        return table


def _group_row(table: AreaTable, name: str, members: Sequence[str]) -> AreaRow:
    rows = [table.row(m) for m in members]
    counts = [r.pixel_count for r in rows]
    count = None if any(c is None for c in counts) else sum(counts)
    return AreaRow(name, "group", count, sum(r.area_ha for r in rows))


def with_groups(table: AreaTable, scheme) -> AreaTable:
    """Add the scheme's merge-group rows that a table lacks (members matched by name)."""
    names = {r.name for r in table.rows}
    out = AreaTable(table.epoch, table.pixel_area_m2, list(table.rows), table.masked_count)
    for group, members in scheme.merge_groups.items():
        member_names = [scheme.classes[m].name for m in members]
        if group not in names and all(m in names for m in member_names):
            out.rows.append(_group_row(out, group, member_names))
    return out


def class_areas(labels: LabelRaster, merge: Mapping[str, Sequence[int]] | None = None,
                epoch: str = "") -> AreaTable:
    """Count pixels per class and convert to hectares using the grid's pixel area.

    ``merge`` defaults to the scheme's merge groups; pass ``{}`` to skip them.
    Group areas are sums of their member areas.
    """
    scheme = labels.scheme
    pixel_area = labels.geo.pixel_area_m2
    if not pixel_area > 0:
        raise ReportError("degenerate pixel size")
    bins = np.bincount(labels.labels.ravel(), minlength=256)
    counts = {c.name: int(bins[c.class_id]) for c in scheme.classes}
    merge = scheme.merge_groups if merge is None else merge
    groups = {g: [scheme.classes[m].name for m in members] for g, members in merge.items()}
    return AreaTable.from_pixel_counts(counts, pixel_area, epoch, groups,
                                       int(bins[scheme.masked_id]))


@dataclass(frozen=True)
class ChangeRow:
    name: str
    kind: str
    area_t0: float
    area_t1: float
    delta_ha: float
    relative_change: float | None


@dataclass
class AreaChangeReport:
    rows: list[ChangeRow]
    method: str = ""
    epoch_t0: str = ""
    epoch_t1: str = ""

    def row(self, name: str) -> ChangeRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def change_table(t0: AreaTable, t1: AreaTable, method: str = "") -> AreaChangeReport:
    """Absolute and relative area change per class (relative to ``t0``).

    A class missing from one epoch counts as zero area there; a zero
    baseline gives an undefined (``None``) relative change.
    """
    kinds0 = {r.name: r.kind for r in t0.rows}
    kinds1 = {r.name: r.kind for r in t1.rows}
    for name in kinds0.keys() & kinds1.keys():
        if kinds0[name] != kinds1[name]:
            raise ReportError(f"scheme mismatch: {name!r} is a {kinds0[name]} in t0 "
                              f"but a {kinds1[name]} in t1")
    names = list(kinds0) + [n for n in kinds1 if n not in kinds0]
    rows = []
    for name in names:
        a0 = t0.area(name) if name in kinds0 else 0.0
        a1 = t1.area(name) if name in kinds1 else 0.0
        delta = a1 - a0
        rel = None if a0 == 0 else delta / a0
        rows.append(ChangeRow(name, kinds0.get(name) or kinds1[name], a0, a1, delta, rel))
    return AreaChangeReport(rows, method, t0.epoch, t1.epoch)


# --- rendering -------------------------------------------------------------

def fmt_ha(value: float | None) -> str:
    if value is None:
        return NA
    s = f"{value:.1f}"
    return "0.0" if s == "-0.0" else s


def fmt_ratio(value: float | None) -> str:
    if value is None:
        return NA
    s = f"{value:.3f}"
    return "0.000" if s == "-0.000" else s


def _csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _area_rows(t: AreaTable) -> list[list[str]]:
    pa = "" if t.pixel_area_m2 is None else repr(float(t.pixel_area_m2))
    out = [[r.name, r.kind, "" if r.pixel_count is None else str(r.pixel_count), pa,
            fmt_ha(r.area_ha)] for r in t.rows]
    if t.masked_count is not None and t.pixel_area_m2 is not None:
        out.append(["masked", "masked", str(t.masked_count), pa,
                    fmt_ha(t.masked_count * t.pixel_area_m2 / M2_PER_HA)])
    return out


def _change_rows(r: AreaChangeReport) -> list[list[str]]:
    return [[c.name, fmt_ha(c.area_t0), fmt_ha(c.area_t1), fmt_ha(c.delta_ha),
             fmt_ratio(c.relative_change)] for c in r.rows]


def _assessment_rows(res: AssessmentResult) -> list[list[str]]:
    out = [["", "", "points_requested", str(res.n_requested)],
           ["", "", "points_used", str(res.used)],
           ["", "", "points_skipped", str(res.skipped)]]
    for v in res.views:
        out.append([v.name, "", "overall", fmt_ratio(v.overall)])
        out.append([v.name, "", "kappa", fmt_ratio(v.kappa)])
        for c in v.classes:
            out.append([v.name, c.name, "producers_accuracy", fmt_ratio(c.producers_accuracy)])
            out.append([v.name, c.name, "users_accuracy", fmt_ratio(c.users_accuracy)])
            out.append([v.name, c.name, "rand_accuracy", fmt_ratio(c.rand_accuracy)])
    return out


def _json_value(text: str):
    if text in (NA, ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _json(payload: dict) -> bytes:
    return (json.dumps(payload, indent=2) + "\n").encode()


def render_report(report, fmt: str = "csv") -> bytes:
    """Deterministic CSV or JSON bytes for an area table, change report or assessment.

    Hectares are printed to one decimal, ratios to three, undefined values as
    ``NA`` (``null`` in JSON). JSON carries the same rounded numbers as CSV.
    """
    if fmt not in ("csv", "json"):
        raise ReportError(f"unknown report format {fmt!r}")
    if isinstance(report, AreaTable):
        header, rows, kind = AREA_COLUMNS, _area_rows(report), "area_table"
        meta = {"epoch": report.epoch}
    elif isinstance(report, AreaChangeReport):
        header, rows, kind = CHANGE_COLUMNS, _change_rows(report), "area_change"
        meta = {"method": report.method, "epoch_t0": report.epoch_t0,
                "epoch_t1": report.epoch_t1}
    elif isinstance(report, AssessmentResult):
        header, rows, kind = ASSESSMENT_COLUMNS, _assessment_rows(report), "assessment"
        meta = {"seed": report.seed}
    else:
        raise ReportError(f"cannot render {type(report).__name__}")
    if fmt == "csv":
        return _csv(header, rows)
    records = []
    for row in rows:
        rec = {}
        for col, text in zip(header, row):
            rec[col] = text if col in ("class", "kind", "view", "metric") else _json_value(text)
        records.append(rec)
    return _json({"report": kind, **meta, "columns": list(header), "rows": records})


def parse_report(data: bytes | str, fmt: str = "csv") -> list[dict]:
    """Rows of a rendered report as dicts, numbers as float/int and NA as None."""
    text = data.decode() if isinstance(data, bytes) else data
    if fmt == "json":
        return json.loads(text)["rows"]
    if fmt != "csv":
        raise ReportError(f"unknown report format {fmt!r}")
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append({k: (v if k in ("class", "kind", "view", "metric") else _json_value(v))
                    for k, v in rec.items()})
    return out


def write_report(path: str | os.PathLike, report, fmt: str | None = None) -> None:
    fmt = fmt or ("json" if str(path).lower().endswith(".json") else "csv")
    Path(path).write_bytes(render_report(report, fmt))


def read_area_table(path: str | os.PathLike, epoch: str | None = None) -> AreaTable:
    """Load an area CSV/JSON written by ``render_report``.

    Where a pixel count and pixel area are present the area is recomputed
    from them at full precision; otherwise the printed hectares are used.
    """
    p = Path(path)
    fmt = "json" if p.suffix.lower() == ".json" else "csv"
    try:
        rows = parse_report(p.read_bytes(), fmt)
    except OSError as exc:
        raise ReportError(f"{path}: cannot read area table ({exc.strerror})") from None
    except (ValueError, KeyError) as exc:
        raise ReportError(f"{path}: malformed area table ({exc})") from None
    table = AreaTable(epoch if epoch is not None else p.stem)
    for rec in rows:
        missing = {"class", "area_ha"} - rec.keys()
        if missing:
            raise ReportError(f"{path}: missing columns {sorted(missing)}")
        kind = rec.get("kind") or "class"
        count = rec.get("pixel_count")
        pa = rec.get("pixel_area_m2")
        if pa is not None:
            table.pixel_area_m2 = float(pa)
        if count is not None and pa is not None:
            area = int(count) * float(pa) / M2_PER_HA
        elif rec["area_ha"] is None:
            raise ReportError(f"{path}: row {rec['class']!r} has no area")
        else:
            area = float(rec["area_ha"])
        if kind == "masked":
            table.masked_count = None if count is None else int(count)
            continue
        table.rows.append(AreaRow(rec["class"], kind, None if count is None else int(count), area))
    return table


# --- map rendering ---------------------------------------------------------

CHANGED_COLOR = (255, 255, 255, 255)
UNCHANGED_COLOR = (0, 0, 0, 255)


def change_mask_image(t0: LabelRaster, t1: LabelRaster) -> ImageRaster:
    """White where the class changed, black where it did not, transparent if masked."""
    check_same_grid(t0, t1)
    out = np.zeros((t0.height, t0.width, 4), dtype=np.uint8)
    both = t0.valid & t1.valid
    changed = both & (t0.labels != t1.labels)
    out[both & ~changed] = UNCHANGED_COLOR
    out[changed] = CHANGED_COLOR
    return ImageRaster(out, t0.geo)


def triptych(t0: LabelRaster, t1: LabelRaster, gap: int = 8) -> ImageRaster:
    """Side-by-side RGBA panel: t0 map, t1 map, change mask."""
    if gap < 0:
        raise RasterError("gap must be non-negative")
    panels = [encode_labels(t0).samples, encode_labels(t1).samples,
              change_mask_image(t0, t1).samples]
    h, w = t0.height, t0.width
    out = np.zeros((h, 3 * w + 2 * gap, 4), dtype=np.uint8)
    for i, p in enumerate(panels):
        out[:, i * (w + gap):i * (w + gap) + w] = p
    return ImageRaster(out, t0.geo)
