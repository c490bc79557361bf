"""Result serialization: verdict rows, per-target summaries, CDF point sets.

JSON is the canonical format (schema_version 1) and carries every
intermediate similarity so a verdict can be audited without rerunning the
scan; CSV is a flat projection of the same rows. Output is deterministic:
no timestamps, stable field order, stable row order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime

SCHEMA_VERSION = 1


@dataclass
class DelayInfo:
    true_fix: str | None = None
    release_tag: str | None = None
    release_date: str | None = None  # ISO-8601, UTC
    delay_days: int | None = None

    def to_dict(self) -> dict:
        return {
            "true_fix": self.true_fix,
            "release_tag": self.release_tag,
            "release_date": self.release_date,
            "delay_days": self.delay_days,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DelayInfo":
        return cls(
            true_fix=d.get("true_fix"),
            release_tag=d.get("release_tag"),
            release_date=d.get("release_date"),
            delay_days=d.get("delay_days"),
        )


@dataclass
class ResultRow:
    """One (patch, target) verdict with its audit trail."""

    patch: str
    target: str
    status: str  # Vulnerable | Fixed | ContextNotFound
    conf: float
    path: str | None = None
    span: tuple[int, int] | None = None
    ctx_sim_up: float | None = None
    ctx_sim_down: float | None = None
    s_del: float | None = None
    s_add: float | None = None
    delay: DelayInfo | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "patch": self.patch,
            "target": self.target,
            "status": self.status,
            "conf": self.conf,
            "path": self.path,
            "span": list(self.span) if self.span is not None else None,
            "ctx_sim_up": self.ctx_sim_up,
            "ctx_sim_down": self.ctx_sim_down,
            "s_del": self.s_del,
            "s_add": self.s_add,
            "delay": self.delay.to_dict() if self.delay is not None else None,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRow":
        return cls(
            patch=d["patch"],
            target=d["target"],
            status=d["status"],
            conf=d["conf"],
            path=d.get("path"),
            span=tuple(d["span"]) if d.get("span") is not None else None,
            ctx_sim_up=d.get("ctx_sim_up"),
            ctx_sim_down=d.get("ctx_sim_down"),
            s_del=d.get("s_del"),
            s_add=d.get("s_add"),
            delay=DelayInfo.from_dict(d["delay"]) if d.get("delay") else None,
            note=d.get("note", ""),
        )


@dataclass
class ScanReport:
    tool_version: str
    params: dict
    patches: list[dict] = field(default_factory=list)
    targets: list[dict] = field(default_factory=list)
    results: list[ResultRow] = field(default_factory=list)

    def summary(self) -> dict:
        """Per-target verdict counts, recomputed from the rows."""
        by_target: dict[str, dict[str, int]] = {}
        for row in self.results:
            counts = by_target.setdefault(
                row.target, {"Vulnerable": 0, "Fixed": 0, "ContextNotFound": 0}
            )
            counts[row.status] += 1
        return by_target

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool_version": self.tool_version,
            "params": dict(self.params),
            "patches": list(self.patches),
            "targets": list(self.targets),
            "results": [r.to_dict() for r in sorted_rows(self.results)],
            "summary": self.summary(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version: {d.get('schema_version')}")
        return cls(
            tool_version=d["tool_version"],
            params=dict(d["params"]),
            patches=list(d["patches"]),
            targets=list(d["targets"]),
            results=[ResultRow.from_dict(r) for r in d["results"]],
        )


def sorted_rows(rows: list[ResultRow]) -> list[ResultRow]:
    return sorted(rows, key=lambda r: (r.patch, r.target))


_CSV_COLUMNS = [
    "patch", "target", "status", "conf", "path", "span_start", "span_end",
    "ctx_sim_up", "ctx_sim_down", "s_del", "s_add",
    "true_fix", "release_tag", "release_date", "delay_days", "note",
]


def emit_report(report: ScanReport, format: str = "json") -> str:
    """Serialize the report; JSON is canonical, CSV a flat row projection."""
    if format == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for row in sorted_rows(report.results):
            d = row.delay or DelayInfo()
            writer.writerow([
                row.patch, row.target, row.status, row.conf,
                _blank(row.path),
                _blank(row.span[0] if row.span else None),
                _blank(row.span[1] if row.span else None),
                _blank(row.ctx_sim_up), _blank(row.ctx_sim_down),
                _blank(row.s_del), _blank(row.s_add),
                _blank(d.true_fix), _blank(d.release_tag),
                _blank(d.release_date), _blank(d.delay_days),
                row.note,
            ])
        return buf.getvalue()
    raise ValueError(f"unknown report format: {format}")


def _blank(v) -> object:
    return "" if v is None else v


def parse_report(text: str) -> ScanReport:
    return ScanReport.from_dict(json.loads(text))


@dataclass
class CdfSeries:
    """Empirical CDF: distinct ascending values with cumulative fractions."""

    label: str
    values: list[float]
    fractions: list[float]


def emit_cdf(values: list[float], label: str) -> CdfSeries:
    """Step-function CDF over the values; duplicates collapse to one point."""
    if not values:
        raise ValueError("cannot build a CDF from no values")
    ordered = sorted(values)
    n = len(ordered)
    points: list[tuple[float, float]] = []
    for i, v in enumerate(ordered, 1):
        if i < n and ordered[i] == v:
            continue  # keep only the last occurrence of each value
        points.append((v, i / n))
    return CdfSeries(
        label=label,
        values=[p[0] for p in points],
        fractions=[p[1] for p in points],
    )


def write_cdf_csv(series: CdfSeries, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["value", "cum_fraction"])
        for v, f in zip(series.values, series.fractions):
            writer.writerow([v, f])


def write_rsweep_csv(series_by_r: list[tuple[float, CdfSeries]], path: str) -> None:
    """CDF per reward factor, flattened to (r, value, cum_fraction) rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r", "value", "cum_fraction"])
        for r, series in series_by_r:
            for v, f in zip(series.values, series.fractions):
                writer.writerow([r, v, f])


def delay_iso(dt: datetime | None) -> str | None:
    return dt.isoformat() if dt is not None else None
