"""Run accuracy report: per-target achieved vs nominal marks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml


@dataclass
class ReportRow:
    target_id: str
    nominal_point: np.ndarray
    nominal_direction: np.ndarray
    achieved_point: np.ndarray | None
    achieved_direction: np.ndarray | None
    pos_err: float
    ang_err: float
    passed: bool


@dataclass
class RunReport:
    rows: list[ReportRow]
    total_time_s: float
    complete: bool = True

    @property
    def pass_count(self) -> int:
        return sum(1 for r in self.rows if r.passed)

    def summary(self) -> dict:
        pos = [r.pos_err for r in self.rows if math.isfinite(r.pos_err)]
        ang = [r.ang_err for r in self.rows if math.isfinite(r.ang_err)]
        return {
            "rows": len(self.rows),
            "pass_count": self.pass_count,
            "mean_pos_err_m": float(np.mean(pos)) if pos else 0.0,
            "max_pos_err_m": float(np.max(pos)) if pos else 0.0,
            "mean_ang_err_rad": float(np.mean(ang)) if ang else 0.0,
            "max_ang_err_rad": float(np.max(ang)) if ang else 0.0,
            "total_time_s": float(self.total_time_s),
            "complete": bool(self.complete),
        }


def _vec(v) -> list[float] | None:
    return None if v is None else [float(x) for x in v]


def write_report(report: RunReport, fmt: str = "table") -> str:
    if fmt == "structured":
        doc = {
            "version": 1,
            "complete": bool(report.complete),
            "total_time_s": float(report.total_time_s),
            "summary": report.summary(),
            "rows": [
                {
                    "target": r.target_id,
                    "nominal_point_m": _vec(r.nominal_point),
                    "nominal_direction": _vec(r.nominal_direction),
                    "achieved_point_m": _vec(r.achieved_point),
                    "achieved_direction": _vec(r.achieved_direction),
                    "pos_err_m": float(r.pos_err),
                    "ang_err_rad": float(r.ang_err),
                    "pass": bool(r.passed),
                }
                for r in report.rows
            ],
        }
        return yaml.safe_dump(doc, sort_keys=False)
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")
    s = report.summary()
    header = f"{'target':<10} {'pos_err_mm':>10} {'ang_err_deg':>11} {'pass':>5}"
    lines = [header, "-" * len(header)]
    for r in report.rows:
        lines.append(
            f"{r.target_id:<10} {r.pos_err * 1000:>10.3f} "
            f"{math.degrees(r.ang_err):>11.4f} {'yes' if r.passed else 'NO':>5}"
        )
    lines.append("-" * len(header))
    lines.append(
        f"rows {s['rows']}  pass {s['pass_count']}  "
        f"pos mean/max {s['mean_pos_err_m'] * 1000:.3f}/{s['max_pos_err_m'] * 1000:.3f} mm  "
        f"ang mean/max {math.degrees(s['mean_ang_err_rad']):.4f}/{math.degrees(s['max_ang_err_rad']):.4f} deg  "
        f"time {s['total_time_s']:.1f} s  "
        f"{'complete' if s['complete'] else 'PARTIAL'}"
    )
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> RunReport:
    """Inverse of write_report(fmt='structured')."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"report is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise ValueError("report must be a mapping with 'version: 1'")
    rows = []
    for r in doc.get("rows", []):
        rows.append(
            ReportRow(
                target_id=str(r["target"]),
                nominal_point=np.asarray(r["nominal_point_m"], dtype=float),
                nominal_direction=np.asarray(r["nominal_direction"], dtype=float),
                achieved_point=(
                    None if r.get("achieved_point_m") is None
                    else np.asarray(r["achieved_point_m"], dtype=float)
                ),
                achieved_direction=(
                    None if r.get("achieved_direction") is None
                    else np.asarray(r["achieved_direction"], dtype=float)
                ),
                pos_err=float(r["pos_err_m"]),
                ang_err=float(r["ang_err_rad"]),
                passed=bool(r["pass"]),
            )
        )
    return RunReport(
        rows=rows,
        total_time_s=float(doc.get("total_time_s", 0.0)),
        complete=bool(doc.get("complete", True)),
    )
