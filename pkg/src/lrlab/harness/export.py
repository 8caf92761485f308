"""CSV/JSON persistence of result sets and validated re-import.

Floats are written with 17 significant digits, which round-trips every
double exactly. Files are written to a temporary name and renamed, so an
export either replaces a file completely or leaves it alone.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path
from typing import Iterable

from lrlab.errors import ExportError
from lrlab.harness.config import canonical_json
from lrlab.harness.runner import ResultSet
from lrlab.metrics import CAP_SLACK, RECORD_KINDS, AveragedPoint, FitResult, ScanRecord
from lrlab.operators import SiteInterval

RECORD_COLUMNS = (
    "scenario_id",
    "kind",
    "realization",
    "d",
    "t",
    "value",
    "stderr_placeholder",
    "A_support_lo",
    "A_support_hi",
    "B_support_lo",
    "B_support_hi",
    "config_hash",
)
FIT_COLUMNS = ("scenario_id", "K", "xi", "beta", "rms_log_residual", "n_points", "config_hash")
AVERAGE_COLUMNS = ("scenario_id", "kind", "d", "t", "mean", "stderr", "n", "config_hash")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _csv_text(header: Iterable[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise ExportError(path, f"cannot write: {exc.strerror or exc}") from exc


def records_csv(records: Iterable[ScanRecord], config_hash: str) -> str:
    rows = (
        (
            r.scenario_id,
            r.kind,
            r.realization,
            r.d,
            fmt(r.t),
            fmt(r.value),
            "",
            r.a_support.lo,
            r.a_support.hi,
            r.b_support.lo,
            r.b_support.hi,
            config_hash,
        )
        for r in records
    )
    return _csv_text(RECORD_COLUMNS, rows)


def fits_csv(fits: Iterable[tuple[str, FitResult]], config_hash: str) -> str:
    rows = ((sid, fmt(f.K), fmt(f.xi), fmt(f.beta), fmt(f.rms_log_residual), f.n_points, config_hash) for sid, f in fits)
    return _csv_text(FIT_COLUMNS, rows)


def averages_csv(points: Iterable[tuple[str, AveragedPoint]], config_hash: str) -> str:
    rows = ((sid, p.kind, p.d, fmt(p.t), fmt(p.mean), fmt(p.stderr), p.n, config_hash) for sid, p in points)
    return _csv_text(AVERAGE_COLUMNS, rows)


def summary_dict(res: ResultSet) -> dict:
    caps = [r.cap for r in res.records if r.kind == "commutator" and math.isfinite(r.cap)]
    return {
        "scenario_id": res.config.scenario_id,
        "mode": res.config.mode,
        "config": res.config.to_dict(),
        "config_hash": res.config_hash,
        "tool_version": res.provenance.get("tool_version"),
        "provenance": res.provenance,
        "n_records": len(res.records),
        "max_commutator_cap": max(caps) if caps else None,
        "fits": [
            {"scenario_id": sid, "K": f.K, "xi": f.xi, "beta": f.beta, "rms_log_residual": f.rms_log_residual,
             "n_points": f.n_points, "n_discarded": f.n_discarded}
            for sid, f in res.fits
        ],
        "proof_check_reports": res.proof_reports,
        "margin_reports": res.margin_reports,
        "passed": res.ok,
        "wall_time_s": res.wall_time,
    }


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def export(res: ResultSet, out_dir: str | Path, formats: Iterable[str] = ("csv", "json")) -> list[Path]:
    """Write ``records.csv``, ``fits.csv``, ``averages.csv`` and/or ``summary.json``."""
    out = Path(out_dir)
    formats = set(formats)
    written = []
    if "csv" in formats:
        files = {
            "records.csv": records_csv(res.records, res.config_hash),
            "fits.csv": fits_csv(res.fits, res.config_hash),
            "averages.csv": averages_csv(res.averages, res.config_hash),
        }
        for name, text in files.items():
            _write(out / name, text)
            written.append(out / name)
    if "json" in formats:
        text = json.dumps(_json_safe(summary_dict(res)), indent=2, sort_keys=True, allow_nan=False) + "\n"
        _write(out / "summary.json", text)
        written.append(out / "summary.json")
    return written


def _read_rows(path: Path, columns: tuple[str, ...]) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != columns:
                raise ExportError(path, f"unexpected header {header}")
            rows = []
            for line, row in enumerate(reader, start=2):
                if len(row) != len(columns):
                    raise ExportError(path, f"line {line}: expected {len(columns)} fields, got {len(row)}")
                rows.append(dict(zip(columns, row)))
            return rows
    except ExportError:
        raise
    except OSError as exc:
        raise ExportError(path, f"cannot read: {exc.strerror or exc}") from exc


def read_records(path: str | Path, *, max_cap: float | None = None) -> list[ScanRecord]:
    """Parse ``records.csv`` and validate every row.

    Checks kinds, supports, non-negative values, a single config hash, and
    commutator values against ``max_cap`` when it is given.
    """
    path = Path(path)
    out = []
    hashes = set()
    for line, row in enumerate(_read_rows(path, RECORD_COLUMNS), start=2):
        try:
            kind = row["kind"]
            if kind not in RECORD_KINDS:
                raise ValueError(f"unknown kind {kind!r}")
            if row["stderr_placeholder"] != "":
                raise ValueError("stderr_placeholder must be empty")
            value = float(row["value"])
            if max_cap is not None and kind == "commutator" and value > max_cap + CAP_SLACK:
                raise ValueError(f"commutator {value} exceeds the trivial cap {max_cap}")
            rec = ScanRecord(
                row["scenario_id"],
                kind,
                int(row["realization"]),
                int(row["d"]),
                float(row["t"]),
                value,
                SiteInterval(int(row["A_support_lo"]), int(row["A_support_hi"])),
                SiteInterval(int(row["B_support_lo"]), int(row["B_support_hi"])),
            )
            if rec.d < 0 or rec.realization < 0 or not math.isfinite(rec.t):
                raise ValueError("negative distance or realization, or non-finite time")
        except (ValueError, IndexError) as exc:
            raise ExportError(path, f"line {line}: {exc}") from exc
        hashes.add(row["config_hash"])
        out.append(rec)
    if len(hashes) > 1:
        raise ExportError(path, f"rows carry {len(hashes)} different config hashes")
    return out


def read_fits(path: str | Path) -> list[tuple[str, FitResult]]:
    path = Path(path)
    out = []
    for line, row in enumerate(_read_rows(path, FIT_COLUMNS), start=2):
        try:
            fit = FitResult(float(row["K"]), float(row["xi"]), float(row["beta"]), float(row["rms_log_residual"]),
                            int(row["n_points"]), 0)
            if not (fit.K > 0 and fit.xi > 0):
                raise ValueError("K and xi must be positive")
        except ValueError as exc:
            raise ExportError(path, f"line {line}: {exc}") from exc
        out.append((row["scenario_id"], fit))
    return out


def read_summary(path: str | Path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ExportError(path, f"cannot read: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ExportError(path, f"invalid JSON: {exc}") from exc


def recompute_hash(summary: dict) -> str:
    """Hash of the config echo in a summary, computed like the original."""
    cfg = dict(summary["config"])
    cfg.pop("output", None)
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def load_results(in_dir: str | Path) -> dict:
    """Re-import an export directory, cross-checking records against the summary."""
    in_dir = Path(in_dir)
    summary = read_summary(in_dir / "summary.json") if (in_dir / "summary.json").exists() else None
    max_cap = summary.get("max_commutator_cap") if summary else None
    records = read_records(in_dir / "records.csv", max_cap=max_cap)
    fits = read_fits(in_dir / "fits.csv") if (in_dir / "fits.csv").exists() else []
    if summary is not None:
        h = summary.get("config_hash")
        if recompute_hash(summary) != h:
            raise ExportError(in_dir / "summary.json", "config hash does not match the config echo")
        if records and (in_dir / "records.csv").exists():
            rows = _read_rows(in_dir / "records.csv", RECORD_COLUMNS)
            if rows[0]["config_hash"] != h:
                raise ExportError(in_dir / "records.csv", "config hash differs from summary.json")
        if summary.get("n_records") is not None and summary["n_records"] != len(records):
            raise ExportError(in_dir / "records.csv", f"{len(records)} rows, summary says {summary['n_records']}")
    return {"records": records, "fits": fits, "summary": summary}


def reexport(in_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Validate an export directory and write its tables again under ``out_dir``."""
    loaded = load_results(in_dir)
    summary = loaded["summary"]
    h = summary["config_hash"] if summary else ""
    out = Path(out_dir)
    _write(out / "records.csv", records_csv(loaded["records"], h))
    _write(out / "fits.csv", fits_csv(loaded["fits"], h))
    written = [out / "records.csv", out / "fits.csv"]
    if summary is not None:
        _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
        written.append(out / "summary.json")
    return written
