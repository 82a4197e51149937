"""CSV and JSON artifact formats.

All CSVs have a header row, ``\\n`` line endings, and floats written with
``repr`` so they read back bit-exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .sequences import PulseEvent, PulseProgram, export_pulse_list

PULSE_COLUMNS = ("index", "time_s", "phase_deg", "epsilon", "nx", "ny", "nz")
SCAN_COLUMNS = ("protocol", "component", "n", "relative_contrast", "std_error")
CURVE_COLUMNS = ("total_time_s", "mean_contrast", "std_error")
T2_COLUMNS = ("protocol", "component", "n", "T2_s", "T2_err", "p", "A", "resid", "status")
T2_SCHEMA_VERSION = 1


def fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


class CsvWriter:
    """Header-first CSV writer that flushes after each row."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(columns)
        self._fh.flush()

    def row(self, values):
        self._w.writerow([fmt(v) for v in values])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_pulse_csv(program: PulseProgram, path) -> Path:
    with CsvWriter(path, PULSE_COLUMNS) as w:
        for e in export_pulse_list(program):
            w.row([e.index, e.time_s, e.phase_deg, e.epsilon, e.nx, e.ny, e.nz])
    return Path(path)


def read_pulse_csv(path) -> list[PulseEvent]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PULSE_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(PULSE_COLUMNS)}")
        return [
            PulseEvent(int(r["index"]), float(r["time_s"]), float(r["phase_deg"]), float(r["epsilon"]),
                       float(r["nx"]), float(r["ny"]), float(r["nz"]))
            for r in reader
        ]


def write_scan_csv(rows, path) -> Path:
    with CsvWriter(path, SCAN_COLUMNS) as w:
        for r in rows:
            w.row([r.protocol, r.component, r.n, float(r.relative_contrast), float(r.std_error)])
    return Path(path)


def write_curve_csv(curve, path) -> Path:
    with CsvWriter(path, CURVE_COLUMNS) as w:
        for p in curve.points:
            w.row([float(p.total_time), float(p.mean_contrast), float(p.std_error)])
    return Path(path)


def t2_row_values(row) -> list:
    if row.fit is None:
        nan = math.nan
        return [row.protocol, row.component, row.n, nan, nan, nan, nan, nan, "failed"]
    f = row.fit
    return [row.protocol, row.component, row.n, f.t2, f.t2_err, f.exponent, f.amplitude,
            f.residual_rms, "ok"]


def t2_summary(tables) -> dict:
    """JSON summary of one or more :class:`T2Table` objects."""
    out = {"schema_version": T2_SCHEMA_VERSION, "columns": list(T2_COLUMNS), "rows": [], "power_laws": []}
    for table in tables:
        for row in table.rows:
            entry = dict(zip(T2_COLUMNS, t2_row_values(row)))
            entry = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in entry.items()}
            if row.error:
                entry["error"] = row.error
            out["rows"].append(entry)
        if table.rows and table.power_law is not None:
            out["power_laws"].append({
                "protocol": table.rows[0].protocol,
                "component": table.rows[0].component,
                "prefactor_s": table.power_law.prefactor,
                "exponent": table.power_law.exponent,
            })
    return out


def write_json(obj, path) -> Path:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return Path(path)
