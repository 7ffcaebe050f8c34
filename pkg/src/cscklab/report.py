"""Consolidated table over several run directories of one configuration."""
from __future__ import annotations

import csv
import json
from pathlib import Path

REPORT_COLUMNS = ("order", "r", "s0_norm", "delta", "margin", "lambda1_scalar", "lambda1_dbar",
                  "lambda1_lich", "inv_norm", "final_deviation")


class ReportError(ValueError):
    """Run directories cannot be combined into one report."""


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def collect(dirs):
    """Rows keyed by ``(order, r)`` from every ``solve.csv`` and ``spectra.csv`` found."""
    if not dirs:
        raise ReportError("no run directories given")
    table, hashes = {}, set()
    for d in dirs:
        d = Path(d)
        man = d / "manifest.json"
        if not man.is_file():
            raise ReportError(f"{d}: no manifest.json (not a run directory)")
        hashes.add(json.loads(man.read_text())["config_hash"])
        for name in ("solve.csv", "spectra.csv"):
            if not (d / name).is_file():
                continue
            for row in _read_csv(d / name):
                hashes.add(row["config_hash"])
                key = (int(row["order"]), float(row["r"]))
                entry = table.setdefault(key, {})
                for col in REPORT_COLUMNS[2:]:
                    if row.get(col, "") != "":
                        entry[col] = row[col]
    if len(hashes) > 1:
        raise ReportError(f"runs come from different configurations: {sorted(hashes)}")
    if not table:
        raise ReportError("no solve.csv or spectra.csv rows in the given directories")
    return hashes.pop(), table


def emit_report(dirs, output=None):
    """Write (or return) a whitespace-separated table, one row per ``(order, r)``.

    Missing entries are written as ``NaN`` so that gnuplot skips them.  The
    text depends only on the inputs.
    """
    try:
        h, table = collect(dirs)
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, ReportError):
            raise
        raise ReportError(f"unreadable run directory: {exc}") from None
    width = max(len(c) for c in REPORT_COLUMNS) + 2
    lines = [f"# config_hash {h}", "# " + "".join(c.ljust(width) for c in REPORT_COLUMNS).rstrip()]
    for (order, r) in sorted(table):
        entry = table[(order, r)]
        vals = [str(order), f"{r:.12g}"] + [entry.get(c, "NaN") for c in REPORT_COLUMNS[2:]]
        lines.append("  " + "".join(v.ljust(width) for v in vals).rstrip())
    text = "\n".join(lines) + "\n"
    if output is not None:
        Path(output).write_text(text)
    return text


__all__ = ["ReportError", "REPORT_COLUMNS", "collect", "emit_report"]
