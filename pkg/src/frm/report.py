"""Experiment reports: metric rows, per-condition summaries and CSV output."""
import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import echo

ROW_COLUMNS = {
    "linreg": ("seed", "alpha", "dim", "method", "test_mse"),
    "mountain-car": ("seed", "features", "method", "step", "rmse"),
    "synth-mlp": ("seed", "regime", "method", "test_mse"),
}
ROW_TYPES = {
    "seed": int, "alpha": float, "dim": int, "method": str, "test_mse": float,
    "features": str, "step": int, "rmse": float, "regime": str,
}
SUMMARY_TAIL = ("quantity", "n", "mean", "p2_5", "p97_5")
# ratios of two numerically exact fits count as ties
RATIO_FLOOR = 1e-24


@dataclass
class ExperimentReport:
    experiment: str
    rows: list  # tuples in ROW_COLUMNS order
    summary: list  # dicts keyed by summary_columns
    summary_columns: tuple
    config: object
    flags: dict = field(default_factory=dict)

    @property
    def columns(self):
        return ROW_COLUMNS[self.experiment]


def interval(values):
    """Mean and central 95% percentile interval."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    lo, hi = np.percentile(v, [2.5, 97.5])
    return float(v.mean()), float(lo), float(hi)


def stat_row(cond, quantity, values):
    mean, lo, hi = interval(values)
    return {**cond, "quantity": quantity, "n": len(values), "mean": mean, "p2_5": lo, "p97_5": hi}


def scalar_row(cond, quantity, value, n):
    return {**cond, "quantity": quantity, "n": n, "mean": float(value), "p2_5": "", "p97_5": ""}


def ratio(num, den):
    return max(num, RATIO_FLOOR) / max(den, RATIO_FLOOR)


def paired(rows, key_cols, metric_col, method_col="method"):
    """{condition: {seed: {method: value}}} from report rows."""
    out = {}
    for r in rows:
        cond = tuple(r[k] for k in key_cols)
        out.setdefault(cond, {}).setdefault(r["seed"], {})[r[method_col]] = r[metric_col]
    return out


def comparison_rows(cond, per_seed, methods, metric):
    """Per-method statistics plus per-seed ERM/FRM comparisons."""
    out = []
    for m in methods:
        vals = [d[m] for d in per_seed.values() if m in d]
        out.append(stat_row(cond, f"{metric}:{m}", vals))
    if {"erm", "frm"} <= set(methods):
        both = [d for d in per_seed.values() if "erm" in d and "frm" in d]
        e = np.array([d["erm"] for d in both])
        f = np.array([d["frm"] for d in both])
        ratios = [ratio(a, b) for a, b in zip(e, f)]
        out.append(stat_row(cond, "ratio:erm/frm", ratios))
        if both:
            out.append(scalar_row(cond, "median_ratio:erm/frm", np.median(ratios), len(both)))
            out.append(scalar_row(cond, "ratio_of_means:erm/frm", ratio(e.mean(), f.mean()), len(both)))
            out.append(scalar_row(cond, "frm_win_rate", float(np.mean(f < e)), len(both)))
    return out


def as_dicts(report):
    return [dict(zip(report.columns, r)) for r in report.rows]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def rows_csv(report):
    return _csv_text(report.columns, report.rows)


def summary_csv(report):
    cols = report.summary_columns
    return _csv_text(cols, [[s[c] for c in cols] for s in report.summary])


def config_echo(report):
    flags = "".join(f"# flag {k} = {v}\n" for k, v in sorted(report.flags.items()))
    return f"# frm {__version__}\n{flags}" + echo(report.config)


def emit_report(report, out_dir):
    """Write rows.csv, summary.csv and config.echo; each lands via rename.

    All three are staged before any is renamed into place, so a failure
    leaves no partial output.
    """
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "rows.csv": rows_csv(report),
        "summary.csv": summary_csv(report),
        "config.echo": config_echo(report),
    }
    staged = {}
    try:
        for name, text in payload.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            staged[name] = tmp
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except OSError:
        for tmp in staged.values():
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    paths = {}
    for name, tmp in staged.items():
        dest = os.path.join(out_dir, name)
        os.replace(tmp, dest)
        paths[name] = dest
    return paths


def read_rows(path):
    """Parse rows.csv back into typed tuples."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [tuple(ROW_TYPES[c](v) for c, v in zip(header, row)) for row in reader]


def read_summary(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
