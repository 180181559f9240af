"""
Tables and curves from a completed archive.

Points are grouped per unit (one round, one-shot target or rho) and
averaged over seeds; the dense baseline contributes the sparsity-0 point
of every mode's curve and its seed-mean is the full-model score. Points
whose mean sparsities coincide are pooled.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ganticket import metrics
from ganticket.expcli.archive import Archive
from ganticket.expcli.config import DENSE
from ganticket.tickets import TicketRecord

REPORT_FIELDS = (
    "mode", "seeds", "full_score", "best_score", "best_sparsity", "extreme_score", "extreme_sparsity",
    "FID_Best (Sparsity)", "FID_Extreme (Sparsity)",
)
CURVE_FIELDS = ("mode", "sparsity", "n", "mean", "ci_low", "ci_high", "full_score")
CI_LEVEL = 0.95


class IncompleteArchive(RuntimeError):
    def __init__(self, missing: list[str]):
        self.missing = missing
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        super().__init__(f"archive incomplete: {len(missing)} unit(s) missing: {shown}")


@dataclass
class Point:
    sparsity: float
    scores: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))


def fmt_score(x: float) -> str:
    if not math.isfinite(x):
        return "inf"
    return f"{x:.2f}" if abs(x) >= 0.995 else f"{x:.3g}"


def fmt_cell(score: float | None, sparsity: float | None) -> str:
    if score is None:
        return "-"
    return f"{fmt_score(score)} ({100 * sparsity:.1f}%)"


def _group_key(unit_id: str) -> str:
    return unit_id.split("/")[-1]


def mode_points(records: list[tuple[str, TicketRecord]]) -> tuple[list[float], dict[str, list[Point]]]:
    """Dense scores (one per seed) and per-mode points sorted by sparsity."""
    dense = [r.score for u, r in records if r.mode == DENSE]
    groups: dict[str, OrderedDict] = {}
    for unit_id, rec in records:
        if rec.mode == DENSE:
            continue
        g = groups.setdefault(rec.mode, OrderedDict()).setdefault(_group_key(unit_id), ([], []))
        g[0].append(rec.sparsity)
        g[1].append(rec.score)
    out = {}
    for mode, by_key in groups.items():
        pts = [Point(0.0, list(dense))] if dense else []
        pts += [Point(float(np.mean(sp)), list(sc)) for sp, sc in by_key.values()]
        out[mode] = _pool(pts)
    if not out and dense:
        out[DENSE] = [Point(0.0, list(dense))]
    return dense, out


def _pool(points: list[Point]) -> list[Point]:
    points = sorted(points, key=lambda p: p.sparsity)
    merged: list[Point] = []
    for p in points:
        if merged and abs(merged[-1].sparsity - p.sparsity) <= 1e-12:
            merged[-1].scores.extend(p.scores)
        else:
            merged.append(Point(p.sparsity, list(p.scores)))
    return merged


def _complete_records(arc: Archive) -> list[tuple[str, TicketRecord]]:
    missing = arc.missing()
    if missing:
        raise IncompleteArchive(missing)
    return arc.records()


def report_rows(arc: Archive) -> list[dict]:
    """One row per mode with the seed-mean full score, best point and extreme matching point."""
    tol = arc.config().train.tol_factor
    records = _complete_records(arc)
    dense, by_mode = mode_points(records)
    full = float(np.mean(dense))
    seeds = len({r.seed for _, r in records})
    rows = []
    for mode, pts in by_mode.items():
        best, extreme = metrics.best_and_extreme([(p.sparsity, p.mean) for p in pts], full, tol)
        rows.append({
            "mode": mode,
            "seeds": seeds,
            "full_score": full,
            "best_score": best.score,
            "best_sparsity": best.sparsity,
            "extreme_score": extreme.score if extreme else None,
            "extreme_sparsity": extreme.sparsity if extreme else None,
            "FID_Best (Sparsity)": fmt_cell(best.score, best.sparsity),
            "FID_Extreme (Sparsity)": fmt_cell(extreme.score if extreme else None,
                                               extreme.sparsity if extreme else None),
        })
    return rows


def t_interval(values, level: float = CI_LEVEL) -> tuple[float, float, float]:
    """Mean and two-sided Student-t interval; the interval is NaN for fewer than two values."""
    x = np.asarray(values, dtype=np.float64)
    mean = float(x.mean())
    if x.size < 2:
        return mean, math.nan, math.nan
    half = float(stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return mean, mean - half, mean + half


def curve_rows(arc: Archive) -> list[dict]:
    records = _complete_records(arc)
    dense, by_mode = mode_points(records)
    full = float(np.mean(dense))
    rows = []
    single = False
    for mode, pts in by_mode.items():
        for p in pts:
            mean, lo, hi = t_interval(p.scores)
            single = single or len(p.scores) < 2
            rows.append({"mode": mode, "sparsity": p.sparsity, "n": len(p.scores), "mean": mean,
                         "ci_low": None if math.isnan(lo) else lo, "ci_high": None if math.isnan(hi) else hi,
                         "full_score": full})
    if single:
        warnings.warn("fewer than two seeds at some points; confidence-interval columns left empty", UserWarning,
                      stacklevel=2)
    return rows


# ------------------------------------------------------------- emission

def to_csv(rows: list[dict], fieldnames) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: "" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                    for k in fieldnames})
    return buf.getvalue()


def to_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=1, sort_keys=False) + "\n"


def _cell(text: str):
    if text == "":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_csv(text: str) -> list[dict]:
    """Inverse of :func:`to_csv`: numbers come back as int/float, empty cells as None."""
    return [{k: _cell(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO(text))]
