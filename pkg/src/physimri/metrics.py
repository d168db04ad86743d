"""Segmentation agreement and harmonisation statistics.

Dice overlap, coefficient of variation of tissue volumes across
acquisition realisations, an exact/approximate Wilcoxon signed-rank test,
and assembly of annealing-style report tables (mean(sd) Dice and CoV x10^3
cells per sequence/tissue/distribution, with significance marks) plus
parameter-sweep series for volume-consistency plots.

Conventions, fixed and documented:

* both-empty Dice is 1.0 and flagged ``both_empty``;
* CoV uses the sample (n-1) standard deviation and is undefined for zero
  mean;
* Wilcoxon drops zero differences, average-ranks ties, reports
  W = min(W+, W-), and uses full sign enumeration for n <= 12 with a
  continuity- and tie-corrected normal approximation above;
* report CoV is computed per subject, then averaged across subjects.
"""

from __future__ import annotations

import csv
import io as _io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import ValidationError
from .sequences import params_from_json, params_to_dict
from .validation import check_same_grid

EXACT_WILCOXON_MAX_N = 12

TISSUES = ("gm", "wm")
SEQS = ("mprage", "spgr")
DISTS = ("iod", "ood")


# -- Dice ---------------------------------------------------------------------

@dataclass(frozen=True)
class DiceResult:
    score: float
    intersection: int
    count_a: int
    count_b: int
    both_empty: bool = False


def dice(a, b, class_id):
    """Dice overlap of one class between two label maps.

    2|A n B| / (|A| + |B|); if both masks are empty the score is defined
    as 1.0 and flagged.
    """
    try:
        check_same_grid(a.grid, b.grid, context="dice operands")
    except AttributeError:
        raise ValidationError("dice needs two LabelMap operands")
    mask_a = a.labels == class_id
    mask_b = b.labels == class_id
    na = int(mask_a.sum())
    nb = int(mask_b.sum())
    inter = int((mask_a & mask_b).sum())
    if na + nb == 0:
        return DiceResult(1.0, 0, 0, 0, both_empty=True)
    return DiceResult(2.0 * inter / (na + nb), inter, na, nb)


# -- coefficient of variation -------------------------------------------------

@dataclass(frozen=True)
class CovResult:
    mean_ml: float
    sd_ml: float
    cov: float
    n: int


def cov(volumes):
    """Coefficient of variation: sample (n-1) standard deviation over mean."""
    volumes = np.asarray(volumes, dtype=np.float64)
    if volumes.ndim != 1 or volumes.size < 2:
        raise ValidationError("cov needs a 1D list of at least 2 volumes")
    if not np.isfinite(volumes).all():
        raise ValidationError("volumes must be finite")
    mean = float(np.mean(volumes))
    if mean <= 0:
        raise ValidationError("cov is undefined for non-positive mean volume")
    sd = float(np.std(volumes, ddof=1))
    return CovResult(mean, sd, sd / mean, volumes.size)


# -- Wilcoxon signed-rank -------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W = min(W+, W-)
    p_value: float
    n_effective: int
    w_plus: float
    w_minus: float
    exact: bool


def wilcoxon_signed_rank(x, y):
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are removed; ties in |d| receive average ranks. For
    n_effective <= 12 the two-sided p-value is exact, from the full 2^n
    sign enumeration of the observed ranks; above that a normal
    approximation with continuity and tie corrections is used. Requires
    at least 5 effective pairs.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("wilcoxon needs two equal-length 1D samples")
    d = x - y
    d = d[d != 0.0]
    n = int(d.size)
    if n < 5:
        raise ValidationError(
            f"wilcoxon needs >= 5 non-zero paired differences, got {n}"
        )
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    total = n * (n + 1) / 2.0

    if n <= EXACT_WILCOXON_MAX_N:
        masks = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
        w_plus_all = masks @ ranks
        hits = int(np.count_nonzero(w_plus_all <= w)) + int(
            np.count_nonzero(w_plus_all >= total - w)
        )
        p = min(1.0, hits / 2.0**n)
        return WilcoxonResult(w, p, n, w_plus, w_minus, exact=True)

    mean = total / 2.0
    _, counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(counts**3 - counts)) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        raise ValidationError("degenerate variance in the normal approximation")
    z = (w - mean + 0.5) / np.sqrt(var)
    p = min(1.0, 2.0 * float(ndtr(z)))
    return WilcoxonResult(w, p, n, w_plus, w_minus, exact=False)


# -- run records ----------------------------------------------------------------

_RUN_CSV_COLUMNS = (
    "experiment",
    "subject_id",
    "seq",
    "dist",
    "param_json",
    "csf_ml",
    "gm_ml",
    "wm_ml",
    "dice_gm",
    "dice_wm",
    "lo_ml",
    "hi_ml",
)


@dataclass(frozen=True)
class RunRecord:
    """One evaluated realisation: who, which acquisition, what came out."""

    experiment: str
    subject_id: str
    seq: str
    dist: str
    params: object | None
    volumes_ml: dict = field(default_factory=dict)  # keys csf/gm/wm
    dice_scores: dict = field(default_factory=dict)  # keys gm/wm
    lo_ml: float | None = None
    hi_ml: float | None = None

    def __post_init__(self):
        if self.seq not in SEQS:
            raise ValidationError(f"seq must be one of {SEQS}, got {self.seq!r}")
        if self.dist not in DISTS:
            raise ValidationError(f"dist must be one of {DISTS}, got {self.dist!r}")


def _fmt(value):
    return "" if value is None else repr(float(value))


def _parse(text):
    return None if text == "" else float(text)


def run_records_to_csv(records, path=None):
    """Serialize run records; returns the CSV text if path is None."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_RUN_CSV_COLUMNS)
    for r in records:
        params_json = (
            ""
            if r.params is None
            else json.dumps(params_to_dict(r.params), sort_keys=True, separators=(",", ":"))
        )
        writer.writerow(
            [
                r.experiment,
                r.subject_id,
                r.seq,
                r.dist,
                params_json,
                _fmt(r.volumes_ml.get("csf")),
                _fmt(r.volumes_ml.get("gm")),
                _fmt(r.volumes_ml.get("wm")),
                _fmt(r.dice_scores.get("gm")),
                _fmt(r.dice_scores.get("wm")),
                _fmt(r.lo_ml),
                _fmt(r.hi_ml),
            ]
        )
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def run_records_from_csv(path):
    """Parse a run-record CSV (inverse of run_records_to_csv)."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in _RUN_CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"{path}: missing run CSV columns {missing}")
        records = []
        for row in reader:
            params = params_from_json(row["param_json"]) if row["param_json"] else None
            volumes = {
                k: v
                for k in ("csf", "gm", "wm")
                if (v := _parse(row[f"{k}_ml"])) is not None
            }
            dice_scores = {
                k: v
                for k in ("gm", "wm")
                if (v := _parse(row[f"dice_{k}"])) is not None
            }
            records.append(
                RunRecord(
                    experiment=row["experiment"],
                    subject_id=row["subject_id"],
                    seq=row["seq"],
                    dist=row["dist"],
                    params=params,
                    volumes_ml=volumes,
                    dice_scores=dice_scores,
                    lo_ml=_parse(row["lo_ml"]),
                    hi_ml=_parse(row["hi_ml"]),
                )
            )
    return records


# -- annealing report -------------------------------------------------------------

_CELL_COLUMNS = [
    f"{seq}_{tissue}_{dist}" for seq in SEQS for tissue in TISSUES for dist in DISTS
]


def _per_subject_values(runs, seq, tissue, dist, metric):
    """metric 'dice': per-subject mean dice; 'cov': per-subject CoV."""
    by_subject = {}
    for r in runs:
        if r.seq != seq or r.dist != dist:
            continue
        by_subject.setdefault(r.subject_id, []).append(r)
    values = {}
    for subject in sorted(by_subject):
        rows = by_subject[subject]
        if metric == "dice":
            scores = [r.dice_scores[tissue] for r in rows if tissue in r.dice_scores]
            if scores:
                values[subject] = float(np.mean(scores))
        else:
            vols = [r.volumes_ml[tissue] for r in rows if tissue in r.volumes_ml]
            if len(vols) >= 2 and np.mean(vols) > 0:
                values[subject] = cov(vols).cov
    return values


def _format_cell(mean, sd, scale, decimals, best):
    text = f"{mean * scale:.{decimals}f}"
    if sd is not None:
        text += f" ({sd * scale:.{decimals}f})"
    if best:
        text += " *"
    return text


@dataclass(frozen=True)
class AnnealingReport:
    """Formatted mean(sd) tables plus the raw per-cell statistics."""

    alpha: float
    experiments: tuple[str, ...]
    cells: dict  # (metric, experiment, column) -> formatted string
    stats: dict  # nested raw numbers for the JSON emission

    def to_csv(self):
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "experiment", *_CELL_COLUMNS])
        for metric in ("dice", "cov_x1000"):
            for exp in self.experiments:
                writer.writerow(
                    [metric, exp]
                    + [self.cells.get((metric, exp, col), "") for col in _CELL_COLUMNS]
                )
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv())

    def to_json(self):
        return json.dumps(
            {"alpha": self.alpha, "experiments": list(self.experiments), "cells": self.stats},
            indent=2,
            sort_keys=True,
        )

    def write_json(self, path):
        Path(path).write_text(self.to_json() + "\n")


def annealing_report(runs, alpha=0.01):
    """Build the annealing-study tables from run records.

    Cells are mean (sd) across subjects of per-subject Dice and CoV
    (CoV scaled x10^3 in the formatted table, 2 decimals; Dice 3
    decimals; the sd part is omitted with fewer than 2 subjects). Best
    experiments per cell column are marked ``*``: the best mean plus any
    experiment whose paired Wilcoxon difference from it is not
    significant at ``alpha`` (or not testable, e.g. no effective pairs).
    """
    runs = list(runs)
    if not runs:
        raise ValidationError("annealing_report needs at least one run")
    experiments = tuple(sorted({r.experiment for r in runs}))
    by_experiment = {exp: [r for r in runs if r.experiment == exp] for exp in experiments}

    cells = {}
    stats = {}
    for metric, scale, decimals, better in (
        ("dice", 1.0, 3, "max"),
        ("cov_x1000", 1000.0, 2, "min"),
    ):
        metric_key = "dice" if metric == "dice" else "cov"
        for seq in SEQS:
            for tissue in TISSUES:
                for dist in DISTS:
                    column = f"{seq}_{tissue}_{dist}"
                    per_exp = {
                        exp: _per_subject_values(by_experiment[exp], seq, tissue, dist, metric_key)
                        for exp in experiments
                    }
                    per_exp = {exp: v for exp, v in per_exp.items() if v}
                    if not per_exp:
                        continue
                    means = {exp: float(np.mean(list(v.values()))) for exp, v in per_exp.items()}
                    pick = max if better == "max" else min
                    best_exp = pick(sorted(means), key=lambda e: means[e])
                    marks, p_values = _best_marks(per_exp, best_exp, better, alpha)
                    for exp, values in per_exp.items():
                        sd = (
                            float(np.std(list(values.values()), ddof=1))
                            if len(values) >= 2
                            else None
                        )
                        cells[(metric, exp, column)] = _format_cell(
                            means[exp], sd, scale, decimals, marks[exp]
                        )
                        stats.setdefault(metric_key, {}).setdefault(exp, {})[column] = {
                            "mean": means[exp],
                            "sd": sd,
                            "n_subjects": len(values),
                            "best": marks[exp],
                            "p_vs_best": p_values[exp],
                        }
    return AnnealingReport(alpha=alpha, experiments=experiments, cells=cells, stats=stats)


def _best_marks(per_exp, best_exp, better, alpha):
    """Mark the best experiment and everything statistically tied to it."""
    marks = {}
    p_values = {}
    best_values = per_exp[best_exp]
    for exp, values in per_exp.items():
        if exp == best_exp:
            marks[exp] = True
            p_values[exp] = None
            continue
        shared = sorted(set(values) & set(best_values))
        try:
            if len(shared) < 5:
                raise ValidationError("fewer than 5 shared subjects")
            result = wilcoxon_signed_rank(
                [best_values[s] for s in shared], [values[s] for s in shared]
            )
            p_values[exp] = result.p_value
            marks[exp] = result.p_value >= alpha
        except ValidationError:
            # not testable (no effective pairs / too few subjects): tie
            p_values[exp] = None
            marks[exp] = True
    return marks, p_values


# -- sweep curves ----------------------------------------------------------------

_SWEEP_COLUMNS = (
    "param_key",
    "param_value",
    "volume_ml",
    "lo_ml",
    "hi_ml",
    "iod",
    "fa_below_10deg",
)


@dataclass(frozen=True)
class SweepPoint:
    param_value: float
    volume_ml: float
    lo_ml: float | None
    hi_ml: float | None
    iod: bool
    fa_below_10deg: bool


def sweep_curve(runs, param_key, tissue="wm", order_by="param"):
    """Ordered (parameter, volume, lo, hi) series for one subject/tissue.

    ``order_by`` is "param" (sorted by parameter value) or "consistency"
    (sorted by absolute deviation from the median volume, the ordering
    used for multi-parameter sweeps). Runs with a flip angle below 10
    degrees are flagged. Mixed subjects are rejected.
    """
    runs = list(runs)
    if not runs:
        raise ValidationError("sweep_curve needs at least one run")
    subjects = {r.subject_id for r in runs}
    if len(subjects) > 1:
        raise ValidationError(f"sweep_curve needs a single subject, got {sorted(subjects)}")
    if order_by not in ("param", "consistency"):
        raise ValidationError("order_by must be 'param' or 'consistency'")
    points = []
    for r in runs:
        if r.params is None or not hasattr(r.params, param_key):
            raise ValidationError(f"run lacks parameter {param_key!r}")
        if tissue not in r.volumes_ml:
            raise ValidationError(f"run lacks a {tissue!r} volume")
        fa = getattr(r.params, "fa_deg", None)
        points.append(
            SweepPoint(
                param_value=float(getattr(r.params, param_key)),
                volume_ml=float(r.volumes_ml[tissue]),
                lo_ml=r.lo_ml,
                hi_ml=r.hi_ml,
                iod=r.dist == "iod",
                fa_below_10deg=fa is not None and fa < 10.0,
            )
        )
    if order_by == "param":
        points.sort(key=lambda p: (p.param_value, p.volume_ml))
    else:
        median = float(np.median([p.volume_ml for p in points]))
        points.sort(key=lambda p: (abs(p.volume_ml - median), p.param_value))
    return points


def sweep_to_csv(points, param_key, path=None):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_SWEEP_COLUMNS)
    for p in points:
        writer.writerow(
            [
                param_key,
                repr(p.param_value),
                repr(p.volume_ml),
                _fmt(p.lo_ml),
                _fmt(p.hi_ml),
                int(p.iod),
                int(p.fa_below_10deg),
            ]
        )
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
