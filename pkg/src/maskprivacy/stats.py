"""First-party statistics: chi-square independence and Mann-Whitney U.

No scipy at runtime. The chi-square tail is the regularized upper incomplete
gamma function Q(df/2, x/2), computed by a power series on one side of the
s+1 switch point and a Lentz continued fraction on the other. Mann-Whitney
uses midranks, a tie-corrected variance, and a continuity-corrected normal
tail; an exact tie-respecting enumeration is available for small samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateSamplesError,
    EmptyInputError,
    ZeroMarginError,
)
from .records import PredictionRecord
from .validation import check_sample

_EPS = 1e-14
_MAX_ITER = 500


def _gamma_q_series(s: float, x: float) -> float:
    # Series for P(s, x); Q = 1 - P. Converges fast for x < s + 1.
    term = 1.0 / s
    total = term
    for n in range(1, _MAX_ITER):
        term *= x / (s + n)
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    log_p = s * math.log(x) - x - math.lgamma(s) + math.log(total)
    return 1.0 - math.exp(log_p)


def _gamma_q_contfrac(s: float, x: float) -> float:
    # Modified Lentz continued fraction for Q(s, x); stable for x >= s + 1.
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    log_q = s * math.log(x) - x - math.lgamma(s) + math.log(h)
    return math.exp(log_q)


def regularized_gamma_q(s: float, x: float) -> float:
    """Q(s, x) = Gamma(s, x) / Gamma(s), the upper regularized incomplete gamma."""
    if s <= 0.0:
        raise ValueError(f"shape must be positive, got {s}")
    if x < 0.0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x == 0.0:
        return 1.0
    if x < s + 1.0:
        return min(max(_gamma_q_series(s, x), 0.0), 1.0)
    return min(max(_gamma_q_contfrac(s, x), 0.0), 1.0)


def chi2_sf(statistic: float, df: int) -> float:
    """Upper-tail probability of the chi-square distribution."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if statistic < 0.0:
        raise ValueError(f"statistic must be non-negative, got {statistic}")
    return regularized_gamma_q(df / 2.0, statistic / 2.0)


def normal_sf(z: float) -> float:
    """Standard normal upper-tail probability."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    tail: str  # "one" or "two"
    df: Optional[int] = None
    method: str = ""
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "tail": self.tail,
            "df": self.df,
            "method": self.method,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    row_labels: Tuple[str, ...]
    col_labels: Tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError(f"counts must be 2-D, got shape {counts.shape}")
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            if not np.allclose(counts, np.round(counts)) or np.any(counts < 0):
                raise ValueError("counts must be non-negative integers")
            counts = np.round(counts).astype(np.int64)
        object.__setattr__(self, "counts", counts.astype(np.int64))
        if len(self.row_labels) != counts.shape[0] or len(self.col_labels) != counts.shape[1]:
            raise ValueError("label lengths must match counts shape")

    @property
    def df(self) -> int:
        r, c = self.counts.shape
        return (r - 1) * (c - 1)

    def expected(self) -> np.ndarray:
        row = self.counts.sum(axis=1, keepdims=True)
        col = self.counts.sum(axis=0, keepdims=True)
        total = self.counts.sum()
        if np.any(row == 0) or np.any(col == 0):
            raise ZeroMarginError("contingency table has a zero row or column margin")
        return row * col / total


def chi_square_independence(table: ContingencyTable) -> TestResult:
    """Pearson chi-square test of independence (no continuity correction).

    Requires at least a 2x2 table with strictly positive margins.
    """
    r, c = table.counts.shape
    if r < 2 or c < 2:
        raise ValueError(f"need at least 2x2 table, got {r}x{c}")
    expected = table.expected()
    statistic = float(((table.counts - expected) ** 2 / expected).sum())
    p = chi2_sf(statistic, table.df)
    return TestResult(statistic=statistic, p_value=p, tail="one",
                      df=table.df, method="pearson_chi_square")


def contingency_from_records(
    records: Sequence[PredictionRecord],
    attribute: str,
    levels: Optional[Sequence[str]] = None,
) -> ContingencyTable:
    """Levels x (correct, incorrect) table for a classification task.

    Only levels with at least one record form rows; zero-support levels
    would force a zero margin, which chi-square cannot use.
    """
    if not records:
        raise EmptyInputError("no records")
    counts: Dict[str, List[int]] = {}
    for r in records:
        if attribute not in r.attributes:
            raise ValueError(f"record {r.image_id} lacks attribute {attribute!r}")
        level = str(r.attributes[attribute])
        cell = counts.setdefault(level, [0, 0])
        cell[0 if r.correct else 1] += 1
    if levels is None:
        ordered = sorted(counts)
    else:
        ordered = [l for l in levels if l in counts]
    mat = np.array([counts[l] for l in ordered], dtype=np.int64)
    return ContingencyTable(mat, tuple(ordered), ("correct", "incorrect"))


def _midranks(pooled: np.ndarray) -> Tuple[np.ndarray, float]:
    """Midranks (1-based) of pooled values plus the tie sum: sum(t^3 - t)."""
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(len(pooled), dtype=float)
    tie_sum = 0.0
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        t = j - i + 1
        avg = (i + j) / 2.0 + 1.0
        ranks[order[i:j + 1]] = avg
        tie_sum += t**3 - t
        i = j + 1
    return ranks, tie_sum


def mann_whitney_u(a, b) -> TestResult:
    """One-tailed Mann-Whitney U via the normal approximation.

    Tests the direction "a tends larger than b". Midranks handle ties, the
    variance carries the tie correction, and the z score applies a 0.5
    continuity correction. When every pooled value is identical there is no
    ordering information: p = 1.0 with degenerate=True.
    """
    a = check_sample(a, "a")
    b = check_sample(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise DegenerateSamplesError("both samples must be non-empty")
    n_a, n_b = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks, tie_sum = _midranks(pooled)
    u_a = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    n = n_a + n_b
    mu = n_a * n_b / 2.0
    if np.all(pooled == pooled[0]):
        return TestResult(statistic=u_a, p_value=1.0, tail="one",
                          method="normal_approximation", degenerate=True)
    var = n_a * n_b / 12.0 * ((n + 1) - tie_sum / (n * (n - 1)))
    if var <= 0.0:
        return TestResult(statistic=u_a, p_value=1.0, tail="one",
                          method="normal_approximation", degenerate=True)
    z = (u_a - mu - 0.5) / math.sqrt(var)
    return TestResult(statistic=u_a, p_value=normal_sf(z), tail="one",
                      method="normal_approximation")


def mann_whitney_u_exact(a, b) -> TestResult:
    """Exact one-tailed Mann-Whitney p by tie-respecting enumeration.

    Enumerates every assignment of the pooled multiset into groups of sizes
    (n_a, n_b) and reports P(U >= U_observed). Guarded to pooled size <= 20
    (each sample <= 10 in practice); larger inputs belong to mann_whitney_u.
    """
    a = check_sample(a, "a")
    b = check_sample(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise DegenerateSamplesError("both samples must be non-empty")
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    if n > 20:
        raise ValueError(f"exact enumeration supports pooled size <= 20, got {n}")
    pooled = np.concatenate([a, b])
    ranks, _ = _midranks(pooled)
    offset = n_a * (n_a + 1) / 2.0
    u_obs = float(ranks[:n_a].sum() - offset)
    if np.all(pooled == pooled[0]):
        return TestResult(statistic=u_obs, p_value=1.0, tail="one",
                          method="exact_enumeration", degenerate=True)
    # Ranks are fixed by the pooled multiset, so each assignment's U is just
    # a sum over the chosen rank subset.
    hits = 0
    total = 0
    tol = 1e-9
    for idx in combinations(range(n), n_a):
        u = ranks[list(idx)].sum() - offset
        if u >= u_obs - tol:
            hits += 1
        total += 1
    return TestResult(statistic=u_obs, p_value=hits / total, tail="one",
                      method="exact_enumeration")


def evaluate_records(records: Sequence[PredictionRecord]) -> dict:
    """Headline metrics: accuracy for classification, MAE/RMSE for regression."""
    if not records:
        raise EmptyInputError("cannot evaluate zero records")
    if records[0].is_regression:
        err = np.array([float(r.predicted) - float(r.true_value) for r in records])
        return {
            "n": len(records),
            "mae": float(np.abs(err).mean()),
            "rmse": float(np.sqrt((err**2).mean())),
        }
    n_correct = sum(1 for r in records if r.correct)
    return {"n": len(records), "accuracy": n_correct / len(records)}


def confusion_matrix(
    records: Sequence[PredictionRecord], class_names: Optional[Sequence[str]] = None
) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Rows = true class, columns = predicted class."""
    if not records:
        raise EmptyInputError("no records")
    if class_names is None:
        seen = {str(r.true_value) for r in records} | {str(r.predicted) for r in records}
        class_names = sorted(seen)
    index = {c: i for i, c in enumerate(class_names)}
    mat = np.zeros((len(class_names), len(class_names)), dtype=np.int64)
    for r in records:
        mat[index[str(r.true_value)], index[str(r.predicted)]] += 1
    return mat, tuple(class_names)


def subgroup_accuracy(
    records: Sequence[PredictionRecord],
    group_by: str,
    domain: Optional[Sequence[str]] = None,
) -> dict:
    """Per-level accuracy for one grouping attribute.

    Levels from `domain` with zero records are listed under zero_support
    instead of getting a meaningless accuracy. Because the levels partition
    the records, the support-weighted mean of subgroup accuracies equals the
    overall accuracy exactly.
    """
    if not records:
        raise EmptyInputError("no records")
    groups: Dict[str, List[PredictionRecord]] = {}
    for r in records:
        if group_by not in r.attributes:
            raise ValueError(f"record {r.image_id} lacks attribute {group_by!r}")
        groups.setdefault(str(r.attributes[group_by]), []).append(r)
    ordered = sorted(groups) if domain is None else [l for l in domain if l in groups]
    report = {
        level: {
            "n": len(groups[level]),
            "accuracy": sum(1 for r in groups[level] if r.correct) / len(groups[level]),
        }
        for level in ordered
    }
    zero = [] if domain is None else [l for l in domain if l not in groups]
    return {"groups": report, "zero_support": zero}


def subgroup_mae(
    records: Sequence[PredictionRecord],
    group_by: str,
    domain: Optional[Sequence[str]] = None,
) -> dict:
    """Per-level MAE for a regression task; mirrors subgroup_accuracy."""
    if not records:
        raise EmptyInputError("no records")
    groups: Dict[str, List[PredictionRecord]] = {}
    for r in records:
        if group_by not in r.attributes:
            raise ValueError(f"record {r.image_id} lacks attribute {group_by!r}")
        groups.setdefault(str(r.attributes[group_by]), []).append(r)
    ordered = sorted(groups) if domain is None else [l for l in domain if l in groups]
    report = {}
    for level in ordered:
        err = np.array([abs(float(r.predicted) - float(r.true_value)) for r in groups[level]])
        report[level] = {"n": len(groups[level]), "mae": float(err.mean())}
    zero = [] if domain is None else [l for l in domain if l not in groups]
    return {"groups": report, "zero_support": zero}


def analyze_task(
    records: Sequence[PredictionRecord],
    group_attrs: Sequence[str] = ("sex", "race", "age_bin"),
) -> dict:
    """JSON-ready bias report for one task's records.

    Classification gets accuracy, confusion matrix, subgroup accuracies, and
    a chi-square independence test of correctness vs each grouping attribute.
    Regression gets MAE/RMSE and subgroup MAE. Attributes whose table cannot
    support a test (fewer than two levels, zero margins) carry a note instead.
    """
    from .datasets import AGE_BIN_NAMES, RACES, SEXES

    if not records:
        raise EmptyInputError("no records")
    domains = {"sex": SEXES, "race": RACES, "age_bin": AGE_BIN_NAMES}
    out: dict = {"task": records[0].task, "metrics": evaluate_records(records)}
    regression = records[0].is_regression
    if regression:
        out["subgroups"] = {
            attr: subgroup_mae(records, attr, domains.get(attr)) for attr in group_attrs
        }
        return out
    mat, names = confusion_matrix(records)
    out["confusion"] = {"classes": list(names), "matrix": mat.tolist()}
    out["subgroups"] = {}
    out["chi_square"] = {}
    for attr in group_attrs:
        out["subgroups"][attr] = subgroup_accuracy(records, attr, domains.get(attr))
        try:
            table = contingency_from_records(records, attr, domains.get(attr))
            result = chi_square_independence(table)
            out["chi_square"][attr] = result.to_dict()
        except (ValueError, ZeroMarginError) as exc:
            out["chi_square"][attr] = {"note": f"not testable: {exc}"}
    return out
