"""Perception survey ingestion, importance weights, and vulnerability index.

The privacy vulnerability index for a modality is the importance-weighted
mean of per-attribute predictability:

    PVI = sum_i(s_i * p_i) / sum_i(s_i)

with s_i the relative importance of attribute i from survey rankings and
p_i the predictability (model performance mapped to [0, 1]).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .errors import (
    EmptyInputError,
    InvalidRankingError,
    KeyMismatchError,
    OutOfRangePredictabilityError,
    WeightMismatchError,
)

PRIVACY_ATTRIBUTES = ("age", "race", "sex")

# Reference values reported for the original study; carried for comparison
# only, never substituted for computed results.
REFERENCE_IMPORTANCE = {"age": 0.3765, "race": 0.3353, "sex": 0.2882}
REFERENCE_PVI = {"face": 0.828, "masked_face": 0.853}
REFERENCE_PREDICTABILITY_SOTA = {"age": 0.701, "race": 0.9123, "sex": 0.9823}


@dataclass(frozen=True)
class SurveyResponse:
    """One respondent: attribute ranking (1 = most identifying) plus extras."""

    respondent_id: str
    ranking: Dict[str, int]
    likert: Dict[str, int] = field(default_factory=dict)
    yes_no: Dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        attrs = tuple(sorted(self.ranking))
        expected = tuple(sorted(PRIVACY_ATTRIBUTES))
        if attrs != expected:
            raise InvalidRankingError(
                f"{self.respondent_id}: ranking keys {attrs} != {expected}"
            )
        ranks = sorted(self.ranking.values())
        if ranks != list(range(1, len(expected) + 1)):
            raise InvalidRankingError(
                f"{self.respondent_id}: ranks {ranks} are not a permutation of "
                f"1..{len(expected)}"
            )


def read_survey_csv(path) -> List[SurveyResponse]:
    """Read responses from CSV with columns respondent_id, rank_age, rank_race,
    rank_sex, and optional likert_* / yesno_* columns."""
    path = Path(path)
    responses: List[SurveyResponse] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyInputError(f"{path} has no header")
        for row in reader:
            ranking = {}
            likert: Dict[str, int] = {}
            yes_no: Dict[str, bool] = {}
            for key, raw in row.items():
                if key == "respondent_id" or raw is None or raw == "":
                    continue
                if key.startswith("rank_"):
                    ranking[key[len("rank_"):]] = int(raw)
                elif key.startswith("likert_"):
                    likert[key[len("likert_"):]] = int(raw)
                elif key.startswith("yesno_"):
                    yes_no[key[len("yesno_"):]] = _parse_bool(raw)
            responses.append(SurveyResponse(
                respondent_id=row.get("respondent_id", f"r{len(responses)}"),
                ranking=ranking, likert=likert, yes_no=yes_no,
            ))
    if not responses:
        raise EmptyInputError(f"{path} holds no responses")
    return responses


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("yes", "true", "1", "y"):
        return True
    if value in ("no", "false", "0", "n"):
        return False
    raise ValueError(f"cannot parse boolean from {raw!r}")


def write_survey_csv(responses: Sequence[SurveyResponse], path) -> None:
    path = Path(path)
    likert_keys = sorted({k for r in responses for k in r.likert})
    yesno_keys = sorted({k for r in responses for k in r.yes_no})
    header = (
        ["respondent_id"]
        + [f"rank_{a}" for a in PRIVACY_ATTRIBUTES]
        + [f"likert_{k}" for k in likert_keys]
        + [f"yesno_{k}" for k in yesno_keys]
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in responses:
            row = [r.respondent_id] + [r.ranking[a] for a in PRIVACY_ATTRIBUTES]
            row += [r.likert.get(k, "") for k in likert_keys]
            row += [str(r.yes_no[k]).lower() if k in r.yes_no else "" for k in yesno_keys]
            writer.writerow(row)


@dataclass(frozen=True)
class ImportanceWeights:
    """Normalized per-attribute importance; values sum to 1."""

    values: Dict[str, float]
    n_responses: int = 0
    scheme: str = "linear"

    def __post_init__(self):
        if not self.values:
            raise EmptyInputError("no importance weights")
        if any(v <= 0.0 for v in self.values.values()):
            raise ValueError(f"weights must be positive: {self.values}")
        total = sum(self.values.values())
        if abs(total - 1.0) > 1e-9:
            object.__setattr__(
                self, "values", {k: v / total for k, v in self.values.items()}
            )


def compute_rii(responses: Sequence[SurveyResponse]) -> ImportanceWeights:
    """Relative importance index from rankings.

    Each response contributes weight (n_attrs - rank + 1) to an attribute
    (rank 1 in a 3-attribute survey scores 3). RII_i is attribute i's weight
    share of the grand total, so the values sum to 1 by construction.
    """
    if not responses:
        raise EmptyInputError("no survey responses")
    n_attrs = len(PRIVACY_ATTRIBUTES)
    weight_sum = {a: 0.0 for a in PRIVACY_ATTRIBUTES}
    for r in responses:
        for attr, rank in r.ranking.items():
            weight_sum[attr] += n_attrs - rank + 1
    grand = sum(weight_sum.values())
    return ImportanceWeights(
        values={a: weight_sum[a] / grand for a in PRIVACY_ATTRIBUTES},
        n_responses=len(responses),
        scheme="linear",
    )


@dataclass(frozen=True)
class PviReport:
    """PVI for one modality with its full inputs, auditable end to end."""

    modality: str
    pvi: float
    weights: Dict[str, float]
    predictability: Dict[str, float]

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "pvi": self.pvi,
            "weights": dict(self.weights),
            "predictability": dict(self.predictability),
        }


def compute_pvi(
    weights: ImportanceWeights | Dict[str, float],
    predictability: Dict[str, float],
    modality: str = "",
) -> PviReport:
    """Importance-weighted predictability: sum(s_i * p_i) / sum(s_i).

    Weight and predictability keys must match exactly; predictability values
    must lie in [0, 1].
    """
    values = weights.values if isinstance(weights, ImportanceWeights) else dict(weights)
    if not values:
        raise EmptyInputError("no weights")
    if set(values) != set(predictability):
        raise KeyMismatchError(
            f"weight keys {sorted(values)} != predictability keys {sorted(predictability)}"
        )
    if any(w <= 0.0 for w in values.values()):
        raise ValueError(f"weights must be positive: {values}")
    for attr, p in predictability.items():
        if not 0.0 <= float(p) <= 1.0:
            raise OutOfRangePredictabilityError(
                f"predictability[{attr!r}] = {p} outside [0, 1]"
            )
    total = sum(values.values())
    pvi = sum(values[a] * float(predictability[a]) for a in values) / total
    return PviReport(modality=modality, pvi=pvi, weights=dict(values),
                     predictability={k: float(v) for k, v in predictability.items()})


def pvi_reduction(higher, lower) -> float:
    """Relative PVI reduction in percent: 100 * (hi - lo) / hi.

    Accepts two PviReports (whose importance weights must match within 1e-9)
    or two bare PVI floats.
    """
    if isinstance(higher, PviReport) and isinstance(lower, PviReport):
        keys = set(higher.weights)
        if keys != set(lower.weights) or any(
            abs(higher.weights[k] - lower.weights[k]) > 1e-9 for k in keys
        ):
            raise WeightMismatchError(
                "reports were built from different importance weights"
            )
        hi, lo = higher.pvi, lower.pvi
    else:
        hi, lo = float(higher), float(lower)
    if hi <= 0.0:
        raise ValueError(f"reference PVI must be positive, got {hi}")
    return 100.0 * (hi - lo) / hi


def reference_consistency(tolerance: float = 5e-3) -> dict:
    """Compare recomputed reference PVI against the printed constants.

    The reference predictability row recomputes to a PVI that does not match
    every printed constant; this helper reports the discrepancy explicitly so
    downstream reports can flag it rather than silently preferring either.
    """
    recomputed = compute_pvi(REFERENCE_IMPORTANCE, REFERENCE_PREDICTABILITY_SOTA,
                             modality="reference_sota").pvi
    deltas = {name: recomputed - printed for name, printed in REFERENCE_PVI.items()}
    return {
        "recomputed_from_reference_inputs": recomputed,
        "printed": dict(REFERENCE_PVI),
        "deltas": deltas,
        "consistent": {n: abs(d) <= tolerance for n, d in deltas.items()},
    }


def build_pvi_report(
    weights: ImportanceWeights,
    predictability_by_modality: Dict[str, Dict[str, float]],
    baseline: Optional[str] = None,
) -> dict:
    """JSON-ready PVI comparison across modalities.

    When `baseline` names one modality, every other modality gets a
    reduction_vs_baseline percentage. Includes the reference-consistency
    block so printed-vs-recomputed discrepancies surface in the output.
    """
    reports = {
        modality: compute_pvi(weights, preds, modality)
        for modality, preds in predictability_by_modality.items()
    }
    out: dict = {
        "weights": dict(weights.values),
        "n_responses": weights.n_responses,
        "modalities": {m: r.to_dict() for m, r in reports.items()},
        "reference": reference_consistency(),
    }
    if baseline is not None:
        if baseline not in reports:
            raise KeyError(f"baseline {baseline!r} not among modalities")
        base = reports[baseline]
        # Signed percent drop from the baseline; negative means this modality
        # is MORE vulnerable than the baseline.
        out["reductions_vs_" + baseline] = {
            m: 100.0 * (base.pvi - r.pvi) / base.pvi
            for m, r in reports.items()
            if m != baseline
        }
    return out


def write_pvi_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
