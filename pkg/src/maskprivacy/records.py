"""Prediction records and their CSV serialization.

Classification CSV columns: image_id,true,pred,score_0..score_{k-1}.
Regression CSV columns: image_id,true_age,pred_age.
Ground-truth grouping attributes are not stored in the CSV; they are joined
back from labels via attach_attributes at analysis time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .datasets import AttributeLabel
from .errors import EmptyInputError


@dataclass(frozen=True)
class PredictionRecord:
    image_id: str
    task: str
    true_value: object
    predicted: object
    scores: Optional[tuple] = None
    attributes: Dict[str, object] = field(default_factory=dict, compare=False)

    @property
    def is_regression(self) -> bool:
        return isinstance(self.true_value, float) or isinstance(self.predicted, float)

    @property
    def correct(self) -> bool:
        if self.is_regression:
            raise ValueError("correctness is undefined for regression records")
        return self.true_value == self.predicted


def write_records_csv(records: Sequence[PredictionRecord], path) -> None:
    if not records:
        raise EmptyInputError("no records to write")
    path = Path(path)
    regression = records[0].is_regression
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if regression:
            writer.writerow(["image_id", "true_age", "pred_age"])
            for r in records:
                writer.writerow([r.image_id, f"{float(r.true_value):g}", f"{float(r.predicted):g}"])
        else:
            k = len(records[0].scores or ())
            writer.writerow(["image_id", "true", "pred"] + [f"score_{i}" for i in range(k)])
            for r in records:
                scores = [f"{s:.6f}" for s in (r.scores or ())]
                writer.writerow([r.image_id, r.true_value, r.predicted] + scores)


def read_records_csv(path, task: str = "") -> List[PredictionRecord]:
    path = Path(path)
    records: List[PredictionRecord] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path} is empty")
        regression = header[:3] == ["image_id", "true_age", "pred_age"]
        for row in reader:
            if not row:
                continue
            if regression:
                records.append(PredictionRecord(
                    image_id=row[0], task=task or "age_reg",
                    true_value=float(row[1]), predicted=float(row[2]),
                ))
            else:
                scores = tuple(float(v) for v in row[3:]) or None
                records.append(PredictionRecord(
                    image_id=row[0], task=task, true_value=row[1],
                    predicted=row[2], scores=scores,
                ))
    return records


def attach_attributes(
    records: Sequence[PredictionRecord], labels: Dict[str, AttributeLabel]
) -> List[PredictionRecord]:
    """Join ground-truth grouping attributes onto records by image_id.

    Records without a matching label keep empty attributes; callers that
    require full coverage check for that explicitly.
    """
    out = []
    for r in records:
        label = labels.get(r.image_id)
        if label is None:
            out.append(r)
            continue
        attrs = {
            "sex": label.sex,
            "race": label.race,
            "age_bin": label.age_bin,
            "age_years": label.age_years,
        }
        out.append(replace(r, attributes=attrs))
    return out
