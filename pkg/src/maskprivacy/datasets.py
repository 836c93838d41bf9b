"""Attribute labels, age bins, and dataset splits.

Filenames follow the age_gender_race_stamp.ext convention used by in-the-wild
face corpora: gender 0 = male, 1 = female; race 0..4 = white, black, asian,
indian, other. Everything here is pure functions over frozen records.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from .errors import DomainError, MalformedFilenameError, TooFewItemsError

logger = logging.getLogger(__name__)

SEXES = ("male", "female")
RACES = ("white", "black", "asian", "indian", "other")
PARTITIONS = ("train", "val", "test")
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")


@dataclass(frozen=True)
class AgeBin:
    name: str
    lower: int
    upper: int | None  # inclusive; None = open-ended

    def contains(self, age: int) -> bool:
        return age >= self.lower and (self.upper is None or age <= self.upper)


AGE_BINS = (
    AgeBin("baby", 0, 3),
    AgeBin("child", 4, 12),
    AgeBin("teenager", 13, 19),
    AgeBin("young", 20, 30),
    AgeBin("adult", 31, 45),
    AgeBin("middle_aged", 46, 60),
    AgeBin("senior", 61, None),
)
AGE_BIN_NAMES = tuple(b.name for b in AGE_BINS)


@dataclass(frozen=True)
class AttributeLabel:
    """Ground-truth attributes for one image; image_id is the filename stem."""

    image_id: str
    age_years: int
    sex: str
    race: str

    @property
    def age_bin(self) -> str:
        return bin_age(self.age_years).name

    def attribute(self, name: str) -> object:
        if name == "age_bin":
            return self.age_bin
        if name in ("sex", "race", "age_years"):
            return getattr(self, name)
        raise KeyError(f"unknown attribute {name!r}")


def bin_age(age: int) -> AgeBin:
    """Map an integer age in years to its bin. Negative ages are a DomainError."""
    age = int(age)
    if age < 0:
        raise DomainError(f"age must be non-negative, got {age}")
    for b in AGE_BINS:
        if b.contains(age):
            return b
    raise AssertionError("age bins must cover all non-negative ages")


def age_bin_name(age: int) -> str:
    return bin_age(age).name


def parse_label(filename: str) -> AttributeLabel:
    """Parse age_gender_race_stamp.ext into an AttributeLabel.

    Raises MalformedFilenameError when any of the three leading fields is
    missing, non-integer, or out of its code range.
    """
    stem = Path(filename).name
    for ext in IMAGE_EXTENSIONS:
        if stem.lower().endswith(ext):
            stem = stem[: -len(ext)]
            break
    else:
        stem = Path(stem).stem
    parts = stem.split("_")
    if len(parts) < 4:
        raise MalformedFilenameError(
            f"{filename!r}: expected age_gender_race_stamp, got {len(parts)} fields"
        )
    try:
        age = int(parts[0])
        gender_code = int(parts[1])
        race_code = int(parts[2])
    except ValueError as exc:
        raise MalformedFilenameError(f"{filename!r}: non-integer field: {exc}") from exc
    if age < 0:
        raise MalformedFilenameError(f"{filename!r}: negative age {age}")
    if gender_code not in (0, 1):
        raise MalformedFilenameError(f"{filename!r}: gender code {gender_code} not in {{0,1}}")
    if not 0 <= race_code <= 4:
        raise MalformedFilenameError(f"{filename!r}: race code {race_code} not in 0..4")
    return AttributeLabel(
        image_id=stem,
        age_years=age,
        sex=SEXES[gender_code],
        race=RACES[race_code],
    )


def format_label(label: AttributeLabel, stamp: str | None = None, extension: str = ".jpg") -> str:
    """Inverse of parse_label: build a conventional filename for a label.

    If stamp is omitted, the trailing fields of image_id are reused, so
    parse_label(format_label(x)) == x for labels that came from parse_label.
    """
    if stamp is None:
        parts = label.image_id.split("_")
        stamp = "_".join(parts[3:]) if len(parts) >= 4 else "0"
    gender_code = SEXES.index(label.sex)
    race_code = RACES.index(label.race)
    return f"{label.age_years}_{gender_code}_{race_code}_{stamp}{extension}"


def scan_labels(directory) -> Tuple[List[AttributeLabel], List[Tuple[str, str]]]:
    """Parse every image filename under a directory, sorted by name.

    Returns (labels, skipped) where skipped holds (filename, reason) pairs.
    Malformed names are logged and skipped, never silently dropped.
    """
    directory = Path(directory)
    labels: List[AttributeLabel] = []
    skipped: List[Tuple[str, str]] = []
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        try:
            labels.append(parse_label(path.name))
        except MalformedFilenameError as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            skipped.append((path.name, str(exc)))
    return labels, skipped


@dataclass
class SplitManifest:
    """Assignment of image ids to train/val/test plus provenance metadata."""

    kind: str
    seed: int
    assignments: Dict[str, str]
    labels: Dict[str, AttributeLabel]
    metadata: Dict[str, object] = field(default_factory=dict)

    def partition(self, name: str) -> List[str]:
        if name not in PARTITIONS:
            raise KeyError(f"unknown partition {name!r}")
        return sorted(i for i, p in self.assignments.items() if p == name)

    @property
    def counts(self) -> Dict[str, int]:
        return {p: len(self.partition(p)) for p in PARTITIONS}


def _sorted_ids(labels: Sequence[AttributeLabel]) -> List[AttributeLabel]:
    by_id = sorted(labels, key=lambda l: l.image_id)
    if len({l.image_id for l in by_id}) != len(by_id):
        raise ValueError("duplicate image_id in labels")
    return by_id


def make_random_split(labels: Sequence[AttributeLabel], seed: int) -> SplitManifest:
    """Seeded 70/20/10 split: floor(0.7n) train, floor(0.2n) val, rest test.

    Ids are sorted before shuffling, so input order never matters. Fewer than
    10 labels cannot populate all three partitions: TooFewItemsError.
    """
    items = _sorted_ids(labels)
    n = len(items)
    if n < 10:
        raise TooFewItemsError(f"need at least 10 labels for a 70/20/10 split, got {n}")
    ids = [l.image_id for l in items]
    random.Random(seed).shuffle(ids)
    n_train = int(0.7 * n)
    n_val = int(0.2 * n)
    assignments = {}
    for i, image_id in enumerate(ids):
        if i < n_train:
            assignments[image_id] = "train"
        elif i < n_train + n_val:
            assignments[image_id] = "val"
        else:
            assignments[image_id] = "test"
    manifest = SplitManifest(
        kind="random",
        seed=seed,
        assignments=assignments,
        labels={l.image_id: l for l in items},
    )
    manifest.metadata = {"counts": manifest.counts, "n": n}
    return manifest


def make_uniform_split(
    labels: Sequence[AttributeLabel],
    seed: int,
    balance_on: Sequence[str] = ("sex", "race"),
    test_quota: int | None = None,
) -> SplitManifest:
    """Split whose test partition draws an equal quota from every stratum.

    Strata are the cross product of the observed values of each balance_on
    attribute. Default quota is floor(0.10 * n / n_strata); a stratum smaller
    than the quota contributes everything it has and the shortfall is recorded
    in metadata. The remainder is split train:val in the usual 7:2 proportion.
    """
    items = _sorted_ids(labels)
    n = len(items)
    if n < 10:
        raise TooFewItemsError(f"need at least 10 labels, got {n}")
    for attr in balance_on:
        if attr not in ("sex", "race", "age_bin"):
            raise ValueError(f"cannot balance on {attr!r}")

    def stratum_of(label: AttributeLabel) -> tuple:
        return tuple(str(label.attribute(a)) for a in balance_on)

    observed: Dict[tuple, List[str]] = {}
    for l in items:
        observed.setdefault(stratum_of(l), []).append(l.image_id)

    domains = {"sex": SEXES, "race": RACES, "age_bin": AGE_BIN_NAMES}
    full = [()]
    for attr in balance_on:
        present = [v for v in domains[attr] if any(l.attribute(attr) == v for l in items)]
        full = [s + (v,) for s in full for v in present]
    empty_strata = [s for s in full if s not in observed]

    strata = sorted(observed)
    quota = test_quota if test_quota is not None else int(0.10 * n / len(strata))
    quota = max(quota, 1)
    rng = random.Random(seed)
    assignments: Dict[str, str] = {}
    shortfall: Dict[str, int] = {}
    rest: List[str] = []
    for s in strata:
        ids = sorted(observed[s])
        rng.shuffle(ids)
        take = min(quota, len(ids))
        if take < quota:
            shortfall["/".join(s)] = quota - take
        for image_id in ids[:take]:
            assignments[image_id] = "test"
        rest.extend(ids[take:])
    rest.sort()
    rng.shuffle(rest)
    n_train = round(len(rest) * 7 / 9)
    for i, image_id in enumerate(rest):
        assignments[image_id] = "train" if i < n_train else "val"
    manifest = SplitManifest(
        kind="uniform",
        seed=seed,
        assignments=assignments,
        labels={l.image_id: l for l in items},
    )
    manifest.metadata = {
        "counts": manifest.counts,
        "n": n,
        "balance_on": list(balance_on),
        "quota": quota,
        "n_strata": len(strata),
        "shortfall": shortfall,
        "empty_strata": ["/".join(s) for s in empty_strata],
    }
    return manifest


def write_manifest(manifest: SplitManifest, path) -> None:
    """Write a manifest as deterministic TSV with '#'-prefixed metadata."""
    import json

    path = Path(path)
    lines = [
        "# maskprivacy split manifest v1",
        f"# kind: {manifest.kind}",
        f"# seed: {manifest.seed}",
        f"# metadata: {json.dumps(manifest.metadata, sort_keys=True)}",
        "image_id\tpartition\tage\tsex\trace\tage_bin",
    ]
    for image_id in sorted(manifest.assignments):
        label = manifest.labels[image_id]
        lines.append(
            f"{image_id}\t{manifest.assignments[image_id]}\t{label.age_years}"
            f"\t{label.sex}\t{label.race}\t{label.age_bin}"
        )
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path) -> SplitManifest:
    """Inverse of write_manifest."""
    import json

    path = Path(path)
    kind, seed, metadata = "", 0, {}
    assignments: Dict[str, str] = {}
    labels: Dict[str, AttributeLabel] = {}
    header_seen = False
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("kind:"):
                kind = body.split(":", 1)[1].strip()
            elif body.startswith("seed:"):
                seed = int(body.split(":", 1)[1].strip())
            elif body.startswith("metadata:"):
                metadata = json.loads(body.split(":", 1)[1].strip())
            continue
        if not header_seen:
            header_seen = True  # column header row
            continue
        image_id, part, age, sex, race, _bin = line.split("\t")
        assignments[image_id] = part
        labels[image_id] = AttributeLabel(image_id, int(age), sex, race)
    return SplitManifest(kind=kind, seed=seed, assignments=assignments,
                         labels=labels, metadata=metadata)


def labels_for_partition(manifest: SplitManifest, name: str) -> List[AttributeLabel]:
    return [manifest.labels[i] for i in manifest.partition(name)]
