"""Deterministic synthetic face fixtures.

Cartoon-style face crops whose attribute cues live in the UPPER half of the
face (eye-band tint for sex, skin and background palette for race, forehead
shading, wrinkle lines and hair graying for age), so attribute models can
still learn each task after the lower face is masked. Purely procedural:
no model weights, byte-deterministic for a given seed.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .datasets import AGE_BINS, RACES, SEXES, AttributeLabel
from .privacy import PRIVACY_ATTRIBUTES, SurveyResponse

# (skin, background) RGB per race; backgrounds stay visible after masking.
_PALETTES = {
    "white": ((232, 200, 180), (210, 225, 240)),
    "black": ((110, 75, 55), (240, 230, 210)),
    "asian": ((235, 210, 160), (225, 240, 215)),
    "indian": ((180, 130, 95), (245, 220, 235)),
    "other": ((200, 160, 130), (235, 235, 200)),
}
_EYE_TINT = {"male": (70, 90, 160), "female": (185, 95, 150)}
_MAX_AGE = 116


def _ellipse_mask(size: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    return ((xs / size - cx) / rx) ** 2 + ((ys / size - cy) / ry) ** 2 <= 1.0


def generate_face(
    age: int, sex: str, race: str, size: int = 200,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Render one synthetic face crop as an HxWx3 uint8 array."""
    if sex not in SEXES or race not in _PALETTES:
        raise ValueError(f"unknown sex/race: {sex!r}/{race!r}")
    rng = rng or np.random.default_rng(0)
    skin, background = _PALETTES[race]
    img = np.ones((size, size, 3), dtype=float) * np.array(background, dtype=float)

    head = _ellipse_mask(size, 0.5, 0.55, 0.38, 0.45)
    img[head] = skin

    # Hair: top slice of the head, graying linearly with age.
    ys = np.mgrid[0:size, 0:size][0]
    hair = head & (ys < 0.32 * size)
    gray_frac = min(age, 90) / 90.0
    hair_color = (1 - gray_frac) * np.array((60, 45, 35), dtype=float) \
        + gray_frac * np.array((205, 205, 205), dtype=float)
    img[hair] = hair_color

    # Forehead brightness ramp: younger faces get a brighter band.
    forehead = head & (ys >= 0.32 * size) & (ys < 0.40 * size)
    img[forehead] = np.clip(
        np.array(skin, dtype=float) * (1.15 - 0.35 * age / _MAX_AGE), 0, 255
    )
    # Wrinkles: one thin line per ~15 years across the forehead.
    for k in range(min(age // 15, 5)):
        y0 = int((0.33 + 0.013 * k) * size)
        xs0, xs1 = int(0.33 * size), int(0.67 * size)
        img[y0:y0 + max(size // 200, 1), xs0:xs1] *= 0.55

    # Eye band tint: the sex cue, fully visible above any mask.
    band = head & (ys >= 0.40 * size) & (ys < 0.50 * size)
    tint = np.array(_EYE_TINT[sex], dtype=float)
    img[band] = 0.55 * img[band] + 0.45 * tint

    # Eyes and brows.
    for cx in (0.36, 0.64):
        img[_ellipse_mask(size, cx, 0.45, 0.055, 0.030)] = (245, 245, 245)
        img[_ellipse_mask(size, cx, 0.45, 0.022, 0.022)] = (35, 30, 30)
        brow_h = 0.016 if sex == "male" else 0.007
        brow = _ellipse_mask(size, cx, 0.385, 0.07, brow_h)
        img[brow] = (40, 32, 28)

    # Lower face: nose and mouth; these regions get covered by masks.
    img[_ellipse_mask(size, 0.5, 0.62, 0.035, 0.075)] = np.array(skin) * 0.82
    img[_ellipse_mask(size, 0.5, 0.78, 0.12, 0.030)] = (150, 70, 70)

    noise = rng.normal(0.0, 6.0, img.shape)
    return np.clip(img + noise, 0, 255).astype(np.uint8)


def generate_dataset(
    directory, count: int, seed: int = 0, size: int = 200, extension: str = ".png",
) -> List[AttributeLabel]:
    """Write `count` synthetic faces named age_gender_race_stamp, return labels.

    Attributes are sampled uniformly (age uniform inside a uniformly chosen
    bin, capped at 90) so every sex/race/age_bin level has support.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels: List[AttributeLabel] = []
    for i in range(count):
        b = AGE_BINS[int(rng.integers(0, len(AGE_BINS)))]
        upper = b.upper if b.upper is not None else 90
        age = int(rng.integers(b.lower, upper + 1))
        sex = SEXES[int(rng.integers(0, 2))]
        race = RACES[int(rng.integers(0, 5))]
        face = generate_face(age, sex, race, size=size, rng=rng)
        name = f"{age}_{SEXES.index(sex)}_{RACES.index(race)}_{i:06d}{extension}"
        Image.fromarray(face).save(directory / name)
        labels.append(AttributeLabel(Path(name).stem, age, sex, race))
    return labels


# Respondent blocks whose rank tallies reproduce the reference importance
# weights as closely as any integer composition of 60 can.
_SURVEY_BLOCKS: Sequence[Tuple[int, dict]] = (
    (15, {"age": 1, "race": 2, "sex": 3}),
    (23, {"age": 2, "race": 1, "sex": 3}),
    (22, {"age": 2, "race": 3, "sex": 1}),
)


def generate_survey(n: int = 60, seed: int = 0) -> List[SurveyResponse]:
    """Synthesize survey responses.

    n == 60 uses a fixed composition matching the reference importance
    weights; other sizes draw random ranking permutations.
    """
    rng = np.random.default_rng(seed)
    responses: List[SurveyResponse] = []

    def make(idx: int, ranking: dict) -> SurveyResponse:
        return SurveyResponse(
            respondent_id=f"r{idx:03d}",
            ranking=dict(ranking),
            likert={
                "face_identifiable": int(rng.integers(4, 6)),
                "masked_identifiable": int(rng.integers(2, 4)),
            },
            yes_no={"mask_protects": bool(rng.random() < 0.75)},
        )

    if n == 60:
        idx = 0
        for count, ranking in _SURVEY_BLOCKS:
            for _ in range(count):
                responses.append(make(idx, ranking))
                idx += 1
        return responses
    for idx in range(n):
        perm = list(rng.permutation(len(PRIVACY_ATTRIBUTES)) + 1)
        ranking = {a: int(p) for a, p in zip(PRIVACY_ATTRIBUTES, perm)}
        responses.append(make(idx, ranking))
    return responses
