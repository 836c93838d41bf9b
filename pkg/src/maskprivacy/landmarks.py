"""Face localization and 68-point landmark provision.

Landmark indexing follows the common 68-point annotation: 0..16 jaw line
(left to right), 17..26 brows, 27..30 nose bridge (27 top), 31..35 nose
floor, 36..47 eyes, 48..67 mouth. Providers are pluggable: the deterministic
template provider needs no model files and anchors tests; the external
adapter wraps any detector callable with the same contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .errors import LandmarkFailureError, NoFaceFoundError
from .geometry import clamp_points
from .validation import check_image, check_points

# Landmark indices used by mask construction.
JAW = tuple(range(0, 17))
NOSE_BRIDGE_TOP = 27
NOSE_BRIDGE_HIGH = 29   # apex for high coverage
NOSE_BRIDGE_LOW = 30    # apex for medium coverage
NOSE_FLOOR = tuple(range(31, 36))
MOUTH = tuple(range(48, 68))


@dataclass(frozen=True)
class Box:
    """Axis-aligned face box in pixel coordinates."""

    x: float
    y: float
    width: float
    height: float

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class LandmarkSet:
    """68 (x, y) points plus the provider kind that produced them."""

    points: np.ndarray
    source: str  # "heuristic" or "detector"

    def __post_init__(self):
        object.__setattr__(self, "points", check_points(self.points, 68))


# Fractional coordinates of the 68 template points inside a face box,
# (x, y) with y growing downward. Chin (index 8) pinned at (0.50, 0.98).
_JAW_X = [0.060, 0.075, 0.100, 0.140, 0.190, 0.255, 0.330, 0.410, 0.500,
          0.590, 0.670, 0.745, 0.810, 0.860, 0.900, 0.925, 0.940]
_JAW_Y = [0.420, 0.520, 0.610, 0.700, 0.780, 0.850, 0.905, 0.950, 0.980,
          0.950, 0.905, 0.850, 0.780, 0.700, 0.610, 0.520, 0.420]

LANDMARK_TEMPLATE = np.array(
    list(zip(_JAW_X, _JAW_Y))
    + [(0.16, 0.33), (0.23, 0.30), (0.31, 0.29), (0.39, 0.30), (0.46, 0.32)]   # 17-21
    + [(0.54, 0.32), (0.61, 0.30), (0.69, 0.29), (0.77, 0.30), (0.84, 0.33)]   # 22-26
    + [(0.50, 0.40), (0.50, 0.47), (0.50, 0.54), (0.50, 0.60)]                 # 27-30
    + [(0.42, 0.660), (0.46, 0.675), (0.50, 0.680), (0.54, 0.675), (0.58, 0.660)]
    + [(0.22, 0.41), (0.27, 0.39), (0.33, 0.39), (0.37, 0.41), (0.33, 0.43), (0.27, 0.43)]
    + [(0.63, 0.41), (0.67, 0.39), (0.73, 0.39), (0.78, 0.41), (0.73, 0.43), (0.67, 0.43)]
    + [(0.35, 0.790), (0.40, 0.760), (0.46, 0.745), (0.50, 0.750), (0.54, 0.745),
       (0.60, 0.760), (0.65, 0.790), (0.60, 0.830), (0.54, 0.855), (0.50, 0.860),
       (0.46, 0.855), (0.40, 0.830)]                                           # 48-59
    + [(0.39, 0.790), (0.46, 0.775), (0.50, 0.780), (0.54, 0.775), (0.61, 0.790),
       (0.54, 0.815), (0.50, 0.820), (0.46, 0.815)],                           # 60-67
    dtype=float,
)
assert LANDMARK_TEMPLATE.shape == (68, 2)


def select_primary_box(boxes: List[Box]) -> Box:
    """Pick the largest-area box; deterministic tie-break by (y, x)."""
    if not boxes:
        raise NoFaceFoundError("no candidate boxes")
    return max(boxes, key=lambda b: (b.area, -b.y, -b.x))


class FaceLocator:
    """Locate the primary face box in an RGB image."""

    thread_safe = True

    def locate(self, image) -> Box:
        raise NotImplementedError


class VarianceFaceLocator(FaceLocator):
    """Model-free locator for aligned face crops.

    Assumes the image is already a face-centered crop (the usual case for
    attribute corpora) and returns the full frame inset by a small margin.
    A nearly constant image has no face to find: NoFaceFoundError.
    """

    thread_safe = True

    def __init__(self, margin: float = 0.02, min_std: float = 4.0):
        self.margin = float(margin)
        self.min_std = float(min_std)

    def locate(self, image) -> Box:
        arr = check_image(image)
        if float(arr.std()) < self.min_std:
            raise NoFaceFoundError(
                f"image variance {arr.std():.2f} below threshold {self.min_std}"
            )
        h, w = arr.shape[:2]
        mx, my = self.margin * w, self.margin * h
        return Box(x=mx, y=my, width=w - 2 * mx, height=h - 2 * my)


class CascadeFaceLocator(FaceLocator):
    """Haar-cascade face locator backed by OpenCV (optional dependency)."""

    thread_safe = False  # cv2 CascadeClassifier is not documented thread-safe

    def __init__(self, cascade_path: Optional[str] = None):
        import cv2  # deferred so the package works without OpenCV

        if not hasattr(cv2, "CascadeClassifier"):
            raise ImportError("this OpenCV build lacks CascadeClassifier")
        if cascade_path is None:
            cascade_path = cv2.data.haarcascades + "haarcascade_frontalface_default.xml"
        self._cv2 = cv2
        self._cascade = cv2.CascadeClassifier(cascade_path)
        if self._cascade.empty():
            raise ValueError(f"could not load cascade from {cascade_path}")

    def locate(self, image) -> Box:
        arr = check_image(image)
        gray = self._cv2.cvtColor(arr, self._cv2.COLOR_RGB2GRAY)
        raw = self._cascade.detectMultiScale(gray, scaleFactor=1.1, minNeighbors=4)
        boxes = [Box(float(x), float(y), float(w), float(h)) for x, y, w, h in raw]
        if not boxes:
            raise NoFaceFoundError("cascade found no face")
        return select_primary_box(boxes)


class LandmarkProvider:
    """Produce a LandmarkSet for a face box inside an image."""

    thread_safe = True

    def landmarks(self, image, box: Box) -> LandmarkSet:
        raise NotImplementedError


class TemplateLandmarkProvider(LandmarkProvider):
    """Deterministic landmarks from the fractional face template.

    Maps LANDMARK_TEMPLATE affinely into the box, then clamps to the image.
    Boxes thinner than 2 px in either dimension cannot carry a face:
    LandmarkFailureError.
    """

    thread_safe = True

    def landmarks(self, image, box: Box) -> LandmarkSet:
        arr = check_image(image)
        if box.width < 2 or box.height < 2:
            raise LandmarkFailureError(
                f"degenerate box {box.width:.1f}x{box.height:.1f}"
            )
        pts = LANDMARK_TEMPLATE.copy()
        pts[:, 0] = box.x + pts[:, 0] * box.width
        pts[:, 1] = box.y + pts[:, 1] * box.height
        h, w = arr.shape[:2]
        return LandmarkSet(points=clamp_points(pts, w, h), source="heuristic")


class ExternalLandmarkAdapter(LandmarkProvider):
    """Adapter for third-party detectors.

    fn(image, box) must return 68 (x, y) coordinates; anything else is
    reported as LandmarkFailureError so batch jobs can keep going.
    """

    thread_safe = False

    def __init__(self, fn: Callable, name: str = "external"):
        self.fn = fn
        self.name = name

    def landmarks(self, image, box: Box) -> LandmarkSet:
        arr = check_image(image)
        try:
            raw = self.fn(arr, box)
            pts = check_points(raw, 68)
        except Exception as exc:
            raise LandmarkFailureError(f"{self.name}: {exc}") from exc
        h, w = arr.shape[:2]
        return LandmarkSet(points=clamp_points(pts, w, h), source="detector")
