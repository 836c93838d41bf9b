"""Synthetic surgical-mask rendering over landmark polygons.

The mask polygon runs along jaw landmarks 2..14 and closes over the nose
bridge: "high" coverage tops out at bridge point 29, "medium" at point 30.
A "pointed" top edge is the single apex vertex; a "round" top edge samples a
parabolic arc through (jaw14, apex, jaw2). Pixels whose centers fall inside
the polygon are alpha-blended toward the mask color; every other pixel is
left bit-identical.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (
    DegenerateGeometryError,
    LandmarkFailureError,
    NoFaceFoundError,
)
from .geometry import polygon_area, polygon_raster_mask
from .landmarks import (
    NOSE_BRIDGE_HIGH,
    NOSE_BRIDGE_LOW,
    FaceLocator,
    LandmarkProvider,
    LandmarkSet,
    TemplateLandmarkProvider,
    VarianceFaceLocator,
)
from .validation import check_choice, check_color, check_image, check_opacity

logger = logging.getLogger(__name__)

COVERAGES = ("medium", "high")
SHAPES = ("pointed", "round")
DEFAULT_COLOR = (178, 190, 181)  # muted surgical tone
ROUND_ARC_SAMPLES = 9  # interior points on the parabolic top edge

# Jaw chain used for the lower mask boundary (ear-adjacent points excluded).
_JAW_START, _JAW_END = 2, 14


@dataclass(frozen=True)
class MaskSpec:
    """Rendering parameters for one synthetic mask."""

    coverage: str = "high"
    shape: str = "pointed"
    color: Tuple[int, int, int] = DEFAULT_COLOR
    opacity: float = 1.0

    def __post_init__(self):
        check_choice(self.coverage, COVERAGES, "coverage")
        check_choice(self.shape, SHAPES, "shape")
        object.__setattr__(self, "color", check_color(self.color))
        object.__setattr__(self, "opacity", check_opacity(self.opacity))


@dataclass
class MaskResult:
    """Outcome of masking one image in a batch run."""

    image_id: str
    status: str  # "ok", "no_face", "landmark_failure", "degenerate_geometry", "io_error"
    reason: str = ""
    output_path: Optional[str] = None


@dataclass
class BatchSummary:
    results: List[MaskResult] = field(default_factory=list)

    @property
    def ok_count(self) -> int:
        return sum(1 for r in self.results if r.status == "ok")

    @property
    def failure_count(self) -> int:
        return len(self.results) - self.ok_count

    def to_dict(self) -> dict:
        statuses: dict = {}
        for r in self.results:
            statuses[r.status] = statuses.get(r.status, 0) + 1
        return {
            "total": len(self.results),
            "ok": self.ok_count,
            "failed": self.failure_count,
            "by_status": statuses,
        }


def build_mask_polygon(landmarks: LandmarkSet, spec: MaskSpec) -> np.ndarray:
    """Mask polygon vertices (V, 2) for a landmark set.

    Vertices run left jaw -> chin -> right jaw, then back across the top
    edge right-to-left. Raises DegenerateGeometryError when the jaw chain is
    (near-)collinear: normalized area below 1e-6 of the squared jaw span.
    """
    pts = landmarks.points
    jaw = pts[_JAW_START:_JAW_END + 1]
    apex_idx = NOSE_BRIDGE_HIGH if spec.coverage == "high" else NOSE_BRIDGE_LOW
    apex = pts[apex_idx]

    span = float(np.linalg.norm(jaw[-1] - jaw[0]))
    if span <= 0.0:
        raise DegenerateGeometryError("jaw endpoints coincide")
    chain = np.vstack([jaw, apex])
    if abs(polygon_area(chain)) / span**2 < 1e-6:
        raise DegenerateGeometryError("landmarks are collinear within tolerance")

    if spec.shape == "pointed":
        top = apex[None, :]
    else:
        top = _parabola_arc(jaw[-1], apex, jaw[0])
    return np.vstack([jaw, top])


def _parabola_arc(right: np.ndarray, apex: np.ndarray, left: np.ndarray) -> np.ndarray:
    """Sample y = apex_y + a*(x - apex_x)^2 from right jaw back to left jaw.

    The coefficient is fit to the right endpoint; with a roughly symmetric
    jaw the arc passes near the left endpoint too. Falls back to the apex
    vertex when the jaw has no horizontal extent at the apex.
    """
    dx = right[0] - apex[0]
    if abs(dx) < 1e-9:
        return apex[None, :]
    a = (right[1] - apex[1]) / dx**2
    xs = np.linspace(right[0], left[0], ROUND_ARC_SAMPLES + 2)[1:-1]
    ys = apex[1] + a * (xs - apex[0]) ** 2
    return np.column_stack([xs, ys])


def apply_mask(image, polygon, spec: MaskSpec) -> np.ndarray:
    """Blend the mask color over the polygon interior.

    out = round((1 - opacity) * pixel + opacity * color) on covered pixels;
    uncovered pixels are returned bit-identical (the input is never written).
    """
    arr = check_image(image)
    mask = polygon_raster_mask(arr.shape[:2], polygon)
    out = arr.copy()
    if not mask.any():
        return out
    color = np.array(spec.color, dtype=float)
    blended = (1.0 - spec.opacity) * arr[mask].astype(float) + spec.opacity * color
    out[mask] = np.rint(blended).astype(np.uint8)
    return out


def mask_image(
    image,
    spec: MaskSpec,
    locator: Optional[FaceLocator] = None,
    provider: Optional[LandmarkProvider] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Locate, landmark, and mask a single image.

    Returns (masked_image, polygon). Propagates NoFaceFoundError,
    LandmarkFailureError, DegenerateGeometryError.
    """
    arr = check_image(image)
    locator = locator or VarianceFaceLocator()
    provider = provider or TemplateLandmarkProvider()
    box = locator.locate(arr)
    lms = provider.landmarks(arr, box)
    polygon = build_mask_polygon(lms, spec)
    return apply_mask(arr, polygon, spec), polygon


class MaskSynthesizer(BaseEstimator, TransformerMixin):
    """Transformer that renders synthetic masks onto face images.

    Stateless (fit is a no-op kept for pipeline compatibility); parameters
    mirror MaskSpec plus pluggable locator/provider instances.
    """

    def __init__(
        self,
        coverage: str = "high",
        shape: str = "pointed",
        color: Tuple[int, int, int] = DEFAULT_COLOR,
        opacity: float = 1.0,
        locator: Optional[FaceLocator] = None,
        provider: Optional[LandmarkProvider] = None,
    ):
        self.coverage = coverage
        self.shape = shape
        self.color = color
        self.opacity = opacity
        self.locator = locator
        self.provider = provider

    def _spec(self) -> MaskSpec:
        return MaskSpec(self.coverage, self.shape, tuple(self.color), self.opacity)

    def fit(self, X=None, y=None):
        self._spec()  # validate parameters eagerly
        return self

    def transform(self, X) -> List[np.ndarray]:
        """Mask a sequence of images, returning new arrays."""
        spec = self._spec()
        return [
            mask_image(img, spec, self.locator, self.provider)[0] for img in X
        ]

    def mask_with_polygon(self, image) -> Tuple[np.ndarray, np.ndarray]:
        return mask_image(image, self._spec(), self.locator, self.provider)


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _process_one(
    path: Path,
    out_dir: Path,
    spec: MaskSpec,
    locator: FaceLocator,
    provider: LandmarkProvider,
    lock: Optional[threading.Lock],
) -> MaskResult:
    image_id = path.stem
    try:
        arr = _load_rgb(path)
    except Exception as exc:
        return MaskResult(image_id, "io_error", f"unreadable input: {exc}")
    try:
        if lock is not None:
            with lock:
                box = locator.locate(arr)
                lms = provider.landmarks(arr, box)
        else:
            box = locator.locate(arr)
            lms = provider.landmarks(arr, box)
        polygon = build_mask_polygon(lms, spec)
        masked = apply_mask(arr, polygon, spec)
    except NoFaceFoundError as exc:
        return MaskResult(image_id, "no_face", str(exc))
    except LandmarkFailureError as exc:
        return MaskResult(image_id, "landmark_failure", str(exc))
    except DegenerateGeometryError as exc:
        return MaskResult(image_id, "degenerate_geometry", str(exc))
    out_path = out_dir / path.name
    Image.fromarray(masked).save(out_path)
    return MaskResult(image_id, "ok", output_path=str(out_path))


def mask_dataset(
    input_dir,
    output_dir,
    spec: MaskSpec = MaskSpec(),
    locator: Optional[FaceLocator] = None,
    provider: Optional[LandmarkProvider] = None,
    parallelism: int = 1,
) -> BatchSummary:
    """Mask every image under input_dir into output_dir.

    Per-image failures are recorded in the summary and never abort the batch;
    only an unusable output directory raises. Writes manifest.tsv (one row
    per input) and summary.json alongside the images. Inputs are processed
    in sorted order and results keep that order regardless of parallelism.
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    probe = output_dir / ".write_probe"
    probe.write_bytes(b"")  # fail fast if output_dir is unusable
    probe.unlink()

    locator = locator or VarianceFaceLocator()
    provider = provider or TemplateLandmarkProvider()
    lock = None
    if parallelism > 1 and not (
        getattr(locator, "thread_safe", False) and getattr(provider, "thread_safe", False)
    ):
        lock = threading.Lock()

    paths = sorted(
        p for p in input_dir.iterdir()
        if p.is_file() and p.suffix.lower() in (".jpg", ".jpeg", ".png")
    )
    summary = BatchSummary()
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [
                pool.submit(_process_one, p, output_dir, spec, locator, provider, lock)
                for p in paths
            ]
            summary.results = [f.result() for f in futures]
    else:
        summary.results = [
            _process_one(p, output_dir, spec, locator, provider, None) for p in paths
        ]

    for r in summary.results:
        if r.status != "ok":
            logger.warning("masking %s failed (%s): %s", r.image_id, r.status, r.reason)

    manifest_lines = ["image_id\tstatus\treason\toutput"]
    for r in summary.results:
        manifest_lines.append(
            f"{r.image_id}\t{r.status}\t{r.reason}\t{r.output_path or ''}"
        )
    (output_dir / "manifest.tsv").write_text("\n".join(manifest_lines) + "\n")
    (output_dir / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
    return summary
