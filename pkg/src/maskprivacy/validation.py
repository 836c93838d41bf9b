"""Small check_* helpers in the spirit of sklearn.utils.validation."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


def check_image(image) -> np.ndarray:
    """Validate an RGB uint8 image array and return it as HxWx3 uint8."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image has zero extent")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and arr.max(initial=0.0) <= 1.0:
            arr = (arr * 255.0).round()
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return arr


def check_points(points, n: int | None = None) -> np.ndarray:
    """Validate an (N, 2) float coordinate array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (N, 2) points, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"expected {n} points, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError("points contain NaN or inf")
    return arr


def check_sample(values, name: str = "sample") -> np.ndarray:
    """Validate a 1-D numeric sample."""
    arr = np.asarray(values, dtype=float).ravel()
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or inf")
    return arr


def check_probability(value: float, name: str = "value") -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def check_choice(value: str, allowed: Iterable[str], name: str) -> str:
    allowed = tuple(allowed)
    if value not in allowed:
        raise ValueError(f"{name} must be one of {allowed}, got {value!r}")
    return value


def check_color(color: Sequence[int]) -> tuple:
    color = tuple(int(c) for c in color)
    if len(color) != 3 or any(not 0 <= c <= 255 for c in color):
        raise ValueError(f"color must be three 0..255 ints, got {color}")
    return color


def check_opacity(opacity: float) -> float:
    opacity = float(opacity)
    if not 0.0 < opacity <= 1.0:
        raise ValueError(f"opacity must lie in (0, 1], got {opacity}")
    return opacity
