"""Polygon predicates and rasterization.

The containment predicate and the rasterizer share one implementation (the
rasterizer evaluates the predicate at pixel centers), so a pixel is painted
exactly when its center point tests inside. Keep it that way: the masking
guarantees lean on this equivalence.
"""

from __future__ import annotations

import numpy as np

from .validation import check_points


def polygon_area(polygon) -> float:
    """Signed area of a simple polygon via the shoelace formula.

    Parameters
    ----------
    polygon : array-like of shape (V, 2)
        Vertices in order; closure is implicit.

    Returns
    -------
    float
        Positive for counter-clockwise orientation in a y-up frame. In image
        coordinates (y grows downward) clockwise-on-screen comes out positive;
        take abs() when only magnitude matters.
    """
    poly = check_points(polygon)
    x, y = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    return float(0.5 * np.sum(x * y2 - x2 * y))


def points_in_polygon(points, polygon) -> np.ndarray:
    """Even-odd (crossing number) point-in-polygon test.

    Parameters
    ----------
    points : array-like of shape (N, 2)
    polygon : array-like of shape (V, 2)
        Simple polygon, V >= 3, implicit closure.

    Returns
    -------
    numpy.ndarray of bool, shape (N,)

    Notes
    -----
    A ray is cast toward +x from each point; half-open edge intervals
    (y1 <= y < y2 after orientation) make shared vertices count once.
    Points exactly on an edge may land on either side; callers that care
    keep test points away from boundaries.
    """
    pts = check_points(points)
    poly = check_points(polygon)
    if poly.shape[0] < 3:
        raise ValueError("polygon needs at least 3 vertices")
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    x1, y1 = poly[:, 0][None, :], poly[:, 1][None, :]
    x2 = np.roll(poly[:, 0], -1)[None, :]
    y2 = np.roll(poly[:, 1], -1)[None, :]
    straddles = (y1 > py) != (y2 > py)
    # Edge-x at the ray height; guarded divide, masked-out where not straddling.
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    hits = straddles & (px < xcross)
    return (hits.sum(axis=1) % 2).astype(bool)


def polygon_raster_mask(shape: tuple, polygon) -> np.ndarray:
    """Boolean HxW mask of pixels whose center lies inside the polygon.

    Pixel (row r, col c) has center (x=c, y=r), matching landmark pixel
    coordinates. Uses points_in_polygon, so raster and predicate agree.
    """
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise ValueError(f"bad raster shape {(h, w)}")
    poly = check_points(polygon)
    # Restrict the predicate to the polygon's bounding box rows/cols.
    c0 = max(int(np.floor(poly[:, 0].min())), 0)
    c1 = min(int(np.ceil(poly[:, 0].max())) + 1, w)
    r0 = max(int(np.floor(poly[:, 1].min())), 0)
    r1 = min(int(np.ceil(poly[:, 1].max())) + 1, h)
    mask = np.zeros((h, w), dtype=bool)
    if c0 >= c1 or r0 >= r1:
        return mask
    cols, rows = np.meshgrid(np.arange(c0, c1), np.arange(r0, r1))
    pts = np.column_stack([cols.ravel(), rows.ravel()]).astype(float)
    inside = points_in_polygon(pts, poly)
    mask[r0:r1, c0:c1] = inside.reshape(r1 - r0, c1 - c0)
    return mask


def clamp_points(points, width: int, height: int) -> np.ndarray:
    """Clamp coordinates into [0, width-1] x [0, height-1]."""
    pts = check_points(points).copy()
    pts[:, 0] = np.clip(pts[:, 0], 0.0, float(width - 1))
    pts[:, 1] = np.clip(pts[:, 1], 0.0, float(height - 1))
    return pts
