"""Axis-aligned bounding boxes, overlap measures, Gaussian embeddings, and
crop-window coordinate transforms.

Boxes are stored in center-size form (cx, cy, w, h) in pixel units; the
corner form (x0, y0, x1, y1) is derived on demand so the two views cannot
drift apart. All functions here are pure and operate on immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in center-size form. Zero or negative extents are
    rejected at construction: every downstream formula divides by box area
    or size."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"box field {name} must be finite, got {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class GaussianBox:
    """2D Gaussian embedding of a box: mean at the box center, diagonal
    covariance diag(var_x, var_y)."""

    mean: tuple[float, float]
    var_x: float
    var_y: float

    def __post_init__(self):
        if self.var_x < 0 or self.var_y < 0:
            raise ValueError(f"variances must be nonnegative, got ({self.var_x}, {self.var_y})")


@dataclass(frozen=True)
class CropWindow:
    """Integer rectangular sub-region of an image, with the image dimensions
    it was cut from."""

    x0: int
    y0: int
    x1: int
    y1: int
    image_w: int
    image_h: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 <= self.image_w):
            raise ValueError(f"window x range [{self.x0}, {self.x1}) invalid for image width {self.image_w}")
        if not (0 <= self.y0 < self.y1 <= self.image_h):
            raise ValueError(f"window y range [{self.y0}, {self.y1}) invalid for image height {self.image_h}")

    @property
    def w(self) -> int:
        return self.x1 - self.x0

    @property
    def h(self) -> int:
        return self.y1 - self.y0

    @classmethod
    def whole_image(cls, image_w: int, image_h: int) -> "CropWindow":
        return cls(0, 0, image_w, image_h, image_w, image_h)


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x1, b.x1)
    iy1 = min(a.y1, b.y1)
    iw = ix1 - ix0
    ih = iy1 - iy0
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def enclosing_box(a: Box, b: Box) -> Box:
    """Smallest axis-aligned box containing both inputs."""
    return Box.from_corners(
        min(a.x0, b.x0), min(a.y0, b.y0), max(a.x1, b.x1), max(a.y1, b.y1)
    )


def to_gaussian(b: Box) -> GaussianBox:
    """Embed a box as a 2D Gaussian with mean (cx, cy) and covariance
    diag((w/2)^2, (h/2)^2)."""
    return GaussianBox(mean=(b.cx, b.cy), var_x=(b.w / 2) ** 2, var_y=(b.h / 2) ** 2)


def image_to_window(b: Box, win: CropWindow) -> tuple[Box, float] | None:
    """Express a full-image box in window-local coordinates, clipped to the
    window.

    Returns (local_box, visible_fraction) where visible_fraction is the
    clipped area divided by the full box area, or None when the box does
    not intersect the window.
    """
    ix0 = max(b.x0, win.x0)
    iy0 = max(b.y0, win.y0)
    ix1 = min(b.x1, win.x1)
    iy1 = min(b.y1, win.y1)
    if ix1 <= ix0 or iy1 <= iy0:
        return None
    local = Box.from_corners(ix0 - win.x0, iy0 - win.y0, ix1 - win.x0, iy1 - win.y0)
    fraction = ((ix1 - ix0) * (iy1 - iy0)) / b.area
    return local, fraction


def window_to_image(b: Box, win: CropWindow, scale_x: float = 1.0, scale_y: float = 1.0) -> Box:
    """Map a window-local box back to full-image coordinates.

    scale_x/scale_y convert resized-crop pixels into crop pixels (crop size
    divided by resized size); use 1.0 when the crop was not resized. The
    result is clamped to image bounds; a box fully outside the image is an
    error.
    """
    if scale_x <= 0 or scale_y <= 0:
        raise ValueError(f"scale factors must be positive, got ({scale_x}, {scale_y})")
    x0 = win.x0 + b.x0 * scale_x
    y0 = win.y0 + b.y0 * scale_y
    x1 = win.x0 + b.x1 * scale_x
    y1 = win.y0 + b.y1 * scale_y
    cx0 = min(max(x0, 0.0), float(win.image_w))
    cy0 = min(max(y0, 0.0), float(win.image_h))
    cx1 = min(max(x1, 0.0), float(win.image_w))
    cy1 = min(max(y1, 0.0), float(win.image_h))
    if cx1 <= cx0 or cy1 <= cy0:
        raise ValueError(
            f"box ({x0}, {y0}, {x1}, {y1}) lies fully outside the "
            f"{win.image_w}x{win.image_h} image"
        )
    return Box.from_corners(cx0, cy0, cx1, cy1)
