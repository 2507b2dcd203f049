"""Shared value types: bounding boxes, candidates, labeled sample sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Feature vectors are plain float64 numpy arrays of a fixed, per-run length.
DEFAULT_FEATURE_DIM = 20

LABEL_POS = 1
LABEL_NEG = -1

# Who assigned a candidate's label.
LABELED_BY_FAST = "fast"
LABELED_BY_ORACLE = "oracle"
LABELED_BY_FORCED = "forced-background"


def label_sign(x: float) -> int:
    """Sign with the background-biased convention: sign(0) -> -1."""
    return LABEL_POS if x > 0 else LABEL_NEG


def as_feature(values, dim: int | None = None) -> np.ndarray:
    """Validate and convert raw values into a feature vector.

    Raises ValueError on non-finite entries or a length mismatch with `dim`.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"feature vector must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"feature vector has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature vector contains non-finite entries")
    return arr


@dataclass(frozen=True, slots=True)
class Rect:
    """Axis-aligned rectangle in corner coordinates (x1, y1) .. (x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    def contains(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2

    def clipped(self, bounds: "Rect") -> "Rect":
        return Rect(
            max(self.x1, bounds.x1),
            max(self.y1, bounds.y1),
            min(self.x2, bounds.x2),
            min(self.y2, bounds.y2),
        )


@dataclass(frozen=True, slots=True)
class TargetState:
    """Bounding box as center position plus extent, in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)
                and math.isfinite(self.w) and math.isfinite(self.h)):
            raise ValueError(f"TargetState fields must be finite: {self!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"TargetState extent must be positive, got w={self.w}, h={self.h}")

    def rect(self) -> Rect:
        return Rect(self.cx - self.w / 2, self.cy - self.h / 2,
                    self.cx + self.w / 2, self.cy + self.h / 2)

    def as_corner_tuple(self) -> tuple[float, float, float, float]:
        """(x, y, w, h) with (x, y) the top-left corner — the file convention."""
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.w, self.h)

    @staticmethod
    def from_corner(x: float, y: float, w: float, h: float) -> "TargetState":
        return TargetState(x + w / 2, y + h / 2, w, h)


def iou(a: TargetState, b: TargetState) -> float:
    """Intersection-over-union of two boxes; symmetric, 0 for disjoint boxes."""
    ra, rb = a.rect(), b.rect()
    iw = min(ra.x2, rb.x2) - max(ra.x1, rb.x1)
    ih = min(ra.y2, rb.y2) - max(ra.y1, rb.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = ra.area + rb.area - inter
    return inter / union


@dataclass(slots=True)
class Candidate:
    """One sampled state, progressively annotated by the labeling pipeline.

    `score` is the fast classifier's confidence in [-1, 1]; `weight` is
    score * 1(label == +1), the localization weight.
    """

    state: TargetState
    in_roi: bool = True
    feature: np.ndarray | None = None
    score: float | None = None
    label: int | None = None
    weight: float | None = None
    labeled_by: str | None = None

    def set_label(self, label: int, labeled_by: str) -> None:
        if label not in (LABEL_POS, LABEL_NEG):
            raise ValueError(f"label must be +1 or -1, got {label!r}")
        self.label = label
        self.labeled_by = labeled_by
        s = self.score if self.score is not None else float(label)
        self.weight = s if label == LABEL_POS else 0.0


@dataclass
class LabeledSet:
    """Ordered collection of (feature, label, frame_index) training items."""

    items: list[tuple[np.ndarray, int, int]] = field(default_factory=list)

    def add(self, feature: np.ndarray, label: int, frame_index: int) -> None:
        self.items.append((feature, int(label), int(frame_index)))

    def extend(self, other: "LabeledSet") -> None:
        self.items.extend(other.items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)
