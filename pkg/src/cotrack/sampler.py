"""Per-frame candidate generation: local Gaussian samples plus distant
global-background negatives."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import LABEL_NEG, LABELED_BY_FORCED, Candidate, Rect, TargetState

logger = logging.getLogger("cotrack.sampler")

MIN_EXTENT = 2.0  # sampled boxes never collapse below this many pixels
REJECTION_ATTEMPT_FACTOR = 100


@dataclass(frozen=True)
class SamplerConfig:
    """Search distribution around the previous target state.

    sigma_w / sigma_h of None means "5% of the previous box extent", resolved
    per frame; explicit values are absolute pixels.
    """

    n: int = 300
    n_prime: int = 30
    sigma_cx: float = 8.0
    sigma_cy: float = 8.0
    sigma_w: float | None = None
    sigma_h: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.n_prime < 0:
            raise ValueError("n_prime must be >= 0")
        for name in ("sigma_cx", "sigma_cy", "sigma_w", "sigma_h"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")

    def resolved_sigmas(self, prev: TargetState) -> tuple[float, float, float, float]:
        sw = self.sigma_w if self.sigma_w is not None else 0.05 * prev.w
        sh = self.sigma_h if self.sigma_h is not None else 0.05 * prev.h
        return (self.sigma_cx, self.sigma_cy, sw, sh)


@dataclass(frozen=True)
class RegionOfInterest:
    """Union of rectangles; always contains the previous target area."""

    rects: tuple[Rect, ...]

    def contains(self, x: float, y: float) -> bool:
        return any(r.contains(x, y) for r in self.rects)


def make_roi(prev: TargetState, motion_hint: list[Rect] | None,
             frame_bounds: Rect) -> RegionOfInterest:
    """Previous box dilated to three times its extent, united with any
    scenario-supplied motion hint, clipped to the frame."""
    dilated = Rect(
        prev.cx - 1.5 * prev.w, prev.cy - 1.5 * prev.h,
        prev.cx + 1.5 * prev.w, prev.cy + 1.5 * prev.h,
    ).clipped(frame_bounds)
    rects = [dilated]
    if motion_hint:
        rects.extend(r.clipped(frame_bounds) for r in motion_hint)
    return RegionOfInterest(rects=tuple(rects))


def draw_candidates(cfg: SamplerConfig, prev: TargetState, roi: RegionOfInterest,
                    rng: np.random.Generator) -> list[Candidate]:
    """n Gaussian perturbations of the previous state; out-of-ROI draws are
    pre-labeled background and never reach the classifiers."""
    sigmas = np.asarray(cfg.resolved_sigmas(prev))
    center = np.asarray([prev.cx, prev.cy, prev.w, prev.h])
    draws = center + rng.standard_normal((cfg.n, 4)) * sigmas
    draws[:, 2:] = np.maximum(draws[:, 2:], MIN_EXTENT)
    inside = np.zeros(cfg.n, dtype=bool)
    for r in roi.rects:
        inside |= ((draws[:, 0] >= r.x1) & (draws[:, 0] <= r.x2)
                   & (draws[:, 1] >= r.y1) & (draws[:, 1] <= r.y2))
    out = []
    for (cx, cy, w, h), in_roi in zip(draws, inside):
        cand = Candidate(state=TargetState(float(cx), float(cy), float(w), float(h)),
                         in_roi=bool(in_roi))
        if not in_roi:
            cand.set_label(LABEL_NEG, LABELED_BY_FORCED)
        out.append(cand)
    return out


def draw_global_background(cfg: SamplerConfig, prev: TargetState,
                           frame_bounds: Rect,
                           rng: np.random.Generator) -> list[Candidate]:
    """n' uniform draws whose centers lie farther than three positional
    sigmas from the previous center; all forced background."""
    if cfg.n_prime == 0:
        return []
    min_dist = 3.0 * max(cfg.sigma_cx, cfg.sigma_cy)
    accepted: list[Candidate] = []
    attempts = 0
    max_attempts = REJECTION_ATTEMPT_FACTOR * cfg.n_prime
    while len(accepted) < cfg.n_prime and attempts < max_attempts:
        attempts += 1
        x = rng.uniform(frame_bounds.x1, frame_bounds.x2)
        y = rng.uniform(frame_bounds.y1, frame_bounds.y2)
        if np.hypot(x - prev.cx, y - prev.cy) <= min_dist:
            continue
        state = TargetState(float(x), float(y), prev.w, prev.h)
        cand = Candidate(state=state, in_roi=False)
        cand.set_label(LABEL_NEG, LABELED_BY_FORCED)
        accepted.append(cand)
    if len(accepted) < cfg.n_prime:
        logger.warning(
            "global background sampling found %d/%d admissible draws "
            "(frame barely larger than the exclusion disc)",
            len(accepted), cfg.n_prime)
    return accepted
