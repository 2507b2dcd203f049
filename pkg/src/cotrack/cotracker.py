"""The co-tracking loop: score, route uncertain samples to the oracle,
localize by importance sampling, and keep both classifiers trained.

Per frame, in order: build the ROI, draw local and global candidates,
extract features, label (fast classifier scores everything in the ROI; the
uncertainty unit sends the least confident samples to the oracle), stage
all labeled data for the oracle's periodic retrain, localize by the
score-weighted mean of positive candidates with occlusion gating, and
finally update the fast store with the oracle-labeled set followed by a
timer tick and prune.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (LABEL_POS, LABELED_BY_FAST, LABELED_BY_FORCED,
                   LABELED_BY_ORACLE, Candidate, LabeledSet, TargetState,
                   label_sign)
from .features import FeatureProjector, pca_fit, project
from .knn import KnnStore
from .oracle import OracleBase
from .sampler import (MIN_EXTENT, SamplerConfig, draw_candidates,
                      draw_global_background, make_roi)

logger = logging.getLogger("cotrack.tracker")


@dataclass(frozen=True)
class VariantSpec:
    name: str
    uses_knn: bool
    uses_oracle: bool
    budgeting: bool


VARIANTS: dict[str, VariantSpec] = {
    "ust": VariantSpec("ust", uses_knn=True, uses_oracle=True, budgeting=True),
    "knn-only": VariantSpec("knn-only", uses_knn=True, uses_oracle=False, budgeting=False),
    "knn-budgeted-only": VariantSpec("knn-budgeted-only", uses_knn=True,
                                     uses_oracle=False, budgeting=True),
    "oracle-only": VariantSpec("oracle-only", uses_knn=False, uses_oracle=True,
                               budgeting=False),
}


@dataclass(frozen=True)
class TrackerConfig:
    """All tunables. The band (tau_l, tau_u) must straddle zero; m bounds the
    forced per-frame oracle queries; delta is the oracle retrain period."""

    k: int = 10
    m: int = 5
    tau_l: float = -0.4
    tau_u: float = 0.4
    tau_p: int = 3
    tau_a: float = 1.0
    delta: int = 10
    alpha0: int = 10
    feature_dim: int = 20
    budget_cap: int | None = None
    histogram_bins: int = 4
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.tau_l < 0.0 < self.tau_u:
            raise ValueError("uncertainty band must satisfy tau_l < 0 < tau_u")
        if self.m < 0 or self.m > self.sampler.n:
            raise ValueError("m must lie in [0, n]")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.tau_p < 0:
            raise ValueError("tau_p must be >= 0")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be >= 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    @staticmethod
    def from_mapping(data: dict) -> "TrackerConfig":
        """Build a config from a (possibly nested) plain mapping, e.g. parsed
        YAML. Unknown keys raise."""
        data = dict(data or {})
        sampler_data = data.pop("sampler", {}) or {}
        sampler_fields = set(SamplerConfig.__dataclass_fields__)
        tracker_fields = set(TrackerConfig.__dataclass_fields__) - {"sampler"}
        # Flat style is also accepted: sampler keys at the top level.
        for key in list(data):
            if key in sampler_fields and key not in tracker_fields:
                sampler_data[key] = data.pop(key)
        unknown = set(data) - tracker_fields
        if unknown:
            raise ValueError(f"unknown tracker config keys: {sorted(unknown)}")
        unknown = set(sampler_data) - sampler_fields
        if unknown:
            raise ValueError(f"unknown sampler config keys: {sorted(unknown)}")
        return TrackerConfig(**data, sampler=SamplerConfig(**sampler_data))


@dataclass
class FrameResult:
    estimate: TargetState
    occluded: bool
    candidates: list[Candidate]
    uncertain_count: int
    oracle_queries_this_frame: int
    knn_store_size: int
    retrained_oracle: bool
    frame_index: int


def select_uncertain(scores, tau_l: float, tau_u: float, m: int) -> list[int]:
    """Indices of uncertain samples: everything inside the open band
    (tau_l, tau_u), plus the m scores closest to zero (ties by index)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return []
    selected = set(np.flatnonzero((s > tau_l) & (s < tau_u)).tolist())
    order = np.argsort(np.abs(s), kind="stable")
    selected.update(order[: min(m, s.size)].tolist())
    return sorted(selected)


def label_candidates(cands: list[Candidate], knn: KnnStore | None,
                     oracle: OracleBase | None, cfg: TrackerConfig,
                     frame_index: int) -> tuple[list[Candidate], list[int]]:
    """Score and label in-ROI candidates; returns the uncertain index set
    (indices into `cands`).

    With a knn store: everything in the ROI gets a vote score; the uncertain
    set goes to the oracle when one is attached, otherwise labels are the
    score sign (self-labeling baselines). Without a store, every in-ROI
    candidate is routed to the oracle. An empty store behaves the same
    (cold start).
    """
    roi_idx = [i for i, c in enumerate(cands) if c.in_roi]
    if not roi_idx:
        return cands, []

    if knn is not None and knn.size > 0:
        feats = np.vstack([cands[i].feature for i in roi_idx])
        scores = knn.score_batch(feats)
        for i, s in zip(roi_idx, scores):
            cands[i].score = float(s)
        local = select_uncertain(scores, cfg.tau_l, cfg.tau_u, cfg.m)
        uncertain = [roi_idx[j] for j in local]
    else:
        if oracle is None:
            raise RuntimeError("no fast classifier and no oracle to label with")
        uncertain = list(roi_idx)

    uncertain_set = set(uncertain)
    for i in roi_idx:
        c = cands[i]
        if oracle is not None and i in uncertain_set:
            lab = oracle.label_candidate(c, frame_index)
            if c.score is None:
                c.score = float(lab)
            c.set_label(lab, LABELED_BY_ORACLE)
        else:
            c.set_label(label_sign(c.score), LABELED_BY_FAST)
    return cands, uncertain


def localize(cands: list[Candidate], tau_p: int, tau_a: float,
             prev: TargetState) -> tuple[TargetState, bool]:
    """Score-weighted mean of positive candidates, with occlusion gating.

    Forced-background candidates never participate. When the positive count
    or the summed weight fails its threshold the target is declared
    occluded and the previous state is kept.
    """
    n_pos = 0
    total = 0.0
    acc = np.zeros(4)
    for c in cands:
        if c.labeled_by == LABELED_BY_FORCED or c.label is None:
            continue
        if c.label == LABEL_POS:
            n_pos += 1
            if c.weight:
                st = c.state
                acc[0] += c.weight * st.cx
                acc[1] += c.weight * st.cy
                acc[2] += c.weight * st.w
                acc[3] += c.weight * st.h
        total += c.weight
    if n_pos > tau_p and total > tau_a:
        acc /= total
        est = TargetState(float(acc[0]), float(acc[1]),
                          float(max(acc[2], MIN_EXTENT)), float(max(acc[3], MIN_EXTENT)))
        return est, False
    return prev, True


class CoTracker:
    """Stateful tracker; call `init` on the first frame, then `step`."""

    def __init__(self, cfg: TrackerConfig, oracle: OracleBase | None = None,
                 variant: str = "ust", seed: int = 0) -> None:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        self.spec = VARIANTS[variant]
        if self.spec.uses_oracle and oracle is None:
            raise ValueError(f"variant {variant!r} requires an oracle")
        self.cfg = cfg
        self.oracle = oracle if self.spec.uses_oracle else None
        self.rng = np.random.default_rng(seed)
        self.knn: KnnStore | None = None
        if self.spec.uses_knn:
            self.knn = KnnStore(
                dim=cfg.feature_dim, k=cfg.k, initial_timer=cfg.alpha0,
                budgeting=self.spec.budgeting, budget_cap=cfg.budget_cap)
        self.projector: FeatureProjector | None = None
        self.prev: TargetState | None = None
        self.frame_index = 0
        self.staging = LabeledSet()

    # --- feature plumbing -------------------------------------------------

    def _featurize(self, frame, states: list[TargetState]) -> np.ndarray:
        raw = frame.raw_features(states)
        if self.projector is not None:
            return project(self.projector, raw)
        if raw.shape[1] != self.cfg.feature_dim:
            raise ValueError(
                f"raw feature dimension {raw.shape[1]} does not match the "
                f"configured dimension {self.cfg.feature_dim} and no projector is fitted")
        return raw

    # --- initialization -----------------------------------------------------

    def init(self, frame, box: TargetState) -> None:
        """Seed both classifiers from the annotated first frame and fit the
        feature projector on the init pool."""
        bounds = frame.bounds
        if not bounds.contains(box.cx, box.cy):
            raise ValueError("initial box lies outside the frame")

        states: list[TargetState] = [box]
        labels: list[int] = [LABEL_POS]
        for _ in range(11):
            jit = self.rng.standard_normal(4) * np.asarray(
                [0.04 * box.w, 0.04 * box.h, 0.03 * box.w, 0.03 * box.h])
            states.append(TargetState(
                box.cx + jit[0], box.cy + jit[1],
                max(box.w + jit[2], MIN_EXTENT), max(box.h + jit[3], MIN_EXTENT)))
            labels.append(LABEL_POS)
        for radius in (1.2, 1.9):
            for angle in np.linspace(0.0, 2 * np.pi, 8, endpoint=False):
                cx = box.cx + radius * box.w * np.cos(angle)
                cy = box.cy + radius * box.h * np.sin(angle)
                cx = float(np.clip(cx, bounds.x1 + box.w / 2, bounds.x2 - box.w / 2))
                cy = float(np.clip(cy, bounds.y1 + box.h / 2, bounds.y2 - box.h / 2))
                states.append(TargetState(cx, cy, box.w, box.h))
                labels.append(-1)
        for cand in draw_global_background(self.cfg.sampler, box, bounds, self.rng):
            states.append(cand.state)
            labels.append(-1)

        raw = frame.raw_features(states)
        if raw.shape[1] != self.cfg.feature_dim:
            self.projector = pca_fit(raw, self.cfg.feature_dim)
            feats = project(self.projector, raw)
        else:
            feats = raw

        if self.knn is not None:
            self.knn.seed(feats, labels, frame=frame.index)
        if self.oracle is not None:
            batch = LabeledSet()
            for f, lab in zip(feats, labels):
                batch.add(f, lab, frame.index)
            self.oracle.retrain(batch)
        self.prev = box
        self.frame_index = frame.index

    # --- the frame loop -------------------------------------------------------

    def step(self, frame) -> FrameResult:
        if self.prev is None:
            raise RuntimeError("tracker not initialized; call init() first")
        t = frame.index
        cfg = self.cfg
        if self.oracle is not None:
            self.oracle.begin_frame(t)
            queries_before = self.oracle.query_count

        roi = make_roi(self.prev, frame.motion_hint(), frame.bounds)
        cands = draw_candidates(cfg.sampler, self.prev, roi, self.rng)
        cands += draw_global_background(cfg.sampler, self.prev, frame.bounds, self.rng)

        try:
            feats = self._featurize(frame, [c.state for c in cands])
        except Exception:
            logger.exception("feature extraction failed on frame %d; skipping", t)
            self.frame_index = t
            return FrameResult(
                estimate=self.prev, occluded=True, candidates=[],
                uncertain_count=0, oracle_queries_this_frame=0,
                knn_store_size=self.knn.size if self.knn else 0,
                retrained_oracle=False, frame_index=t)
        for c, f in zip(cands, feats):
            c.feature = f

        cands, uncertain = label_candidates(cands, self.knn, self.oracle, cfg, t)

        retrained = False
        if self.oracle is not None:
            self.staging.items.extend((c.feature, c.label, t) for c in cands)
            if t % cfg.delta == 0:
                self.oracle.retrain(self.staging)
                self.staging = LabeledSet()
                retrained = True

        estimate, occluded = localize(cands, cfg.tau_p, cfg.tau_a, self.prev)
        if not occluded:
            estimate = self._clip_state(estimate, frame.bounds)

        if self.knn is not None and not occluded and uncertain:
            feats_u = np.vstack([cands[i].feature for i in uncertain])
            labels_u = [cands[i].label for i in uncertain]
            self.knn.insert_batch(feats_u, labels_u, frame=t)
        if self.knn is not None:
            self.knn.tick()
            self.knn.prune()

        queries = (self.oracle.query_count - queries_before) if self.oracle else 0
        result = FrameResult(
            estimate=estimate, occluded=occluded, candidates=cands,
            uncertain_count=len(uncertain), oracle_queries_this_frame=queries,
            knn_store_size=self.knn.size if self.knn else 0,
            retrained_oracle=retrained, frame_index=t)
        self.prev = estimate
        self.frame_index = t
        logger.debug("frame %d: est=(%.1f, %.1f, %.1f, %.1f) occluded=%s |U|=%d store=%d",
                     t, estimate.cx, estimate.cy, estimate.w, estimate.h,
                     occluded, len(uncertain), result.knn_store_size)
        return result

    @staticmethod
    def _clip_state(state: TargetState, bounds) -> TargetState:
        cx = float(np.clip(state.cx, bounds.x1, bounds.x2))
        cy = float(np.clip(state.cy, bounds.y1, bounds.y2))
        w = float(min(state.w, bounds.width)) if bounds.width > 0 else state.w
        h = float(min(state.h, bounds.height)) if bounds.height > 0 else state.h
        if (cx, cy, w, h) == (state.cx, state.cy, state.w, state.h):
            return state
        return replace(state, cx=cx, cy=cy, w=max(w, MIN_EXTENT), h=max(h, MIN_EXTENT))
