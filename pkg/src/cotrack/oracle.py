"""Slow, accurate, long-memory classifiers behind a pluggable interface.

Two implementations ship:

* ArchiveNNOracle — an unbudgeted nearest-neighbour vote over every sample
  ever received; retrained (index rebuilt) in batches, so labels always
  reflect the archive as of the last retrain.
* ScriptedOracle — a scenario-backed classifier that labels candidates from
  ground truth with optional flip noise; stands in for an expensive
  detector when running on the synthetic simulator.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from scipy.spatial import cKDTree

from .core import LABEL_NEG, LABEL_POS, Candidate, LabeledSet, iou


class UntrainedOracleError(RuntimeError):
    """Raised when labels are requested before any training data arrived."""


class OracleBase(ABC):
    """Behavioural contract: stateless label queries plus batched retrains."""

    def __init__(self) -> None:
        self.query_count = 0

    @abstractmethod
    def label(self, x: np.ndarray) -> int:
        """Return +1 (target) or -1 (background) for a feature vector."""

    @abstractmethod
    def retrain(self, batch: LabeledSet) -> None:
        """Absorb a batch of labeled samples."""

    def begin_frame(self, frame_index: int) -> None:
        """Hook called once per tracked frame, before any queries."""

    def label_candidate(self, candidate: Candidate, frame_index: int) -> int:
        """Label a full candidate; default delegates to the feature query."""
        return self.label(candidate.feature)


class ArchiveNNOracle(OracleBase):
    """k-NN vote over an append-only archive. Ties vote background (-1)."""

    def __init__(self, dim: int, k_oracle: int = 5) -> None:
        super().__init__()
        if k_oracle < 1:
            raise ValueError("k_oracle must be >= 1")
        self.dim = dim
        self.k_oracle = k_oracle
        self._features: list[np.ndarray] = []
        self._labels: list[int] = []
        self._tree: cKDTree | None = None
        self._trained_size = 0

    @property
    def archive_size(self) -> int:
        return len(self._features)

    def retrain(self, batch: LabeledSet) -> None:
        for feature, label, _frame in batch:
            if label not in (LABEL_POS, LABEL_NEG):
                raise ValueError(f"label must be +1 or -1, got {label!r}")
            self._features.append(np.asarray(feature, dtype=np.float64))
            self._labels.append(int(label))
        self._trained_size = len(self._features)
        if self._trained_size:
            self._tree = cKDTree(np.vstack(self._features))

    def label(self, x: np.ndarray) -> int:
        if self._tree is None:
            raise UntrainedOracleError("oracle has not been trained yet")
        self.query_count += 1
        k = min(self.k_oracle, self._trained_size)
        _, idx = self._tree.query(np.asarray(x, dtype=np.float64), k=k)
        idx = np.atleast_1d(idx)
        vote = sum(self._labels[i] for i in idx)
        return LABEL_POS if vote > 0 else LABEL_NEG


class ScriptedOracle(OracleBase):
    """Ground-truth-backed oracle for simulator runs.

    A candidate is the target when its box overlaps the true target box by
    more than `overlap_threshold` on a frame where the target is visible.
    Each answer is flipped with probability `flip_probability`.
    """

    def __init__(self, scenario, overlap_threshold: float = 0.5,
                 flip_probability: float = 0.0, seed: int = 0) -> None:
        super().__init__()
        if not 0.0 < overlap_threshold < 1.0:
            raise ValueError("overlap_threshold must lie in (0, 1)")
        if not 0.0 <= flip_probability < 1.0:
            raise ValueError("flip_probability must lie in [0, 1)")
        self.scenario = scenario
        self.overlap_threshold = overlap_threshold
        self.flip_probability = flip_probability
        self._rng = np.random.default_rng(seed)
        self._frame_index = 0
        self._truth_cache: tuple[int, tuple] | None = None

    def begin_frame(self, frame_index: int) -> None:
        self._frame_index = frame_index

    def _truth(self, frame_index: int):
        if self._truth_cache is None or self._truth_cache[0] != frame_index:
            self._truth_cache = (frame_index, self.scenario.ground_truth(frame_index))
        return self._truth_cache[1]

    def _maybe_flip(self, label: int) -> int:
        if self.flip_probability > 0.0 and self._rng.random() < self.flip_probability:
            return -label
        return label

    def label_candidate(self, candidate: Candidate, frame_index: int) -> int:
        self.query_count += 1
        truth, occluded = self._truth(frame_index)
        if occluded:
            return self._maybe_flip(LABEL_NEG)
        overlap = iou(candidate.state, truth)
        truthful = LABEL_POS if overlap > self.overlap_threshold else LABEL_NEG
        return self._maybe_flip(truthful)

    def label(self, x: np.ndarray) -> int:
        """Feature-only fallback: nearer to the current target signature than
        to the background signature counts as target."""
        self.query_count += 1
        truth_sig = self.scenario.target_signature_at(self._frame_index)
        bg_sig = self.scenario.background_signature
        _, occluded = self.scenario.ground_truth(self._frame_index)
        if occluded:
            return self._maybe_flip(LABEL_NEG)
        x = np.asarray(x, dtype=np.float64)
        d_target = float(np.linalg.norm(x - truth_sig))
        d_bg = float(np.linalg.norm(x - bg_sig))
        return self._maybe_flip(LABEL_POS if d_target < d_bg else LABEL_NEG)

    def retrain(self, batch: LabeledSet) -> None:
        """Scripted knowledge does not learn; retraining is a no-op."""
