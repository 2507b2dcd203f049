"""Budgeted k-nearest-neighbour classifier with timer-based forgetting.

The store keeps labeled exemplars in feature space and answers vote-based
confidence scores. With budgeting enabled, inserts and a per-frame
tick/prune cycle apply the accounting rules:

  1. a new sample whose k nearest neighbours all share its label is
     discarded (absorbed);
  2. every stored sample carries a countdown timer; at zero it is flagged;
  3. a new sample whose k nearest neighbours all carry the opposite label
     is kept but marked as an outlier;
  4. on every actual insertion, neighbours with a differing label get +1
     on their timer (contested samples live longer);
  5. flagged samples are resolved: redundant ones (uniform same-label
     neighbourhood) are dropped, outliers with no same-label neighbour are
     dropped, and the rest are promoted to permanent prototypes.

The spatial index is a KD-tree over a snapshot of the store. Removals
tombstone rows; additions go to a brute-forced pending block; the tree is
rebuilt whenever accumulated churn exceeds a quarter of the live store.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import LABEL_NEG, LABEL_POS

INSERT_ABSORBED = "absorbed"
INSERT_STORED = "inserted"
INSERT_OUTLIER = "inserted-as-outlier"

REBUILD_CHURN_FRACTION = 0.25
# Performance guards: rebuild earlier when tombstones inflate every tree
# query's k, or when the brute-forced pending block grows long.
REBUILD_MAX_TREE_DEAD = 16
REBUILD_MAX_PENDING = 64
# Large query batches bypass the KD-tree for a vectorised scan of the same
# snapshot: float32 shortlist, then exact float64 re-ranking. KD-trees
# degrade badly at this dimensionality once the store gets dense.
BRUTE_MIN_QUERIES = 64
BRUTE_MIN_STORE = 512
BRUTE_SHORTLIST_PAD = 16


class EmptyStoreError(RuntimeError):
    """Raised when a score is requested from a store with no exemplars."""


@dataclass
class KnnCounters:
    insert_attempts: int = 0
    absorbed_on_insert: int = 0
    outlier_inserts: int = 0
    plain_inserts: int = 0
    pruned_absorbed: int = 0
    pruned_outliers: int = 0
    prototypes_promoted: int = 0
    evicted_by_cap: int = 0


@dataclass
class PruneReport:
    absorbed: int = 0
    outliers_removed: int = 0
    prototypes_promoted: int = 0
    evicted_by_cap: int = 0


@dataclass
class ExemplarView:
    """Read-only snapshot of one stored exemplar (for tests and dumps)."""

    feature: np.ndarray
    label: int
    timer: int
    flagged: bool
    outlier: bool
    prototype: bool
    inserted_at: int


class KnnStore:
    """KD-tree backed exemplar store with optional budgeting rules."""

    def __init__(
        self,
        dim: int,
        k: int = 10,
        initial_timer: int = 10,
        budgeting: bool = True,
        budget_cap: int | None = None,
    ) -> None:
        if k < 1:
            raise ValueError("k must be >= 1")
        if initial_timer < 0:
            raise ValueError("initial_timer must be >= 0")
        if budget_cap is not None and budget_cap < 1:
            raise ValueError("budget_cap must be >= 1 when set")
        self.dim = dim
        self.k = k
        self.initial_timer = initial_timer
        self.budgeting = budgeting
        self.budget_cap = budget_cap
        self.counters = KnnCounters()

        cap0 = 64
        self._feats = np.empty((cap0, dim), dtype=np.float64)
        self._labels = np.empty(cap0, dtype=np.int8)
        self._timers = np.empty(cap0, dtype=np.int64)
        self._flagged = np.empty(cap0, dtype=bool)
        self._outlier = np.empty(cap0, dtype=bool)
        self._proto = np.empty(cap0, dtype=bool)
        self._alive = np.empty(cap0, dtype=bool)
        self._inserted_at = np.empty(cap0, dtype=np.int64)
        self._n_rows = 0
        self._live = 0

        self._tree: cKDTree | None = None
        self._tree_rows = np.empty(0, dtype=np.int64)
        self._pending: list[int] = []
        self._churn = 0
        self._tree_dead = 0

    # --- bookkeeping ---------------------------------------------------

    @property
    def size(self) -> int:
        return self._live

    def _kill_row(self, row: int) -> None:
        self._alive[row] = False
        self._live -= 1
        self._churn += 1
        if self._tree is not None and self._tree_rows.size and row <= self._tree_rows[-1]:
            self._tree_dead += 1

    def _grow(self) -> None:
        cap = self._feats.shape[0]
        if self._n_rows < cap:
            return
        new_cap = cap * 2
        for name in ("_feats", "_labels", "_timers", "_flagged", "_outlier",
                     "_proto", "_alive", "_inserted_at"):
            old = getattr(self, name)
            shape = (new_cap,) + old.shape[1:]
            buf = np.empty(shape, dtype=old.dtype)
            buf[: self._n_rows] = old[: self._n_rows]
            setattr(self, name, buf)

    def _append_row(self, feature: np.ndarray, label: int, timer: int,
                    frame: int, outlier: bool = False, prototype: bool = False) -> int:
        self._grow()
        r = self._n_rows
        self._feats[r] = feature
        self._labels[r] = label
        self._timers[r] = timer
        self._flagged[r] = False
        self._outlier[r] = outlier
        self._proto[r] = prototype
        self._alive[r] = True
        self._inserted_at[r] = frame
        self._n_rows += 1
        self._live += 1
        self._pending.append(r)
        return r

    def _rebuild(self) -> None:
        rows = np.flatnonzero(self._alive[: self._n_rows])
        self._tree_rows = rows
        self._tree = cKDTree(self._feats[rows]) if rows.size else None
        self._pending = []
        self._churn = 0
        self._tree_dead = 0
        if rows.size >= BRUTE_MIN_STORE:
            self._snap32 = self._feats[rows].astype(np.float32)
            self._snap32_norm = (self._snap32 * self._snap32).sum(axis=1)
        else:
            self._snap32 = None
            self._snap32_norm = None

    def _maybe_rebuild(self) -> None:
        if (self._churn > max(1.0, REBUILD_CHURN_FRACTION * self._live)
                or self._tree_dead > REBUILD_MAX_TREE_DEAD
                or len(self._pending) > REBUILD_MAX_PENDING):
            self._rebuild()

    def _pending_alive(self) -> np.ndarray:
        if not self._pending:
            return np.empty(0, dtype=np.int64)
        rows = np.asarray(self._pending, dtype=np.int64)
        return rows[self._alive[rows]]

    @staticmethod
    def _sq_dists(X: np.ndarray, P: np.ndarray) -> np.ndarray:
        """(n, p) squared distances via the expanded matmul form."""
        return ((X * X).sum(axis=1)[:, None]
                + (P * P).sum(axis=1)[None, :]
                - 2.0 * (X @ P.T))

    # --- neighbour queries ----------------------------------------------

    def _neighbors_batch(self, X: np.ndarray, k: int,
                         exclude: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Rows and distances of up to k nearest live exemplars per query.

        Returns (rows (n, k), dists (n, k)), padded with row -1 / dist inf.
        Ordering is (distance, insertion order): among equal distances the
        older exemplar wins.
        """
        n = X.shape[0]
        extra = self._tree_dead + (1 if exclude is not None else 0)
        parts_rows: list[np.ndarray] = []
        parts_dist: list[np.ndarray] = []

        if self._tree is not None:
            q = min(len(self._tree_rows), k + extra)
            d, i = self._tree.query(X, k=q, workers=1)
            if q == 1:
                d = d[:, None]
                i = i[:, None]
            rows = self._tree_rows[i]
            dead = ~self._alive[rows]
            d = np.where(dead, np.inf, d)
            rows = np.where(dead, -1, rows)
            parts_rows.append(rows)
            parts_dist.append(d)

        prows = self._pending_alive()
        if prows.size:
            pd = np.sqrt(np.maximum(self._sq_dists(X, self._feats[prows]), 0.0))
            parts_rows.append(np.broadcast_to(prows, (n, prows.size)).copy())
            parts_dist.append(pd)

        if not parts_rows:
            return (np.full((n, k), -1, dtype=np.int64), np.full((n, k), np.inf))

        rows = np.concatenate(parts_rows, axis=1)
        dist = np.concatenate(parts_dist, axis=1)
        if exclude is not None:
            mask = rows == exclude[:, None]
            dist = np.where(mask, np.inf, dist)
            rows = np.where(mask, -1, rows)

        # Sort candidate columns by row index first, then stably by distance,
        # which realises the (distance, insertion order) tie-break.
        order = np.argsort(np.where(rows < 0, np.iinfo(np.int64).max, rows),
                           axis=1, kind="stable")
        rows = np.take_along_axis(rows, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        order = np.argsort(dist, axis=1, kind="stable")
        rows = np.take_along_axis(rows, order, axis=1)[:, :k]
        dist = np.take_along_axis(dist, order, axis=1)[:, :k]
        if rows.shape[1] < k:
            pad = k - rows.shape[1]
            rows = np.pad(rows, ((0, 0), (0, pad)), constant_values=-1)
            dist = np.pad(dist, ((0, 0), (0, pad)), constant_values=np.inf)
        return rows, dist

    def _neighbors(self, x: np.ndarray, k: int) -> np.ndarray:
        """Single-query fast path; same ordering contract as the batch form."""
        parts_rows: list[np.ndarray] = []
        parts_dist: list[np.ndarray] = []
        if self._tree is not None:
            q = min(len(self._tree_rows), k + self._tree_dead)
            d, i = self._tree.query(x, k=q, workers=1)
            d = np.atleast_1d(d)
            i = np.atleast_1d(i)
            rows = self._tree_rows[i]
            keep = self._alive[rows]
            parts_rows.append(rows[keep])
            parts_dist.append(d[keep])
        prows = self._pending_alive()
        if prows.size:
            diff = self._feats[prows] - x
            parts_rows.append(prows)
            parts_dist.append(np.sqrt((diff * diff).sum(axis=1)))
        if not parts_rows:
            return np.empty(0, dtype=np.int64)
        rows = np.concatenate(parts_rows)
        dist = np.concatenate(parts_dist)
        order = np.argsort(rows, kind="stable")
        rows, dist = rows[order], dist[order]
        order = np.argsort(dist, kind="stable")
        return rows[order[:k]]

    # --- public operations ----------------------------------------------

    def seed(self, features: np.ndarray, labels, frame: int = 0,
             timer: int | None = None) -> None:
        """Bulk-load exemplars without applying the budgeting rules.

        Used for initial training: rule 1 would otherwise absorb most of a
        redundant seed pool before it ever becomes useful.
        """
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise ValueError(f"expected (n, {self.dim}) features, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("seed features contain non-finite entries")
        labs = np.asarray(labels, dtype=np.int64)
        if labs.shape != (feats.shape[0],):
            raise ValueError("labels length must match features")
        if not np.all(np.isin(labs, (LABEL_POS, LABEL_NEG))):
            raise ValueError("labels must be +1 or -1")
        t = self.initial_timer if timer is None else timer
        for f, lab in zip(feats, labs):
            self._append_row(f, int(lab), t, frame)
        self._rebuild()

    def score(self, x: np.ndarray) -> float:
        """Mean label of the k nearest exemplars: +1 target-like, -1 background."""
        return float(self.score_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        """Vectorised `score` over an (n, dim) query block."""
        if self.size == 0:
            raise EmptyStoreError("cannot score against an empty exemplar store")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected (n, {self.dim}) queries, got {X.shape}")
        rows, _ = self._neighbors_batch(X, self.k)
        valid = rows >= 0
        labs = np.where(valid, self._labels[np.clip(rows, 0, None)], 0).astype(np.float64)
        return labs.sum(axis=1) / valid.sum(axis=1)

    def _validate_sample(self, x: np.ndarray, label: int) -> np.ndarray:
        if label not in (LABEL_POS, LABEL_NEG):
            raise ValueError(f"label must be +1 or -1, got {label!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a ({self.dim},) feature, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("feature contains non-finite entries")
        return x

    def _apply_insert_rules(self, x: np.ndarray, label: int, frame: int,
                            nbr: np.ndarray) -> str:
        """Rules 1, 3 and 4 given the k nearest pre-insert neighbours."""
        full = nbr.size >= self.k
        nbr_labels = self._labels[nbr] if nbr.size else np.empty(0, dtype=np.int8)

        if full and np.all(nbr_labels == label):
            self.counters.absorbed_on_insert += 1
            return INSERT_ABSORBED

        outlier = bool(full and np.all(nbr_labels == -label))
        self._append_row(x, label, self.initial_timer, frame, outlier=outlier)
        self._churn += 1

        # Rule 4: differing neighbours earn a longer life; a flagged
        # neighbour whose timer rises above zero loses its flag again.
        differing = nbr[nbr_labels != label] if nbr.size else nbr
        if differing.size:
            bump = differing[~self._proto[differing]]
            self._timers[bump] += 1
            self._flagged[bump] = False

        if outlier:
            self.counters.outlier_inserts += 1
        else:
            self.counters.plain_inserts += 1
        return INSERT_OUTLIER if outlier else INSERT_STORED

    def insert(self, x: np.ndarray, label: int, frame: int) -> str:
        """Add one labeled sample, applying rules 1, 3 and 4 when budgeting.

        Returns one of "absorbed", "inserted", "inserted-as-outlier".
        """
        x = self._validate_sample(x, label)
        self.counters.insert_attempts += 1

        if not self.budgeting:
            self._append_row(x, label, self.initial_timer, frame)
            self._churn += 1
            self.counters.plain_inserts += 1
            result = INSERT_STORED
        else:
            result = self._apply_insert_rules(x, label, frame, self._neighbors(x, self.k))
        self._enforce_cap()
        self._maybe_rebuild()
        return result

    def insert_batch(self, X: np.ndarray, labels, frame: int) -> list[str]:
        """Insert several samples with the same semantics as sequential
        `insert` calls: each sample's neighbourhood includes every sample
        stored earlier in the batch. One snapshot query serves the whole
        batch, which is markedly faster inside the frame loop.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("expected an (n, dim) batch")
        labs = [int(v) for v in labels]
        if len(labs) != X.shape[0]:
            raise ValueError("labels length must match features")
        if not self.budgeting or self.budget_cap is not None or X.shape[0] <= 1:
            # Cap evictions between inserts would alter later neighbourhoods,
            # so only the cap-free budgeted path takes the batched shortcut.
            return [self.insert(x, lab, frame) for x, lab in zip(X, labs)]

        rows = [self._validate_sample(x, lab) for x, lab in zip(X, labs)]
        snap_rows, snap_dists = (
            self._neighbors_batch(X, self.k) if self._live
            else (np.full((len(rows), self.k), -1, dtype=np.int64),
                  np.full((len(rows), self.k), np.inf)))
        results = []
        new_rows: list[int] = []
        for j, (x, lab) in enumerate(zip(rows, labs)):
            self.counters.insert_attempts += 1
            cand_rows = snap_rows[j][snap_rows[j] >= 0]
            cand_dists = snap_dists[j][snap_rows[j] >= 0]
            if new_rows:
                extra = np.asarray(new_rows, dtype=np.int64)
                diff = self._feats[extra] - x
                cand_rows = np.concatenate([cand_rows, extra])
                cand_dists = np.concatenate([cand_dists,
                                             np.sqrt((diff * diff).sum(axis=1))])
            if cand_rows.size:
                order = np.argsort(cand_rows, kind="stable")
                cand_rows, cand_dists = cand_rows[order], cand_dists[order]
                order = np.argsort(cand_dists, kind="stable")
                nbr = cand_rows[order[: self.k]]
            else:
                nbr = np.empty(0, dtype=np.int64)
            result = self._apply_insert_rules(x, lab, frame, nbr)
            if result != INSERT_ABSORBED:
                new_rows.append(self._n_rows - 1)
            results.append(result)
        self._maybe_rebuild()
        return results

    def tick(self) -> int:
        """Advance one frame: count down timers, flag the expired. Returns
        the number of newly flagged exemplars."""
        if not self.budgeting:
            return 0
        n = self._n_rows
        active = self._alive[:n] & ~self._proto[:n]
        positive = active & (self._timers[:n] > 0)
        self._timers[:n][positive] -= 1
        newly = active & ~self._flagged[:n] & (self._timers[:n] == 0)
        self._flagged[:n][newly] = True
        return int(newly.sum())

    def prune(self) -> PruneReport:
        """Resolve flagged exemplars (rule 5), then enforce the hard cap.

        All flagged exemplars are judged against the same pre-prune snapshot
        of the store, so the outcome does not depend on processing order.
        """
        report = PruneReport()
        if self.budgeting:
            n = self._n_rows
            flagged_rows = np.flatnonzero(self._alive[:n] & self._flagged[:n])
            if flagged_rows.size:
                rows, _ = self._neighbors_batch(
                    self._feats[flagged_rows], self.k, exclude=flagged_rows)
                to_remove: list[int] = []
                for j, r in enumerate(flagged_rows):
                    nbr = rows[j][rows[j] >= 0]
                    if nbr.size == 0:
                        # Nothing to compare against: keep as prototype.
                        self._proto[r] = True
                        self._flagged[r] = False
                        report.prototypes_promoted += 1
                        continue
                    nbr_labels = self._labels[nbr]
                    if np.all(nbr_labels == self._labels[r]):
                        to_remove.append(r)
                        report.absorbed += 1
                    elif self._outlier[r] and not np.any(nbr_labels == self._labels[r]):
                        to_remove.append(r)
                        report.outliers_removed += 1
                    else:
                        self._proto[r] = True
                        self._flagged[r] = False
                        report.prototypes_promoted += 1
                for r in to_remove:
                    self._kill_row(r)
        report.evicted_by_cap = self._enforce_cap()
        self.counters.pruned_absorbed += report.absorbed
        self.counters.pruned_outliers += report.outliers_removed
        self.counters.prototypes_promoted += report.prototypes_promoted
        self._maybe_rebuild()
        return report

    def _enforce_cap(self) -> int:
        if self.budget_cap is None:
            return 0
        evicted = 0
        while self.size > self.budget_cap:
            n = self._n_rows
            live = self._alive[:n]
            non_proto = np.flatnonzero(live & ~self._proto[:n])
            victim = int(non_proto[0]) if non_proto.size else int(np.flatnonzero(live)[0])
            self._kill_row(victim)
            evicted += 1
        self.counters.evicted_by_cap += evicted
        return evicted

    # --- introspection ---------------------------------------------------

    def exemplars(self) -> list[ExemplarView]:
        out = []
        for r in range(self._n_rows):
            if not self._alive[r]:
                continue
            out.append(ExemplarView(
                feature=self._feats[r].copy(),
                label=int(self._labels[r]),
                timer=int(self._timers[r]),
                flagged=bool(self._flagged[r]),
                outlier=bool(self._outlier[r]),
                prototype=bool(self._proto[r]),
                inserted_at=int(self._inserted_at[r]),
            ))
        return out

    def audit_index(self) -> None:
        """Verify that index membership (tree + pending) matches the live set."""
        n = self._n_rows
        live = set(np.flatnonzero(self._alive[:n]).tolist())
        indexed = {int(r) for r in self._tree_rows if self._alive[r]}
        indexed |= {r for r in self._pending if self._alive[r]}
        if indexed != live:
            raise AssertionError(
                f"index/collection mismatch: {len(indexed)} indexed vs {len(live)} live")
        if self.budget_cap is not None and len(live) > self.budget_cap:
            raise AssertionError(f"store size {len(live)} exceeds cap {self.budget_cap}")

    def dump_csv(self, path: str | Path) -> None:
        """Diagnostic snapshot: one row per exemplar."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                [f"f{i}" for i in range(self.dim)]
                + ["label", "timer", "flagged", "outlier", "prototype", "inserted_at"])
            for ex in self.exemplars():
                writer.writerow(
                    [f"{v:.9g}" for v in ex.feature]
                    + [ex.label, ex.timer, int(ex.flagged), int(ex.outlier),
                       int(ex.prototype), ex.inserted_at])
