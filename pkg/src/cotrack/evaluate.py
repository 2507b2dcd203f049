"""Success-plot evaluation: overlap-threshold sweep, AUC, attribute tables."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import TargetState, iou

DEFAULT_GRID_SIZE = 101


@dataclass(frozen=True)
class SuccessCurve:
    """Success rate as a function of the overlap threshold; auc is the grid
    mean (rectangle rule)."""

    thresholds: np.ndarray
    success_rate: np.ndarray
    auc: float

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "success_rate"])
            for t, r in zip(self.thresholds, self.success_rate):
                writer.writerow([f"{t:.6f}", f"{r:.9f}"])


def success_curve(estimates: list[TargetState], truth: list[TargetState],
                  grid_size: int = DEFAULT_GRID_SIZE) -> SuccessCurve:
    """Fraction of frames whose IoU strictly exceeds each threshold on a
    uniform grid over [0, 1]."""
    if len(estimates) != len(truth):
        raise ValueError(
            f"length mismatch: {len(estimates)} estimates vs {len(truth)} truth boxes")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    if not estimates:
        raise ValueError("need at least one frame")
    overlaps = np.asarray([iou(e, g) for e, g in zip(estimates, truth)])
    thresholds = np.linspace(0.0, 1.0, grid_size)
    rate = (overlaps[None, :] > thresholds[:, None]).mean(axis=1)
    return SuccessCurve(thresholds=thresholds, success_rate=rate, auc=float(rate.mean()))


def frozen_truth(truth: list[TargetState], occluded: list[bool]) -> list[TargetState]:
    """Evaluation truth: during full occlusion the last visible box stands in
    for the hidden target."""
    if len(truth) != len(occluded):
        raise ValueError("truth/occlusion length mismatch")
    out: list[TargetState] = []
    last = None
    for state, occ in zip(truth, occluded):
        if not occ or last is None:
            last = state
        out.append(last)
    return out


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    attributes: tuple[str, ...]
    curve: SuccessCurve


def aggregate(runs: list[RunRecord]) -> dict:
    """Mean AUC per attribute tag plus the overall ALL row, averaged over
    every run (i.e. over repeated seeds)."""
    if not runs:
        raise ValueError("need at least one run")
    by_tag: dict[str, list[float]] = {}
    for run in runs:
        for tag in run.attributes:
            by_tag.setdefault(tag, []).append(run.curve.auc)
    table = {tag: float(np.mean(v)) for tag, v in sorted(by_tag.items())}
    table["ALL"] = float(np.mean([r.curve.auc for r in runs]))
    return table


def write_attribute_table(table: dict, json_path: str | Path,
                          csv_path: str | Path | None = None) -> None:
    with open(json_path, "w") as f:
        json.dump(table, f, indent=2, sort_keys=True)
        f.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["attribute", "mean_auc"])
            for tag in sorted(k for k in table if k != "ALL"):
                writer.writerow([tag, f"{table[tag]:.9f}"])
            writer.writerow(["ALL", f"{table['ALL']:.9f}"])
