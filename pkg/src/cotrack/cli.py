"""Command-line front end: run a tracker on a scenario or a PPM sequence,
run the baseline comparison bench, and emit plot-ready artifacts.

All artifacts except timing files are byte-reproducible from the manifest
and seeds; wall-clock measurements live in separate timing JSONs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import Rect, TargetState
from .cotracker import VARIANTS, CoTracker, TrackerConfig
from .evaluate import (DEFAULT_GRID_SIZE, RunRecord, aggregate, frozen_truth,
                       success_curve, write_attribute_table)
from .features import color_histogram, crop_patch, read_ppm
from .oracle import ArchiveNNOracle, ScriptedOracle
from .simulator import SCENARIO_ATTRIBUTES, Scenario, builtin_scenarios

logger = logging.getLogger("cotrack.cli")

DEFAULT_ORACLE_CONFIG = {
    "kind": "scripted",
    "flip_probability": 0.0,
    "overlap_threshold": 0.5,
    "k_oracle": 5,
    "seed": 0,
}


@dataclass
class RunManifest:
    scenario: str | None = None
    sequence: str | None = None
    variant: str = "ust"
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    oracle: dict = field(default_factory=lambda: dict(DEFAULT_ORACLE_CONFIG))
    seeds: list[int] = field(default_factory=lambda: [1])
    out_dir: str = "out"
    grid_size: int = DEFAULT_GRID_SIZE
    frames: int | None = None

    def __post_init__(self) -> None:
        if (self.scenario is None) == (self.sequence is None):
            raise ValueError("exactly one of scenario/sequence must be given")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")


# --- PPM sequence ingestion -------------------------------------------------


class ImageFrame:
    """Adapter giving the tracker feature access to one decoded image."""

    def __init__(self, image: np.ndarray, index: int, bins: int) -> None:
        self._image = image
        self.index = index
        self._bins = bins
        h, w = image.shape[:2]
        self.bounds = Rect(0.0, 0.0, float(w), float(h))

    def raw_features(self, states: list[TargetState]) -> np.ndarray:
        return np.vstack([
            color_histogram(crop_patch(self._image, s), self._bins) for s in states])

    def motion_hint(self):
        return None


class ImageSequence:
    """Directory of frame_%06d.ppm files plus a groundtruth.txt."""

    def __init__(self, directory: str | Path, bins: int) -> None:
        self.dir = Path(directory)
        self.files = sorted(self.dir.glob("frame_*.ppm"))
        if not self.files:
            raise FileNotFoundError(f"no frame_*.ppm files under {self.dir}")
        gt_path = self.dir / "groundtruth.txt"
        if not gt_path.exists():
            raise FileNotFoundError(f"missing {gt_path}")
        self.truth: list[TargetState] = []
        for line in gt_path.read_text().strip().splitlines():
            x, y, w, h = (float(v) for v in line.split(","))
            self.truth.append(TargetState.from_corner(x, y, w, h))
        self.frame_count = min(len(self.files), len(self.truth))
        self._bins = bins

    def frame(self, t: int) -> ImageFrame:
        return ImageFrame(read_ppm(self.files[t]), t, self._bins)

    def ground_truth(self, t: int) -> tuple[TargetState, bool]:
        return self.truth[t], False


# --- single tracking run ------------------------------------------------------


def _build_oracle(cfg: dict, source, tracker_cfg: TrackerConfig, seed: int):
    kind = cfg.get("kind", "scripted")
    if kind == "scripted":
        return ScriptedOracle(
            source,
            overlap_threshold=float(cfg.get("overlap_threshold", 0.5)),
            flip_probability=float(cfg.get("flip_probability", 0.0)),
            seed=int(cfg.get("seed", 0)) + seed)
    if kind == "archive-nn":
        return ArchiveNNOracle(dim=tracker_cfg.feature_dim,
                               k_oracle=int(cfg.get("k_oracle", 5)))
    raise ValueError(f"unknown oracle kind {kind!r}")


@dataclass
class RunOutput:
    summary: dict
    trace_rows: list[list]
    curve: "object"
    fps: float


def run_single(source, name: str, variant: str, tracker_cfg: TrackerConfig,
               oracle_cfg: dict, seed: int, grid_size: int) -> RunOutput:
    """Track one source (scenario or image sequence) end to end."""
    frame_count = source.frame_count
    oracle = None
    if VARIANTS[variant].uses_oracle:
        oracle = _build_oracle(oracle_cfg, source, tracker_cfg, seed)
    tracker = CoTracker(tracker_cfg, oracle=oracle, variant=variant, seed=seed)

    truth0, _ = source.ground_truth(0)
    tracker.init(source.frame(0), truth0)

    estimates: list[TargetState] = []
    truth: list[TargetState] = []
    occluded_flags: list[bool] = []
    trace_rows: list[list] = []
    cumulative_queries = 0
    step_seconds = 0.0
    for t in range(1, frame_count):
        frame = source.frame(t)
        t0 = time.perf_counter()
        result = tracker.step(frame)
        step_seconds += time.perf_counter() - t0
        cumulative_queries += result.oracle_queries_this_frame
        est = result.estimate
        estimates.append(est)
        gt, occ = source.ground_truth(t)
        truth.append(gt)
        occluded_flags.append(occ)
        trace_rows.append([
            t, f"{est.cx:.6f}", f"{est.cy:.6f}", f"{est.w:.6f}", f"{est.h:.6f}",
            int(result.occluded), result.uncertain_count, result.knn_store_size,
            cumulative_queries, int(result.retrained_oracle)])

    curve = success_curve(estimates, frozen_truth(truth, occluded_flags), grid_size)
    fps = (frame_count - 1) / step_seconds if step_seconds > 0 else float("inf")
    summary = {
        "source": name,
        "variant": variant,
        "seed": seed,
        "frames": frame_count,
        "auc": curve.auc,
        "oracle_queries": oracle.query_count if oracle else 0,
        "final_store_size": tracker.knn.size if tracker.knn else 0,
        "occluded_frames_reported": sum(r[5] for r in trace_rows),
    }
    return RunOutput(summary=summary, trace_rows=trace_rows, curve=curve, fps=fps)


TRACE_HEADER = ["frame", "cx", "cy", "w", "h", "occluded", "uncertain",
                "store_size", "oracle_queries_cum", "retrained"]


def _write_trace(path: Path, rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER)
        writer.writerows(rows)


def _write_json(path: Path, data: dict) -> None:
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def _resolve_scenario(name: str, frames: int | None) -> Scenario:
    catalog = builtin_scenarios()
    if name in catalog:
        return catalog[name](frames=frames) if frames else catalog[name]()
    path = Path(name)
    if path.exists():
        scenario = Scenario.load(path)
        if frames and frames != scenario.frame_count:
            cfg = dict(scenario.config)
            cfg["frames"] = frames
            scenario = Scenario.from_config(cfg)
        return scenario
    raise ValueError(f"unknown scenario {name!r}; built-ins: {sorted(catalog)}")


def run(manifest: RunManifest) -> int:
    """Execute one manifest; writes per-seed artifacts plus a seed-averaged
    summary. Returns a process exit status."""
    try:
        if manifest.scenario is not None:
            source = _resolve_scenario(manifest.scenario, manifest.frames)
            name = manifest.scenario
        else:
            source = ImageSequence(manifest.sequence, manifest.tracker.histogram_bins)
            name = Path(manifest.sequence).name
        out = Path(manifest.out_dir)
        out.mkdir(parents=True, exist_ok=True)

        aucs, fps_list = [], []
        for seed in manifest.seeds:
            result = run_single(source, name, manifest.variant, manifest.tracker,
                                manifest.oracle, seed, manifest.grid_size)
            _write_trace(out / f"trace_s{seed}.csv", result.trace_rows)
            result.curve.write_csv(out / f"curve_s{seed}.csv")
            _write_json(out / f"summary_s{seed}.json", result.summary)
            aucs.append(result.summary["auc"])
            fps_list.append(result.fps)
            logger.info("%s/%s seed %d: auc=%.4f", name, manifest.variant, seed,
                        result.summary["auc"])

        _write_json(out / "summary.json", {
            "source": name,
            "variant": manifest.variant,
            "seeds": manifest.seeds,
            "auc_per_seed": aucs,
            "auc_mean": float(np.mean(aucs)),
            "auc_std": float(np.std(aucs)),
        })
        _write_json(out / "timing.json", {
            "fps_per_seed": fps_list,
            "fps_mean": float(np.mean(fps_list)),
        })
        return 0
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("run failed", exc_info=True)
        return 1


def bench(out_dir: str, seeds: list[int], variants: list[str],
          tracker_cfg: TrackerConfig, oracle_cfg: dict,
          grid_size: int = DEFAULT_GRID_SIZE, frames: int | None = None) -> int:
    """All built-in scenarios x variants x seeds; emits per-variant attribute
    tables and a flat per-run summary CSV."""
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        catalog = builtin_scenarios()
        rows = []
        tables = {}
        fps_all = []
        for variant in variants:
            records = []
            for scen_name, factory in sorted(catalog.items()):
                scenario = factory(frames=frames) if frames else factory()
                for seed in seeds:
                    result = run_single(scenario, scen_name, variant, tracker_cfg,
                                        oracle_cfg, seed, grid_size)
                    records.append(RunRecord(
                        scenario=scen_name,
                        attributes=SCENARIO_ATTRIBUTES.get(scen_name, ()),
                        curve=result.curve))
                    rows.append([scen_name, variant, seed,
                                 f"{result.summary['auc']:.9f}",
                                 result.summary["oracle_queries"],
                                 result.summary["final_store_size"]])
                    fps_all.append(result.fps)
                    logger.info("bench %s/%s seed %d: auc=%.4f",
                                scen_name, variant, seed, result.summary["auc"])
            tables[variant] = aggregate(records)
        write_attribute_table(tables, out / "attribute_table.json")
        with open(out / "attribute_table.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["variant", "attribute", "mean_auc"])
            for variant, table in tables.items():
                for tag in sorted(k for k in table if k != "ALL"):
                    writer.writerow([variant, tag, f"{table[tag]:.9f}"])
                writer.writerow([variant, "ALL", f"{table['ALL']:.9f}"])
        with open(out / "runs.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["scenario", "variant", "seed", "auc",
                             "oracle_queries", "final_store_size"])
            writer.writerows(rows)
        _write_json(out / "bench_timing.json", {"fps_mean": float(np.mean(fps_all))})
        return 0
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("bench failed", exc_info=True)
        return 1


# --- argument handling ----------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """Accepts "7", "1..5", or "1,4,9"."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    if "," in text:
        return [int(v) for v in text.split(",") if v]
    return [int(text)]


def load_config_file(path: str | None) -> tuple[TrackerConfig, dict]:
    oracle_cfg = dict(DEFAULT_ORACLE_CONFIG)
    if path is None:
        return TrackerConfig(), oracle_cfg
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    oracle_cfg.update(data.pop("oracle", {}) or {})
    tracker = TrackerConfig.from_mapping(data.pop("tracker", data))
    return tracker, oracle_cfg


def _setup_logging() -> None:
    level_name = os.environ.get("UST_LOG", "off").lower()
    level = {"off": logging.WARNING, "info": logging.INFO,
             "trace": logging.DEBUG}.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotrack",
        description="Co-tracking engine with uncertainty-sampling label exchange")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="track one scenario or PPM sequence")
    group = p_run.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", help="built-in scenario name or YAML path")
    group.add_argument("--sequence", help="directory of frame_*.ppm + groundtruth.txt")
    p_run.add_argument("--variant", default="ust", choices=sorted(VARIANTS))
    p_run.add_argument("--config", help="YAML config file")
    p_run.add_argument("--seeds", default="1", type=parse_seeds,
                       help='"7", "1..5", or "1,4,9"')
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--grid", type=int, default=DEFAULT_GRID_SIZE)
    p_run.add_argument("--frames", type=int, default=None,
                       help="override the scenario frame count")

    p_bench = sub.add_parser("bench", help="all built-in scenarios x variants x seeds")
    p_bench.add_argument("--variants", default=",".join(sorted(VARIANTS)),
                         help="comma-separated variant list")
    p_bench.add_argument("--config", help="YAML config file")
    p_bench.add_argument("--seeds", default="1..5", type=parse_seeds)
    p_bench.add_argument("--out", default="bench-out")
    p_bench.add_argument("--grid", type=int, default=DEFAULT_GRID_SIZE)
    p_bench.add_argument("--frames", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        tracker_cfg, oracle_cfg = load_config_file(args.config)
    except Exception as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 1
    if args.command == "run":
        try:
            manifest = RunManifest(
                scenario=args.scenario, sequence=args.sequence,
                variant=args.variant, tracker=tracker_cfg, oracle=oracle_cfg,
                seeds=args.seeds, out_dir=args.out, grid_size=args.grid,
                frames=args.frames)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return run(manifest)
    variants = [v for v in args.variants.split(",") if v]
    for v in variants:
        if v not in VARIANTS:
            print(f"error: unknown variant {v!r}", file=sys.stderr)
            return 1
    return bench(args.out, args.seeds, variants, tracker_cfg, oracle_cfg,
                 grid_size=args.grid, frames=args.frames)


if __name__ == "__main__":
    sys.exit(main())
