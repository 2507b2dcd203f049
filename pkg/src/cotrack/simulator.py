"""Deterministic synthetic tracking scenarios.

A scenario is a scripted ground-truth trajectory over a virtual frame plus
a feature field: any queried box maps to a feature vector that blends the
signatures of the objects it overlaps (target, distractors, occluder) with
the background, plus seeded positional noise. Everything is a pure function
of (scenario, frame, box), so runs are exactly reproducible.

Scenarios can optionally be rendered to binary PPM frames, which exercises
the image/histogram feature pathway end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import Rect, TargetState
from .features import write_ppm

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SALT = np.uint64(0xDEADBEEFCAFEF00D)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser over uint64 arrays."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _hashed_normals(base: np.ndarray, dim: int) -> np.ndarray:
    """(n,) uint64 keys -> (n, dim) standard normals, deterministic."""
    with np.errstate(over="ignore"):
        lanes = base[:, None] + np.arange(1, dim + 1, dtype=np.uint64) * _GAMMA
        h1 = _mix64(lanes)
        h2 = _mix64(lanes ^ _SALT)
    u1 = ((h1 >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    u2 = (h2 >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _interp_waypoints(waypoints: list[list[float]], frame_count: int) -> np.ndarray:
    """Piecewise-linear (t, cx, cy) waypoints -> per-frame (cx, cy) table."""
    wp = np.asarray(waypoints, dtype=np.float64)
    if wp.ndim != 2 or wp.shape[1] != 3 or wp.shape[0] < 1:
        raise ValueError("waypoints must be a non-empty list of [t, cx, cy]")
    t = np.arange(frame_count, dtype=np.float64)
    cx = np.interp(t, wp[:, 0], wp[:, 1])
    cy = np.interp(t, wp[:, 0], wp[:, 2])
    return np.stack([cx, cy], axis=1)


@dataclass(frozen=True)
class ObjectTrack:
    """A moving rectangular object with a fixed size."""

    centers: np.ndarray  # (frame_count, 2)
    w: float
    h: float

    def state(self, t: int) -> TargetState:
        return TargetState(float(self.centers[t, 0]), float(self.centers[t, 1]),
                           self.w, self.h)


@dataclass(frozen=True)
class Distractor:
    track: ObjectTrack
    similarity: float  # 0 = background-like, 1 = identical to the target


@dataclass
class Scenario:
    """Immutable scripted scene; construct via `build` or `from_config`."""

    name: str
    frame_count: int
    width: float
    height: float
    feature_dim: int
    seed: int
    noise_std: float
    drift_rate: float
    target: ObjectTrack
    distractors: list[Distractor] = field(default_factory=list)
    occlusions: list[tuple[int, int]] = field(default_factory=list)
    occluder_similarity: float = 0.0
    provide_motion_hint: bool = False
    config: dict | None = None

    def __post_init__(self) -> None:
        rng = np.random.default_rng(self.seed)
        d = self.feature_dim
        t_sig = rng.standard_normal(d)
        b_sig = rng.standard_normal(d)
        drift = rng.standard_normal(d)
        self._target_base = t_sig / np.linalg.norm(t_sig)
        self.background_signature = b_sig / np.linalg.norm(b_sig)
        self._drift_dir = drift / np.linalg.norm(drift)
        self._occluder_sig = (self.occluder_similarity * self._target_base
                              + (1.0 - self.occluder_similarity) * self.background_signature)

    @property
    def bounds(self) -> Rect:
        return Rect(0.0, 0.0, self.width, self.height)

    def frame(self, t: int) -> "FrameHandle":
        if not 0 <= t < self.frame_count:
            raise IndexError(f"frame {t} outside [0, {self.frame_count})")
        return FrameHandle(self, t)

    # --- ground truth ----------------------------------------------------

    def fully_occluded(self, t: int) -> bool:
        return any(start <= t < end for start, end in self.occlusions)

    def ground_truth(self, t: int) -> tuple[TargetState, bool]:
        return self.target.state(t), self.fully_occluded(t)

    def target_signature_at(self, t: int) -> np.ndarray:
        return self._target_base + self.drift_rate * t * self._drift_dir

    def distractor_signature_at(self, t: int, similarity: float) -> np.ndarray:
        return (similarity * self.target_signature_at(t)
                + (1.0 - similarity) * self.background_signature)

    # --- feature field ---------------------------------------------------

    def raw_features(self, t: int, states: list[TargetState]) -> np.ndarray:
        """Feature vectors for a batch of boxes at frame t.

        Each box blends object signatures weighted by box-object IoU, with
        the remainder taken by the background; during an occlusion episode
        the target's share carries the occluder signature instead.
        """
        n = len(states)
        occluded = self.fully_occluded(t)
        sigs = [self._occluder_sig if occluded else self.target_signature_at(t)]
        objects = [self.target.state(t)]
        for d in self.distractors:
            sigs.append(self.distractor_signature_at(t, d.similarity))
            objects.append(d.track.state(t))

        boxes = np.asarray([(s.cx, s.cy, s.w, s.h) for s in states])
        x1 = boxes[:, 0] - boxes[:, 2] / 2
        y1 = boxes[:, 1] - boxes[:, 3] / 2
        x2 = boxes[:, 0] + boxes[:, 2] / 2
        y2 = boxes[:, 1] + boxes[:, 3] / 2
        areas = boxes[:, 2] * boxes[:, 3]
        weights = np.empty((n, len(objects)), dtype=np.float64)
        for j, obj in enumerate(objects):
            r = obj.rect()
            iw = np.clip(np.minimum(x2, r.x2) - np.maximum(x1, r.x1), 0.0, None)
            ih = np.clip(np.minimum(y2, r.y2) - np.maximum(y1, r.y1), 0.0, None)
            inter = iw * ih
            weights[:, j] = inter / (areas + r.area - inter)
        totals = weights.sum(axis=1)
        over = totals > 1.0
        if np.any(over):
            weights[over] /= totals[over, None]
            totals[over] = 1.0

        feats = weights @ np.vstack(sigs)
        feats += (1.0 - totals)[:, None] * self.background_signature

        if self.noise_std > 0.0:
            q = np.round(boxes * 16.0).astype(np.int64).astype(np.uint64)
            with np.errstate(over="ignore"):
                base = _mix64(np.uint64(self.seed) * _GAMMA + np.uint64(t))
                key = np.full(n, base, dtype=np.uint64)
                for c in range(4):
                    key = _mix64(key ^ (q[:, c] * _GAMMA + np.uint64(c)))
            feats += self.noise_std * _hashed_normals(key, self.feature_dim)
        return feats

    def feature_at(self, t: int, state: TargetState) -> np.ndarray:
        return self.raw_features(t, [state])[0]

    # --- hints and export -------------------------------------------------

    def motion_hint(self, t: int) -> list[Rect] | None:
        """Stand-in for a motion detector: the true box dilated 2x, absent
        while the target is fully hidden."""
        if not self.provide_motion_hint or self.fully_occluded(t):
            return None
        s = self.target.state(t)
        return [Rect(s.cx - s.w, s.cy - s.h, s.cx + s.w, s.cy + s.h).clipped(self.bounds)]

    def export_ground_truth(self, path: str | Path) -> None:
        lines = []
        for t in range(self.frame_count):
            x, y, w, h = self.target.state(t).as_corner_tuple()
            lines.append(f"{x:.2f},{y:.2f},{w:.2f},{h:.2f}")
        Path(path).write_text("\n".join(lines) + "\n")

    # --- rendering ---------------------------------------------------------

    def _palette(self) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.seed + 1)
        bg = 0.2 + 0.3 * rng.random(3)
        target = 0.55 + 0.45 * rng.random(3)
        return bg, target

    def render_frame(self, t: int) -> np.ndarray:
        """Rasterise frame t as an (H, W, 3) image in [0, 1]."""
        bg_color, target_color = self._palette()
        h_img, w_img = int(round(self.height)), int(round(self.width))
        img = np.tile(bg_color, (h_img, w_img, 1))

        def paint(state: TargetState, color: np.ndarray) -> None:
            r = state.rect().clipped(self.bounds)
            x1, y1 = int(round(r.x1)), int(round(r.y1))
            x2, y2 = int(round(r.x2)), int(round(r.y2))
            if x2 > x1 and y2 > y1:
                img[y1:y2, x1:x2] = color

        for d in self.distractors:
            color = d.similarity * target_color + (1.0 - d.similarity) * bg_color
            paint(d.track.state(t), color)
        occluded = self.fully_occluded(t)
        if occluded:
            occ_color = (self.occluder_similarity * target_color
                         + (1.0 - self.occluder_similarity) * bg_color)
            paint(self.target.state(t), occ_color)
        else:
            paint(self.target.state(t), target_color)
        return img

    def render_sequence(self, out_dir: str | Path) -> Path:
        """Write frame_%06d.ppm files plus groundtruth.txt; returns the dir."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t in range(self.frame_count):
            write_ppm(out / f"frame_{t:06d}.ppm", self.render_frame(t))
        self.export_ground_truth(out / "groundtruth.txt")
        return out

    # --- construction -------------------------------------------------------

    @staticmethod
    def from_config(cfg: dict) -> "Scenario":
        frames = int(cfg["frames"])
        width, height = (float(v) for v in cfg["bounds"])
        tgt = cfg["target"]
        tw, th = (float(v) for v in tgt["size"])
        centers = _interp_waypoints(tgt["waypoints"], frames)
        centers[:, 0] = np.clip(centers[:, 0], tw / 2, width - tw / 2)
        centers[:, 1] = np.clip(centers[:, 1], th / 2, height - th / 2)
        target = ObjectTrack(centers=centers, w=tw, h=th)

        distractors = []
        for d in cfg.get("distractors", []) or []:
            dw, dh = (float(v) for v in d.get("size", tgt["size"]))
            track = ObjectTrack(centers=_interp_waypoints(d["waypoints"], frames),
                                w=dw, h=dh)
            sim = float(d["similarity"])
            if not 0.0 <= sim <= 1.0:
                raise ValueError(f"distractor similarity must lie in [0, 1], got {sim}")
            distractors.append(Distractor(track=track, similarity=sim))

        occlusions = [(int(a), int(b)) for a, b in (cfg.get("occlusions") or [])]
        for a, b in occlusions:
            if not 0 <= a < b <= frames:
                raise ValueError(f"occlusion interval [{a}, {b}) outside the run")

        return Scenario(
            name=str(cfg.get("name", "custom")),
            frame_count=frames,
            width=width,
            height=height,
            feature_dim=int(cfg.get("feature_dim", 20)),
            seed=int(cfg.get("seed", 0)),
            noise_std=float(cfg.get("noise_std", 0.0)),
            drift_rate=float(cfg.get("drift_rate", 0.0)),
            target=target,
            distractors=distractors,
            occlusions=occlusions,
            occluder_similarity=float(cfg.get("occluder_similarity", 0.0)),
            provide_motion_hint=bool(cfg.get("provide_motion_hint", False)),
            config=cfg,
        )

    @staticmethod
    def load(path: str | Path) -> "Scenario":
        with open(path) as f:
            cfg = yaml.safe_load(f)
        return Scenario.from_config(cfg)

    def save(self, path: str | Path) -> None:
        if self.config is None:
            raise ValueError("scenario was not built from a config")
        with open(path, "w") as f:
            yaml.safe_dump(self.config, f, sort_keys=False)


@dataclass(frozen=True)
class FrameHandle:
    """One frame of a scenario; the tracker's window onto the scene."""

    scenario: Scenario
    index: int

    @property
    def bounds(self) -> Rect:
        return self.scenario.bounds

    def raw_features(self, states: list[TargetState]) -> np.ndarray:
        return self.scenario.raw_features(self.index, states)

    def motion_hint(self) -> list[Rect] | None:
        return self.scenario.motion_hint(self.index)

    def ground_truth(self) -> tuple[TargetState, bool]:
        return self.scenario.ground_truth(self.index)


# --- built-in catalog ---------------------------------------------------

SCENARIO_ATTRIBUTES: dict[str, tuple[str, ...]] = {
    "plain": (),
    "distractor-cross": ("distractor",),
    "occlusion": ("occlusion",),
    "drift": ("deformation",),
    "fast-motion": ("fast-motion",),
}


def _base_config(name: str, frames: int, seed: int) -> dict:
    return {
        "name": name,
        "frames": frames,
        "bounds": [640.0, 480.0],
        "feature_dim": 20,
        "seed": seed,
        "noise_std": 0.03,
        "drift_rate": 0.0,
        "target": {"size": [48.0, 48.0], "waypoints": []},
        "distractors": [],
        "occlusions": [],
        "occluder_similarity": 0.0,
        "provide_motion_hint": False,
    }


def make_plain(frames: int = 200, seed: int = 7) -> Scenario:
    cfg = _base_config("plain", frames, seed)
    cfg["target"]["waypoints"] = [
        [0, 90.0, 220.0],
        [frames / 2, 90.0 + 1.9 * frames / 2, 260.0],
        [frames - 1, 90.0 + 1.9 * (frames - 1), 220.0],
    ]
    return Scenario.from_config(cfg)


def make_distractor_cross(frames: int = 200, seed: int = 11,
                          similarity: float = 0.9) -> Scenario:
    cfg = _base_config("distractor-cross", frames, seed)
    cross = frames // 2
    # Target runs left to right; the distractor runs the reverse diagonal.
    # Both paths meet exactly at the crossing frame.
    cfg["target"]["waypoints"] = [[0, 100.0, 240.0], [frames - 1, 100.0 + 2.2 * (frames - 1), 240.0]]
    mid_x = 100.0 + 2.2 * cross
    cfg["distractors"] = [{
        "similarity": similarity,
        "size": [48.0, 48.0],
        "waypoints": [[0, mid_x + 2.2 * cross, 240.0 + 1.4 * cross],
                      [cross, mid_x, 240.0],
                      [frames - 1, mid_x - 2.2 * (frames - 1 - cross),
                       240.0 - 1.4 * (frames - 1 - cross)]],
    }]
    return Scenario.from_config(cfg)


def make_occlusion(frames: int = 200, seed: int = 13,
                   occluder_similarity: float = 0.8) -> Scenario:
    cfg = _base_config("occlusion", frames, seed)
    # The target slows while it passes behind the occluders, so it re-emerges
    # within sampling reach of a tracker that froze at onset.
    cfg["target"]["waypoints"] = [
        [0, 80.0, 240.0],
        [60, 80.0 + 60 * 2.0, 240.0],
        [85, 80.0 + 60 * 2.0 + 25 * 1.0, 240.0],
        [130, 80.0 + 60 * 2.0 + 25 * 1.0 + 45 * 2.0, 240.0],
        [155, 80.0 + 60 * 2.0 + 25 * 1.0 + 45 * 2.0 + 25 * 1.0, 240.0],
        [frames - 1, 80.0 + 60 * 2.0 + 25 * 1.0 + 45 * 2.0 + 25 * 1.0
         + max(frames - 1 - 155, 0) * 2.0, 240.0],
    ]
    cfg["occlusions"] = [[60, 85], [130, 155]]
    cfg["occluder_similarity"] = occluder_similarity
    return Scenario.from_config(cfg)


def make_drift(frames: int = 200, seed: int = 17, drift_rate: float = 0.008) -> Scenario:
    cfg = _base_config("drift", frames, seed)
    cfg["drift_rate"] = drift_rate
    cfg["target"]["waypoints"] = [
        [0, 120.0, 160.0],
        [frames / 2, 120.0 + 1.6 * frames / 2, 320.0],
        [frames - 1, 120.0 + 1.6 * (frames - 1), 160.0],
    ]
    return Scenario.from_config(cfg)


def make_fast_motion(frames: int = 200, seed: int = 19, speed: float = 9.0) -> Scenario:
    cfg = _base_config("fast-motion", frames, seed)
    cfg["provide_motion_hint"] = True
    # Zig-zag sweep: large per-frame displacement, direction flips.
    wps = []
    x, y, t = 80.0, 120.0, 0
    direction = 1.0
    while t < frames:
        wps.append([t, x, y])
        steps = 40
        x = x + direction * speed * steps
        x = float(np.clip(x, 80.0, 560.0))
        y = 120.0 if y > 240.0 else 360.0
        direction = -direction
        t += steps
    wps.append([frames - 1 + 1e-9, wps[-1][1], wps[-1][2]])
    cfg["target"]["waypoints"] = wps
    return Scenario.from_config(cfg)


def builtin_scenarios() -> dict:
    """Named catalog of scenario factories; each accepts frames/seed overrides."""
    return {
        "plain": make_plain,
        "distractor-cross": make_distractor_cross,
        "occlusion": make_occlusion,
        "drift": make_drift,
        "fast-motion": make_fast_motion,
    }
