"""Patch features: joint color histograms and PCA dimensionality reduction."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import TargetState

ORTHONORMALITY_TOL = 1e-8


@dataclass(frozen=True)
class FeatureProjector:
    """Linear map x -> basis.T @ (x - mean), with orthonormal basis columns."""

    mean: np.ndarray
    basis: np.ndarray  # (input_dim, output_dim), columns orthonormal
    explained_variance: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[1]


def color_histogram(pixels: np.ndarray, bins_per_channel: int) -> np.ndarray:
    """Joint RGB histogram of an (H, W, 3) patch with values in [0, 1].

    Returns a vector of length bins_per_channel**3 that sums to 1.
    """
    if bins_per_channel < 2:
        raise ValueError("bins_per_channel must be >= 2")
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
        raise ValueError(f"expected a non-empty (H, W, 3) patch, got shape {px.shape}")
    b = bins_per_channel
    idx = np.clip((px * b).astype(np.int64), 0, b - 1)
    flat = (idx[..., 0] * b + idx[..., 1]) * b + idx[..., 2]
    hist = np.bincount(flat.ravel(), minlength=b ** 3).astype(np.float64)
    return hist / hist.sum()


def pca_fit(data: np.ndarray, target_dim: int) -> FeatureProjector:
    """Fit a PCA projector onto the top `target_dim` principal directions.

    Uses the SVD of the mean-centered data matrix. The sign of each basis
    column is fixed (largest-magnitude entry positive) so the fit is
    deterministic for a fixed input ordering.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a (n_samples, dim) matrix, got shape {X.shape}")
    n, d_in = X.shape
    if target_dim > d_in:
        raise ValueError(f"target_dim {target_dim} exceeds input dimension {d_in}")
    if n < target_dim + 1:
        raise ValueError(f"need at least target_dim + 1 = {target_dim + 1} samples, got {n}")
    mean = X.mean(axis=0)
    centered = X - mean
    # Right singular vectors of the centered data are the principal directions.
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:target_dim].T.copy()
    for j in range(basis.shape[1]):
        pivot = np.argmax(np.abs(basis[:, j]))
        if basis[pivot, j] < 0:
            basis[:, j] = -basis[:, j]
    variance = (svals[:target_dim] ** 2) / max(n - 1, 1)
    gram = basis.T @ basis
    if not np.allclose(gram, np.eye(target_dim), atol=ORTHONORMALITY_TOL):
        raise AssertionError("PCA basis failed the orthonormality check")
    return FeatureProjector(mean=mean, basis=basis, explained_variance=variance)


def project(projector: FeatureProjector, x: np.ndarray) -> np.ndarray:
    """Project a raw vector (or a (n, input_dim) batch) into feature space."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != projector.input_dim:
        raise ValueError(
            f"input has dimension {arr.shape[-1]}, projector expects {projector.input_dim}")
    return (arr - projector.mean) @ projector.basis


def reconstruct(projector: FeatureProjector, z: np.ndarray) -> np.ndarray:
    """Map a projected vector back to the input space (lossy for d < D)."""
    return projector.mean + np.asarray(z, dtype=np.float64) @ projector.basis.T


def crop_patch(image: np.ndarray, state: TargetState) -> np.ndarray:
    """Integer-grid crop of a box from an (H, W, 3) image, clipped to bounds.

    Degenerate boxes fall back to a single pixel so a histogram always exists.
    """
    h_img, w_img = image.shape[:2]
    r = state.rect()
    x1 = int(np.clip(np.floor(r.x1), 0, w_img - 1))
    y1 = int(np.clip(np.floor(r.y1), 0, h_img - 1))
    x2 = int(np.clip(np.ceil(r.x2), x1 + 1, w_img))
    y2 = int(np.clip(np.ceil(r.y2), y1 + 1, h_img))
    return image[y1:y2, x1:x2]


# --- PPM (P6, 8-bit) frame files -------------------------------------------

_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 PPM into an (H, W, 3) float array in [0, 1]."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _PPM_TOKEN.match(raw, pos)
        if not m:
            raise ValueError(f"{path}: truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary P6 PPM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPMs supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height * 3, offset=pos)
    if data.size != width * height * 3:
        raise ValueError(f"{path}: pixel data truncated")
    return data.reshape(height, width, 3).astype(np.float64) / 255.0


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float array in [0, 1] as a binary P6 PPM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    payload = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(payload.tobytes())
