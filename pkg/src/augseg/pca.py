"""Principal components of feature maps by deflated power iteration.

Each spatial location of a [1,C,H,W] map is treated as a C-vector; the
top-k eigenvectors of the mean-centered covariance are found one at a
time by power iteration with deflation, so only k matrix-vector products
per step are needed rather than a full eigendecomposition.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

POWER_TOL = 1e-8
POWER_MAX_ITER = 1000


def _power_iteration(cov: np.ndarray, rng) -> tuple:
    """Dominant (eigenvalue, eigenvector) of a symmetric PSD matrix."""
    v = rng.normal(size=cov.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(POWER_MAX_ITER):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < 1e-30:
            return 0.0, v
        w /= norm
        if np.linalg.norm(w - v) < POWER_TOL:
            v = w
            break
        v = w
    lam = float(v @ cov @ v)
    # deterministic sign: largest-magnitude entry is positive
    pivot = int(np.argmax(np.abs(v)))
    if v[pivot] < 0:
        v = -v
    return lam, v


def feature_pca(feature_map: np.ndarray, k: int = 3, seed: int = 0):
    """Project per-location feature vectors onto their top-k components.

    feature_map: [1,C,H,W] or [C,H,W] with C >= k.  Returns
    (scores [H,W,k], eigenvalues [k], components [k,C]).  A zero-variance
    map yields all-zero scores and eigenvalues.
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim == 4:
        if fm.shape[0] != 1:
            raise ContractError("feature_pca expects a single map")
        fm = fm[0]
    if fm.ndim != 3:
        raise ContractError("feature map must be [1,C,H,W] or [C,H,W]")
    c, h, w = fm.shape
    if c < k:
        raise ContractError(f"need at least k={k} channels, got {c}")
    x = fm.reshape(c, h * w).T                  # [P, C] location vectors
    x = x - x.mean(axis=0, keepdims=True)
    cov = (x.T @ x) / max(x.shape[0] - 1, 1)
    rng = np.random.default_rng(seed)
    eigvals = np.zeros(k)
    comps = np.zeros((k, c))
    deflated = cov.copy()
    for i in range(k):
        lam, v = _power_iteration(deflated, rng)
        eigvals[i] = lam
        comps[i] = v
        deflated = deflated - lam * np.outer(v, v)
    scores = x @ comps.T                         # [P, k]
    return scores.reshape(h, w, k), eigvals, comps


def pca_to_image(scores: np.ndarray, eigvals: np.ndarray) -> np.ndarray:
    """Min-max normalize each component to [0, 255]; flat gray if degenerate."""
    h, w, k = scores.shape
    out = np.full((h, w, k), 128, dtype=np.uint8)
    for i in range(k):
        comp = scores[:, :, i]
        span = comp.max() - comp.min()
        if eigvals[i] <= 1e-12 or span <= 1e-12:
            continue
        out[:, :, i] = np.round((comp - comp.min()) / span * 255).astype(np.uint8)
    return out
