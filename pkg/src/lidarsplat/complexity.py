"""Per-point geometric/appearance complexity scoring and budgeted sampling.

Geometric complexity is the smallest-eigenvalue fraction of the local
neighborhood covariance (a surface-variation proxy in [0, 1/3]); appearance
complexity is the mean per-channel color variance over the neighborhood.
Both are min-max normalized over the whole cloud, blended into a sampling
distribution, and a fixed budget of points is drawn without replacement via
exponential-key weighted reservoir sampling.

Scoring is embarrassingly parallel over chunks; sampling is single-threaded
once scores are gathered so fixed seeds reproduce bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pointcloud import NeighborIndex, PointCloud, build_neighbor_index, chunk_iterate, knn_rows
from .sym3 import eigvals_sym3

CURVATURE_MAX = 1.0 / 3.0


@dataclass(frozen=True)
class AllocationConfig:
    """Knobs for complexity scoring and budget sampling."""

    k: int = 64
    alpha: float = 0.5
    beta: float = 0.5
    epsilon: float = 1e-12
    budget_m: int = 3_000_000
    seed: int = 0
    chunk_size: int = 65536

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ValueError("alpha and beta must lie in [0, 1]")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError("alpha + beta must equal 1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.budget_m < 1:
            raise ValueError("budget_m must be positive")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")


@dataclass(frozen=True)
class ComplexityField:
    """Per-point scores: raw curvature/texture, normalized forms, probabilities."""

    curvature: np.ndarray
    texture: Optional[np.ndarray]
    curvature_norm: np.ndarray
    texture_norm: Optional[np.ndarray]
    probabilities: np.ndarray

    def __post_init__(self):
        n = len(self.curvature)
        for name in ("texture", "curvature_norm", "texture_norm", "probabilities"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} length {len(arr)} != {n}")
        if self.curvature.size:
            if self.curvature.min() < 0.0 or self.curvature.max() > CURVATURE_MAX + 1e-9:
                raise ValueError("curvature outside [0, 1/3]")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        if self.probabilities.min() < 0.0:
            raise ValueError("probabilities must be non-negative")


def local_covariance(cloud: PointCloud, neighbor_ids) -> np.ndarray:
    """Sample covariance of a neighborhood about its own centroid.

    Uses the k-1 divisor, so the neighborhood needs at least 2 points.
    """
    ids = np.asarray(neighbor_ids, dtype=np.int64)
    if ids.size < 2:
        raise ValueError(f"degenerate neighborhood: need k >= 2 points, got {ids.size}")
    return _covariance_rows(cloud.positions, ids[None, :])[0]


def _covariance_rows(positions: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Batch covariance for (m, k) neighbor rows -> (m, 3, 3)."""
    nb = positions[ids]
    mu = nb.mean(axis=1)
    d = nb - mu[:, None, :]
    return np.einsum("nki,nkj->nij", d, d) / (ids.shape[1] - 1)


def curvature(cov: np.ndarray, epsilon: float = 1e-12) -> float:
    """Smallest-eigenvalue fraction of a symmetric PSD 3x3 covariance.

    Result lies in [0, 1/3]: the smallest eigenvalue can never exceed the
    mean of all three.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (3, 3):
        raise ValueError(f"covariance must be 3x3, got {cov.shape}")
    scale = max(float(np.abs(cov).max()), 1.0)
    if float(np.abs(cov - cov.T).max()) > 1e-9 * scale:
        raise ValueError("covariance must be symmetric")
    return float(_curvature_from_cov(cov[None], epsilon)[0])


def _curvature_from_cov(covs: np.ndarray, epsilon: float) -> np.ndarray:
    lam = np.clip(eigvals_sym3(covs), 0.0, None)
    return lam[..., 0] / (lam.sum(axis=-1) + epsilon)


def texture_complexity(colors) -> float:
    """Mean per-channel color variance over a neighborhood (biased, 1/k)."""
    c = np.asarray(colors, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 1:
        raise ValueError(f"need a non-empty (k, 3) color array, got {c.shape}")
    return float(_texture_rows(c[None])[0])


def _texture_rows(colors: np.ndarray) -> np.ndarray:
    d = colors - colors.mean(axis=1)[:, None, :]
    return (d * d).sum(axis=(1, 2)) / (3 * colors.shape[1])


def normalize_scores(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant array maps to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("cannot normalize an empty array")
    if not np.isfinite(raw).all():
        raise ValueError("scores contain non-finite entries")
    lo = raw.min()
    span = raw.max() - lo
    if span == 0.0:
        return np.zeros_like(raw)
    return (raw - lo) / span


def allocation_probabilities(
    khat: np.ndarray,
    that: Optional[np.ndarray],
    cfg: AllocationConfig,
) -> np.ndarray:
    """Blend normalized scores into a sampling distribution.

    Clouds without colors contribute a zero texture term; a zero denominator
    falls back to the uniform distribution.
    """
    khat = np.asarray(khat, dtype=np.float64)
    n = len(khat)
    if that is None:
        that = np.zeros(n)
    else:
        that = np.asarray(that, dtype=np.float64)
        if len(that) != n:
            raise ValueError(f"score length mismatch: {n} vs {len(that)}")
    for name, arr in (("curvature", khat), ("texture", that)):
        if arr.size and (arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12):
            raise ValueError(f"normalized {name} scores must lie in [0, 1]")
    raw = cfg.alpha * khat + cfg.beta * that
    total = raw.sum()
    if total <= 0.0:
        return np.full(n, 1.0 / n)
    return raw / total


def curvature_scores(
    cloud: PointCloud,
    index: NeighborIndex,
    k: int,
    epsilon: float = 1e-12,
    chunk_size: int = 65536,
) -> np.ndarray:
    """Per-point curvature over k-NN neighborhoods, computed chunk-wise."""
    n = cloud.count
    k_eff = min(k, n - 1)
    if k_eff < 2:
        raise ValueError(f"need at least 3 points for curvature, got {n}")
    out = np.empty(n)
    for start, stop in chunk_iterate(cloud, chunk_size):
        ids = knn_rows(index, np.arange(start, stop), k_eff)
        covs = _covariance_rows(cloud.positions, ids)
        out[start:stop] = _curvature_from_cov(covs, epsilon)
    return out


def compute_complexity_field(
    cloud: PointCloud,
    cfg: AllocationConfig,
    index: NeighborIndex | None = None,
    chunk_size: int | None = None,
) -> ComplexityField:
    """Score the whole cloud and derive allocation probabilities."""
    if index is None:
        index = build_neighbor_index(cloud, k_default=cfg.k)
    chunk = cfg.chunk_size if chunk_size is None else chunk_size
    n = cloud.count
    k_eff = min(cfg.k, n - 1)
    if k_eff < 2:
        raise ValueError(f"need at least 3 points for complexity scoring, got {n}")

    kappa = np.empty(n)
    tau = np.empty(n) if cloud.colors is not None else None
    for start, stop in chunk_iterate(cloud, chunk):
        ids = knn_rows(index, np.arange(start, stop), k_eff)
        covs = _covariance_rows(cloud.positions, ids)
        kappa[start:stop] = _curvature_from_cov(covs, cfg.epsilon)
        if tau is not None:
            tau[start:stop] = _texture_rows(cloud.colors[ids])

    khat = normalize_scores(kappa)
    that = None if tau is None else normalize_scores(tau)
    probs = allocation_probabilities(khat, that, cfg)
    return ComplexityField(
        curvature=kappa,
        texture=tau,
        curvature_norm=khat,
        texture_norm=that,
        probabilities=probs,
    )


def sample_indices(probs: np.ndarray, m: int, seed: int) -> np.ndarray:
    """Draw m distinct indices without replacement, weighted by probs.

    Exponential-key weighted reservoir sampling: key_i = -log(u_i) / p_i,
    smallest m keys win. Zero-probability points carry infinite keys and are
    picked (by ascending index) only when fewer than m positive-probability
    points exist. Deterministic under a fixed seed.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n = len(probs)
    if not 1 <= m <= n:
        raise ValueError(f"budget m={m} must lie in [1, {n}]")
    if probs.min() < 0.0:
        raise ValueError("probabilities must be non-negative")
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    with np.errstate(divide="ignore"):
        keys = -np.log(u) / np.where(probs > 0.0, probs, 1.0)
    keys[probs <= 0.0] = np.inf
    order = np.argsort(keys, kind="stable")
    return np.sort(order[:m])


def sample_budget(cloud: PointCloud, probs: np.ndarray, m: int, seed: int) -> PointCloud:
    """Sample a budgeted sub-cloud of exactly m distinct points."""
    if len(probs) != cloud.count:
        raise ValueError(f"probs length {len(probs)} != cloud size {cloud.count}")
    return cloud.select(sample_indices(probs, m, seed))
