"""Shared fixtures and independent brute-force oracles for the suite."""

import numpy as np
import pytest

from lidarsplat import diagnostics


@pytest.fixture(autouse=True)
def _reset_diagnostics():
    diagnostics.reset()
    yield


# ---------------------------------------------------------------------------
# Independent oracles (never reuse library internals)
# ---------------------------------------------------------------------------


def brute_knn(positions: np.ndarray, i: int, k: int) -> np.ndarray:
    """Exhaustive k-NN: squared distances, ascending-index tie-break, self excluded."""
    d2 = ((positions - positions[i]) ** 2).sum(axis=1)
    d2[i] = np.inf
    order = np.lexsort((np.arange(len(positions)), d2))
    return order[: min(k, len(positions) - 1)]


def brute_nearest(positions: np.ndarray, query: np.ndarray) -> int:
    """Exhaustive nearest vertex for an arbitrary query point (min-id tie-break)."""
    d2 = ((positions - query) ** 2).sum(axis=1)
    best = d2.min()
    return int(np.flatnonzero(d2 == best).min())


def naive_covariance(points: np.ndarray) -> np.ndarray:
    """Two-pass mean/outer-product sample covariance with the k-1 divisor."""
    mu = points.mean(axis=0)
    acc = np.zeros((3, 3))
    for p in points:
        d = p - mu
        acc += np.outer(d, d)
    return acc / (len(points) - 1)


def naive_texture(colors: np.ndarray) -> float:
    """Average biased per-channel variance, written the slow explicit way."""
    k = len(colors)
    total = 0.0
    for m in range(3):
        mean = colors[:, m].mean()
        total += float(((colors[:, m] - mean) ** 2).sum())
    return total / (3 * k)


def ray_plane_zdepth(view, pixel_uv, plane_point: np.ndarray, plane_normal: np.ndarray) -> float:
    """Camera-frame z of the ray/plane intersection, built from world geometry."""
    u, v = pixel_uv
    ray_cam = np.array([(u - view.cx) / view.fx, (v - view.cy) / view.fy, 1.0])
    ray_world = view.rotation.T @ ray_cam
    center = view.camera_center()
    denom = float(ray_world @ plane_normal)
    s = float((plane_point - center) @ plane_normal) / denom
    return s  # ray_cam z-component is 1, so the parameter is the z-depth
