"""Synthetic scene generators: plane, cube, textured cube, sphere, camera rings.

These scenes back every geometric oracle in the test suite: flat regions
with provably zero curvature, right-angle edges with known edge bands, a
checkerboard face with known color variance, and an analytic sphere for
normal orientation checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import CameraView, look_at
from .pointcloud import PointCloud

SCENES = ("plane", "cube", "textured-cube", "sphere")


def plane_cloud(
    side_points: int = 45,
    extent: float = 1.0,
    z: float = 0.0,
    jitter: float = 0.0,
    seed: int = 0,
    color: float | None = None,
) -> PointCloud:
    """Axis-aligned square grid on the plane z=const, optional in-plane jitter."""
    axis = (np.arange(side_points) + 0.5) / side_points * (2.0 * extent) - extent
    xx, yy = np.meshgrid(axis, axis)
    pos = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, float(z))], axis=1)
    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        pos[:, :2] += rng.uniform(-jitter, jitter, size=(len(pos), 2))
    colors = None if color is None else np.full((len(pos), 3), float(color))
    return PointCloud(positions=pos, colors=colors)


def plane_interior_mask(cloud: PointCloud, extent: float, margin: float) -> np.ndarray:
    """Points farther than margin from the square boundary (in-plane)."""
    xy = np.abs(cloud.positions[:, :2])
    return (xy < extent - margin).all(axis=1)


@dataclass(frozen=True)
class CubeScene:
    """Cube-surface sample with per-point face labels and edge distances."""

    cloud: PointCloud
    face_id: np.ndarray  # 0..5: +x, -x, +y, -y, +z, -z
    dist_to_edge: np.ndarray  # in-face distance to the nearest cube edge
    spacing: float
    textured_face: int | None

    def edge_band(self, band_spacings: float = 2.0) -> np.ndarray:
        return self.dist_to_edge <= band_spacings * self.spacing


_FACE_BASES = (
    # (fixed axis, sign, u axis, v axis)
    (0, +1, 1, 2),
    (0, -1, 1, 2),
    (1, +1, 0, 2),
    (1, -1, 0, 2),
    (2, +1, 0, 1),
    (2, -1, 0, 1),
)


def cube_scene(
    side_points: int = 40,
    size: float = 1.0,
    textured_face: int | None = None,
    checker_cells: int = 8,
    base_color: float = 0.5,
    seed: int = 0,
    jitter: float = 0.0,
) -> CubeScene:
    """Surface grid over all six faces of an axis-aligned cube at the origin.

    Grids use cell centers, so faces never share duplicate edge vertices.
    When textured_face is set, that face carries a dark/light checkerboard;
    every other point is uniform base_color.
    """
    half = size / 2.0
    spacing = size / side_points
    axis = (np.arange(side_points) + 0.5) * spacing - half
    uu, vv = np.meshgrid(axis, axis)
    uu = uu.ravel()
    vv = vv.ravel()
    rng = np.random.default_rng(seed)

    pos_all, face_all, dist_all, col_all = [], [], [], []
    for face, (fixed, sign, ua, va) in enumerate(_FACE_BASES):
        pts = np.zeros((uu.size, 3))
        pts[:, fixed] = sign * half
        u = uu.copy()
        v = vv.copy()
        if jitter > 0.0:
            u = u + rng.uniform(-jitter, jitter, size=u.shape)
            v = v + rng.uniform(-jitter, jitter, size=v.shape)
        pts[:, ua] = u
        pts[:, va] = v
        pos_all.append(pts)
        face_all.append(np.full(uu.size, face))
        dist_all.append(np.minimum(half - np.abs(u), half - np.abs(v)))
        colors = np.full((uu.size, 3), base_color)
        if face == textured_face:
            cell = size / checker_cells
            parity = (np.floor((u + half) / cell) + np.floor((v + half) / cell)) % 2
            colors[:] = np.where(parity[:, None] > 0, 0.9, 0.1)
        col_all.append(colors)

    cloud = PointCloud(
        positions=np.concatenate(pos_all),
        colors=np.concatenate(col_all) if textured_face is not None else None,
    )
    return CubeScene(
        cloud=cloud,
        face_id=np.concatenate(face_all),
        dist_to_edge=np.concatenate(dist_all),
        spacing=spacing,
        textured_face=textured_face,
    )


def sphere_cloud(n: int = 2000, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> PointCloud:
    """Deterministic Fibonacci-spiral sampling of a sphere surface."""
    i = np.arange(n, dtype=np.float64)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    zz = 1.0 - 2.0 * (i + 0.5) / n
    theta = 2.0 * np.pi * i / golden
    rr = np.sqrt(np.maximum(1.0 - zz * zz, 0.0))
    pos = radius * np.stack([rr * np.cos(theta), rr * np.sin(theta), zz], axis=1)
    return PointCloud(positions=pos + np.asarray(center, dtype=np.float64))


def ring_cameras(
    n_views: int,
    radius: float,
    height: float = 0.0,
    target=(0.0, 0.0, 0.0),
    fx: float = 48.0,
    width: int = 48,
    height_px: int = 48,
) -> list[CameraView]:
    """Cameras evenly spaced on a horizontal circle, all looking at target."""
    views = []
    for i in range(n_views):
        ang = 2.0 * np.pi * i / n_views
        eye = np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        views.append(
            look_at(
                eye,
                target,
                fx=fx,
                width=width,
                height=height_px,
                name=f"view_{i:03d}",
            )
        )
    return views


def make_scene(name: str, side_points: int = 40, seed: int = 0) -> PointCloud:
    """Scene factory for the CLI."""
    if name == "plane":
        return plane_cloud(side_points=side_points, seed=seed)
    if name == "cube":
        return cube_scene(side_points=side_points, seed=seed).cloud
    if name == "textured-cube":
        return cube_scene(side_points=side_points, textured_face=4, seed=seed).cloud
    if name == "sphere":
        return sphere_cloud(n=side_points * side_points)
    raise ValueError(f"unknown scene {name!r}; expected one of {SCENES}")
