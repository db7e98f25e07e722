"""Gaussian primitives, implied normals, split scheduling, and splat PLY I/O.

The set mutates only inside densification steps; everything else treats it
as immutable, so scoring and loss evaluation can run concurrently between
densifications.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import diagnostics
from .pointcloud import NeighborIndex, PointCloud, build_neighbor_index, nearest_point
from .rotations import normalize_quat, quat_from_two_vectors, quat_to_rotmat
from .sym3 import smallest_eigvec_sym3

logger = logging.getLogger(__name__)

# DC basis constant of the community splat-PLY color encoding
SH_DC = 0.28209479177387814

SCALE_TIE_TOL = 1e-9
DEGENERATE_GAP_RTOL = 1e-9


@dataclass(frozen=True)
class Gaussian:
    """One anisotropic Gaussian primitive.

    scale holds per-axis standard deviations in meters; rotation is a unit
    quaternion (w, x, y, z). The implied covariance R diag(scale^2) R^T is
    symmetric positive definite by construction.
    """

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        scl = np.asarray(self.scale, dtype=np.float64).reshape(3)
        col = np.asarray(self.color, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(rot) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must be unit length within 1e-6")
        rot = rot / np.linalg.norm(rot)
        if not np.isfinite(scl).all() or np.any(scl <= 0.0):
            raise ValueError("scales must be positive and finite")
        if not 0.0 < self.opacity < 1.0:
            raise ValueError("opacity must lie in (0, 1)")
        if col.min() < 0.0 or col.max() > 1.0:
            raise ValueError("color must lie in [0, 1]")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "scale", scl)
        object.__setattr__(self, "color", col)


@dataclass
class GaussianSet:
    """Struct-of-arrays collection of Gaussians, optionally paired with scan normals."""

    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    lidar_normals: Optional[np.ndarray] = None

    def __post_init__(self):
        g = len(self.means)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(g, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(g, 4)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(g, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(g)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(g, 3)
        if self.lidar_normals is not None:
            self.lidar_normals = np.asarray(self.lidar_normals, dtype=np.float64).reshape(g, 3)

    def __len__(self) -> int:
        return len(self.means)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            mean=self.means[i],
            rotation=self.rotations[i],
            scale=self.scales[i],
            opacity=float(self.opacities[i]),
            color=self.colors[i],
        )

    @classmethod
    def from_gaussians(
        cls, gaussians: Sequence[Gaussian], lidar_normals: Optional[np.ndarray] = None
    ) -> "GaussianSet":
        if not gaussians:
            return cls(
                means=np.zeros((0, 3)),
                rotations=np.zeros((0, 4)),
                scales=np.zeros((0, 3)),
                opacities=np.zeros(0),
                colors=np.zeros((0, 3)),
                lidar_normals=lidar_normals,
            )
        return cls(
            means=np.stack([g.mean for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            scales=np.stack([g.scale for g in gaussians]),
            opacities=np.array([g.opacity for g in gaussians]),
            colors=np.stack([g.color for g in gaussians]),
            lidar_normals=lidar_normals,
        )

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            means=self.means.copy(),
            rotations=self.rotations.copy(),
            scales=self.scales.copy(),
            opacities=self.opacities.copy(),
            colors=self.colors.copy(),
            lidar_normals=None if self.lidar_normals is None else self.lidar_normals.copy(),
        )

    def select(self, indices) -> "GaussianSet":
        idx = np.asarray(indices)
        return GaussianSet(
            means=self.means[idx],
            rotations=self.rotations[idx],
            scales=self.scales[idx],
            opacities=self.opacities[idx],
            colors=self.colors[idx],
            lidar_normals=None if self.lidar_normals is None else self.lidar_normals[idx],
        )

    def concat(self, other: "GaussianSet") -> "GaussianSet":
        both_have = self.lidar_normals is not None and other.lidar_normals is not None
        return GaussianSet(
            means=np.concatenate([self.means, other.means]),
            rotations=np.concatenate([self.rotations, other.rotations]),
            scales=np.concatenate([self.scales, other.scales]),
            opacities=np.concatenate([self.opacities, other.opacities]),
            colors=np.concatenate([self.colors, other.colors]),
            lidar_normals=(
                np.concatenate([self.lidar_normals, other.lidar_normals]) if both_have else None
            ),
        )


@dataclass(frozen=True)
class SplitSchedule:
    """Linear coarse-to-fine curvature threshold over a training run."""

    total_iters: int
    theta_start: float = 0.1
    theta_end: float = 0.3

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be positive")


# ---------------------------------------------------------------------------
# Geometry ops
# ---------------------------------------------------------------------------


def covariance_of(g: Gaussian) -> np.ndarray:
    """World-frame covariance R diag(scale^2) R^T."""
    rot = quat_to_rotmat(g.rotation)
    return (rot * (g.scale**2)) @ rot.T


def _canonical_sign(vecs: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude component is positive."""
    vecs = np.atleast_2d(vecs)
    lead = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), lead])
    signs[signs == 0.0] = 1.0
    return vecs * signs[:, None]


def gaussian_normal(g: Gaussian) -> np.ndarray:
    """Surface normal implied by the Gaussian: its thinnest principal axis.

    Equals the smallest-eigenvalue eigenvector of the covariance; ties
    between the two smallest scales are broken by axis order and counted.
    """
    order = np.argsort(g.scale, kind="stable")
    if abs(g.scale[order[0]] - g.scale[order[1]]) <= SCALE_TIE_TOL:
        diagnostics.record("gaussian_normal_scale_tie")
    axis = int(np.argmin(g.scale))
    vec = quat_to_rotmat(g.rotation)[:, axis]
    return _canonical_sign(vec)[0]


def gaussian_normals(gset: GaussianSet) -> np.ndarray:
    """Batch of Gaussian-implied normals, canonical sign per row."""
    if len(gset) == 0:
        return np.zeros((0, 3))
    rots = quat_to_rotmat(gset.rotations)
    axes = np.argmin(gset.scales, axis=1)
    vecs = rots[np.arange(len(gset)), :, axes]
    srt = np.sort(gset.scales, axis=1)
    ties = int(np.count_nonzero(srt[:, 1] - srt[:, 0] <= SCALE_TIE_TOL))
    if ties:
        diagnostics.record("gaussian_normal_scale_tie", ties)
    return _canonical_sign(vecs)


def online_curvature(gset: GaussianSet, k: int, epsilon: float = 1e-12) -> np.ndarray:
    """Curvature of the evolving Gaussian set, evaluated on its means.

    Same neighborhood-covariance formulation as the cloud scorer, so results
    are bit-identical to scoring an identical point set.
    """
    if len(gset) < k + 1:
        raise ValueError(f"online curvature needs at least k+1={k + 1} Gaussians, got {len(gset)}")
    from .complexity import curvature_scores  # local import to avoid a cycle

    cloud = PointCloud(positions=gset.means)
    index = build_neighbor_index(cloud, k_default=k)
    return curvature_scores(cloud, index, k, epsilon)


def split_threshold(t: int, sched: SplitSchedule) -> float:
    """Linearly scheduled split threshold; t outside [0, T] is clamped."""
    tt = t
    if tt < 0 or tt > sched.total_iters:
        logger.warning("split_threshold: iteration %d clamped to [0, %d]", tt, sched.total_iters)
        tt = min(max(tt, 0), sched.total_iters)
    u = tt / sched.total_iters
    return sched.theta_start * (1.0 - u) + sched.theta_end * u


def select_split_candidates(
    curvatures: np.ndarray,
    grad_flags: np.ndarray,
    t: int,
    sched: SplitSchedule,
) -> np.ndarray:
    """Ids whose gradient flag is set AND whose curvature clears the schedule.

    The caller-supplied grad_flags carry the photometric densification
    signal; curvature gates it rather than replacing it.
    """
    curvatures = np.asarray(curvatures, dtype=np.float64)
    grad_flags = np.asarray(grad_flags, dtype=bool)
    if curvatures.shape != grad_flags.shape:
        raise ValueError(f"length mismatch: {curvatures.shape} vs {grad_flags.shape}")
    theta = split_threshold(t, sched)
    return np.flatnonzero(grad_flags & (curvatures > theta))


def split_gaussian(g: Gaussian, seed: int) -> tuple[Gaussian, Gaussian]:
    """Split one Gaussian into two children (caller removes the parent).

    Child means are drawn from the parent's own density; scales shrink by
    1.6; rotation, opacity and color are copied.
    """
    rng = np.random.default_rng(seed)
    rot = quat_to_rotmat(g.rotation)
    z = rng.standard_normal((2, 3))
    means = g.mean + (rot @ (g.scale[:, None] * z.T)).T
    child_scale = g.scale / 1.6
    return tuple(
        Gaussian(mean=means[i], rotation=g.rotation, scale=child_scale, opacity=g.opacity, color=g.color)
        for i in range(2)
    )


def associate_lidar_normals(
    gset: GaussianSet,
    cloud: PointCloud,
    index: NeighborIndex | None = None,
) -> GaussianSet:
    """Attach to each Gaussian the normal of its nearest scan point."""
    if cloud.normals is None:
        raise ValueError("cloud has no normals to associate")
    if index is None:
        index = build_neighbor_index(cloud)
    ids = nearest_point(index, gset.means)
    out = gset.copy()
    out.lidar_normals = cloud.normals[ids].copy()
    return out


def estimate_point_normals(
    cloud: PointCloud,
    k: int,
    viewpoint: np.ndarray | None = None,
    orient: str = "toward",
    index: NeighborIndex | None = None,
) -> PointCloud:
    """PCA normals: smallest-eigenvector of each k-NN neighborhood covariance.

    With a viewpoint, signs are flipped so normals face it (orient="toward")
    or face away from it (orient="away", the exterior convention for a scan
    taken from inside); otherwise the largest component is made positive.
    Degenerate neighborhoods fall back to (0, 0, 1) and are counted.
    """
    if orient not in ("toward", "away"):
        raise ValueError("orient must be 'toward' or 'away'")
    if k < 2:
        raise ValueError("normal estimation needs k >= 2 neighbors")
    n = cloud.count
    if n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points, got {n}")
    if index is None:
        index = build_neighbor_index(cloud, k_default=k)

    from .complexity import _covariance_rows  # shared covariance kernel
    from .pointcloud import knn_rows

    ids = knn_rows(index, np.arange(n), min(k, n - 1))
    covs = _covariance_rows(cloud.positions, ids)
    normals, degenerate = smallest_eigvec_sym3(covs, gap_rtol=DEGENERATE_GAP_RTOL)

    n_bad = int(np.count_nonzero(degenerate))
    if n_bad:
        diagnostics.record("degenerate_normal", n_bad)
        normals[degenerate] = (0.0, 0.0, 1.0)

    if viewpoint is not None:
        to_view = np.asarray(viewpoint, dtype=np.float64) - cloud.positions
        dots = np.einsum("ij,ij->i", normals, to_view)
        want_neg = dots < 0.0 if orient == "toward" else dots > 0.0
        normals[want_neg] = -normals[want_neg]
    else:
        normals = _canonical_sign(normals)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals)


def normal_alignment_loss(gset: GaussianSet) -> float:
    """Mean angular misalignment 1 - |n_gs . n_scan|; sign-flip invariant, in [0, 1]."""
    if gset.lidar_normals is None:
        raise ValueError("Gaussian set has no associated scan normals")
    if len(gset) == 0:
        raise ValueError("empty Gaussian set")
    ngs = gaussian_normals(gset)
    dots = np.abs(np.einsum("ij,ij->i", ngs, gset.lidar_normals))
    return float(np.mean(1.0 - np.minimum(dots, 1.0)))


# ---------------------------------------------------------------------------
# Splat PLY serialization
# ---------------------------------------------------------------------------

_SPLAT_FIELDS = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p / (1.0 - p))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def save_gaussian_set(gset: GaussianSet, path, sidecar: dict | None = None) -> None:
    """Write the conventional splat PLY plus a JSON sidecar with run state.

    Scales are stored as logs, opacities as logits, colors as DC-basis
    coefficients, all float32 binary little-endian.
    """
    path = Path(path)
    g = len(gset)
    cols = {name: np.zeros(g, dtype="<f4") for name in _SPLAT_FIELDS}
    for i, name in enumerate(("x", "y", "z")):
        cols[name] = gset.means[:, i].astype("<f4")
    for i in range(3):
        cols[f"f_dc_{i}"] = ((gset.colors[:, i] - 0.5) / SH_DC).astype("<f4")
    cols["opacity"] = _logit(gset.opacities).astype("<f4")
    for i in range(3):
        cols[f"scale_{i}"] = np.log(gset.scales[:, i]).astype("<f4")
    for i in range(4):
        cols[f"rot_{i}"] = gset.rotations[:, i].astype("<f4")

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {g}"]
    header += [f"property float {name}" for name in _SPLAT_FIELDS]
    header.append("end_header")

    rec = np.empty(g, dtype=np.dtype([(name, "<f4") for name in _SPLAT_FIELDS]))
    for name in _SPLAT_FIELDS:
        rec[name] = cols[name]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())

    side = dict(sidecar or {})
    side.setdefault("count", g)
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load_gaussian_set(path) -> tuple[GaussianSet, dict]:
    """Read a splat PLY written by save_gaussian_set (sidecar optional)."""
    from .pointcloud import PlyParseError, _parse_ply_header

    path = Path(path)
    if not path.exists():
        raise PlyParseError(f"{path}: file does not exist")
    raw = path.read_bytes()
    fmt, elements, body = _parse_ply_header(raw, path)
    if fmt != "binary_little_endian":
        raise PlyParseError(f"{path}: splat PLY must be binary little-endian")
    if not elements or elements[0][0] != "vertex":
        raise PlyParseError(f"{path}: first element must be 'vertex'")
    _, count, props = elements[0]
    names = [p for p, _ in props]
    for needed in _SPLAT_FIELDS:
        if needed not in names:
            raise PlyParseError(f"{path}: splat PLY lacks property {needed!r}")
    dtype = np.dtype([(p, "<f4") for p, _ in props])
    table = np.frombuffer(body[: dtype.itemsize * count], dtype=dtype, count=count)

    means = np.stack([table[c].astype(np.float64) for c in ("x", "y", "z")], axis=1)
    colors = np.clip(
        np.stack([table[f"f_dc_{i}"].astype(np.float64) for i in range(3)], axis=1) * SH_DC + 0.5,
        0.0,
        1.0,
    )
    opacities = _sigmoid(np.stack([table["opacity"].astype(np.float64)], axis=1)).reshape(-1)
    scales = np.exp(np.stack([table[f"scale_{i}"].astype(np.float64) for i in range(3)], axis=1))
    rotations = np.stack([table[f"rot_{i}"].astype(np.float64) for i in range(4)], axis=1)
    rotations = normalize_quat(rotations)

    gset = GaussianSet(
        means=means, rotations=rotations, scales=scales, opacities=opacities, colors=colors
    )
    sidecar_path = path.with_suffix(".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return gset, sidecar


def init_gaussians_from_cloud(
    cloud: PointCloud,
    opacity: float = 0.5,
    thin_ratio: float = 0.1,
    scale: float | None = None,
    index: NeighborIndex | None = None,
) -> GaussianSet:
    """Seed one planar Gaussian per point, thin axis along the point normal.

    In-plane stddev defaults to the mean nearest-neighbor spacing; clouds
    without normals get +z-aligned disks.
    """
    from .pointcloud import knn_rows

    n = cloud.count
    if n < 2:
        raise ValueError("need at least 2 points to initialize")
    if index is None:
        index = build_neighbor_index(cloud)
    if scale is None:
        nn = knn_rows(index, np.arange(n), 1)[:, 0]
        spacing = np.linalg.norm(cloud.positions - cloud.positions[nn], axis=1)
        scale = float(np.mean(spacing))
        if scale <= 0.0:
            raise ValueError("degenerate cloud: zero nearest-neighbor spacing")

    normals = cloud.normals if cloud.normals is not None else np.tile((0.0, 0.0, 1.0), (n, 1))
    rotations = np.stack(
        [quat_from_two_vectors(np.array([0.0, 0.0, 1.0]), normals[i]) for i in range(n)]
    )
    scales = np.tile((scale, scale, scale * thin_ratio), (n, 1))
    colors = cloud.colors if cloud.colors is not None else np.full((n, 3), 0.5)
    return GaussianSet(
        means=cloud.positions.copy(),
        rotations=rotations,
        scales=scales,
        opacities=np.full(n, opacity),
        colors=colors.copy(),
        lidar_normals=None if cloud.normals is None else cloud.normals.copy(),
    )
