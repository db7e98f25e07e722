"""CPU forward renderer for planar Gaussians: unbiased depth plus composited color.

Each Gaussian is treated as a local surface plane (thinnest principal axis =
normal, oriented away from the camera so the plane-to-camera distance is
positive). Per pixel, contributions are depth-sorted front to back along the
ray and blended with transmittance weights w_i = alpha_i(p) * prod_{j<i}
(1 - alpha_j(p)). The depth estimate

    D(p) = sum_i w_i * dist_i / sum_i w_i * (n_i . K^-1 p~)

is the exact ray-plane z for a single contributor: the weight cancels in the
ratio, so depth sits on the surface regardless of opacity. A raw-alpha
weighting (no transmittance) is available behind weight_mode for comparison.

The rasterizer loops over 16x16 image tiles; the Gaussian set and view are
read-only during a render, so tiles are independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import diagnostics
from .cameras import CameraView, DepthMap
from .rotations import quat_to_rotmat
from .splats import GaussianSet, Gaussian, gaussian_normals

TILE = 16
ALPHA_MAX = 0.999
ALPHA_CUTOFF = 1.0 / 255.0
DENOM_EPS = 1e-9
EPS2D_FLOOR = 0.3  # px^2 isotropic low-pass on the projected covariance
RADIUS_SIGMA = 3.5  # bounding radius; alpha at 3.5 sigma is below the cutoff


@dataclass(frozen=True)
class PlanarSplat:
    """Screen-space footprint and surface plane of one projected Gaussian."""

    normal_cam: np.ndarray  # unit plane normal, camera frame, faces away from camera
    plane_distance: float  # camera-origin distance along the normal, meters
    mean_px: np.ndarray  # projected center (u, v)
    conic: np.ndarray  # (2, 2) inverse of the projected 2-D covariance
    opacity: float


@dataclass(frozen=True)
class RenderedFrame:
    depth: DepthMap
    color: np.ndarray  # (H, W, 3) in [0, 1]
    contributors: np.ndarray  # (H, W) int


class _SplatBatch:
    """Per-view, camera-frame arrays for every non-culled Gaussian."""

    __slots__ = ("mean_px", "normal", "dist", "conic", "opacity", "color", "radius")

    def __init__(self, mean_px, normal, dist, conic, opacity, color, radius):
        self.mean_px = mean_px
        self.normal = normal
        self.dist = dist
        self.conic = conic  # (S, 3): (a, b, c) of [[a, b], [b, c]]
        self.opacity = opacity
        self.color = color
        self.radius = radius

    def __len__(self):
        return len(self.dist)


def _project_batch(gset: GaussianSet, view: CameraView) -> _SplatBatch:
    g = len(gset)
    empty = _SplatBatch(*(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros(0)))
    if g == 0:
        return empty
    means_cam = gset.means @ view.rotation.T + view.translation
    z = means_cam[:, 2]
    front = z > 1e-9
    if not front.any():
        return empty

    normals_w = gaussian_normals(gset)
    normals_cam = normals_w @ view.rotation.T
    dist = np.einsum("ij,ij->i", normals_cam, means_cam)
    flip = dist < 0.0
    normals_cam[flip] = -normals_cam[flip]
    dist = np.abs(dist)
    keep = front & (dist > 1e-12)
    if not keep.any():
        return empty

    means_cam = means_cam[keep]
    z = means_cam[:, 2]
    normals_cam = normals_cam[keep]
    dist = dist[keep]

    u = view.fx * means_cam[:, 0] / z + view.cx
    v = view.fy * means_cam[:, 1] / z + view.cy
    mean_px = np.stack([u, v], axis=1)

    rots = quat_to_rotmat(gset.rotations[keep])
    s2 = gset.scales[keep] ** 2
    cov_w = np.einsum("nij,nj,nkj->nik", rots, s2, rots)
    cov_cam = view.rotation @ cov_w @ view.rotation.T

    # first-order (Jacobian) perspective approximation of the 2-D footprint
    zinv = 1.0 / z
    jac = np.zeros((len(z), 2, 3))
    jac[:, 0, 0] = view.fx * zinv
    jac[:, 0, 2] = -view.fx * means_cam[:, 0] * zinv * zinv
    jac[:, 1, 1] = view.fy * zinv
    jac[:, 1, 2] = -view.fy * means_cam[:, 1] * zinv * zinv
    cov2 = jac @ cov_cam @ np.transpose(jac, (0, 2, 1))
    cov2[:, 0, 0] += EPS2D_FLOOR
    cov2[:, 1, 1] += EPS2D_FLOOR

    a = cov2[:, 0, 0]
    b = 0.5 * (cov2[:, 0, 1] + cov2[:, 1, 0])
    c = cov2[:, 1, 1]
    det = a * c - b * b
    ok = det > 1e-18
    inv_det = np.where(ok, det, 1.0) ** -1
    conic = np.stack([c * inv_det, -b * inv_det, a * inv_det], axis=1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = RADIUS_SIGMA * np.sqrt(np.maximum(lam_max, 0.0))

    return _SplatBatch(
        mean_px=mean_px[ok],
        normal=normals_cam[ok],
        dist=dist[ok],
        conic=conic[ok],
        opacity=np.minimum(gset.opacities[keep][ok], ALPHA_MAX),
        color=gset.colors[keep][ok],
        radius=radius[ok],
    )


def plane_params(g: Gaussian, view: CameraView) -> Optional[PlanarSplat]:
    """Plane and footprint of one Gaussian, or None when culled (behind camera)."""
    single = GaussianSet.from_gaussians([g])
    batch = _project_batch(single, view)
    if len(batch) == 0:
        return None
    conic = np.array(
        [[batch.conic[0, 0], batch.conic[0, 1]], [batch.conic[0, 1], batch.conic[0, 2]]]
    )
    return PlanarSplat(
        normal_cam=batch.normal[0],
        plane_distance=float(batch.dist[0]),
        mean_px=batch.mean_px[0],
        conic=conic,
        opacity=float(batch.opacity[0]),
    )


def splat_alpha(splat: PlanarSplat, pixel) -> float:
    """Effective per-pixel opacity of one splat, clamped below 0.999.

    Values under 1/255 are treated as non-contributing by the rasterizer.
    """
    d = np.asarray(pixel, dtype=np.float64) - splat.mean_px
    q = float(d @ splat.conic @ d)
    return float(min(splat.opacity * np.exp(-0.5 * q), ALPHA_MAX))


def render_frame(
    gset: GaussianSet,
    view: CameraView,
    weight_mode: str = "transmittance",
) -> RenderedFrame:
    """Rasterize depth, color, and contributor counts for one view."""
    if weight_mode not in ("transmittance", "raw"):
        raise ValueError("weight_mode must be 'transmittance' or 'raw'")
    h, w = view.height, view.width
    depth = np.zeros((h, w))
    color = np.zeros((h, w, 3))
    contributors = np.zeros((h, w), dtype=np.int64)
    valid = np.zeros((h, w), dtype=bool)

    batch = _project_batch(gset, view)
    if len(batch) == 0:
        return RenderedFrame(DepthMap(depth=depth, valid=valid), color, contributors)

    u0 = batch.mean_px[:, 0] - batch.radius
    u1 = batch.mean_px[:, 0] + batch.radius
    v0 = batch.mean_px[:, 1] - batch.radius
    v1 = batch.mean_px[:, 1] + batch.radius

    # per-frame pixel-center and ray-direction grids, sliced per tile
    pu_full, pv_full = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ray_x_full = (pu_full - view.cx) / view.fx
    ray_y_full = (pv_full - view.cy) / view.fy

    n_zero_denom = 0
    for ty in range(0, h, TILE):
        for tx in range(0, w, TILE):
            te_y = min(ty + TILE, h)
            te_x = min(tx + TILE, w)
            sel = np.flatnonzero(
                (u1 >= tx - 0.5) & (u0 <= te_x - 0.5) & (v1 >= ty - 0.5) & (v0 <= te_y - 0.5)
            )
            if sel.size == 0:
                continue
            ys, xs = slice(ty, te_y), slice(tx, te_x)

            du = pu_full[None, ys, xs] - batch.mean_px[sel, 0, None, None]
            dv = pv_full[None, ys, xs] - batch.mean_px[sel, 1, None, None]
            quad = (
                batch.conic[sel, 0, None, None] * du * du
                + 2.0 * batch.conic[sel, 1, None, None] * du * dv
                + batch.conic[sel, 2, None, None] * dv * dv
            )
            alpha = np.minimum(batch.opacity[sel, None, None] * np.exp(-0.5 * quad), ALPHA_MAX)

            nrm = batch.normal[sel]
            ndot = (
                nrm[:, 0, None, None] * ray_x_full[None, ys, xs]
                + nrm[:, 1, None, None] * ray_y_full[None, ys, xs]
                + nrm[:, 2, None, None]
            )
            live = (alpha >= ALPHA_CUTOFF) & (ndot > 1e-12)
            if not live.any():
                continue
            alpha = np.where(live, alpha, 0.0)

            if weight_mode == "transmittance" and sel.size > 1:
                # sort alpha alone, weight in sorted order, scatter back
                zray = np.where(live, batch.dist[sel, None, None] / np.where(live, ndot, 1.0), np.inf)
                order = np.argsort(zray, axis=0, kind="stable")
                alpha_sorted = np.take_along_axis(alpha, order, axis=0)
                trans = np.cumprod(1.0 - alpha_sorted, axis=0)
                trans = np.concatenate([np.ones_like(trans[:1]), trans[:-1]], axis=0)
                weight = np.empty_like(alpha)
                np.put_along_axis(weight, order, alpha_sorted * trans, axis=0)
            else:
                weight = alpha  # raw mode, or a single splat where T = 1

            num = np.einsum("s,sij->ij", batch.dist[sel], weight)
            den = np.einsum("sij,sij->ij", weight, ndot)
            col = np.einsum("sij,sc->ijc", weight, batch.color[sel])
            count = live.sum(axis=0)

            touched = count > 0
            good = touched & (den >= DENOM_EPS)
            n_zero_denom += int(np.count_nonzero(touched & ~good))

            depth[ys, xs] = np.where(good, num / np.where(good, den, 1.0), 0.0)
            valid[ys, xs] = good
            color[ys, xs] = col
            contributors[ys, xs] = count

    if n_zero_denom:
        diagnostics.record("render_zero_denominator", n_zero_denom)
    return RenderedFrame(DepthMap(depth=depth, valid=valid), color, contributors)


def render_depth(gset: GaussianSet, view: CameraView, weight_mode: str = "transmittance") -> RenderedFrame:
    """Depth rendering entry point (full frame returned; depth is the payload)."""
    return render_frame(gset, view, weight_mode=weight_mode)


def render_color(gset: GaussianSet, view: CameraView, weight_mode: str = "transmittance") -> np.ndarray:
    """Front-to-back composited color image over a black background."""
    return render_frame(gset, view, weight_mode=weight_mode).color
