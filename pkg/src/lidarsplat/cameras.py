"""Pinhole cameras, world/camera transforms, and LiDAR depth-map extraction.

Cameras follow the COLMAP convention: the stored rotation/translation map
world coordinates into the camera frame, +z looks forward, +x right, +y
down. Depth means camera-frame z, not ray length.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .pointcloud import PointCloud
from .rotations import quat_to_rotmat, rotmat_to_quat

logger = logging.getLogger(__name__)

DEPTH_SENTINEL = 0.0


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: intrinsics (zero skew) plus a world-to-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    width: int
    height: int
    name: str = "view"

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation must be orthonormal within 1e-6")
        if np.linalg.det(rot) < 0.0:
            raise ValueError("rotation must have determinant +1")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.cx < self.width and 0.0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def camera_center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, xyz_world: np.ndarray) -> np.ndarray:
        pts = np.asarray(xyz_world, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth with a validity mask; invalid pixels hold 0."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.shape != valid.shape or depth.ndim != 2:
            raise ValueError(f"depth {depth.shape} and valid {valid.shape} must be equal 2-D shapes")
        on = depth[valid]
        if on.size and (not np.isfinite(on).all() or on.min() <= 0.0):
            raise ValueError("valid pixels must carry finite positive depth")
        depth = np.where(valid, depth, DEPTH_SENTINEL)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def coverage(self) -> float:
        return float(self.valid.mean()) if self.valid.size else 0.0


def project_point(view: CameraView, xyz_world) -> Optional[tuple[np.ndarray, float]]:
    """Project one world point; returns (pixel, z_depth) or None if behind the camera."""
    p_cam = view.rotation @ np.asarray(xyz_world, dtype=np.float64) + view.translation
    z = float(p_cam[2])
    if z <= 0.0:
        return None
    pixel = np.array([view.fx * p_cam[0] / z + view.cx, view.fy * p_cam[1] / z + view.cy])
    return pixel, z


def _splat_offsets(radius_px: int) -> np.ndarray:
    """Integer pixel offsets within a disk of the given radius."""
    r = int(radius_px)
    span = np.arange(-r, r + 1)
    dx, dy = np.meshgrid(span, span)
    keep = dx * dx + dy * dy <= r * r
    return np.stack([dx[keep], dy[keep]], axis=1)


def lidar_depth_map(
    view: CameraView,
    cloud: PointCloud,
    splat_radius_px: int = 1,
    z_tolerance: float = 0.05,
) -> DepthMap:
    """Project scan points into the view with z-buffer visibility filtering.

    Each surviving point marks the pixels within splat_radius_px of its
    projection; per pixel the minimum camera-z wins. A point whose depth
    exceeds the first-pass buffer at its center pixel by more than
    z_tolerance is discarded entirely as occluded, so its splat never
    validates pixels. Untouched pixels stay invalid.
    """
    if cloud.count == 0:
        raise ValueError("cannot project an empty cloud")
    h, w = view.height, view.width
    p_cam = cloud.positions @ view.rotation.T + view.translation
    z = p_cam[:, 2]
    front = z > 0.0
    u = np.full(len(z), -1.0)
    v = np.full(len(z), -1.0)
    u[front] = view.fx * p_cam[front, 0] / z[front] + view.cx
    v[front] = view.fy * p_cam[front, 1] / z[front] + view.cy
    px = np.floor(u + 0.5).astype(np.int64)
    py = np.floor(v + 0.5).astype(np.int64)
    inside = front & (px >= 0) & (px < w) & (py >= 0) & (py < h)

    offsets = _splat_offsets(splat_radius_px)

    def scatter_min(mask: np.ndarray) -> np.ndarray:
        buf = np.full((h, w), np.inf)
        for dx, dy in offsets:
            qx = px[mask] + dx
            qy = py[mask] + dy
            ok = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
            np.minimum.at(buf, (qy[ok], qx[ok]), z[mask][ok])
        return buf

    first = scatter_min(inside)
    survive = inside.copy()
    survive[inside] = z[inside] <= first[py[inside], px[inside]] + z_tolerance

    final = scatter_min(survive)
    valid = np.isfinite(final)
    return DepthMap(depth=np.where(valid, final, DEPTH_SENTINEL), valid=valid)


# ---------------------------------------------------------------------------
# COLMAP text and JSON camera files
# ---------------------------------------------------------------------------


def write_cameras_colmap(views: list[CameraView], directory) -> None:
    """Write PINHOLE cameras.txt / images.txt (one camera per image)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cam_lines = [
        "# Camera list with one line of data per camera:",
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
        f"# Number of cameras: {len(views)}",
    ]
    img_lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
        f"# Number of images: {len(views)}, mean observations per image: 0",
    ]
    for i, view in enumerate(views, start=1):
        cam_lines.append(
            f"{i} PINHOLE {view.width} {view.height} "
            f"{view.fx!r} {view.fy!r} {view.cx!r} {view.cy!r}"
        )
        q = [repr(float(x)) for x in rotmat_to_quat(view.rotation)]
        t = [repr(float(x)) for x in view.translation]
        img_lines.append(f"{i} {' '.join(q)} {' '.join(t)} {i} {view.name}")
        img_lines.append("")
    (directory / "cameras.txt").write_text("\n".join(cam_lines) + "\n")
    (directory / "images.txt").write_text("\n".join(img_lines) + "\n")


def read_cameras_colmap(directory) -> list[CameraView]:
    directory = Path(directory)
    cameras = {}
    for line in (directory / "cameras.txt").read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        cam_id = int(parts[0])
        model = parts[1]
        width, height = int(parts[2]), int(parts[3])
        params = [float(x) for x in parts[4:]]
        if model == "PINHOLE":
            fx, fy, cx, cy = params
        elif model == "SIMPLE_PINHOLE":
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            raise ValueError(f"unsupported COLMAP camera model {model!r}")
        cameras[cam_id] = (fx, fy, cx, cy, width, height)

    views = []
    lines = [
        ln.strip()
        for ln in (directory / "images.txt").read_text().splitlines()
        if not ln.strip().startswith("#")
    ]
    i = 0
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        parts = lines[i].split()
        i += 2  # the POINTS2D line (possibly empty) follows each image line
        qvec = np.array([float(x) for x in parts[1:5]])
        tvec = np.array([float(x) for x in parts[5:8]])
        cam_id = int(parts[8])
        name = parts[9]
        fx, fy, cx, cy, width, height = cameras[cam_id]
        views.append(
            CameraView(
                fx=fx,
                fy=fy,
                cx=cx,
                cy=cy,
                rotation=quat_to_rotmat(qvec),
                translation=tvec,
                width=width,
                height=height,
                name=name,
            )
        )
    views.sort(key=lambda v: v.name)
    return views


def write_cameras_json(views: list[CameraView], path) -> None:
    payload = {
        "cameras": [
            {
                "name": v.name,
                "width": v.width,
                "height": v.height,
                "fx": v.fx,
                "fy": v.fy,
                "cx": v.cx,
                "cy": v.cy,
                "qvec": [float(x) for x in rotmat_to_quat(v.rotation)],
                "tvec": [float(x) for x in v.translation],
            }
            for v in views
        ]
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_cameras_json(path) -> list[CameraView]:
    payload = json.loads(Path(path).read_text())
    views = []
    for cam in payload["cameras"]:
        views.append(
            CameraView(
                fx=float(cam["fx"]),
                fy=float(cam["fy"]),
                cx=float(cam["cx"]),
                cy=float(cam["cy"]),
                rotation=quat_to_rotmat(np.array(cam["qvec"], dtype=np.float64)),
                translation=np.array(cam["tvec"], dtype=np.float64),
                width=int(cam["width"]),
                height=int(cam["height"]),
                name=str(cam.get("name", f"view_{len(views):03d}")),
            )
        )
    views.sort(key=lambda v: v.name)
    return views


def load_cameras(path) -> list[CameraView]:
    """Load cameras from a JSON file or a COLMAP text directory."""
    path = Path(path)
    if path.is_dir():
        return read_cameras_colmap(path)
    if path.suffix.lower() == ".json":
        return read_cameras_json(path)
    raise ValueError(f"{path}: expected a .json file or a COLMAP text directory")


def look_at(
    eye,
    target,
    up=(0.0, 0.0, 1.0),
    fx: float = 64.0,
    fy: float | None = None,
    width: int = 64,
    height: int = 64,
    name: str = "view",
) -> CameraView:
    """Camera at eye looking at target (+z forward, +y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return CameraView(
        fx=fx,
        fy=fx if fy is None else fy,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=rot,
        translation=-rot @ eye,
        width=width,
        height=height,
        name=name,
    )
