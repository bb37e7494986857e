"""Pinhole cameras, plane-induced homographies, rays, and patch grids.

Conventions (fixed so tests can be bit-exact):
  * world-to-camera: x_cam = R @ X + t; camera center C = -R^T t
  * pixel centers at integer coordinates, origin top-left, x right, y down
  * projection: u ~ K @ x_cam, pixel = (u0/u2, u1/u2), depth = x_cam z
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError

_EZ = np.array([0.0, 0.0, 1.0])


@dataclass
class Camera:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    validate: bool = True

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.validate:
            if np.max(np.abs(self.R @ self.R.T - np.eye(3))) >= 1e-6:
                raise ContractError("camera rotation is not orthonormal")
            if abs(np.linalg.det(self.R) - 1.0) >= 1e-6:
                raise ContractError("camera rotation must have det +1")
            if np.max(np.abs(self.K[np.tril_indices(3, -1)])) > 0:
                raise ContractError("intrinsics must be upper-triangular")
            if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
                raise ContractError("focal lengths must be positive")

    @property
    def center(self):
        return -self.R.T @ self.t

    @property
    def principal_axis(self):
        """Camera viewing direction expressed in world coordinates."""
        return self.R[2].copy()

    def project(self, X):
        """World point -> (pixel xy, camera-frame depth)."""
        xc = self.R @ np.asarray(X, dtype=np.float64) + self.t
        depth = xc[2]
        u = self.K @ xc
        if depth <= 0:
            return np.array([np.nan, np.nan]), depth
        return u[:2] / u[2], depth

    def project_many(self, X):
        """X: [N,3] -> (xy [N,2], depth [N]); behind-camera rows are NaN."""
        xc = X @ self.R.T + self.t
        depth = xc[:, 2]
        u = xc @ self.K.T
        with np.errstate(invalid="ignore", divide="ignore"):
            xy = u[:, :2] / u[:, 2:3]
        xy[depth <= 0] = np.nan
        return xy, depth

    def unproject(self, pixel, depth):
        """Pixel + camera-frame depth -> world point (oracle inverse of project)."""
        p = np.array([pixel[0], pixel[1], 1.0])
        return self.R.T @ (depth * (np.linalg.inv(self.K) @ p) - self.t)


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if not self.t_near < self.t_far:
            raise ContractError("ray requires t_near < t_far")
        if abs(np.linalg.norm(self.direction) - 1.0) >= 1e-6:
            raise ContractError("ray direction must be unit length")


@dataclass
class PatchGrid:
    center: tuple
    scale: float
    delta: int
    coords: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.delta % 2 != 0 or self.delta <= 0:
            raise ContractError("patch delta must be a positive even integer")
        if self.scale <= 0:
            raise ContractError("patch scale must be positive")
        half = self.delta // 2
        idx = np.arange(-half, half + 1, dtype=np.float64)
        px, py = self.center
        xs = self.scale * idx + px
        ys = self.scale * idx + py
        gx, gy = np.meshgrid(xs, ys)  # rows vary along y
        self.coords = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)

    @property
    def side(self):
        return self.delta + 1


def patch_grid(p, s, delta):
    return PatchGrid(center=(float(p[0]), float(p[1])), scale=float(s), delta=int(delta))


def plane_homography(cam_i, cam_ref, depth):
    """Map reference-view pixels to view-i pixels for the fronto-parallel
    plane at the given reference-frame depth (homogeneous 3x3)."""
    if depth <= 0:
        raise DomainError("plane depth must be positive")
    r_rel = cam_i.R @ cam_ref.R.T
    t_rel = cam_i.t - r_rel @ cam_ref.t
    h = cam_i.K @ (r_rel + np.outer(t_rel, _EZ) / depth) @ np.linalg.inv(cam_ref.K)
    return h


def infinite_homography(cam_i, cam_ref):
    """Depth -> infinity limit of plane_homography."""
    return cam_i.K @ cam_i.R @ cam_ref.R.T @ np.linalg.inv(cam_ref.K)


def warp_pixels(h, pixels):
    """Apply a homography to [N,2] pixels; returns (warped [N,2], valid [N])."""
    pts = np.concatenate([pixels, np.ones((len(pixels), 1))], axis=1)
    u = pts @ h.T
    w = u[:, 2]
    valid = w > 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        xy = u[:, :2] / w[:, None]
    xy[~valid] = np.nan
    return xy, valid


def pixel_ray(cam, pixel, t_near=0.0, t_far=np.inf):
    """Ray through a pixel: origin at the camera center, unit direction
    R^T K^{-1} (x, y, 1) normalized."""
    p = np.array([pixel[0], pixel[1], 1.0])
    d = cam.R.T @ (np.linalg.inv(cam.K) @ p)
    d = d / np.linalg.norm(d)
    return Ray(origin=cam.center, direction=d, t_near=t_near, t_far=t_far)


def rays_for_pixels(cam, pixels):
    """Vectorized pixel_ray directions: [N,2] pixels -> unit dirs [N,3]."""
    pts = np.concatenate([pixels, np.ones((len(pixels), 1))], axis=1)
    d = (np.linalg.inv(cam.K) @ pts.T).T @ cam.R
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def look_at(position, target, up=(0.0, 1.0, 0.0)):
    """Rotation whose rows are the camera axes (right, image-down, forward)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ContractError("camera position coincides with the look-at target")
    forward = forward / n
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(upv, forward)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ContractError("up vector is parallel to the viewing direction")
    right = right / rn
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def intrinsics_for(width, height, fov_deg=45.0):
    """Square-pixel intrinsics with the principal point at the image center."""
    half = np.tan(np.radians(fov_deg) / 2.0)
    f = 0.5 * (width - 1) / half
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])


def camera_record(cam, near, far):
    """One whitespace-separated text record: K (9), R (9), t (3), near, far."""
    vals = np.concatenate([cam.K.reshape(-1), cam.R.reshape(-1), cam.t, [near, far]])
    return " ".join(repr(float(v)) for v in vals)


def parse_camera_record(text):
    vals = [float(v) for v in text.split()]
    if len(vals) != 23:
        raise ContractError(f"camera record must have 23 values, got {len(vals)}")
    k = np.array(vals[0:9]).reshape(3, 3)
    r = np.array(vals[9:18]).reshape(3, 3)
    t = np.array(vals[18:21])
    return Camera(K=k, R=r, t=t), vals[21], vals[22]
