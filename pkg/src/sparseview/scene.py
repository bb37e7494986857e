"""Analytic multi-view scene generator.

Deterministic ray-cast renderer over textured planes and spheres with
Lambertian shading (color = albedo * max(0, n.l)), used to produce
desk-scale datasets with controllable baseline and occlusion.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ContractError

TEXTURE_KINDS = ("checker", "stripes", "noise")


@dataclass
class Texture:
    kind: str
    period: float = 0.25
    c0: tuple = (0.95, 0.95, 0.95)
    c1: tuple = (0.08, 0.08, 0.08)
    octaves: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TEXTURE_KINDS:
            raise ContractError(f"unknown texture kind '{self.kind}'")
        if self.period <= 0:
            raise ContractError("texture period must be positive")

    def albedo(self, u, v):
        """u, v: [K] surface coords -> [K,3] albedo."""
        c0 = np.asarray(self.c0)
        c1 = np.asarray(self.c1)
        if self.kind == "checker":
            par = (np.floor(u / self.period) + np.floor(v / self.period)) % 2
            return np.where(par[:, None] == 0, c0[None], c1[None])
        if self.kind == "stripes":
            par = np.floor(u / self.period) % 2
            return np.where(par[:, None] == 0, c0[None], c1[None])
        val = _value_noise(u / self.period, v / self.period, self.octaves, self.seed)
        return c0[None] + val[:, None] * (c1[None] - c0[None])


def _hash01(ix, iy, seed):
    mix = (seed * 0x165667B19E3779F9 + 0x27D4EB2F165667C5) & 0xFFFFFFFFFFFFFFFF
    h = (
        ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        ^ np.uint64(mix)
    )
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(u, v, octaves, seed):
    total = np.zeros_like(u)
    amp = 1.0
    norm = 0.0
    for o in range(octaves):
        uu, vv = u * (2**o), v * (2**o)
        iu, iv = np.floor(uu), np.floor(vv)
        fu, fv = uu - iu, vv - iv
        fu = fu * fu * (3 - 2 * fu)
        fv = fv * fv * (3 - 2 * fv)
        iu = iu.astype(np.int64)
        iv = iv.astype(np.int64)
        h00 = _hash01(iu, iv, seed + o)
        h01 = _hash01(iu + 1, iv, seed + o)
        h10 = _hash01(iu, iv + 1, seed + o)
        h11 = _hash01(iu + 1, iv + 1, seed + o)
        top = h00 + fu * (h01 - h00)
        bot = h10 + fu * (h11 - h10)
        total += amp * (top + fv * (bot - top))
        norm += amp
        amp *= 0.5
    return total / norm


@dataclass
class Plane:
    center: np.ndarray
    normal: np.ndarray
    extent: tuple  # half-sizes (eu, ev)
    texture: Texture

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ContractError("plane extents must be positive")
        helper = np.array([0.0, 1.0, 0.0])
        if abs(self.normal @ helper) > 0.99:
            helper = np.array([1.0, 0.0, 0.0])
        u = np.cross(helper, self.normal)
        self.u_axis = u / np.linalg.norm(u)
        self.v_axis = np.cross(self.normal, self.u_axis)

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - origin) @ self.normal) / denom
            pts = origin[None] + t[:, None] * dirs
            rel = pts - self.center
            u = rel @ self.u_axis
            v = rel @ self.v_axis
        ok = (
            (np.abs(denom) > 1e-12)
            & (t > 1e-9)
            & (np.abs(u) <= self.extent[0])
            & (np.abs(v) <= self.extent[1])
        )
        t = np.where(ok, t, np.inf)
        normals = np.broadcast_to(self.normal, dirs.shape)
        return t, normals, u, v


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    texture: Texture

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.radius <= 0:
            raise ContractError("sphere radius must be positive")

    def intersect(self, origin, dirs):
        oc = origin - self.center
        b = dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > 1e-9, t0, t1)
        ok &= t > 1e-9
        t = np.where(ok, t, np.inf)
        pts = origin[None] + t[:, None] * dirs
        n = pts - self.center
        with np.errstate(invalid="ignore"):
            n = n / np.linalg.norm(n, axis=1, keepdims=True)
        # spherical surface coords scaled by radius so texture density is metric
        theta = np.arctan2(n[:, 0], n[:, 2])
        phi = np.arcsin(np.clip(n[:, 1], -1, 1))
        return t, n, theta * self.radius, phi * self.radius


@dataclass
class SceneSpec:
    primitives: list
    light: np.ndarray = (0.0, 0.0, -1.0)
    background: np.ndarray = (0.05, 0.05, 0.08)
    seed: int = 0

    def __post_init__(self):
        light = np.asarray(self.light, dtype=np.float64)
        self.light = light / np.linalg.norm(light)
        self.background = np.asarray(self.background, dtype=np.float64)


def trace(scene, origin, dirs):
    """Nearest-hit query for a batch of rays.

    Returns (t [K] with inf at misses, color [K,3], normal [K,3], hit [K]).
    """
    k = len(dirs)
    best_t = np.full(k, np.inf)
    color = np.tile(scene.background, (k, 1))
    normal = np.zeros((k, 3))
    for prim in scene.primitives:
        t, n, u, v = prim.intersect(origin, dirs)
        closer = t < best_t
        if not closer.any():
            continue
        alb = prim.texture.albedo(u[closer], v[closer])
        lam = np.maximum(0.0, n[closer] @ scene.light)
        color[closer] = alb * lam[:, None]
        normal[closer] = n[closer]
        best_t = np.where(closer, t, best_t)
    hit = np.isfinite(best_t)
    return best_t, np.clip(color, 0.0, 1.0), normal, hit


def render_view(scene, cam, width, height):
    """Render one view: (image [h,w,3] in [0,1], depth [h,w] camera-z, hit mask)."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    pixels = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    dirs = geo.rays_for_pixels(cam, pixels)
    origin = cam.center
    t, color, _, hit = trace(scene, origin, dirs)
    zfactor = dirs @ cam.principal_axis
    depth = np.where(hit, t * zfactor, 0.0)
    img = color.reshape(height, width, 3)
    return img, depth.reshape(height, width), hit.reshape(height, width)


def point_visible(scene, cam, X, tol=1e-6):
    """True when world point X is the first surface seen from cam."""
    xy, depth = cam.project(X)
    if not np.isfinite(xy).all() or depth <= 0:
        return False
    dirs = geo.rays_for_pixels(cam, np.asarray([xy]))
    t, _, _, hit = trace(scene, cam.center, dirs)
    if not hit[0]:
        return False
    z = t[0] * (dirs[0] @ cam.principal_axis)
    return z >= depth - max(tol, 1e-4 * depth)


@dataclass
class Rig:
    pattern: str = "arc"
    n_views: int = 3
    baseline_deg: float = 10.0
    target: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n_views < 1:
            raise ContractError("rig needs at least one view")
        if self.baseline_deg <= 0:
            raise ContractError("baseline angle must be positive")
        if self.pattern not in ("arc", "grid"):
            raise ContractError(f"unknown rig pattern '{self.pattern}'")


def make_rig(rig, radius, width=80, height=80, fov_deg=45.0):
    """Cameras on an arc (or small grid of arcs) looking at the rig target."""
    target = np.asarray(rig.target, dtype=np.float64)
    k = geo.intrinsics_for(width, height, fov_deg)
    cams = []
    step = np.radians(rig.baseline_deg)
    if rig.pattern == "arc":
        offsets = [(i - (rig.n_views - 1) / 2.0) * step for i in range(rig.n_views)]
        angles = [(a, 0.0) for a in offsets]
    else:
        cols = int(np.ceil(np.sqrt(rig.n_views)))
        angles = []
        for i in range(rig.n_views):
            r, c = divmod(i, cols)
            rows = int(np.ceil(rig.n_views / cols))
            angles.append(
                (
                    (c - (cols - 1) / 2.0) * step,
                    (r - (rows - 1) / 2.0) * step,
                )
            )
    for ax, ay in angles:
        pos = target + radius * np.array(
            [np.sin(ax) * np.cos(ay), np.sin(ay), -np.cos(ax) * np.cos(ay)]
        )
        r = geo.look_at(pos, target)
        cams.append(geo.Camera(K=k, R=r, t=-r @ pos))
    return cams


def _checker(period, c0, c1):
    return Texture(kind="checker", period=period, c0=c0, c1=c1)


def two_planes(seed=0):
    """Foreground occluder in front of a large checkered backdrop."""
    return SceneSpec(
        primitives=[
            Plane(
                center=(0.0, 0.0, 1.2),
                normal=(0.0, 0.0, -1.0),
                extent=(4.0, 4.0),
                texture=_checker(0.35, (0.92, 0.88, 0.35), (0.15, 0.2, 0.55)),
            ),
            Plane(
                center=(-0.25, 0.05, -0.6),
                normal=(0.0, 0.0, -1.0),
                extent=(0.75, 0.55),
                texture=_checker(0.18, (0.9, 0.25, 0.2), (0.97, 0.93, 0.88)),
            ),
        ],
        light=(-0.25, 0.35, -1.0),
        seed=seed,
    )


def sphere_on_plane(seed=0):
    """Tilted noise-textured backdrop (graded depth) with a sphere in front.

    Continuous textures here: binary checkers alias under warping, which
    blurs the cost-volume depth signal this scene is meant to exercise.
    """
    return SceneSpec(
        primitives=[
            Plane(
                center=(0.0, 0.0, 1.2),
                normal=(0.3, 0.12, -1.0),
                extent=(5.0, 5.0),
                texture=Texture(
                    kind="noise", period=0.7, c0=(0.92, 0.9, 0.55), c1=(0.12, 0.22, 0.5),
                    octaves=4, seed=11,
                ),
            ),
            Sphere(
                center=(0.15, -0.05, -0.2),
                radius=0.55,
                texture=Texture(
                    kind="noise", period=0.3, c0=(0.95, 0.6, 0.15), c1=(0.3, 0.1, 0.4),
                    octaves=4, seed=4,
                ),
            ),
        ],
        light=(0.2, 0.45, -1.0),
        seed=seed,
    )


def triple_object(seed=0):
    return SceneSpec(
        primitives=[
            Plane(
                center=(0.0, 0.0, 1.4),
                normal=(0.0, 0.0, -1.0),
                extent=(4.0, 4.0),
                texture=Texture(
                    kind="noise", period=0.5, c0=(0.85, 0.82, 0.75), c1=(0.2, 0.3, 0.5), seed=seed
                ),
            ),
            Sphere(
                center=(-0.55, 0.1, -0.1),
                radius=0.4,
                texture=_checker(0.15, (0.9, 0.85, 0.2), (0.4, 0.1, 0.1)),
            ),
            Plane(
                center=(0.55, -0.15, -0.3),
                normal=(-0.3, 0.1, -1.0),
                extent=(0.45, 0.4),
                texture=Texture(
                    kind="stripes", period=0.12, c0=(0.2, 0.65, 0.9), c1=(0.95, 0.95, 0.98)
                ),
            ),
        ],
        light=(-0.1, 0.5, -1.0),
        seed=seed,
    )


SCENE_PRESETS = {
    "two-planes": two_planes,
    "sphere-on-plane": sphere_on_plane,
    "triple-object": triple_object,
}
