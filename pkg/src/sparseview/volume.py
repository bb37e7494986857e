"""Neural embedding volume construction.

Pipeline: shared 2D conv features per source view -> homography-warped
plane-sweep volumes anchored at the reference view -> masked per-voxel
variance across views (+ a validity flag channel) -> 3-level 3D UNet.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import nn
from .errors import ContractError

FEATURE_SCALE = 4  # feature maps live at quarter image resolution


@dataclass
class VolumeConfig:
    feat_channels: int = 8
    embed_channels: int = 8
    depth_planes: int = 32
    unet_base: int = 8


@dataclass
class FeatureMap:
    values: object  # Tensor [C, H/4, W/4]
    view_id: int


@dataclass
class SweepVolume:
    values: object  # Tensor [C, D, H/4, W/4]
    mask: np.ndarray  # [D, H/4, W/4] float32, 1 where the warp was in-bounds
    depths: np.ndarray


@dataclass
class CostVolume:
    values: object  # Tensor [C+1, D, H/4, W/4]; last channel = >=2-view flag


@dataclass
class EmbeddingVolume:
    values: object  # Tensor [C_E, D, H/4, W/4]
    ref_cam: geo.Camera
    depths: np.ndarray
    image_size: tuple  # (width, height)


def disparity_depths(near, far, n):
    """Depth plane values, uniform in disparity, increasing from near to far."""
    if not 0 < near < far:
        raise ContractError("need 0 < near < far")
    disp = np.linspace(1.0 / near, 1.0 / far, n)
    return 1.0 / disp


def image_to_feat(xy):
    """Image-resolution pixel coords -> feature-resolution coords.

    The stride-2 conv stack (pad 1) keeps receptive-field centers at
    multiples of the stride, so feature pixel j sits at image pixel 4j.
    """
    return xy / FEATURE_SCALE


class FeatureExtractor(nn.Module):
    """Three conv blocks (two stride-2), shared across views: [N,3,H,W] -> [N,C,H/4,W/4]."""

    def __init__(self, rng, channels=8):
        super().__init__()
        self.conv1 = nn.Conv2d(3, channels, 3, rng, stride=1, pad=1)
        self.bn1 = nn.BatchNorm(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, rng, stride=2, pad=1)
        self.bn2 = nn.BatchNorm(channels)
        self.conv3 = nn.Conv2d(channels, channels, 3, rng, stride=2, pad=1)
        self.bn3 = nn.BatchNorm(channels)

    def __call__(self, images):
        h, w = images.shape[2], images.shape[3]
        if h % FEATURE_SCALE or w % FEATURE_SCALE:
            raise ContractError(f"image dims must be divisible by {FEATURE_SCALE}")
        x = ad.relu(self.bn1(self.conv1(images)))
        x = ad.relu(self.bn2(self.conv2(x)))
        x = ad.relu(self.bn3(self.conv3(x)))
        return x


def build_sweep_volume(feat, cam_src, cam_ref, depths, image_size):
    """Warp one view's feature map onto the reference sweep planes.

    feat: Tensor [C, Hf, Wf] at quarter resolution of image_size=(W, H).
    """
    c, hf, wf = feat.shape
    width, height = image_size
    xf, yf = np.meshgrid(np.arange(wf, dtype=np.float64), np.arange(hf, dtype=np.float64))
    grid = np.stack([xf.reshape(-1), yf.reshape(-1)], axis=1)
    img_grid = grid * FEATURE_SCALE
    planes = []
    masks = []
    for d in depths:
        h = geo.plane_homography(cam_src, cam_ref, float(d))
        warped, valid = geo.warp_pixels(h, img_grid)
        coords = image_to_feat(warped)
        coords[~valid] = -1e6  # force the sampler's out-of-bounds path
        vals, inb = ad.bilinear_sample(feat, coords.astype(np.float32))
        planes.append(ad.reshape(vals, (c, 1, hf, wf)))
        masks.append((inb & valid).reshape(hf, wf))
    values = ad.concat(planes, axis=1)
    mask = np.stack(masks).astype(np.float32)
    return SweepVolume(values=values, mask=mask, depths=np.asarray(depths))


def cost_variance(volumes):
    """Masked per-voxel population variance across views plus a flag channel.

    Cells observed by fewer than two views get variance 0 and flag 0; the
    summation order over views is canonicalized, so the result is exactly
    invariant to view permutation.
    """
    if not volumes:
        raise ContractError("cost_variance needs at least one sweep volume")
    shape = volumes[0].values.shape
    for v in volumes[1:]:
        if v.values.shape != shape:
            raise ContractError("sweep volumes must share a shape")
    n = len(volumes)
    masks = np.stack([v.mask for v in volumes])  # [N, D, Hf, Wf]
    count = masks.sum(axis=0)
    valid = (count >= 2).astype(np.float32)
    inv = (1.0 / np.maximum(count, 1.0)).astype(np.float32)

    mask_t = [ad.Tensor(m[None]) for m in masks]  # each [1, D, Hf, Wf]
    masked = [
        ad.mul(v.values, ad.broadcast_to(m, shape)) for v, m in zip(volumes, mask_t)
    ]
    stacked = ad.stack(masked, axis=0)  # [N, C, D, Hf, Wf]
    inv_b = ad.broadcast_to(ad.Tensor(inv[None]), shape)
    mean = ad.mul(ad.permsum(stacked, axis=0), inv_b)  # [C, D, Hf, Wf]
    mean_n = ad.broadcast_to(ad.reshape(mean, (1,) + shape), (n,) + shape)
    mask_n = ad.broadcast_to(
        ad.reshape(ad.concat(mask_t, axis=0), (n, 1) + shape[1:]), (n,) + shape
    )
    dev = ad.sub(stacked, ad.mul(mean_n, mask_n))
    dev = ad.mul(dev, mask_n)  # zero contributions from invalid views
    var = ad.mul(ad.permsum(ad.mul(dev, dev), axis=0), inv_b)
    var = ad.mul(var, ad.broadcast_to(ad.Tensor(valid[None]), shape))
    flag = ad.Tensor(valid[None])
    return CostVolume(values=ad.concat([var, flag], axis=0))


class VolumeUNet(nn.Module):
    """3-level 3D UNet: stride-2 downsamples, skips, transposed upsamples."""

    def __init__(self, rng, in_channels, out_channels, base=8):
        super().__init__()
        b = base
        self.inc = nn.Conv3d(in_channels, b, 3, rng, pad=1)
        self.inc_bn = nn.BatchNorm(b)
        self.down1 = nn.Conv3d(b, 2 * b, 3, rng, stride=2, pad=1)
        self.down1_bn = nn.BatchNorm(2 * b)
        self.down2 = nn.Conv3d(2 * b, 4 * b, 3, rng, stride=2, pad=1)
        self.down2_bn = nn.BatchNorm(4 * b)
        self.mid = nn.Conv3d(4 * b, 4 * b, 3, rng, pad=1)
        self.mid_bn = nn.BatchNorm(4 * b)
        self.up1 = nn.ConvTranspose3d(4 * b, 2 * b, rng)
        self.up1_bn = nn.BatchNorm(2 * b)
        self.fuse1 = nn.Conv3d(4 * b, 2 * b, 3, rng, pad=1)
        self.fuse1_bn = nn.BatchNorm(2 * b)
        self.up2 = nn.ConvTranspose3d(2 * b, b, rng)
        self.up2_bn = nn.BatchNorm(b)
        self.fuse2 = nn.Conv3d(2 * b, b, 3, rng, pad=1)
        self.fuse2_bn = nn.BatchNorm(b)
        self.head = nn.Conv3d(b, out_channels, 1, rng)
        self.skip_enabled = True  # perturbation probe for tests

    def __call__(self, cost):
        """cost: Tensor [C, D, H, W] -> Tensor [C_out, D, H, W]."""
        c, d, h, w = cost.shape
        x = ad.reshape(cost, (1, c, d, h, w))
        pads = [(0, 0), (0, 0)] + [(0, (-s) % 4) for s in (d, h, w)]
        padded = any(p != (0, 0) for p in pads)
        if padded:
            x = ad.pad(x, pads)
        e0 = ad.relu(self.inc_bn(self.inc(x)))
        e1 = ad.relu(self.down1_bn(self.down1(e0)))
        e2 = ad.relu(self.down2_bn(self.down2(e1)))
        m = ad.relu(self.mid_bn(self.mid(e2)))
        u1 = ad.relu(self.up1_bn(self.up1(m)))
        if self.skip_enabled:
            u1 = ad.concat([u1, e1], axis=1)
        else:
            u1 = ad.concat([u1, ad.mul(e1, 0.0)], axis=1)
        f1 = ad.relu(self.fuse1_bn(self.fuse1(u1)))
        u2 = ad.relu(self.up2_bn(self.up2(f1)))
        if self.skip_enabled:
            u2 = ad.concat([u2, e0], axis=1)
        else:
            u2 = ad.concat([u2, ad.mul(e0, 0.0)], axis=1)
        f2 = ad.relu(self.fuse2_bn(self.fuse2(u2)))
        out = self.head(f2)
        if padded:
            out = ad.crop(out, [None, None, (0, d), (0, h), (0, w)])
        return ad.reshape(out, (out.shape[1], d, h, w))


def reference_view_index(cams, target_cam):
    """Source view whose principal axis is angularly closest to the target's."""
    axis = target_cam.principal_axis
    dots = [c.principal_axis @ axis for c in cams]
    return int(np.argmax(dots))


def build_embedding(images, cams, target_cam, near, far, extractor, unet, cfg):
    """Full encoder: source images + cameras -> EmbeddingVolume.

    images: [N, H, W, 3] float array; cams: matching list of cameras.
    """
    n, h, w = images.shape[0], images.shape[1], images.shape[2]
    ref_idx = reference_view_index(cams, target_cam)
    ref_cam = cams[ref_idx]
    depths = disparity_depths(near, far, cfg.depth_planes)
    imgs = ad.Tensor(
        np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=np.float32)
    )
    feats = extractor(imgs)  # [N, C, H/4, W/4]
    c = feats.shape[1]
    sweeps = []
    for i in range(n):
        fi = ad.reshape(
            ad.crop(feats, [(i, i + 1), None, None, None]), feats.shape[1:]
        )
        sweeps.append(build_sweep_volume(fi, cams[i], ref_cam, depths, (w, h)))
    cost = cost_variance(sweeps)
    emb = unet(cost.values)
    return EmbeddingVolume(values=emb, ref_cam=ref_cam, depths=depths, image_size=(w, h))


def frustum_coords(emb, points):
    """World points [P,3] -> sampling coords [P,3] in the embedding grid.

    x, y are feature-resolution pixel coords in the reference view; z is the
    continuous depth-plane index (planes are uniform in disparity).  Points
    behind the camera land far outside the grid so the sampler masks them.
    """
    xy, z = emb.ref_cam.project_many(points)
    uv = image_to_feat(xy)
    near, far = emb.depths[0], emb.depths[-1]
    nplanes = len(emb.depths)
    d0 = 1.0 / near
    step = (1.0 / far - d0) / (nplanes - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        idx = (1.0 / z - d0) / step
    coords = np.concatenate([uv, idx[:, None]], axis=1)
    coords[~np.isfinite(coords).all(axis=1)] = -1e6
    coords[z <= 0] = -1e6
    return coords.astype(np.float32)
