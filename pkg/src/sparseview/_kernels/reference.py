"""Pure-numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available (or when SPARSEVIEW_KERNELS=python).  Semantics here are the
contract; the Cython backend mirrors them.

Conventions shared by both backends:
  * im2col returns a C-contiguous [rows, C*prod(kernel)] matrix whose row
    order is (n, out_spatial...) row-major and whose column order is
    (c, kernel_spatial...) row-major.
  * interpolation coords are (x, y[, z]) with x along the last array axis;
    samples outside [0, size-1] on any axis return 0 with mask=False.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col2d(x, kh, kw, stride, pad):
    """x: [N,C,H,W] -> [N*OH*OW, C*kh*kw]."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # [N, C, OH, OW, kh, kw] -> [N, OH, OW, C, kh, kw]
    col = win.transpose(0, 2, 3, 1, 4, 5)
    oh, ow = col.shape[1], col.shape[2]
    return np.ascontiguousarray(col).reshape(n * oh * ow, c * kh * kw)


def im2col3d(x, kd, kh, kw, stride, pad):
    """x: [N,C,D,H,W] -> [N*OD*OH*OW, C*kd*kh*kw]."""
    n, c, d, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kd, kh, kw), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]
    # [N, C, OD, OH, OW, kd, kh, kw] -> [N, OD, OH, OW, C, kd, kh, kw]
    col = win.transpose(0, 2, 3, 4, 1, 5, 6, 7)
    od, oh, ow = col.shape[1], col.shape[2], col.shape[3]
    return np.ascontiguousarray(col).reshape(n * od * oh * ow, c * kd * kh * kw)


def _corner_weights_1d(t, size):
    """Split continuous coord into (lo index, frac); upper edge folds back."""
    lo = np.floor(t).astype(np.int64)
    frac = t - lo
    at_edge = lo == size - 1
    lo = np.where(at_edge, size - 2, lo)
    frac = np.where(at_edge, 1.0, frac)
    return lo, frac


def bilinear_fwd(img, coords):
    """img: [C,H,W], coords: [K,2] -> (out [C,K], mask [K])."""
    c, h, w = img.shape
    x, y = coords[:, 0], coords[:, 1]
    mask = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(mask, x, 0.0)
    ys = np.where(mask, y, 0.0)
    x0, fx = _corner_weights_1d(xs, w)
    y0, fy = _corner_weights_1d(ys, h)
    v00 = img[:, y0, x0]
    v01 = img[:, y0, x0 + 1]
    v10 = img[:, y0 + 1, x0]
    v11 = img[:, y0 + 1, x0 + 1]
    fx = fx.astype(img.dtype)
    fy = fy.astype(img.dtype)
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    out = top + fy * (bot - top)
    out *= mask.astype(img.dtype)
    return np.ascontiguousarray(out), mask


def bilinear_bwd(gout, img, coords, want_img, want_coords):
    """Backward of bilinear_fwd; gout: [C,K]."""
    c, h, w = img.shape
    x, y = coords[:, 0], coords[:, 1]
    mask = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(mask, x, 0.0)
    ys = np.where(mask, y, 0.0)
    x0, fx = _corner_weights_1d(xs, w)
    y0, fy = _corner_weights_1d(ys, h)
    fx = fx.astype(img.dtype)
    fy = fy.astype(img.dtype)
    m = mask.astype(img.dtype)
    g = gout * m
    gimg = gcoords = None
    if want_img:
        gimg = np.zeros_like(img)
        np.add.at(gimg, (slice(None), y0, x0), g * ((1 - fx) * (1 - fy)))
        np.add.at(gimg, (slice(None), y0, x0 + 1), g * (fx * (1 - fy)))
        np.add.at(gimg, (slice(None), y0 + 1, x0), g * ((1 - fx) * fy))
        np.add.at(gimg, (slice(None), y0 + 1, x0 + 1), g * (fx * fy))
    if want_coords:
        v00 = img[:, y0, x0]
        v01 = img[:, y0, x0 + 1]
        v10 = img[:, y0 + 1, x0]
        v11 = img[:, y0 + 1, x0 + 1]
        ddx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
        ddy = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
        gcoords = np.empty_like(coords)
        gcoords[:, 0] = np.sum(g * ddx, axis=0)
        gcoords[:, 1] = np.sum(g * ddy, axis=0)
    return gimg, gcoords


def trilinear_fwd(vol, coords):
    """vol: [C,D,H,W], coords: [K,3] as (x,y,z) -> (out [C,K], mask [K])."""
    c, d, h, w = vol.shape
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    mask = (
        (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1) & (z >= 0) & (z <= d - 1)
    )
    xs = np.where(mask, x, 0.0)
    ys = np.where(mask, y, 0.0)
    zs = np.where(mask, z, 0.0)
    x0, fx = _corner_weights_1d(xs, w)
    y0, fy = _corner_weights_1d(ys, h)
    z0, fz = _corner_weights_1d(zs, d)
    fx = fx.astype(vol.dtype)
    fy = fy.astype(vol.dtype)
    fz = fz.astype(vol.dtype)

    def at(dz, dy, dx):
        return vol[:, z0 + dz, y0 + dy, x0 + dx]

    c00 = at(0, 0, 0) + fx * (at(0, 0, 1) - at(0, 0, 0))
    c01 = at(0, 1, 0) + fx * (at(0, 1, 1) - at(0, 1, 0))
    c10 = at(1, 0, 0) + fx * (at(1, 0, 1) - at(1, 0, 0))
    c11 = at(1, 1, 0) + fx * (at(1, 1, 1) - at(1, 1, 0))
    c0 = c00 + fy * (c01 - c00)
    c1 = c10 + fy * (c11 - c10)
    out = c0 + fz * (c1 - c0)
    out *= mask.astype(vol.dtype)
    return np.ascontiguousarray(out), mask


def trilinear_bwd(gout, vol, coords, want_vol, want_coords):
    c, d, h, w = vol.shape
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    mask = (
        (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1) & (z >= 0) & (z <= d - 1)
    )
    xs = np.where(mask, x, 0.0)
    ys = np.where(mask, y, 0.0)
    zs = np.where(mask, z, 0.0)
    x0, fx = _corner_weights_1d(xs, w)
    y0, fy = _corner_weights_1d(ys, h)
    z0, fz = _corner_weights_1d(zs, d)
    fx = fx.astype(vol.dtype)
    fy = fy.astype(vol.dtype)
    fz = fz.astype(vol.dtype)
    g = gout * mask.astype(vol.dtype)
    gvol = gcoords = None
    wx = (1 - fx, fx)
    wy = (1 - fy, fy)
    wz = (1 - fz, fz)
    if want_vol:
        gvol = np.zeros_like(vol)
        for dz in (0, 1):
            for dy in (0, 1):
                for dx in (0, 1):
                    np.add.at(
                        gvol,
                        (slice(None), z0 + dz, y0 + dy, x0 + dx),
                        g * (wz[dz] * wy[dy] * wx[dx]),
                    )
    if want_coords:
        def at(dz, dy, dx):
            return vol[:, z0 + dz, y0 + dy, x0 + dx]

        ddx = np.zeros_like(gout)
        ddy = np.zeros_like(gout)
        ddz = np.zeros_like(gout)
        for dz in (0, 1):
            for dy in (0, 1):
                ddx += wz[dz] * wy[dy] * (at(dz, dy, 1) - at(dz, dy, 0))
        for dz in (0, 1):
            for dx in (0, 1):
                ddy += wz[dz] * wx[dx] * (at(dz, 1, dx) - at(dz, 0, dx))
        for dy in (0, 1):
            for dx in (0, 1):
                ddz += wy[dy] * wx[dx] * (at(1, dy, dx) - at(0, dy, dx))
        gcoords = np.empty_like(coords)
        gcoords[:, 0] = np.sum(g * ddx, axis=0)
        gcoords[:, 1] = np.sum(g * ddy, axis=0)
        gcoords[:, 2] = np.sum(g * ddz, axis=0)
    return gvol, gcoords
