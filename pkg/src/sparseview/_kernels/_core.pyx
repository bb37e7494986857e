# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (see reference.py for the contract)."""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col2d(real[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
             Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n * oh * ow, c * kh * kw), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, ci, u, v, row, col, yy, xx
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (b * oh + i) * ow + j
                    for ci in range(c):
                        for u in range(kh):
                            yy = i * stride + u - pad
                            if yy < 0 or yy >= h:
                                continue
                            for v in range(kw):
                                xx = j * stride + v - pad
                                if xx < 0 or xx >= w:
                                    continue
                                col = (ci * kh + u) * kw + v
                                out[row, col] = x[b, ci, yy, xx]
    return out_arr


def im2col3d(real[:, :, :, :, ::1] x, Py_ssize_t kd, Py_ssize_t kh, Py_ssize_t kw,
             Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t d = x.shape[2], h = x.shape[3], w = x.shape[4]
    cdef Py_ssize_t od = (d + 2 * pad - kd) // stride + 1
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n * od * oh * ow, c * kd * kh * kw), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, q, i, j, ci, t, u, v, row, col, zz, yy, xx
    with nogil:
        for b in range(n):
            for q in range(od):
                for i in range(oh):
                    for j in range(ow):
                        row = ((b * od + q) * oh + i) * ow + j
                        for ci in range(c):
                            for t in range(kd):
                                zz = q * stride + t - pad
                                if zz < 0 or zz >= d:
                                    continue
                                for u in range(kh):
                                    yy = i * stride + u - pad
                                    if yy < 0 or yy >= h:
                                        continue
                                    for v in range(kw):
                                        xx = j * stride + v - pad
                                        if xx < 0 or xx >= w:
                                            continue
                                        col = ((ci * kd + t) * kh + u) * kw + v
                                        out[row, col] = x[b, ci, zz, yy, xx]
    return out_arr


cdef inline void _split_coord(double t, Py_ssize_t size,
                              Py_ssize_t* lo, double* frac) nogil:
    cdef Py_ssize_t i = <Py_ssize_t>t
    if t < i:  # floor for negatives (only reached for in-bounds t >= 0 anyway)
        i -= 1
    if i == size - 1:
        lo[0] = size - 2
        frac[0] = 1.0
    else:
        lo[0] = i
        frac[0] = t - i


def bilinear_fwd(real[:, :, ::1] img, real[:, ::1] coords):
    cdef Py_ssize_t c = img.shape[0], h = img.shape[1], w = img.shape[2]
    cdef Py_ssize_t k = coords.shape[0]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((c, k), dtype=dtype)
    mask_arr = np.zeros(k, dtype=np.uint8)
    cdef real[:, ::1] out = out_arr
    cdef cnp.uint8_t[::1] mask = mask_arr
    cdef Py_ssize_t i, ci, x0, y0
    cdef double x, y, fx, fy, top, bot
    with nogil:
        for i in range(k):
            x = coords[i, 0]
            y = coords[i, 1]
            if x < 0 or x > w - 1 or y < 0 or y > h - 1:
                continue
            mask[i] = 1
            _split_coord(x, w, &x0, &fx)
            _split_coord(y, h, &y0, &fy)
            for ci in range(c):
                top = img[ci, y0, x0] + fx * (img[ci, y0, x0 + 1] - img[ci, y0, x0])
                bot = img[ci, y0 + 1, x0] + fx * (img[ci, y0 + 1, x0 + 1] - img[ci, y0 + 1, x0])
                out[ci, i] = <real>(top + fy * (bot - top))
    return out_arr, mask_arr.astype(bool)


def bilinear_bwd(real[:, ::1] gout, real[:, :, ::1] img, real[:, ::1] coords,
                 bint want_img, bint want_coords):
    cdef Py_ssize_t c = img.shape[0], h = img.shape[1], w = img.shape[2]
    cdef Py_ssize_t k = coords.shape[0]
    gimg_arr = gcoords_arr = None
    cdef real[:, :, ::1] gimg = None
    cdef real[:, ::1] gcoords = None
    if want_img:
        gimg_arr = np.zeros_like(np.asarray(img))
        gimg = gimg_arr
    if want_coords:
        gcoords_arr = np.zeros_like(np.asarray(coords))
        gcoords = gcoords_arr
    cdef Py_ssize_t i, ci, x0, y0
    cdef double x, y, fx, fy, g, gx, gy, ddx, ddy
    with nogil:
        for i in range(k):
            x = coords[i, 0]
            y = coords[i, 1]
            if x < 0 or x > w - 1 or y < 0 or y > h - 1:
                continue
            _split_coord(x, w, &x0, &fx)
            _split_coord(y, h, &y0, &fy)
            gx = 0.0
            gy = 0.0
            for ci in range(c):
                g = gout[ci, i]
                if want_img:
                    gimg[ci, y0, x0] += <real>(g * (1 - fx) * (1 - fy))
                    gimg[ci, y0, x0 + 1] += <real>(g * fx * (1 - fy))
                    gimg[ci, y0 + 1, x0] += <real>(g * (1 - fx) * fy)
                    gimg[ci, y0 + 1, x0 + 1] += <real>(g * fx * fy)
                if want_coords:
                    ddx = (1 - fy) * (img[ci, y0, x0 + 1] - img[ci, y0, x0]) \
                        + fy * (img[ci, y0 + 1, x0 + 1] - img[ci, y0 + 1, x0])
                    ddy = (1 - fx) * (img[ci, y0 + 1, x0] - img[ci, y0, x0]) \
                        + fx * (img[ci, y0 + 1, x0 + 1] - img[ci, y0, x0 + 1])
                    gx += g * ddx
                    gy += g * ddy
            if want_coords:
                gcoords[i, 0] = <real>gx
                gcoords[i, 1] = <real>gy
    return gimg_arr, gcoords_arr


def trilinear_fwd(real[:, :, :, ::1] vol, real[:, ::1] coords):
    cdef Py_ssize_t c = vol.shape[0], d = vol.shape[1], h = vol.shape[2], w = vol.shape[3]
    cdef Py_ssize_t k = coords.shape[0]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((c, k), dtype=dtype)
    mask_arr = np.zeros(k, dtype=np.uint8)
    cdef real[:, ::1] out = out_arr
    cdef cnp.uint8_t[::1] mask = mask_arr
    cdef Py_ssize_t i, ci, x0, y0, z0
    cdef double x, y, z, fx, fy, fz, c00, c01, c10, c11, c0, c1
    with nogil:
        for i in range(k):
            x = coords[i, 0]
            y = coords[i, 1]
            z = coords[i, 2]
            if x < 0 or x > w - 1 or y < 0 or y > h - 1 or z < 0 or z > d - 1:
                continue
            mask[i] = 1
            _split_coord(x, w, &x0, &fx)
            _split_coord(y, h, &y0, &fy)
            _split_coord(z, d, &z0, &fz)
            for ci in range(c):
                c00 = vol[ci, z0, y0, x0] + fx * (vol[ci, z0, y0, x0 + 1] - vol[ci, z0, y0, x0])
                c01 = vol[ci, z0, y0 + 1, x0] + fx * (vol[ci, z0, y0 + 1, x0 + 1] - vol[ci, z0, y0 + 1, x0])
                c10 = vol[ci, z0 + 1, y0, x0] + fx * (vol[ci, z0 + 1, y0, x0 + 1] - vol[ci, z0 + 1, y0, x0])
                c11 = vol[ci, z0 + 1, y0 + 1, x0] + fx * (vol[ci, z0 + 1, y0 + 1, x0 + 1] - vol[ci, z0 + 1, y0 + 1, x0])
                c0 = c00 + fy * (c01 - c00)
                c1 = c10 + fy * (c11 - c10)
                out[ci, i] = <real>(c0 + fz * (c1 - c0))
    return out_arr, mask_arr.astype(bool)


def trilinear_bwd(real[:, ::1] gout, real[:, :, :, ::1] vol, real[:, ::1] coords,
                  bint want_vol, bint want_coords):
    cdef Py_ssize_t c = vol.shape[0], d = vol.shape[1], h = vol.shape[2], w = vol.shape[3]
    cdef Py_ssize_t k = coords.shape[0]
    gvol_arr = gcoords_arr = None
    cdef real[:, :, :, ::1] gvol = None
    cdef real[:, ::1] gcoords = None
    if want_vol:
        gvol_arr = np.zeros_like(np.asarray(vol))
        gvol = gvol_arr
    if want_coords:
        gcoords_arr = np.zeros_like(np.asarray(coords))
        gcoords = gcoords_arr
    cdef Py_ssize_t i, ci, x0, y0, z0, dz, dy, dx
    cdef double x, y, z, fx, fy, fz, g, gx, gy, gz, wzz, wyy, wxx, ddx, ddy, ddz
    cdef double wz[2]
    cdef double wy[2]
    cdef double wx[2]
    with nogil:
        for i in range(k):
            x = coords[i, 0]
            y = coords[i, 1]
            z = coords[i, 2]
            if x < 0 or x > w - 1 or y < 0 or y > h - 1 or z < 0 or z > d - 1:
                continue
            _split_coord(x, w, &x0, &fx)
            _split_coord(y, h, &y0, &fy)
            _split_coord(z, d, &z0, &fz)
            wx[0] = 1 - fx
            wx[1] = fx
            wy[0] = 1 - fy
            wy[1] = fy
            wz[0] = 1 - fz
            wz[1] = fz
            gx = 0.0
            gy = 0.0
            gz = 0.0
            for ci in range(c):
                g = gout[ci, i]
                ddx = 0.0
                ddy = 0.0
                ddz = 0.0
                for dz in range(2):
                    for dy in range(2):
                        for dx in range(2):
                            if want_vol:
                                gvol[ci, z0 + dz, y0 + dy, x0 + dx] += \
                                    <real>(g * wz[dz] * wy[dy] * wx[dx])
                if want_coords:
                    for dz in range(2):
                        for dy in range(2):
                            ddx += wz[dz] * wy[dy] * (vol[ci, z0 + dz, y0 + dy, x0 + 1] - vol[ci, z0 + dz, y0 + dy, x0])
                    for dz in range(2):
                        for dx in range(2):
                            ddy += wz[dz] * wx[dx] * (vol[ci, z0 + dz, y0 + 1, x0 + dx] - vol[ci, z0 + dz, y0, x0 + dx])
                    for dy in range(2):
                        for dx in range(2):
                            ddz += wy[dy] * wx[dx] * (vol[ci, z0 + 1, y0 + dy, x0 + dx] - vol[ci, z0, y0 + dy, x0 + dx])
                    gx += g * ddx
                    gy += g * ddy
                    gz += g * ddz
            if want_coords:
                gcoords[i, 0] = <real>gx
                gcoords[i, 1] = <real>gy
                gcoords[i, 2] = <real>gz
    return gvol_arr, gcoords_arr
