"""Numba kernels for isotropic Gaussian splatting.

Gaussians arrive already projected and sorted front to back. Per-pixel
lists are built in that order (CSR layout), so compositing walks each
list without further sorting.
"""

import math
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ and "NUMBA_THREADING_LAYER" not in os.environ:
    # probing TBB first warns on older TBB installs; OpenMP is the usual choice
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

ALPHA_MAX = 0.999
T_MIN = 1e-4
CUTOFF = 3.0


@njit(cache=True)
def _footprint(u, v, rad, width, height):
    x0 = max(int(math.ceil(u - rad)), 0)
    x1 = min(int(math.floor(u + rad)), width - 1)
    y0 = max(int(math.ceil(v - rad)), 0)
    y1 = min(int(math.floor(v + rad)), height - 1)
    return x0, x1, y0, y1


@njit(cache=True)
def build_lists(us, vs, sig, width, height):
    n = us.shape[0]
    counts = np.zeros(width * height + 1, dtype=np.int64)
    for g in range(n):
        x0, x1, y0, y1 = _footprint(us[g], vs[g], CUTOFF * sig[g], width, height)
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                counts[y * width + x + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    ids = np.empty(offsets[-1], dtype=np.int64)
    for g in range(n):
        x0, x1, y0, y1 = _footprint(us[g], vs[g], CUTOFF * sig[g], width, height)
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                p = y * width + x
                ids[fill[p]] = g
                fill[p] += 1
    return offsets, ids


@njit(cache=True)
def _alpha(opac, u, v, sig, x, y):
    dx = x - u
    dy = y - v
    r2 = dx * dx + dy * dy
    gauss = math.exp(-r2 / (2.0 * sig * sig))
    a = opac * gauss
    clamped = False
    if a > ALPHA_MAX:
        a = ALPHA_MAX
        clamped = True
    return a, gauss, r2, clamped


@njit(cache=True, parallel=True)
def composite(offsets, ids, us, vs, sig, opac, colors, background, width, height):
    image = np.empty((height, width, 3))
    trans = np.empty((height, width))
    used = np.zeros((height, width), dtype=np.int64)
    for y in prange(height):
        for x in range(width):
            p = y * width + x
            t = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            k = 0
            for j in range(offsets[p], offsets[p + 1]):
                g = ids[j]
                a, _, _, _ = _alpha(opac[g], us[g], vs[g], sig[g], x, y)
                w = t * a
                c0 += w * colors[g, 0]
                c1 += w * colors[g, 1]
                c2 += w * colors[g, 2]
                t *= 1.0 - a
                k += 1
                if t < T_MIN:
                    break
            image[y, x, 0] = c0 + t * background[0]
            image[y, x, 1] = c1 + t * background[1]
            image[y, x, 2] = c2 + t * background[2]
            trans[y, x] = t
            used[y, x] = k
    return image, trans, used


@njit(cache=True)
def backward(offsets, ids, us, vs, sig, opac, colors, background, width, height, dl_dc, valid):
    """Accumulate dL/d(color, opacity, screen sigma) given dL/dC per pixel.

    Returns gradients w.r.t. color, opacity (post-sigmoid) and log screen
    sigma, plus each Gaussian's summed blend weight over valid pixels.
    Pixels are visited in raster order, so the reduction order is fixed.
    """
    n = us.shape[0]
    g_col = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_logsig = np.zeros(n)
    weight = np.zeros(n)
    maxlen = 0
    for p in range(width * height):
        maxlen = max(maxlen, offsets[p + 1] - offsets[p])
    a_buf = np.empty(maxlen)
    t_buf = np.empty(maxlen)
    gs_buf = np.empty(maxlen)
    r2_buf = np.empty(maxlen)
    cl_buf = np.empty(maxlen, dtype=np.bool_)
    for y in range(height):
        for x in range(width):
            if not valid[y, x]:
                continue
            p = y * width + x
            t = 1.0
            k = 0
            for j in range(offsets[p], offsets[p + 1]):
                g = ids[j]
                a, gauss, r2, clamped = _alpha(opac[g], us[g], vs[g], sig[g], x, y)
                a_buf[k] = a
                t_buf[k] = t
                gs_buf[k] = gauss
                r2_buf[k] = r2
                cl_buf[k] = clamped
                t *= 1.0 - a
                k += 1
                if t < T_MIN:
                    break
            d0 = dl_dc[y, x, 0]
            d1 = dl_dc[y, x, 1]
            d2 = dl_dc[y, x, 2]
            # light arriving from behind entry k, i.e. entries k+1.. and background
            s0 = t * background[0]
            s1 = t * background[1]
            s2 = t * background[2]
            for kk in range(k - 1, -1, -1):
                g = ids[offsets[p] + kk]
                a = a_buf[kk]
                tk = t_buf[kk]
                w = tk * a
                g_col[g, 0] += w * d0
                g_col[g, 1] += w * d1
                g_col[g, 2] += w * d2
                weight[g] += w
                inv = 1.0 / (1.0 - a)
                dl_da = (
                    d0 * (tk * colors[g, 0] - s0 * inv)
                    + d1 * (tk * colors[g, 1] - s1 * inv)
                    + d2 * (tk * colors[g, 2] - s2 * inv)
                )
                s0 += w * colors[g, 0]
                s1 += w * colors[g, 1]
                s2 += w * colors[g, 2]
                if not cl_buf[kk]:
                    g_opac[g] += dl_da * gs_buf[kk]
                    # d alpha / d log(sigma) = alpha * r^2 / sigma^2
                    g_logsig[g] += dl_da * a * r2_buf[kk] / (sig[g] * sig[g])
    return g_col, g_opac, g_logsig, weight
