"""Compiled inner loops for the rasterizer.

The pair list arrives sorted by (pixel, depth).  Each kernel walks one pixel
segment at a time with plain sequential arithmetic, so a pixel's outputs
depend only on its own contributor list (bit-identical under storage
permutation and under edits elsewhere), and gradient accumulation happens in
one fixed order (deterministic).  Single-threaded on purpose.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def composite_forward(pix, gidx, f, colors, sem_colors, depths, n_flat_pixels,
                      use_color, use_depth, use_semantic, use_silhouette,
                      preview, preview_min_trans):
    """Front-to-back compositing over sorted contributor pairs.

    Returns the flat channel images plus the per-pair transmittance (the
    product of (1 - f) over the contributors in front).
    """
    n_pairs = pix.shape[0]
    out_color = np.zeros((n_flat_pixels, 3))
    out_sem = np.zeros((n_flat_pixels, 3))
    out_depth = np.zeros(n_flat_pixels)
    out_sil = np.zeros(n_flat_pixels)
    trans = np.zeros(n_pairs)
    k = 0
    while k < n_pairs:
        p = pix[k]
        t = 1.0
        while k < n_pairs and pix[k] == p:
            if preview and t < preview_min_trans:
                trans[k] = 0.0
                k += 1
                continue
            g = gidx[k]
            w = f[k] * t
            trans[k] = t
            if use_color:
                out_color[p, 0] += w * colors[g, 0]
                out_color[p, 1] += w * colors[g, 1]
                out_color[p, 2] += w * colors[g, 2]
            if use_semantic:
                out_sem[p, 0] += w * sem_colors[g, 0]
                out_sem[p, 1] += w * sem_colors[g, 1]
                out_sem[p, 2] += w * sem_colors[g, 2]
            if use_depth:
                out_depth[p] += w * depths[g]
            if use_silhouette:
                out_sil[p] += w
            t *= 1.0 - f[k]
            k += 1
    return out_color, out_sem, out_depth, out_sil, trans


@njit(cache=True)
def composite_backward(pix, gidx, f, gexp, trans, clamped,
                       colors, sem_colors, depths,
                       lg_color, lg_sem, lg_depth, lg_sil,
                       mu2d, r2d, width, n_gauss, want_map):
    """Backward pass over sorted pairs.

    Walks each pixel segment back to front keeping the suffix mass
    S = sum_{behind} w * y, which gives the compositing derivative
    dL/df_i = y_i * T_i - S_i / (1 - f_i) in one sweep.  Accumulates
    per-Gaussian sums for the opacity, footprint center/radius, depth value,
    and the two color channels.
    """
    n_pairs = pix.shape[0]
    acc_sigma = np.zeros(n_gauss)
    acc_mux = np.zeros(n_gauss)
    acc_muy = np.zeros(n_gauss)
    acc_r2d = np.zeros(n_gauss)
    acc_dval = np.zeros(n_gauss)
    acc_color = np.zeros((n_gauss, 3))
    acc_sem = np.zeros((n_gauss, 3))
    k = 0
    while k < n_pairs:
        p = pix[k]
        end = k
        while end < n_pairs and pix[end] == p:
            end += 1
        px = float(p % width)
        py = float(p // width)
        s_behind = 0.0
        for j in range(end - 1, k - 1, -1):
            g = gidx[j]
            y = (lg_color[p, 0] * colors[g, 0] + lg_color[p, 1] * colors[g, 1]
                 + lg_color[p, 2] * colors[g, 2]
                 + lg_sem[p, 0] * sem_colors[g, 0] + lg_sem[p, 1] * sem_colors[g, 1]
                 + lg_sem[p, 2] * sem_colors[g, 2]
                 + lg_depth[p] * depths[g] + lg_sil[p])
            w = f[j] * trans[j]
            g_f = y * trans[j] - s_behind / (1.0 - f[j])
            s_behind += w * y
            if not clamped[j]:
                acc_sigma[g] += g_f * gexp[j]
                coef = g_f * f[j]
                dx = px - mu2d[g, 0]
                dy = py - mu2d[g, 1]
                r2 = r2d[g] * r2d[g]
                acc_mux[g] += coef * dx / r2
                acc_muy[g] += coef * dy / r2
                acc_r2d[g] += coef * (dx * dx + dy * dy) / (r2 * r2d[g])
            acc_dval[g] += lg_depth[p] * w
            if want_map:
                acc_color[g, 0] += lg_color[p, 0] * w
                acc_color[g, 1] += lg_color[p, 1] * w
                acc_color[g, 2] += lg_color[p, 2] * w
                acc_sem[g, 0] += lg_sem[p, 0] * w
                acc_sem[g, 1] += lg_sem[p, 1] * w
                acc_sem[g, 2] += lg_sem[p, 2] * w
        k = end
    return acc_sigma, acc_mux, acc_muy, acc_r2d, acc_dval, acc_color, acc_sem


@njit(cache=True)
def build_sorted_pairs(ids, x0, x1, y0, y1, mu2d, r2d, sigma, cutoff_sigma,
                       clamp, width, n_flat_pixels):
    """Contributor pairs, bucket-sorted by pixel with depth order preserved.

    ``ids`` lists the overlapping Gaussians in depth order.  Bounding boxes
    are scanned, pixel centers beyond ``cutoff_sigma * r2d`` are dropped, and
    a two-pass counting sort by pixel leaves the pair list pixel-major with
    contributors depth-ascending inside each pixel (the stable placement
    keeps the ``ids`` order).  The clamped 2D influence is computed in the
    same sweep.
    """
    n_ids = ids.shape[0]
    counts = np.zeros(n_flat_pixels + 1, dtype=np.int64)
    total = 0
    for i in range(n_ids):
        g = ids[i]
        cut2 = (cutoff_sigma * r2d[g]) ** 2
        for row in range(y0[g], y1[g] + 1):
            dy = row - mu2d[g, 1]
            base = row * width
            for col in range(x0[g], x1[g] + 1):
                dx = col - mu2d[g, 0]
                if dx * dx + dy * dy <= cut2:
                    counts[base + col + 1] += 1
                    total += 1
    offsets = np.cumsum(counts)[:n_flat_pixels]
    pixel = np.empty(total, dtype=np.int64)
    gauss = np.empty(total, dtype=np.int64)
    f = np.empty(total)
    gexp = np.empty(total)
    clamped = np.zeros(total, dtype=np.bool_)
    for i in range(n_ids):
        g = ids[i]
        cut2 = (cutoff_sigma * r2d[g]) ** 2
        inv_two_r2 = 1.0 / (2.0 * r2d[g] * r2d[g])
        for row in range(y0[g], y1[g] + 1):
            dy = row - mu2d[g, 1]
            base = row * width
            for col in range(x0[g], x1[g] + 1):
                dx = col - mu2d[g, 0]
                e = dx * dx + dy * dy
                if e <= cut2:
                    p = base + col
                    k = offsets[p]
                    offsets[p] = k + 1
                    pixel[k] = p
                    gauss[k] = g
                    ge = np.exp(-e * inv_two_r2)
                    fr = sigma[g] * ge
                    gexp[k] = ge
                    if fr > clamp:
                        f[k] = clamp
                        clamped[k] = True
                    else:
                        f[k] = fr
    return pixel, gauss, f, gexp, clamped
