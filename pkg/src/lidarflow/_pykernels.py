"""Vectorized numpy implementations of the hot kernels.

Semantics are identical to ``_ckernels.pyx``; results must match bit for bit.
"""

import numpy as np

_NO_KEY = np.iinfo(np.int64).max


def zbuffer_select(lin, depth, key, npix):
    """Per-pixel winner among candidates: smallest depth, then smallest key.

    Returns an int64 array of length ``npix`` holding the winning candidate's
    position in the input arrays, or -1 where no candidate landed.
    """
    lin = np.asarray(lin, dtype=np.int64)
    winner = np.full(npix, -1, dtype=np.int64)
    if lin.size == 0:
        return winner
    order = np.lexsort((key, depth, lin))
    lin_sorted = lin[order]
    first = np.empty(len(order), dtype=bool)
    first[0] = True
    np.not_equal(lin_sorted[1:], lin_sorted[:-1], out=first[1:])
    winner[lin_sorted[first]] = order[first]
    return winner


def patch_spread(depth, valid, k):
    """Spread each valid pixel over its k x k neighborhood.

    Conflicts go to the smaller source depth, then the smaller source linear
    index. Returns the source linear index per pixel (-1 where uncovered).
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    h, w = depth.shape
    src_depth = np.where(valid, depth, np.inf)
    src_lin = np.where(valid, np.arange(h * w, dtype=np.int64).reshape(h, w), _NO_KEY)
    best_depth = np.full((h, w), np.inf)
    best_src = np.full((h, w), _NO_KEY, dtype=np.int64)
    r = k // 2
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            # target (y, x) receives source (y - dy, x - dx)
            ty0, ty1 = max(0, dy), min(h, h + dy)
            tx0, tx1 = max(0, dx), min(w, w + dx)
            if ty0 >= ty1 or tx0 >= tx1:
                continue
            sd = src_depth[ty0 - dy : ty1 - dy, tx0 - dx : tx1 - dx]
            sl = src_lin[ty0 - dy : ty1 - dy, tx0 - dx : tx1 - dx]
            bd = best_depth[ty0:ty1, tx0:tx1]
            bs = best_src[ty0:ty1, tx0:tx1]
            better = (sd < bd) | ((sd == bd) & (sl < bs))
            bd[better] = sd[better]
            bs[better] = sl[better]
    out = best_src.reshape(-1)
    out[out == _NO_KEY] = -1
    return out


def _shell_offsets(r):
    rng = np.arange(-r, r + 1)
    off = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    if r > 1:
        off = off[np.abs(off).max(axis=1) == r]
    return off


def grid_nearest(
    queries, points, point_index, keys, starts, counts, origin, cell, dims, max_ring, max_dist
):
    """Exact nearest neighbor within ``max_dist`` using a sorted voxel grid.

    ``points`` are sorted by cell key; ``keys``/``starts``/``counts`` describe
    the occupied cells. Ties go to the smaller ``point_index``. Returns
    (index, squared distance); index is -1 when nothing lies within
    ``max_dist``.
    """
    q = np.asarray(queries, dtype=np.float64)
    m = len(q)
    dims = np.asarray(dims, dtype=np.int64)
    cq = np.floor((q - origin) / cell).astype(np.int64)
    best_d2 = np.full(m, np.inf)
    best_idx = np.full(m, _NO_KEY, dtype=np.int64)
    active = np.arange(m)
    for r in range(1, max_ring + 1):
        if active.size == 0:
            break
        qa = q[active]
        ca = cq[active]
        bd = best_d2[active]
        bi = best_idx[active]
        for off in _shell_offsets(r):
            nc = ca + off
            inb = np.all((nc >= 0) & (nc < dims), axis=1)
            key = (nc[:, 0] * dims[1] + nc[:, 1]) * dims[2] + nc[:, 2]
            pos = np.searchsorted(keys, key)
            pos_c = np.minimum(pos, len(keys) - 1)
            hit = inb & (pos < len(keys)) & (keys[pos_c] == key)
            if not hit.any():
                continue
            rows = np.flatnonzero(hit)
            st = starts[pos_c[rows]]
            ct = counts[pos_c[rows]]
            for j in range(int(ct.max())):
                sel = ct > j
                rr = rows[sel]
                cand = st[sel] + j
                d = points[cand] - qa[rr]
                d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
                ci = point_index[cand]
                better = (d2 < bd[rr]) | ((d2 == bd[rr]) & (ci < bi[rr]))
                bd[rr[better]] = d2[better]
                bi[rr[better]] = ci[better]
        best_d2[active] = bd
        best_idx[active] = bi
        bound = (r * cell) ** 2
        active = active[bd > bound]
    reject = best_d2 > max_dist * max_dist
    best_idx[reject] = -1
    best_d2[reject] = np.inf
    best_idx[best_idx == _NO_KEY] = -1
    return best_idx, best_d2


def _affine(M, x, y, z):
    # explicit left-to-right sums, the same evaluation order as the C kernel
    return (
        M[0, 0] * x + M[0, 1] * y + M[0, 2] * z + M[0, 3],
        M[1, 0] * x + M[1, 1] * y + M[1, 2] * z + M[1, 3],
        M[2, 0] * x + M[2, 1] * y + M[2, 2] * z + M[2, 3],
    )


def project_anchor(points, A, B, fx, fy, cx, cy, width, height, z_min):
    """Project ``A p`` and ``B A p`` and anchor at the rounded first projection.

    ``A`` and ``B`` are 3x4 affine blocks. Keeps points in front of the
    camera (z > z_min) at both times whose first projection lies inside the
    image. Returns (point index, pixel linear index, depth, du, dv).
    """
    pts = np.asarray(points, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    x0, y0, z0 = _affine(A, pts[:, 0], pts[:, 1], pts[:, 2])
    x1, y1, z1 = _affine(B, x0, y0, z0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u0 = fx * x0 / z0 + cx
        v0 = fy * y0 / z0 + cy
        u1 = fx * x1 / z1 + cx
        v1 = fy * y1 / z1 + cy
    front = (z0 > z_min) & (z1 > z_min)
    inside = front & (u0 >= 0) & (u0 < width) & (v0 >= 0) & (v0 < height)
    idx = np.flatnonzero(inside)
    px = np.floor(u0[idx] + 0.5).astype(np.int64)
    py = np.floor(v0[idx] + 0.5).astype(np.int64)
    ok = (px < width) & (py < height)
    idx, px, py = idx[ok], px[ok], py[ok]
    return idx, py * width + px, z0[idx], u1[idx] - u0[idx], v1[idx] - v0[idx]
