# cython: language_level=3
"""Compiled hot kernels; see _pykernels.py for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.float64_t f64

cdef i64 NO_KEY = 0x7FFFFFFFFFFFFFFF


def zbuffer_select(lin, depth, key, Py_ssize_t npix):
    cdef const i64[::1] L = np.ascontiguousarray(lin, dtype=np.int64)
    cdef const f64[::1] D = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const i64[::1] K = np.ascontiguousarray(key, dtype=np.int64)
    out = np.full(npix, -1, dtype=np.int64)
    cdef i64[::1] W = out
    cdef Py_ssize_t i, n = L.shape[0]
    cdef i64 p, w
    with nogil:
        for i in range(n):
            p = L[i]
            w = W[p]
            if w < 0 or D[i] < D[w] or (D[i] == D[w] and K[i] < K[w]):
                W[p] = i
    return out


def patch_spread(depth, valid, int k):
    cdef const f64[:, ::1] D = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] V = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t h = D.shape[0], w = D.shape[1]
    best_src = np.full(h * w, -1, dtype=np.int64)
    cdef i64[::1] S = best_src
    best_depth = np.full(h * w, np.inf, dtype=np.float64)
    cdef f64[::1] B = best_depth
    cdef int r = k // 2
    cdef Py_ssize_t y, x, ty, tx, y0, y1, x0, x1
    cdef i64 s, t
    cdef f64 d
    with nogil:
        for y in range(h):
            for x in range(w):
                if not V[y, x]:
                    continue
                d = D[y, x]
                s = y * w + x
                y0 = y - r if y >= r else 0
                y1 = y + r + 1 if y + r + 1 <= h else h
                x0 = x - r if x >= r else 0
                x1 = x + r + 1 if x + r + 1 <= w else w
                for ty in range(y0, y1):
                    for tx in range(x0, x1):
                        t = ty * w + tx
                        if S[t] < 0 or d < B[t] or (d == B[t] and s < S[t]):
                            B[t] = d
                            S[t] = s
    return best_src


cdef inline Py_ssize_t _find_key(const i64[::1] keys, i64 key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = keys.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < keys.shape[0] and keys[lo] == key:
        return lo
    return -1


def grid_nearest(queries, points, point_index, keys, starts, counts,
                 origin, double cell, dims, int max_ring, double max_dist):
    cdef const f64[:, ::1] Q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const f64[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const i64[::1] PI = np.ascontiguousarray(point_index, dtype=np.int64)
    cdef const i64[::1] KEYS = np.ascontiguousarray(keys, dtype=np.int64)
    cdef const i64[::1] ST = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const i64[::1] CT = np.ascontiguousarray(counts, dtype=np.int64)
    cdef const f64[::1] O = np.ascontiguousarray(origin, dtype=np.float64)
    cdef const i64[::1] DM = np.ascontiguousarray(dims, dtype=np.int64)
    cdef Py_ssize_t m = Q.shape[0]
    idx_out = np.full(m, -1, dtype=np.int64)
    d2_out = np.full(m, np.inf, dtype=np.float64)
    cdef i64[::1] IO = idx_out
    cdef f64[::1] DO = d2_out
    cdef Py_ssize_t qi, c, j
    cdef int r, ox, oy, oz, cheb
    cdef i64 cx, cy, cz, nx, ny, nz, key, bi, pi
    cdef f64 qx, qy, qz, bd, dx, dy, dz, d2, bound
    cdef f64 maxd2 = max_dist * max_dist
    with nogil:
        for qi in range(m):
            qx = Q[qi, 0]
            qy = Q[qi, 1]
            qz = Q[qi, 2]
            cx = <i64>floor((qx - O[0]) / cell)
            cy = <i64>floor((qy - O[1]) / cell)
            cz = <i64>floor((qz - O[2]) / cell)
            bd = INFINITY
            bi = NO_KEY
            for r in range(1, max_ring + 1):
                for ox in range(-r, r + 1):
                    for oy in range(-r, r + 1):
                        for oz in range(-r, r + 1):
                            if r > 1:
                                cheb = ox if ox >= 0 else -ox
                                if (oy if oy >= 0 else -oy) > cheb:
                                    cheb = oy if oy >= 0 else -oy
                                if (oz if oz >= 0 else -oz) > cheb:
                                    cheb = oz if oz >= 0 else -oz
                                if cheb != r:
                                    continue
                            nx = cx + ox
                            ny = cy + oy
                            nz = cz + oz
                            if nx < 0 or ny < 0 or nz < 0 or nx >= DM[0] or ny >= DM[1] or nz >= DM[2]:
                                continue
                            key = (nx * DM[1] + ny) * DM[2] + nz
                            c = _find_key(KEYS, key)
                            if c < 0:
                                continue
                            for j in range(ST[c], ST[c] + CT[c]):
                                dx = P[j, 0] - qx
                                dy = P[j, 1] - qy
                                dz = P[j, 2] - qz
                                d2 = dx * dx + dy * dy + dz * dz
                                pi = PI[j]
                                if d2 < bd or (d2 == bd and pi < bi):
                                    bd = d2
                                    bi = pi
                bound = r * cell
                if bd <= bound * bound:
                    break
            if bd <= maxd2:
                IO[qi] = bi
                DO[qi] = bd
    return idx_out, d2_out


def project_anchor(points, A, B, double fx, double fy, double cx, double cy,
                   Py_ssize_t width, Py_ssize_t height, double z_min):
    cdef const f64[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const f64[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const f64[:, ::1] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], i, m = 0
    idx_arr = np.empty(n, dtype=np.int64)
    lin_arr = np.empty(n, dtype=np.int64)
    dep_arr = np.empty(n, dtype=np.float64)
    du_arr = np.empty(n, dtype=np.float64)
    dv_arr = np.empty(n, dtype=np.float64)
    cdef i64[::1] I = idx_arr
    cdef i64[::1] Lo = lin_arr
    cdef f64[::1] Dp = dep_arr
    cdef f64[::1] U = du_arr
    cdef f64[::1] V = dv_arr
    cdef f64 X, Y, Z, x0, y0, z0, x1, y1, z1, u0, v0, u1, v1
    cdef i64 px, py
    with nogil:
        for i in range(n):
            X = P[i, 0]
            Y = P[i, 1]
            Z = P[i, 2]
            x0 = a[0, 0] * X + a[0, 1] * Y + a[0, 2] * Z + a[0, 3]
            y0 = a[1, 0] * X + a[1, 1] * Y + a[1, 2] * Z + a[1, 3]
            z0 = a[2, 0] * X + a[2, 1] * Y + a[2, 2] * Z + a[2, 3]
            if not z0 > z_min:
                continue
            x1 = b[0, 0] * x0 + b[0, 1] * y0 + b[0, 2] * z0 + b[0, 3]
            y1 = b[1, 0] * x0 + b[1, 1] * y0 + b[1, 2] * z0 + b[1, 3]
            z1 = b[2, 0] * x0 + b[2, 1] * y0 + b[2, 2] * z0 + b[2, 3]
            if not z1 > z_min:
                continue
            u0 = fx * x0 / z0 + cx
            v0 = fy * y0 / z0 + cy
            if not (u0 >= 0 and u0 < width and v0 >= 0 and v0 < height):
                continue
            px = <i64>floor(u0 + 0.5)
            py = <i64>floor(v0 + 0.5)
            if px >= width or py >= height:
                continue
            u1 = fx * x1 / z1 + cx
            v1 = fy * y1 / z1 + cy
            I[m] = i
            Lo[m] = py * width + px
            Dp[m] = z0
            U[m] = u1 - u0
            V[m] = v1 - v0
            m += 1
    return idx_arr[:m].copy(), lin_arr[:m].copy(), dep_arr[:m].copy(), du_arr[:m].copy(), dv_arr[:m].copy()
