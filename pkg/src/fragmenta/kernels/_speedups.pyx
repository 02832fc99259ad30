# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core: serial hot loops shared by the contour codec,
the ring-graph layers, and the correspondence morphology.

Must stay bit-identical to kernels._pure; the tests enforce it.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def trace_boundary(mask):
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(np.asarray(mask) != 0, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    cdef Py_ssize_t r0 = -1, c0 = -1, r, c
    cdef Py_ssize_t total = 0
    for r in range(h):
        for c in range(w):
            if m[r, c]:
                total += 1
                if r0 < 0:
                    r0 = r
                    c0 = c
    if r0 < 0:
        raise ValueError("cannot trace an empty mask")

    # Moore neighborhood in clockwise order, starting from West.
    cdef int[8] dr
    cdef int[8] dc
    dr[0] = 0;  dc[0] = -1
    dr[1] = -1; dc[1] = -1
    dr[2] = -1; dc[2] = 0
    dr[3] = -1; dc[3] = 1
    dr[4] = 0;  dc[4] = 1
    dr[5] = 1;  dc[5] = 1
    dr[6] = 1;  dc[6] = 0
    dr[7] = 1;  dc[7] = -1
    # offset (drow+1)*3 + (dcol+1) -> position in the clockwise list
    cdef int[9] pos
    cdef int i
    for i in range(8):
        pos[(dr[i] + 1) * 3 + (dc[i] + 1)] = i

    cdef Py_ssize_t max_steps = 8 * total + 8
    out_arr = np.empty((max_steps + 2, 2), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr

    cdef Py_ssize_t cur_r = r0, cur_c = c0
    cdef Py_ssize_t back_r = r0, back_c = c0 - 1
    cdef Py_ssize_t prev_r = 0, prev_c = 0, cand_r, cand_c, nxt_r = 0, nxt_c = 0
    cdef Py_ssize_t first_r, first_c, fb_r, fb_c
    cdef int p, s, found
    cdef Py_ssize_t step, n

    # first move from the synthetic West backtrack; its state closes the walk
    p = pos[(back_r - cur_r + 1) * 3 + (back_c - cur_c + 1)]
    found = 0
    prev_r = back_r
    prev_c = back_c
    for s in range(1, 9):
        i = (p + s) % 8
        cand_r = cur_r + dr[i]
        cand_c = cur_c + dc[i]
        if 0 <= cand_r < h and 0 <= cand_c < w and m[cand_r, cand_c]:
            nxt_r = cand_r
            nxt_c = cand_c
            found = 1
            break
        prev_r = cand_r
        prev_c = cand_c
    if not found:
        out[0, 0] = r0
        out[0, 1] = c0
        return out_arr[:1].copy()
    first_r = nxt_r
    first_c = nxt_c
    fb_r = prev_r
    fb_c = prev_c
    out[0, 0] = r0
    out[0, 1] = c0
    out[1, 0] = first_r
    out[1, 1] = first_c
    n = 2
    cur_r = first_r
    cur_c = first_c
    back_r = fb_r
    back_c = fb_c
    found = 0
    for step in range(max_steps):
        p = pos[(back_r - cur_r + 1) * 3 + (back_c - cur_c + 1)]
        prev_r = back_r
        prev_c = back_c
        for s in range(1, 9):
            i = (p + s) % 8
            cand_r = cur_r + dr[i]
            cand_c = cur_c + dc[i]
            if 0 <= cand_r < h and 0 <= cand_c < w and m[cand_r, cand_c]:
                nxt_r = cand_r
                nxt_c = cand_c
                break
            prev_r = cand_r
            prev_c = cand_c
        back_r = prev_r
        back_c = prev_c
        cur_r = nxt_r
        cur_c = nxt_c
        if cur_r == first_r and cur_c == first_c and back_r == fb_r and back_c == fb_c:
            found = 1
            break
        out[n, 0] = cur_r
        out[n, 1] = cur_c
        n += 1
    if not found:
        raise ValueError("boundary walk failed to close")
    # cycle = out[1:n], rotated so the start pixel leads
    cdef Py_ssize_t pivot = -1
    for step in range(1, n):
        if out[step, 0] == r0 and out[step, 1] == c0:
            pivot = step
            break
    if pivot < 0:
        raise ValueError("boundary walk lost its start pixel")
    cycle = out_arr[1:n]
    return np.concatenate([cycle[pivot - 1:], cycle[:pivot - 1]]).copy()


def ring_window_sum(x, Py_ssize_t k):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t m = xv.shape[0], d = xv.shape[1]
    out_arr = np.empty((m, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t v, o, j, idx
    cdef double s
    if 2 * k + 1 >= m:
        for j in range(d):
            s = 0.0
            for v in range(m):
                s += xv[v, j]
            for v in range(m):
                out[v, j] = s
        return out_arr
    for v in range(m):
        for j in range(d):
            out[v, j] = xv[v, j]
        for o in range(1, k + 1):
            idx = v - o
            if idx < 0:
                idx += m
            for j in range(d):
                out[v, j] += xv[idx, j]
            idx = v + o
            if idx >= m:
                idx -= m
            for j in range(d):
                out[v, j] += xv[idx, j]
    return out_arr


def erode_antidiagonal_raw(v, bint flip=False):
    cdef double[:, ::1] a = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t rows = a.shape[0], cols = a.shape[1]
    out_arr = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, i1, j1, i2, j2
    cdef int dj = -1 if flip else 1
    cdef double up, dn
    for i in range(rows):
        for j in range(cols):
            i1 = i - 1
            j1 = j + dj
            i2 = i + 1
            j2 = j - dj
            up = a[i1, j1] if (0 <= i1 < rows and 0 <= j1 < cols) else 0.0
            dn = a[i2, j2] if (0 <= i2 < rows and 0 <= j2 < cols) else 0.0
            if up != 0.0 and dn != 0.0:
                if a[i, j] != 0.0:
                    out[i, j] = a[i, j]
                else:
                    out[i, j] = up if up < dn else dn
    return out_arr


def dilate_antidiagonal_raw(v, bint flip=False):
    cdef double[:, ::1] a = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t rows = a.shape[0], cols = a.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, i1, j1, i2, j2
    cdef int dj = -1 if flip else 1
    cdef double best, up, dn
    for i in range(rows):
        for j in range(cols):
            best = a[i, j]
            i1 = i - 1
            j1 = j + dj
            i2 = i + 1
            j2 = j - dj
            up = a[i1, j1] if (0 <= i1 < rows and 0 <= j1 < cols) else 0.0
            dn = a[i2, j2] if (0 <= i2 < rows and 0 <= j2 < cols) else 0.0
            if up > best:
                best = up
            if dn > best:
                best = dn
            out[i, j] = best
    return out_arr
