"""Pure-numpy fallback for the compiled kernel core.

Every function here mirrors its ``_speedups`` twin bit-for-bit: the same
accumulation order, the same out-of-bounds conventions. The test suite
asserts exact equality between the two backends.
"""

import numpy as np

# Moore neighborhood in clockwise order, starting from West, as (drow, dcol).
_CW = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_CW_POS = {off: i for i, off in enumerate(_CW)}


def trace_boundary(mask):
    """Moore-neighbor boundary walk over a binary mask.

    Starts at the topmost-leftmost foreground pixel and follows the outer
    boundary; the walk stops when it re-enters the state produced by its
    first move (the walk is state-deterministic, so that closes the
    boundary cycle exactly). Returns an (M, 2) int64 array of (row, col)
    pixels in trace order, rotated so the start pixel comes first; an
    isolated pixel yields a single row. Raises ValueError on an empty mask.
    """
    m = np.asarray(mask) != 0
    rr, cc = np.nonzero(m)
    if rr.size == 0:
        raise ValueError("cannot trace an empty mask")
    h, w = m.shape
    r0, c0 = int(rr[0]), int(cc[0])

    def fg(r, c):
        return 0 <= r < h and 0 <= c < w and m[r, c]

    def move(cur, back):
        p = _CW_POS[(back[0] - cur[0], back[1] - cur[1])]
        prev = back
        for s in range(1, 9):
            off = _CW[(p + s) % 8]
            cand = (cur[0] + off[0], cur[1] + off[1])
            if fg(*cand):
                return cand, prev
            prev = cand
        return None, None

    start = (r0, c0)
    first, first_back = move(start, (r0, c0 - 1))
    if first is None:
        return np.array([start], dtype=np.int64)
    out = [start, first]
    cur, back = first, first_back
    max_steps = 8 * int(m.sum()) + 8
    closed = False
    for _ in range(max_steps):
        cur, back = move(cur, back)
        if (cur, back) == (first, first_back):
            closed = True
            break
        out.append(cur)
    if not closed:
        raise ValueError("boundary walk failed to close")
    cycle = out[1:]
    if start not in cycle:
        raise ValueError("boundary walk lost its start pixel")
    pivot = cycle.index(start)
    return np.array(cycle[pivot:] + cycle[:pivot], dtype=np.int64)


def ring_window_sum(x, k):
    """Cyclic windowed sum: out[v] = sum of x[(v+o) mod M] for o in [-k, k].

    When the window covers the whole ring (2k+1 >= M) every row receives the
    column totals exactly once (full-graph clamp).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    m, d = x.shape
    k = int(k)
    if 2 * k + 1 >= m:
        tot = np.zeros(d, dtype=np.float64)
        for v in range(m):
            tot += x[v]
        return np.tile(tot, (m, 1))
    out = x.copy()
    for o in range(1, k + 1):
        out += np.roll(x, o, axis=0)
        out += np.roll(x, -o, axis=0)
    return out


def _diag_neighbors(v, flip):
    p = np.pad(v, 1)
    if flip:
        up = p[:-2, :-2]   # v[i-1, j-1]
        dn = p[2:, 2:]     # v[i+1, j+1]
    else:
        up = p[:-2, 2:]    # v[i-1, j+1]
        dn = p[2:, :-2]    # v[i+1, j-1]
    return up, dn


def erode_antidiagonal_raw(v, flip=False):
    """Erosion by the two diagonal-offset structuring cells: a cell passes
    iff both offset neighbors are occupied (out of bounds counts as empty).

    Passing cells that were occupied keep their own values; a previously
    empty cell that passes is created with the smaller neighbor value, so
    a single-cell gap inside a staircase gets bridged."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    up, dn = _diag_neighbors(v, flip)
    passes = (up != 0) & (dn != 0)
    filled = np.where(v != 0, v, np.minimum(up, dn))
    return np.where(passes, filled, 0.0)


def dilate_antidiagonal_raw(v, flip=False):
    """Grayscale dilation: out[i,j] = max of v over the center and the two
    diagonal-offset neighbors (out of bounds counts as zero)."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    up, dn = _diag_neighbors(v, flip)
    return np.maximum(np.maximum(v, up), dn)
