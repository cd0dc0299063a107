"""Numpy fallback implementations of the hot per-pixel kernels.

Semantics here are the reference: the compiled backend in `_hot.pyx` must
produce bit-identical output for every input (tested in the suite).
"""

import numpy as np

BACKEND = "pure"

# 8-neighbour offsets, clockwise from north-west; bit i of an LBP code is set
# when the neighbour at _OFFSETS[i] compares >= centre.
_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _shift(a, dr, dc, fill=0):
    out = np.full_like(a, fill)
    h, w = a.shape
    rs = slice(max(dr, 0), h + min(dr, 0))
    rd = slice(max(-dr, 0), h + min(-dr, 0))
    cs = slice(max(dc, 0), w + min(dc, 0))
    cd = slice(max(-dc, 0), w + min(-dc, 0))
    out[rd, cd] = a[rs, cs]
    return out


def lbp_hist(depth, valid, lut):
    """Histogram of uniform LBP codes over pixels whose 3x3 block is valid.

    depth: float64 grid; valid: uint8 grid; lut: int32[256] mapping code ->
    bin in [0, 58), 58 meaning non-uniform (dropped). Returns int64[58].
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    code = np.zeros(depth.shape, dtype=np.int32)
    ok = valid.copy()
    for bit, (dr, dc) in enumerate(_OFFSETS):
        nb = _shift(depth, dr, dc)
        ok &= _shift(valid, dr, dc, fill=False)
        code |= (nb >= depth).astype(np.int32) << bit
    bins = lut[code[ok]]
    return np.bincount(bins, minlength=59)[:58].astype(np.int64)


def zhang_suen_pass(img, step):
    """One Zhang-Suen sub-iteration, deleting pixels simultaneously.

    img: uint8 grid modified in place (border row/col must be empty).
    Returns the number of deleted pixels.
    """
    p = img.astype(bool)
    p2 = _shift(p, -1, 0, False)
    p3 = _shift(p, -1, 1, False)
    p4 = _shift(p, 0, 1, False)
    p5 = _shift(p, 1, 1, False)
    p6 = _shift(p, 1, 0, False)
    p7 = _shift(p, 1, -1, False)
    p8 = _shift(p, 0, -1, False)
    p9 = _shift(p, -1, -1, False)

    ring = [p2, p3, p4, p5, p6, p7, p8, p9]
    b = sum(x.astype(np.uint8) for x in ring)
    a = np.zeros(p.shape, dtype=np.uint8)
    for q, r in zip(ring, ring[1:] + ring[:1]):
        a += (~q & r).astype(np.uint8)

    cond = p & (b >= 2) & (b <= 6) & (a == 1)
    if step == 0:
        cond &= ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
    else:
        cond &= ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
    img[cond] = 0
    return int(cond.sum())


def majority_filter(classes, window, n_classes):
    """Windowed majority vote over class labels.

    classes: int8 grid, -1 = no vote. Window is clipped at the borders.
    Ties go to the lowest class index; zero votes give -1.
    """
    h, w = classes.shape
    r = window // 2
    counts = np.empty((n_classes, h, w), dtype=np.int64)
    for c in range(n_classes):
        onehot = (classes == c).astype(np.int64)
        # summed-area table, exact integer window sums
        sat = np.zeros((h + 1, w + 1), dtype=np.int64)
        np.cumsum(np.cumsum(onehot, axis=0), axis=1, out=sat[1:, 1:])
        r0 = np.clip(np.arange(h) - r, 0, h)
        r1 = np.clip(np.arange(h) + r + 1, 0, h)
        c0 = np.clip(np.arange(w) - r, 0, w)
        c1 = np.clip(np.arange(w) + r + 1, 0, w)
        counts[c] = (
            sat[np.ix_(r1, c1)] - sat[np.ix_(r0, c1)] - sat[np.ix_(r1, c0)] + sat[np.ix_(r0, c0)]
        )
    out = np.argmax(counts, axis=0).astype(np.int8)
    out[counts.sum(axis=0) == 0] = -1
    return out
