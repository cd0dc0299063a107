# Compiled counterparts of kernels/_pure.py; outputs must match it exactly.

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "ext"

cdef int _DR[8]
cdef int _DC[8]
_DR[0] = -1; _DR[1] = -1; _DR[2] = -1; _DR[3] = 0
_DR[4] = 1;  _DR[5] = 1;  _DR[6] = 1;  _DR[7] = 0
_DC[0] = -1; _DC[1] = 0;  _DC[2] = 1;  _DC[3] = 1
_DC[4] = 1;  _DC[5] = 0;  _DC[6] = -1; _DC[7] = -1


def lbp_hist(double[:, :] depth, unsigned char[:, :] valid, int[:] lut):
    cdef Py_ssize_t h = depth.shape[0], w = depth.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hist = np.zeros(58, dtype=np.int64)
    cdef long long[:] hv = hist
    cdef Py_ssize_t r, c
    cdef int bit, code, ok, rr, cc, b
    cdef double centre
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            if not valid[r, c]:
                continue
            ok = 1
            code = 0
            centre = depth[r, c]
            for bit in range(8):
                rr = <int>r + _DR[bit]
                cc = <int>c + _DC[bit]
                if not valid[rr, cc]:
                    ok = 0
                    break
                if depth[rr, cc] >= centre:
                    code |= 1 << bit
            if ok:
                b = lut[code]
                if b < 58:
                    hv[b] += 1
    return hist


def zhang_suen_pass(unsigned char[:, :] img, int step):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t r, c
    cdef int p2, p3, p4, p5, p6, p7, p8, p9, b, a, n
    cdef list kill = []
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            if not img[r, c]:
                continue
            p2 = img[r - 1, c]
            p3 = img[r - 1, c + 1]
            p4 = img[r, c + 1]
            p5 = img[r + 1, c + 1]
            p6 = img[r + 1, c]
            p7 = img[r + 1, c - 1]
            p8 = img[r, c - 1]
            p9 = img[r - 1, c - 1]
            b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
            if b < 2 or b > 6:
                continue
            a = 0
            if p2 == 0 and p3 == 1: a += 1
            if p3 == 0 and p4 == 1: a += 1
            if p4 == 0 and p5 == 1: a += 1
            if p5 == 0 and p6 == 1: a += 1
            if p6 == 0 and p7 == 1: a += 1
            if p7 == 0 and p8 == 1: a += 1
            if p8 == 0 and p9 == 1: a += 1
            if p9 == 0 and p2 == 1: a += 1
            if a != 1:
                continue
            if step == 0:
                if p2 * p4 * p6 != 0 or p4 * p6 * p8 != 0:
                    continue
            else:
                if p2 * p4 * p8 != 0 or p2 * p6 * p8 != 0:
                    continue
            kill.append((r, c))
    n = len(kill)
    for r, c in kill:
        img[r, c] = 0
    return n


def majority_filter(signed char[:, :] classes, int window, int n_classes):
    cdef Py_ssize_t h = classes.shape[0], w = classes.shape[1]
    cdef cnp.ndarray[cnp.int8_t, ndim=2] out = np.empty((h, w), dtype=np.int8)
    cdef signed char[:, :] ov = out
    cdef Py_ssize_t r, c
    cdef int rad = window // 2
    cdef int rr, cc, r0, r1, c0, c1, k, best, best_n, total
    cdef long long counts[128]
    for r in range(h):
        r0 = <int>r - rad
        if r0 < 0: r0 = 0
        r1 = <int>r + rad
        if r1 > h - 1: r1 = <int>h - 1
        for c in range(w):
            c0 = <int>c - rad
            if c0 < 0: c0 = 0
            c1 = <int>c + rad
            if c1 > w - 1: c1 = <int>w - 1
            for k in range(n_classes):
                counts[k] = 0
            total = 0
            for rr in range(r0, r1 + 1):
                for cc in range(c0, c1 + 1):
                    k = classes[rr, cc]
                    if k >= 0:
                        counts[k] += 1
                        total += 1
            if total == 0:
                ov[r, c] = -1
                continue
            best = 0
            best_n = 0
            for k in range(n_classes):
                if counts[k] > best_n:
                    best_n = counts[k]
                    best = k
            ov[r, c] = <signed char>best
    return out
