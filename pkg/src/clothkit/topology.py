"""Wrinkle topology: ridge/contour detection, thinning, spatial distances."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .bspline import PiecewiseSurface
from .depthio import save_pgm8
from .errors import ConfigError
from .geometry import RIDGE_SIDE_CLASSES, CurvatureMap, ShapeIndexMap

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TopologyMap:
    """One-pixel-wide ridge and contour pixel sets over a smoothed depth grid.

    Coordinate arrays are (n, 2) int (row, col), lexicographically sorted.
    """

    ridges: np.ndarray
    contours: np.ndarray
    depth: np.ndarray


@dataclass(frozen=True)
class TsdSamples:
    """Per-ridge-point (planar distance px, depth difference mm) pairs."""

    widths: np.ndarray
    heights: np.ndarray


def detect_ridges(cm: CurvatureMap, sim: ShapeIndexMap, thresholds) -> np.ndarray:
    """Ridge candidates: dominant curvature over any threshold, ridge-side class.

    The dominant curvature is the principal curvature of larger magnitude
    (at a crest that is k_min, which is negative under the relief
    convention). Output is pre-thinning.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ConfigError("threshold list must not be empty")
    mag = np.maximum(np.abs(cm.k_min), np.abs(cm.k_max))
    over = np.zeros(mag.shape, dtype=bool)
    for t in thresholds:
        over |= mag > t
    ridgeish = np.isin(sim.cls, RIDGE_SIDE_CLASSES)
    return cm.valid & sim.valid & over & ridgeish


# direction classes: unit vectors (dc, dr) at 0/45/90/135 degrees
_DIR_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1))


def detect_contours(surface: PiecewiseSurface, min_swing: float = 0.0) -> np.ndarray:
    """Zero-crossings of the second derivative along the principal direction.

    The direction is taken from the dominant eigenvector of the depth
    Hessian, quantised to the 4 grid axes; a pixel is marked when the
    directional second derivative changes sign towards a neighbour and the
    crossing lies on this pixel's side. min_swing > 0 additionally demands
    the derivative jump across the crossing to exceed that value, gating
    out sensor-noise inflections. Pre-thinning.
    """
    fxx, fxy, fyy = surface.d02, surface.d11, surface.d20
    half_tr = 0.5 * (fxx + fyy)
    half_df = 0.5 * (fxx - fyy)
    root = np.sqrt(half_df**2 + fxy**2)
    lam_hi = half_tr + root
    lam_lo = half_tr - root
    lam = np.where(np.abs(lam_hi) >= np.abs(lam_lo), lam_hi, lam_lo)
    # eigenvector of [[fxx, fxy], [fxy, fyy]] for lam, in (x, y) components
    vx = np.where(np.abs(fxy) > 1e-12, lam - fyy, (np.abs(fxx) >= np.abs(fyy)) * 1.0)
    vy = np.where(np.abs(fxy) > 1e-12, fxy, (np.abs(fxx) < np.abs(fyy)) * 1.0)
    ang = np.mod(np.arctan2(vy, vx), np.pi)
    dircls = np.mod(np.rint(ang / (np.pi / 4.0)).astype(np.int64), 4)

    # directional second derivatives for the 4 quantised directions
    g_all = np.stack([
        fxx,
        0.5 * (fxx + 2.0 * fxy + fyy),
        fyy,
        0.5 * (fxx - 2.0 * fxy + fyy),
    ])
    h, w = fxx.shape
    rows, cols = np.mgrid[0:h, 0:w]
    g = g_all[dircls, rows, cols]

    out = np.zeros((h, w), dtype=bool)
    valid = surface.valid
    for d, (dc, dr) in enumerate(_DIR_OFFSETS):
        here = valid & (dircls == d)
        for sgn in (1, -1):
            nb_g = _shift2(g, sgn * dr, sgn * dc)
            nb_ok = _shift2(valid, sgn * dr, sgn * dc, fill=False)
            cross = (g * nb_g < 0.0) | ((g == 0.0) & (nb_g != 0.0))
            near = np.abs(g) <= np.abs(nb_g)
            hit = here & nb_ok & cross & near
            if min_swing > 0.0:
                hit &= np.abs(nb_g - g) >= min_swing
            out |= hit
    return out


def _shift2(a, dr, dc, fill=0):
    out = np.full_like(a, fill)
    h, w = a.shape
    rs = slice(max(dr, 0), h + min(dr, 0))
    rd = slice(max(-dr, 0), h + min(-dr, 0))
    cs = slice(max(dc, 0), w + min(dc, 0))
    cd = slice(max(-dc, 0), w + min(-dc, 0))
    out[rd, cd] = a[rs, cs]
    return out


def thin(binary: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a one-pixel-wide skeleton.

    Two-subiteration morphological thinning followed by a cleanup pass that
    deletes redundant simple pixels from any surviving 2x2 solid block.
    """
    img = np.zeros((binary.shape[0] + 2, binary.shape[1] + 2), dtype=np.uint8)
    img[1:-1, 1:-1] = binary != 0
    while True:
        n = kernels.zhang_suen_pass(img, 0)
        n += kernels.zhang_suen_pass(img, 1)
        if n == 0:
            break
    _cleanup_blocks(img)
    return img[1:-1, 1:-1].astype(bool)


def _neigh_stats(img, r, c):
    p = (
        img[r - 1, c], img[r - 1, c + 1], img[r, c + 1], img[r + 1, c + 1],
        img[r + 1, c], img[r + 1, c - 1], img[r, c - 1], img[r - 1, c - 1],
    )
    b = sum(p)
    a = sum(1 for q, nxt in zip(p, p[1:] + p[:1]) if q == 0 and nxt == 1)
    return a, b


def _cleanup_blocks(img) -> None:
    """Remove one simple pixel per surviving 2x2 block until none remain."""
    while True:
        solid = (
            img[:-1, :-1].astype(bool) & img[1:, :-1].astype(bool)
            & img[:-1, 1:].astype(bool) & img[1:, 1:].astype(bool)
        )
        corners = np.argwhere(solid)
        if len(corners) == 0:
            return
        changed = False
        for r, c in corners:
            if not (img[r, c] and img[r + 1, c] and img[r, c + 1] and img[r + 1, c + 1]):
                continue  # an earlier deletion already broke this block
            for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
                a, b = _neigh_stats(img, r + dr, c + dc)
                if a == 1 and b >= 2:
                    img[r + dr, c + dc] = 0
                    changed = True
                    break
        if not changed:
            return


def build_topology(
    surface: PiecewiseSurface, cm: CurvatureMap, sim: ShapeIndexMap, thresholds,
    min_swing: float = 0.0,
) -> TopologyMap:
    """Detect, thin and collect the ridge and wrinkle-contour pixel sets."""
    ridge_map = thin(detect_ridges(cm, sim, thresholds))
    contour_map = thin(detect_contours(surface, min_swing))
    return TopologyMap(
        ridges=_coords(ridge_map),
        contours=_coords(contour_map),
        depth=surface.depth,
    )


def _coords(mask: np.ndarray) -> np.ndarray:
    pts = np.argwhere(mask)  # already row-major, i.e. lexicographic
    return pts.astype(np.int64)


def tsd_distances(top: TopologyMap) -> TsdSamples:
    """Width/height pair per ridge pixel against its nearest contour pixel.

    Width is exact Euclidean pixel distance; height is ridge depth minus
    the nearest contour pixel's depth (signed, mm). Distance ties resolve
    to the lexicographically smallest contour pixel.
    """
    empty = TsdSamples(widths=np.zeros(0), heights=np.zeros(0))
    if len(top.ridges) == 0:
        return empty
    if len(top.contours) == 0:
        log.warning("tsd: no contour pixels; returning empty samples")
        return empty
    ridges = top.ridges
    contours = top.contours
    tree = cKDTree(contours)
    dist, _ = tree.query(ridges)
    radii = dist * (1.0 + 1e-9) + 1e-9
    groups = tree.query_ball_point(ridges, radii)
    widths = np.empty(len(ridges))
    heights = np.empty(len(ridges))
    for i, cand in enumerate(groups):
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        deltas = contours[cand] - ridges[i]
        d2 = deltas[:, 0] ** 2 + deltas[:, 1] ** 2
        best = int(cand[np.argmin(d2)])  # argmin -> first minimal -> lexicographic
        widths[i] = np.sqrt(float(d2.min()))
        rr, rc = ridges[i]
        wr, wc = contours[best]
        heights[i] = top.depth[rr, rc] - top.depth[wr, wc]
    return TsdSamples(widths=widths, heights=heights)


def save_topology_pgm(path, top: TopologyMap) -> None:
    """Debug overlay: ridges 255, contours 128, background 0."""
    img = np.zeros(top.depth.shape, dtype=np.uint8)
    if len(top.contours):
        img[top.contours[:, 0], top.contours[:, 1]] = 128
    if len(top.ridges):
        img[top.ridges[:, 0], top.ridges[:, 1]] = 255
    save_pgm8(path, img)
