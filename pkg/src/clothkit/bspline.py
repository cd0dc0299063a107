"""B-spline basis evaluation, least-squares surface fitting and evaluation.

The numerical core shared by depth-map smoothing, curvature estimation and
the local surface-patch descriptors. Grids are indexed (row, col); a patch
axis is mapped affinely onto the open knot domain, so a 5x5-control cubic
patch uses the knot vector [0 0 0 0 1 2 2 2 2] on [0, 2].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .depthio import DepthMap
from .errors import ConfigError, DomainError, FitError

log = logging.getLogger(__name__)

_COND_LIMIT = 1e10
_RIDGE = 1e-9


@dataclass(frozen=True)
class KnotVector:
    """Non-decreasing knot list plus the spline order (degree + 1)."""

    order: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        if self.order < 2:
            raise ConfigError("spline order must be >= 2")
        if np.any(np.diff(knots) < 0):
            raise ConfigError("knots must be non-decreasing")
        if len(knots) < 2 * self.order:
            raise ConfigError("too few knots for the given order")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def open_uniform(cls, n_controls: int, order: int = 4) -> "KnotVector":
        """Open uniform vector with integer interior knots 0..spans."""
        spans = n_controls - order + 1
        if spans < 1:
            raise ConfigError(f"{n_controls} controls need order <= {n_controls}")
        inner = np.arange(1, spans, dtype=np.float64)
        knots = np.concatenate([np.zeros(order), inner, np.full(order, float(spans))])
        return cls(order=order, knots=knots)

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def n_controls(self) -> int:
        return len(self.knots) - self.order

    @property
    def tmin(self) -> float:
        return float(self.knots[self.degree])

    @property
    def tmax(self) -> float:
        return float(self.knots[self.n_controls])


def _find_span(kv: KnotVector, t: float) -> int:
    p = kv.degree
    n = kv.n_controls - 1
    knots = kv.knots
    if t >= knots[n + 1]:
        return n
    if t <= knots[p]:
        return p
    lo, hi = p, n + 1
    mid = (lo + hi) // 2
    while t < knots[mid] or t >= knots[mid + 1]:
        if t < knots[mid]:
            hi = mid
        else:
            lo = mid
        mid = (lo + hi) // 2
    return mid


def _ders_basis(kv: KnotVector, span: int, t: float, nders: int) -> np.ndarray:
    """Nonzero basis functions and derivatives at t (triangular recursion).

    Returns (nders+1, order) with row k holding the k-th derivatives of
    N_{span-degree+j} for j = 0..degree.
    """
    p = kv.degree
    U = kv.knots
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = t - U[span + 1 - j]
        right[j] = U[span + j] - t
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((nders + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nders + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, nders + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def basis_values(kv: KnotVector, t: float) -> np.ndarray:
    """All n_controls basis weights at parameter t (non-negative, sum 1)."""
    if not kv.tmin <= t <= kv.tmax:
        raise DomainError(f"t={t} outside [{kv.tmin}, {kv.tmax}]")
    span = _find_span(kv, t)
    out = np.zeros(kv.n_controls)
    out[span - kv.degree : span + 1] = _ders_basis(kv, span, t, 0)[0]
    return out


def basis_matrix(kv: KnotVector, ts: np.ndarray, nders: int = 0) -> np.ndarray:
    """Stack of basis rows: shape (nders+1, len(ts), n_controls)."""
    ts = np.asarray(ts, dtype=np.float64)
    out = np.zeros((nders + 1, len(ts), kv.n_controls))
    for i, t in enumerate(ts):
        if not kv.tmin <= t <= kv.tmax:
            raise DomainError(f"t={t} outside [{kv.tmin}, {kv.tmax}]")
        span = _find_span(kv, t)
        out[:, i, span - kv.degree : span + 1] = _ders_basis(kv, span, t, nders)
    return out


@dataclass(frozen=True)
class FittedSurface:
    """Tensor-product spline over a pixel rectangle.

    control[i, j] holds depth (mm); i runs along image rows, j along
    columns. Derivatives returned by evaluate() are per-pixel units.
    """

    control: np.ndarray
    kv_r: KnotVector
    kv_c: KnotVector
    r0: int
    c0: int
    nrows: int
    ncols: int

    def _params(self, r, c):
        sr = self.kv_r.tmax / (self.nrows - 1) if self.nrows > 1 else 0.0
        sc = self.kv_c.tmax / (self.ncols - 1) if self.ncols > 1 else 0.0
        return (np.asarray(r) - self.r0) * sr, (np.asarray(c) - self.c0) * sc, sr, sc

    def evaluate(self, r, c, dr: int = 0, dc: int = 0):
        """Point evaluation; (dr, dc) derivative orders, dr + dc <= 2."""
        if dr + dc > 2 or dr < 0 or dc < 0:
            raise ConfigError("derivative orders limited to dr + dc <= 2")
        u, v, sr, sc = self._params(r, c)
        bu = basis_matrix(self.kv_r, np.atleast_1d(u), dr)[dr]
        bv = basis_matrix(self.kv_c, np.atleast_1d(v), dc)[dc]
        vals = np.einsum("ti,ij,tj->t", bu, self.control, bv)
        vals *= sr**dr * sc**dc
        return float(vals[0]) if np.isscalar(r) and np.isscalar(c) else vals

    def evaluate_grid(self, rs, cs, dr: int = 0, dc: int = 0) -> np.ndarray:
        """Outer-product evaluation on row and column coordinate vectors."""
        if dr + dc > 2 or dr < 0 or dc < 0:
            raise ConfigError("derivative orders limited to dr + dc <= 2")
        u, v, sr, sc = self._params(np.asarray(rs), np.asarray(cs))
        bu = basis_matrix(self.kv_r, u, dr)[dr]
        bv = basis_matrix(self.kv_c, v, dc)[dc]
        return (bu @ self.control @ bv.T) * sr**dr * sc**dc


def _solve_spd(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    """Normal-equation solve with the spec'd near-singular fallback."""
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        log.warning("%s: ill-conditioned normal equations (cond=%.3g)", what, cond)
        a = a + _RIDGE * np.eye(len(a))
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"{what}: singular normal equations") from exc
    if not np.all(np.isfinite(x)):
        raise FitError(f"{what}: non-finite solution")
    return x


class PatchFitter:
    """Precomputed least-squares operator for fixed patch geometry.

    Fitting a fully-valid h x w patch reduces to two small solves:
    control = Lr @ P @ Lc.T with Lr = (Br'Br)^-1 Br'.
    """

    def __init__(self, nrows: int, ncols: int, controls=(5, 5), order: int = 4):
        nu, nv = controls
        if nrows < nu or ncols < nv:
            raise FitError(
                f"{nrows}x{ncols} patch under-determines a {nu}x{nv} control grid"
            )
        self.kv_r = KnotVector.open_uniform(nu, order)
        self.kv_c = KnotVector.open_uniform(nv, order)
        self.nrows, self.ncols = nrows, ncols
        ur = np.linspace(0.0, self.kv_r.tmax, nrows)
        vc = np.linspace(0.0, self.kv_c.tmax, ncols)
        self.br = basis_matrix(self.kv_r, ur, 0)[0]
        self.bc = basis_matrix(self.kv_c, vc, 0)[0]
        self._lr = _solve_spd(self.br.T @ self.br, self.br.T, "patch fit")
        self._lc = _solve_spd(self.bc.T @ self.bc, self.bc.T, "patch fit")

    def fit(self, patch: np.ndarray, r0: int = 0, c0: int = 0):
        """Returns (FittedSurface, residual RMS)."""
        patch = np.asarray(patch, dtype=np.float64)
        if patch.shape != (self.nrows, self.ncols):
            raise ConfigError(f"expected {self.nrows}x{self.ncols} patch")
        control = self._lr @ patch @ self._lc.T
        resid = patch - self.br @ control @ self.bc.T
        rms = float(np.sqrt(np.mean(resid**2)))
        surf = FittedSurface(
            control=control, kv_r=self.kv_r, kv_c=self.kv_c,
            r0=r0, c0=c0, nrows=self.nrows, ncols=self.ncols,
        )
        return surf, rms

    def fit_masked(self, patch: np.ndarray, valid: np.ndarray, r0: int = 0, c0: int = 0):
        """Least squares over valid pixels only; needs enough coverage."""
        nu, nv = self.kv_r.n_controls, self.kv_c.n_controls
        rr, cc = np.nonzero(valid)
        if len(rr) < nu * nv:
            raise FitError("too few valid pixels for the control grid")
        phi = (self.br[rr][:, :, None] * self.bc[cc][:, None, :]).reshape(len(rr), -1)
        rhs = phi.T @ patch[rr, cc]
        gram = phi.T @ phi
        try:
            omega = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            omega = None
        if omega is None or not np.all(np.isfinite(omega)):
            gram = gram + _RIDGE * np.trace(gram) * np.eye(len(gram))
            omega = np.linalg.solve(gram, rhs)
            if not np.all(np.isfinite(omega)):
                raise FitError("masked patch fit is degenerate")
        control = omega.reshape(nu, nv)
        resid = patch[rr, cc] - phi @ omega
        rms = float(np.sqrt(np.mean(resid**2)))
        surf = FittedSurface(
            control=control, kv_r=self.kv_r, kv_c=self.kv_c,
            r0=r0, c0=c0, nrows=self.nrows, ncols=self.ncols,
        )
        return surf, rms


def fit_patch(patch: np.ndarray, controls=(5, 5), order: int = 4):
    """Least-squares spline fit of a fully-valid patch; see PatchFitter."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2:
        raise ConfigError("patch must be a 2-D grid")
    return PatchFitter(patch.shape[0], patch.shape[1], controls, order).fit(patch)


# ---------------------------------------------------------------------------
# piece-wise smoothing

_DERIV_ORDERS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


class PiecewiseSurface:
    """Blended per-tile spline fits with per-pixel derivative grids.

    Attributes: depth (smoothed, mm), valid (pixels with derivative
    access), and d10/d01/d20/d11/d02 derivative grids in per-pixel units.
    tile_for(r, c) exposes the dominant tile's FittedSurface at a pixel.
    """

    def __init__(self, depth, valid, derivs, tiles, tile_ids):
        self.depth = depth
        self.valid = valid
        self.d10, self.d01, self.d20, self.d11, self.d02 = derivs
        self.tiles = tiles
        self._tile_ids = tile_ids

    def tile_for(self, r: int, c: int) -> FittedSurface:
        tid = self._tile_ids[r, c]
        if tid < 0:
            raise DomainError(f"pixel ({r}, {c}) is not covered by any tile")
        return self.tiles[tid]


def _tile_positions(size: int, tile: int, stride: int):
    if size <= tile:
        return [0]
    pos = list(range(0, size - tile + 1, stride))
    if pos[-1] != size - tile:
        pos.append(size - tile)
    return pos


def _taper(size: int, flat_low: bool, flat_high: bool) -> np.ndarray:
    w = np.sin(np.pi * (np.arange(size) + 0.5) / size) ** 2
    mid = size // 2
    if flat_low:
        w[:mid] = w[mid]
    if flat_high:
        w[mid:] = w[mid]
    return w


def fit_surface_piecewise(
    dm: DepthMap, tile: int = 64, overlap: int = 16, knot_span: float = 3.0,
    order: int = 4,
) -> PiecewiseSurface:
    """Fit overlapping spline tiles and blend them into a smooth surface.

    Tiles are Hann-tapered so the composite is continuous; tapers are held
    flat on image-boundary sides so coverage never vanishes. Tiles without
    enough valid pixels are skipped (their pixels keep the raw depth and
    are marked invalid).
    """
    if not dm.mask.any():
        raise ConfigError("mask is empty")
    if overlap < 0 or overlap >= tile:
        raise ConfigError("need 0 <= overlap < tile")
    if knot_span <= 0:
        raise ConfigError("knot_span must be positive")
    h, w = dm.depth.shape
    stride = tile - overlap

    def n_controls(size):
        nc = max(1, round(size / knot_span)) + order - 1
        nc = max(nc, order)
        if nc > size:
            raise ConfigError(
                f"tile side {size} cannot support {nc} controls (knot span too small)"
            )
        return nc

    acc = [np.zeros((h, w)) for _ in _DERIV_ORDERS]
    wsum = np.zeros((h, w))
    best_w = np.zeros((h, w))
    tile_ids = np.full((h, w), -1, dtype=np.int32)
    tiles: list[FittedSurface] = []

    rpos = _tile_positions(h, min(tile, h), stride)
    cpos = _tile_positions(w, min(tile, w), stride)
    fitters: dict[tuple[int, int], PatchFitter] = {}
    for r0 in rpos:
        th = min(tile, h) if h > tile else h
        for c0 in cpos:
            tw = min(tile, w) if w > tile else w
            sub = dm.depth[r0 : r0 + th, c0 : c0 + tw]
            subm = dm.mask[r0 : r0 + th, c0 : c0 + tw]
            if not subm.any():
                continue
            key = (th, tw)
            if key not in fitters:
                fitters[key] = PatchFitter(th, tw, (n_controls(th), n_controls(tw)), order)
            fitter = fitters[key]
            try:
                if subm.all():
                    surf, _ = fitter.fit(sub, r0, c0)
                else:
                    surf, _ = fitter.fit_masked(sub, subm, r0, c0)
            except FitError:
                log.warning("skipping tile at (%d, %d): degenerate fit", r0, c0)
                continue
            tid = len(tiles)
            tiles.append(surf)
            wr = _taper(th, r0 == 0, r0 + th == h)
            wc = _taper(tw, c0 == 0, c0 + tw == w)
            w2d = np.where(subm, wr[:, None] * wc[None, :], 0.0)
            rs = np.arange(r0, r0 + th)
            cs = np.arange(c0, c0 + tw)
            sl = (slice(r0, r0 + th), slice(c0, c0 + tw))
            for a, (du, dv) in zip(acc, _DERIV_ORDERS):
                a[sl] += w2d * surf.evaluate_grid(rs, cs, du, dv)
            wsum[sl] += w2d
            better = w2d > best_w[sl]
            best_w[sl] = np.where(better, w2d, best_w[sl])
            tile_ids[sl] = np.where(better, tid, tile_ids[sl])

    valid = dm.mask & (wsum > 0)
    denom = np.where(wsum > 0, wsum, 1.0)
    fields = [a / denom for a in acc]
    depth = np.where(valid, fields[0], dm.depth)
    derivs = [np.where(valid, f, 0.0) for f in fields[1:]]
    return PiecewiseSurface(depth, valid, derivs, tiles, tile_ids)
