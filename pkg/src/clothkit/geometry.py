"""Principal curvatures, shape index and majority rank filtering.

Depth grids follow the relief orientation (wrinkle crests are local maxima)
and curvatures use the Monge-patch construction z = f(x, y) with the
upward normal. A crest line then carries k_min = -c, k_max ~ 0, which the
shape-index formula S = (2/pi) atan[(k_min+k_max)/(k_min-k_max)] places at
S = +0.5, i.e. the "ridge" class. Under a far-is-larger depth axis the
ridge/rut labels swap; convert such maps (negate) before calling in here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .bspline import PiecewiseSurface
from .depthio import save_pgm8
from .errors import ConfigError

SURFACE_CLASSES = (
    "cup", "trough", "rut", "saddle rut", "saddle",
    "saddle ridge", "ridge", "dome", "cap",
)
UNDEFINED = -1
RIDGE_SIDE_CLASSES = (5, 6, 7, 8)  # saddle ridge, ridge, dome, cap


@dataclass(frozen=True)
class CurvatureMap:
    """Per-pixel principal curvatures (1/mm), value-ordered k_min <= k_max."""

    k_min: np.ndarray
    k_max: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class ShapeIndexMap:
    """Shape index S in [-1, 1] plus its 9-way class (-1 = undefined)."""

    s: np.ndarray
    cls: np.ndarray  # int8
    valid: np.ndarray


def principal_curvatures(surface: PiecewiseSurface, pitch_mm: float = 1.0) -> CurvatureMap:
    """Shape-operator eigenvalue extremes of the fitted Monge patch.

    pitch_mm converts the pixel grid spacing to millimetres so curvature
    comes out in 1/mm.
    """
    if pitch_mm <= 0:
        raise ConfigError("pitch must be positive")
    fx = surface.d01 / pitch_mm
    fy = surface.d10 / pitch_mm
    fxx = surface.d02 / pitch_mm**2
    fxy = surface.d11 / pitch_mm**2
    fyy = surface.d20 / pitch_mm**2

    g = 1.0 + fx**2 + fy**2
    wroot = np.sqrt(g)
    e1, f1, g1 = 1.0 + fx**2, fx * fy, 1.0 + fy**2
    l2, m2, n2 = fxx / wroot, fxy / wroot, fyy / wroot
    denom = e1 * g1 - f1**2  # = g, always >= 1
    gauss = (l2 * n2 - m2**2) / denom
    mean = (e1 * n2 - 2.0 * f1 * m2 + g1 * l2) / (2.0 * denom)
    disc = np.sqrt(np.maximum(mean**2 - gauss, 0.0))
    k_min = mean - disc
    k_max = mean + disc
    valid = surface.valid & np.isfinite(k_min) & np.isfinite(k_max)
    k_min = np.where(valid, k_min, 0.0)
    k_max = np.where(valid, k_max, 0.0)
    return CurvatureMap(k_min=k_min, k_max=k_max, valid=valid)


def shape_index(cm: CurvatureMap) -> ShapeIndexMap:
    """S = (2/pi) atan[(k_min+k_max)/(k_min-k_max)], quantised to 9 classes.

    Umbilic pixels (k_min == k_max) saturate to S = +-1 when curved; flat
    umbilics are the undefined class.
    """
    num = cm.k_min + cm.k_max
    den = cm.k_min - cm.k_max  # <= 0 by ordering
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (2.0 / np.pi) * np.arctan(num / den)
    umb = den == 0.0
    # limit of num/den with den -> 0-: sign is -sign(num)
    s = np.where(umb, -np.sign(num), s)
    flat = umb & (num == 0.0)
    s = np.where(flat, 0.0, s)
    s = np.clip(s, -1.0, 1.0)
    cls = np.minimum((s + 1.0) * 4.5, 8.0).astype(np.int8)
    cls[flat | ~cm.valid] = UNDEFINED
    s = np.where(cm.valid, s, 0.0)
    return ShapeIndexMap(s=s, cls=cls, valid=cm.valid)


def majority_rank_filter(sim: ShapeIndexMap, window: int = 5) -> ShapeIndexMap:
    """Replace each class by the most frequent one in its window.

    Undefined pixels cast no votes; ties go to the lowest class index; the
    S grid passes through untouched.
    """
    if window < 3 or window % 2 == 0:
        raise ConfigError("window must be odd and >= 3")
    votes = np.where(sim.valid, sim.cls, UNDEFINED).astype(np.int8)
    filtered = kernels.majority_filter(votes, window, len(SURFACE_CLASSES))
    filtered = np.where(sim.valid, filtered, UNDEFINED).astype(np.int8)
    return replace(sim, cls=filtered)


def save_shape_index_pgm(path, sim: ShapeIndexMap) -> None:
    """Debug dump: class index x 25, undefined pixels rendered 255."""
    img = np.where(sim.cls >= 0, sim.cls.astype(np.int32) * 25, 255)
    save_pgm8(path, img)
