"""The four descriptor families and their fusion into the L-S-T-B vector.

Block layout is fixed and versioned: LBP (174) | SI (9) | TSD (100) |
pooled local codes (K). Each global block is L2-normalised on its own
(degenerate inputs give an all-zero block instead of raising, so one bad
image cannot abort a batch).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .bspline import PatchFitter
from .depthio import DepthMap
from .errors import ConfigError, ConsistencyError, FormatError
from .geometry import SURFACE_CLASSES, ShapeIndexMap
from .topology import TopologyMap, TsdSamples

log = logging.getLogger(__name__)

SI_DIM = 9
LBP_DIM = 174  # 58 uniform patterns x 3 pyramid levels
TSD_DIM = 100
BSP_DIM = 25


def _uniform_lut() -> np.ndarray:
    """Map 8-bit LBP codes to uniform-pattern bins; 58 marks non-uniform."""
    lut = np.full(256, 58, dtype=np.int32)
    nxt = 0
    for code in range(256):
        bits = [(code >> i) & 1 for i in range(8)]
        trans = sum(a != b for a, b in zip(bits, bits[1:] + bits[:1]))
        if trans <= 2:
            lut[code] = nxt
            nxt += 1
    assert nxt == 58
    return lut


LBP_LUT = _uniform_lut()


@dataclass(frozen=True)
class GlobalFeature:
    block_id: str  # SI, LBP or TSD
    values: np.ndarray


@dataclass(frozen=True)
class BspDescriptor:
    """25 centre-relative control depths of a ridge-anchored patch fit."""

    values: np.ndarray
    anchor: tuple[int, int]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    block_dims: tuple[int, ...]
    block_ids: tuple[str, ...]


def _l2(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def si_histogram(sim: ShapeIndexMap) -> GlobalFeature:
    """9-bin histogram of surface classes over defined pixels, L2-normalised."""
    defined = sim.valid & (sim.cls >= 0)
    counts = np.bincount(sim.cls[defined], minlength=SI_DIM).astype(np.float64)
    if counts.sum() == 0:
        log.warning("si_histogram: no defined pixels, emitting zero block")
    return GlobalFeature("SI", _l2(counts))


def _pyramid_level(depth, mask, sigma):
    """Masked Gaussian smoothing followed by factor-2 subsampling."""
    m = mask.astype(np.float64)
    num = gaussian_filter(depth * m, sigma)
    den = gaussian_filter(m, sigma)
    sm = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
    return sm[::2, ::2], mask[::2, ::2]


def lbp_histogram(dm: DepthMap, levels: int = 3, sigma: float = 0.375) -> GlobalFeature:
    """Uniform-pattern LBP histograms over a Gaussian pyramid of the raw depth.

    58 bins per level, concatenated (levels x 58) then L2-normalised once.
    A level whose mask degenerates contributes an all-zero sub-histogram.
    """
    if levels < 1:
        raise ConfigError("need at least one pyramid level")
    depth, mask = dm.depth, dm.mask
    parts = []
    for lvl in range(levels):
        if min(depth.shape) >= 3 and mask.any():
            hist = kernels.lbp_hist(
                np.ascontiguousarray(depth),
                np.ascontiguousarray(mask.astype(np.uint8)),
                LBP_LUT,
            ).astype(np.float64)
        else:
            hist = np.zeros(58)
        parts.append(hist)
        if lvl + 1 < levels:
            depth, mask = _pyramid_level(depth, mask, sigma)
    return GlobalFeature("LBP", _l2(np.concatenate(parts)))


def tsd_histogram(
    samples: TsdSamples, lo: float = 5.0, hi: float = 50.0, bins: int = 10
) -> GlobalFeature:
    """10x10 width/height histogram on [lo, hi]^2, row-major, L2-normalised.

    Samples outside the range on either axis are removed before binning.
    """
    if hi <= lo or bins < 1:
        raise ConfigError("bad TSD histogram range")
    keep = (
        (samples.widths >= lo) & (samples.widths <= hi)
        & (samples.heights >= lo) & (samples.heights <= hi)
    )
    w, h = samples.widths[keep], samples.heights[keep]
    if len(w) == 0:
        if len(samples.widths):
            log.warning("tsd_histogram: all %d samples out of range", len(samples.widths))
        return GlobalFeature("TSD", np.zeros(bins * bins))
    edges = np.linspace(lo, hi, bins + 1)
    hist, _, _ = np.histogram2d(w, h, bins=[edges, edges])
    return GlobalFeature("TSD", _l2(hist.ravel()))


def bsp_descriptors(
    smoothed: np.ndarray,
    mask: np.ndarray,
    top: TopologyMap,
    patch: int = 41,
    stride: int = 8,
    controls: int = 5,
) -> list[BspDescriptor]:
    """Centre-relative 5x5 control grids fitted at every stride-th ridge pixel.

    Anchors whose patch window leaves the mask (or the image) are skipped.
    """
    if patch % 2 == 0 or patch < controls:
        raise ConfigError("patch must be odd and at least the control count")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if len(top.ridges) == 0:
        log.warning("bsp_descriptors: empty ridge set")
        return []
    half = patch // 2
    h, w = smoothed.shape
    # exact window-validity test via a summed-area table of the mask
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1, out=sat[1:, 1:])
    fitter = PatchFitter(patch, patch, (controls, controls))
    centre = (controls // 2, controls // 2)
    out = []
    for r, c in top.ridges[::stride]:
        r0, c0 = r - half, c - half
        r1, c1 = r + half + 1, c + half + 1
        if r0 < 0 or c0 < 0 or r1 > h or c1 > w:
            continue
        covered = sat[r1, c1] - sat[r0, c1] - sat[r1, c0] + sat[r0, c0]
        if covered != patch * patch:
            continue
        surf, _ = fitter.fit(smoothed[r0:r1, c0:c1], r0, c0)
        vals = surf.control - surf.control[centre]
        out.append(BspDescriptor(values=vals.ravel(), anchor=(int(r), int(c))))
    if not out:
        log.warning("bsp_descriptors: no valid anchors")
    return out


def fuse(
    lbp: GlobalFeature, si: GlobalFeature, tsd: GlobalFeature, pooled: np.ndarray
) -> FeatureVector:
    """Concatenate LBP | SI | TSD | pooled codes; no cross-block rescaling."""
    checks = ((lbp, "LBP", LBP_DIM), (si, "SI", SI_DIM), (tsd, "TSD", TSD_DIM))
    for feat, name, dim in checks:
        if feat.block_id != name or len(feat.values) != dim:
            raise ConsistencyError(f"expected {name}[{dim}], got "
                                   f"{feat.block_id}[{len(feat.values)}]")
    pooled = np.asarray(pooled, dtype=np.float64)
    values = np.concatenate([lbp.values, si.values, tsd.values, pooled])
    return FeatureVector(
        values=values,
        block_dims=(LBP_DIM, SI_DIM, TSD_DIM, len(pooled)),
        block_ids=("LBP", "SI", "TSD", "BSP"),
    )


# ---------------------------------------------------------------------------
# feature files

_MAGIC = b"LSTB1"


def write_features_csv(path, records, config_hash: str, seed: int) -> None:
    """records: iterable of (item, label, values). Values use repr precision."""
    lines = [f"# clothkit features config={config_hash} seed={seed}"]
    for item, label, values in records:
        vals = ",".join(format(v, ".17g") for v in values)
        head = f"{item},{label},{len(values)}"
        lines.append(f"{head},{vals}" if len(values) else head)
    Path(path).write_text("\n".join(lines) + "\n")


def read_features_csv(path):
    """Returns (records, config_hash, seed)."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# clothkit features"):
        raise FormatError(f"{path}: missing feature-file header")
    fields = dict(
        kv.split("=", 1) for kv in text[0].removeprefix("# clothkit features").split()
    )
    records = []
    for line in text[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        item, label, dim = parts[0], parts[1], int(parts[2])
        values = np.array([float(x) for x in parts[3:]])
        if len(values) != dim:
            raise FormatError(f"{path}: record {item} claims {dim} values, "
                              f"has {len(values)}")
        records.append((item, label, values))
    return records, fields.get("config", ""), int(fields.get("seed", "0"))


def write_features_binary(path, records, config_hash: str, seed: int) -> None:
    records = list(records)
    blob = [_MAGIC, struct.pack("<16sqI", config_hash.encode()[:16], seed, len(records))]
    for item, label, values in records:
        ib, lb = item.encode(), label.encode()
        blob.append(struct.pack("<HHI", len(ib), len(lb), len(values)))
        blob.append(ib)
        blob.append(lb)
        blob.append(np.asarray(values, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(blob))


def read_features_binary(path):
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise FormatError(f"{path}: bad magic, expected {_MAGIC!r}")
    off = len(_MAGIC)
    config_hash, seed, count = struct.unpack_from("<16sqI", data, off)
    off += struct.calcsize("<16sqI")
    records = []
    for _ in range(count):
        ilen, llen, dim = struct.unpack_from("<HHI", data, off)
        off += struct.calcsize("<HHI")
        item = data[off : off + ilen].decode()
        off += ilen
        label = data[off : off + llen].decode()
        off += llen
        values = np.frombuffer(data, dtype="<f8", count=dim, offset=off).copy()
        off += 8 * dim
        records.append((item, label, values))
    return records, config_hash.rstrip(b"\x00").decode(), seed
