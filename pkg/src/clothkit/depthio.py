"""Depth-map file IO, dataset manifests and synthetic wrinkled surfaces.

Depth maps are 16-bit binary PGM (P5, maxval 65535, big-endian), one raw
unit = 1 mm. Masks are 8-bit PGM, nonzero = garment pixel. Depth grids use
the relief orientation: wrinkle crests are local maxima of the stored value
(see geometry module notes).
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError

# Minimum side length required by the 5x5-control patch fit; enforced where
# surfaces are fitted, not at decode time (tiny grids are legal test inputs).
MIN_FIT_SIDE = 16


@dataclass(frozen=True)
class DepthMap:
    """Rectangular grid of depth samples (mm) plus a validity mask."""

    depth: np.ndarray  # float64, shape (height, width)
    mask: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        depth = np.ascontiguousarray(self.depth, dtype=np.float64)
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if depth.ndim != 2 or mask.shape != depth.shape:
            raise ConsistencyError(
                f"depth grid {depth.shape} and mask grid {mask.shape} disagree"
            )
        if not np.all(np.isfinite(depth[mask])):
            raise ConsistencyError("masked pixel holds a non-finite depth value")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class ManifestEntry:
    depth_path: Path
    mask_path: Path | None
    label: str
    item: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    categories: tuple[str, ...]

    def __post_init__(self):
        known = set(self.categories)
        for e in self.entries:
            if e.label not in known:
                raise ConsistencyError(f"label {e.label!r} not in category list")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic wrinkled-surface class sample."""

    class_id: int
    wrinkle_count: tuple[int, int]  # inclusive (min, max)
    ridge_sigma: float  # cross-section std, pixels
    ridge_height: float  # crest amplitude, mm
    base_depth: float  # flat background level, mm
    noise_sigma: float  # white-noise std, mm
    seed: int
    width: int = 256
    height: int = 256

    def __post_init__(self):
        lo, hi = self.wrinkle_count
        if lo > hi or lo < 0:
            raise ConfigError(f"bad wrinkle count range ({lo}, {hi})")
        if self.ridge_sigma <= 0 or self.ridge_height <= 0:
            raise ConfigError("ridge sigma and height must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")


# ---------------------------------------------------------------------------
# PGM

def _parse_pgm(data: bytes, what: str):
    if not data.startswith(b"P5"):
        raise FormatError(f"{what}: not a binary PGM (P5) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise FormatError(f"{what}: unterminated comment in PGM header")
            pos = nl + 1
            continue
        m = re.match(rb"[0-9]+", data[pos:])
        if m is None:
            raise FormatError(f"{what}: malformed PGM header")
        fields.append(int(m.group()))
        pos += m.end()
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(f"{what}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"{what}: invalid PGM dimensions or maxval")
    nbytes = width * height * (2 if maxval > 255 else 1)
    if len(data) - pos != nbytes:
        raise FormatError(
            f"{what}: expected {nbytes} sample bytes, found {len(data) - pos}"
        )
    dtype = ">u2" if maxval > 255 else np.uint8
    samples = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return samples.reshape(height, width), maxval


def load_depth(path, mask_path=None) -> DepthMap:
    """Load a 16-bit PGM depth map, optionally paired with an 8-bit mask."""
    path = Path(path)
    raw, maxval = _parse_pgm(path.read_bytes(), str(path))
    if maxval <= 255:
        raise FormatError(f"{path}: depth PGM must be 16-bit (maxval > 255)")
    depth = raw.astype(np.float64)
    if mask_path is not None:
        mraw, mmax = _parse_pgm(Path(mask_path).read_bytes(), str(mask_path))
        if mmax > 255:
            raise FormatError(f"{mask_path}: mask PGM must be 8-bit")
        if mraw.shape != depth.shape:
            raise ConsistencyError(
                f"depth {depth.shape} and mask {mraw.shape} dimensions differ"
            )
        mask = mraw != 0
    else:
        mask = np.ones(depth.shape, dtype=bool)
    return DepthMap(depth=depth, mask=mask)


def save_depth(path, dm: DepthMap) -> None:
    """Write canonical 16-bit P5; values rounded to integer millimetres."""
    grid = np.clip(np.rint(dm.depth), 0, 65535).astype(">u2")
    _write_pgm(path, grid, 65535)


def save_mask(path, mask: np.ndarray) -> None:
    _write_pgm(path, np.where(mask, 255, 0).astype(np.uint8), 255)


def _write_pgm(path, grid, maxval) -> None:
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + grid.tobytes())


def save_pgm8(path, grid: np.ndarray) -> None:
    """8-bit PGM writer for debug dumps."""
    _write_pgm(path, np.clip(grid, 0, 255).astype(np.uint8), 255)


# ---------------------------------------------------------------------------
# manifests

_HEADER = ["depth", "mask", "label", "item"]


def load_manifest(path) -> DatasetManifest:
    """Parse a `depth,mask,label,item` CSV; paths resolve against its folder.

    File existence is not checked here -- missing files surface when the
    sample is actually loaded.
    """
    path = Path(path)
    base = path.parent
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != _HEADER:
        raise FormatError(f"{path}: manifest header must be {','.join(_HEADER)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
        depth_raw, mask_raw, label, item = (c.strip() for c in row)
        if not depth_raw or not label or not item:
            raise FormatError(f"{path}:{lineno}: empty depth/label/item field")
        entries.append(
            ManifestEntry(
                depth_path=_resolve(base, depth_raw),
                mask_path=_resolve(base, mask_raw) if mask_raw else None,
                label=label,
                item=item,
            )
        )
    categories = tuple(sorted({e.label for e in entries}))
    return DatasetManifest(entries=tuple(entries), categories=categories)


def save_manifest(path, entries) -> None:
    """Write entries of (depth, mask, label, item); paths taken as given."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for depth_p, mask_p, label, item in entries:
            writer.writerow([str(depth_p), str(mask_p or ""), label, item])


def _resolve(base: Path, raw: str) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------------------
# synthetic surfaces

def synth_surface(spec: SynthSpec) -> DepthMap:
    """Deterministic wrinkled test surface; same spec => bit-identical grid.

    The surface is base_depth plus Gaussian ridge profiles of amplitude
    ridge_height laid along seeded random straight segments, plus white
    noise. Crests rise above the base (relief orientation). Full mask.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    depth = np.full((h, w), float(spec.base_depth))
    lo, hi = spec.wrinkle_count
    count = int(rng.integers(lo, hi + 1)) if hi > lo else lo
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    margin = 2.0 * spec.ridge_sigma
    for _ in range(count):
        cy = rng.uniform(margin, h - margin)
        cx = rng.uniform(margin, w - margin)
        angle = rng.uniform(0.0, np.pi)
        half = 0.5 * rng.uniform(0.3, 0.8) * min(h, w)
        dy, dx = np.sin(angle) * half, np.cos(angle) * half
        d2 = _segment_dist2(rows, cols, cy - dy, cx - dx, cy + dy, cx + dx)
        depth += spec.ridge_height * np.exp(-d2 / (2.0 * spec.ridge_sigma**2))
    if spec.noise_sigma > 0:
        depth += rng.normal(0.0, spec.noise_sigma, size=(h, w))
    return DepthMap(depth=depth, mask=np.ones((h, w), dtype=bool))


def _segment_dist2(rows, cols, r0, c0, r1, c1):
    """Squared distance from every pixel to the segment (r0,c0)-(r1,c1)."""
    vr, vc = r1 - r0, c1 - c0
    vv = vr * vr + vc * vc
    if vv == 0.0:
        return (rows - r0) ** 2 + (cols - c0) ** 2
    t = np.clip(((rows - r0) * vr + (cols - c0) * vc) / vv, 0.0, 1.0)
    return (rows - (r0 + t * vr)) ** 2 + (cols - (c0 + t * vc)) ** 2


def synth_seed(base_seed: int, *indices: int) -> int:
    """Stable 64-bit per-sample seed derived from a base seed and indices."""
    ss = np.random.SeedSequence([int(base_seed), *[int(i) for i in indices]])
    a, b = ss.generate_state(2)
    return int(a) << 32 | int(b)


# ---------------------------------------------------------------------------
# synth dataset spec files (flat key=value)

@dataclass(frozen=True)
class SynthClassSpec:
    name: str
    count: tuple[int, int]
    sigma: float
    height: float
    noise: float


@dataclass(frozen=True)
class SynthDatasetSpec:
    width: int = 256
    height: int = 256
    base_depth: float = 500.0
    classes: tuple[SynthClassSpec, ...] = field(default_factory=tuple)


def load_synth_spec(path) -> SynthDatasetSpec:
    """Read a flat key=value synth spec (see README for the key schema)."""
    kv = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    try:
        n = int(kv.pop("classes"))
        width = int(kv.pop("width", 256))
        height = int(kv.pop("height", 256))
        base = float(kv.pop("base_depth", 500.0))
        classes = []
        for i in range(n):
            p = f"class{i}."
            classes.append(
                SynthClassSpec(
                    name=kv.pop(p + "name", f"class{i}"),
                    count=(int(kv.pop(p + "count_min")), int(kv.pop(p + "count_max"))),
                    sigma=float(kv.pop(p + "sigma")),
                    height=float(kv.pop(p + "height")),
                    noise=float(kv.pop(p + "noise", "0")),
                )
            )
    except KeyError as exc:
        raise FormatError(f"{path}: missing synth spec key {exc}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if kv:
        raise FormatError(f"{path}: unknown synth spec keys {sorted(kv)}")
    return SynthDatasetSpec(width=width, height=height, base_depth=base, classes=tuple(classes))
