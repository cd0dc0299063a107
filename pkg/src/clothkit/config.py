"""Pipeline configuration: all tunables, key=value files, config hashing."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, FormatError

FEATURE_BLOCKS = ("lbp", "si", "tsd", "bsp")


@dataclass(frozen=True)
class PipelineConfig:
    # preprocessing
    resize_max_dim: int = 0  # 0 = process at load resolution
    xy_pitch_mm: float = 1.0
    # piece-wise smoothing
    smooth_tile: int = 64
    smooth_overlap: int = 16
    smooth_knot_span: float = 3.0
    # topology
    curvature_thresholds: tuple[float, ...] = (0.02, 0.05, 0.1)
    contour_min_swing: float = 0.0  # mm/px^2 slope gate on zero-crossings
    majority_window: int = 5
    # global features
    lbp_levels: int = 3
    lbp_sigma: float = 0.375
    tsd_lo: float = 5.0
    tsd_hi: float = 50.0
    tsd_bins: int = 10
    # local features + coding
    bsp_patch: int = 41
    bsp_stride: int = 8
    bsp_controls: int = 5
    codebook_k: int = 256
    llc_knn: int = 5
    llc_lambda: float = 1e-4
    weight_sigma: float = 0.005
    sample_cap: int = 100000
    pool_norm: str = "l2"  # "l2" or "none"
    # classification
    svm_c: float = 10.0
    svm_gamma: float = 0.0  # 0 = automatic 10/D
    svm_kernel: str = "rbf"
    folds: int = 5
    repeats: int = 10
    # shared
    seed: int = 0
    features: tuple[str, ...] = FEATURE_BLOCKS

    def validate(self) -> "PipelineConfig":
        if self.resize_max_dim < 0:
            raise ConfigError("resize_max_dim must be >= 0")
        if self.xy_pitch_mm <= 0:
            raise ConfigError("xy_pitch_mm must be positive")
        if not 0 <= self.smooth_overlap < self.smooth_tile:
            raise ConfigError("need 0 <= smooth_overlap < smooth_tile")
        if self.smooth_knot_span <= 0:
            raise ConfigError("smooth_knot_span must be positive")
        if not self.curvature_thresholds:
            raise ConfigError("curvature_thresholds must not be empty")
        if self.contour_min_swing < 0:
            raise ConfigError("contour_min_swing must be >= 0")
        if self.majority_window < 3 or self.majority_window % 2 == 0:
            raise ConfigError("majority_window must be odd and >= 3")
        if self.lbp_levels < 1 or self.lbp_sigma <= 0:
            raise ConfigError("bad LBP pyramid settings")
        if self.tsd_hi <= self.tsd_lo or self.tsd_bins < 1:
            raise ConfigError("bad TSD histogram settings")
        if self.bsp_patch % 2 == 0 or self.bsp_patch < self.bsp_controls:
            raise ConfigError("bsp_patch must be odd and >= bsp_controls")
        if self.bsp_stride < 1 or self.bsp_controls < 4:
            raise ConfigError("bad BSP extraction settings")
        if self.codebook_k < 2 or not 1 <= self.llc_knn <= self.codebook_k:
            raise ConfigError("need codebook_k >= 2 and 1 <= llc_knn <= codebook_k")
        if self.llc_lambda < 0 or self.weight_sigma <= 0 or self.sample_cap < 1:
            raise ConfigError("bad coding settings")
        if self.pool_norm not in ("l2", "none"):
            raise ConfigError("pool_norm must be l2 or none")
        if self.svm_c <= 0 or self.svm_gamma < 0:
            raise ConfigError("bad SVM settings")
        if self.svm_kernel not in ("rbf", "linear"):
            raise ConfigError("svm_kernel must be rbf or linear")
        if self.folds < 2 or self.repeats < 1:
            raise ConfigError("need folds >= 2 and repeats >= 1")
        bad = [f for f in self.features if f not in FEATURE_BLOCKS]
        if bad or not self.features:
            raise ConfigError(f"features must be a non-empty subset of "
                              f"{FEATURE_BLOCKS}, got {self.features}")
        return self

    def config_hash(self) -> str:
        payload = "\n".join(f"{k}={v}" for k, v in sorted(self.as_dict().items()))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out[f.name] = v
        return out


def parse_features(text: str) -> tuple[str, ...]:
    """Accepts the `lstb` shorthand or a comma list like `lbp,si`."""
    text = text.strip().lower()
    if text in ("lstb", "all"):
        return FEATURE_BLOCKS
    chosen = tuple(t.strip() for t in text.split(",") if t.strip())
    return tuple(b for b in FEATURE_BLOCKS if b in chosen) or chosen


def _coerce(name: str, raw: str, sample):
    if isinstance(sample, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(sample, int):
        return int(raw)
    if isinstance(sample, float):
        return float(raw)
    if isinstance(sample, tuple):
        if name == "features":
            return parse_features(raw)
        kind = type(sample[0]) if sample else float
        return tuple(kind(t.strip()) for t in raw.split(",") if t.strip())
    return raw


def apply_overrides(cfg: PipelineConfig, pairs) -> PipelineConfig:
    """Apply `key=value` override strings onto a config."""
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, _, raw = pair.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            updates[key] = _coerce(key, raw.strip(), known[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return replace(cfg, **updates).validate()


def load_config(path, overrides=()) -> PipelineConfig:
    """Read a flat key=value config file, then apply overrides."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        pairs.append(line)
    cfg = apply_overrides(PipelineConfig(), pairs)
    return apply_overrides(cfg, overrides)
