"""End-to-end wiring: per-image extraction, coding, training, cross-validation.

Per-image work (smoothing, curvature, topology, global blocks, raw local
descriptors) is codebook-independent and computed once; codebooks are
re-fitted inside every training fold so evaluation never sees test items.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import classify, coding, features
from .bspline import fit_surface_piecewise
from .config import PipelineConfig
from .depthio import MIN_FIT_SIDE, DatasetManifest, DepthMap, load_depth
from .errors import ClothkitError, ConsistencyError
from .geometry import majority_rank_filter, principal_curvatures, shape_index
from .topology import build_topology, tsd_distances

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImageFeatures:
    """Codebook-independent per-image representation."""

    lbp: features.GlobalFeature
    si: features.GlobalFeature
    tsd: features.GlobalFeature
    descriptors: np.ndarray  # (n_anchors, 25)


@dataclass(frozen=True)
class Sample:
    item: str
    label: str
    feats: ImageFeatures


def thread_count() -> int:
    raw = os.environ.get("CLOTH_KIT_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer CLOTH_KIT_THREADS=%r", raw)
    return min(4, os.cpu_count() or 1)


def _decimate(dm: DepthMap, max_dim: int) -> DepthMap:
    longest = max(dm.height, dm.width)
    if max_dim <= 0 or longest <= max_dim:
        return dm
    step = -(-longest // max_dim)  # ceil
    return DepthMap(depth=dm.depth[::step, ::step], mask=dm.mask[::step, ::step])


def extract_image(dm: DepthMap, cfg: PipelineConfig) -> ImageFeatures:
    """Run the surface-analysis front end and all four feature families."""
    dm = _decimate(dm, cfg.resize_max_dim)
    if min(dm.height, dm.width) < MIN_FIT_SIDE:
        raise ConsistencyError(
            f"{dm.width}x{dm.height} image below the {MIN_FIT_SIDE} px minimum"
        )
    surface = fit_surface_piecewise(
        dm, tile=cfg.smooth_tile, overlap=cfg.smooth_overlap,
        knot_span=cfg.smooth_knot_span,
    )
    cm = principal_curvatures(surface, pitch_mm=cfg.xy_pitch_mm)
    sim = majority_rank_filter(shape_index(cm), cfg.majority_window)
    top = build_topology(
        surface, cm, sim, cfg.curvature_thresholds, cfg.contour_min_swing
    )
    tsd = features.tsd_histogram(
        tsd_distances(top), cfg.tsd_lo, cfg.tsd_hi, cfg.tsd_bins
    )
    si = features.si_histogram(sim)
    lbp = features.lbp_histogram(dm, cfg.lbp_levels, cfg.lbp_sigma)
    descs = features.bsp_descriptors(
        surface.depth, dm.mask, top, cfg.bsp_patch, cfg.bsp_stride, cfg.bsp_controls
    )
    mat = (
        np.stack([d.values for d in descs])
        if descs else np.zeros((0, cfg.bsp_controls**2))
    )
    return ImageFeatures(lbp=lbp, si=si, tsd=tsd, descriptors=mat)


def _zero_features(cfg: PipelineConfig) -> ImageFeatures:
    return ImageFeatures(
        lbp=features.GlobalFeature("LBP", np.zeros(features.LBP_DIM)),
        si=features.GlobalFeature("SI", np.zeros(features.SI_DIM)),
        tsd=features.GlobalFeature("TSD", np.zeros(features.TSD_DIM)),
        descriptors=np.zeros((0, cfg.bsp_controls**2)),
    )


def extract_manifest(manifest: DatasetManifest, cfg: PipelineConfig) -> list[Sample]:
    """Extract every manifest entry; failures become zero-block samples."""

    def one(entry):
        try:
            dm = load_depth(entry.depth_path, entry.mask_path)
            return Sample(entry.item, entry.label, extract_image(dm, cfg))
        except (ClothkitError, OSError) as exc:
            log.error("extraction failed for %s: %s", entry.depth_path, exc)
            return Sample(entry.item, entry.label, _zero_features(cfg))

    workers = thread_count()
    if workers > 1 and len(manifest.entries) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, manifest.entries))
    return [one(e) for e in manifest.entries]


# ---------------------------------------------------------------------------
# coding plumbing

def fit_codebook(samples, cfg: PipelineConfig, seed: int) -> coding.Codebook:
    """k-means codebook over the pooled descriptors (capped at sample_cap)."""
    mats = [s.feats.descriptors for s in samples if len(s.feats.descriptors)]
    if not mats:
        raise ConsistencyError("no local descriptors available for the codebook")
    stack = np.concatenate(mats, axis=0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
    if len(stack) > cfg.sample_cap:
        keep = rng.choice(len(stack), size=cfg.sample_cap, replace=False)
        stack = stack[np.sort(keep)]
    k = min(cfg.codebook_k, len(stack))
    if k < cfg.codebook_k:
        log.warning("codebook_k reduced to %d (only %d descriptors)", k, len(stack))
    return coding.kmeans(stack, k, seed=seed, sigma_w=cfg.weight_sigma)


def pooled_block(feats: ImageFeatures, cb: coding.Codebook, cfg: PipelineConfig):
    codes = [
        coding.llc_encode(d, cb, cfg.llc_knn, cfg.llc_lambda)
        for d in feats.descriptors
    ]
    pooled = coding.sum_pool(codes, n_atoms=cb.k)
    if cfg.pool_norm == "l2":
        norm = np.linalg.norm(pooled)
        if norm > 0:
            pooled = pooled / norm
    return pooled


def assemble(feats: ImageFeatures, pooled, chosen) -> np.ndarray:
    """Concatenate the requested blocks in canonical L-S-T-B order."""
    parts = []
    if "lbp" in chosen:
        parts.append(feats.lbp.values)
    if "si" in chosen:
        parts.append(feats.si.values)
    if "tsd" in chosen:
        parts.append(feats.tsd.values)
    if "bsp" in chosen:
        if pooled is None:
            raise ConsistencyError("bsp block requested without a codebook")
        parts.append(pooled)
    return np.concatenate(parts)


def gamma_for(cfg: PipelineConfig, dim: int) -> float:
    return cfg.svm_gamma if cfg.svm_gamma > 0 else 10.0 / dim


def feature_matrix(samples, cb, cfg: PipelineConfig) -> np.ndarray:
    rows = []
    for s in samples:
        pooled = pooled_block(s.feats, cb, cfg) if cb is not None else None
        rows.append(assemble(s.feats, pooled, cfg.features))
    return np.stack(rows)


def fused_dim(cfg: PipelineConfig, n_atoms: int) -> int:
    dims = {"lbp": features.LBP_DIM, "si": features.SI_DIM,
            "tsd": features.TSD_DIM, "bsp": n_atoms}
    return sum(dims[b] for b in cfg.features)


# ---------------------------------------------------------------------------
# cross-validation harness

def crossval(
    samples: list[Sample], cfg: PipelineConfig, folds: int | None = None,
    repeats: int | None = None, seed: int | None = None,
) -> classify.CvReport:
    """Repeated stratified item-grouped k-fold over precomputed samples.

    Codebooks (when the bsp block is active) are fitted on training folds
    only; the fused dimension sets gamma = 10/D unless overridden.
    """
    folds = cfg.folds if folds is None else folds
    repeats = cfg.repeats if repeats is None else repeats
    seed = cfg.seed if seed is None else seed
    labels = [s.label for s in samples]
    items = [s.item for s in samples]
    classes = tuple(sorted(set(labels)))
    need_cb = "bsp" in cfg.features
    confusion = classify.new_confusion(classes)
    per_repeat = []
    labels_arr = np.asarray(labels)
    for rep in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, rep]))
        correct = 0
        for fold_no, (train, test) in enumerate(
            classify.grouped_stratified_folds(labels, items, folds, rng)
        ):
            leak = set(np.asarray(items)[train]) & set(np.asarray(items)[test])
            if leak:
                raise ConsistencyError(f"item leak across folds: {sorted(leak)[:3]}")
            cb = None
            if need_cb:
                cb = fit_codebook(
                    [samples[i] for i in train], cfg,
                    seed=int(np.random.SeedSequence([seed, rep, fold_no]).generate_state(1)[0]),
                )
            x_train = feature_matrix([samples[i] for i in train], cb, cfg)
            x_test = feature_matrix([samples[i] for i in test], cb, cfg)
            gamma = gamma_for(cfg, x_train.shape[1])
            model = classify.svm_train_multiclass(
                x_train, labels_arr[train], classes, cfg.svm_c, cfg.svm_kernel, gamma
            )
            pred, _ = classify.predict(model, x_test)
            for idx, p in zip(test, pred):
                confusion.add(labels[idx], p)
                correct += p == labels[idx]
        per_repeat.append(correct / len(samples))
    return classify.CvReport(
        folds=folds, repeats=repeats, accuracies=tuple(per_repeat),
        mean_accuracy=float(np.mean(per_repeat)), confusion=confusion,
        feature_set=cfg.features, config_hash=cfg.config_hash(), seed=seed,
    )


def train_full(samples: list[Sample], cfg: PipelineConfig):
    """Fit codebook (if needed) and a multi-class model on all samples."""
    classes = tuple(sorted({s.label for s in samples}))
    cb = fit_codebook(samples, cfg, seed=cfg.seed) if "bsp" in cfg.features else None
    x = feature_matrix(samples, cb, cfg)
    gamma = gamma_for(cfg, x.shape[1])
    model = classify.svm_train_multiclass(
        x, np.asarray([s.label for s in samples]), classes,
        cfg.svm_c, cfg.svm_kernel, gamma,
    )
    return model, cb
