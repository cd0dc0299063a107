"""Command-line front end.

Subcommands: synth, extract, codebook, train, predict, crossval, report.
Exit codes: 0 success, 2 usage/config, 3 data, 4 numeric failure. Every
written artifact embeds the config hash and seed. CLOTH_KIT_THREADS caps
extraction parallelism.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import classify, coding, depthio, features, pipeline
from .config import PipelineConfig, apply_overrides, load_config, parse_features
from .errors import ClothkitError, ConfigError, ConsistencyError, FitError, FormatError

log = logging.getLogger(__name__)


def _config_from(args) -> PipelineConfig:
    overrides = list(args.set or [])
    if getattr(args, "features", None):
        overrides.append(f"features={args.features}")
    if args.config:
        return load_config(args.config, overrides)
    return apply_overrides(PipelineConfig(), overrides)


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    spec = depthio.load_synth_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for ci, cls in enumerate(spec.classes):
        for item in range(args.per_class):
            irng = np.random.default_rng(
                np.random.SeedSequence([args.seed, ci, item, 1])
            )
            sigma = cls.sigma * irng.uniform(0.9, 1.1)
            height = cls.height * irng.uniform(0.9, 1.1)
            item_id = f"{cls.name}_i{item:03d}"
            for snum in range(args.samples_per_item):
                sspec = depthio.SynthSpec(
                    class_id=ci, wrinkle_count=cls.count, ridge_sigma=sigma,
                    ridge_height=height, base_depth=spec.base_depth,
                    noise_sigma=cls.noise,
                    seed=depthio.synth_seed(args.seed, ci, item, snum),
                    width=spec.width, height=spec.height,
                )
                dm = depthio.synth_surface(sspec)
                stem = f"{item_id}_s{snum:02d}"
                depthio.save_depth(out / f"{stem}.pgm", dm)
                depthio.save_mask(out / f"{stem}_mask.pgm", dm.mask)
                rows.append((f"{stem}.pgm", f"{stem}_mask.pgm", cls.name, item_id))
    depthio.save_manifest(out / "manifest.csv", rows)
    print(f"wrote {len(rows)} samples + manifest to {out}")
    return 0


# ---------------------------------------------------------------------------
# extraction helpers

def _extract_with_codebook(args, cfg):
    """Returns (samples, codebook_or_None). Applies the codebook policy."""
    manifest = depthio.load_manifest(args.manifest)
    samples = pipeline.extract_manifest(manifest, cfg)
    cb = None
    if "bsp" in cfg.features:
        if getattr(args, "codebook", None):
            cb, _, _ = coding.load_codebook(args.codebook)
        elif getattr(args, "fit_codebook", False):
            cb = pipeline.fit_codebook(samples, cfg, seed=cfg.seed)
        else:
            raise ConfigError(
                "bsp features need --codebook FILE or --fit-codebook"
            )
    return manifest, samples, cb


def cmd_extract(args) -> int:
    cfg = _config_from(args)
    _, samples, cb = _extract_with_codebook(args, cfg)
    if cb is not None and args.save_codebook:
        coding.save_codebook(args.save_codebook, cb, cfg.config_hash(), cfg.seed)
    records = []
    for s in samples:
        pooled = pipeline.pooled_block(s.feats, cb, cfg) if cb is not None else None
        records.append((s.item, s.label, pipeline.assemble(s.feats, pooled, cfg.features)))
    writer = features.write_features_binary if args.binary else features.write_features_csv
    writer(args.out, records, cfg.config_hash(), cfg.seed)
    print(f"wrote {len(records)} feature records to {args.out}")
    return 0


def cmd_codebook(args) -> int:
    cfg = _config_from(args)
    manifest = depthio.load_manifest(args.manifest)
    samples = pipeline.extract_manifest(manifest, cfg)
    cb = pipeline.fit_codebook(samples, cfg, seed=cfg.seed)
    coding.save_codebook(args.out, cb, cfg.config_hash(), cfg.seed)
    print(f"wrote codebook K={cb.k} D={cb.dim} to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    _, samples, cb = _extract_with_codebook(args, cfg)
    if cb is not None and getattr(args, "fit_codebook", False):
        if not args.save_codebook:
            raise ConfigError("--fit-codebook for training needs --save-codebook "
                              "(predict will need the same codebook)")
        coding.save_codebook(args.save_codebook, cb, cfg.config_hash(), cfg.seed)
    classes = tuple(sorted({s.label for s in samples}))
    x = pipeline.feature_matrix(samples, cb, cfg)
    gamma = pipeline.gamma_for(cfg, x.shape[1])
    model = classify.svm_train_multiclass(
        x, np.asarray([s.label for s in samples]), classes,
        cfg.svm_c, cfg.svm_kernel, gamma,
    )
    classify.save_model(args.out_model, model, cfg.config_hash(), cfg.seed)
    print(f"wrote model ({len(classes)} classes, D={model.dim}) to {args.out_model}")
    return 0


def cmd_predict(args) -> int:
    cfg = _config_from(args)
    model, _, _ = classify.load_model(args.model)
    cb = None
    if "bsp" in cfg.features:
        if not args.codebook:
            raise ConfigError("bsp features need --codebook for prediction")
        cb, _, _ = coding.load_codebook(args.codebook)
        if pipeline.fused_dim(cfg, cb.k) != model.dim:
            raise ConsistencyError(
                f"codebook K={cb.k} gives feature dim "
                f"{pipeline.fused_dim(cfg, cb.k)}, but the model expects {model.dim}"
            )
    if args.manifest:
        manifest = depthio.load_manifest(args.manifest)
        paths = [str(e.depth_path) for e in manifest.entries]
        samples = pipeline.extract_manifest(manifest, cfg)
    else:
        if not args.depth:
            raise ConfigError("predict needs a manifest or --depth FILE")
        dm = depthio.load_depth(args.depth, args.mask)
        samples = [pipeline.Sample("-", "-", pipeline.extract_image(dm, cfg))]
        paths = [args.depth]
    x = pipeline.feature_matrix(samples, cb, cfg)
    labels, decisions = classify.predict(model, x)
    lines = [f"# clothkit predictions config={cfg.config_hash()} seed={cfg.seed} "
             f"classes={'|'.join(model.classes)}"]
    for path, lab, dec in zip(paths, labels, decisions):
        vals = ",".join(format(v, ".17g") for v in dec)
        lines.append(f"{path},{lab},{vals}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_crossval(args) -> int:
    cfg = _config_from(args)
    manifest = depthio.load_manifest(args.manifest)
    samples = pipeline.extract_manifest(manifest, cfg)
    report = pipeline.crossval(samples, cfg)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# clothkit crossval config={report.config_hash} seed={report.seed}",
        "key,value",
        f"feature_set,{'+'.join(report.feature_set)}",
        f"folds,{report.folds}",
        f"repeats,{report.repeats}",
        f"mean_accuracy,{report.mean_accuracy:.17g}",
    ]
    for rep, acc in enumerate(report.accuracies):
        lines.append(f"accuracy_repeat_{rep},{acc:.17g}")
    summary_path = Path(f"{prefix}_summary.csv")
    summary_path.write_text("\n".join(lines) + "\n")
    classify.write_confusion_csv(f"{prefix}_confusion.csv", report.confusion)
    print(f"mean accuracy {report.mean_accuracy:.4f} over "
          f"{report.repeats}x{report.folds}-fold; reports at {prefix}_*.csv")
    return 0


def cmd_report(args) -> int:
    cm = classify.read_confusion_csv(args.confusion)
    overall, per_class = classify.confusion_accuracy(cm)
    print(f"overall accuracy: {overall:.3f}")
    for cls, acc in zip(cm.classes, per_class):
        shown = "undefined" if np.isnan(acc) else f"{acc:.3f}"
        print(f"  {cls}: {shown}")
    return 0


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="clothkit", description=__doc__)
    top.add_argument("--log-level", default="WARNING")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, features_flag=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override (repeatable)")
        if features_flag:
            p.add_argument("--features",
                           help="feature blocks: lstb or a comma subset of lbp,si,tsd,bsp")

    p = sub.add_parser("synth", help="generate a synthetic dataset + manifest")
    p.add_argument("--spec", required=True, help="synth spec (key=value file)")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, required=True, help="items per class")
    p.add_argument("--samples-per-item", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract fused feature vectors")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--codebook")
    p.add_argument("--fit-codebook", action="store_true",
                   help="fit the codebook on this manifest (training data only)")
    p.add_argument("--save-codebook")
    p.add_argument("--binary", action="store_true", help="write LSTB1 binary")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("codebook", help="learn an LLC codebook from a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_codebook)

    p = sub.add_parser("train", help="train the one-against-all SVM")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--codebook")
    p.add_argument("--fit-codebook", action="store_true")
    p.add_argument("--save-codebook")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict labels for samples")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--depth", help="single depth PGM instead of a manifest")
    p.add_argument("--mask")
    p.add_argument("--model", required=True)
    p.add_argument("--codebook")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("crossval", help="repeated stratified grouped k-fold")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("report", help="summarise a confusion matrix CSV")
    p.add_argument("--confusion", required=True)
    p.set_defaults(func=cmd_report)
    return top


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ConsistencyError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ClothkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
