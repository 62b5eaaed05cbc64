"""Command-line surface: synth, extract-size, pretrain, probe, eval,
gradcheck, report-ratios.

Every report directory receives both delimited outputs (CSV/TSV/PGM) and,
unless ``--no-figures`` is given, rendered PNG figures of the same data.
Exit codes: 0 success, 1 data errors, 2 configuration errors, 3 numeric
aborts (NaN/Inf during training).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import figures
from .augment import AugmentPolicy
from .checkpoint import load_encoder_checkpoint, save_encoder_checkpoint
from .config import (
    DESK_PRETRAIN_EPOCHS,
    DESK_PROBE_EPOCHS,
    PAPER_PRETRAIN_EPOCHS,
    PAPER_PROBE_EPOCHS,
    atomic_write_text,
    coerce,
    merge_settings,
    parse_config_file,
    resolve_seed,
)
from .contrastive import PretrainConfig, pretrain
from .encoder import EncoderConfig, build_encoder
from .errors import ConfigError, DataError, DegenerateSizeError, NumericError
from .fdsuite import run_suite
from .images import GrayImage, read_image
from .probe import (
    embed_dataset,
    evaluate,
    export_activation_map,
    export_embeddings,
    linear_probe,
    split_labeled,
)
from .scatter import estimate_size
from .synth import (
    ClassSpec,
    DatasetManifest,
    ManifestRecord,
    default_class_specs,
    gen_dataset,
    load_dataset,
    read_manifest,
    write_manifest,
)

_F = "{:.12g}"


def _fmt(value: float) -> str:
    return _F.format(float(value))


def _load_file_entries(args) -> dict:
    return parse_config_file(args.config) if getattr(args, "config", None) else {}


def _ensure_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SYNTH_SCHEMA = {
    "image_size": ("int", 64),
    "resolution": ("float", 1.0),
    "counts": ("str", "100,100,100,100"),
    "long_tail": ("bool", False),
    "image_format": ("str", "pgm"),
}


def cmd_synth(args) -> int:
    entries = _load_file_entries(args)
    seed = resolve_seed(args.seed, entries)
    settings = merge_settings(
        _SYNTH_SCHEMA,
        {k: v for k, v in entries.items() if k != "seed"},
        {
            "image_size": args.image_size,
            "resolution": args.resolution,
            "counts": args.counts,
            "long_tail": True if args.long_tail else None,
            "image_format": args.image_format,
        },
    )
    specs = default_class_specs()
    counts = [int(c) for c in coerce("counts", settings["counts"], "floats")]
    if len(counts) == 1:
        counts = counts * len(specs)
    if len(counts) != len(specs):
        raise ConfigError(f"need {len(specs)} counts, got {len(counts)}")
    out = _ensure_out(args)
    manifest = gen_dataset(
        specs,
        counts,
        out,
        long_tail=settings["long_tail"],
        seed=seed,
        image_size=settings["image_size"],
        resolution=settings["resolution"],
        image_format=settings["image_format"],
    )
    by_class = {c: 0 for c in manifest.classes}
    for r in manifest.records:
        by_class[r.label] += 1
    print(f"wrote {len(manifest)} slices to {out} "
          f"({', '.join(f'{c}: {n}' for c, n in sorted(by_class.items()))})")
    return 0


# ---------------------------------------------------------------------------
# extract-size
# ---------------------------------------------------------------------------

SIZE_HEADER = "path,length_m,width_m,axis_angle_rad,n_keypoints"


def cmd_extract_size(args) -> int:
    manifest = read_manifest(args.manifest)
    out = _ensure_out(args)
    rows = []
    estimates = {}
    for record in manifest.records:
        pixels = read_image(manifest.root / record.path)
        image = GrayImage(pixels, args.resolution)
        try:
            size, keypoints, _ = estimate_size(image)
            estimates[record.path] = size
            rows.append(
                f"{record.path},{_fmt(size.length_m)},{_fmt(size.width_m)},"
                f"{_fmt(size.axis_angle_rad)},{len(keypoints)}"
            )
        except DegenerateSizeError:
            rows.append(f"{record.path},,,,0")
    atomic_write_text(out / "sizes.csv", "\n".join([SIZE_HEADER] + rows) + "\n")

    if args.write_manifest:
        updated = []
        for record in manifest.records:
            est = estimates.get(record.path)
            if est is None:
                updated.append(record)
            else:
                updated.append(ManifestRecord(record.path, record.label,
                                              round(est.length_m, 3), round(est.width_m, 3)))
        write_manifest(DatasetManifest(manifest.root, updated), args.write_manifest)

    truth, measured = [], []
    for record in manifest.records:
        est = estimates.get(record.path)
        if est is not None and record.length_m is not None:
            truth.append((record.length_m, record.width_m))
            measured.append((est.length_m, est.width_m))
    if not args.no_figures and truth:
        figures.save_size_scatter(np.array(truth), np.array(measured),
                                  out / "size_recovery.png")
    print(f"measured {len(estimates)} of {len(manifest)} slices -> {out / 'sizes.csv'}")
    return 0


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------

_PRETRAIN_SCHEMA = {
    "epochs": ("int", 0),  # 0 = scale default
    "batch_size": ("int", 32),
    "base_lr": ("float", 0.01),
    "warmup_epochs": ("int", 5),
    "sgd_momentum": ("float", 0.9),
    "key_momentum": ("float", 0.999),
    "temperature": ("float", 0.07),
    "queue_capacity": ("int", 1024),
    "proj_dim": ("int", 32),
    "loss": ("str", "sp"),
    "size_low": ("float", 0.0),
    "size_high": ("float", 100.0),
    "stage_channels": ("str", "16,32,64"),
    "stage_blocks": ("str", "2,2,2"),
    "heads": ("int", 4),
    "window": ("int", 3),
    "norm_groups": ("int", 4),
    "size_code_dim": ("int", 32),
    "recursion_steps": ("int", 2),
}

METRICS_HEADER = "epoch,mean_loss,info_nce,d_ec,lr"


def _write_metrics(path: Path, metrics) -> None:
    rows = [METRICS_HEADER]
    for m in metrics:
        rows.append(f"{m.epoch},{_fmt(m.mean_loss)},{_fmt(m.info_nce)},"
                    f"{_fmt(m.d_ec)},{_fmt(m.lr)}")
    atomic_write_text(path, "\n".join(rows) + "\n")


def cmd_pretrain(args) -> int:
    entries = _load_file_entries(args)
    seed = resolve_seed(args.seed, entries)
    settings = merge_settings(
        _PRETRAIN_SCHEMA,
        {k: v for k, v in entries.items() if k != "seed"},
        {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "base_lr": args.lr,
            "loss": args.loss,
        },
    )
    if settings["loss"] not in ("sp", "infonce"):
        raise ConfigError(f"loss must be 'sp' or 'infonce', got {settings['loss']!r}")
    epochs = settings["epochs"]
    if epochs == 0:
        epochs = PAPER_PRETRAIN_EPOCHS if args.paper_scale else DESK_PRETRAIN_EPOCHS

    manifest = read_manifest(args.manifest)
    size_range = (settings["size_low"], settings["size_high"])
    data = load_dataset(manifest, size_range=size_range)
    side = data.images.shape[1]
    if data.images.shape[1] != data.images.shape[2]:
        raise DataError(f"expected square images, got {data.images.shape[1:]} in manifest")

    enc_config = EncoderConfig(
        input_size=side,
        stage_channels=tuple(int(v) for v in coerce("stage_channels",
                                                    settings["stage_channels"], "floats")),
        stage_blocks=tuple(int(v) for v in coerce("stage_blocks",
                                                  settings["stage_blocks"], "floats")),
        heads=settings["heads"],
        window=settings["window"],
        norm_groups=settings["norm_groups"],
        size_code_dim=settings["size_code_dim"],
        recursion_steps=settings["recursion_steps"],
        size_range=size_range,
        seed=seed,
    )
    run_config = PretrainConfig(
        epochs=epochs,
        batch_size=settings["batch_size"],
        base_lr=settings["base_lr"],
        warmup_epochs=min(settings["warmup_epochs"], max(0, epochs - 1)),
        sgd_momentum=settings["sgd_momentum"],
        key_momentum=settings["key_momentum"],
        temperature=settings["temperature"],
        queue_capacity=settings["queue_capacity"],
        proj_dim=settings["proj_dim"],
        use_d_ec=settings["loss"] == "sp",
        seed=seed,
    )

    out = _ensure_out(args)
    encoder = build_encoder(enc_config)
    ckpt_path = out / "checkpoint.msnc"

    def save_progress(result):
        save_encoder_checkpoint(ckpt_path, result.encoder, result.head.parameters())
        _write_metrics(out / "metrics.csv", result.metrics)

    def log_epoch(m):
        print(f"epoch {m.epoch}/{epochs}  loss {m.mean_loss:.4f}  "
              f"contrastive {m.info_nce:.4f}  consistency {m.d_ec:.4f}  lr {m.lr:.5f}")

    try:
        result = pretrain(encoder, data, run_config,
                          policy=AugmentPolicy(out_size=side),
                          checkpoint_fn=save_progress, log_fn=log_epoch)
    except NumericError:
        print("numeric abort: loss became non-finite; last finished epoch kept",
              file=sys.stderr)
        raise
    if not args.no_figures and result.metrics:
        figures.save_loss_curves(result.metrics, out / "loss_curve.png")
    print(f"checkpoint -> {ckpt_path}")
    return 0


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------

_PROBE_SCHEMA = {
    "fractions": ("floats", (0.1, 0.2, 0.5, 1.0)),
    "probe_epochs": ("int", 0),
    "probe_lr": ("float", 0.5),
    "size_low": ("float", 0.0),
    "size_high": ("float", 100.0),
}


def cmd_probe(args) -> int:
    entries = _load_file_entries(args)
    seed = resolve_seed(args.seed, entries)
    settings = merge_settings(
        _PROBE_SCHEMA,
        {k: v for k, v in entries.items() if k != "seed"},
        {"fractions": args.fractions, "probe_epochs": args.probe_epochs},
    )
    probe_epochs = settings["probe_epochs"]
    if probe_epochs == 0:
        probe_epochs = PAPER_PROBE_EPOCHS if args.paper_scale else DESK_PROBE_EPOCHS

    encoder, _ = load_encoder_checkpoint(args.checkpoint)
    size_range = encoder.config.size_range
    train = load_dataset(read_manifest(args.train_manifest), size_range=size_range)
    test = load_dataset(read_manifest(args.test_manifest), size_range=size_range)
    if train.classes != test.classes:
        raise DataError(
            f"train classes {train.classes} differ from test classes {test.classes}"
        )

    train_emb = embed_dataset(encoder, train)
    test_emb = embed_dataset(encoder, test)
    out = _ensure_out(args)

    rows = ["split_fraction,accuracy"]
    accuracies = []
    fractions = sorted(settings["fractions"])
    last_report = None
    for fraction in fractions:
        idx = split_labeled(train.labels, fraction, seed)
        head = linear_probe(train_emb[idx], train.labels[idx], train.classes,
                            epochs=probe_epochs, lr=settings["probe_lr"])
        report = evaluate(head, test_emb, test.labels)
        accuracies.append(report.accuracy)
        rows.append(f"{_fmt(fraction)},{_fmt(report.accuracy)}")
        atomic_write_text(out / f"confusion_{fraction:g}.csv", report.to_csv())
        last_report = report
        print(f"fraction {fraction:g}: {len(idx)} labeled samples, "
              f"accuracy {report.accuracy:.4f}")
    atomic_write_text(out / "metrics.csv", "\n".join(rows) + "\n")
    if not args.no_figures:
        figures.save_accuracy_vs_fraction(fractions, accuracies,
                                          out / "accuracy_vs_fraction.png")
        if last_report is not None:
            figures.save_confusion_heatmap(last_report.confusion, last_report.classes,
                                           out / "confusion_heatmap.png")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    encoder, _ = load_encoder_checkpoint(args.checkpoint)
    data = load_dataset(read_manifest(args.manifest), size_range=encoder.config.size_range)
    out = _ensure_out(args)
    embeddings = embed_dataset(encoder, data)
    export_embeddings(out / "embeddings.tsv", data, embeddings)
    maps_dir = out / "maps"
    maps_dir.mkdir(exist_ok=True)
    n_maps = min(args.maps, len(data))
    for i in range(n_maps):
        stem = Path(data.paths[i]).stem
        export_activation_map(maps_dir / f"{stem}_activation.pgm", encoder,
                              data.images[i], data.sizes_norm[i])
    if not args.no_figures:
        figures.save_embedding_scatter(embeddings, data.labels, data.classes,
                                       out / "embedding_scatter.png")
    print(f"embeddings for {len(data)} samples -> {out / 'embeddings.tsv'}; "
          f"{n_maps} activation maps -> {maps_dir}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck / report-ratios
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    results = run_suite(step=args.step, tol=args.tol,
                        names=args.only.split(",") if args.only else None,
                        seed=args.seed)
    worst = 0.0
    failed = False
    for name, result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{name}: {status} (max rel err {result.max_rel_error:.3e}, "
              f"{result.n_coordinates} coordinates)")
        worst = max(worst, result.max_rel_error)
        failed |= not result.passed
    print(f"suite max rel err {worst:.3e} (tol {args.tol:g})")
    return 1 if failed else 0


RATIOS_HEADER = "layer,abs_alpha,abs_beta,log_ratio"


def cmd_report_ratios(args) -> int:
    encoder, _ = load_encoder_checkpoint(args.checkpoint)
    out = _ensure_out(args)
    rows = [RATIOS_HEADER]
    table = []
    for block in encoder.blocks:
        a, b, logr = block.hybrid.fusion_ratio()
        rows.append(f"{block.name},{_fmt(a)},{_fmt(b)},{_fmt(logr)}")
        table.append((block.name, a, b, logr))
    atomic_write_text(out / "fusion_ratios.csv", "\n".join(rows) + "\n")
    if not args.no_figures:
        figures.save_fusion_ratios(table, out / "fusion_ratios.png")
    print(f"{len(table)} fusion layers -> {out / 'fusion_ratios.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msnet",
        description="Self-supervised size-aware SAR aircraft classification pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (default: config file, then MSNET_SEED, then 0)")
        p.add_argument("--config", default=None, help="key = value settings file")
        p.add_argument("--no-figures", action="store_true",
                       help="emit only delimited outputs, no PNG figures")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="render a synthetic labeled dataset")
    common(p)
    p.add_argument("--counts", default=None,
                   help="per-class sample counts, e.g. 240,96,40,24 (or one shared count)")
    p.add_argument("--long-tail", action="store_true",
                   help="redistribute the total geometrically (>=10x head/tail)")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--resolution", type=float, default=None)
    p.add_argument("--image-format", choices=("pgm", "png"), default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract-size", help="measure target sizes from imagery")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--resolution", type=float, default=1.0,
                   help="meters per pixel of the input imagery")
    p.add_argument("--write-manifest", default=None,
                   help="also write a manifest with the estimated sizes filled in")
    p.set_defaults(func=cmd_extract_size)

    p = sub.add_parser("pretrain", help="momentum-contrast pretraining")
    common(p)
    p.add_argument("--manifest", required=True, help="training manifest with sizes")
    p.add_argument("--epochs", type=int, default=None,
                   help=f"desk-scale default {DESK_PRETRAIN_EPOCHS} "
                        f"({PAPER_PRETRAIN_EPOCHS} with --paper-scale)")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--loss", choices=("sp", "infonce"), default=None,
                   help="contrastive loss with the consistency term, or plain contrastive")
    p.add_argument("--paper-scale", action="store_true",
                   help="use publication-scale epoch counts")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="frozen-encoder linear probing at label fractions")
    common(p)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fractions", default=None, help="comma list, default 0.1,0.2,0.5,1.0")
    p.add_argument("--probe-epochs", type=int, default=None,
                   help=f"desk-scale default {DESK_PROBE_EPOCHS} "
                        f"({PAPER_PROBE_EPOCHS} with --paper-scale)")
    p.add_argument("--paper-scale", action="store_true")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("eval", help="export embeddings and activation maps")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--maps", type=int, default=8, help="how many activation maps to render")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0, help="offset for the fragment draws")
    p.add_argument("--only", default=None, help="comma list of fragment names")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report-ratios", help="attention/convolution fusion gains per layer")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_report_ratios)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        print(f"msnet: data error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"msnet: config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"msnet: numeric abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
