"""Command-line entry point wiring all modules together.

Every subcommand takes a YAML/JSON config (``--config``) plus optional
``--set key.path=value`` overrides, validates it up front, snapshots the
resolved config into the output directory and then runs. Exit codes:
0 success, 2 validation error, 1 runtime error.

Artifacts use conventional names under the output directory so the
subcommands chain without extra flags: ``synth`` writes ``labels.h5``,
``domain_a.h5`` and ``domain_b.h5``; ``encode``/``decode`` read and
write ``bcd.h5`` and ``decoded_labels.h5``; ``train`` writes checkpoints
under ``train/``; ``infer`` and ``eval`` emit label volumes and
``ap_report.json``. Explicit ``data:`` specs in the config override any
of these defaults.
"""

import argparse
import dataclasses
import json
import os
import sys
import traceback

import numpy as np

from . import inference, phantom, trainer
from .augment import corrupt
from .codec import BcdTriple, decode_bcd, encode_bcd
from .config import (
    ConfigError,
    ExperimentConfig,
    load_experiment,
    write_run_snapshot,
)
from .volumes import (
    IntensityVolume,
    LabelVolume,
    VolumeSpec,
    load_volume,
    save_volume,
)

SUBCOMMANDS = (
    "synth",
    "encode",
    "decode",
    "augment-preview",
    "train",
    "infer",
    "eval",
    "histmatch",
    "bench",
)


def _default_spec(cfg: ExperimentConfig, name: str, filename: str, role: str) -> VolumeSpec:
    if name in cfg.data:
        return cfg.data[name]
    return VolumeSpec(
        path=os.path.join(cfg.output_dir, filename), container="hdf5", dtype_role=role
    )


def _out_spec(cfg: ExperimentConfig, filename: str, role: str) -> VolumeSpec:
    return VolumeSpec(
        path=os.path.join(cfg.output_dir, filename), container="hdf5", dtype_role=role
    )


def cmd_synth(cfg: ExperimentConfig) -> None:
    labels, img_a, img_b = phantom.make_phantom(cfg.phantom)
    save_volume(LabelVolume(labels), _out_spec(cfg, "labels.h5", "label"))
    save_volume(IntensityVolume(img_a), _out_spec(cfg, "domain_a.h5", "intensity"))
    save_volume(IntensityVolume(img_b), _out_spec(cfg, "domain_b.h5", "intensity"))
    print(f"synth: {cfg.phantom.n_instances} instances -> {cfg.output_dir}")


def _save_triple(triple: BcdTriple, path: str) -> None:
    import h5py

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with h5py.File(path, "w") as f:
        f.create_dataset("main", data=triple.stack(), compression="gzip")


def _load_triple(path: str) -> BcdTriple:
    import h5py

    with h5py.File(path, "r") as f:
        return BcdTriple.from_stack(f["main"][...])


def cmd_encode(cfg: ExperimentConfig) -> None:
    spec = _default_spec(cfg, "labels", "labels.h5", "label")
    labels = load_volume(spec)
    triple = encode_bcd(labels.data, cfg.codec)
    _save_triple(triple, os.path.join(cfg.output_dir, "bcd.h5"))
    print(f"encode: {labels.ids().size} instances -> bcd.h5")


def cmd_decode(cfg: ExperimentConfig) -> None:
    triple = _load_triple(
        cfg.data["bcd"].path if "bcd" in cfg.data else os.path.join(cfg.output_dir, "bcd.h5")
    )
    decoded = decode_bcd(triple, cfg.codec)
    save_volume(LabelVolume(decoded), _out_spec(cfg, "decoded_labels.h5", "label"))
    print(f"decode: {int(decoded.max())} instances -> decoded_labels.h5")


def cmd_augment_preview(cfg: ExperimentConfig) -> None:
    spec = _default_spec(cfg, "image", "domain_b.h5", "intensity")
    vol = load_volume(spec)
    pair = corrupt(vol.data, cfg.augment, seed=cfg.train.seed)
    save_volume(IntensityVolume(pair.augmented), _out_spec(cfg, "augmented.h5", "intensity"))
    save_volume(IntensityVolume(pair.clean), _out_spec(cfg, "clean.h5", "intensity"))
    save_volume(
        LabelVolume(pair.corruption_mask.astype(np.int32)),
        _out_spec(cfg, "corruption_mask.h5", "label"),
    )
    frac = float(pair.corruption_mask.mean())
    print(f"augment-preview: corrupted {frac:.1%} of voxels")


def _load_domains(cfg: ExperimentConfig):
    x_img = load_volume(_default_spec(cfg, "x_image", "domain_a.h5", "intensity"))
    x_lab = load_volume(_default_spec(cfg, "x_labels", "labels.h5", "label"))
    y_img = load_volume(_default_spec(cfg, "y_image", "domain_b.h5", "intensity"))
    domain_x = [trainer.DomainVolume(x_img.data, x_lab.data)]
    domain_y = [trainer.DomainVolume(y_img.data)]
    return domain_x, domain_y


def cmd_train(cfg: ExperimentConfig) -> None:
    domain_x, domain_y = _load_domains(cfg)
    tr = trainer.Trainer(cfg.train, cfg.generator, cfg.discriminator, cfg.codec, cfg.augment)
    run_dir = os.path.join(cfg.output_dir, "train")
    tr.train(domain_x, domain_y, out_dir=run_dir)
    print(f"train: {tr.iteration} iterations, checkpoints in {run_dir}")
    if "y_labels" in cfg.data:
        gt = load_volume(cfg.data["y_labels"])
        _, _, report = inference.segment_with_checkpoint(
            os.path.join(run_dir, "checkpoint_final.pt"),
            domain_y[0].image,
            cfg.infer,
            cfg.codec,
            gt=gt.data,
        )
        _write_report(cfg, report)
        print(f"train: held-out AP-50 = {report.ap50:.3f}")


def _write_report(cfg: ExperimentConfig, report, name: str = "ap_report.json") -> None:
    with open(os.path.join(cfg.output_dir, name), "w") as f:
        json.dump(report.to_dict(), f, indent=2)


def cmd_infer(cfg: ExperimentConfig) -> None:
    ckpt = (
        cfg.data["checkpoint"].path
        if "checkpoint" in cfg.data
        else os.path.join(cfg.output_dir, "train", "checkpoint_final.pt")
    )
    vol = load_volume(_default_spec(cfg, "infer_image", "domain_b.h5", "intensity"))
    gt = None
    if "infer_gt" in cfg.data:
        gt = load_volume(cfg.data["infer_gt"]).data
    labels, image01, report = inference.segment_with_checkpoint(
        ckpt, vol.data, cfg.infer, cfg.codec, gt=gt
    )
    save_volume(LabelVolume(labels), _out_spec(cfg, "pred_labels.h5", "label"))
    save_volume(IntensityVolume(image01), _out_spec(cfg, "translated.h5", "intensity"))
    if report is not None:
        _write_report(cfg, report)
        print(f"infer: {int(labels.max())} instances, AP-50 = {report.ap50:.3f}")
    else:
        print(f"infer: {int(labels.max())} instances")


def cmd_eval(cfg: ExperimentConfig, plot: bool = False) -> None:
    pred = load_volume(_default_spec(cfg, "pred", "decoded_labels.h5", "label"))
    gt = load_volume(_default_spec(cfg, "gt", "labels.h5", "label"))
    report = inference.evaluate_ap50(pred.data, gt.data)
    _write_report(cfg, report)
    if plot:
        _plot_curve(report, os.path.join(cfg.output_dir, "pr_curve.png"))
    print(
        f"eval: ap50 = {report.ap50:.4f} "
        f"(tp={report.tp}, fp={report.fp}, fn={report.fn})"
    )


def _plot_curve(report, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rs = [r for r, _ in report.precision_recall_curve]
    ps = [p for _, p in report.precision_recall_curve]
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(rs, ps, marker=".")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title(f"AP-50 = {report.ap50:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_histmatch(cfg: ExperimentConfig) -> None:
    src = load_volume(_default_spec(cfg, "source", "domain_b.h5", "intensity"))
    ref = load_volume(_default_spec(cfg, "reference", "domain_a.h5", "intensity"))
    matched = inference.histogram_match(src.data, ref.data)
    save_volume(IntensityVolume(matched), _out_spec(cfg, "matched.h5", "intensity"))
    print("histmatch: wrote matched.h5")


def cmd_bench(cfg: ExperimentConfig) -> None:
    """Phantom-scale comparison: joint model vs the two sequential baselines.

    Domains come from two differently-seeded phantoms so they are
    unpaired; the target phantom's labels are used only for scoring.
    """
    cfg_x = dataclasses.replace(cfg.phantom, seed=cfg.phantom.seed)
    cfg_y = dataclasses.replace(cfg.phantom, seed=cfg.phantom.seed + 1)
    labels_x, img_xa, _ = phantom.make_phantom(cfg_x)
    labels_y, img_ya, img_yb = phantom.make_phantom(cfg_y)
    domain_x = [trainer.DomainVolume(img_xa, labels_x)]
    domain_y = [trainer.DomainVolume(img_yb)]

    iters = cfg.bench_iterations
    results = {}

    def run(name: str, ablation: str, segment_input: np.ndarray, direction: str):
        t_cfg = dataclasses.replace(cfg.train, ablation=ablation, iterations=iters)
        tr = trainer.Trainer(t_cfg, cfg.generator, cfg.discriminator, cfg.codec, cfg.augment)
        run_dir = os.path.join(cfg.output_dir, "bench", name)
        if name == "histmatch_segment":
            # supervised segmenter: both domains drawn from the source phantom
            tr.train(domain_x, [trainer.DomainVolume(img_xa)], out_dir=run_dir)
        else:
            tr.train(domain_x, domain_y, out_dir=run_dir)
        infer_cfg = dataclasses.replace(cfg.infer, direction=direction)
        _, _, report = inference.segment_with_checkpoint(
            os.path.join(run_dir, "checkpoint_final.pt"),
            segment_input,
            infer_cfg,
            cfg.codec,
            gt=labels_y,
        )
        results[name] = report.ap50

    run("joint", "full", img_yb, "y_to_x")
    run("translation_only_decode", "translation_only", img_yb, "y_to_x")
    matched = inference.histogram_match(img_yb, img_xa)
    run("histmatch_segment", "full", matched, "y_to_x")

    with open(os.path.join(cfg.output_dir, "bench_results.json"), "w") as f:
        json.dump({"iterations": iters, "ap50": results}, f, indent=2)
    width = max(len(k) for k in results)
    print(f"{'method'.ljust(width)}  AP-50")
    for name, ap in results.items():
        print(f"{name.ljust(width)}  {ap:.3f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cycleseg",
        description="joint unpaired volume translation and instance segmentation",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML/JSON config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry, e.g. train.iterations=100",
        )
        if name == "eval":
            p.add_argument("--plot", action="store_true", help="write pr_curve.png")
    return parser


def run(subcommand: str, config_path: str | None, overrides: list[str], plot: bool = False) -> int:
    try:
        cfg = load_experiment(config_path, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        write_run_snapshot(cfg, subcommand)
        if subcommand == "synth":
            cmd_synth(cfg)
        elif subcommand == "encode":
            cmd_encode(cfg)
        elif subcommand == "decode":
            cmd_decode(cfg)
        elif subcommand == "augment-preview":
            cmd_augment_preview(cfg)
        elif subcommand == "train":
            cmd_train(cfg)
        elif subcommand == "infer":
            cmd_infer(cfg)
        elif subcommand == "eval":
            cmd_eval(cfg, plot=plot)
        elif subcommand == "histmatch":
            cmd_histmatch(cfg)
        elif subcommand == "bench":
            cmd_bench(cfg)
        else:
            print(f"unknown subcommand {subcommand!r}", file=sys.stderr)
            return 2
    except Exception:
        traceback.print_exc()
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return run(
        args.subcommand,
        args.config,
        args.overrides,
        plot=getattr(args, "plot", False),
    )


if __name__ == "__main__":
    sys.exit(main())
