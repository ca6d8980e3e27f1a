"""Command-line surface: reproducible runs driven by key=value configs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig
from .dasgen import read_dataset, synth_dataset, write_dataset
from .errors import ContractError, DataError, NumericFailure, UsageError
from .evaluate import (
    ClassifierHead,
    DEFAULT_AXIS_VALUES,
    FineTuneConfig,
    ablation_sweep,
    error_rate,
    few_shot_subset,
    fine_tune,
    make_report,
    pca_embed,
    pool_tubes,
    predict_logits,
    train_linear_probe,
    tsne_embed,
    write_coords_csv,
    write_report_csv,
    write_sweep_csv,
)
from .model import MaeModel
from .pipeline import (
    STAGE_VIDEO,
    load_checkpoint,
    pretrain,
    save_checkpoint,
    video_like_tensors,
    write_array_container,
    write_loss_curve,
)
from .stft import preprocess
from .tubes import TubeGrid, partition_tubes


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.read(args.config) if args.config else RunConfig()
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        cfg.set(key, value)
    return cfg


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_split(cfg: RunConfig, data_dir):
    manifest, plots = read_dataset(data_dir)
    train = [(plots[f], manifest.labels[f]) for f in manifest.train_files]
    test = [(plots[f], manifest.labels[f]) for f in manifest.test_files]
    train_plots, train_labels = zip(*train)
    test_plots, test_labels = zip(*test)
    return (manifest, list(train_plots), np.array(train_labels),
            list(test_plots), np.array(test_labels))


def _build_grid_and_model(cfg: RunConfig, sample_plot, ckpt=None):
    stft_cfg = cfg.stft_config()
    tensor = preprocess(sample_plot, stft_cfg)
    cp, tp, fp = cfg.tube_extents()
    grid = TubeGrid(cp, tp, fp, *tensor.shape[:3])
    model = MaeModel(cfg.model_config(grid.n_tubes, di=stft_cfg.planes),
                     seed=cfg.get_int("train.seed"))
    if ckpt:
        load_checkpoint(ckpt, model)
    return stft_cfg, grid, model


# -- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    manifest, samples = synth_dataset(cfg.gen_config())
    write_dataset(manifest, samples, out)
    cfg.write(os.path.join(out, "run_config.txt"))
    print(f"wrote {len(samples)} samples ({len(manifest.train_files)} train / "
          f"{len(manifest.test_files)} test) to {out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    stft_cfg = cfg.stft_config()
    manifest, plots = read_dataset(args.data)
    arrays = {f: preprocess(p, stft_cfg).values for f, p in plots.items()}
    path = os.path.join(out, "tensors.dmck")
    write_array_container(arrays, {"format": stft_cfg.format}, path)
    cfg.write(os.path.join(out, "run_config.txt"))
    print(f"cached {len(arrays)} spectro tensors to {path}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    manifest, train_plots, _, _, _ = _load_split(cfg, args.data)
    stft_cfg, grid, model = _build_grid_and_model(cfg, train_plots[0], args.init)
    train_cfg = cfg.train_config()
    if train_cfg.stage == STAGE_VIDEO:
        tensors = video_like_tensors(
            len(train_plots), grid.n_c * grid.cp, grid.n_t * grid.tp,
            grid.n_f * grid.fp, seed=train_cfg.seed, planes=stft_cfg.planes,
        )
    else:
        tensors = [preprocess(p, stft_cfg).values for p in train_plots]
    curve = pretrain(tensors, model, grid, train_cfg, log_every=args.log_every)
    save_checkpoint(model, {
        "stage": train_cfg.stage,
        "epoch": str(train_cfg.epochs),
        "seed": str(train_cfg.seed),
        "n_tokens": str(grid.n_tubes),
    }, os.path.join(out, "model.dmck"))
    write_loss_curve(curve, os.path.join(out, "loss_curve.csv"))
    cfg.write(os.path.join(out, "run_config.txt"))
    print(f"pre-trained {train_cfg.epochs} epochs; final loss {curve[-1].loss:.5f}")
    return 0


def _reps_for(cfg, plots, model, stft_cfg, grid):
    tubes = np.stack([partition_tubes(preprocess(p, stft_cfg), grid) for p in plots])
    return tubes, pool_tubes(tubes, model)


def cmd_probe(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    manifest, train_plots, train_labels, test_plots, test_labels = _load_split(cfg, args.data)
    stft_cfg, grid, model = _build_grid_and_model(cfg, train_plots[0], args.ckpt)
    _, train_reps = _reps_for(cfg, train_plots, model, stft_cfg, grid)
    _, test_reps = _reps_for(cfg, test_plots, model, stft_cfg, grid)
    n_classes = len(manifest.class_names)
    head, er = train_linear_probe(train_reps, train_labels, test_reps, test_labels, n_classes)
    preds = predict_logits(head.logits(test_reps).data)
    report = make_report(preds, test_labels, n_classes, seed=cfg.get_int("train.seed"),
                         config_echo=cfg.values)
    write_report_csv(report, os.path.join(out, "probe_report.csv"))
    cfg.write(os.path.join(out, "run_config.txt"))
    print(f"linear probe test error rate: {er:.4f}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    manifest, train_plots, train_labels, test_plots, test_labels = _load_split(cfg, args.data)
    stft_cfg, grid, model = _build_grid_and_model(cfg, train_plots[0], args.ckpt)
    train_tubes, _ = _reps_for(cfg, train_plots, model, stft_cfg, grid)
    test_tubes, _ = _reps_for(cfg, test_plots, model, stft_cfg, grid)
    n_classes = len(manifest.class_names)
    head = ClassifierHead(model.config.enc_width, n_classes)
    ft_cfg = FineTuneConfig(seed=cfg.get_int("train.seed"))
    if args.epochs:
        from .optim import LrSchedule
        ft_cfg = replace(ft_cfg, epochs=args.epochs,
                         schedule=LrSchedule(args.lr, 0.0, min(4, args.epochs - 1), args.epochs))
    fine_tune(train_tubes, train_labels, model, head, ft_cfg)
    preds = predict_logits(head.logits(pool_tubes(test_tubes, model)).data)
    er = error_rate(preds, test_labels)
    report = make_report(preds, test_labels, n_classes, seed=ft_cfg.seed,
                         config_echo=cfg.values)
    write_report_csv(report, os.path.join(out, "finetune_report.csv"))
    save_checkpoint(model, {"stage": "finetuned"}, os.path.join(out, "model.dmck"))
    cfg.write(os.path.join(out, "run_config.txt"))
    print(f"fine-tune test error rate: {er:.4f}")
    return 0


def cmd_fewshot(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    manifest, train_plots, train_labels, test_plots, test_labels = _load_split(cfg, args.data)
    stft_cfg, grid, model = _build_grid_and_model(cfg, train_plots[0], args.ckpt)
    k = cfg.get_int("eval.k_per_class")
    subset = few_shot_subset(train_labels, k, seed=cfg.get_int("train.seed"))
    _, train_reps = _reps_for(cfg, [train_plots[i] for i in subset], model, stft_cfg, grid)
    _, test_reps = _reps_for(cfg, test_plots, model, stft_cfg, grid)
    n_classes = len(manifest.class_names)
    head, er = train_linear_probe(train_reps, train_labels[subset], test_reps,
                                  test_labels, n_classes)
    preds = predict_logits(head.logits(test_reps).data)
    report = make_report(preds, test_labels, n_classes, seed=cfg.get_int("train.seed"),
                         config_echo=cfg.values)
    write_report_csv(report, os.path.join(out, "fewshot_report.csv"))
    cfg.write(os.path.join(out, "run_config.txt"))
    print(f"few-shot ({k} per class, {len(subset)} labeled) probe error rate: {er:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    manifest, train_plots, train_labels, test_plots, test_labels = _load_split(cfg, args.data)
    n_classes = len(manifest.class_names)
    seeds = cfg.get_int_list("eval.seeds")

    def model_factory(overrides, seed):
        base = cfg.model_config(overrides["n_tokens"], di=overrides["di"])
        return MaeModel(base, seed=seed)

    rows, medians = ablation_sweep(
        args.axis, None, seeds, train_plots, train_labels, test_plots, test_labels,
        n_classes, cfg.stft_config(), cfg.tube_extents(), model_factory,
        cfg.train_config(), stage1_count=args.stage1_count,
    )
    write_sweep_csv(rows, medians, os.path.join(out, "sweep.csv"))
    cfg.write(os.path.join(out, "run_config.txt"))
    for value, m in medians.items():
        print(f"{args.axis}={value}: probe {m['probe_er']:.4f}  "
              f"fine-tune {m['finetune_er']:.4f}")
    return 0


def cmd_embed(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    manifest, train_plots, train_labels, _, _ = _load_split(cfg, args.data)
    stft_cfg, grid, model = _build_grid_and_model(cfg, train_plots[0], args.ckpt)
    _, reps = _reps_for(cfg, train_plots, model, stft_cfg, grid)
    coords = pca_embed(reps, 2)
    write_coords_csv(coords, train_labels, os.path.join(out, "pca_coords.csv"))
    tsne_coords, kl_curve = tsne_embed(
        reps,
        perplexity=cfg.get_float("eval.tsne.perplexity"),
        learning_rate=cfg.get_float("eval.tsne.learning_rate"),
        iterations=cfg.get_int("eval.tsne.iterations"),
        seed=cfg.get_int("train.seed"),
    )
    write_coords_csv(tsne_coords, train_labels, os.path.join(out, "tsne_coords.csv"))
    with open(os.path.join(out, "tsne_kl.csv"), "w") as fh:
        fh.write("iteration,kl\n")
        for it, kl in kl_curve:
            fh.write(f"{it},{kl:.6g}\n")
    cfg.write(os.path.join(out, "run_config.txt"))
    print(f"wrote PCA and t-SNE coordinates for {len(reps)} samples to {out}")
    return 0


def cmd_report(args) -> int:
    if not os.path.exists(args.path):
        raise DataError(f"no report at {args.path}")
    with open(args.path) as fh:
        print(fh.read().rstrip())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wfmae",
        description="Masked-autoencoder lab for DAS waterfall plots",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, ckpt=False):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--out", default="out", help="output directory")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if ckpt:
            p.add_argument("--ckpt", help="checkpoint to load (optional)")

    common(sub.add_parser("gen", help="generate a synthetic dataset"), data=False)
    common(sub.add_parser("preprocess", help="cache spectro tensors"))
    p = sub.add_parser("pretrain", help="masked-reconstruction pre-training")
    common(p)
    p.add_argument("--init", help="checkpoint to initialize from (stage transfer)")
    p.add_argument("--log-every", type=int, default=0)
    common(sub.add_parser("probe", help="linear probe on frozen encoder"), ckpt=True)
    p = sub.add_parser("finetune", help="joint encoder+head fine-tuning")
    common(p, ckpt=True)
    p.add_argument("--epochs", type=int, default=0, help="override fine-tune epochs")
    p.add_argument("--lr", type=float, default=1e-5)
    common(sub.add_parser("fewshot", help="k-per-class probe evaluation"), ckpt=True)
    p = sub.add_parser("ablate", help="run one ablation axis")
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(DEFAULT_AXIS_VALUES))
    p.add_argument("--stage1-count", type=int, default=0,
                   help="video-like samples for stage-1 cells")
    common(sub.add_parser("embed", help="export PCA / t-SNE coordinates"), ckpt=True)
    p = sub.add_parser("report", help="print a saved report")
    p.add_argument("path")
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "finetune": cmd_finetune,
    "fewshot": cmd_fewshot,
    "ablate": cmd_ablate,
    "embed": cmd_embed,
    "report": cmd_report,
}


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
