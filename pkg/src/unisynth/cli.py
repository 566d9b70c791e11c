"""Command-line entry point: ``unisynth <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

RUN_ROOT_ENV = "UNISYNTH_RUN_ROOT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("unisynth")


class UsageError(Exception):
    pass


def _run_root():
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _config(args):
    from .config import load_config
    overrides = list(args.set or [])
    for flag, key in (("epochs", "train.epochs"), ("seed", "seed"), ("batch_size", "train.batch_size"),
                      ("data", "data.root"), ("run_dir", "run_dir"), ("optimizer", "train.optimizer"),
                      ("lr", "train.lr")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def cmd_phantom_gen(args):
    from .data import generate_phantom_dataset, write_dataset
    cfg = _config(args)
    p = cfg.phantom
    spec = p.spec(cfg.model, cfg.modalities)
    vols = generate_phantom_dataset(np.random.default_rng(cfg.seed), spec, p.n_train + p.n_val + p.n_test)
    out = Path(args.out or cfg.data.root)
    write_dataset(out, {"train": vols[:p.n_train], "val": vols[p.n_train:p.n_train + p.n_val],
                        "test": vols[p.n_train + p.n_val:]})
    print(out)
    return [out / "manifest"]


def cmd_train(args):
    from .config import dump_config
    from .experiments import load_dataset
    from .training import train
    cfg = _config(args)
    if args.run_dir is None and args.config is None and not args.set:
        cfg.run_dir = str(_run_root() / "default")
    run_dir = Path(cfg.run_dir)
    dump_config(cfg, run_dir / "config.yaml")
    slices = np.concatenate(load_dataset(cfg, cfg.data.train_split))
    ckpt, log_path = train(cfg, slices, resume=args.resume, run_dir=run_dir)
    print(ckpt)
    return [ckpt, log_path, run_dir / "config.yaml"]


def _write_report(report, out_dir, stem, plots=True):
    from .plotting import plot_report
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    table = out_dir / f"{stem}.txt"
    table.write_text(report.to_table(), encoding="utf-8")
    (out_dir / f"{stem}.json").write_text(json.dumps(report.metadata, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    paths = [csv_path, table]
    if plots:
        paths += plot_report(csv_path, out_dir)
    return paths


def cmd_evaluate(args):
    from .experiments import load_dataset
    from .metrics import evaluate_matrix
    from .training import load_checkpoint, read_checkpoint_header
    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    cfg.data.root = args.data or cfg.data.root
    subjects = load_dataset(cfg, args.split or cfg.data.test_split)
    header, _ = read_checkpoint_header(args.checkpoint)
    report = evaluate_matrix(state.generator, subjects, cfg.modalities,
                             metadata={"checkpoint_sha256": header["sha256"], "dataset": str(cfg.data.root),
                                       "split": args.split or cfg.data.test_split})
    out = Path(args.out or Path(args.checkpoint).resolve().parent.parent / "eval")
    paths = _write_report(report, out, "report", plots=not args.no_plot)
    print(report.to_table(), end="")
    return paths


def cmd_synthesize(args):
    from .conditioning import AvailabilityCondition, InvalidConditionError
    try:
        ac = AvailabilityCondition.parse(args.ac)
        ac.check_input()
    except InvalidConditionError as exc:
        raise UsageError(str(exc)) from exc
    import torch
    from .data import MultiModalVolume, load_volume, save_volume
    from .experiments import preprocess
    from .training import load_checkpoint
    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    if len(ac) != cfg.model.n_modalities:
        raise UsageError(f"condition {ac} has {len(ac)} flags, model expects {cfg.model.n_modalities}")
    vol = load_volume(args.input)
    slices = preprocess([vol], cfg)[0]
    gen = state.generator.eval()
    with torch.no_grad():
        out = gen.synthesize(torch.from_numpy(slices), ac).numpy()
    result = MultiModalVolume(np.ascontiguousarray(out.transpose(1, 0, 2, 3)), list(cfg.modalities),
                              vol.subject_id + "_syn" + str(ac))
    path = save_volume(result, args.out)
    print(path)
    return [path]


def cmd_ablate(args):
    from .experiments import ablation_csv, load_dataset, phantom_splits, preprocess, run_ablation
    from .plotting import plot_ablation
    cfg = _config(args)
    out = Path(args.out or _run_root() / "ablation")
    if args.phantom:
        splits = phantom_splits(cfg)
        train_s, test_s = preprocess(splits["train"], cfg), preprocess(splits["test"], cfg)
    else:
        train_s, test_s = load_dataset(cfg, cfg.data.train_split), load_dataset(cfg, cfg.data.test_split)
    rows = run_ablation(cfg, args.variants, args.seeds, train_s, test_s, out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "ablation.csv"
    csv_path.write_text(ablation_csv(rows), encoding="utf-8")
    fig = plot_ablation(rows, out / "ablation_psnr.svg")
    print(csv_path)
    return [csv_path, fig]


def cmd_plot(args):
    from .plotting import plot_report
    paths = plot_report(args.report, args.out)
    for p in paths:
        print(p)
    return paths


def _add_config_flags(p):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override (repeatable)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--data", help="dataset root")
    p.add_argument("--run-dir")


def build_parser():
    parser = argparse.ArgumentParser(prog="unisynth", description="Unified missing-modality image synthesis")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="write a synthetic phantom dataset")
    _add_config_flags(p)
    p.add_argument("--out", help="dataset directory (default: data.root)")
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score every availability condition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--out")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synthesize", help="impute missing modalities of one volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help=".mmv volume")
    p.add_argument("--ac", required=True, help="availability string, e.g. 1011")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("ablate", help="encoder / fusion variant sweep")
    _add_config_flags(p)
    p.add_argument("--variants", nargs="+", default=["CDS+DFUM", "MMS+DFUM", "C+DFUM", "CDS+MAX", "CDS+HEMIS"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--phantom", action="store_true", help="generate the phantom task instead of reading --data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render SVG bar charts from a report CSV")
    p.add_argument("report")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def dispatch(argv=None) -> tuple[int, list]:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (EXIT_OK if exc.code == 0 else EXIT_USAGE), []
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return EXIT_OK, args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"unisynth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE, []
    except Exception as exc:  # surfaced to the shell as exit code 1
        log.debug("command failed", exc_info=True)
        print(f"unisynth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL, []


def main(argv=None):
    code, _ = dispatch(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
