"""Command-line entry point: prepare / train / eval / ood-eval / multiseed / ablate / gradcheck."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import TrainConfig, config_from_dict, load_config, write_config
from .corpus import (
    FORMATS,
    CACHE_MAGIC,
    build_sequences,
    dataset_stats,
    leave_one_out,
    load_corpus,
    read_interactions,
    save_corpus,
)
from .errors import ADRRecError, ConfigError
from .evaluation import evaluate, multiseed_eval, ood_mask_eval
from .kernels import parse_mode

log = logging.getLogger("adrrec")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _is_cache(path: Path) -> bool:
    try:
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            return fh.readline().startswith(CACHE_MAGIC)
    except OSError:
        return False


def load_dataset(path: str | None, fmt: str | None, min_count: int):
    if not path:
        raise ConfigError("--dataset is required")
    p = Path(path)
    if _is_cache(p):
        return load_corpus(p)
    if not fmt:
        raise ConfigError(f"{path} is not a corpus cache; pass --format to parse it as raw data")
    return build_sequences(read_interactions(p, fmt), min_count)


def resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else config_from_dict({})
    overrides = {}
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "negatives", None) is not None:
        overrides["n_negatives"] = args.negatives
    if getattr(args, "dataset", None):
        overrides["dataset"] = args.dataset
    if getattr(args, "format", None):
        overrides["format"] = args.format
    cfg = dataclasses.replace(cfg, **overrides)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
        cfg = dataclasses.replace(cfg, seeds=dataclasses.replace(cfg.seeds, negatives=args.seed))
    return cfg.validate()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_prepare(args) -> int:
    fmt = args.format
    if fmt not in FORMATS:
        raise ConfigError(f"--format must be one of {FORMATS}")
    interactions = read_interactions(args.input, fmt)
    corpus = build_sequences(interactions, args.min_count)
    stats = dataset_stats(corpus)
    out = _out_dir(args)
    save_corpus(corpus, out / "corpus.txt", {"source": str(args.input), "format": fmt})
    _write_json(out / "stats.json", {**stats.as_dict(), "malformed": interactions.malformed,
                                     "min_count": args.min_count})
    print(f"users {stats.n_users}  items {stats.n_items}  actions {stats.n_actions}  "
          f"avg length {stats.avg_length:.2f}  (malformed lines: {interactions.malformed})")
    return 0


def cmd_train(args) -> int:
    from .training import fit

    cfg = resolve_config(args)
    corpus = load_dataset(cfg.dataset, cfg.format, cfg.min_count)
    out = _out_dir(args)
    write_config(cfg, out / "effective_config.json")
    res = fit(cfg, corpus, progress=True)
    save_checkpoint(res.checkpoint, out / "checkpoint.pt")
    res.report.write_jsonl(out / "train_report.jsonl")
    _write_json(out / "timing.json", [r.wall_clock for r in res.report.epochs])
    if args.curve_csv:
        with open(out / "curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "task_loss", "reg", "val_ndcg10"])
            for r in res.report.epochs:
                w.writerow([r.epoch, r.task_loss, r.reg, r.val_ndcg10])
    print(f"best epoch {res.report.best_epoch}  checkpoint {res.report.checkpoint_id[:16]}")
    return 0


def _eval_setup(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config) if args.config else config_from_dict(ckpt.get("train_config") or {})
    cfg = resolve_config_from(cfg, args)
    if str(parse_mode(cfg.mode)) != str(parse_mode(ckpt["mode"])):
        raise ConfigError(f"config mode {cfg.mode} does not match checkpoint mode {ckpt['mode']}")
    corpus = load_dataset(cfg.dataset, cfg.format, cfg.min_count)
    model = model_from_checkpoint(ckpt)
    if model.cfg.n_items != corpus.n_items:
        raise ConfigError(f"checkpoint has {model.cfg.n_items} items, dataset has {corpus.n_items}")
    return cfg, model, leave_one_out(corpus)


def resolve_config_from(cfg: TrainConfig, args) -> TrainConfig:
    overrides = {}
    if getattr(args, "negatives", None) is not None:
        overrides["n_negatives"] = args.negatives
    if getattr(args, "dataset", None):
        overrides["dataset"] = args.dataset
    if getattr(args, "format", None):
        overrides["format"] = args.format
    cfg = dataclasses.replace(cfg, **overrides)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seeds=dataclasses.replace(cfg.seeds, negatives=args.seed))
    return cfg.validate()


def _eval_kwargs(cfg: TrainConfig) -> dict:
    return dict(ks=cfg.eval_ks, n_negatives=cfg.n_negatives, max_len=cfg.max_len, batch_size=cfg.eval_batch_size)


def cmd_eval(args) -> int:
    cfg, model, split = _eval_setup(args)
    out = _out_dir(args)
    write_config(cfg, out / "effective_config.json")
    report = evaluate(model, split, seed=cfg.seeds.negatives, **_eval_kwargs(cfg))
    report.write_json(out / f"metrics_standard_seed{cfg.seeds.negatives}.json")
    print(report.table())
    return 0


def cmd_ood_eval(args) -> int:
    cfg, model, split = _eval_setup(args)
    out = _out_dir(args)
    write_config(cfg, out / "effective_config.json")
    fractions = _floats(args.mask_fraction)
    aggregate = {}
    for f in fractions:
        report = ood_mask_eval(model, split, f, seed=cfg.seeds.negatives, **_eval_kwargs(cfg))
        report.write_json(out / f"metrics_ood{f:g}_seed{cfg.seeds.negatives}.json")
        aggregate[f"{f:g}"] = report.to_dict()
        print(f"-- OOD mask fraction {f:g}\n{report.table()}")
    _write_json(out / "metrics_ood_aggregate.json", aggregate)
    return 0


def cmd_multiseed(args) -> int:
    cfg = resolve_config(args)
    seeds = _ints(args.seeds)
    corpus = load_dataset(cfg.dataset, cfg.format, cfg.min_count)
    out = _out_dir(args)
    write_config(cfg, out / "effective_config.json")
    fractions = _floats(args.mask_fraction) if args.mask_fraction else []
    agg, ood = multiseed_eval(cfg, corpus, seeds, mask_fractions=fractions)
    for row in agg.per_seed:
        _write_json(out / f"metrics_standard_seed{row['seed']}.json", row)
    agg.write_json(out / "metrics_aggregate.json")
    for f, rep in ood.items():
        rep.write_json(out / f"metrics_ood{f:g}_aggregate.json")
    print(agg.table())
    return 0


def cmd_ablate(args) -> int:
    from .training import fit

    base = resolve_config(args)
    modes = [m for m in args.modes.split(",") if m.strip()]
    for m in modes:
        parse_mode(m)
    corpus = load_dataset(base.dataset, base.format, base.min_count)
    out = _out_dir(args)
    write_config(base, out / "effective_config.json")
    summary = {}
    for m in modes:
        cfg = base.replace(mode=m)
        sub = out / m
        sub.mkdir(exist_ok=True)
        write_config(cfg, sub / "effective_config.json")
        res = fit(cfg, corpus)
        report = evaluate(res.model, res.split, seed=cfg.seeds.negatives, **_eval_kwargs(cfg))
        report.write_json(sub / "metrics.json")
        res.report.write_jsonl(sub / "train_report.jsonl")
        summary[m] = report.to_dict()
        print(f"-- mode {m}\n{report.table()}")
    _write_json(out / "ablation.json", summary)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import gradcheck, tiny_setup

    model, batch, cfg, eps = tiny_setup(args.mode or "p-b-s-l-r-o", seed=args.seed or 0)
    res = gradcheck(model, batch, cfg, eps, tolerance=args.tolerance)
    name, err = res.worst
    print(f"gradcheck {'PASS' if res.passed else 'FAIL'}: worst relative error {err:.3e} ({name}) "
          f"over {len(res.errors)} tensors, tolerance {args.tolerance:g}")
    if args.out:
        out = _out_dir(args)
        _write_json(out / "gradcheck.json", {"passed": res.passed, "errors": res.errors, "worst": [name, err]})
    return 0 if res.passed else 4


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adrrec", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="parse raw logs, filter, write corpus cache and stats")
    s.add_argument("--format", required=True, choices=FORMATS)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--min-count", type=int, default=5)
    s.set_defaults(func=cmd_prepare)

    def common(s, seeds=False):
        s.add_argument("--config")
        s.add_argument("--dataset")
        s.add_argument("--format", choices=FORMATS)
        s.add_argument("--out", required=True)
        s.add_argument("--negatives", type=int)
        if not seeds:
            s.add_argument("--seed", type=int)

    s = sub.add_parser("train", help="fit a model")
    common(s)
    s.add_argument("--mode")
    s.add_argument("--epochs", type=int)
    s.add_argument("--curve-csv", action="store_true", help="also write score-vs-epoch CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="leave-one-out test metrics of a checkpoint")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ood-eval", help="metrics after masking a contiguous span of each test sequence")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mask-fraction", default="0.1,0.3")
    s.set_defaults(func=cmd_ood_eval)

    s = sub.add_parser("multiseed", help="fit + evaluate per seed, report mean/std")
    common(s, seeds=True)
    s.add_argument("--seeds", default="1,2,3")
    s.add_argument("--mode")
    s.add_argument("--epochs", type=int)
    s.add_argument("--mask-fraction", default="")
    s.set_defaults(func=cmd_multiseed)

    s = sub.add_parser("ablate", help="one report per mode string")
    common(s)
    s.add_argument("--modes", required=True)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference check of the training objective")
    s.add_argument("--mode")
    s.add_argument("--seed", type=int)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("ADRREC_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        return args.func(args)
    except ADRRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
