"""Command-line entry point: ``addrlab {synth,train,eval,ablate,gradcheck}``.

Exit codes: 0 success, 2 usage, 3 data/format, 4 numerical failure.
The report directory can be overridden with the ``ADDR_REPORT_DIR``
environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .data import generate_synthetic, load_dataset, save_dataset, split
from .evaluation import (
    domain_confusion, evaluate, run_ablation, write_ablation_csv, write_report_csv, write_report_jsonl,
)
from .exceptions import FormatError
from .gradcheck import COMPONENTS, format_results, run_gradcheck
from .trainer import Trainer, checkpoint_load, checkpoint_save

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
REPORT_ENV = "ADDR_REPORT_DIR"
ECHO_NAME = "run.config"

# convenience flags and the config keys they set
_FLAGS = {
    "synth": {"--out": "data.dir", "--seed": "synth.seed", "--overlap": "synth.overlap"},
    "train": {"--data": "data.dir", "--out": "out.dir", "--variant": "trainer.variant",
              "--seed": "trainer.seed", "--epochs": "trainer.epochs", "--beta": "trainer.beta",
              "--gamma": "reg.gamma", "--alpha": "reg.alpha", "--lr": "trainer.lr",
              "--batch-size": "trainer.batch_size", "--dim": "trainer.dim"},
    "eval": {"--data": "data.dir", "--checkpoint": "eval.checkpoint", "--split": "eval.split",
             "--folds": "eval.folds", "--report-dir": "report.dir", "--format": "report.format"},
    "ablate": {"--data": "data.dir", "--variants": "ablate.variants", "--seeds": "ablate.seeds",
               "--epochs": "trainer.epochs", "--split": "eval.split", "--folds": "eval.folds",
               "--report-dir": "report.dir"},
    "gradcheck": {"--instances": "gradcheck.instances", "--seed": "gradcheck.seed"},
}
_HELP = {
    "synth": "generate a synthetic paired dataset (ADDRFEAT files + manifest)",
    "train": "train a model; writes model.ckpt, trainlog.csv and the config echo",
    "eval": "evaluate a checkpoint; writes a retrieval report",
    "ablate": "train and evaluate several variants over several seeds",
    "gradcheck": "finite-difference check of every loss gradient",
}


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="addrlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in _FLAGS.items():
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
        for flag, key in flags.items():
            p.add_argument(flag, dest=key, default=None, help=f"sets {key}")
        if name == "gradcheck":
            p.add_argument("--flip-adv-sign", action="store_true",
                           help="mutation fixture: negate the adversarial gradient")
    return parser


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in _FLAGS[args.command].values():
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "flip_adv_sign", False):
        overrides["gradcheck.flip_adv_sign"] = "true"
    return RunConfig.load(args.config, overrides)


def report_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get(REPORT_ENV) or cfg["report.dir"])


def _echo(directory: Path, cfg: RunConfig) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / ECHO_NAME).write_text(cfg.to_text())


def _load_data(cfg: RunConfig):
    path = Path(cfg["data.dir"])
    if not (path / "manifest.jsonl").is_file():
        raise UsageError(f"no dataset at {path} (run 'addrlab synth' or pass --data)")
    return load_dataset(path)


def cmd_synth(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    ds = split(generate_synthetic(cfg.synth()), cfg["data.fractions"], cfg["data.split_seed"])
    directory = Path(cfg["data.dir"])
    paths = save_dataset(directory, ds)
    _echo(directory, cfg)
    counts = {s: len(ds.image_ids(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(ds.images)} images, {len(ds.sentences)} sentences to {directory} "
          f"(d_img={ds.d_img}, d_txt={ds.d_txt}, splits={counts}, config_hash={cfg.hash()})", file=out)
    for p in paths.values():
        print(f"  {p}", file=out)
    return EXIT_OK


def cmd_train(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    ds = _load_data(cfg)
    tcfg = cfg.trainer()

    def progress(state, rep):
        print(f"epoch {state.epoch:3d}  val r1_i2t={rep.r1_i2t:.1f} r1_t2i={rep.r1_t2i:.1f} "
              f"rsum={rep.rsum:.1f}", file=out)

    trainer = Trainer(tcfg, ds, callback=progress)
    result = trainer.fit()
    directory = Path(cfg["out.dir"])
    _echo(directory, cfg)
    checkpoint_save(directory / "model.ckpt", trainer.state)
    result.log.write_csv(directory / "trainlog.csv")
    print(f"saved {directory / 'model.ckpt'} after {trainer.state.epoch} epochs "
          f"(config_hash={cfg.hash()}, trainer_hash={tcfg.hash()})", file=out)
    return EXIT_OK


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg["eval.checkpoint"] or Path(cfg["out.dir"]) / "model.ckpt")


def cmd_eval(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    ds = _load_data(cfg)
    path = _checkpoint_path(cfg)
    if not path.is_file():
        raise UsageError(f"no checkpoint at {path}")
    state = checkpoint_load(path)
    result = Trainer(state.config, ds, state=state).result()
    n_folds = cfg["eval.folds"] or None
    fold_ids = None
    if n_folds:
        from .data import folds
        fold_ids = folds(ds, cfg["eval.split"], n_folds)
    rep = evaluate(result.gen, result.metric, ds, cfg["eval.split"], folds=fold_ids,
                   variant=state.config.variant, seed=state.config.seed, config_hash=cfg.hash())
    directory = report_dir(cfg)
    _echo(directory, cfg)
    fmt = cfg["report.format"]
    if fmt == "jsonl":
        target = directory / "report.jsonl"
        write_report_jsonl(target, [rep])
    elif fmt == "csv":
        target = directory / "report.csv"
        write_report_csv(target, [rep])
    else:
        raise UsageError(f"report.format must be csv or jsonl, got {fmt!r}")
    row = rep.as_row()
    print(" ".join(f"{k}={row[k]:.2f}" if isinstance(row[k], float) else f"{k}={row[k]}"
                   for k in ("r1_i2t", "r5_i2t", "r10_i2t", "r1_t2i", "r5_t2i", "r10_t2i", "rsum")), file=out)
    print(f"confusion={domain_confusion(result.gen, ds, cfg.probe()):.2f}% report={target}", file=out)
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    ds = _load_data(cfg)

    def progress(row):
        print(f"{row['variant']:9s} seed={row['seed']} rsum={row['rsum']:.1f}", file=out)

    rows, medians = run_ablation(cfg.trainer(), ds, cfg["ablate.variants"], cfg["ablate.seeds"],
                                 cfg["eval.folds"] or None, cfg["eval.split"], progress)
    directory = report_dir(cfg)
    _echo(directory, cfg)
    write_ablation_csv(directory / "ablation.csv", rows, medians)
    for variant, m in medians.items():
        print(f"median {variant:9s} rsum={m['rsum']:.1f}", file=out)
    print(f"report={directory / 'ablation.csv'} config_hash={cfg.hash()}", file=out)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    results = run_gradcheck(cfg["gradcheck.instances"], cfg["gradcheck.seed"], COMPONENTS,
                            flip_adv_sign=cfg["gradcheck.flip_adv_sign"])
    print(format_results(results), file=out)
    ok = all(r.passed for r in results)
    print("gradcheck " + ("passed" if ok else "FAILED"), file=out)
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"addrlab {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"addrlab {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError, ValueError) as exc:
        print(f"addrlab {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
