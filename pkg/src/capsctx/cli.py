"""Command-line entry point: synth, train, eval, gradcheck, ablate.

Failures print one line ``error: <kind>: <message>`` on stderr.
Exit codes: 2 usage, 3 unreadable file, 4 malformed config, 1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ModelConfig, load_config

EXIT_FAILURE, EXIT_USAGE, EXIT_IO, EXIT_CONFIG = 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str, code: int) -> int:
    text = " ".join(str(message).split())
    print(f"error: {kind}: {text}", file=sys.stderr)
    return code


def _split(data, config: ModelConfig):
    """Manifest order: the first train_size rows train, the next test_size rows test."""
    n_train = min(config.train_size, len(data))
    train_idx = list(range(n_train))
    test_idx = list(range(n_train, min(n_train + config.test_size, len(data))))
    return data.subset(train_idx), data.subset(test_idx)


def _write_split_manifest(path: Path, data) -> None:
    from .synth import write_manifest

    rows = [(str(Path(p).resolve()), [int(c) for c in lab.nonzero()[0]])
            for p, lab in zip(data.paths, data.labels)]
    write_manifest(path, rows)


def cmd_synth(args) -> int:
    from .synth import SynthSpec, load_spec, synth_generate

    spec = load_spec(args.spec) if args.spec else SynthSpec()
    manifest = synth_generate(spec, args.n, args.out)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    from .synth import load_dataset
    from .train import train

    config = load_config(args.config) if args.config else ModelConfig()
    if args.epochs is not None:
        config = config.replace(epochs=args.epochs)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    data = load_dataset(args.data, config.num_classes)
    train_data, test_data = _split(data, config)
    out = Path(args.out)
    result = train(config, train_data, test_data, out_dir=out)
    _write_split_manifest(out / "train_manifest.csv", train_data)
    if len(test_data):
        _write_split_manifest(out / "test_manifest.csv", test_data)
    line = f"train_mAP={result.final_train.mAP:.6f}"
    if result.final_test is not None:
        line += f" test_mAP={result.final_test.mAP:.6f}"
    print(line)
    return 0


def cmd_eval(args) -> int:
    from .synth import load_dataset
    from .train import evaluate, load_model

    ckpt = Path(args.checkpoint)
    config_path = Path(args.config) if args.config else ckpt.with_name("config.txt")
    config = load_config(config_path)
    model = load_model(ckpt, config)
    data = load_dataset(args.data, config.num_classes)
    report = evaluate(model, data)
    print(f"mAP={report.mAP:.6f} loss={report.loss:.6f} n={len(data)}")
    for j, ap in enumerate(report.ap):
        print(f"class={j} AP={ap:.6f} precision={report.precision[j]:.6f} "
              f"recall={report.recall[j]:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import SUITES, run_suite

    if args.module and args.module not in SUITES:
        raise UsageError(f"unknown module {args.module!r}; choose from {', '.join(SUITES)}")
    ok = True
    for res in run_suite(args.module, args.tol, seeds=args.seeds):
        status = "PASS" if res.passed else "FAIL"
        ok &= res.passed
        print(f"{status} module={res.module} max_rel_error={res.max_error:.3e} "
              f"tol={res.tolerance:.0e} seeds={res.seeds} resamples={res.resamples}")
    return 0 if ok else EXIT_FAILURE


def cmd_ablate(args) -> int:
    from .harness import run_ablation, summarize, write_comparison_csv, write_convergence_csv
    from .synth import load_dataset

    config = load_config(args.config) if args.config else ModelConfig()
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects a comma-separated list of integers, got {args.seeds!r}")
    if not seeds:
        raise UsageError("--seeds is empty")
    data = load_dataset(args.data, config.num_classes)
    train_data, test_data = _split(data, config)
    records = run_ablation(config, train_data, test_data, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(out / "comparison.csv", records)
    write_convergence_csv(out / "convergence.csv", records)
    for name, value in summarize(records).items():
        print(f"config={name} mean_test_mAP={value:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="capsctx", description=__doc__.splitlines()[0])
    p.add_argument("--print-defaults", action="store_true", help="dump the default config and exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic multi-label corpus")
    s.add_argument("--spec", help="generator spec file (key = value)")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--config")
    s.add_argument("--data", required=True, help="manifest.csv")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, help="override the config epoch count")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="defaults to config.txt next to the checkpoint")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--module")
    s.add_argument("--tol", type=float)
    s.add_argument("--seeds", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", help="baseline / RW+CRF / RW+CRF+CORR over seeds")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--out", default="ablation")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    from .ctns import FormatError
    from .synth import ManifestError
    from .train import TrainingError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        if args.print_defaults:
            sys.stdout.write(ModelConfig().dumps())
            return 0
        if args.command is None:
            raise UsageError("a command is required (synth, train, eval, gradcheck, ablate)")
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except OSError as exc:
        name = getattr(exc, "filename", None)
        return _fail("io", f"{name}: {exc.strerror}" if name else exc, EXIT_IO)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (ManifestError, FormatError) as exc:
        return _fail("data", exc, EXIT_FAILURE)
    except TrainingError as exc:
        return _fail("training", exc, EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
