import argparse
import sys

from colorama import Fore, Style

from src.msggan.commands import (cmd_ablate, cmd_arch, cmd_evaluate, cmd_sample, cmd_stability, cmd_sweep_combine,
                                 cmd_sweep_lr, cmd_train)
from src.msggan.config import COMBINE_KINDS, CONNECTION_MODES, EXTRACTORS, load_config
from src.msggan.console import init_console, tagged_printer, warn_printer
from src.msggan.errors import ConfigError, MsgGanError, TrainingDivergenceError

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

DEFAULT_SWEEP_LRS = (0.001, 0.003, 0.005, 0.01)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="appconfig.json", help="Flat JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="Overrides the config seed")
    p.add_argument("--out", default=None, help="Output directory (overrides output_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multi-scale gradient GAN: train, sample, evaluate and ablate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train until the real-image budget is shown")
    _common(p)
    p.add_argument("--resume", default=None, help="Checkpoint to continue from")

    p = sub.add_parser("sample", help="Write a multi-scale sample grid from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="samples")

    p = sub.add_parser("evaluate", help="FID-proxy (or FID) and IS of a checkpoint against a dataset")
    p.add_argument("checkpoint")
    p.add_argument("--config", default=None, help="Dataset config (defaults to the checkpoint's own)")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extractor", choices=EXTRACTORS, default=None)
    p.add_argument("--out", default=None, help="Directory for evaluation JSON")

    p = sub.add_parser("stability", help="Per-scale MSE between consecutive epoch snapshots")
    p.add_argument("run_dir")

    p = sub.add_parser("sweep-lr", help="One run per learning rate")
    _common(p)
    p.add_argument("--lrs", type=float, nargs="+", default=list(DEFAULT_SWEEP_LRS))

    p = sub.add_parser("sweep-combine", help="One run per combine function")
    _common(p)
    p.add_argument("--kinds", nargs="+", default=list(COMBINE_KINDS))

    p = sub.add_parser("ablate", help="One run per connection mode")
    _common(p)
    p.add_argument("--modes", nargs="+", default=["none", "all"], help=f"Subset of {', '.join(CONNECTION_MODES)}")

    p = sub.add_parser("arch", help="Print the layer table and parameter counts")
    _common(p)
    return parser


def run(args: argparse.Namespace) -> int:
    trainer = tagged_printer("train")
    evaluator = tagged_printer("eval")
    warn = warn_printer()

    if args.command == "train":
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        cmd_train(cfg, resume_from=args.resume, printer=trainer, warn=warn)
    elif args.command == "sample":
        cmd_sample(args.checkpoint, args.n, args.seed, args.out, printer=evaluator)
    elif args.command == "evaluate":
        cfg = load_config(args.config) if args.config else None
        cmd_evaluate(args.checkpoint, n=args.n, config=cfg, extractor=args.extractor, seed=args.seed,
                     out_dir=args.out, printer=evaluator, warn=warn)
    elif args.command == "stability":
        cmd_stability(args.run_dir, printer=evaluator)
    elif args.command == "sweep-lr":
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        cmd_sweep_lr(cfg, args.lrs, printer=trainer, warn=warn)
    elif args.command == "sweep-combine":
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        cmd_sweep_combine(cfg, args.kinds, printer=trainer, warn=warn)
    elif args.command == "ablate":
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        cmd_ablate(cfg, args.modes, printer=trainer, warn=warn)
    elif args.command == "arch":
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        print(cmd_arch(cfg))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    init_console()
    try:
        return run(args)
    except ConfigError as e:
        print(Fore.RED + "[config] " + Style.RESET_ALL + str(e), file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergenceError as e:
        print(Fore.RED + "[diverged] " + Style.RESET_ALL + str(e), file=sys.stderr)
        return EXIT_DIVERGED
    except MsgGanError as e:
        print(Fore.RED + "[error] " + Style.RESET_ALL + str(e), file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print()
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
