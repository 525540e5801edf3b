"""``clar`` command line: one subcommand per pipeline stage.

Every subcommand reads a JSON config (``--config``), applies ``--set
section.key=value`` overrides, then ``--seed`` / ``--out-dir``, and finally
the CLAR_SEED environment variable. Outputs land in the run directory.
"""
from __future__ import annotations

import argparse
import json
import sys

from clar import pipeline
from clar.autodiff import CheckpointError
from clar.classifier import ClassifierError
from clar.config import ConfigError, RunConfig, load_config
from clar.contrastive import ContrastiveError
from clar.data import DataError
from clar.diffusion import DiffusionError
from clar.signal import SignalError
from clar.weighting import WeightingError

EXPECTED = (
    ConfigError,
    DataError,
    DiffusionError,
    SignalError,
    WeightingError,
    ContrastiveError,
    ClassifierError,
    CheckpointError,
    pipeline.PipelineError,
)


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"out_dir={json.dumps(args.out_dir)}")
    for key, flag in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    cfg = load_config(args.config, overrides)
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    corpus = pipeline.gen_data(cfg)
    print(f"wrote {len(corpus.y)} samples ({len(corpus.train_idx)} train, {len(corpus.test_idx)} test) to {cfg.out}")


def cmd_train_ddpm(args) -> None:
    cfg = _config(args)
    corpus = pipeline.read_corpus(cfg)
    net, history = pipeline.train_ddpm_stage(cfg, corpus, resume=args.resume)
    if history:
        print(f"trained {len(history)} steps (total {net.steps_trained}); final loss {history[-1]:.5f}")
    else:
        print(f"no steps run (total {net.steps_trained})")


def cmd_augment(args) -> None:
    cfg = _config(args)
    corpus = pipeline.read_corpus(cfg)
    net = pipeline.load_ddpm(cfg)
    n = args.n if args.n is not None else cfg.augment.n
    zero = args.zero_guidance or cfg.augment.zero_guidance
    _print(pipeline.augment_stage(cfg, corpus, net, n, zero_guidance=zero))


def cmd_pretrain(args) -> None:
    cfg = _config(args)
    corpus = pipeline.read_corpus(cfg)
    net = pipeline.load_ddpm(cfg) if cfg.pretrain.augment else None
    result = pipeline.pretrain_stage(cfg, corpus, net)
    print(f"pretrained {len(result.epoch_losses)} epochs; final epoch loss {result.epoch_losses[-1]:.5f}")


def cmd_finetune(args) -> None:
    cfg = _config(args)
    corpus = pipeline.read_corpus(cfg)
    probe = pipeline.finetune_stage(cfg, corpus, pipeline.load_encoder(cfg))
    print(f"probe fitted on {len(corpus.labeled_idx)} labeled samples ({probe.num_classes} classes)")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    corpus = pipeline.read_corpus(cfg)
    metrics = pipeline.evaluate_stage(cfg, corpus, pipeline.load_encoder(cfg), pipeline.load_probe(cfg))
    _print({"accuracy": metrics.accuracy, "macro_f1": metrics.macro_f1})


def cmd_ablate(args) -> None:
    cfg = _config(args)
    if args.arms:
        cfg.ablate.arms = args.arms
        cfg.validate()
    corpus = pipeline.read_corpus(cfg)
    # Base and Weight never touch the diffusion model
    needs_net = any(pipeline.ARMS[a][0] for a in cfg.ablate.arms)
    net = None
    if needs_net:
        missing = [a for a in cfg.ablate.arms if pipeline.ARMS[a][0]]
        if not (cfg.out / "ddpm.json").exists():
            raise pipeline.PipelineError(
                f"arm {missing[0]} needs a trained noise-prediction network; run `clar train-ddpm` first"
            )
        net = pipeline.load_ddpm(cfg)
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    results = pipeline.ablate(cfg, corpus, net, log=log)
    pipeline.write_ablation(cfg.out / "ablation.csv", results)
    for arm, (acc, f1) in pipeline.arm_means(results).items():
        print(f"{arm:7s} accuracy={acc:.4f} macro_f1={f1:.4f}")


# flag name -> config key, for the commonly tuned values
_FLAG_KEYS = {
    "ddpm.T": "T",
    "ddpm.steps": "ddpm_steps",
    "guidance.lambda_h": "lambda_h",
    "guidance.lambda_l": "lambda_l",
    "weighting.H": "H",
    "weighting.K": "K",
    "weighting.alpha": "alpha",
    "pretrain.tau": "tau",
    "pretrain.epochs": "epochs",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", help="run directory for inputs and outputs")
    common.add_argument("--T", type=int, help="diffusion steps")
    common.add_argument("--ddpm-steps", type=int, help="noise-predictor training steps")
    common.add_argument("--lambda-h", type=float, help="high-band guidance decay")
    common.add_argument("--lambda-l", type=float, help="low-band guidance decay")
    common.add_argument("--H", type=int, help="static template window")
    common.add_argument("--K", type=int, help="number of static templates")
    common.add_argument("--alpha", type=float, help="sample-weight exponent")
    common.add_argument("--tau", type=float, help="contrastive temperature")
    common.add_argument("--epochs", type=int, help="pretraining epochs")

    parser = argparse.ArgumentParser(prog="clar", description="Diffusion-augmented, weighted contrastive learning on 1-D series.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic corpus")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-ddpm", parents=[common], help="train the noise-prediction network")
    p.add_argument("--resume", action="store_true", help="continue from the saved checkpoint")
    p.set_defaults(func=cmd_train_ddpm)

    p = sub.add_parser("augment", parents=[common], help="generate guided augmentations")
    p.add_argument("-n", type=int, help="number of augmentations")
    p.add_argument("--zero-guidance", action="store_true", help="disable frequency guidance")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining of the encoder")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="fit the linear probe on labeled samples")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="score the probe on the test split")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="run the Base/Aug/Weight/Full matrix over seeds")
    p.add_argument("--arms", nargs="+", help="subset of arms to run")
    p.add_argument("-v", "--verbose", action="store_true", help="log each arm to stderr")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except EXPECTED as e:
        print(f"clar {args.command}: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
