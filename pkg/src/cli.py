"""Command-line front door: train, distill, attack, campaign and inspect."""

import argparse
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .attacks import SaliencyAttack, write_trace
from .campaign import CampaignRunner, best_target_attack, dump_adversaries, outcome_metrics, render_table, write_report
from .config import (
    AttackConfig,
    AttackFamily,
    DistillConfig,
    Settings,
    TrainConfig,
    load_env_file,
    load_settings,
)
from .datasets import LabeledDataset, load_idx, make_mini_digits
from .images import ImageRecord, load_image, save_image
from .network import JacobianLayer, forward_logits, predict, softmax
from .storage import RunManifest, ensure_manifest_slot, load_model, save_model
from .trainer import SGDTrainer, accuracy, defensive_distillation, write_training_log


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ATTACK_FAILED = 1
EXIT_USAGE = 2

ALL_FAMILIES = [family.value for family in AttackFamily]


def setup_logging(log_level: str):
    """
    Set up logging configuration.

    Args:
        log_level: The log level (DEBUG, INFO, WARNING, ERROR)
    """
    numeric_level = getattr(logging, log_level.upper(), logging.INFO)

    logging.basicConfig(
        level=numeric_level,
        format='[%(asctime)s] [%(levelname)s] [%(name)s] %(message)s',
        datefmt='%Y-%m-%dT%H:%M:%SZ',
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )

    logging.Formatter.converter = time.gmtime


def _hidden_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden dims must be comma-separated integers: {text}")
    return dims


def _max_iters(text: str) -> Optional[int]:
    if text.lower() in ("inf", "none", "unbounded"):
        return None
    return int(text)


def _add_dataset_flags(parser: argparse.ArgumentParser, with_test: bool = True):
    group = parser.add_argument_group("dataset")
    group.add_argument("--fixture", action="store_true", help="use the generated mini-digits set")
    group.add_argument("--fixture-seed", type=int, default=0)
    group.add_argument("--images", help="IDX image file")
    group.add_argument("--labels", help="IDX label file")
    if with_test:
        group.add_argument("--test-images", help="held-out IDX image file")
        group.add_argument("--test-labels", help="held-out IDX label file")


def _add_train_flags(parser: argparse.ArgumentParser):
    defaults = TrainConfig()
    parser.add_argument("--epochs", type=int, default=defaults.epochs)
    parser.add_argument("--lr", type=float, default=defaults.learning_rate)
    parser.add_argument("--batch", type=int, default=defaults.batch_size)
    parser.add_argument("--seed", type=int, default=defaults.seed)
    parser.add_argument("--hidden", type=_hidden_dims, default=defaults.hidden_dims,
                        help="comma-separated hidden layer widths")
    parser.add_argument("--output", required=True, help="weights file to write")
    parser.add_argument("--log", help="training-log CSV (default: <output>.log.csv)")


def _add_attack_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--weights", required=True)
    parser.add_argument("--layer", choices=["f", "z"], default="f")
    parser.add_argument("--theta", type=float, default=1.0)
    parser.add_argument("--epsilon", type=float, default=1.0)
    parser.add_argument("--max-iters", type=_max_iters, default=None, help="integer or 'inf'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jsma",
        description="Saliency-map adversarial attacks against small feedforward classifiers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="overrides JSMA_LOG_LEVEL")
    parser.add_argument("--no-progress", action="store_true", help="disable progress bars")
    parser.add_argument("--env-file", default=".env")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    train = sub.add_parser("train", help="train a classifier with SGD")
    _add_dataset_flags(train)
    _add_train_flags(train)

    dist = sub.add_parser("distill", help="defensive distillation at temperature T")
    _add_dataset_flags(dist)
    _add_train_flags(dist)
    dist.add_argument("--temperature", type=float, default=DistillConfig().temperature)
    dist.add_argument("--teacher", help="baseline weights; trained first when omitted")
    dist.add_argument("--teacher-output", help="also write the temperature-T teacher here")
    dist.add_argument("--student-hidden", type=_hidden_dims, default=None)

    attack = sub.add_parser("attack", help="attack a single input")
    _add_attack_flags(attack)
    attack.add_argument("--family", choices=ALL_FAMILIES, default=AttackFamily.TARGETED_INCREASING.value)
    source = attack.add_mutually_exclusive_group(required=True)
    source.add_argument("--fixture-index", type=int, help="test-set index of the mini-digits fixture")
    source.add_argument("--image", help="PGM/PPM input image")
    attack.add_argument("--fixture-seed", type=int, default=0)
    attack.add_argument("--label", type=int, help="true class (default: fixture label or model prediction)")
    attack.add_argument("--target", type=int, help="target class; best-target sweep when omitted")
    attack.add_argument("--trace", help="per-iteration CSV trace")
    attack.add_argument("--adversary", help="adversary image output path")
    attack.add_argument("--output-dir", help="manifest directory (default: next to the outputs)")

    campaign = sub.add_parser("campaign", help="evaluate attack variants over a test set")
    _add_attack_flags(campaign)
    _add_dataset_flags(campaign, with_test=False)
    campaign.add_argument("--variants", default="+jsma,+nt,maximal",
                          help=f"comma list of {', '.join(ALL_FAMILIES)} or 'all'")
    campaign.add_argument("--layers", default=None,
                          help="comma list of f,z to run every variant at several layers (overrides --layer)")
    campaign.add_argument("--sample-limit", type=int, default=None)
    campaign.add_argument("--workers", type=int, default=None, help="overrides JSMA_WORKERS")
    campaign.add_argument("--output", required=True, help="report CSV path")
    campaign.add_argument("--dump-dir", help="write every adversary as an image here")

    inspect = sub.add_parser("inspect", help="model summary and per-class confidence")
    inspect.add_argument("--weights", required=True)
    inspect_source = inspect.add_mutually_exclusive_group()
    inspect_source.add_argument("--fixture-index", type=int)
    inspect_source.add_argument("--image")
    inspect.add_argument("--fixture-seed", type=int, default=0)
    inspect.add_argument("--output-dir", help="write a run manifest here (none by default)")

    return parser


def _load_training_data(args) -> tuple[LabeledDataset, Optional[LabeledDataset], dict]:
    if args.fixture:
        train, test = make_mini_digits(seed=args.fixture_seed)
        return train, test, {"dataset": "fixture", "fixture_seed": args.fixture_seed}
    if not (args.images and args.labels):
        raise ValueError("Either --fixture or both --images and --labels are required")
    train = load_idx(args.images, args.labels)
    test = None
    inputs = {"images": args.images, "labels": args.labels}
    if getattr(args, "test_images", None) and getattr(args, "test_labels", None):
        test = load_idx(args.test_images, args.test_labels, class_count=train.class_count)
        inputs.update(test_images=args.test_images, test_labels=args.test_labels)
    return train, test, inputs


def _load_eval_data(args) -> tuple[LabeledDataset, dict]:
    if args.fixture:
        _, test = make_mini_digits(seed=args.fixture_seed)
        return test, {"dataset": "fixture", "fixture_seed": args.fixture_seed}
    if not (args.images and args.labels):
        raise ValueError("Either --fixture or both --images and --labels are required")
    return load_idx(args.images, args.labels), {"images": args.images, "labels": args.labels}


def _train_config(args) -> TrainConfig:
    return TrainConfig.validated(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        hidden_dims=tuple(args.hidden),
    )


def _log_path(args) -> str:
    return args.log or f"{args.output}.log.csv"


def cmd_train(args, settings: Settings) -> int:
    config = _train_config(args)
    manifest_dir = Path(args.output).resolve().parent
    ensure_manifest_slot(manifest_dir, "train")
    train_set, test_set, inputs = _load_training_data(args)
    manifest = RunManifest(command="train", config={"train": asdict(config)}, seed=config.seed, inputs=inputs)

    trainer = SGDTrainer(config, progress=settings.progress)
    model = trainer.fit(train_set, evaluation=test_set)
    save_model(args.output, model)
    write_training_log(_log_path(args), trainer.history)

    manifest.outputs = {"weights": args.output, "training_log": _log_path(args)}
    if test_set is not None:
        manifest.results["test_accuracy"] = accuracy(model, test_set)
        print(f"test accuracy: {manifest.results['test_accuracy']:.4f}")
    manifest.write(manifest_dir)
    return EXIT_OK


def cmd_distill(args, settings: Settings) -> int:
    config = DistillConfig.validated(
        temperature=args.temperature,
        train=_train_config(args),
        student_hidden_dims=args.student_hidden,
    )
    manifest_dir = Path(args.output).resolve().parent
    ensure_manifest_slot(manifest_dir, "distill")
    train_set, test_set, inputs = _load_training_data(args)
    manifest = RunManifest(
        command="distill",
        config={"temperature": config.temperature, "train": asdict(config.train),
                "student_hidden_dims": config.student_hidden_dims},
        seed=config.train.seed,
        inputs=inputs,
    )

    if args.teacher:
        baseline = load_model(args.teacher)
        manifest.inputs["teacher"] = args.teacher
    else:
        logger.info("[CLI] No --teacher given, training the baseline first")
        baseline = SGDTrainer(config.train, progress=settings.progress).fit(train_set, evaluation=test_set)

    run = defensive_distillation(baseline, train_set, config, evaluation=test_set, progress=settings.progress)
    save_model(args.output, run.student)
    write_training_log(_log_path(args), run.student_history)
    manifest.outputs = {"weights": args.output, "training_log": _log_path(args)}
    if args.teacher_output:
        save_model(args.teacher_output, run.teacher)
        manifest.outputs["teacher_weights"] = args.teacher_output

    if test_set is not None:
        manifest.results["test_accuracy"] = accuracy(run.student, test_set)
        print(f"test accuracy: {manifest.results['test_accuracy']:.4f}")
    manifest.write(manifest_dir)
    return EXIT_OK


def _attack_config(args, family: AttackFamily, layer: Optional[str] = None) -> AttackConfig:
    return AttackConfig.validated(
        family=family,
        layer=JacobianLayer((layer or args.layer).upper()),
        theta=args.theta,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
    )


def _load_single_input(args, input_dim: int) -> tuple[np.ndarray, Optional[int], dict, tuple[int, int, int]]:
    """Input vector, its known label (if any), manifest inputs and image shape."""
    if args.fixture_index is not None:
        _, test = make_mini_digits(seed=args.fixture_seed)
        if not 0 <= args.fixture_index < len(test):
            raise ValueError(f"--fixture-index must be in [0, {len(test)})")
        x, y = test.features[args.fixture_index], int(test.labels[args.fixture_index])
        inputs = {"dataset": "fixture", "fixture_seed": args.fixture_seed, "fixture_index": args.fixture_index}
        return x, y, inputs, test.image_shape

    record = load_image(args.image)
    x = record.to_features()
    if x.shape[0] != input_dim:
        raise ValueError(f"{args.image} has {x.shape[0]} features, the model expects {input_dim}")
    return x, None, {"image": args.image}, (record.height, record.width, record.channels)


def cmd_attack(args, settings: Settings) -> int:
    model = load_model(args.weights)
    config = _attack_config(args, AttackFamily(args.family))
    x, known_label, inputs, image_shape = _load_single_input(args, model.input_dim)
    true_class = args.label if args.label is not None else known_label
    if true_class is None:
        true_class = predict(model, x)
    inputs["weights"] = args.weights
    outputs = [path for path in (args.trace, args.adversary) if path]
    manifest_dir = args.output_dir or (Path(outputs[0]).resolve().parent if outputs else ".")
    ensure_manifest_slot(manifest_dir, "attack")

    target = args.target
    if config.family.is_targeted:
        if target is None:
            outcome, target = best_target_attack(model, x, true_class, config)
        else:
            outcome = SaliencyAttack(model, config).run(x, target)
    else:
        outcome = SaliencyAttack(model, config).run(x, true_class)

    record = outcome_metrics(x, outcome)
    manifest = RunManifest(command="attack", config=config.as_dict(), inputs=inputs)
    manifest.config.update(true_class=true_class, target=target)
    manifest.results = {
        "success": outcome.success,
        "iterations": outcome.iterations,
        "predicted": outcome.predicted,
        "stop_reason": outcome.stop_reason.value,
        "l0": record.l0,
        "l2": record.l2,
        "entropy": record.entropy,
    }

    if args.trace:
        write_trace(args.trace, outcome)
        manifest.outputs["trace"] = args.trace
    if args.adversary:
        height, width, channels = image_shape
        save_image(args.adversary, ImageRecord.from_features(outcome.adversary, width, height, channels))
        manifest.outputs["adversary"] = args.adversary

    manifest.write(manifest_dir)

    status = "success" if outcome.success else "failure"
    print(f"{config.label}: {status} ({outcome.stop_reason.value}) after {outcome.iterations} iterations, "
          f"predicted {outcome.predicted}, L0={record.l0} L2={record.l2:.4f} H={record.entropy:.4f}")
    return EXIT_OK if outcome.success else EXIT_ATTACK_FAILED


def _campaign_variants(args) -> list[AttackConfig]:
    names = ALL_FAMILIES if args.variants.strip() == "all" else [v.strip() for v in args.variants.split(",") if v.strip()]
    layers = [args.layer] if not args.layers else [v.strip() for v in args.layers.split(",") if v.strip()]
    variants = []
    for layer in layers:
        if layer not in ("f", "z"):
            raise ValueError(f"Unknown layer: {layer}")
        for name in names:
            try:
                family = AttackFamily(name)
            except ValueError:
                raise ValueError(f"Unknown variant {name!r}; choose from {', '.join(ALL_FAMILIES)}")
            variants.append(_attack_config(args, family, layer))
    return variants


def cmd_campaign(args, settings: Settings) -> int:
    model = load_model(args.weights)
    dataset, inputs = _load_eval_data(args)
    inputs["weights"] = args.weights
    variants = _campaign_variants(args)
    workers = args.workers if args.workers is not None else settings.workers
    manifest_dir = Path(args.output).resolve().parent
    ensure_manifest_slot(manifest_dir, "campaign")

    runner = CampaignRunner(model, workers=workers, progress=settings.progress)
    report = runner.run(dataset, variants, sample_limit=args.sample_limit)
    write_report(args.output, report)

    manifest = RunManifest(command="campaign", config=report.config_echo(), inputs=inputs)
    manifest.config.update(sample_limit=args.sample_limit, workers=workers)
    manifest.outputs["report"] = args.output
    if args.dump_dir:
        dump_adversaries(args.dump_dir, report, dataset.image_shape)
        manifest.outputs["adversaries"] = args.dump_dir
    manifest.results = {row.config.label: {"success_pct": row.success_pct, "mean_l0": row.mean_l0,
                                           "mean_l2": row.mean_l2, "mean_entropy": row.mean_entropy}
                        for row in report.rows}
    manifest.write(manifest_dir)

    print(render_table(report), end="")
    return EXIT_OK


def cmd_inspect(args, settings: Settings) -> int:
    if args.output_dir:
        ensure_manifest_slot(args.output_dir, "inspect")
    model = load_model(args.weights)
    print(model.describe())
    manifest = RunManifest(command="inspect", inputs={"weights": args.weights})

    if args.fixture_index is not None or args.image:
        x, label, inputs, _ = _load_single_input(args, model.input_dim)
        manifest.inputs.update(inputs)
        probs = softmax(forward_logits(model, x))
        predicted = int(np.argmax(probs))
        if label is not None:
            print(f"label: {label}")
        print(f"predicted: {predicted}")
        for c, p in enumerate(probs):
            print(f"  class {c}: {p:.6f}")
        manifest.results = {"predicted": predicted, "probabilities": [float(p) for p in probs]}

    if args.output_dir:
        manifest.write(args.output_dir)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "distill": cmd_distill,
    "attack": cmd_attack,
    "campaign": cmd_campaign,
    "inspect": cmd_inspect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 when an attack did not succeed, 2 on usage, format
        or configuration errors
    """
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        load_env_file(args.env_file)
        settings = load_settings()
        if args.log_level:
            settings.log_level = args.log_level
        if args.no_progress or getattr(logging, settings.log_level.upper(), logging.INFO) > logging.INFO:
            settings.progress = False
        setup_logging(settings.log_level)

        logger.info(f"[CLI] Running {args.command}")
        return COMMANDS[args.command](args, settings)
    except (ValueError, OSError) as e:
        logger.error(f"[CLI] {args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
