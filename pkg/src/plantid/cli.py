"""Command-line pipeline: prepare, split, train, evaluate, reproduce.

Defaults encode the benchmark protocol (Adam, lr 0.001, gamma 0.9,
50 epochs, 60/40 split), so ``plantid train <root> --arch X`` alone runs
it. Flag precedence: command line over config file over built-in
defaults. Exit codes: 0 success, 1 usage error, 2 data error, 3
runtime/numeric error.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from .augment import export_plans_csv, materialize, plan_balance
from .dataset import (
    STANDARDIZE,
    UNIT_RANGE,
    DatasetIndex,
    PreprocessConfig,
    SplitAssignment,
    load_index,
    stratified_split,
)
from .dedup import find_near_duplicates, quarantine_duplicates
from .errors import DataError, NumericError, UsageError, WeightsUnavailableError
from .evaluation import evaluate_model, write_curves
from .manifest import RunManifest, content_hash, utc_now
from .models import (
    ARCHITECTURES,
    WEIGHTS_DIR_ENV,
    ModelSpec,
    build_model,
    default_resolution,
    load_checkpoint,
)
from .training import (
    CorpusDataset,
    TrainConfig,
    train,
    write_metrics_csv,
    write_run_config,
)

# Published reference results for the two benchmark corpora (per model:
# training loss, training accuracy, testing loss, testing accuracy).
# `reproduce` prints deltas against these; seed-level variance of a
# couple of points is expected.
REFERENCE_RESULTS = {
    "vietnam": {
        "resnet34": (0.0043, 0.9995, 0.8013, 0.8498),
        "densenet121": (0.0010, 0.9998, 0.5621, 0.8892),
        "vgg11_bn": (0.0245, 0.9921, 1.0136, 0.8444),
        "convnext_base": (0.0008, 0.9998, 0.4098, 0.9278),
        "swin_t": (0.4905, 0.8639, 1.6539, 0.6504),
        "scratch": (0.7023, 0.8012, 2.7618, 0.4849),
    },
    "indoherb": {
        "resnet34": (0.0143, 0.9965, 0.6857, 0.8650),
        "densenet121": (0.0027, 0.9998, 0.4873, 0.8910),
        "vgg11_bn": (0.0301, 0.9898, 0.8412, 0.8703),
        "convnext_base": (0.0026, 0.9995, 0.3622, 0.9250),
        "swin_t": (0.1705, 0.9562, 1.1918, 0.7655),
        "scratch": (0.7147, 0.8162, 2.3606, 0.5390),
    },
}
RECIPE_CLASSES = {"vietnam": 200, "indoherb": 100}
REPRODUCE_ORDER = ("resnet34", "densenet121", "vgg11_bn", "convnext_base", "swin_t", "scratch")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _normalization_mode(name: str) -> str:
    return STANDARDIZE if name == "imagenet" else UNIT_RANGE


def _check_split_matches(index: DatasetIndex, split: SplitAssignment) -> None:
    corpus_ids = {s.sample_id for s in index.all_samples()}
    split_ids = split.train_ids | split.test_ids
    if split_ids != corpus_ids:
        missing = len(split_ids - corpus_ids)
        extra = len(corpus_ids - split_ids)
        raise DataError(
            f"split file does not match corpus: {missing} split ids absent from "
            f"corpus, {extra} corpus samples absent from split"
        )


def _print_warnings(index: DatasetIndex) -> None:
    for w in index.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if index.skipped:
        print(f"warning: skipped {len(index.skipped)} non-image file(s)", file=sys.stderr)


def cmd_prepare(args) -> int:
    started = utc_now()
    root = Path(args.root)
    index = load_index(root)
    _print_warnings(index)
    before = index.counts

    report = find_near_duplicates(index, args.dedup_threshold)
    report.save(root / "duplicates.json")
    dup_members = sum(len(g) for g in report.groups)
    print(f"duplicate groups: {len(report.groups)} ({dup_members} images)")
    if args.remove_duplicates and report.groups:
        index, moved = quarantine_duplicates(index, report)
        print(f"quarantined {len(moved)} duplicate file(s) under {root / '_quarantine'}")

    plans = plan_balance(index, args.target_count, args.seed)
    new_samples = []
    for plan in plans:
        new_samples.extend(materialize(plan, index, resolution=args.resolution))
    balanced = index.with_samples(new_samples)
    export_plans_csv(plans, root / "plan.csv")
    balanced.export_manifest(root / "manifest.csv")

    after = balanced.counts
    width = max(len(c) for c in balanced.classes)
    print(f"{'class':<{width}}  before  after")
    for c in balanced.classes:
        print(f"{c:<{width}}  {before.get(c, 0):>6}  {after[c]:>5}")
    print(
        f"total: {index.num_samples} originals + {len(new_samples)} augmented "
        f"= {balanced.num_samples}"
    )

    RunManifest(
        command=args.argv_string,
        config_path=None,
        dataset_digest=balanced.content_digest(),
        seed=args.seed,
        started_at=started,
        finished_at=utc_now(),
        output_dir=str(root),
        inputs_hash=None,
    ).save(root)
    return 0


def cmd_split(args) -> int:
    root = Path(args.root)
    index = load_index(root)
    _print_warnings(index)
    split = stratified_split(index, fraction=args.fraction, seed=args.seed)
    out = Path(args.out) if args.out else root / "split.json"
    split.save(out)
    print(f"{len(split.train_ids)} train / {len(split.test_ids)} test -> {out}")
    return 0


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return doc


def _pick(cli_value, config: dict, key: str, default):
    if cli_value is not None:
        return cli_value
    return config.get(key, default)


def _run_training(
    index: DatasetIndex,
    split: SplitAssignment,
    arch: str,
    pretrained: bool,
    config: TrainConfig,
    normalization: str,
    out_dir: Path,
    dataset_name: str,
    weights_file=None,
    workers: int = 0,
    preload: bool = False,
):
    """Shared by `train` and `reproduce`: build, train, emit artifacts."""
    resolution = default_resolution(arch)
    pp = PreprocessConfig(target_resolution=resolution, normalization=normalization)
    train_set = CorpusDataset(index, sorted(split.train_ids), pp, preload=preload)
    test_set = CorpusDataset(index, sorted(split.test_ids), pp, preload=preload)
    spec = ModelSpec(arch, num_classes=len(index.classes), pretrained=pretrained)
    model = build_model(spec, config.seed, weights_file=weights_file)
    model, history, best_path = train(
        model,
        train_set,
        test_set,
        config,
        out_dir=out_dir,
        dataset_name=dataset_name,
        workers=workers,
        checkpoint_extra={"normalization": normalization},
    )
    write_metrics_csv(history, out_dir / "metrics.csv")
    write_curves(history, out_dir)
    write_run_config(
        out_dir / "run_config.json",
        config,
        spec,
        dataset_digest=index.content_digest(),
        dataset_name=dataset_name,
        normalization=normalization,
        split_seed=split.seed,
        train_fraction=split.train_fraction,
    )
    return model, history, best_path, spec


def cmd_train(args) -> int:
    started = utc_now()
    filecfg = _load_config_file(args.config)
    arch = _pick(args.arch, filecfg, "architecture", None)
    if arch is None:
        raise UsageError("--arch is required (or 'architecture' in the config file)")
    if arch not in ARCHITECTURES:
        raise UsageError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")
    pretrained = _pick(args.pretrained, filecfg, "pretrained", arch != "scratch")
    if arch == "scratch":
        pretrained = False
    normalization = _normalization_mode(_pick(args.normalize, filecfg, "normalize", "unit"))
    try:
        config = TrainConfig(
            base_lr=_pick(args.lr, filecfg, "base_lr", 0.001),
            gamma=_pick(args.gamma, filecfg, "gamma", 0.9),
            epochs=_pick(args.epochs, filecfg, "epochs", 50),
            batch_size=_pick(args.batch_size, filecfg, "batch_size", 32),
            seed=_pick(args.seed, filecfg, "seed", 0),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    root = Path(args.root)
    index = load_index(root)
    _print_warnings(index)
    split = SplitAssignment.load(args.split)
    _check_split_matches(index, split)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, history, best_path, spec = _run_training(
        index,
        split,
        arch,
        pretrained,
        config,
        normalization,
        out,
        dataset_name=root.name,
        weights_file=args.weights_file,
        workers=args.workers,
        preload=args.preload,
    )
    final = history[-1]
    print(
        f"{arch}: final train acc {final.train_accuracy:.4f} "
        f"(loss {final.train_loss:.4f}), test acc {final.test_accuracy:.4f} "
        f"(loss {final.test_loss:.4f})"
    )
    print(f"best checkpoint: {best_path}")

    inputs = [Path(args.split)] + ([Path(args.config)] if args.config else [])
    RunManifest(
        command=args.argv_string,
        config_path=str(args.config) if args.config else None,
        dataset_digest=index.content_digest(),
        seed=config.seed,
        started_at=started,
        finished_at=utc_now(),
        output_dir=str(out),
        inputs_hash=content_hash(inputs),
    ).save(out)
    return 0


def cmd_evaluate(args) -> int:
    started = utc_now()
    model, meta = load_checkpoint(args.checkpoint)
    root = Path(args.root)
    index = load_index(root)
    _print_warnings(index)
    if model.spec.num_classes != len(index.classes):
        raise DataError(
            f"checkpoint was trained for {model.spec.num_classes} classes but "
            f"the corpus has {len(index.classes)}"
        )
    split = SplitAssignment.load(args.split)
    _check_split_matches(index, split)
    ids = split.train_ids if args.partition == "train" else split.test_ids

    pp = PreprocessConfig(
        target_resolution=model.spec.input_resolution,
        normalization=meta.get("normalization", UNIT_RANGE),
    )
    dataset = CorpusDataset(index, sorted(ids), pp, preload=args.preload)
    report, matrix = evaluate_model(model, dataset, class_names=index.classes)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    matrix.save_csv(out / "confusion.csv", index.classes)
    print(
        f"{args.partition} accuracy {report.accuracy:.4f} | macro P {report.macro_precision:.4f} "
        f"R {report.macro_recall:.4f} F1 {report.macro_f1:.4f} "
        f"({report.num_samples} samples)"
    )

    RunManifest(
        command=args.argv_string,
        config_path=None,
        dataset_digest=index.content_digest(),
        seed=None,
        started_at=started,
        finished_at=utc_now(),
        output_dir=str(out),
        inputs_hash=content_hash([Path(args.checkpoint), Path(args.split)]),
    ).save(out)
    return 0


def cmd_reproduce(args) -> int:
    if not args.yes_long_run:
        raise UsageError(
            "reproduce trains six models for 50 epochs each; pass --yes-long-run "
            "to confirm you want that"
        )
    started = utc_now()
    targets = REFERENCE_RESULTS[args.recipe]
    root = Path(args.dataset_dir)
    index = load_index(root)
    _print_warnings(index)
    expected = RECIPE_CLASSES[args.recipe]
    if len(index.classes) != expected:
        print(
            f"note: recipe {args.recipe!r} was published on {expected} classes; "
            f"this corpus has {len(index.classes)}",
            file=sys.stderr,
        )
    split = stratified_split(index, fraction=0.6, seed=args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for arch in args.archs:
        config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
        arch_out = out / arch
        arch_out.mkdir(parents=True, exist_ok=True)
        try:
            _, history, _, _ = _run_training(
                index,
                split,
                arch,
                arch != "scratch",
                config,
                UNIT_RANGE,
                arch_out,
                dataset_name=root.name,
                workers=args.workers,
                preload=args.preload,
            )
        except WeightsUnavailableError as exc:
            print(f"skipping {arch}: {exc}", file=sys.stderr)
            rows.append((arch, None))
            continue
        rows.append((arch, history[-1]))

    header = (
        f"{'No.':<4} {'Model Name':<15} {'Resolution':<10} "
        f"{'Train loss':>10} {'Train acc':>10} {'Test loss':>10} {'Test acc':>9} "
        f"{'Target':>7} {'Delta':>7}"
    )
    print(header)
    print("-" * len(header))
    csv_lines = ["model,resolution,train_loss,train_acc,test_loss,test_acc,target_test_acc,delta"]
    for i, (arch, final) in enumerate(rows, start=1):
        res = f"{default_resolution(arch)}^2"
        target = targets[arch][3]
        if final is None:
            print(f"{i:<4} {arch:<15} {res:<10} {'skipped (weights unavailable)':>48}")
            csv_lines.append(f"{arch},{res},,,,,{target},")
            continue
        delta = final.test_accuracy - target
        print(
            f"{i:<4} {arch:<15} {res:<10} "
            f"{final.train_loss:>10.4f} {final.train_accuracy:>10.4f} "
            f"{final.test_loss:>10.4f} {final.test_accuracy:>9.4f} "
            f"{target:>7.4f} {delta:>+7.4f}"
        )
        csv_lines.append(
            f"{arch},{res},{final.train_loss!r},{final.train_accuracy!r},"
            f"{final.test_loss!r},{final.test_accuracy!r},{target},{delta!r}"
        )
    (out / "results.csv").write_text("\n".join(csv_lines) + "\n")

    RunManifest(
        command=args.argv_string,
        config_path=None,
        dataset_digest=index.content_digest(),
        seed=args.seed,
        started_at=started,
        finished_at=utc_now(),
        output_dir=str(out),
        inputs_hash=None,
    ).save(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="plantid",
        description="Corpus balancing, deterministic splits, CNN training, and evaluation "
        "for class-per-directory image datasets.",
        epilog=f"Pretrained weights are cached under the torch hub directory; "
        f"set {WEIGHTS_DIR_ENV} to relocate the cache.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="deduplicate and balance a corpus via augmentation")
    p.add_argument("root", help="corpus root (<root>/<class>/<images>)")
    p.add_argument("--target-count", type=int, default=100, help="samples per class after balancing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dedup-threshold", type=int, default=0, help="max Hamming distance (bits) for near-duplicates")
    p.add_argument("--remove-duplicates", action="store_true", help="quarantine all but one member of each duplicate group")
    p.add_argument("--resolution", type=int, default=128, help="square working resolution for augmented images")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("split", help="write a deterministic stratified train/test split")
    p.add_argument("root")
    p.add_argument("--fraction", type=float, default=0.6, help="train fraction per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="split file path (default <root>/split.json)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one model under the standard protocol")
    p.add_argument("root")
    p.add_argument("--split", required=True, help="split file from `plantid split`")
    p.add_argument("--arch", choices=ARCHITECTURES, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pretrained", action=argparse.BooleanOptionalAction, default=None,
                   help="load published backbone weights (default: yes for backbones)")
    p.add_argument("--normalize", choices=["unit", "imagenet"], default=None,
                   help="input normalization: [0,1] only, or channel-standardized on top")
    p.add_argument("--config", default=None, help="JSON config file (flags override it)")
    p.add_argument("--weights-file", default=None, help="explicit backbone weight artifact")
    p.add_argument("--workers", type=int, default=0, help="data-loading worker processes")
    p.add_argument("--preload", action="store_true", help="decode the whole corpus into memory once")
    p.add_argument("--out", required=True, help="artifact directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on one split partition")
    p.add_argument("checkpoint")
    p.add_argument("root")
    p.add_argument("--split", required=True)
    p.add_argument("--partition", choices=["test", "train"], default="test")
    p.add_argument("--preload", action="store_true")
    p.add_argument("--out", required=True, help="artifact directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "reproduce",
        help="run every architecture under the standard protocol and compare "
        "against the published reference results",
    )
    p.add_argument("dataset_dir")
    p.add_argument("--recipe", choices=sorted(REFERENCE_RESULTS), required=True)
    p.add_argument("--yes-long-run", action="store_true", help="acknowledge the compute cost")
    p.add_argument("--archs", nargs="+", choices=REPRODUCE_ORDER, default=list(REPRODUCE_ORDER))
    p.add_argument("--epochs", type=int, default=50, help="override for smoke tests")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--preload", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.argv_string = shlex.join(["plantid"] + argv)
        return args.func(args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
