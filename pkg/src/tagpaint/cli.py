"""Command-line entry point. Thin adapters only; all behavior lives in
the library modules.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import lineart as lineart_mod
from .blocks import BlockKind, count_params
from .dataset import LoadedDataset, build_dataset
from .losses import LossWeights
from .networks import NetworkConfig, load_checkpoint
from .pretrain import load_extractor, pretrain_cit, save_extractor
from .training import TrainSchedule, ablate, compare_curricula, train
from .vocab import default_vocabulary, load_vocabulary


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on bad flags, not argparse's 2
        self.print_usage(sys.stderr)
        raise CliError(message)


def _read_toml(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    if not path.exists():
        raise CliError(f"schedule file not found: {path}")
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _echo_config(values: dict) -> None:
    print("# resolved configuration")
    for key in sorted(values):
        print(f"{key} = {values[key]}")


def _load_data(path: str) -> LoadedDataset:
    try:
        return LoadedDataset(path)
    except FileNotFoundError as exc:
        raise CliError(str(exc))
    except ValueError as exc:
        raise CliError(str(exc))


def _load_image01(path: Path) -> np.ndarray:
    if not path.exists():
        raise CliError(f"input image not found: {path}")
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def _save_image01(path: Path, img01: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(img01) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


_SCHEDULE_KEYS = ("step1", "step2", "finetune", "batch_size", "lr", "seed",
                  "lambda_rec", "lambda_cls", "beta", "non_saturating",
                  "block_kind", "base_channels")


def _resolve_schedule(args) -> tuple[TrainSchedule, dict]:
    """Defaults < schedule TOML < explicit flags; returns extras too."""
    file_values = {}
    if getattr(args, "schedule", None):
        file_values = _read_toml(Path(args.schedule))
        unknown = set(file_values) - set(_SCHEDULE_KEYS)
        if unknown:
            raise CliError(f"unknown schedule keys: {sorted(unknown)}")
    resolved = {
        "step1": 5, "step2": 5, "finetune": 0, "batch_size": 16,
        "lr": 2e-4, "seed": 0, "lambda_rec": 1000.0, "lambda_cls": 1.0,
        "beta": 0.9, "non_saturating": False, "block_kind": "secat",
        "base_channels": 16,
    }
    resolved.update(file_values)
    for key in _SCHEDULE_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    schedule = TrainSchedule(
        step1_epochs=int(resolved["step1"]),
        step2_epochs=int(resolved["step2"]),
        finetune_epochs=int(resolved["finetune"]),
        weights=LossWeights(lambda_rec=float(resolved["lambda_rec"]),
                            lambda_cls=float(resolved["lambda_cls"]),
                            beta=float(resolved["beta"])),
        lr=float(resolved["lr"]), batch_size=int(resolved["batch_size"]),
        seed=int(resolved["seed"]),
        non_saturating=bool(resolved["non_saturating"]))
    return schedule, resolved


def _network_config(data: LoadedDataset, resolved: dict) -> NetworkConfig:
    try:
        kind = BlockKind(resolved["block_kind"])
    except ValueError:
        raise CliError(f"unknown block kind: {resolved['block_kind']!r}; "
                       f"expected one of {[k.value for k in BlockKind]}")
    return NetworkConfig(cvt_count=data.vocab.cvt_count,
                         cit_count=data.vocab.cit_count,
                         image_size=data.size,
                         base_channels=int(resolved["base_channels"]),
                         block_kind=kind)


def _extractor_for(args, data: LoadedDataset):
    if not getattr(args, "extractor", None):
        raise CliError("--extractor is required (run pretrain-cit first)")
    path = Path(args.extractor)
    if not path.exists():
        raise CliError(f"extractor checkpoint not found: {path}")
    extractor, _ = load_extractor(path, data.vocab.sha256())
    return extractor


# ---------------------------------------------------------------- commands

def cmd_dataset(args) -> int:
    vocab = load_vocabulary(args.vocab) if args.vocab else default_vocabulary()
    _echo_config({"n": args.n, "size": args.size, "seed": args.seed,
                  "out": args.out, "vocab_sha256": vocab.sha256()})
    manifest = build_dataset(args.n, args.size, args.seed, args.out, vocab)
    print(f"wrote {manifest.n} records to {args.out} "
          f"({sum(r.split == 'train' for r in manifest.records)} train / "
          f"{sum(r.split == 'test' for r in manifest.records)} test)")
    return 0


def cmd_lineart(args) -> int:
    img = _load_image01(Path(args.input))
    params = lineart_mod.sprite_default(max(img.shape))
    overrides = {k: getattr(args, k) for k in ("sigma", "k", "tau", "eps", "phi")
                 if getattr(args, k) is not None}
    if overrides:
        from dataclasses import replace
        params = replace(params, **overrides)
    _echo_config({"input": args.input, "output": args.output,
                  **{k: getattr(params, k) for k in ("sigma", "k", "tau", "eps", "phi")},
                  "brightness": args.brightness})
    out = lineart_mod.xdog(img, params)
    if args.brightness is not None:
        out = lineart_mod.brightness_scale(out, args.brightness)
    _save_image01(Path(args.output), out)
    return 0


def cmd_pretrain_cit(args) -> int:
    data = _load_data(args.data)
    config = NetworkConfig(cvt_count=data.vocab.cvt_count,
                           cit_count=data.vocab.cit_count,
                           image_size=data.size,
                           base_channels=args.base_channels)
    _echo_config({"data": args.data, "epochs": args.epochs,
                  "batch_size": args.batch_size, "lr": args.lr,
                  "seed": args.seed, "base_channels": args.base_channels,
                  "out": args.out})
    extractor, metrics = pretrain_cit(data, args.epochs,
                                      batch_size=args.batch_size, lr=args.lr,
                                      seed=args.seed, config=config, log=True)
    save_extractor(Path(args.out), extractor, data.vocab.sha256(), metrics)
    print(json.dumps({"mean_accuracy": metrics["mean_accuracy"],
                      "per_tag": metrics["per_tag"]}, indent=2))
    return 0


def cmd_train(args) -> int:
    data = _load_data(args.data)
    schedule, resolved = _resolve_schedule(args)
    config = _network_config(data, resolved)
    extractor = _extractor_for(args, data)
    _echo_config({**resolved, "data": args.data, "out": args.out})
    runlog, ckpt = train(data, config, schedule, args.out, extractor.trunk,
                         log=True)
    from .report import save_loss_curves
    save_loss_curves(runlog, Path(args.out) / "losses.png")
    print(f"final checkpoint: {ckpt}")
    print(f"trained iterations: {len(runlog.records)} "
          f"({runlog.wall_seconds:.1f}s)")
    return 0


def cmd_ablate(args) -> int:
    data = _load_data(args.data)
    schedule, resolved = _resolve_schedule(args)
    extractor = _extractor_for(args, data)
    kinds = ([k.strip() for k in args.kinds.split(",")] if args.kinds != "all"
             else [k.value for k in BlockKind])
    for k in kinds:
        if k not in BlockKind._value2member_map_:
            raise CliError(f"unknown block kind: {k!r}")
    base_config = _network_config(data, resolved)
    _echo_config({**resolved, "kinds": ",".join(kinds), "data": args.data,
                  "out": args.out})
    report = ablate(data, kinds, schedule, args.out, extractor.trunk,
                    base_config=base_config, log=True)
    paths = report.save(args.out)
    print(report.to_text())
    print(f"report written to {paths['csv']}, {paths['txt']}, {paths['png']}")
    return 0


def cmd_compare_curricula(args) -> int:
    data = _load_data(args.data)
    schedule, resolved = _resolve_schedule(args)
    extractor = _extractor_for(args, data)
    seeds = [int(s) for s in args.seeds.split(",")]
    base_config = _network_config(data, resolved)
    _echo_config({**resolved, "seeds": args.seeds, "data": args.data,
                  "out": args.out})
    report = compare_curricula(data, schedule, args.out, extractor.trunk,
                               seeds=seeds, base_config=base_config, log=True)
    paths = report.save(args.out)
    print(report.to_text())
    print(f"report written to {paths['csv']}, {paths['txt']}, {paths['png']}")
    return 0


def cmd_eval(args) -> int:
    data = _load_data(args.data)
    ckpt_path = Path(args.ckpt)
    if not ckpt_path.exists():
        raise CliError(f"checkpoint not found: {ckpt_path}")
    bundle = load_checkpoint(ckpt_path, data.vocab.sha256(),
                             with_discriminator=False)
    from .metrics import TrunkFeatureExtractor
    from .training import evaluate_generator
    extractor = TrunkFeatureExtractor(bundle.generator.cit_trunk,
                                      bundle.config.image_size)
    _echo_config({"ckpt": args.ckpt, "data": args.data, "out": args.out,
                  "split": args.split})
    metrics = evaluate_generator(bundle.generator, data, data.ids(args.split),
                                 extractor)
    metrics["params"] = count_params(bundle.generator)
    for name, value in metrics.items():
        print(json.dumps({"metric": name, "value": value}))
    if args.out:
        from .report import save_metric_records
        paths = save_metric_records(metrics, args.out)
        print(f"report written to {paths['csv']}, {paths['txt']}, {paths['png']}")
    return 0


def cmd_colorize(args) -> int:
    ckpt_path = Path(args.ckpt)
    if not ckpt_path.exists():
        raise CliError(f"checkpoint not found: {ckpt_path}")
    bundle = load_checkpoint(ckpt_path, with_discriminator=False)
    vocab = (load_vocabulary(args.vocab) if args.vocab
             else default_vocabulary())
    if vocab.sha256() != bundle.vocab_sha256:
        raise CliError("checkpoint was trained against a different vocabulary")
    tags = [t for t in args.tags.split(",") if t]
    for t in tags:
        if t not in vocab.cvt_index:
            raise CliError(f"unknown tag: {t!r}")
    img = _load_image01(Path(args.input))
    _echo_config({"ckpt": args.ckpt, "input": args.input, "tags": args.tags,
                  "out": args.out, "real_sketch": args.real_sketch})
    from .service import ModelStore
    store = ModelStore(vocab)
    store.bundles["model"] = bundle
    store.default_variant = "model"
    store.ready = True
    result = store.colorize(img, tags, None, args.real_sketch)
    _save_image01(Path(args.out), result.image)
    if args.guide_out:
        _save_image01(Path(args.guide_out), result.guide)
    print(f"wrote {args.out} ({result.inference_ms:.0f} ms, "
          f"{result.block_kind} blocks)")
    return 0


def cmd_serve(args) -> int:
    vocab = load_vocabulary(args.vocab) if args.vocab else default_vocabulary()
    checkpoints: dict[str, str] = {}
    for spec in args.ckpt:
        if "=" in spec:
            variant, path = spec.split("=", 1)
        else:
            variant, path = Path(spec).stem, spec
        if not Path(path).exists():
            raise CliError(f"checkpoint not found: {path}")
        checkpoints[variant] = path
    _echo_config({"host": args.host, "port": args.port,
                  "checkpoints": checkpoints, "max_dim": args.max_dim})
    from .service import ModelStore, create_app
    store = ModelStore(vocab, max_dim=args.max_dim)
    store.load(checkpoints, default_variant=args.default_variant)
    import uvicorn
    uvicorn.run(create_app(store), host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="tagpaint",
                     description="tag-conditioned line art colorization")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("dataset", help="generate a sprite corpus")
    p.add_argument("--n", type=int, required=True, help="number of records")
    p.add_argument("--size", type=int, default=64,
                   help="image side in pixels, one of 64/128/256 (default 64)")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--vocab", help="vocabulary manifest (default: built-in)")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("lineart", help="extract line art from an image")
    p.add_argument("--input", required=True, help="input PNG (any mode)")
    p.add_argument("--output", required=True, help="output PNG")
    p.add_argument("--sigma", type=float, help="blur radius in pixels")
    p.add_argument("--k", type=float, help="blur ratio, dimensionless > 1")
    p.add_argument("--tau", type=float, help="DoG weight, dimensionless")
    p.add_argument("--eps", type=float, help="threshold in luminance units")
    p.add_argument("--phi", type=float, help="soft-threshold sharpness")
    p.add_argument("--brightness", type=float,
                   help="post-scale toward white, factor >= 1")
    p.set_defaults(func=cmd_lineart)

    p = sub.add_parser("pretrain-cit", help="pretrain the shape-tag extractor")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="extractor checkpoint path")
    p.add_argument("--epochs", type=int, default=10, help="epochs (default 10)")
    p.add_argument("--batch-size", type=int, default=32, help="default 32")
    p.add_argument("--lr", type=float, default=2e-4, help="default 2e-4")
    p.add_argument("--seed", type=int, default=0, help="default 0")
    p.add_argument("--base-channels", type=int, default=16, help="default 16")
    p.set_defaults(func=cmd_pretrain_cit)

    def add_schedule_flags(p):
        p.add_argument("--schedule", help="TOML file with schedule keys")
        p.add_argument("--step1", type=int, help="segmentation epochs")
        p.add_argument("--step2", type=int, help="colorization epochs")
        p.add_argument("--finetune", type=int, help="brightness epochs")
        p.add_argument("--batch-size", dest="batch_size", type=int,
                       help="default 16")
        p.add_argument("--lr", type=float, help="default 2e-4")
        p.add_argument("--seed", type=int, help="default 0")
        p.add_argument("--lambda-rec", dest="lambda_rec", type=float,
                       help="reconstruction weight (default 1000)")
        p.add_argument("--lambda-cls", dest="lambda_cls", type=float,
                       help="classification weight (default 1)")
        p.add_argument("--beta", type=float,
                       help="guide reconstruction weight (default 0.9)")
        p.add_argument("--non-saturating", dest="non_saturating",
                       action=argparse.BooleanOptionalAction, default=None,
                       help="generator uses -log D(G) (default off)")
        p.add_argument("--block-kind", dest="block_kind",
                       help="decoder block kind (default secat)")
        p.add_argument("--base-channels", dest="base_channels", type=int,
                       help="network width (default 16)")

    p = sub.add_parser("train", help="run the two-step curriculum")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--extractor", required=True,
                   help="pretrained extractor checkpoint")
    add_schedule_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train and compare decoder block kinds")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--extractor", required=True,
                   help="pretrained extractor checkpoint")
    p.add_argument("--kinds", default="all",
                   help="comma list of kinds or 'all' (default all)")
    add_schedule_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare-curricula",
                       help="two-step vs single-step over seeds")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--extractor", required=True,
                   help="pretrained extractor checkpoint")
    p.add_argument("--seeds", default="0,1,2",
                   help="comma list of seeds (default 0,1,2)")
    add_schedule_flags(p)
    p.set_defaults(func=cmd_compare_curricula)

    p = sub.add_parser("eval", help="metrics for a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=("train", "test"),
                   help="dataset split (default test)")
    p.add_argument("--out", help="optional report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("colorize", help="colorize one sketch")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="sketch PNG")
    p.add_argument("--tags", required=True, help="comma-separated color tags")
    p.add_argument("--out", required=True, help="output PNG (model size)")
    p.add_argument("--guide-out", help="optional guide decoder output PNG")
    p.add_argument("--real-sketch", action="store_true",
                   help="apply the real-sketch brightness preset")
    p.add_argument("--vocab", help="vocabulary manifest (default: built-in)")
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("serve", help="run the inference HTTP service")
    p.add_argument("--ckpt", action="append", required=True,
                   help="VARIANT=PATH (repeatable) or a bare path")
    p.add_argument("--vocab", help="vocabulary manifest (default: built-in)")
    p.add_argument("--host", default="127.0.0.1", help="default 127.0.0.1")
    p.add_argument("--port", type=int, default=8000, help="default 8000")
    p.add_argument("--max-dim", dest="max_dim", type=int, default=2048,
                   help="max input image side in px (default 2048)")
    p.add_argument("--default-variant", dest="default_variant",
                   help="variant served by default")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
