"""Command-line interface.

Exit codes: 0 success, 1 runtime error (bad file, failed run), 2 usage
error (argparse). Every subcommand that takes --config reads a JSON file;
{} is a valid config that runs the default synthetic benchmark.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .bench import (
    BenchmarkConfig,
    config_from_file,
    export_csv,
    export_figures,
    predict_method,
    prepare_data,
    render_report,
    run_benchmark,
    train_models,
)
from .errors import ShiftBenchError
from .metrics import MetricsReport
from .nnet import load_model, save_model
from .shifts import SHIFT_KINDS, ShiftSpec, apply_shift
from .signals import SynthTaskSpec, generate_synthetic_dataset, read_manifest, write_manifest
from .uq import METHODS, TemperatureFit


def _load_config(args) -> BenchmarkConfig:
    cfg = config_from_file(args.config) if args.config else BenchmarkConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out_dir=str(args.out))
    return cfg


def _cmd_generate(args) -> int:
    spec = SynthTaskSpec(
        num_classes=args.classes,
        signal_length=args.length,
        sample_rate=args.rate,
        seed=args.seed,
    )
    ds = generate_synthetic_dataset(spec, args.n_per_class)
    path = write_manifest(ds, args.out)
    print(f"wrote {len(ds)} signals to {path}")
    return 0


def _cmd_shift(args) -> int:
    ds = read_manifest(args.manifest_in)
    spec = ShiftSpec(args.kind, args.degree, seed=args.seed)
    shifted = apply_shift(ds, spec)
    path = write_manifest(shifted, args.out)
    print(f"wrote {len(shifted)} shifted signals to {path}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg)
    models = train_models(cfg, data)
    save_model(models.backbone, out / "backbone.npz")
    if models.variational is not None:
        save_model(models.variational, out / "variational.npz")
    for i, member in enumerate(models.members):
        save_model(member, out / f"ensemble_{i:02d}.npz")
    if models.temperature is not None:
        t = models.temperature
        (out / "temperature.json").write_text(
            json.dumps(
                {"temperature": t.temperature, "nll_before": t.nll_before, "nll_after": t.nll_after},
                indent=2,
            )
            + "\n"
        )
    print(f"saved checkpoints to {out}")
    return 0


def _load_models(args, cfg, data):
    from .bench import TrainedModels

    models_dir = getattr(args, "models", None)
    if not models_dir:
        return train_models(cfg, data)
    d = Path(models_dir)
    backbone = load_model(d / "backbone.npz")
    variational = load_model(d / "variational.npz") if (d / "variational.npz").is_file() else None
    members = sorted(d.glob("ensemble_*.npz"))
    temperature = None
    if (d / "temperature.json").is_file():
        raw = json.loads((d / "temperature.json").read_text())
        temperature = TemperatureFit(raw["temperature"], raw["nll_before"], raw["nll_after"], ())
    return TrainedModels(backbone, variational, [load_model(p) for p in members], temperature)


def _cmd_evaluate(args) -> int:
    from .bench import _cell_report
    from .features import featurize_dataset
    from .rng import derive_seed

    cfg = _load_config(args)
    data = prepare_data(cfg)
    models = _load_models(args, cfg, data)
    if args.degree == 0:
        x, tag = data.x_test, "degree0"
    else:
        spec = ShiftSpec(args.kind, args.degree, seed=derive_seed(cfg.seed, "shiftseed", args.kind, args.degree))
        shifted = apply_shift(data.test_ds, spec, n_blocks=cfg.mask_blocks)
        x_raw, _, _ = featurize_dataset(shifted, cfg.features)
        x, tag = data.scaler.transform(x_raw), f"{args.kind}-d{args.degree}"
    preds = predict_method(cfg, models, args.method, x, tag)
    report, _ = _cell_report(cfg, args.method, args.kind, args.degree, preds, data.y_test, data.num_classes)
    print(json.dumps(dataclasses.asdict(report), sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_config(args)
    result = run_benchmark(cfg)
    out = export_csv(result, cfg.out_dir)
    export_figures(result, cfg.out_dir)
    print(f"wrote benchmark results to {out}")
    return 0


def _cmd_report(args) -> int:
    paths = render_report(args.in_dir, args.out)
    print(f"wrote {len(paths)} figures to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftbench",
        description="Benchmark uncertainty quantification on 1-D biosignals under controlled shift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset as a manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--n-per-class", type=int, default=200)
    p.add_argument("--length", type=int, default=512)
    p.add_argument("--rate", type=float, default=250.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("shift", help="apply one shift to a manifest dataset")
    p.add_argument("--kind", required=True, choices=SHIFT_KINDS)
    p.add_argument("--degree", type=int, required=True, choices=range(6))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="manifest_in", required=True, help="input manifest.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_shift)

    p = sub.add_parser("train", help="train the configured models and save checkpoints")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate one (method, kind, degree) cell")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--kind", required=True, choices=SHIFT_KINDS)
    p.add_argument("--degree", type=int, required=True, choices=range(6))
    p.add_argument("--models", help="checkpoint directory from 'train' (otherwise trains now)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bench", help="run the full benchmark matrix")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out", help="override output directory")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("report", help="rebuild figures from an output directory")
    p.add_argument("--in", dest="in_dir", required=True, help="directory with metrics.csv")
    p.add_argument("--out", required=True, help="figure output directory")
    p.set_defaults(func=_cmd_report)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ShiftBenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
