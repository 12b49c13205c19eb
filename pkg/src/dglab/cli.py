"""Command-line entry point.

Subcommands: generate, train, lodo, ablation, saliency-export,
export-features. Exit codes: 0 success, 1 configuration or contract error,
2 numeric failure (non-finite loss or logits).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data import (
    DomainDataset,
    TrainView,
    generate_shifted_waveforms,
    generate_spurious_gaussian,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, ContractError, DataFormatError, NumericError
from .evaluation import ablation_grid, ablation_text, export_features, lodo_experiment
from .models import load_model, save_model
from .saliency import SmoothGradConfig, smoothgrad, vanilla_saliency
from .trainer import TrainConfig, train

USER_ERRORS = (ConfigError, ContractError, DataFormatError, IndexError, KeyError, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; config errors are exit 1 here
    def error(self, message):
        raise ConfigError(message)


def _load_config(path: str | None) -> TrainConfig:
    return TrainConfig.load_json(path) if path else TrainConfig()


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def cmd_generate(args) -> int:
    if args.kind == "spurious-gaussian":
        ds = generate_spurious_gaussian(
            num_domains=args.num_domains,
            classes=args.classes,
            signal_dims=args.signal_dims,
            nuisance_dims=args.nuisance_dims,
            nuisance_strength=args.nuisance_strength,
            noise_sd=args.noise_sd,
            n_per_domain_class=args.n_per_domain_class,
            seed=args.seed,
        )
    else:
        ds = generate_shifted_waveforms(
            num_domains=args.num_domains,
            classes=args.classes,
            length=args.length,
            n_per_domain_class=args.n_per_domain_class,
            seed=args.seed,
            background_amplitude=args.background_amplitude,
            noise_sd=args.noise_sd,
        )
    save_dataset(ds, args.out)
    print(f"wrote {ds.n} rows ({len(ds.domain_names)} domains, {ds.num_classes} classes) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    ds = load_dataset(args.data)
    view = TrainView(X=ds.X, y=ds.y)  # whole-file training; domains dropped
    model, history = train(view, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_model(model, os.path.join(args.out, "checkpoint.json"))
    history.to_csv(os.path.join(args.out, "history.csv"))
    cfg.save_json(os.path.join(args.out, "config.json"))
    print(f"trained {cfg.iterations} iterations; checkpoint and history in {args.out}")
    return 0


def cmd_lodo(args) -> int:
    cfg = _load_config(args.config)
    ds = load_dataset(args.data)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    report = lodo_experiment(ds, cfg, methods, _int_list(args.seeds), holdout_fraction=args.holdout)
    report.save_json(args.out)
    print(report.to_text())
    return 0


def cmd_ablation(args) -> int:
    cfg = _load_config(args.config)
    ds = load_dataset(args.data)
    with open(args.grid, "r", encoding="utf-8") as fh:
        try:
            grid = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.grid}: invalid JSON: {e}") from e
    if not isinstance(grid, list) or not all(isinstance(p, list) and len(p) == 3 for p in grid):
        raise ConfigError(f"{args.grid}: expected a list of [alpha, m, q_max] triples")
    report = ablation_grid(ds, cfg, grid, _int_list(args.seeds))
    report.save_json(args.out)
    print(ablation_text(report))
    return 0


def cmd_saliency_export(args) -> int:
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data)
    count = min(args.samples, ds.n)
    sg_cfg = SmoothGradConfig(n=args.sg_n, sigma=args.sg_sigma, seed=args.sg_seed)
    stem, ext = os.path.splitext(args.out)
    ext = ext or ".csv"
    flat = len(model.input_shape) == 1
    for k in range(count):
        sample = ds.X[k].reshape(-1) if flat else ds.X[k]
        label = int(ds.y[k])
        vanilla = vanilla_saliency(model, sample, label)
        smooth = smoothgrad(model, sample, label, sg_cfg)
        path = f"{stem}_{k:03d}{ext}"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("index,value,vanilla,smoothgrad\n")
            values = np.asarray(sample).ravel()
            v_flat = vanilla.scores.ravel()
            s_flat = smooth.scores.ravel()
            for i in range(values.size):
                fh.write(f"{i},{values[i]!r},{v_flat[i]!r},{s_flat[i]!r}\n")
    print(f"wrote {count} per-sample saliency files next to {args.out}")
    return 0


def cmd_export_features(args) -> int:
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data)
    export_features(model, ds, args.out)
    print(f"wrote {ds.n} feature rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dglab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic multi-domain dataset")
    p.add_argument("--kind", choices=["spurious-gaussian", "waveforms"], required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-domains", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--signal-dims", type=int, default=2)
    p.add_argument("--nuisance-dims", type=int, default=8)
    p.add_argument("--nuisance-strength", type=float, default=3.0)
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--n-per-domain-class", type=int, default=None)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--background-amplitude", type=float, default=1.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on every row of a dataset (domains dropped)")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="TrainConfig JSON; defaults when omitted")
    p.add_argument("--out", required=True, help="run directory for checkpoint.json and history.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("lodo", help="leave-one-domain-out experiment over methods and seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--methods", default="ce_only,alternate")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--holdout", type=float, default=None, help="in-source validation fraction")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_lodo)

    p = sub.add_parser("ablation", help="grid of (alpha, m, q_max) points, one LODO each")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--grid", required=True, help="JSON list of [alpha, m, q_max] triples")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("saliency-export", help="per-sample saliency CSVs for the first K samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--out", required=True, help="base CSV path; files get a _NNN suffix")
    p.add_argument("--sg-n", type=int, default=25)
    p.add_argument("--sg-sigma", type=float, default=0.15)
    p.add_argument("--sg-seed", type=int, default=0)
    p.set_defaults(func=cmd_saliency_export)

    p = sub.add_parser("export-features", help="penultimate-layer features with domain tags")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        # fill kind-dependent generator defaults
        if getattr(args, "command", None) == "generate":
            if args.noise_sd is None:
                args.noise_sd = 0.5 if args.kind == "spurious-gaussian" else 0.05
            if args.n_per_domain_class is None:
                args.n_per_domain_class = 500 if args.kind == "spurious-gaussian" else 200
        return args.func(args)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
