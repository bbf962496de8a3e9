"""Command-line interface.

    fedsim centralized        train the centralized baseline
    fedsim federated          run a federated experiment
    fedsim ablation           sweep one hyperparameter axis
    fedsim report             render CSV tables + SVG charts from traces
    fedsim gan-train          fit the unknown-sample generator
    fedsim partition-inspect  draw a partition and show client histograms

Common flags override config-file keys.  Exits 0 on success; on failure
prints one machine-readable ``FEDSIM_ERROR {json}`` line to stderr and
exits 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..data import PartitionSpec, dirichlet_partition, save_partition
from ..engine import read_trace
from ..errors import FedsimError
from ..openset import dump_samples, save_generator
from .. import rng as rngmod
from .config import apply_overrides, config_hash, dump_config, validate_config
from .report import ReportTable, emit_report
from .runners import (
    build_data,
    build_generator,
    run_ablation_matrix,
    run_centralized,
    run_experiment,
)


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="experiment config file (INI); defaults used if omitted")
    sub.add_argument("--seed", type=int, help="replace the seed list with a single seed")
    sub.add_argument("--out", help="output directory override")
    sub.add_argument("--alpha", type=float, help="partition.alpha override")
    sub.add_argument("--rounds", type=int, help="rounds.rounds override")
    sub.add_argument("--variant", help="variant.kind override")


def _load_config(args: argparse.Namespace):
    overrides: dict[str, str] = {}
    if getattr(args, "alpha", None) is not None:
        overrides["partition.alpha"] = str(args.alpha)
    if getattr(args, "rounds", None) is not None:
        overrides["rounds.rounds"] = str(args.rounds)
    if getattr(args, "variant", None) is not None:
        overrides["variant.kind"] = args.variant
    if getattr(args, "seed", None) is not None:
        overrides["experiment.seeds"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        overrides["experiment.out_dir"] = args.out
    return validate_config(args.config, overrides)


def _cmd_centralized(args) -> int:
    cfg = _load_config(args)
    cfg = apply_overrides(cfg, {"experiment.mode": "centralized"})
    result = run_experiment(cfg)
    for seed, summary in sorted(result.summaries.items()):
        print(f"seed {seed}: reference accuracy {summary['reference_accuracy']:.4f} "
              f"(hash {result.hash})")
    print(f"artifacts in {result.out_dir}")
    return 0


def _cmd_federated(args) -> int:
    cfg = _load_config(args)
    cfg = apply_overrides(cfg, {"experiment.mode": "federated"})
    result = run_experiment(cfg, parallel=args.parallel)
    for seed, summary in sorted(result.summaries.items()):
        extra = ""
        if "max_rel_val_acc" in summary:
            extra = f", max rel {summary['max_rel_val_acc']:.2f}%"
        print(f"seed {seed}: max val acc {summary.get('max_val_acc', float('nan')):.4f}"
              f"{extra} (hash {result.hash})")
    print(f"artifacts in {result.out_dir}")
    return 0


def _cmd_ablation(args) -> int:
    cfg = _load_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    table = run_ablation_matrix(cfg, args.axis, values)
    out = Path(args.out or cfg.out_dir) / f"ablation_{args.axis}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.write(out)
    print(table.to_csv_text(), end="")
    print(f"table written to {out}")
    return 0


def _cmd_report(args) -> int:
    traces = {}
    for path in args.traces:
        p = Path(path)
        if not p.exists():
            traces[p.stem] = None
            continue
        trace, _ = read_trace(p)
        traces[p.stem] = trace
    table = ReportTable(title="trace summaries",
                        columns=["trace", "rounds", "max_val_acc", "mean_val_acc"])
    for label in sorted(traces):
        trace = traces[label]
        if trace is None or not trace.records:
            continue
        s = trace.summary()
        table.rows.append({"trace": label, "rounds": s["rounds"],
                           "max_val_acc": s["max_val_acc"], "mean_val_acc": s["mean_val_acc"]})
    written = emit_report({"summary": table}, traces, args.out or "report")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_gan_train(args) -> int:
    cfg = _load_config(args)
    cfg = apply_overrides(cfg, {"variant.generator": args.generator})
    bundle = build_data(cfg)
    generator = build_generator(cfg, bundle)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "generator.fsw"
    save_generator(ckpt, generator)
    samples = generator.sample(16, rngmod.stream(cfg.gan.seed, rngmod.GAN, 3))
    dump_samples(out / "generator_samples.rgb", samples)
    print(f"generator ({generator.kind}) written to {ckpt}")
    print(f"16 sample images ({samples.shape[2]}x{samples.shape[3]} RGB) in "
          f"{out / 'generator_samples.rgb'}")
    return 0


def _cmd_partition_inspect(args) -> int:
    cfg = _load_config(args)
    bundle = build_data(cfg)
    seed = cfg.seeds[0]
    pspec = PartitionSpec(cfg.partition.n_clients, cfg.partition.alpha,
                          cfg.partition.samples_per_client, seed=seed)
    part = dirichlet_partition(bundle.train, pspec)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        save_partition(args.out, part)
        print(f"partition written to {args.out} (+ .hist.json sidecar)")
    print(f"alpha={cfg.partition.alpha} seed={seed} hash={config_hash(cfg)}")
    for i, hist in enumerate(part.histograms):
        top = int(hist.argmax())
        share = hist[top] / hist.sum()
        print(f"client {i:3d}: n={int(hist.sum())} dominant class {top} ({share:.1%}) "
              f"entropy {part.entropies()[i]:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("centralized", help="train the centralized baseline")
    _common_flags(p)
    p.set_defaults(func=_cmd_centralized)

    p = subs.add_parser("federated", help="run a federated experiment")
    _common_flags(p)
    p.add_argument("--parallel", action="store_true", help="train selected clients in threads")
    p.set_defaults(func=_cmd_federated)

    p = subs.add_parser("ablation", help="sweep one hyperparameter axis")
    _common_flags(p)
    p.add_argument("--axis", required=True,
                   help="alpha | local_epochs | client_fraction | w_u | f_u")
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.set_defaults(func=_cmd_ablation)

    p = subs.add_parser("report", help="render tables and charts from trace CSVs")
    p.add_argument("--traces", nargs="+", required=True, help="trace CSV files")
    p.add_argument("--out", help="report output directory")
    p.set_defaults(func=_cmd_report)

    p = subs.add_parser("gan-train", help="fit the unknown-sample generator")
    _common_flags(p)
    p.add_argument("--generator", default="tiny_gan",
                   help="noise | gaussian_fit | tiny_gan (default tiny_gan)")
    p.set_defaults(func=_cmd_gan_train)

    p = subs.add_parser("partition-inspect", help="draw and describe a client partition")
    _common_flags(p)
    p.set_defaults(func=_cmd_partition_inspect)

    p = subs.add_parser("show-config", help="print the normalized config and its hash")
    _common_flags(p)
    p.set_defaults(func=_cmd_show_config)
    return parser


def _cmd_show_config(args) -> int:
    cfg = _load_config(args)
    print(dump_config(cfg), end="")
    print(f"# hash = {config_hash(cfg)}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FedsimError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("field", "path", "layer"):
            value = getattr(exc, attr, "")
            if value:
                payload[attr] = value
        print(f"FEDSIM_ERROR {json.dumps(payload, sort_keys=True)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
