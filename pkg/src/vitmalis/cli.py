"""Command line entry points.

Exit codes: 0 success, 2 configuration error (bad arguments, missing
artifacts), 3 data error (unreadable or malformed input files).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, netsim
from .client import ABLATIONS, POLICY_NAMES, PolicyConfig
from .harness import ArtifactsError
from .netsim import TraceParseError
from .scene import PRESETS, load_preset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _cmd_profile(args) -> int:
    presets = args.presets.split(",")
    for p in presets:
        load_preset(p)
    harness.profile_and_train(
        presets,
        seed=args.seed,
        frames_per_preset=args.frames,
        epochs=args.epochs,
        out_dir=args.out,
    )
    print(f"artifacts written to {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    policy = PolicyConfig(name=args.policy, ablation=args.ablation)
    trace = harness.resolve_trace(args.trace)
    bundle = None
    if policy.name == "ViTMAlis":
        if args.artifacts is None:
            raise CliError("--artifacts DIR is required for the ViTMAlis policy", EXIT_CONFIG)
        artifacts = harness.load_artifacts(args.artifacts)
        bundle = (
            harness.ablation_bundle(artifacts)
            if policy.ablation == "no_mlps"
            else artifacts.bundle
        )
    report, log = harness.run_experiment(
        policy,
        args.preset,
        trace,
        args.seed,
        bundle=bundle,
        duration_frames=args.duration,
        verbose_decisions=args.verbose_decisions,
    )
    if args.out:
        harness.write_run_logs(log, report, args.out)
        print(f"logs written to {args.out}")
    print(
        f"{report.policy} on {report.scene_id}/{report.trace_label} seed {report.seed}: "
        f"rendering F1 {report.rendering_f1:.3f}, median E2E {report.e2e_p50:.1f} ms, "
        f"inference F1 {report.inference_f1_mean:.3f}, "
        f"median interval {report.interval_p50:.1f} frames"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read sweep config: {exc}", EXIT_DATA)
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed sweep config: {exc}", EXIT_DATA)
    try:
        policies = [
            PolicyConfig(name=p["name"], ablation=p.get("ablation")) for p in cfg["policies"]
        ]
        presets = cfg["presets"]
        trace_specs = cfg["traces"]
        seeds = [int(s) for s in cfg["seeds"]]
        duration = int(cfg.get("duration_frames", 1800))
        out_dir = cfg.get("out", args.out)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"sweep config missing/invalid field: {exc}", EXIT_CONFIG)
    artifacts = None
    if any(p.name == "ViTMAlis" for p in policies):
        art_dir = cfg.get("artifacts")
        if art_dir is None:
            raise CliError("sweep config needs 'artifacts' for ViTMAlis policies", EXIT_CONFIG)
        artifacts = harness.load_artifacts(art_dir)
    traces = [harness.resolve_trace(t) for t in trace_specs]
    report = harness.run_sweep(
        policies, presets, traces, seeds, artifacts=artifacts, duration_frames=duration
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep_runs.csv"), "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        with open(os.path.join(out_dir, "sweep_aggregates.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        print(f"sweep results written to {out_dir}")
    print(report.to_json())
    return EXIT_OK


def _cmd_compare_estimators(args) -> int:
    artifacts = harness.load_artifacts(args.data)
    if artifacts.dataset is None:
        raise CliError(f"no dataset.npz found under {args.data}", EXIT_DATA)
    comparison = harness.compare_estimators(artifacts.dataset, seed=args.seed)
    print(comparison.to_text())
    return EXIT_OK


def _cmd_gen_trace(args) -> int:
    trace = netsim.generate_trace(args.kind, args.seed, duration_s=args.duration)
    if args.out:
        netsim.save_trace(trace, args.out)
        print(f"trace written to {args.out}")
    else:
        mean = sum(s[0] for s in trace.seconds) / trace.duration_s
        print(f"{trace.label} trace, {trace.duration_s}s, mean uplink {mean:.1f} Mbps")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitmalis", description="Mixed-resolution offloading simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="profile the oracles and train estimator models")
    p.add_argument("--presets", default=",".join(sorted(PRESETS)), help="comma-separated scene ids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=1800, help="profiling frames per preset")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--out", required=True, help="artifact output directory")
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("run", help="run one policy on one scene/trace pair")
    p.add_argument("--policy", required=True, choices=POLICY_NAMES)
    p.add_argument("--ablation", choices=ABLATIONS, default=None)
    p.add_argument("--preset", required=True, help="scene id or preset file")
    p.add_argument("--trace", required=True, help="'4g:SEED', '5g:SEED' or a trace CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=int, default=None, help="override scene frames")
    p.add_argument("--artifacts", default=None, help="trained artifact dir (ViTMAlis)")
    p.add_argument("--verbose-decisions", action="store_true")
    p.add_argument("--out", default=None, help="write per-run logs here")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a policy comparison sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("compare-estimators", help="score MLP vs baselines on held-out data")
    p.add_argument("--data", required=True, help="artifact dir containing dataset.npz")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_compare_estimators)

    p = sub.add_parser("gen-trace", help="generate a bundled synthetic network trace")
    p.add_argument("--kind", required=True, choices=("4g", "5g"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=int, default=300)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_gen_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ArtifactsError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
