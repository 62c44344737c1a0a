"""Command-line front end.

Subcommands mirror the pipeline stages:

    simulate    integrate a reference run and persist snapshots + streams
    observe     regenerate a coarse observation stream from snapshots
    downscale   run a single ensemble member against a reference
    ensemble    run every member and aggregate skill
    analyze     post-process stored CSVs and manifests (no simulation)
    preset      run a named parameter study end to end

Exit codes: 0 success, 2 configuration error, 3 numerical blowup,
4 missing inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import PROFILES, ExperimentConfig, parse_config_text, read_config
from .errors import (ConfigurationError, MissingInputError,
                     NumericalBlowupError)
from .experiment import (PRESETS, fit_log_slope, load_manifest,
                         observe_from_snapshots, run_ensemble_downscaling,
                         run_member, run_preset, run_reference,
                         verify_manifest, _snapshot_paths, _stream_key)
from .metrics import read_skill_series_csv

_log = logging.getLogger("rbnudge")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="config file of key=value lines; unset keys "
                             "fall back to the base profile")
    parser.add_argument("--profile", choices=sorted(PROFILES),
                        help="base profile supplying defaults "
                             "(default: desk)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="master seed; reference, noise, and "
                             "initial-condition seeds become N, N+1, N+2")
    parser.add_argument("--out", metavar="DIR", required=True,
                        help="output directory or file")
    parser.add_argument("--workers", type=int, metavar="N",
                        default=os.cpu_count() or 1,
                        help="parallel member processes "
                             "(default: available cores)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbnudge",
        description="Nudging-based downscaling of coarse observations of "
                    "two-dimensional Rayleigh-Benard convection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a reference simulation")
    _add_common(p)

    p = sub.add_parser("observe", help="rebuild an observation stream "
                                       "from stored snapshots")
    p.add_argument("reference", help="reference run directory")
    p.add_argument("--r", type=int, help="coarseness factor override")
    p.add_argument("--s", type=int, help="observation interval override")
    _add_common(p)

    p = sub.add_parser("downscale", help="run one ensemble member")
    p.add_argument("reference", help="reference run directory")
    p.add_argument("--member", type=int, default=0,
                   help="member index (default 0)")
    _add_common(p)

    p = sub.add_parser("ensemble", help="run the full member ensemble")
    p.add_argument("reference", help="reference run directory")
    _add_common(p)

    p = sub.add_parser("analyze", help="post-process a finished run "
                                       "directory")
    p.add_argument("run_dir", help="reference, ensemble, or preset "
                                   "directory")
    p.add_argument("--out", metavar="PATH",
                   help="where to write analysis.json "
                        "(default: inside run_dir)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for resampling statistics")

    p = sub.add_parser("preset", help="run a named parameter study")
    p.add_argument("name", choices=sorted(PRESETS))
    _add_common(p)

    return parser


def _resolve_config(args, base: ExperimentConfig | None = None
                    ) -> ExperimentConfig:
    """Layer profile, config file, and master seed into one configuration.

    An explicit --profile replaces any inherited base (such as a reference
    run's stored config); a config file then overrides individual keys.
    """
    if base is None or args.profile:
        base = PROFILES[args.profile or "desk"]()
    cfg = read_config(args.config, base=base) if args.config else base
    if args.seed is not None:
        cfg = cfg.replace(seed_reference=args.seed,
                          seed_noise=args.seed + 1,
                          seed_ic=args.seed + 2)
    return cfg


def _reference_base(ref_dir) -> ExperimentConfig:
    return parse_config_text(load_manifest(ref_dir)["config_text"])


def _cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    manifest = run_reference(cfg, args.out, logger=_log)
    print(f"reference complete: {len(manifest['snapshots'])} snapshots, "
          f"{len(manifest['streams'])} streams in {args.out}")
    return 0


def _cmd_observe(args) -> int:
    cfg = _resolve_config(args, base=_reference_base(args.reference))
    info = observe_from_snapshots(cfg, args.reference, args.out,
                                  r=args.r, s=args.s)
    print(f"wrote {info['n_frames']} frames (r={info['r']}, "
          f"s={info['s']}) to {args.out}")
    return 0


def _cmd_downscale(args) -> int:
    cfg = _resolve_config(args, base=_reference_base(args.reference))
    ref_dir = Path(args.reference)
    manifest = load_manifest(ref_dir)
    key = _stream_key(cfg.r, cfg.s_factor)
    if key not in manifest["streams"]:
        raise MissingInputError(
            f"reference has no {key} stream; available: "
            f"{sorted(manifest['streams'])}")
    stream = ref_dir / manifest["streams"][key]
    truth = _snapshot_paths(ref_dir, manifest)
    record = run_member(cfg, args.member, stream, truth, args.out,
                        logger=_log)
    print(f"member {args.member}: {record['status']}, final theta RRMSE "
          f"{record['final_rrmse_theta']}")
    if record["status"] != "complete":
        raise NumericalBlowupError(
            f"member {args.member} blew up at step "
            f"{record['failure']['step']}",
            step_index=record["failure"]["step"])
    return 0


def _cmd_ensemble(args) -> int:
    cfg = _resolve_config(args, base=_reference_base(args.reference))
    manifest = run_ensemble_downscaling(cfg, args.reference, args.out,
                                        workers=args.workers, logger=_log)
    done = sum(1 for r in manifest["members"] if r["status"] == "complete")
    print(f"ensemble: {done}/{len(manifest['members'])} members complete")
    if manifest["status"] != "complete":
        raise NumericalBlowupError("every ensemble member blew up")
    return 0


def _cmd_preset(args) -> int:
    cfg = _resolve_config(args)
    summary = run_preset(args.name, cfg, args.out, workers=args.workers,
                         logger=_log)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


# -- analyze -----------------------------------------------------------------


def _box_stats(values) -> dict:
    arr = np.asarray(sorted(values), dtype=np.float64)
    return {
        "n": int(arr.size),
        "min": float(arr.min()),
        "q25": float(np.percentile(arr, 25)),
        "median": float(np.percentile(arr, 50)),
        "q75": float(np.percentile(arr, 75)),
        "max": float(arr.max()),
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
    }


def _analyze_ensemble(run_dir: Path, manifest: dict, seed: int) -> dict:
    """Final-time skill distributions recomputed from the member CSVs."""
    from .stats import bootstrap_skill

    finals: dict[str, list[float]] = {"u": [], "v": [], "theta": []}
    for rec in manifest["members"]:
        if rec["status"] != "complete":
            continue
        for series in read_skill_series_csv(run_dir / rec["skill_csv"]):
            if series.score == "RRMSE" and series.values.size:
                finals[series.variable].append(float(series.values[-1]))
    payload = {"kind": "ensemble", "status": manifest["status"],
               "members_complete": len(finals["theta"]),
               "members_total": len(manifest["members"]),
               "final_rrmse": {var: _box_stats(vals)
                               for var, vals in finals.items() if vals},
               "aggregate": manifest.get("aggregate", {})}
    theta = finals["theta"]
    if len(theta) >= 4:
        boot = bootstrap_skill(theta, subset_size=len(theta) // 2,
                               n_resamples=500, seed=seed)
        payload["bootstrap_theta"] = {
            "subset_size": boot.subset_size, "mean": boot.mean,
            "std": boot.std, "q25": boot.q25, "q75": boot.q75}
    return payload


def _analyze_preset(run_dir: Path, summary: dict) -> dict:
    """Re-fit sweep slopes from the persisted CSV, not the summary."""
    payload = {"kind": "preset", "summary": summary}
    csv_path = run_dir / f"{summary['preset']}.csv"
    if csv_path.exists():
        fits = {}
        for series in read_skill_series_csv(csv_path):
            if not series.member.startswith("ensemble"):
                continue
            try:
                fits[series.member] = fit_log_slope(series.times,
                                                    series.values)
            except ConfigurationError:
                continue
        if fits:
            payload["fits"] = fits
    return payload


def _cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    if (run_dir / "manifest.json").exists():
        manifest = verify_manifest(run_dir)
        if manifest["kind"] == "reference":
            payload = {"kind": "reference", "status": manifest["status"],
                       "n_snapshots": len(manifest["snapshots"]),
                       "streams": sorted(manifest["streams"]),
                       "elapsed_seconds": manifest["elapsed_seconds"]}
        else:
            payload = _analyze_ensemble(run_dir, manifest, args.seed)
    elif (run_dir / "summary.json").exists():
        summary = json.loads((run_dir / "summary.json").read_text())
        payload = _analyze_preset(run_dir, summary)
    else:
        raise MissingInputError(
            f"{run_dir} holds neither a manifest nor a preset summary")
    out = Path(args.out) if args.out else run_dir / "analysis.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps(payload, indent=1, sort_keys=True))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "observe": _cmd_observe,
    "downscale": _cmd_downscale,
    "ensemble": _cmd_ensemble,
    "analyze": _cmd_analyze,
    "preset": _cmd_preset,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalBlowupError as exc:
        print(f"numerical blowup: {exc}", file=sys.stderr)
        return 3
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 4


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
