"""Experiment orchestration: reference runs, ensembles, and named presets.

A reference run integrates the convection equations from a random start and
persists truth snapshots plus coarse observation streams.  An ensemble run
replays those observations through nudging for many members, each from its
own random initial field, and aggregates skill.  Presets chain the two into
the standard parameter studies (nudging-strength search, noise / cadence /
coarseness sweeps, double-noise stacking, temperature relevance).

Every run directory carries a manifest.json describing the configuration,
the files written, and per-member completion, which is enough to re-run any
single member in isolation.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import ExitStack
from pathlib import Path
from typing import Sequence

import numpy as np

from .assimilation import ObservationGrid, run_downscaling
from .config import ExperimentConfig, parse_config_text, write_config
from .errors import (ConfigurationError, MissingInputError,
                     NumericalBlowupError)
from .grid import CENTER, XFACE, YFACE, FieldSet, ScalarField, StaggeredGrid
from .metrics import (SkillRecorder, SkillSeries, aes, expected_l2_error,
                      rrmse, write_skill_series_csv)
from .observations import (MemberStream, ObservationStreamWriter,
                           read_observation_stream, subsample)
from .snapshots import read_snapshot, write_snapshot
from .solver import PoissonSolver, advance, project

_log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# pointwise uniform supports of the random initial state
THETA_INIT_HALF_WIDTH = 0.2
VELOCITY_INIT_HALF_WIDTH = 0.1


def initial_random_fields(grid: StaggeredGrid, seed: int,
                          spawn_key: tuple = ()) -> FieldSet:
    """Random start: theta ~ U(-0.2, 0.2), u and v ~ U(-0.1, 0.1).

    The velocity is projected onto the divergence-free space so time
    stepping starts from an admissible state.  spawn_key isolates member
    streams drawn from one base seed.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(spawn_key))
    rng = np.random.default_rng(ss)
    theta = rng.uniform(-THETA_INIT_HALF_WIDTH, THETA_INIT_HALF_WIDTH,
                        grid.shape(CENTER))
    u = rng.uniform(-VELOCITY_INIT_HALF_WIDTH, VELOCITY_INIT_HALF_WIDTH,
                    grid.shape(XFACE))
    v = rng.uniform(-VELOCITY_INIT_HALF_WIDTH, VELOCITY_INIT_HALF_WIDTH,
                    grid.shape(YFACE))
    v[0, :] = 0.0
    v[-1, :] = 0.0
    fs = FieldSet.from_arrays(grid, u=u, v=v, theta=theta,
                              pressure=np.zeros(grid.shape(CENTER)),
                              time=0.0)
    return project(fs, 1.0, PoissonSolver(grid))


# -- manifests --------------------------------------------------------------


def _write_manifest(out_dir: Path, payload: dict) -> None:
    path = Path(out_dir) / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise MissingInputError(f"no manifest at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _file_entry(out_dir: Path, rel: str) -> dict:
    return {"path": rel, "bytes": (Path(out_dir) / rel).stat().st_size}


def verify_manifest(run_dir) -> dict:
    """Check a manifest's hash and that every listed file exists and opens."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = parse_config_text(manifest["config_text"])
    if cfg.config_hash() != manifest["config_hash"]:
        raise ConfigurationError(
            f"manifest at {run_dir} has a stale config hash")
    for entry in manifest["files"]:
        path = run_dir / entry["path"]
        if not path.exists():
            raise MissingInputError(f"manifest lists missing file {path}")
        if path.stat().st_size != entry["bytes"]:
            raise ConfigurationError(f"{path} changed size since the run")
        head = path.open("rb").read(8)
        if path.suffix == ".rbsnap" and head != b"RBSNAP01":
            raise ConfigurationError(f"{path} is not a snapshot")
        if path.suffix == ".rbobs" and not head.startswith(b"RBOBS01"):
            raise ConfigurationError(f"{path} is not an observation stream")
    return manifest


def _snapshot_paths(run_dir: Path, manifest: dict) -> dict[int, Path]:
    return {int(step): Path(run_dir) / rel
            for step, rel in manifest["snapshots"].items()}


# -- reference run -----------------------------------------------------------


def _stream_key(r: int, s: int) -> str:
    return f"r{r}_s{s}"


def run_reference(cfg: ExperimentConfig, out_dir,
                  extra_streams: Sequence[tuple[int, int]] = (),
                  logger=None) -> dict:
    """Integrate the truth trajectory; persist snapshots and streams.

    Beyond the configured (r, s) observation stream, extra_streams lists
    additional (r, s) pairs to record in the same pass, which is how sweep
    presets avoid re-running the reference per arm.  Returns the manifest;
    on blowup a failure manifest is written before the error propagates.
    """
    log = logger or _log
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    (out / "streams").mkdir(exist_ok=True)
    write_config(out / "config.cfg", cfg)

    grid = cfg.grid()
    params = cfg.params()
    stepper = cfg.stepper()
    started = time.perf_counter()

    fs = initial_random_fields(grid, cfg.seed_reference)
    if cfg.spinup_steps:
        log.info("spinning up for %d steps", cfg.spinup_steps)
        fs = advance(fs, stepper, params, cfg.spinup_steps,
                     log_every=max(1, cfg.spinup_steps // 4), logger=log)
        fs = FieldSet(u=fs.u, v=fs.v, theta=fs.theta, pressure=fs.pressure,
                      time=0.0)
        stepper.reset()

    specs = sorted({(cfg.r, cfg.s_factor), *[(int(r), int(s))
                                             for r, s in extra_streams]})
    for r, s in specs:
        if r < 1 or s < 1:
            raise ConfigurationError(f"bad stream request (r={r}, s={s})")
    obs_grids = {r: ObservationGrid(grid, r) for r in {r for r, _ in specs}}
    stream_rel = {_stream_key(r, s): f"streams/obs_{_stream_key(r, s)}.rbobs"
                  for r, s in specs}
    snapshot_rel: dict[int, str] = {}

    def persist(step: int, state: FieldSet) -> None:
        if step % cfg.snapshot_stride == 0:
            rel = f"snapshots/snap_{step:08d}.rbsnap"
            write_snapshot(out / rel, state)
            snapshot_rel[step] = rel
        for (r, s), writer in writers.items():
            if step % s == 0:
                writer.append(subsample(state, obs_grids[r], s_factor=s))

    failure = None
    try:
        with ExitStack() as stack:
            writers = {
                (r, s): stack.enter_context(ObservationStreamWriter(
                    out / stream_rel[_stream_key(r, s)], seed=cfg.seed_noise))
                for r, s in specs}
            persist(0, fs)
            advance(fs, stepper, params, cfg.n_steps, hooks=[persist],
                    log_every=max(1, cfg.n_steps // 10), logger=log)
    except NumericalBlowupError as exc:
        failure = {"step": exc.step_index, "message": str(exc)}

    files = [_file_entry(out, "config.cfg")]
    files += [_file_entry(out, rel) for rel in snapshot_rel.values()]
    files += [_file_entry(out, rel) for rel in stream_rel.values()
              if (out / rel).exists()]
    manifest = {
        "kind": "reference",
        "config_text": cfg.to_text(),
        "config_hash": cfg.config_hash(),
        "n_steps": cfg.n_steps,
        "snapshot_stride": cfg.snapshot_stride,
        "snapshots": {str(k): rel for k, rel in sorted(snapshot_rel.items())},
        "streams": stream_rel,
        "files": files,
        "status": "failed" if failure else "complete",
        "elapsed_seconds": time.perf_counter() - started,
        "created_unix": time.time(),
    }
    if failure:
        manifest["failure"] = failure
    _write_manifest(out, manifest)
    if failure:
        raise NumericalBlowupError(
            f"reference run failed at step {failure['step']}: "
            f"{failure['message']}", step_index=failure["step"])
    log.info("reference complete: %d snapshots, %d streams",
             len(snapshot_rel), len(stream_rel))
    return manifest


def observe_from_snapshots(cfg: ExperimentConfig, ref_dir, out_path,
                           r: int | None = None,
                           s: int | None = None) -> dict:
    """Regenerate a coarse observation stream from stored snapshots.

    Needs the snapshot stride to divide the observation interval; streams at
    finer cadence than the stored snapshots cannot be reconstructed.
    """
    r = cfg.r if r is None else int(r)
    s = cfg.s_factor if s is None else int(s)
    manifest = load_manifest(ref_dir)
    stride = manifest["snapshot_stride"]
    if s % stride != 0:
        raise ConfigurationError(
            f"snapshot stride {stride} does not divide the observation "
            f"interval {s}; rerun the reference with a finer stride")
    paths = _snapshot_paths(Path(ref_dir), manifest)
    og = ObservationGrid(cfg.grid(), r)
    steps = [k for k in sorted(paths) if k % s == 0]
    if not steps:
        raise MissingInputError(f"no snapshots at cadence {s} in {ref_dir}")
    with ObservationStreamWriter(out_path, seed=cfg.seed_noise) as writer:
        for k in steps:
            writer.append(subsample(read_snapshot(paths[k]), og, s_factor=s))
    return {"r": r, "s": s, "n_frames": writer.n_frames,
            "path": str(out_path)}


# -- one ensemble member -----------------------------------------------------


def run_member(cfg: ExperimentConfig, member: int, stream_path,
               truth_paths: dict[int, Path], out_dir,
               persist_trajectory: bool = False, logger=None) -> dict:
    """Downscale one member against a stored stream; returns its record.

    The member draws its own random initial field, perturbs the stream
    frames with its noise counters, runs the configured nudging algorithm,
    and records skill against the truth snapshots.  A blowup is reported in
    the record, not raised.
    """
    log = logger or _log
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    grid = cfg.grid()
    og = ObservationGrid(grid, cfg.r)
    base = read_observation_stream(stream_path)
    frames = MemberStream(base, cfg.noise(), member)
    initial = initial_random_fields(grid, cfg.seed_ic, spawn_key=(member,))

    def truth_lookup(step: int):
        path = truth_paths.get(step)
        return None if path is None else read_snapshot(path, grid=grid)

    recorder = SkillRecorder(truth_lookup, member=str(member))
    hooks = [recorder]
    recorder(0, initial)

    trajectory = None
    stack = ExitStack()
    if persist_trajectory:
        traj_dir = out / f"member_{member:03d}_trajectory"
        traj_dir.mkdir(exist_ok=True)
        writer = stack.enter_context(ObservationStreamWriter(
            traj_dir / "trajectory.rbobs", seed=cfg.seed_noise))
        snap_rel: dict[int, str] = {}

        def persist(step: int, state: FieldSet) -> None:
            if step % cfg.s_factor == 0:
                writer.append(subsample(state, og, s_factor=cfg.s_factor))
            if step % cfg.snapshot_stride == 0:
                rel = f"snap_{step:08d}.rbsnap"
                write_snapshot(traj_dir / rel, state)
                snap_rel[step] = rel

        persist(0, initial)
        hooks.append(persist)
        trajectory = {"dir": traj_dir.name, "stream": "trajectory.rbobs",
                      "snapshots": snap_rel}

    record = {"member": member, "status": "complete", "failure": None,
              "final_snapshot": None, "final_rrmse_theta": None,
              "frames_used": 0, "trajectory": None,
              "seeds": {"ic": {"entropy": cfg.seed_ic,
                               "spawn_key": [member]},
                        "noise": {"entropy": cfg.seed_noise,
                                  "member": member}}}
    try:
        with stack:
            result = run_downscaling(
                initial, frames, og, cfg.strengths(), cfg.params(),
                cfg.stepper(), horizon=cfg.horizon, algorithm=cfg.algorithm,
                s_factor=cfg.s_factor, logger=log, hooks=hooks)
        record["frames_used"] = result.frames_used
        final_rel = f"member_{member:03d}_final.rbsnap"
        write_snapshot(out / final_rel, result.final)
        record["final_snapshot"] = final_rel
        if trajectory is not None:
            trajectory["snapshots"] = {str(k): rel for k, rel
                                       in sorted(trajectory["snapshots"]
                                                 .items())}
            record["trajectory"] = trajectory
    except NumericalBlowupError as exc:
        record["status"] = "blowup"
        record["failure"] = {"step": exc.step_index, "message": str(exc)}
        log.warning("member %d blew up: %s", member, exc)

    series = recorder.to_series()
    csv_rel = f"member_{member:03d}_skill.csv"
    write_skill_series_csv(out / csv_rel, series, run_id=cfg.run_id())
    record["skill_csv"] = csv_rel
    for s in series:
        if s.score == "RRMSE" and s.variable == "theta" and s.values.size:
            record["final_rrmse_theta"] = float(s.values[-1])
    record["elapsed_seconds"] = time.perf_counter() - started
    return record


def _member_task(cfg_text: str, member: int, stream_path: str,
                 truth_paths: dict[int, str], out_dir: str,
                 persist_trajectory: bool) -> dict:
    # process-pool entry point: arguments stay picklable
    cfg = parse_config_text(cfg_text)
    paths = {int(k): Path(v) for k, v in truth_paths.items()}
    return run_member(cfg, member, Path(stream_path), paths, Path(out_dir),
                      persist_trajectory=persist_trajectory)


# -- full ensemble -----------------------------------------------------------


def run_ensemble(cfg: ExperimentConfig, out_dir, stream_path,
                 truth_paths: dict[int, Path], workers: int = 1,
                 persist_member: int | None = None, logger=None) -> dict:
    """Run every member against one stream and aggregate final-time skill.

    Members are independent; with workers > 1 they execute in separate
    processes.  A member blowup is recorded and the rest proceed.  Ensemble
    aggregates (spread, expected squared error, mean-solution skill) are
    computed over the members that completed.
    """
    log = logger or _log
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.cfg", cfg)
    started = time.perf_counter()

    final_step = cfg.n_steps
    if final_step not in truth_paths:
        raise MissingInputError(
            f"no truth snapshot at the final step {final_step}; the "
            f"reference run must cover the ensemble horizon")

    tasks = [(cfg.to_text(), m, str(stream_path),
              {str(k): str(p) for k, p in truth_paths.items()}, str(out),
              persist_member is not None and m == persist_member)
             for m in range(cfg.n_members)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_member_task, *zip(*tasks)))
    else:
        records = [run_member(cfg, m, Path(stream_path), truth_paths, out,
                              persist_trajectory=persist)
                   for (_, m, _, _, _, persist) in tasks]
    records.sort(key=lambda r: r["member"])
    for rec in records:
        log.info("member %d: %s (final theta RRMSE %s)", rec["member"],
                 rec["status"], rec["final_rrmse_theta"])

    completed = [r for r in records if r["status"] == "complete"]
    aggregate = {}
    series: list[SkillSeries] = []
    if completed:
        truth = read_snapshot(truth_paths[final_step], grid=cfg.grid())
        finals = {r["member"]: read_snapshot(out / r["final_snapshot"],
                                             grid=cfg.grid())
                  for r in completed}
        members_sorted = [finals[m] for m in sorted(finals)]
        final_time = truth.time
        for var in ("u", "v", "theta"):
            fields = [getattr(fs, var) for fs in members_sorted]
            truth_field = getattr(truth, var)
            lam = expected_l2_error(fields, truth_field)
            aggregate.setdefault("expected_l2", {})[var] = lam
            series.append(SkillSeries(
                score="expected_l2", variable=var, member="ensemble",
                times=[final_time], values=[lam]))
            member_rrmse = [rrmse(f, truth_field) for f in fields]
            aggregate.setdefault("final_rrmse", {})[var] = member_rrmse
            if len(fields) >= 2:
                spread = aes(fields)
                aggregate.setdefault("aes", {})[var] = spread
                series.append(SkillSeries(
                    score="AES", variable=var, member="ensemble",
                    times=[final_time], values=[spread]))
                mean_skill = _prefix_mean_rrmse(fields, truth_field, var)
                aggregate.setdefault("mean_solution_rrmse", {})[var] = \
                    mean_skill.values.tolist()
                series.append(mean_skill)
        write_skill_series_csv(out / "ensemble_summary.csv", series,
                               run_id=cfg.run_id())

    files = [_file_entry(out, "config.cfg")]
    for rec in records:
        files.append(_file_entry(out, rec["skill_csv"]))
        if rec["final_snapshot"]:
            files.append(_file_entry(out, rec["final_snapshot"]))
    if completed:
        files.append(_file_entry(out, "ensemble_summary.csv"))
    manifest = {
        "kind": "ensemble",
        "config_text": cfg.to_text(),
        "config_hash": cfg.config_hash(),
        "algorithm": cfg.algorithm,
        "stream_path": str(stream_path),
        "members": records,
        "aggregate": aggregate,
        "files": files,
        "status": "complete" if completed else "failed",
        "elapsed_seconds": time.perf_counter() - started,
        "created_unix": time.time(),
    }
    _write_manifest(out, manifest)
    return manifest


def _prefix_mean_rrmse(fields: Sequence[ScalarField], truth: ScalarField,
                       variable: str) -> SkillSeries:
    from .stats import mean_solution_skill

    sizes = list(range(1, len(fields) + 1))
    return mean_solution_skill(fields, truth, sizes, variable)


def run_ensemble_downscaling(cfg: ExperimentConfig, ref_dir, out_dir,
                             workers: int = 1,
                             persist_member: int | None = None,
                             logger=None) -> dict:
    """Ensemble run wired to a reference directory's stream and snapshots."""
    ref_dir = Path(ref_dir)
    manifest = load_manifest(ref_dir)
    key = _stream_key(cfg.r, cfg.s_factor)
    if key not in manifest["streams"]:
        raise MissingInputError(
            f"reference at {ref_dir} has no {key} stream; available: "
            f"{sorted(manifest['streams'])}")
    stream_path = ref_dir / manifest["streams"][key]
    if not stream_path.exists():
        raise MissingInputError(f"stream file {stream_path} is missing")
    truth_paths = _snapshot_paths(ref_dir, manifest)
    return run_ensemble(cfg, out_dir, stream_path, truth_paths,
                        workers=workers, persist_member=persist_member,
                        logger=logger)


# -- fits and presets --------------------------------------------------------


def fit_log_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x); needs >= 3 points."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 3:
        raise ConfigurationError(
            f"need at least 3 points for a slope fit, got {xs.size}")
    if xs.shape != ys.shape or np.any(xs <= 0) or np.any(ys <= 0):
        raise ConfigurationError("slope fit needs positive x and y values")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


def _write_summary(out: Path, payload: dict) -> None:
    with open(Path(out) / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _tuned_mu(cfg: ExperimentConfig, algorithm: str,
              mu_overrides: dict[str, float] | None) -> float:
    """Nudging strength for an algorithm arm of a two-algorithm preset."""
    from .config import desk_profile

    if mu_overrides and algorithm in mu_overrides:
        return float(mu_overrides[algorithm])
    if algorithm == cfg.algorithm:
        return cfg.mu_velocity
    return desk_profile(algorithm).mu_velocity


def preset_mu_search(cfg: ExperimentConfig, out_dir, workers: int = 1,
                     logger=None,
                     mu_values: Sequence[float] = (1.0, 2.0, 5.0, 10.0,
                                                   20.0)) -> dict:
    """Grid search of the nudging strength minimizing final-time RRMSE."""
    log = logger or _log
    out = Path(out_dir)
    cfg = cfg.replace(preset="mu_search", output_dir=str(out))
    mu_values = sorted(float(m) for m in mu_values)
    run_reference(cfg, out / "reference", logger=log)
    medians = []
    for mu in mu_values:
        arm = cfg.replace(mu_velocity=mu, mu_temperature=mu)
        arm_dir = out / f"mu{mu:g}"
        manifest = run_ensemble_downscaling(arm, out / "reference", arm_dir,
                                            workers=workers, logger=log)
        finals = manifest["aggregate"].get("final_rrmse", {}).get("theta")
        if not finals:
            raise NumericalBlowupError(
                f"every member blew up at mu={mu:g}")
        medians.append(float(np.median(finals)))
        log.info("mu=%g -> median final theta RRMSE %.3e", mu, medians[-1])
    best = mu_values[int(np.argmin(medians))]
    series = [SkillSeries(score="RRMSE", variable="theta", member="ensemble",
                          times=mu_values, values=medians)]
    write_skill_series_csv(out / "mu_search.csv", series,
                           run_id=cfg.run_id())
    summary = {"preset": "mu_search", "mu_values": list(mu_values),
               "median_final_rrmse": medians, "best_mu": best}
    _write_summary(out, summary)
    return summary


def preset_noise_sweep(cfg: ExperimentConfig, out_dir, workers: int = 1,
                       logger=None,
                       sigma_values: Sequence[float] = (0.025, 0.05, 0.1,
                                                        0.2),
                       algorithms: Sequence[str] = ("cda", "dda"),
                       mu_overrides: dict[str, float] | None = None) -> dict:
    """Expected squared error against noise level, with log-log slopes.

    Temperature and velocity noise scale together, preserving the nominal
    2:1 ratio.  One reference serves every arm; each algorithm uses its own
    tuned nudging strength.
    """
    log = logger or _log
    out = Path(out_dir)
    cfg = cfg.replace(preset="noise_sweep", output_dir=str(out))
    sigma_values = sorted(float(s) for s in sigma_values)
    if any(s <= 0 for s in sigma_values):
        raise ConfigurationError("noise sweep values must be positive")
    run_reference(cfg, out / "reference", logger=log)
    lambdas: dict[str, list[float]] = {}
    series = []
    for algorithm in algorithms:
        mu = _tuned_mu(cfg, algorithm, mu_overrides)
        values = []
        for sigma in sigma_values:
            arm = cfg.replace(algorithm=algorithm, mu_velocity=mu,
                              mu_temperature=mu, sigma_theta=sigma,
                              sigma_u=sigma / 2.0)
            arm_dir = out / f"{algorithm}_sigma{sigma:g}"
            manifest = run_ensemble_downscaling(arm, out / "reference",
                                                arm_dir, workers=workers,
                                                logger=log)
            lam = manifest["aggregate"]["expected_l2"]["theta"]
            values.append(lam)
            log.info("%s sigma=%g -> lambda %.3e", algorithm, sigma, lam)
        lambdas[algorithm] = values
        series.append(SkillSeries(score="expected_l2", variable="theta",
                                  member=f"ensemble-{algorithm}",
                                  times=sigma_values, values=values))
    write_skill_series_csv(out / "noise_sweep.csv", series,
                           run_id=cfg.run_id())
    slopes = {alg: fit_log_slope(sigma_values, vals)
              for alg, vals in lambdas.items()}
    summary = {"preset": "noise_sweep", "sigma_values": list(sigma_values),
               "lambda": lambdas, "slopes": slopes}
    _write_summary(out, summary)
    return summary


def preset_s_sweep(cfg: ExperimentConfig, out_dir, workers: int = 1,
                   logger=None,
                   s_values: Sequence[int] = (1, 2, 5, 10, 25, 50)) -> dict:
    """Expected squared error against observation interval (discrete mode).

    Records where the error attains its minimum over the sweep.
    """
    log = logger or _log
    out = Path(out_dir)
    cfg = cfg.replace(preset="s_sweep", output_dir=str(out))
    s_values = sorted(int(s) for s in s_values)
    if any(s < 1 for s in s_values):
        raise ConfigurationError("observation intervals must be >= 1")
    run_reference(cfg, out / "reference",
                  extra_streams=[(cfg.r, s) for s in s_values], logger=log)
    values = []
    for s in s_values:
        arm = cfg.replace(algorithm="dda", s_factor=s)
        arm_dir = out / f"dda_s{s}"
        manifest = run_ensemble_downscaling(arm, out / "reference", arm_dir,
                                            workers=workers, logger=log)
        lam = manifest["aggregate"]["expected_l2"]["theta"]
        values.append(lam)
        log.info("s=%d -> lambda %.3e", s, lam)
    series = [SkillSeries(score="expected_l2", variable="theta",
                          member="ensemble-dda",
                          times=[float(s) for s in s_values], values=values)]
    write_skill_series_csv(out / "s_sweep.csv", series, run_id=cfg.run_id())
    min_s = s_values[int(np.argmin(values))]
    summary = {"preset": "s_sweep", "s_values": list(s_values),
               "lambda": values, "min_lambda_s": min_s}
    _write_summary(out, summary)
    return summary


def preset_r_sweep(cfg: ExperimentConfig, out_dir, workers: int = 1,
                   logger=None,
                   r_values: Sequence[int] = (2, 4, 8, 16),
                   algorithms: Sequence[str] = ("cda", "dda"),
                   mu_overrides: dict[str, float] | None = None,
                   sigma_theta: float | None = 0.01) -> dict:
    """Expected squared error against observation coarseness, with slopes.

    By default the sweep runs at observation noise well below the nominal
    level (keeping the 2:1 temperature:velocity ratio).  The response to
    noise is nearly independent of the observation spacing, so at nominal
    noise it buries the coarseness response this sweep is meant to expose.
    Pass sigma_theta=None to keep the config's own noise level.
    """
    log = logger or _log
    out = Path(out_dir)
    if sigma_theta is not None:
        cfg = cfg.replace(sigma_theta=float(sigma_theta),
                          sigma_u=float(sigma_theta) / 2.0)
    cfg = cfg.replace(preset="r_sweep", output_dir=str(out))
    r_values = sorted(int(r) for r in r_values)
    if any(r < 1 for r in r_values):
        raise ConfigurationError("coarseness factors must be >= 1")
    run_reference(cfg, out / "reference",
                  extra_streams=[(r, cfg.s_factor) for r in r_values],
                  logger=log)
    lambdas: dict[str, list[float]] = {}
    series = []
    for algorithm in algorithms:
        mu = _tuned_mu(cfg, algorithm, mu_overrides)
        values = []
        for r in r_values:
            arm = cfg.replace(algorithm=algorithm, mu_velocity=mu,
                              mu_temperature=mu, r=r)
            arm_dir = out / f"{algorithm}_r{r}"
            manifest = run_ensemble_downscaling(arm, out / "reference",
                                                arm_dir, workers=workers,
                                                logger=log)
            lam = manifest["aggregate"]["expected_l2"]["theta"]
            values.append(lam)
            log.info("%s r=%d -> lambda %.3e", algorithm, r, lam)
        lambdas[algorithm] = values
        series.append(SkillSeries(score="expected_l2", variable="theta",
                                  member=f"ensemble-{algorithm}",
                                  times=[float(r) for r in r_values],
                                  values=values))
    write_skill_series_csv(out / "r_sweep.csv", series, run_id=cfg.run_id())
    slopes = {alg: fit_log_slope([float(r) for r in r_values], vals)
              for alg, vals in lambdas.items()}
    summary = {"preset": "r_sweep", "r_values": list(r_values),
               "lambda": lambdas, "slopes": slopes}
    _write_summary(out, summary)
    return summary


# seed displacement between the two noise applications of double_noise
_STAGE2_SEED_SHIFT = 101


def preset_double_noise(cfg: ExperimentConfig, out_dir, workers: int = 1,
                        logger=None) -> dict:
    """Noise applied twice: downscale, observe the result, downscale again.

    Stage 1 is the nominal ensemble against the true reference.  Stage 2
    treats one stage-1 downscaled trajectory as the observed system,
    perturbs it with fresh noise, and downscales again; skill is still
    measured against the original truth.
    """
    log = logger or _log
    out = Path(out_dir)
    cfg = cfg.replace(preset="double_noise", output_dir=str(out))
    run_reference(cfg, out / "reference", logger=log)
    ref_manifest = load_manifest(out / "reference")
    truth_paths = _snapshot_paths(out / "reference", ref_manifest)

    stage1 = run_ensemble_downscaling(cfg, out / "reference", out / "stage1",
                                      workers=workers, persist_member=0,
                                      logger=log)
    donors = [r for r in stage1["members"]
              if r["status"] == "complete" and r["trajectory"]]
    if not donors:
        raise MissingInputError(
            "stage 1 produced no persisted trajectory to re-observe")
    donor = donors[0]
    stream2 = (out / "stage1" / donor["trajectory"]["dir"]
               / donor["trajectory"]["stream"])

    cfg2 = cfg.replace(seed_noise=cfg.seed_noise + _STAGE2_SEED_SHIFT,
                       seed_ic=cfg.seed_ic + _STAGE2_SEED_SHIFT)
    stage2 = run_ensemble(cfg2, out / "stage2", stream2, truth_paths,
                          workers=workers, logger=log)

    def final_rrmse(manifest):
        return manifest["aggregate"].get("final_rrmse", {}).get("theta", [])

    def mean_solution_final(manifest):
        vals = manifest["aggregate"].get("mean_solution_rrmse",
                                         {}).get("theta")
        return vals[-1] if vals else None

    r1, r2 = final_rrmse(stage1), final_rrmse(stage2)
    series = []
    for label, vals in (("stage1", r1), ("stage2", r2)):
        if vals:
            series.append(SkillSeries(
                score="RRMSE", variable="theta", member=label,
                times=np.arange(1.0, len(vals) + 1.0),
                values=np.asarray(vals)))
    write_skill_series_csv(out / "double_noise.csv", series,
                           run_id=cfg.run_id())
    summary = {
        "preset": "double_noise",
        "stage1_median_rrmse": float(np.median(r1)) if r1 else None,
        "stage2_median_rrmse": float(np.median(r2)) if r2 else None,
        "stage1_mean_solution_rrmse": mean_solution_final(stage1),
        "stage2_mean_solution_rrmse": mean_solution_final(stage2),
        "stage2_min_member_rrmse": float(np.min(r2)) if r2 else None,
        "donor_member": donor["member"],
    }
    _write_summary(out, summary)
    return summary


def preset_temperature_relevance(cfg: ExperimentConfig, out_dir,
                                 workers: int = 1, logger=None,
                                 sigma_levels: Sequence[float] = (0.05, 0.1,
                                                                  0.15)
                                 ) -> dict:
    """Temperature-observation arms: three noise levels plus none at all.

    The no-temperature arm keeps velocity nudging but zeroes the temperature
    relaxation, so temperature is constrained only through the flow.
    """
    log = logger or _log
    out = Path(out_dir)
    cfg = cfg.replace(preset="temperature_relevance", output_dir=str(out))
    run_reference(cfg, out / "reference", logger=log)
    arms = [(f"sigma{s:g}", cfg.replace(sigma_theta=float(s)))
            for s in sigma_levels]
    arms.append(("no_temperature", cfg.replace(mu_temperature=0.0)))
    box: dict[str, list[float]] = {}
    variances = {}
    series = []
    for name, arm_cfg in arms:
        manifest = run_ensemble_downscaling(arm_cfg, out / "reference",
                                            out / name, workers=workers,
                                            logger=log)
        finals = manifest["aggregate"].get("final_rrmse", {}).get("theta",
                                                                  [])
        box[name] = finals
        variances[name] = float(np.var(finals, ddof=1)) if len(finals) > 1 \
            else None
        if finals:
            series.append(SkillSeries(
                score="RRMSE", variable="theta", member=name,
                times=np.arange(1.0, len(finals) + 1.0), values=finals))
        log.info("arm %s: median final RRMSE %.3e", name,
                 float(np.median(finals)) if finals else float("nan"))
    write_skill_series_csv(out / "temperature_relevance.csv", series,
                           run_id=cfg.run_id())
    defined = {k: v for k, v in variances.items() if v is not None}
    summary = {
        "preset": "temperature_relevance",
        "arms": sorted(box),
        "final_rrmse": box,
        "variances": variances,
        "largest_variance_arm": max(defined, key=defined.get)
        if defined else None,
    }
    _write_summary(out, summary)
    return summary


PRESETS = {
    "mu_search": preset_mu_search,
    "noise_sweep": preset_noise_sweep,
    "s_sweep": preset_s_sweep,
    "r_sweep": preset_r_sweep,
    "double_noise": preset_double_noise,
    "temperature_relevance": preset_temperature_relevance,
}


def run_preset(name: str, cfg: ExperimentConfig, out_dir, workers: int = 1,
               logger=None, **kwargs) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name](cfg, out_dir, workers=workers, logger=logger,
                         **kwargs)
