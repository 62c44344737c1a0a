"""Experiment configuration: typed record, flat-file format, profiles.

The on-disk format is plain UTF-8 ``section.key=value`` lines with ``#``
comments, so configs stay readable and diffable without any parser beyond
string splitting.  Floats serialize with repr() and therefore round-trip
bit-exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from .assimilation import ALGORITHMS, NudgingStrengths, ObservationGrid
from .errors import ConfigurationError
from .grid import StaggeredGrid
from .observations import NoiseSpec
from .solver import PhysicalParams, TimeStepper

# dotted file key -> (attribute, type); also fixes the canonical line order
_SCHEMA = (
    ("physics.ra", "ra", float),
    ("physics.pr", "pr", float),
    ("grid.n_x", "n_x", int),
    ("grid.n_y", "n_y", int),
    ("grid.l_x", "l_x", float),
    ("stepping.dt", "dt", float),
    ("stepping.horizon", "horizon", float),
    ("stepping.spinup", "spinup", float),
    ("stepping.snapshot_stride", "snapshot_stride", int),
    ("nudging.algorithm", "algorithm", str),
    ("nudging.mu_velocity", "mu_velocity", float),
    ("nudging.mu_temperature", "mu_temperature", float),
    ("observation.r", "r", int),
    ("observation.s", "s_factor", int),
    ("observation.sigma_theta", "sigma_theta", float),
    ("observation.sigma_u", "sigma_u", float),
    ("observation.n_members", "n_members", int),
    ("seeds.reference", "seed_reference", int),
    ("seeds.noise", "seed_noise", int),
    ("seeds.ic", "seed_ic", int),
    ("output.dir", "output_dir", str),
    ("experiment.preset", "preset", str),
)

# output.dir is location, not identity: two runs of the same experiment into
# different directories must hash identically.
_HASH_EXCLUDED = ("output.dir",)


def _steps_for(span: float, dt: float, what: str) -> int:
    n = int(round(span / dt))
    if abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ConfigurationError(
            f"{what} {span} is not an integer number of steps of dt={dt}")
    return n


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one downscaling experiment.

    Covers the physics, discretization, nudging algorithm and strengths,
    observation coarseness and noise, ensemble size, and seeding.  Instances
    are immutable; derive variants with .replace().
    """

    ra: float
    pr: float
    n_x: int
    n_y: int
    l_x: float
    dt: float
    horizon: float
    spinup: float
    snapshot_stride: int
    algorithm: str
    mu_velocity: float
    mu_temperature: float
    r: int
    s_factor: int
    sigma_theta: float
    sigma_u: float
    n_members: int
    seed_reference: int
    seed_noise: int
    seed_ic: int
    output_dir: str = ""
    preset: str = ""

    def __post_init__(self):
        for key, attr, typ in _SCHEMA:
            value = getattr(self, attr)
            if isinstance(value, bool) or (typ is int
                                           and not float(value).is_integer()):
                raise ConfigurationError(
                    f"{key} must be {typ.__name__}, got {value!r}")
            object.__setattr__(self, attr, typ(value))
        if self.ra <= 0 or self.pr <= 0:
            raise ConfigurationError("ra and pr must be positive")
        if self.l_x <= 0:
            raise ConfigurationError("l_x must be positive")
        if self.n_x < 2 or self.n_y < 2:
            raise ConfigurationError("grid must be at least 2x2")
        if self.dt <= 0 or self.horizon <= 0:
            raise ConfigurationError("dt and horizon must be positive")
        if self.spinup < 0:
            raise ConfigurationError("spinup must be >= 0")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(
                f"algorithm must be one of {ALGORITHMS}, "
                f"got {self.algorithm!r}")
        if self.mu_velocity < 0 or self.mu_temperature < 0:
            raise ConfigurationError("nudging strengths must be >= 0")
        if self.r < 1 or self.s_factor < 1:
            raise ConfigurationError("observation factors must be >= 1")
        if self.sigma_theta < 0 or self.sigma_u < 0:
            raise ConfigurationError("noise levels must be >= 0")
        if self.n_members < 1:
            raise ConfigurationError("n_members must be >= 1")
        if min(self.seed_reference, self.seed_noise, self.seed_ic) < 0:
            raise ConfigurationError("seeds must be >= 0")
        if self.snapshot_stride < 1:
            raise ConfigurationError("snapshot_stride must be >= 1")
        n = _steps_for(self.horizon, self.dt, "horizon")
        _steps_for(self.spinup, self.dt, "spinup")
        if n % self.snapshot_stride != 0:
            raise ConfigurationError(
                f"horizon ({n} steps) must be a whole number of snapshot "
                f"strides ({self.snapshot_stride})")

    # -- derived pieces ----------------------------------------------------

    @property
    def n_steps(self) -> int:
        return _steps_for(self.horizon, self.dt, "horizon")

    @property
    def spinup_steps(self) -> int:
        return _steps_for(self.spinup, self.dt, "spinup")

    def grid(self) -> StaggeredGrid:
        return StaggeredGrid(n_x=self.n_x, n_y=self.n_y, L_x=self.l_x)

    def params(self) -> PhysicalParams:
        return PhysicalParams(ra=self.ra, pr=self.pr)

    def stepper(self) -> TimeStepper:
        return TimeStepper(dt=self.dt)

    def observation_grid(self) -> ObservationGrid:
        return ObservationGrid(self.grid(), self.r)

    def strengths(self) -> NudgingStrengths:
        return NudgingStrengths(velocity=self.mu_velocity,
                                temperature=self.mu_temperature)

    def noise(self) -> NoiseSpec:
        return NoiseSpec(sigma_theta=self.sigma_theta, sigma_u=self.sigma_u,
                         seed=self.seed_noise)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- persistence -------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for key, attr, typ in _SCHEMA:
            value = getattr(self, attr)
            lines.append(f"{key}={value!r}" if typ is float
                         else f"{key}={value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        lines = [line for line in self.to_text().splitlines()
                 if line.split("=", 1)[0] not in _HASH_EXCLUDED]
        digest = hashlib.sha256("\n".join(lines).encode("utf-8"))
        return digest.hexdigest()

    def run_id(self) -> str:
        tag = self.preset if self.preset else self.algorithm
        return f"{tag}-{self.config_hash()[:12]}"


def parse_config_text(text: str,
                      base: ExperimentConfig | None = None
                      ) -> ExperimentConfig:
    """Parse key=value lines, starting from base (or the desk profile).

    Unknown keys and malformed lines are errors; a partial file simply
    overrides the base profile's values.
    """
    known = {key: (attr, typ) for key, attr, typ in _SCHEMA}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, "
                                     f"got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        attr, typ = known[key]
        try:
            changes[attr] = typ(value)
        except ValueError as exc:
            raise ConfigurationError(
                f"line {lineno}: bad {typ.__name__} value {value!r} "
                f"for {key}") from exc
    if base is None:
        base = desk_profile()
    return base.replace(**changes)


def read_config(path, base: ExperimentConfig | None = None
                ) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file {path} not found") from exc
    return parse_config_text(text, base=base)


def write_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())


def desk_profile(algorithm: str = "cda") -> ExperimentConfig:
    """Small configuration sized for minutes-scale runs on one core.

    Moderately turbulent convection on a 192x64 grid.  Each algorithm
    carries its own nudging strength, the grid-search optimum for this
    configuration's observation coarseness and noise: weaker nudging
    filters more of the observation noise, and the intermittent variant
    tolerates a stronger pull because it acts only at arrival steps.
    """
    if algorithm == "cda":
        mu = 1.0
    elif algorithm == "dda":
        mu = 5.0
    else:
        raise ConfigurationError(
            f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    return ExperimentConfig(
        ra=1.0e6, pr=0.7,
        n_x=192, n_y=64, l_x=3.0,
        dt=1.0e-3, horizon=20.0, spinup=0.0, snapshot_stride=100,
        algorithm=algorithm,
        mu_velocity=mu, mu_temperature=mu,
        r=4, s_factor=10,
        sigma_theta=0.1, sigma_u=0.05,
        n_members=20,
        seed_reference=1000, seed_noise=2000, seed_ic=3000,
    )


def full_profile(algorithm: str = "dda") -> ExperimentConfig:
    """Full-scale configuration; hours-to-days of compute, documented only.

    Each algorithm carries its own tuned nudging strength and final time.
    """
    if algorithm == "dda":
        mu, horizon = 7.0, 49.9
    elif algorithm == "cda":
        mu, horizon = 3.0, 15.0
    else:
        raise ConfigurationError(
            f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    return ExperimentConfig(
        ra=2.0e8, pr=0.7,
        n_x=1200, n_y=400, l_x=3.0,
        dt=5.0e-4, horizon=horizon, spinup=0.0, snapshot_stride=100,
        algorithm=algorithm,
        mu_velocity=mu, mu_temperature=mu,
        r=5, s_factor=10,
        sigma_theta=0.1, sigma_u=0.05,
        n_members=50,
        seed_reference=1000, seed_noise=2000, seed_ic=3000,
    )


PROFILES = {"desk": desk_profile, "full": full_profile}
