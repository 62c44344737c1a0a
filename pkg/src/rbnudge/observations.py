"""Observation frames, synthetic noise, ensembles, and stream files.

A frame holds the coarse observations of all three prognostic variables at
one instant.  Noise is independent zero-mean Gaussian per coarse point with
per-variable standard deviations; realizations are reproducible through a
counter-based seed scheme keyed by (member, frame index, variable), so any
frame of any member can be regenerated in isolation.

Stream file layout (binary, little-endian), magic "RBOBS01\\0":

    magic        8 bytes
    r            uint32      coarsening factor
    s_factor     uint32      frames arrive every s_factor steps
    n_blocks_x   uint32
    n_blocks_y   uint32
    n_frames     uint64
    sigma_theta  float64     noise level applied to temperature
    sigma_u      float64     noise level applied to both velocities
    seed         uint64      base seed of the noise scheme (0 if noise-free)
    member       int64       ensemble member id (-1 for noise-free truth)
    frames       n_frames records: time float64, then u, v, theta as
                 float64[n_blocks_y * n_blocks_x] each, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .assimilation import ObservationGrid, sample_coarse
from .errors import ConfigurationError, MissingInputError
from .grid import FieldSet

_MAGIC = b"RBOBS01\x00"
_HEADER = struct.Struct("<8sIIIIQddQq")

# variable order used for both noise draws and file records
_VARIABLES = ("u", "v", "theta")


@dataclass(frozen=True)
class ObservationFrame:
    """Coarse observations of (u, v, theta) at one instant."""

    time: float
    u: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    r: int
    s_factor: int = 1
    sigma_theta: float = 0.0
    sigma_u: float = 0.0
    member: int = -1

    def __post_init__(self):
        shape = self.u.shape
        if len(shape) != 2 or self.v.shape != shape \
                or self.theta.shape != shape:
            raise ConfigurationError(
                "frame arrays must share one 2-D coarse shape")
        if self.r < 1 or self.s_factor < 1:
            raise ConfigurationError("r and s_factor must be >= 1")
        if self.sigma_theta < 0 or self.sigma_u < 0:
            raise ConfigurationError("noise levels must be >= 0")

    @property
    def is_noise_free(self) -> bool:
        return self.sigma_theta == 0.0 and self.sigma_u == 0.0


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian observation-noise description."""

    sigma_theta: float
    sigma_u: float
    seed: int

    def __post_init__(self):
        if self.sigma_theta < 0 or self.sigma_u < 0:
            raise ConfigurationError("noise levels must be >= 0")
        if self.seed < 0:
            raise ConfigurationError("seed must be >= 0")


def subsample(reference: FieldSet, og: ObservationGrid, s_factor: int = 1,
              time: float | None = None) -> ObservationFrame:
    """Noise-free coarse observation of a fine reference state.

    When `time` is given it must match the state's own clock; this guards
    callers that pair frames with precomputed arrival times.
    """
    if time is not None and abs(reference.time - time) \
            > 1e-9 * max(1.0, abs(time)):
        raise ConfigurationError(
            f"state time {reference.time} does not match requested "
            f"frame time {time}")
    return ObservationFrame(
        time=reference.time,
        u=sample_coarse(reference.u, og),
        v=sample_coarse(reference.v, og),
        theta=sample_coarse(reference.theta, og),
        r=og.r, s_factor=s_factor)


def _noise_rng(seed: int, member: int, frame_index: int, variable: int):
    ss = np.random.SeedSequence(entropy=seed,
                                spawn_key=(member, frame_index, variable))
    return np.random.default_rng(ss)


def noise_fields(noise: NoiseSpec, member: int, frame_index: int,
                 shape: tuple[int, int]) -> dict[str, np.ndarray]:
    """The Gaussian noise arrays added to one frame, keyed by variable.

    Each (member, frame_index, variable) counter seeds its own generator,
    so realizations are reproducible individually and scaling a sigma
    rescales exactly the same underlying standard-normal draw (doubling a
    sigma doubles the noise array bit for bit).
    """
    if member < 0 or frame_index < 0:
        raise ConfigurationError("member and frame_index must be >= 0")
    sigmas = {"u": noise.sigma_u, "v": noise.sigma_u,
              "theta": noise.sigma_theta}
    out = {}
    for var_index, name in enumerate(_VARIABLES):
        sigma = sigmas[name]
        if sigma == 0.0:
            out[name] = np.zeros(shape)
            continue
        rng = _noise_rng(noise.seed, member, frame_index, var_index)
        out[name] = sigma * rng.standard_normal(shape)
    return out


def perturb(frame: ObservationFrame, noise: NoiseSpec, member: int,
            frame_index: int, allow_noisy: bool = False) -> ObservationFrame:
    """Add an independent Gaussian realization to a frame.

    Refuses already-noisy frames unless allow_noisy is set (stacking noise
    is a deliberate act, used when observing a downscaled solution that was
    itself driven by noisy data).
    """
    if not frame.is_noise_free and not allow_noisy:
        raise ConfigurationError(
            "refusing to perturb an already noisy frame; pass "
            "allow_noisy=True if stacked noise is intended")
    draws = noise_fields(noise, member, frame_index, frame.u.shape)
    return replace(frame, u=frame.u + draws["u"], v=frame.v + draws["v"],
                   theta=frame.theta + draws["theta"],
                   sigma_theta=noise.sigma_theta,
                   sigma_u=noise.sigma_u, member=member)


class MemberStream(Sequence):
    """Lazily perturbed view of a base frame sequence for one member.

    Frames are regenerated on demand from the counter-based seed scheme, so
    holding twenty members costs no more memory than the base sequence.
    """

    def __init__(self, base: Sequence[ObservationFrame], noise: NoiseSpec,
                 member: int, allow_noisy: bool = False):
        self._base = base
        self._noise = noise
        self.member = member
        self._allow_noisy = allow_noisy

    def __len__(self) -> int:
        return len(self._base)

    def __getitem__(self, index):
        if isinstance(index, slice):
            raise TypeError("member streams do not support slicing")
        if index < 0:
            index += len(self._base)
        if not 0 <= index < len(self._base):
            raise IndexError(index)
        return perturb(self._base[index], self._noise, self.member, index,
                       allow_noisy=self._allow_noisy)


def generate_ensemble(base: Sequence[ObservationFrame], noise: NoiseSpec,
                      n_members: int,
                      allow_noisy: bool = False) -> list[MemberStream]:
    """Per-member noisy streams over a common base sequence.

    Distinct members draw from disjoint seed counters, so any two member
    streams differ at every frame (almost surely) while remaining
    individually reproducible.
    """
    if n_members < 1:
        raise ConfigurationError("n_members must be >= 1")
    return [MemberStream(base, noise, member, allow_noisy=allow_noisy)
            for member in range(n_members)]


# byte offset of the frame-count field inside the header
_COUNT_OFFSET = struct.calcsize("<8sIIII")


class ObservationStreamWriter:
    """Incremental stream writer; frames are flushed as they arrive.

    The header's frame count is back-patched on close, so the caller never
    has to hold a whole stream in memory.  Use as a context manager; a
    stream closed without any frame is an error.
    """

    def __init__(self, path, seed: int = 0):
        self._path = path
        self._seed = seed
        self._fh = None
        self._shape = None
        self.n_frames = 0

    def __enter__(self) -> "ObservationStreamWriter":
        self._fh = open(self._path, "wb")
        return self

    def append(self, frame: ObservationFrame) -> None:
        if self._fh is None:
            raise ConfigurationError("writer is not open")
        if self._shape is None:
            self._shape = frame.u.shape
            nby, nbx = self._shape
            self._fh.write(_HEADER.pack(
                _MAGIC, frame.r, frame.s_factor, nbx, nby, 0,
                frame.sigma_theta, frame.sigma_u, self._seed, frame.member))
        elif frame.u.shape != self._shape:
            raise ConfigurationError("inconsistent frame shapes")
        self._fh.write(struct.pack("<d", frame.time))
        for name in _VARIABLES:
            arr = np.ascontiguousarray(getattr(frame, name), dtype="<f8")
            self._fh.write(arr.tobytes())
        self.n_frames += 1

    def __exit__(self, exc_type, exc, tb):
        fh, self._fh = self._fh, None
        try:
            # patch the count even when unwinding, so a partial stream
            # from an aborted run stays readable
            if self.n_frames > 0:
                fh.seek(_COUNT_OFFSET)
                fh.write(struct.pack("<Q", self.n_frames))
            elif exc_type is None:
                raise ConfigurationError("cannot write an empty stream")
        finally:
            fh.close()
        return False


def write_observation_stream(path, frames: Sequence[ObservationFrame],
                             seed: int = 0) -> None:
    """Serialize a frame sequence; all frames must share shape and labels."""
    with ObservationStreamWriter(path, seed=seed) as writer:
        for frame in frames:
            writer.append(frame)


def read_observation_stream(path) -> list[ObservationFrame]:
    """Load a stream written by write_observation_stream."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"observation stream {path} not found")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigurationError(f"{path} is truncated")
    (magic, r, s_factor, nbx, nby, n_frames, sigma_theta, sigma_u,
     _seed, member) = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ConfigurationError(f"{path} is not an observation stream")
    per_var = nbx * nby * 8
    record = 8 + 3 * per_var
    want = _HEADER.size + n_frames * record
    if len(raw) != want:
        raise ConfigurationError(
            f"{path} has {len(raw)} bytes, expected {want}")
    frames = []
    pos = _HEADER.size
    for _ in range(n_frames):
        (time,) = struct.unpack_from("<d", raw, pos)
        pos += 8
        arrays = []
        for _name in _VARIABLES:
            arr = np.frombuffer(raw, dtype="<f8", count=nbx * nby,
                                offset=pos).reshape(nby, nbx).copy()
            arrays.append(arr)
            pos += per_var
        frames.append(ObservationFrame(
            time=time, u=arrays[0], v=arrays[1], theta=arrays[2], r=r,
            s_factor=s_factor, sigma_theta=sigma_theta, sigma_u=sigma_u,
            member=member))
    return frames


def stream_seed(path) -> int:
    """Base noise seed recorded in a stream header."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size or not head.startswith(_MAGIC):
        raise ConfigurationError(f"{path} is not an observation stream")
    return _HEADER.unpack(head)[8]
