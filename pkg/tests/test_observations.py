"""Frames, noise determinism, ensembles, and stream files."""

import numpy as np
import pytest

from _support import make_grid, random_fieldset
from rbnudge.assimilation import ObservationGrid
from rbnudge.errors import ConfigurationError, MissingInputError
from rbnudge.grid import XFACE
from rbnudge.observations import (MemberStream, NoiseSpec, ObservationFrame,
                                  ObservationStreamWriter, generate_ensemble,
                                  noise_fields, perturb,
                                  read_observation_stream, stream_seed,
                                  subsample, write_observation_stream)

RNG = np.random.default_rng(11)


def make_frame(og, time=0.0, seed=5):
    fs = random_fieldset(og.grid, np.random.default_rng(seed), divfree=False)
    fs = type(fs)(u=fs.u, v=fs.v, theta=fs.theta, pressure=fs.pressure,
                  time=time)
    return subsample(fs, og, s_factor=3, time=time)


class TestSubsample:
    def test_samples_native_points(self):
        g = make_grid(n_x=8, n_y=8, l_x=1.0)
        og = ObservationGrid(g, 4)
        fs = random_fieldset(g, RNG, divfree=False)
        frame = subsample(fs, og)
        assert frame.u.shape == (2, 2)
        assert frame.u[0, 0] == fs.u.values[2, 2]
        assert frame.u[1, 1] == fs.u.values[6, 6]
        assert frame.v[0, 1] == fs.v.values[2, 6]
        assert frame.theta[1, 0] == fs.theta.values[6, 2]
        assert frame.is_noise_free and frame.member == -1
        assert frame.r == 4 and frame.s_factor == 1

    def test_time_guard(self):
        g = make_grid()
        og = ObservationGrid(g, 2)
        fs = random_fieldset(g, RNG)
        subsample(fs, og, time=0.0)
        with pytest.raises(ConfigurationError):
            subsample(fs, og, time=0.5)


class TestPerturb:
    def setup_method(self):
        self.og = ObservationGrid(make_grid(n_x=12, n_y=8, l_x=2.0), 2)
        self.frame = make_frame(self.og)
        self.noise = NoiseSpec(sigma_theta=0.1, sigma_u=0.05, seed=99)

    def test_deterministic_given_counters(self):
        a = perturb(self.frame, self.noise, member=3, frame_index=7)
        b = perturb(self.frame, self.noise, member=3, frame_index=7)
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.theta, b.theta)
        assert a.member == 3
        assert a.sigma_theta == 0.1 and a.sigma_u == 0.05

    def test_counters_give_independent_draws(self):
        base = perturb(self.frame, self.noise, member=0, frame_index=0)
        other_member = perturb(self.frame, self.noise, member=1,
                               frame_index=0)
        other_frame = perturb(self.frame, self.noise, member=0,
                              frame_index=1)
        assert not np.array_equal(base.u, other_member.u)
        assert not np.array_equal(base.u, other_frame.u)
        assert not np.array_equal(base.u - self.frame.u,
                                  base.v - self.frame.v)

    def test_doubling_sigma_doubles_the_noise_exactly(self):
        shape = self.frame.u.shape
        one = noise_fields(self.noise, member=2, frame_index=4, shape=shape)
        double = noise_fields(NoiseSpec(sigma_theta=0.2, sigma_u=0.1,
                                        seed=99),
                              member=2, frame_index=4, shape=shape)
        for name in ("u", "v", "theta"):
            assert np.array_equal(double[name], 2.0 * one[name])
        # and the perturbed frames carry those exact draws
        f1 = perturb(self.frame, self.noise, member=2, frame_index=4)
        assert np.array_equal(f1.theta, self.frame.theta + one["theta"])

    def test_zero_sigma_copies_exactly(self):
        clean = perturb(self.frame, NoiseSpec(0.0, 0.0, seed=1), member=0,
                        frame_index=0)
        assert np.array_equal(clean.theta, self.frame.theta)
        assert np.array_equal(clean.u, self.frame.u)

    def test_refuses_noisy_frames_unless_allowed(self):
        noisy = perturb(self.frame, self.noise, member=0, frame_index=0)
        with pytest.raises(ConfigurationError, match="noisy"):
            perturb(noisy, self.noise, member=1, frame_index=0)
        stacked = perturb(noisy, self.noise, member=1, frame_index=0,
                          allow_noisy=True)
        assert not np.array_equal(stacked.theta, noisy.theta)

    def test_noise_statistics(self):
        g = make_grid(n_x=120, n_y=100, l_x=2.0)
        og = ObservationGrid(g, 2)
        frame = subsample(random_fieldset(g, RNG), og)
        noisy = perturb(frame, NoiseSpec(sigma_theta=0.1, sigma_u=0.05,
                                         seed=0), member=0, frame_index=0)
        diff = noisy.theta - frame.theta
        assert abs(diff.mean()) < 0.01
        assert abs(diff.std() - 0.1) < 0.005
        diff_u = noisy.u - frame.u
        assert abs(diff_u.std() - 0.05) < 0.0025


class TestEnsemble:
    def test_streams_are_lazy_reproducible_and_distinct(self):
        og = ObservationGrid(make_grid(), 2)
        base = [make_frame(og, time=0.01 * k, seed=k) for k in range(4)]
        noise = NoiseSpec(sigma_theta=0.1, sigma_u=0.05, seed=123)
        streams = generate_ensemble(base, noise, 3)
        assert len(streams) == 3 and all(len(s) == 4 for s in streams)
        again = MemberStream(base, noise, 1)
        assert np.array_equal(streams[1][2].theta, again[2].theta)
        for k in range(4):
            assert not np.array_equal(streams[0][k].theta,
                                      streams[1][k].theta)
        assert streams[2][0].member == 2
        with pytest.raises(ConfigurationError):
            generate_ensemble(base, noise, 0)

    def test_frame_validation(self):
        with pytest.raises(ConfigurationError):
            ObservationFrame(time=0.0, u=np.zeros((2, 2)),
                             v=np.zeros((3, 2)), theta=np.zeros((2, 2)), r=2)
        with pytest.raises(ConfigurationError):
            ObservationFrame(time=0.0, u=np.zeros((2, 2)),
                             v=np.zeros((2, 2)), theta=np.zeros((2, 2)),
                             r=2, sigma_theta=-0.5)
        with pytest.raises(ConfigurationError):
            NoiseSpec(sigma_theta=0.1, sigma_u=-0.1, seed=0)


class TestStreamFiles:
    def test_round_trip(self, tmp_path):
        og = ObservationGrid(make_grid(n_x=12, n_y=8, l_x=2.0), 2)
        noise = NoiseSpec(sigma_theta=0.1, sigma_u=0.05, seed=77)
        base = [make_frame(og, time=0.05 * k, seed=k) for k in range(3)]
        frames = [perturb(f, noise, member=4, frame_index=i)
                  for i, f in enumerate(base)]
        path = tmp_path / "member4.rbobs"
        write_observation_stream(path, frames, seed=77)
        back = read_observation_stream(path)
        assert len(back) == 3
        for orig, rt in zip(frames, back):
            assert rt.time == orig.time
            assert np.array_equal(rt.u, orig.u)
            assert np.array_equal(rt.v, orig.v)
            assert np.array_equal(rt.theta, orig.theta)
            assert rt.r == 2 and rt.s_factor == 3
            assert rt.sigma_theta == 0.1 and rt.sigma_u == 0.05
            assert rt.member == 4
        assert stream_seed(path) == 77

    def test_write_is_deterministic(self, tmp_path):
        og = ObservationGrid(make_grid(), 2)
        frames = [make_frame(og, time=0.1 * k, seed=k) for k in range(2)]
        a, b = tmp_path / "a.rbobs", tmp_path / "b.rbobs"
        write_observation_stream(a, frames)
        write_observation_stream(b, frames)
        assert a.read_bytes() == b.read_bytes()

    def test_incremental_writer_matches_batch(self, tmp_path):
        og = ObservationGrid(make_grid(), 2)
        frames = [make_frame(og, time=0.1 * k, seed=k) for k in range(3)]
        batch, inc = tmp_path / "batch.rbobs", tmp_path / "inc.rbobs"
        write_observation_stream(batch, frames, seed=5)
        with ObservationStreamWriter(inc, seed=5) as writer:
            for f in frames:
                writer.append(f)
        assert writer.n_frames == 3
        assert inc.read_bytes() == batch.read_bytes()

    def test_error_paths(self, tmp_path):
        with pytest.raises(MissingInputError):
            read_observation_stream(tmp_path / "absent.rbobs")
        bad = tmp_path / "bad.rbobs"
        bad.write_bytes(b"NOTMAGIC" + b"\x00" * 100)
        with pytest.raises(ConfigurationError, match="not an observation"):
            read_observation_stream(bad)
        og = ObservationGrid(make_grid(), 2)
        frames = [make_frame(og)]
        path = tmp_path / "trunc.rbobs"
        write_observation_stream(path, frames)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(ConfigurationError, match="bytes"):
            read_observation_stream(path)
        with pytest.raises(ConfigurationError):
            write_observation_stream(tmp_path / "empty.rbobs", [])
