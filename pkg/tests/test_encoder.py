import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mpbonus.encoder import (AutoencoderEncoder, AutoencoderSpec, EncoderHandle, FrameDataset,
                             build_static_dataset, collect_random_frames, dynamic_retrain,
                             encode, identity_handle, reconstruction_mse, train_autoencoder)
from mpbonus.envs import GridMaze, PixelChain
from mpbonus.errors import ConfigError, ShapeError
from mpbonus.nn import LayerSpec, Network

from oracles import loop_forward


def small_spec(width=40):
    return AutoencoderSpec.for_input(width)


@st.composite
def hourglass(draw):
    n = draw(st.integers(2, 9))
    b = draw(st.integers(1, n))
    down = sorted(draw(st.lists(st.integers(1, 64), min_size=b, max_size=b)), reverse=True)
    up = sorted(draw(st.lists(st.integers(down[-1], 64), min_size=n - b, max_size=n - b)))
    tap = draw(st.integers(1, n))
    return AutoencoderSpec(tuple(down + up), tap, b)


class TestSpec:
    def test_defaults(self):
        spec = AutoencoderSpec()
        assert spec.hidden_widths == (128, 96, 64, 32, 64, 96, 128, 160)
        assert (spec.tap_index, spec.tap_width, spec.input_width) == (6, 96, 160)
        assert AutoencoderSpec.for_input(160) == spec

    @given(hourglass())
    def test_tap_width_matches_layer(self, spec):
        assert spec.tap_width == spec.hidden_widths[spec.tap_index - 1]
        layers = spec.layers()
        assert len(layers) == len(spec.hidden_widths)
        assert layers[spec.tap_index - 1].output_width == spec.tap_width

    def test_rejects_non_hourglass(self):
        with pytest.raises(ConfigError):
            AutoencoderSpec((64, 96, 32, 64, 96, 128, 160, 160), 6, 3)
        with pytest.raises(ConfigError):
            AutoencoderSpec((128, 96, 64, 32, 64, 96, 128, 160), 9, 4)
        with pytest.raises(ConfigError):
            AutoencoderSpec((128, 96, 64, 32, 64, 96, 128, 160), 6, 0)


class TestEncode:
    def test_zero_weights_give_zero_code(self):
        spec = small_spec()
        net = Network(spec.layers()[:spec.tap_index])
        for w, b in zip(net.weights, net.biases):
            w[:] = 0.0
            b[:] = 0.0
        h = EncoderHandle(net, spec.tap_width, 0, spec)
        frame = np.random.default_rng(0).random((8, 5))
        np.testing.assert_array_equal(encode(h, frame), np.zeros(spec.tap_width))

    def test_pure(self):
        h, _, _ = train_autoencoder(small_spec(), FrameDataset(np.eye(40), np.eye(40)[:3]), 1)
        f = np.random.default_rng(1).random(40)
        np.testing.assert_array_equal(h.encode(f), h.encode(f))
        assert h.encode(f).shape == (h.tap_width,)

    def test_one_layer_tap_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        layers = [LayerSpec(6, 4, "rectifier")]
        w, b = rng.normal(size=(6, 4)), rng.normal(size=4)
        h = EncoderHandle(Network(layers, weights=[w], biases=[b]), 4)
        x = rng.random(6)
        np.testing.assert_allclose(h.encode(x), loop_forward(layers, [w], [b], x), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            identity_handle(10).encode(np.zeros(11))

    def test_identity_handle(self):
        x = np.random.default_rng(3).random((8, 20))
        np.testing.assert_array_equal(identity_handle(160).encode(x), x.reshape(-1))


class TestStaticDataset:
    def test_split_sizes(self):
        data = build_static_dataset(PixelChain(20), 1100, seed=0)
        assert data.sizes == (1000, 100)
        assert data.frame_shape == (8, 20)

    def test_deterministic(self):
        a = build_static_dataset(PixelChain(20), 300, seed=4)
        b = build_static_dataset(PixelChain(20), 300, seed=4)
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)

    def test_frames_valid(self):
        frames = collect_random_frames(GridMaze(), 200, seed=1)
        assert frames.shape == (200, 7, 7)
        assert np.all((frames >= 0) & (frames <= 1))

    def test_split_is_a_partition_of_rows(self):
        frames = np.arange(55 * 3, dtype=float).reshape(55, 3)
        data = FrameDataset.split(frames, rng=0)
        rows = np.vstack([data.train, data.test])
        assert sorted(map(tuple, rows)) == sorted(map(tuple, frames))


class TestTraining:
    def test_constant_zero_corpus(self):
        spec = small_spec()
        zeros = np.zeros((200, 40))
        _, train_mse, test_mse = train_autoencoder(spec, FrameDataset(zeros, zeros[:20]), 20)
        assert test_mse < 1e-4 and train_mse < 1e-4

    def test_same_seed_identical(self):
        data = build_static_dataset(PixelChain(5), 220, seed=0)
        spec = small_spec(40)
        a, ta, sa = train_autoencoder(spec, data, 2, seed=9)
        b, tb, sb = train_autoencoder(spec, data, 2, seed=9)
        assert a.net.parameters_equal(b.net) and (ta, sa) == (tb, sb)

    def test_rejects_bad_data(self):
        spec = small_spec()
        with pytest.raises(ShapeError):
            train_autoencoder(spec, FrameDataset(np.zeros((5, 41)), np.zeros((1, 41))))
        with pytest.raises(ValueError):
            train_autoencoder(spec, FrameDataset(np.zeros((0, 40)), np.zeros((0, 40))))

    def test_residual_below_variance_but_positive(self):
        data = build_static_dataset(PixelChain(20), 2200, seed=1)
        _, _, test_mse = train_autoencoder(AutoencoderSpec(), data, seed=1)
        assert 0.0 < test_mse < data.test.var()


class TestDynamicRetrain:
    def handle(self):
        data = build_static_dataset(PixelChain(5), 220, seed=0)
        return train_autoencoder(small_spec(40), data, 1)[0], data

    def test_version_bump_and_old_handle_kept(self):
        h, data = self.handle()
        h3 = EncoderHandle(h.net, h.tap_width, 3, h.spec, h.autoencoder)
        before = h3.encode(data.test[0]).copy()
        h4 = dynamic_retrain(h3, data, epochs=2)
        assert h4.version == 4
        np.testing.assert_array_equal(h3.encode(data.test[0]), before)
        assert not h4.net.parameters_equal(h3.net)

    def test_zero_epochs(self):
        h, data = self.handle()
        h1 = dynamic_retrain(h, data.train, epochs=0)
        assert h1.version == h.version + 1
        assert h1.net.parameters_equal(h.net)

    def test_needs_autoencoder(self):
        with pytest.raises(ConfigError):
            dynamic_retrain(identity_handle(40), np.zeros((3, 40)))

    @pytest.mark.slow
    def test_improves_held_out_recent_frames_on_grid_maze(self):
        env = GridMaze()
        spec = AutoencoderSpec.for_input(env.frame_width)
        wins = 0
        for seed in range(10):
            base = build_static_dataset(env, 330, seed=seed)
            h, _, _ = train_autoencoder(spec, base, 1, seed=seed)
            recent = build_static_dataset(env, 1100, seed=100 + seed)
            before = reconstruction_mse(h, recent.test)
            after = reconstruction_mse(dynamic_retrain(h, recent, 3, seed=seed), recent.test)
            wins += after < before
        assert wins >= 7


def test_checkpoint_round_trip(tmp_path):
    data = build_static_dataset(PixelChain(5), 110, seed=0)
    h, _, _ = train_autoencoder(small_spec(40), data, 1)
    h.save(tmp_path / "enc.bin")
    meta = json.loads((tmp_path / "enc.bin.json").read_text())
    assert meta["version"] == 0 and meta["tap_index"] == 6 and meta["tap_width"] == h.tap_width
    loaded = EncoderHandle.load(tmp_path / "enc.bin")
    assert loaded.net.parameters_equal(h.net) and loaded.spec == h.spec
    np.testing.assert_array_equal(loaded.encode(data.test[0]), h.encode(data.test[0]))


class TestEstimator:
    def test_fit_transform(self):
        X = build_static_dataset(PixelChain(5), 220, seed=0).train
        est = AutoencoderEncoder(epochs=2, random_state=1).fit(X)
        Z = est.transform(X)
        assert Z.shape == (len(X), est.spec_.tap_width)
        assert est.reconstruct(X).shape == X.shape
        assert est.score(X) == -reconstruction_mse(est.handle_, X)

    def test_partial_fit_bumps_version(self):
        X = np.random.default_rng(0).random((64, 40))
        est = AutoencoderEncoder(epochs=1).fit(X)
        est.partial_fit(X)
        assert est.handle_.version == 1

    def test_not_fitted_and_width(self):
        est = AutoencoderEncoder()
        with pytest.raises(NotFittedError):
            est.transform(np.zeros((2, 40)))
        est.set_params(epochs=1).fit(np.zeros((10, 40)))
        with pytest.raises(ShapeError):
            est.transform(np.zeros((2, 41)))

    def test_clone_keeps_params(self):
        est = AutoencoderEncoder(tap_index=4, epochs=3)
        assert clone(est).get_params() == est.get_params()

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_transform_is_deterministic(self, seed):
        X = np.random.default_rng(seed).random((20, 40))
        est = AutoencoderEncoder(epochs=1, random_state=seed).fit(X)
        np.testing.assert_array_equal(est.transform(X), est.transform(X))
