import numpy as np
import pytest

from sert.errors import FormatError
from sert.hsio import HsiImage, load_checkpoint, load_hsi, save_checkpoint, save_hsi
from sert.model import init_weights, toy_config
from sert.numerics import AdamState, Tensor, no_tape


class TestHsrContainer:
    def test_roundtrip_bitwise(self, tmp_path, rng):
        cube = rng.random((4, 4, 3))
        path = tmp_path / "img.hsr"
        save_hsi(cube, path)
        loaded = load_hsi(path)
        assert np.array_equal(loaded.data, cube)
        assert loaded.dtype == "f64"

    def test_meta_survives_and_resave_is_byte_identical(self, tmp_path, rng):
        cube = rng.random((3, 5, 2))
        path = tmp_path / "img.hsr"
        save_hsi(cube, path, meta={"seed": "7", "recipe.variant": "gaussian_iid", "recipe.sigma": "50.0"})
        loaded = load_hsi(path)
        assert loaded.meta["recipe.variant"] == "gaussian_iid"
        path2 = tmp_path / "img2.hsr"
        save_hsi(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_f32_roundtrip(self, tmp_path, rng):
        cube = rng.random((4, 4, 2)).astype(np.float32).astype(np.float64)
        path = tmp_path / "img.hsr"
        save_hsi(cube, path, dtype="f32")
        loaded = load_hsi(path)
        assert loaded.dtype == "f32"
        assert np.array_equal(loaded.data, cube)

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "img.hsr"
        save_hsi(rng.random((4, 4, 3)), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])  # one float short
        with pytest.raises(FormatError, match="truncated payload"):
            load_hsi(path)

    def test_zero_height_rejected_before_payload(self, tmp_path):
        path = tmp_path / "bad.hsr"
        header = b"HSR1\nheight=0\nwidth=4\nbands=3\ndtype=f64\nlayout=band-major\n\n"
        path.write_bytes(header)  # no payload at all; header must fail first
        with pytest.raises(FormatError, match="height"):
            load_hsi(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hsr"
        path.write_bytes(b"HSRX\nheight=1\nwidth=1\nbands=1\ndtype=f64\nlayout=band-major\n\n" + b"\0" * 8)
        with pytest.raises(FormatError, match="magic"):
            load_hsi(path)

    def test_unknown_dtype_names_field(self, tmp_path):
        path = tmp_path / "bad.hsr"
        path.write_bytes(b"HSR1\nheight=1\nwidth=1\nbands=1\ndtype=f16\nlayout=band-major\n\n" + b"\0" * 2)
        with pytest.raises(FormatError, match="dtype"):
            load_hsi(path)

    def test_band_major_layout_on_disk(self, tmp_path):
        cube = np.arange(12.0).reshape(2, 3, 2)  # H=2, W=3, B=2
        path = tmp_path / "img.hsr"
        save_hsi(cube, path)
        payload = path.read_bytes().split(b"\n\n", 1)[1]
        values = np.frombuffer(payload, dtype="<f8")
        np.testing.assert_array_equal(values[:6], cube[:, :, 0].ravel())


class TestCheckpoint:
    def test_forward_identical_after_roundtrip(self, tmp_path, rng):
        model = init_weights(toy_config(), seed=3)
        path = tmp_path / "m.ck"
        save_checkpoint(model, path, step=4, seed=3)
        loaded, step, seed, adam = load_checkpoint(path)
        assert (step, seed, adam) == (4, 3, None)
        probe = rng.random((8, 8, 4))
        with no_tape():
            a = model.forward(Tensor(probe)).data
            b = loaded.forward(Tensor(probe)).data
        assert np.array_equal(a, b)

    def test_resave_is_byte_identical(self, tmp_path):
        model = init_weights(toy_config(), seed=5)
        adam = AdamState(lr=2e-4)
        adam.m = {name: np.full(t.shape, 0.25) for name, t in model.params.items()}
        adam.v = {name: np.full(t.shape, 0.5) for name, t in model.params.items()}
        adam.step = 9
        p1, p2 = tmp_path / "a.ck", tmp_path / "b.ck"
        save_checkpoint(model, p1, step=9, seed=5, adam=adam)
        loaded, step, seed, adam2 = load_checkpoint(p1)
        save_checkpoint(loaded, p2, step=step, seed=seed, adam=adam2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_tampered_shape_prefix(self, tmp_path):
        model = init_weights(toy_config(), seed=1)
        path = tmp_path / "m.ck"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        needle = b"tensor head.bias f64 1 8\n"
        assert needle in blob
        path.write_bytes(blob.replace(needle, b"tensor head.bias f64 1 9\n", 1))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_config_conflict_detected(self, tmp_path):
        model = init_weights(toy_config(), seed=1)
        path = tmp_path / "m.ck"
        save_checkpoint(model, path)
        with pytest.raises(FormatError, match="conflict"):
            load_checkpoint(path, expect_config=toy_config(rank=3))

    def test_adam_state_roundtrip(self, tmp_path, rng):
        model = init_weights(toy_config(), seed=2)
        adam = AdamState()
        adam.step = 3
        adam.m = {name: rng.normal(size=t.shape) for name, t in model.params.items()}
        adam.v = {name: np.abs(rng.normal(size=t.shape)) for name, t in model.params.items()}
        path = tmp_path / "m.ck"
        save_checkpoint(model, path, step=3, seed=2, adam=adam)
        _, _, _, loaded = load_checkpoint(path)
        assert loaded is not None and loaded.step == 3
        for name in model.params:
            assert np.array_equal(loaded.m[name], adam.m[name])
            assert np.array_equal(loaded.v[name], adam.v[name])
