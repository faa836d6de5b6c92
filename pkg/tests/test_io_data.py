import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fsta_snn import data as D
from fsta_snn.frequency import Band, band_energy, center_spectrum, dft2d
from fsta_snn.io import (ContainerError, decode_tensor, encode_tensor, header_length, load_tensor_container,
                         read_csv, read_pgm, save_tensor, to_gray8, write_csv, write_pgm)


class TestContainer:
    def test_roundtrip_2x3_f64(self, tmp_path, rng):
        a = rng.normal(size=(2, 3))
        save_tensor(tmp_path / "a.fsta", a)
        b = load_tensor_container(tmp_path / "a.fsta")
        assert b.dtype == np.float64 and b.tobytes() == a.tobytes()

    def test_header_length(self):
        assert header_length(4) == 23
        assert len(encode_tensor(np.zeros((1, 1, 1, 1), np.uint8))) == 24

    def test_layout(self):
        buf = encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert buf[:4] == b"FSTA"
        assert tuple(buf[4:7]) == (1, 0, 2)
        assert struct.unpack("<2I", buf[7:15]) == (2, 3)
        assert np.frombuffer(buf[15:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]

    def test_dtype_code_7(self):
        buf = bytearray(encode_tensor(np.zeros(2)))
        buf[5] = 7
        with pytest.raises(ContainerError, match="dtype code 7"):
            decode_tensor(bytes(buf))

    def test_bad_magic(self):
        with pytest.raises(ContainerError, match="magic"):
            decode_tensor(b"XSTA" + encode_tensor(np.zeros(2))[4:])

    @pytest.mark.parametrize("delta", [-1, 1])
    def test_payload_mismatch(self, delta):
        buf = encode_tensor(np.zeros((2, 2)))
        buf = buf[:delta] if delta < 0 else buf + b"\0"
        with pytest.raises(ContainerError, match="payload length"):
            decode_tensor(buf)

    def test_unsupported_source_dtype(self):
        with pytest.raises(ContainerError):
            encode_tensor(np.zeros(3, np.int32))

    def test_big_endian_input_is_normalised(self):
        a = np.arange(4, dtype=">f8")
        b = decode_tensor(encode_tensor(a))
        np.testing.assert_array_equal(a, b)

    @given(hnp.arrays(st.sampled_from([np.float32, np.float64, np.uint8]),
                      hnp.array_shapes(min_dims=0, max_dims=5, min_side=0, max_side=4)))
    def test_roundtrip_property(self, a):
        b = decode_tensor(encode_tensor(a))
        assert b.dtype == a.dtype and b.shape == a.shape and b.tobytes() == a.tobytes()


class TestTablesAndImages:
    def test_csv_roundtrip(self, tmp_path):
        write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 0.1], [None, 2.5]])
        rows = read_csv(tmp_path / "t.csv")
        assert rows == [{"a": "1", "b": "0.1"}, {"a": "n/a", "b": "2.5"}]

    def test_pgm(self, tmp_path):
        m = np.array([[0.0, 1.0], [2.0, 4.0]])
        write_pgm(tmp_path / "m.pgm", m)
        assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n2 2\n255\n")
        assert read_pgm(tmp_path / "m.pgm").tolist() == [[0, 64], [128, 255]]

    def test_flat_map(self):
        assert not to_gray8(np.full((3, 3), 2.0)).any()


def cifar_bytes(labels, rng):
    recs = []
    for lab in labels:
        recs.append(bytes([lab]) + rng.integers(0, 256, D.CIFAR_RECORD - 1, dtype=np.uint8).tobytes())
    return b"".join(recs)


class TestCifar:
    def test_layout_constants(self):
        assert D.CIFAR_RECORD == 1 + 32 * 32 * 3 == 3073
        assert D.CIFAR_BATCH_BYTES == 30_730_000

    def test_record_decoding(self, rng):
        buf = cifar_bytes([3, 9], rng)
        x, y = D.parse_cifar_records(buf)
        assert y.tolist() == [3, 9] and x.shape == (2, 3, 32, 32)
        # Red plane first, row-major.
        assert x[1, 0, 0, 1] == buf[3073 + 2]
        assert x[1, 2, 31, 31] == buf[2 * 3073 - 1]

    def test_label_out_of_range(self, rng):
        with pytest.raises(D.DataError, match="label 10"):
            D.parse_cifar_records(cifar_bytes([1, 10], rng))

    def test_truncated_file(self, tmp_path):
        (tmp_path / "test_batch.bin").write_bytes(b"\0" * 3073 * 3)
        with pytest.raises(D.DataError, match="9219 bytes, expected 30730000"):
            D.load_cifar10_binary(tmp_path, "test", mean=[0, 0, 0], std=[1, 1, 1])

    def test_missing_file(self, tmp_path):
        with pytest.raises(D.DataError, match="missing"):
            D.read_cifar_split(tmp_path, "test")

    def test_full_size_batch(self, tmp_path, rng):
        labels = np.arange(10000) % 10
        (tmp_path / "test_batch.bin").write_bytes(cifar_bytes(labels[:1].tolist(), rng) * 10000)
        ds = D.load_cifar10_binary(tmp_path, "test", mean=[0.5] * 3, std=[0.25] * 3)
        assert len(ds) == 10000 and ds.num_classes == 10
        assert 0 <= ds.y[0] <= 9
        assert ds.x.min() >= -2.0 and ds.x.max() <= 2.0

    def test_train_split_concatenates_and_normalises(self, tmp_path, rng, monkeypatch):
        monkeypatch.setattr(D, "CIFAR_BATCH_BYTES", 2 * D.CIFAR_RECORD)
        for i, f in enumerate(D.CIFAR_TRAIN_FILES):
            (tmp_path / f).write_bytes(cifar_bytes([i, i + 1], rng))
        ds = D.load_cifar10_binary(tmp_path, "train")
        assert ds.y.tolist() == [0, 1, 1, 2, 2, 3, 3, 4, 4, 5]
        np.testing.assert_allclose(ds.x.mean(axis=(0, 2, 3)), 0, atol=1e-12)
        np.testing.assert_allclose(ds.x.std(axis=(0, 2, 3)), 1, rtol=1e-12)


class TestSynthetic:
    def test_vertical_grating_energy(self):
        cfg = D.DataConfig("synthetic_gratings", image_size=16, n_train=6, n_test=0, orientations=["vertical"])
        train, _ = D.gen_synthetic(cfg)
        for img in train.x[:, 0]:
            spec = center_spectrum(dft2d(img))
            assert 1 - band_energy(spec, Band.horizontal_axis(0)) < 0.01

    def test_vertical_varies_along_x(self):
        g = D.grating(8, "vertical", 4.0)
        assert np.all(g == g[0:1, :]) and g[0].std() > 0

    def test_same_seed_same_bytes(self):
        for kind in ("synthetic_gratings", "synthetic_twoclass"):
            cfg = D.DataConfig(kind, image_size=8, n_train=10, n_test=4, noise=0.1, seed=7)
            a, b = D.gen_synthetic(cfg), D.gen_synthetic(cfg)
            assert a[0].x.tobytes() == b[0].x.tobytes() and a[1].y.tobytes() == b[1].y.tobytes()

    def test_seed_changes_data(self):
        a = D.gen_synthetic(D.DataConfig(image_size=8, n_train=4, n_test=0, seed=1))[0]
        b = D.gen_synthetic(D.DataConfig(image_size=8, n_train=4, n_test=0, seed=2))[0]
        assert a.x.tobytes() != b.x.tobytes()

    @pytest.mark.parametrize("n_train,n_test", [(0, 3), (7, 5), (33, 1)])
    def test_counts(self, n_train, n_test):
        cfg = D.DataConfig("synthetic_gratings", image_size=6, channels=2, n_train=n_train, n_test=n_test,
                           orientations=["vertical", "horizontal", "mixed"])
        train, test = D.gen_synthetic(cfg)
        assert train.x.shape == (n_train, 2, 6, 6) and len(test) == n_test
        assert train.num_classes == 3

    def test_balanced_labels(self):
        train, _ = D.gen_synthetic(D.DataConfig(image_size=8, n_train=64, n_test=0))
        assert np.bincount(train.y).tolist() == [32, 32]

    def test_values_in_unit_interval(self):
        train, _ = D.gen_synthetic(D.DataConfig("synthetic_gratings", image_size=8, n_train=8, n_test=0, noise=0.5))
        assert train.x.min() >= 0 and train.x.max() <= 1

    @pytest.mark.parametrize("bad", [dict(kind="mnist"), dict(kind="cifar10_binary"), dict(noise=-1.0),
                                     dict(orientations=["sideways"]), dict(normalize_mean=[0.0])])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            D.DataConfig(**bad)


class TestContainerDataset:
    def test_roundtrip(self, tmp_path):
        train, test = D.gen_synthetic(D.DataConfig(image_size=6, n_train=5, n_test=3))
        D.save_dataset_containers(tmp_path, train, test)
        tr, te = D.load_container_dataset(tmp_path)
        assert tr.x.tobytes() == train.x.tobytes() and tr.y.tolist() == train.y.tolist()
        assert te.num_classes == 2

    def test_missing(self, tmp_path):
        with pytest.raises(D.DataError, match="missing"):
            D.load_container_dataset(tmp_path)

    def test_via_config(self, tmp_path):
        train, test = D.gen_synthetic(D.DataConfig(image_size=6, n_train=5, n_test=3))
        D.save_dataset_containers(tmp_path, train, test)
        tr, _ = D.load_dataset(D.DataConfig("tensor_container", path=str(tmp_path)))
        assert len(tr) == 5
