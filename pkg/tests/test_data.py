from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deblur.data import (
    BlurSpec,
    PairManifest,
    PairRow,
    batch_rows,
    batches,
    build_synthetic_dataset,
    decode_pnm,
    encode_pnm,
    gaussian_blur,
    load_tensor,
    read_image,
    read_manifest,
    split_counts,
    to_image,
    to_tensor,
    write_image,
    write_manifest,
)
from deblur.errors import FormatError, UnsupportedFormatError
from conftest import write_noise_images
from oracles import gaussian_2d


class TestPnm:
    def test_round_trip_file(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        write_image(img, tmp_path / "a.ppm")
        back = read_image(tmp_path / "a.ppm")
        assert back.dtype == np.uint8
        np.testing.assert_array_equal(back, img)
        assert encode_pnm(back) == (tmp_path / "a.ppm").read_bytes()

    def test_minimal_file(self):
        img = decode_pnm(b"P6\n2 2\n255\n" + bytes(range(12)))
        assert img.shape == (2, 2, 3)
        assert img[1, 1].tolist() == [9, 10, 11]

    def test_comments_and_spacing(self):
        img = decode_pnm(b"P6 # comment\n  3\t1 # another\n255\n" + bytes(9))
        assert img.shape == (1, 3, 3)

    def test_greyscale(self, tmp_path):
        img = np.arange(6, dtype=np.uint8).reshape(2, 3, 1)
        write_image(img, tmp_path / "g.pgm")
        assert (tmp_path / "g.pgm").read_bytes()[:2] == b"P5"
        np.testing.assert_array_equal(read_image(tmp_path / "g.pgm"), img)

    def test_maxval_unsupported(self):
        with pytest.raises(UnsupportedFormatError) as err:
            decode_pnm(b"P6\n1 1\n65535\n" + bytes(6))
        assert err.value.offset == 7

    def test_bad_magic(self):
        with pytest.raises(FormatError) as err:
            decode_pnm(b"P3\n1 1\n255\n0 0 0\n")
        assert err.value.offset == 0

    def test_truncated_raster(self):
        buf = b"P6\n2 2\n255\n" + bytes(11)
        with pytest.raises(FormatError, match="truncated") as err:
            decode_pnm(buf)
        assert err.value.offset == len(buf)

    def test_truncated_header(self):
        with pytest.raises(FormatError, match="truncated header"):
            decode_pnm(b"P6\n2 2")

    def test_bad_dimension(self):
        with pytest.raises(FormatError) as err:
            decode_pnm(b"P6\n0 2\n255\n")
        assert err.value.offset == 3

    def test_trailing_bytes(self):
        with pytest.raises(FormatError, match="trailing"):
            decode_pnm(b"P6\n1 1\n255\n" + bytes(4))

    def test_read_error_names_path(self, tmp_path):
        (tmp_path / "x.ppm").write_bytes(b"XX")
        with pytest.raises(FormatError, match="x.ppm"):
            read_image(tmp_path / "x.ppm")

    @settings(max_examples=40)
    @given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]))))
    def test_round_trip_property(self, img):
        buf = encode_pnm(img)
        back = decode_pnm(buf)
        np.testing.assert_array_equal(back, img)
        assert encode_pnm(back) == buf


class TestConversion:
    def test_endpoints(self):
        t = to_tensor(np.array([0, 255], dtype=np.uint8).reshape(1, 2, 1))
        assert t.dtype == np.float32
        assert t.ravel().tolist() == [0.0, 1.0]

    def test_every_byte_round_trips(self):
        img = np.arange(256, dtype=np.uint8).reshape(16, 16, 1)
        np.testing.assert_array_equal(to_image(to_tensor(img)), img)

    def test_clamp(self):
        t = np.array([1.7, -0.2, 0.5]).reshape(1, 3, 1)
        assert to_image(t).ravel().tolist() == [255, 0, 128]


class TestGaussianBlur:
    def test_kernel_sums_to_one(self):
        k = BlurSpec(1.5, 9).kernel()
        assert k.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(k >= 0)
        np.testing.assert_allclose(k, gaussian_2d(9, 1.5), rtol=1e-12)

    def test_constant_interior_unchanged(self):
        x = np.full((30, 30, 3), 0.6)
        out = gaussian_blur(x, BlurSpec(1.5, 9))
        np.testing.assert_allclose(out[4:-4, 4:-4], 0.6, atol=1e-6)
        # zero padding only darkens the border
        assert np.all(out <= 0.6 + 1e-12)

    def test_delta_limit(self, rng):
        x = rng.random((10, 10, 3))
        np.testing.assert_allclose(gaussian_blur(x, BlurSpec(0.1, 3)), x, atol=1e-6)

    def test_matches_direct_loops(self, rng):
        x = rng.random((16, 16, 1))
        w = gaussian_2d(7, 1.5)
        expected = np.zeros_like(x)
        for i in range(16):
            for j in range(16):
                acc = 0.0
                for u in range(7):
                    for v in range(7):
                        ii, jj = i + u - 3, j + v - 3
                        if 0 <= ii < 16 and 0 <= jj < 16:
                            acc += w[u, v] * x[ii, jj, 0]
                expected[i, j, 0] = acc
        np.testing.assert_allclose(gaussian_blur(x, BlurSpec(1.5, 7)), expected, atol=1e-6)

    def test_stays_in_range(self, rng):
        out = gaussian_blur(rng.random((12, 12, 3)), BlurSpec(1.0, 5))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_noise_is_seeded_and_clamped(self, rng):
        x = rng.random((12, 12, 3))
        spec = BlurSpec(1.0, 5, seed=3, noise_std=0.5)
        a, b = gaussian_blur(x, spec), gaussian_blur(x, spec)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert not np.allclose(a, gaussian_blur(x, BlurSpec(1.0, 5)))

    def test_too_small(self, rng):
        with pytest.raises(ValueError):
            gaussian_blur(rng.random((8, 20, 1)), BlurSpec(1.5, 9))

    def test_invalid_blur_params(self):
        with pytest.raises(ValueError):
            BlurSpec(kernel_size=4)
        with pytest.raises(ValueError):
            BlurSpec(sigma=0)


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = PairManifest([PairRow("a", "d/a.ppm", "c/a.ppm", "train"), PairRow("b", "d/b.ppm", None, "test")])
        write_manifest(m, tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text() == "id,degraded,clean,split\na,d/a.ppm,c/a.ppm,train\nb,d/b.ppm,,test\n"
        back = read_manifest(tmp_path / "m.csv")
        assert back.rows == m.rows
        assert back.clean_path(back.rows[0]) == tmp_path / "c/a.ppm"
        assert back.clean_path(back.rows[1]) is None

    def test_invariants(self):
        with pytest.raises(ValueError, match="duplicate"):
            PairManifest([PairRow("a", "x", "y", "train"), PairRow("a", "z", "w", "val")])
        with pytest.raises(ValueError, match="clean"):
            PairManifest([PairRow("a", "x", None, "val")])
        with pytest.raises(ValueError, match="split"):
            PairManifest([PairRow("a", "x", "y", "holdout")])

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("a,b\n")
        with pytest.raises(FormatError):
            read_manifest(tmp_path / "m.csv")

    def test_split_counts(self):
        assert split_counts(10, (0.8, 0.2, 0.0)) == (8, 2, 0)
        assert split_counts(7, (0.5, 0.25, 0.25)) == (4, 2, 1)
        with pytest.raises(ValueError):
            split_counts(10, (0.8, 0.3, 0.0))


class TestSyntheticDataset:
    def test_counts_and_files(self, tmp_path):
        clean = write_noise_images(tmp_path / "clean", 10)
        m = build_synthetic_dataset(clean, tmp_path / "out", BlurSpec(1.5, 9), (0.8, 0.2, 0.0), seed=7)
        assert Counter(r.split for r in m.rows) == {"train": 8, "val": 2}
        assert read_manifest(tmp_path / "out" / "manifest.csv").rows == m.rows
        assert all(m.degraded_path(r).exists() and m.clean_path(r).exists() for r in m.rows)

    def test_deterministic(self, tmp_path):
        clean = write_noise_images(tmp_path / "clean", 10)
        build_synthetic_dataset(clean, tmp_path / "a", BlurSpec(noise_std=0.05), (0.6, 0.2, 0.2), seed=5)
        build_synthetic_dataset(clean, tmp_path / "b", BlurSpec(noise_std=0.05), (0.6, 0.2, 0.2), seed=5)
        assert (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()
        for f in sorted((tmp_path / "a" / "degraded").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / "degraded" / f.name).read_bytes()

    def test_degraded_equals_blur_of_clean(self, tmp_path):
        clean = write_noise_images(tmp_path / "clean", 4)
        spec = BlurSpec(1.5, 9)
        m = build_synthetic_dataset(clean, tmp_path / "out", spec, (1.0, 0.0, 0.0))
        for r in m.rows:
            expected = to_image(gaussian_blur(load_tensor(m.clean_path(r)), spec))
            np.testing.assert_array_equal(read_image(m.degraded_path(r)), expected)

    def test_empty_dir(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ValueError, match="no .ppm"):
            build_synthetic_dataset(tmp_path / "empty", tmp_path / "out", BlurSpec(), (1.0, 0.0, 0.0))

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            build_synthetic_dataset(tmp_path / "nope", tmp_path / "out", BlurSpec(), (1.0, 0.0, 0.0))


class TestBatches:
    @pytest.fixture
    def manifest(self):
        return PairManifest([PairRow(f"r{i}", f"d{i}", f"c{i}", "train") for i in range(5)] +
                            [PairRow("v", "dv", "cv", "val")])

    def test_sizes(self, manifest):
        assert [len(b) for b in batch_rows(manifest, "train", 2, seed=0, epoch=1)] == [2, 2, 1]

    def test_determinism(self, manifest):
        a = batch_rows(manifest, "train", 2, seed=0, epoch=1)
        assert a == batch_rows(manifest, "train", 2, seed=0, epoch=1)
        orders = {tuple(r.id for b in batch_rows(manifest, "train", 5, 0, e) for r in b) for e in range(1, 8)}
        assert len(orders) > 1

    @given(st.integers(1, 7), st.integers(0, 1000), st.integers(1, 50))
    def test_permutation_of_split(self, batch_size, seed, epoch):
        manifest = PairManifest([PairRow(f"r{i}", f"d{i}", f"c{i}", "train") for i in range(5)])
        rows = [r for b in batch_rows(manifest, "train", batch_size, seed, epoch) for r in b]
        assert Counter(rows) == Counter(manifest.split("train"))

    def test_unknown_split(self, manifest):
        with pytest.raises(ValueError, match="unknown split"):
            batch_rows(manifest, "holdout", 2, 0, 1)

    def test_bad_batch_size(self, manifest):
        with pytest.raises(ValueError):
            batch_rows(manifest, "train", 0, 0, 1)

    def test_loads_tensor_pairs(self, tmp_path):
        clean = write_noise_images(tmp_path / "clean", 3, size=12)
        m = build_synthetic_dataset(clean, tmp_path / "out", BlurSpec(1.0, 3), (1.0, 0.0, 0.0))
        loaded = list(batches(m, "train", 2, seed=0, epoch=1))
        assert [len(b) for b in loaded] == [2, 1]
        x, y = loaded[0][0]
        assert x.shape == y.shape == (12, 12, 3) and x.dtype == np.float32
