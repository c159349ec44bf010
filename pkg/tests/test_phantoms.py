import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpgd.linops import RadonTransform, SinogramGeometry, radon_forward
from rpgd.metrics import snr
from rpgd.phantoms import (
    DYNAMIC_RANGE,
    MeasurementConfig,
    PhantomSpec,
    add_noise,
    generate_phantom,
    load_split,
    make_phantom_set,
    shepp_logan,
    simulate_measurement,
    split_seeds,
    write_dataset,
)


class TestPhantoms:
    def test_shepp_logan_coverage(self):
        x = shepp_logan(64)
        assert np.count_nonzero(x) > 0.25 * x.size
        assert x.min() >= 0 and x.max() <= DYNAMIC_RANGE[1]

    def test_shepp_logan_symmetric_outline(self):
        # the outer skull ellipse is left-right symmetric
        mask = shepp_logan(64) > 0
        assert np.array_equal(mask[:, :10], mask[:, ::-1][:, :10])

    def test_same_seed_identical(self):
        spec = PhantomSpec("RandomEllipses", 32, seed=7)
        np.testing.assert_array_equal(generate_phantom(spec), generate_phantom(spec))

    def test_different_seeds_differ(self):
        a = generate_phantom(PhantomSpec("RandomEllipses", 32, seed=1))
        b = generate_phantom(PhantomSpec("RandomEllipses", 32, seed=2))
        assert not np.array_equal(a, b)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(8, 40))
    def test_range_clamped(self, seed, size):
        x = generate_phantom(PhantomSpec("RandomEllipses", size, seed=seed))
        assert x.shape == (size, size)
        assert x.min() >= 0.0 and x.max() <= 350.0
        assert x.max() > 0

    @pytest.mark.parametrize("kwargs", [dict(size=4), dict(kind="Blob"), dict(intensity_range=(5.0, 1.0))])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValueError):
            PhantomSpec(**{"kind": "RandomEllipses", "size": 32, **kwargs})


class TestMeasurement:
    def test_degenerate_protocol_matches_forward(self):
        x = shepp_logan(16)
        cfg = MeasurementConfig(12, angle_jitter_std_deg=0.0)
        y, angles = simulate_measurement(x, cfg)
        geo = SinogramGeometry.parallel(16, 12)
        np.testing.assert_array_equal(y, radon_forward(x, geo))
        np.testing.assert_array_equal(angles, geo.angles_deg)

    def test_noiseless_jitter_only(self):
        x = shepp_logan(16)
        y, angles = simulate_measurement(x, MeasurementConfig(12, seed=3))
        nominal = RadonTransform(SinogramGeometry.parallel(16, 12)).forward(x)
        assert not np.array_equal(y, nominal)
        # a 0.05° wobble is a small model mismatch
        assert snr(y, nominal) > 30
        assert np.std(angles - np.asarray(SinogramGeometry.parallel(16, 12).angles_deg)) < 0.2

    @pytest.mark.parametrize("level", [70.0, 45.0, 40.0, 35.0])
    def test_exact_snr(self, level):
        x = shepp_logan(16)
        clean, _ = simulate_measurement(x, MeasurementConfig(12, seed=5))
        noisy, _ = simulate_measurement(x, MeasurementConfig(12, seed=5, measurement_snr_db=level))
        assert snr(noisy, clean) == pytest.approx(level, abs=1e-10)

    def test_forty_db_ratio(self):
        y = np.random.default_rng(0).standard_normal((5, 7))
        n = add_noise(y, 40.0, np.random.default_rng(1)) - y
        assert np.linalg.norm(y) / np.linalg.norm(n) == pytest.approx(100.0, rel=1e-12)

    def test_reproducible(self):
        x = shepp_logan(16)
        cfg = MeasurementConfig(10, seed=9, measurement_snr_db=40.0)
        np.testing.assert_array_equal(simulate_measurement(x, cfg)[0], simulate_measurement(x, cfg)[0])


class TestDatasets:
    def test_seed_split_disjoint(self):
        train, test = split_seeds(475, 25)
        assert not set(train) & set(test)

    def test_train_test_sets_differ(self):
        a = make_phantom_set(3, 16, split="train")
        b = make_phantom_set(3, 16, split="test")
        assert all(not np.array_equal(p, q) for p in a for q in b)

    def test_write_and_load(self, tmp_path):
        manifest = write_dataset(tmp_path, n_train=4, n_test=2, size=16, base_seed=3)
        assert len(list((tmp_path / "phantoms" / "train").glob("*.f64"))) == 4
        assert len(list((tmp_path / "phantoms" / "test").glob("*.f64"))) == 2
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk == json.loads(json.dumps(manifest))
        for a, b in zip(load_split(tmp_path, "test"), make_phantom_set(2, 16, base_seed=3, split="test")):
            np.testing.assert_array_equal(a, b)

    def test_rewrite_is_byte_identical(self, tmp_path):
        write_dataset(tmp_path / "a", n_train=2, n_test=1, size=16)
        write_dataset(tmp_path / "b", n_train=2, n_test=1, size=16)
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
