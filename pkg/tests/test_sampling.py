import math

import numpy as np
import pytest

from driftfield.sampling import (
    PointCloud,
    load_cloud,
    ring_mog_centers,
    sample_prior,
    sample_raw_mog,
    sample_ring_mog,
    sample_toy2d,
    save_cloud,
)


class TestPointCloud:
    def test_validation(self):
        with pytest.raises(ValueError):
            PointCloud(np.empty((0, 2)), 0, "data_p")
        with pytest.raises(ValueError):
            PointCloud(np.array([[np.inf, 0.0]]), 0, "data_p")
        with pytest.raises(ValueError):
            PointCloud(np.zeros((2, 2)), 0, "mystery")


class TestRingMog:
    def test_noise_off_collapses_to_centers(self):
        cloud = sample_ring_mog(2, 500, "p", seed=13, noise_sd=0.0)
        centers = ring_mog_centers(2, "p", seed=13)
        dists = np.linalg.norm(cloud.data[:, None, :] - centers[None], axis=2)
        assert np.all(dists.min(axis=1) < 1e-12)
        # all six centers on the radius-3 circle
        np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 3.0, rtol=1e-12)
        assert len(np.unique(np.round(cloud.data, 9), axis=0)) == 6

    def test_q_rotated_by_pi_over_6(self):
        for D in (2, 17):
            cp = ring_mog_centers(D, "p", seed=5)
            cq = ring_mog_centers(D, "q", seed=5)
            for k in range(6):
                cos = float(cp[k] @ cq[k]) / (
                    np.linalg.norm(cp[k]) * np.linalg.norm(cq[k])
                )
                assert math.acos(np.clip(cos, -1, 1)) == pytest.approx(
                    math.pi / 6, abs=1e-9
                )

    def test_shared_plane_between_roles(self):
        # q centers must lie in the span of the p centers' plane
        cp = ring_mog_centers(64, "p", seed=9)
        cq = ring_mog_centers(64, "q", seed=9)
        basis, _, _, _ = np.linalg.lstsq(cp.T, cq.T, rcond=None)
        residual = cq.T - cp.T @ basis
        assert np.linalg.norm(residual) < 1e-9

    def test_mean_squared_norm(self):
        # E||x||^2 = R^2 + sd^2 D = 9 + 0.16 * 100 = 25
        cloud = sample_ring_mog(100, 10_000, "p", seed=21)
        sq = np.sum(cloud.data**2, axis=1)
        se = float(np.std(sq, ddof=1) / math.sqrt(len(sq)))
        assert abs(float(np.mean(sq)) - 25.0) < 3.0 * se

    def test_rejects_d1(self):
        with pytest.raises(ValueError):
            sample_ring_mog(1, 10, "p", 0)

    def test_shell_concentration(self):
        # sd of ||x||^2 / E||x||^2 decays like D^{-1/2} within a factor 2
        rel = {}
        for D in (64, 256, 1024):
            cloud = sample_ring_mog(D, 20_000, "p", seed=3)
            sq = np.sum(cloud.data**2, axis=1)
            rel[D] = float(np.std(sq) / np.mean(sq)) * math.sqrt(D)
        values = list(rel.values())
        assert max(values) / min(values) < 2.0


class TestRawMog:
    def test_noise_off_norms_p(self):
        cloud = sample_raw_mog(50, 2000, "p", seed=4, noise_sd=0.0)
        norms = np.linalg.norm(cloud.data, axis=1)
        targets = np.array([1.5, 2.5, 3.0, 4.0, 5.0, 6.0])
        assert np.all(np.min(np.abs(norms[:, None] - targets), axis=1) < 1e-9)

    def test_noise_off_norms_q(self):
        cloud = sample_raw_mog(8, 2000, "q", seed=4, noise_sd=0.0)
        norms = np.linalg.norm(cloud.data, axis=1)
        targets = np.array([2.0, 3.5, 4.0, 5.5])
        assert np.all(np.min(np.abs(norms[:, None] - targets), axis=1) < 1e-9)

    def test_mode_frequencies(self):
        cloud = sample_raw_mog(50, 10_000, "p", seed=8, noise_sd=0.0)
        norms = np.round(np.linalg.norm(cloud.data, axis=1), 6)
        _, counts = np.unique(norms, return_counts=True)
        freqs = counts / len(norms)
        assert len(freqs) == 6
        assert np.all(np.abs(freqs - 1.0 / 6.0) < 0.02)

    def test_d1_directions_are_signs(self):
        cloud = sample_raw_mog(1, 100, "p", seed=2, noise_sd=0.0)
        assert np.all(np.isfinite(cloud.data))


class TestToy2d:
    def test_checkerboard_support(self):
        cloud = sample_toy2d("checkerboard", 5000, seed=1)
        data = cloud.data
        assert np.all((data >= -2.0) & (data <= 2.0))
        cell = np.floor(data + 2.0).astype(int)
        cell = np.clip(cell, 0, 3)
        assert np.all((cell[:, 0] + cell[:, 1]) % 2 == 0)

    def test_two_moons_support_noise_off(self):
        cloud = sample_toy2d("two_moons", 4000, seed=6, noise_sd=0.0)
        x, y = cloud.data[:, 0], cloud.data[:, 1]
        on_moon0 = (np.abs(x**2 + y**2 - 1.0) < 1e-9) & (y >= -1e-12)
        on_moon1 = (np.abs((x - 1.0) ** 2 + (y - 0.5) ** 2 - 1.0) < 1e-9) & (
            y <= 0.5 + 1e-12
        )
        assert np.all(on_moon0 | on_moon1)
        assert on_moon0.any() and on_moon1.any()

    def test_swiss_roll_radius_monotone_in_angle(self):
        cloud = sample_toy2d("swiss_roll", 3000, seed=7, noise_sd=0.0)
        radius = np.linalg.norm(cloud.data, axis=1)
        # the parametric radius is t/3; recover t and check the curve
        t = 3.0 * radius
        np.testing.assert_allclose(
            cloud.data,
            np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / 3.0,
            atol=1e-9,
        )
        assert radius.min() >= 1.5 * math.pi / 3.0 - 1e-9
        assert radius.max() <= 4.5 * math.pi / 3.0 + 1e-9

    def test_ring_mog_alias(self):
        cloud = sample_toy2d("ring_mog", 50, seed=3)
        ref = sample_ring_mog(2, 50, "p", seed=3)
        np.testing.assert_array_equal(cloud.data, ref.data)

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            sample_toy2d("spiral", 10, 0)


class TestPrior:
    def test_moments(self):
        cloud = sample_prior(32, 100_000, seed=11)
        means = cloud.data.mean(axis=0)
        variances = cloud.data.var(axis=0)
        assert np.all(np.abs(means) < 4.0 / math.sqrt(100_000))
        assert np.all(np.abs(variances - 1.0) < 0.03)

    def test_determinism(self):
        a = sample_prior(32, 100, seed=5)
        b = sample_prior(32, 100, seed=5)
        np.testing.assert_array_equal(a.data, b.data)


class TestDeterminismAndIO:
    @pytest.mark.parametrize(
        "factory",
        [
            lambda s: sample_ring_mog(16, 64, "q", s),
            lambda s: sample_raw_mog(16, 64, "p", s),
            lambda s: sample_toy2d("swiss_roll", 64, s),
            lambda s: sample_prior(8, 64, s),
        ],
    )
    def test_bit_identical_reruns(self, factory):
        a, b = factory(42), factory(42)
        np.testing.assert_array_equal(a.data, b.data)
        c = factory(43)
        assert not np.array_equal(a.data, c.data)

    def test_roles_draw_independent_streams(self):
        p = sample_ring_mog(4, 128, "p", seed=1, noise_sd=0.0)
        q = sample_ring_mog(4, 128, "q", seed=1, noise_sd=0.0)
        assert not np.array_equal(p.data, q.data)

    def test_csv_roundtrip(self, tmp_path):
        cloud = sample_raw_mog(5, 37, "q", seed=99)
        path = tmp_path / "cloud.csv"
        save_cloud(cloud, path)
        back = load_cloud(path)
        np.testing.assert_array_equal(back.data, cloud.data)
        assert back.seed == cloud.seed
        assert back.label == cloud.label
        header = path.read_text().splitlines()[0]
        assert header == "dim=5,n=37,seed=99,label=model_q"
