import numpy as np
import pytest

from udamix import colorspace

from oracles import reference_gray_lightness


def solid(rgb, shape=(3, 3)):
    return np.full(shape + (3,), rgb, dtype=np.uint8)


class TestRgbLabConversion:
    def test_white_point(self):
        lab = colorspace.rgb_to_lab(solid((255, 255, 255)))
        assert lab[0, 0, 0] == pytest.approx(100.0, abs=0.01)
        assert lab[0, 0, 1] == pytest.approx(0.0, abs=0.01)
        assert lab[0, 0, 2] == pytest.approx(0.0, abs=0.01)

    def test_black(self):
        lab = colorspace.rgb_to_lab(solid((0, 0, 0)))
        assert np.allclose(lab[0, 0], 0.0, atol=1e-9)

    def test_gray_against_reference_colorimetry(self):
        lab = colorspace.rgb_to_lab(solid((119, 119, 119)))
        assert lab[0, 0, 0] == pytest.approx(reference_gray_lightness(119), abs=0.05)
        assert lab[0, 0, 1] == pytest.approx(0.0, abs=0.001)
        assert lab[0, 0, 2] == pytest.approx(0.0, abs=0.001)

    def test_roundtrip_error_within_one_level(self):
        rng = np.random.default_rng(0)
        image = rng.integers(0, 256, size=(32, 32, 3)).astype(np.uint8)
        back = colorspace.lab_to_rgb(colorspace.rgb_to_lab(image))
        assert np.abs(back.astype(int) - image.astype(int)).max() <= 1

    def test_lab_ranges_over_gamut(self):
        rng = np.random.default_rng(1)
        image = rng.integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
        lab = colorspace.rgb_to_lab(image)
        assert lab[..., 0].min() >= 0.0 and lab[..., 0].max() <= 100.0
        assert lab[..., 1:].min() >= -128.0 and lab[..., 1:].max() <= 127.0

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            colorspace.rgb_to_lab(np.zeros((4, 4), np.uint8))


class TestChannelStats:
    def test_constant_image(self):
        lab = np.full((4, 5, 3), (50.0, 10.0, -20.0))
        stats = colorspace.channel_stats(lab)
        assert stats.mean == pytest.approx((50.0, 10.0, -20.0))
        assert stats.std == pytest.approx((0.0, 0.0, 0.0))

    def test_two_values(self):
        lab = np.zeros((1, 2, 3))
        lab[0, 0, 0] = 0.0
        lab[0, 1, 0] = 100.0
        stats = colorspace.channel_stats(lab)
        assert stats.mean[0] == pytest.approx(50.0)
        assert stats.std[0] == pytest.approx(50.0)

    def test_stats_survive_rgb_roundtrip(self):
        rng = np.random.default_rng(2)
        image = rng.integers(20, 236, size=(48, 48, 3)).astype(np.uint8)
        lab = colorspace.rgb_to_lab(image)
        round_lab = colorspace.rgb_to_lab(colorspace.lab_to_rgb(lab))
        a = colorspace.channel_stats(lab)
        b = colorspace.channel_stats(round_lab)
        assert np.allclose(a.mean, b.mean, atol=0.1)
        assert np.allclose(a.std, b.std, atol=0.1)

    def test_dict_roundtrip(self):
        stats = colorspace.ChannelStats((1.0, 2.0, 3.0), (4.0, 5.0, 6.0))
        assert colorspace.ChannelStats.from_dict(stats.to_dict()) == stats


class TestColorTransfer:
    def test_identity_transfer(self):
        rng = np.random.default_rng(3)
        lab = colorspace.rgb_to_lab(
            rng.integers(30, 220, size=(16, 16, 3)).astype(np.uint8)
        )
        out = colorspace.color_transfer(lab, colorspace.channel_stats(lab))
        assert np.abs(out - lab).max() <= 1e-9

    def test_constant_source_lands_on_target_means(self):
        lab = np.full((4, 4, 3), (30.0, 5.0, -5.0))
        target = colorspace.ChannelStats((70.0, -10.0, 12.0), (9.0, 3.0, 3.0))
        out = colorspace.color_transfer(lab, target)
        assert np.allclose(out[..., 0], 70.0)
        assert np.allclose(out[..., 1], -10.0)
        assert np.allclose(out[..., 2], 12.0)

    def test_two_point_transfer(self):
        lab = np.zeros((1, 2, 3))
        lab[0, 0, 0] = 0.0
        lab[0, 1, 0] = 100.0
        target = colorspace.ChannelStats((60.0, 0.0, 0.0), (25.0, 0.0, 0.0))
        out = colorspace.color_transfer(lab, target)
        assert out[0, 0, 0] == pytest.approx(35.0)
        assert out[0, 1, 0] == pytest.approx(85.0)

    def test_result_matches_target_stats(self):
        rng = np.random.default_rng(4)
        lab = np.stack(
            [
                rng.uniform(30, 70, size=(20, 20)),
                rng.uniform(-20, 20, size=(20, 20)),
                rng.uniform(-20, 20, size=(20, 20)),
            ],
            axis=-1,
        )
        target = colorspace.ChannelStats((55.0, 4.0, -6.0), (8.0, 5.0, 7.0))
        out = colorspace.color_transfer(lab, target)
        stats = colorspace.channel_stats(out)
        assert np.allclose(stats.mean, target.mean, atol=1e-3)
        assert np.allclose(stats.std, target.std, atol=1e-3)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        lab = np.stack(
            [
                rng.uniform(30, 70, size=(12, 12)),
                rng.uniform(-20, 20, size=(12, 12)),
                rng.uniform(-20, 20, size=(12, 12)),
            ],
            axis=-1,
        )
        target = colorspace.ChannelStats((50.0, 0.0, 0.0), (10.0, 6.0, 6.0))
        once = colorspace.color_transfer(lab, target)
        twice = colorspace.color_transfer(once, target)
        assert np.abs(twice - once).max() <= 1e-6

    def test_outputs_stay_in_channel_ranges(self):
        lab = np.stack(
            [
                np.array([[5.0, 95.0]]),
                np.array([[-100.0, 100.0]]),
                np.array([[-100.0, 100.0]]),
            ],
            axis=-1,
        )
        target = colorspace.ChannelStats((50.0, 0.0, 0.0), (200.0, 200.0, 200.0))
        out = colorspace.color_transfer(lab, target)
        assert out[..., 0].min() >= 0.0 and out[..., 0].max() <= 100.0
        assert out[..., 1:].min() >= -128.0 and out[..., 1:].max() <= 127.0


class TestDatasetStats:
    def test_average_of_per_image_stats(self):
        a = np.full((2, 2, 3), (20.0, 0.0, 0.0))
        b = np.full((2, 2, 3), (40.0, 10.0, 0.0))
        stats = colorspace.dataset_stats([a, b])
        assert stats.mean == pytest.approx((30.0, 5.0, 0.0))
        assert stats.std == pytest.approx((0.0, 0.0, 0.0))

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            colorspace.dataset_stats([])
