"""sRGB <-> CIELAB conversion and statistics-matching color transfer.

The conversion runs the standard sRGB (D65) -> XYZ -> CIELAB pipeline.
Lab images are float arrays of shape (H, W, 3) with L in [0, 100] and
a, b in [-128, 127]. Transfer matches per-channel mean/std of a source
image to target statistics (Reinhard-style), clamping back to range.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0

L_RANGE = (0.0, 100.0)
AB_RANGE = (-128.0, 127.0)

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel (L, a, b) mean and population standard deviation."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        mean = tuple(float(v) for v in d["mean"])
        std = tuple(float(v) for v in d["std"])
        if len(mean) != 3 or len(std) != 3:
            raise ValueError("channel stats need exactly 3 channels")
        if any(s < 0 for s in std):
            raise ValueError("channel std must be >= 0")
        return cls(mean, std)  # type: ignore[arg-type]


def _srgb_linearize(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_delinearize(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(u: np.ndarray) -> np.ndarray:
    return np.where(u > _DELTA, u**3, 3 * _DELTA**2 * (u - 4.0 / 29.0))


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """Convert an 8-bit sRGB image (H, W, 3) to CIELAB floats."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    rgb = image.astype(np.float64) / 255.0
    xyz = _srgb_linearize(rgb) @ _SRGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE_D65)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Convert a CIELAB image back to 8-bit sRGB, clamping to gamut."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) Lab image, got shape {lab.shape}")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1)
    xyz *= _WHITE_D65
    rgb = _srgb_delinearize(xyz @ _XYZ_TO_SRGB.T)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def channel_stats(lab: np.ndarray) -> ChannelStats:
    """Arithmetic mean and population std per Lab channel."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[2] != 3 or lab[..., 0].size < 1:
        raise ValueError("need a (H, W, 3) Lab image with at least one pixel")
    flat = lab.reshape(-1, 3)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return ChannelStats(tuple(mean.tolist()), tuple(std.tolist()))


def dataset_stats(lab_images: Iterable[np.ndarray]) -> ChannelStats:
    """Dataset-level reference statistics: the mean of per-image stats.

    Averaging per-image means and stds (rather than pooling pixels)
    keeps the std at a typical single-image scale, so transferring an
    individual image toward the aggregate does not overstretch it.
    """
    means = []
    stds = []
    for lab in lab_images:
        stats = channel_stats(lab)
        means.append(stats.mean)
        stds.append(stats.std)
    if not means:
        raise ValueError("need at least one image")
    mean = np.mean(np.asarray(means), axis=0)
    std = np.mean(np.asarray(stds), axis=0)
    return ChannelStats(tuple(mean.tolist()), tuple(std.tolist()))


def color_transfer(source: np.ndarray, target_stats: ChannelStats) -> np.ndarray:
    """Shift source Lab channels to match the target distribution.

    Per channel: v' = (v - mu_s) / sigma_s * sigma_t + mu_t, clamped to
    the channel range. Channels with sigma_s below the floor are
    mean-shifted only, so flat images stay finite.
    """
    source = np.asarray(source, dtype=np.float64)
    stats = channel_stats(source)
    out = np.empty_like(source)
    ranges = (L_RANGE, AB_RANGE, AB_RANGE)
    for c in range(3):
        v = source[..., c]
        mu_s, sd_s = stats.mean[c], stats.std[c]
        mu_t, sd_t = target_stats.mean[c], target_stats.std[c]
        if sd_s < SIGMA_FLOOR:
            shifted = v - mu_s + mu_t
        else:
            shifted = (v - mu_s) / sd_s * sd_t + mu_t
        out[..., c] = np.clip(shifted, ranges[c][0], ranges[c][1])
    return out
