"""Image quality metrics and the train/test split."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ImageTooSmallError, ShapeMismatchError, TooFewImagesError

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP_DB) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images report cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return cap
    return min(10.0 * np.log10(1.0 / mse), cap)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (r / sigma) ** 2)
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gaussian-weighted means over all full windows (valid mode)."""
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5),
    k1=0.01, k2=0.03, dynamic range 1; mean over windows and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ImageTooSmallError(
            f"need at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.shape}")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    values = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = _window_mean(x, kernel)
        mu_y = _window_mean(y, kernel)
        var_x = _window_mean(x * x, kernel) - mu_x ** 2
        var_y = _window_mean(y * y, kernel) - mu_y ** 2
        cov = _window_mean(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        values.append(num / den)
    return float(np.mean(values))


def split_image_ids(image_ids: list, n_timestamps: int, n_cameras: int
                    ) -> tuple[list, list]:
    """Per camera, every 8th image (time order, index 0 mod 8) goes to test."""
    from .scenegen import parse_image_id

    per_cam = {}
    for name in image_ids:
        i, k = parse_image_id(name)
        per_cam.setdefault(k, []).append((i, name))
    train, test = [], []
    for k in sorted(per_cam):
        frames = [name for _, name in sorted(per_cam[k])]
        if len(frames) < 8:
            raise TooFewImagesError(
                f"camera {k} has {len(frames)} images; the 1-in-8 split needs >= 8")
        for idx, name in enumerate(frames):
            (test if idx % 8 == 0 else train).append(name)
    return train, test


def split_dataset(dataset) -> tuple[list, list]:
    return split_image_ids(dataset.image_ids, dataset.n_timestamps,
                           dataset.n_cameras)


@dataclass
class EvalReport:
    per_image: dict = field(default_factory=dict)  # id -> {"psnr", "ssim"}
    split: str = ""
    config_hash: str = ""

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([v["psnr"] for v in self.per_image.values()]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([v["ssim"] for v in self.per_image.values()]))

    def to_dict(self) -> dict:
        return {"per_image": self.per_image, "mean_psnr": self.mean_psnr,
                "mean_ssim": self.mean_ssim, "split": self.split,
                "config_hash": self.config_hash}

    def table(self) -> str:
        lines = [f"{'image':<16} {'psnr_db':>9} {'ssim':>7}"]
        for name in sorted(self.per_image):
            v = self.per_image[name]
            lines.append(f"{name:<16} {v['psnr']:>9.3f} {v['ssim']:>7.4f}")
        lines.append(f"{'mean':<16} {self.mean_psnr:>9.3f} {self.mean_ssim:>7.4f}")
        return "\n".join(lines)
