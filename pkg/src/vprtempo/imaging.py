"""Image loading and the gamma -> resize -> patch-normalise -> amplitude pipeline.

All arithmetic between load and the patch-normalised output is float64;
images are quantised to 8 bits only when a :class:`ProcessedImage` is built.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DatasetError, InvalidInputError

GAMMA_FORMULAS = ("log_ratio", "literal")

# z-scores inside +-ZSCORE_WINDOW map linearly onto [0, 255]
ZSCORE_WINDOW = 3.0
# patch std at or below this many intensity levels counts as constant
FLAT_PATCH_STD = 1e-6


@dataclass(frozen=True)
class PreprocessConfig:
    lam: float = 0.5
    target_width: int = 28
    target_height: int = 28
    patch_width: int = 7
    patch_height: int = 7
    gamma_formula: str = "log_ratio"

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise InvalidInputError(f"lambda must be in (0, 1], got {self.lam}")
        for name in ("target_width", "target_height", "patch_width", "patch_height"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.target_width % self.patch_width or self.target_height % self.patch_height:
            raise InvalidInputError(
                f"patch {self.patch_width}x{self.patch_height} does not tile "
                f"{self.target_width}x{self.target_height}"
            )
        if self.gamma_formula not in GAMMA_FORMULAS:
            raise InvalidInputError(f"gamma_formula must be one of {GAMMA_FORMULAS}")

    @property
    def size(self) -> int:
        return self.target_width * self.target_height


@dataclass(frozen=True)
class ProcessedImage:
    """Patch-normalised 8-bit image, ``data`` shaped ``(height, width)``."""

    data: np.ndarray

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def as_image(img) -> np.ndarray:
    """Validate a 2-D intensity grid and return it as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 255.0:
        raise InvalidInputError("pixel values must lie in [0, 255]")
    return arr


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG as an 8-bit grayscale ``(height, width)`` array.

    Colour images go through PIL's ``L`` conversion, which is ITU-R BT.601 luma.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                scale = 65535.0 if arr.max() > 255 else 255.0
                return np.clip(np.rint(arr * 255.0 / scale), 0, 255).astype(np.uint8)
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def save_image(path, img) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path)


def gamma_exponent(mean: float, lam: float, formula: str = "log_ratio") -> float:
    if formula == "log_ratio":
        return math.log(lam * 255.0) / math.log(mean)
    # printed form exp(lam*255)/exp(mean); overflows to inf for dark images
    try:
        return math.exp(lam * 255.0 - mean)
    except OverflowError:
        return math.inf


def gamma_correct(img, lam: float = 0.5, formula: str = "log_ratio") -> np.ndarray:
    """Raise every pixel to a power chosen from the image mean, clamped at 255.

    With the default ``log_ratio`` formula the mean intensity is mapped onto
    ``lam * 255``. Images with mean <= 1 are returned unchanged with a warning.
    """
    arr = as_image(img)
    if not 0.0 < lam <= 1.0:
        raise InvalidInputError(f"lambda must be in (0, 1], got {lam}")
    mean = float(arr.mean())
    if mean <= 1.0:
        warnings.warn(f"image mean {mean:.3f} <= 1; gamma correction skipped", RuntimeWarning)
        return arr.copy()
    gamma = gamma_exponent(mean, lam, formula)
    with np.errstate(over="ignore"):
        out = np.power(arr, gamma)
    return np.minimum(out, 255.0)


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # pixel-centre aligned sampling, coordinates clamped to the border
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize(img, width: int, height: int) -> np.ndarray:
    """Bilinear resize to ``width`` x ``height`` (separable, half-pixel centres)."""
    arr = as_image(img)
    if width < 1 or height < 1:
        raise InvalidInputError(f"target size must be >= 1, got {width}x{height}")
    if arr.shape == (height, width):
        return arr.copy()
    lo, hi, frac = _axis_weights(arr.shape[1], width)
    top, bottom = arr[:, lo], arr[:, hi]
    rows = top + frac * (bottom - top)
    lo, hi, frac = _axis_weights(arr.shape[0], height)
    top, bottom = rows[lo, :], rows[hi, :]
    return top + frac[:, None] * (bottom - top)


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x) + 0.5)


def patch_normalize(img, cfg: PreprocessConfig = PreprocessConfig()) -> ProcessedImage:
    """Standardise each non-overlapping patch and map z-scores onto [0, 255].

    ``z`` becomes ``127.5 + 127.5 * z / 3`` (clamped), so a +-3 sigma window
    fills the 8-bit range; constant patches become 127.5, i.e. 128 after
    rounding.
    """
    arr = as_image(img)
    h, w = arr.shape
    ph, pw = cfg.patch_height, cfg.patch_width
    if h % ph or w % pw:
        raise InvalidInputError(f"patch {pw}x{ph} does not tile image {w}x{h}")
    blocks = arr.reshape(h // ph, ph, w // pw, pw)
    mean = blocks.mean(axis=(1, 3), keepdims=True)
    dev = blocks - mean
    std = np.sqrt((dev * dev).mean(axis=(1, 3), keepdims=True))
    flat = std <= FLAT_PATCH_STD
    z = np.where(flat, 0.0, dev / np.where(flat, 1.0, std))
    out = np.clip(127.5 + 127.5 * z / ZSCORE_WINDOW, 0.0, 255.0).reshape(h, w)
    return ProcessedImage(round_half_up(out).astype(np.uint8))


def encode_spikes(img: ProcessedImage) -> np.ndarray:
    """Flatten to amplitudes ``pixel / 255``: 1.0 is a full spike, 0.0 no spike."""
    data = img.data if isinstance(img, ProcessedImage) else np.asarray(img)
    return data.reshape(-1).astype(np.float64) / 255.0


def preprocess(img, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Raw grayscale image -> spike amplitude vector of length ``W*H``."""
    corrected = gamma_correct(img, cfg.lam, cfg.gamma_formula)
    small = resize(corrected, cfg.target_width, cfg.target_height)
    return encode_spikes(patch_normalize(small, cfg))


def sad_preprocess(img, cfg: PreprocessConfig = PreprocessConfig(), full: bool = False) -> ProcessedImage:
    """Gamma correction and resize only (the SAD baseline input); ``full`` adds patch normalisation."""
    small = resize(gamma_correct(img, cfg.lam, cfg.gamma_formula), cfg.target_width, cfg.target_height)
    if full:
        return patch_normalize(small, cfg)
    return ProcessedImage(round_half_up(np.clip(small, 0.0, 255.0)).astype(np.uint8))
