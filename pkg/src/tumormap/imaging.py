"""Raster primitives: color channels, thresholding and flat morphology.

RGB patches are plain ``uint8`` arrays of shape ``(height, width, 3)`` and
binary masks are ``bool`` arrays of shape ``(height, width)``.  Scalar
channels carry a tag so that histograms and dictionaries can check they were
computed on the same kind of image.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

# lower clamp for the arctan term of the hematoxylin transform
H_EPS = 1e-4


class Channel(str, enum.Enum):
    H = "H"
    V = "V"
    GRAY = "GRAY"


class Polarity(str, enum.Enum):
    ABOVE = "ABOVE"
    BELOW = "BELOW"


class MorphOp(str, enum.Enum):
    ERODE = "ERODE"
    DILATE = "DILATE"
    OPEN = "OPEN"
    CLOSE = "CLOSE"


@dataclass(frozen=True)
class ScalarImage:
    values: np.ndarray
    channel: Channel

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError(f"scalar image must be a non-empty 2-D array, got shape {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def replace(self, values: np.ndarray) -> "ScalarImage":
        return ScalarImage(values, self.channel)


@dataclass(frozen=True)
class StructuringElement:
    shape: str = "DISK"
    radius: int = 1

    def __post_init__(self):
        if self.shape not in ("DISK", "SQUARE"):
            raise ValueError(f"unknown structuring element shape {self.shape!r}")
        if self.radius < 1:
            raise ValueError("structuring element radius must be >= 1")

    def footprint(self) -> np.ndarray:
        r = self.radius
        if self.shape == "SQUARE":
            return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
        return dx * dx + dy * dy <= r * r


def disk(radius: int) -> StructuringElement:
    return StructuringElement("DISK", radius)


def square(radius: int) -> StructuringElement:
    return StructuringElement("SQUARE", radius)


def as_rgb(patch) -> np.ndarray:
    arr = np.asarray(patch)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"expected an (H, W, 3) RGB array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("RGB values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def _split(patch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    arr = as_rgb(patch).astype(np.float64)
    return arr[..., 0], arr[..., 1], arr[..., 2]


def to_v_channel(patch) -> ScalarImage:
    """Violet channel ``0.5 (R + B) / |(R, G, B)|``, zero for black pixels."""
    r, g, b = _split(patch)
    norm = np.sqrt(r * r + g * g + b * b)
    v = np.zeros_like(norm)
    np.divide(0.5 * (r + b), norm, out=v, where=norm > 0)
    return ScalarImage(v, Channel.V)


def raw_h_channel(patch) -> np.ndarray:
    """Unscaled hematoxylin channel ``R / arctan(B / max(R, G))``.

    ``max(R, G) == 0`` reads as an infinite ratio (arctan = pi/2) and the
    arctan term is clamped below at ``H_EPS`` so that ``B == 0`` stays finite.
    """
    r, g, b = _split(patch)
    m = np.maximum(r, g)
    ratio = np.divide(b, m, out=np.full_like(b, np.inf), where=m > 0)
    c3 = np.maximum(np.arctan(ratio), H_EPS)
    h = r / c3
    h[r == 0] = 0.0
    return h


def rescale_to_byte_range(values: np.ndarray) -> np.ndarray:
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        return np.zeros_like(values, dtype=np.float64)
    return (values - lo) * (255.0 / (hi - lo))


def to_h_channel(patch) -> ScalarImage:
    return ScalarImage(rescale_to_byte_range(raw_h_channel(patch)), Channel.H)


def to_gray(patch) -> ScalarImage:
    r, g, b = _split(patch)
    return ScalarImage(0.299 * r + 0.587 * g + 0.114 * b, Channel.GRAY)


def channel_image(patch, channel: Channel | str) -> ScalarImage:
    channel = Channel(channel)
    if channel is Channel.H:
        return to_h_channel(patch)
    if channel is Channel.V:
        return to_v_channel(patch)
    return to_gray(patch)


def otsu_threshold(values: np.ndarray, nbins: int = 256) -> float:
    """Otsu threshold over an ``nbins`` histogram spanning the value range.

    Candidate thresholds are the inner bin edges; the lower class holds the
    values strictly below the edge.  Class means use the exact per-bin sums
    rather than bin centres.  Ties go to the lowest edge.  A constant input
    returns the constant itself.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    lo = float(v.min())
    hi = float(v.max())
    if hi <= lo:
        return lo
    width = (hi - lo) / nbins
    idx = np.minimum(((v - lo) / width).astype(np.int64), nbins - 1)
    counts = np.bincount(idx, minlength=nbins).astype(np.float64)
    sums = np.bincount(idx, weights=v, minlength=nbins)
    n0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(sums)[:-1]
    n = float(v.size)
    total = float(sums.sum())
    n1 = n - n0
    s1 = total - s0
    valid = (n0 > 0) & (n1 > 0)
    score = np.full(nbins - 1, -1.0)
    mu0 = np.divide(s0, n0, out=np.zeros_like(s0), where=valid)
    mu1 = np.divide(s1, n1, out=np.zeros_like(s1), where=valid)
    score[valid] = (n0[valid] / n) * (n1[valid] / n) * (mu0[valid] - mu1[valid]) ** 2
    k = int(np.argmax(score))
    return lo + (k + 1) * width


def threshold(img: ScalarImage | np.ndarray, method="OTSU", polarity: Polarity | str = Polarity.ABOVE) -> np.ndarray:
    """Binarize a scalar image.

    ``method`` is ``"OTSU"`` or a number used as a fixed threshold.  ``ABOVE``
    keeps values strictly greater than the threshold, ``BELOW`` values
    strictly less, so a constant image under Otsu yields an empty mask for
    either polarity.
    """
    values = img.values if isinstance(img, ScalarImage) else np.asarray(img, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot threshold an empty image")
    if isinstance(method, str):
        if method.upper() != "OTSU":
            raise ValueError(f"unknown threshold method {method!r}")
        t = otsu_threshold(values)
    else:
        t = float(method)
    if Polarity(polarity) is Polarity.ABOVE:
        return values > t
    return values < t


def _binary(mask: np.ndarray, op: MorphOp, fp: np.ndarray) -> np.ndarray:
    # out-of-bounds pixels are neutral: true for erosion, false for dilation
    if op is MorphOp.ERODE:
        return ndimage.binary_erosion(mask, structure=fp, border_value=1)
    if op is MorphOp.DILATE:
        return ndimage.binary_dilation(mask, structure=fp, border_value=0)
    if op is MorphOp.OPEN:
        return _binary(_binary(mask, MorphOp.ERODE, fp), MorphOp.DILATE, fp)
    return _binary(_binary(mask, MorphOp.DILATE, fp), MorphOp.ERODE, fp)


def _gray(values: np.ndarray, op: MorphOp, fp: np.ndarray) -> np.ndarray:
    if op is MorphOp.ERODE:
        return ndimage.grey_erosion(values, footprint=fp, mode="constant", cval=np.inf)
    if op is MorphOp.DILATE:
        return ndimage.grey_dilation(values, footprint=fp, mode="constant", cval=-np.inf)
    if op is MorphOp.OPEN:
        return _gray(_gray(values, MorphOp.ERODE, fp), MorphOp.DILATE, fp)
    return _gray(_gray(values, MorphOp.DILATE, fp), MorphOp.ERODE, fp)


def morph(img, op: MorphOp | str, se: StructuringElement):
    """Flat erosion/dilation/opening/closing with the footprint clipped at the border.

    Accepts a boolean mask (set operations) or a :class:`ScalarImage` /
    float array (min/max filters) and returns the same kind of object.
    """
    op = MorphOp(op)
    fp = se.footprint()
    if isinstance(img, ScalarImage):
        return img.replace(_gray(img.values.astype(np.float64), op, fp))
    arr = np.asarray(img)
    if arr.dtype == bool:
        return _binary(arr, op, fp)
    return _gray(arr.astype(np.float64), op, fp)


def read_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_rgb(path: str | Path, rgb: np.ndarray) -> None:
    # no timestamps or other ancillary chunks, so output bytes are reproducible
    Image.fromarray(as_rgb(rgb)).save(path, format="PNG")


def read_mask(path: str | Path, roi_is_dark: bool = True) -> np.ndarray:
    """Load a ground-truth mask PNG; by default dark pixels mark the ROI."""
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"))
    return gray < 128 if roi_is_dark else gray >= 128


def write_mask(path: str | Path, mask: np.ndarray, roi_is_dark: bool = True) -> None:
    mask = np.asarray(mask, dtype=bool)
    on, off = (0, 255) if roi_is_dark else (255, 0)
    gray = np.where(mask, on, off).astype(np.uint8)
    Image.fromarray(gray).save(path, format="PNG")


def scalar_to_uint8(img: ScalarImage) -> np.ndarray:
    """8-bit rendering of a channel, for visual inspection only."""
    return np.clip(np.rint(rescale_to_byte_range(img.values)), 0, 255).astype(np.uint8)


def write_scalar(path: str | Path, img: ScalarImage) -> None:
    Image.fromarray(scalar_to_uint8(img)).save(path, format="PNG")


V_MAX = math.sqrt(2.0) / 2.0
