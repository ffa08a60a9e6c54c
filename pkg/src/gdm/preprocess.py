"""Goal-specific training-image preparation, one pipeline per modality.

- STM: annular band-pass (radii 20..60 px) with a +-30 degree exclusion
  around the vertical frequency axis, isolating tilted standing-wave ripples.
- AFM: notch filter on prominent spectrum columns (horizontal streak
  removal), then a 50th-percentile dark mask and a merged overlay image.
- SEM: bright-strip mask (8-bit intensity strictly above 130) erased by
  fast-marching inpainting with a 3-pixel radius.

Everything here is deterministic; outputs are valid [0, 1] images with the
input's dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .errors import InvalidInputError
from .imagecore import GrayImage

STM_R_LOW = 20.0
STM_R_HIGH = 60.0
STM_THETA_MARGIN_DEG = 30.0
AFM_DC_RADIUS = 50.0
AFM_SMOOTH_SIGMA = 0.1
AFM_NOTCH_HALF_WIDTH = 1
AFM_DARK_PERCENTILE = 50.0
SEM_THRESHOLD_8BIT = 130
SEM_INPAINT_RADIUS = 3

# relative spectral-energy floor so peak finding stays silent on smooth images
_PEAK_ENERGY_FLOOR = 1e-9


@dataclass(frozen=True)
class FreqMask:
    """Boolean keep-mask over the center-shifted frequency plane."""

    mask: np.ndarray
    description: str


@dataclass(frozen=True)
class AfmCleanResult:
    """All artifacts of the AFM pipeline for one input image."""

    cleaned: GrayImage
    dark_masked: GrayImage
    merged: GrayImage
    notch_cols: tuple[int, ...]
    notched_spectrum: np.ndarray  # center-shifted, after notching


def _center(shape: tuple[int, int]) -> tuple[int, int]:
    return shape[0] // 2, shape[1] // 2


def _radius_grid(shape: tuple[int, int]) -> np.ndarray:
    cy, cx = _center(shape)
    yy, xx = np.ogrid[: shape[0], : shape[1]]
    return np.hypot(yy - cy, xx - cx)


def _rescale01(pixels: np.ndarray) -> np.ndarray:
    lo, hi = float(pixels.min()), float(pixels.max())
    if hi - lo < 1e-12:
        return np.zeros_like(pixels)
    return (pixels - lo) / (hi - lo)


def build_stm_bandpass_mask(
    shape: tuple[int, int],
    r_low: float = STM_R_LOW,
    r_high: float = STM_R_HIGH,
    theta_margin_deg: float = STM_THETA_MARGIN_DEG,
) -> FreqMask:
    """Annulus r_low < r < r_high minus a wedge around the vertical axis.

    Angles are measured with atan2 on the shifted plane; a frequency pixel
    survives only if its angular distance to both vertical directions (+-90
    degrees) exceeds the margin.
    """
    if not 0 <= r_low < r_high:
        raise InvalidInputError(f"need 0 <= r_low < r_high, got {r_low}, {r_high}")
    if r_high >= min(shape) / 2:
        raise InvalidInputError(
            f"r_high {r_high} must stay below half the smaller dimension {min(shape)}"
        )
    cy, cx = _center(shape)
    yy, xx = np.ogrid[: shape[0], : shape[1]]
    rr = np.hypot(yy - cy, xx - cx)
    theta = np.degrees(np.arctan2(yy - cy, xx - cx))
    vertical_distance = np.minimum(np.abs(theta - 90.0), np.abs(theta + 90.0))
    keep = (rr > r_low) & (rr < r_high) & (vertical_distance > theta_margin_deg)
    return FreqMask(
        mask=keep,
        description=(
            f"band-pass {r_low} < r < {r_high} px, vertical-axis margin "
            f"+-{theta_margin_deg} deg"
        ),
    )


def stm_bandpass_enhance(
    img: GrayImage,
    r_low: float = STM_R_LOW,
    r_high: float = STM_R_HIGH,
    theta_margin_deg: float = STM_THETA_MARGIN_DEG,
) -> GrayImage:
    """Keep only tilted mid-band frequencies, then rescale to [0, 1].

    The image is transformed, center-shifted, multiplied by the band-pass
    mask, inverse-transformed, and min-max rescaled from the real part.
    """
    keep = build_stm_bandpass_mask(img.shape, r_low, r_high, theta_margin_deg)
    spectrum = np.fft.fftshift(np.fft.fft2(img.pixels))
    spectrum[~keep.mask] = 0.0
    filtered = np.fft.ifft2(np.fft.ifftshift(spectrum)).real
    return img.with_pixels(_rescale01(filtered))


def _column_energy_profile(power: np.ndarray, dc_radius: float) -> np.ndarray:
    """Per-column spectral energy, ignoring pixels inside the DC disk."""
    outside = _radius_grid(power.shape) > dc_radius
    return (power * outside).sum(axis=0)


def detect_notch_columns(
    img_or_power: np.ndarray,
    dc_radius: float = AFM_DC_RADIUS,
    smooth_sigma: float = AFM_SMOOTH_SIGMA,
) -> list[int]:
    """Columns of the shifted power spectrum holding prominent streak energy.

    The column-wise energy profile (pixels outside the DC disk) is Gaussian
    smoothed, then peaks exceeding max(median + 3*MAD, 1e-9 * total energy)
    are reported.
    """
    power = np.asarray(img_or_power, dtype=np.float64)
    profile = gaussian_filter1d(
        _column_energy_profile(power, dc_radius), sigma=smooth_sigma
    )
    med = float(np.median(profile))
    mad = float(np.median(np.abs(profile - med)))
    height = max(med + 3.0 * mad, _PEAK_ENERGY_FLOOR * float(power.sum()))
    peaks, _ = find_peaks(profile, height=height)
    return [int(p) for p in peaks]


def afm_merge(dark_masked: GrayImage, original: GrayImage) -> GrayImage:
    """Overlay: full intensity where the mask fires, the original elsewhere.

    In normalized units the merged pixel is 1.0 wherever the mask value
    exceeds 0.5, and the original intensity otherwise. Idempotent for a
    fixed mask.
    """
    if dark_masked.shape != original.shape:
        raise InvalidInputError(
            f"shape mismatch: mask {dark_masked.shape} vs image {original.shape}"
        )
    merged = np.where(dark_masked.pixels > 0.5, 1.0, original.pixels)
    return original.with_pixels(merged)


def afm_notch_clean(
    img: GrayImage,
    dc_radius: float = AFM_DC_RADIUS,
    smooth_sigma: float = AFM_SMOOTH_SIGMA,
    notch_half_width: int = AFM_NOTCH_HALF_WIDTH,
    dark_percentile: float = AFM_DARK_PERCENTILE,
) -> AfmCleanResult:
    """Remove streak energy, derive the dark mask, and merge.

    Pipeline: transform and center-shift; detect prominent spectrum columns
    from the out-of-DC energy profile; zero those columns to the given
    half-width while leaving the DC disk bit-identical; inverse transform
    into the cleaned image; threshold its 50th percentile into a binary
    dark mask; merge that mask over the original.
    """
    if min(img.shape) < 2 * dc_radius:
        raise InvalidInputError(
            f"image {img.shape} is smaller than twice the DC radius {dc_radius}"
        )
    if np.ptp(img.pixels) < 1e-12:
        # constant image: nothing to detect, dark mask fires nowhere
        dark = img.with_pixels(np.zeros_like(img.pixels))
        return AfmCleanResult(
            cleaned=img,
            dark_masked=dark,
            merged=afm_merge(dark, img),
            notch_cols=(),
            notched_spectrum=np.fft.fftshift(np.fft.fft2(img.pixels)),
        )
    spectrum = np.fft.fftshift(np.fft.fft2(img.pixels))
    cols = detect_notch_columns(np.abs(spectrum) ** 2, dc_radius, smooth_sigma)
    inside_dc = _radius_grid(img.shape) <= dc_radius
    width = img.width
    for col in cols:
        lo = max(col - notch_half_width, 0)
        hi = min(col + notch_half_width + 1, width)
        zone = np.zeros(img.shape, dtype=bool)
        zone[:, lo:hi] = True
        spectrum[zone & ~inside_dc] = 0.0
    cleaned_px = np.clip(np.fft.ifft2(np.fft.ifftshift(spectrum)).real, 0.0, 1.0)
    cleaned = img.with_pixels(cleaned_px)
    threshold = np.percentile(cleaned_px, dark_percentile)
    dark = img.with_pixels((cleaned_px < threshold).astype(np.float64))
    return AfmCleanResult(
        cleaned=cleaned,
        dark_masked=dark,
        merged=afm_merge(dark, img),
        notch_cols=tuple(cols),
        notched_spectrum=spectrum,
    )


def sem_strip_mask(img: GrayImage, threshold_8bit: float = SEM_THRESHOLD_8BIT) -> GrayImage:
    """Binary mask of pixels strictly brighter than the 8-bit threshold."""
    mask = img.pixels > threshold_8bit / 255.0
    return img.with_pixels(mask.astype(np.float64))


def sem_inpaint(
    img: GrayImage, mask: GrayImage, radius: int = SEM_INPAINT_RADIUS
) -> GrayImage:
    """Fill masked pixels by fast-marching inpainting; leave the rest alone.

    Masked pixels are reconstructed from boundary neighbors within the
    radius (distance- and direction-weighted averages, marching inward).
    Unmasked pixels are restored bit-identically afterward, so only the
    masked region is quantized through the 8-bit fill.
    """
    if mask.shape != img.shape:
        raise InvalidInputError(
            f"shape mismatch: mask {mask.shape} vs image {img.shape}"
        )
    hole = mask.pixels > 0.5
    if not hole.any():
        return img
    if hole.all():
        raise InvalidInputError("mask covers the entire image; nothing to inpaint from")
    src = np.round(img.pixels * 255.0).astype(np.uint8)
    filled = cv2.inpaint(src, hole.astype(np.uint8), radius, cv2.INPAINT_TELEA)
    out = filled.astype(np.float64) / 255.0
    out[~hole] = img.pixels[~hole]
    return img.with_pixels(out)


def sem_clean(
    img: GrayImage,
    threshold_8bit: float = SEM_THRESHOLD_8BIT,
    radius: int = SEM_INPAINT_RADIUS,
) -> tuple[GrayImage, GrayImage]:
    """Bright-strip mask plus the inpainted image, as (mask, cleaned)."""
    mask = sem_strip_mask(img, threshold_8bit)
    return mask, sem_inpaint(img, mask, radius)
