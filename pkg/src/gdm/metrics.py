"""Quantitative image-quality evaluation.

Two scores, both computed on normalized grayscale images:

- PNR: 10*log10 of mean spectral power at detected non-DC peaks over the
  mean power in the high-frequency region (radius beyond half the maximum).
  Higher means cleaner periodic structure.
- Angle-filtered line length: total Euclidean length of probabilistic-Hough
  segments whose orientation falls in a requested angular range. Lower
  means fewer residual scan-line artifacts near that orientation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.feature import canny, peak_local_max
from skimage.transform import probabilistic_hough_line

from .errors import InvalidInputError
from .imagecore import GrayImage

PNR_MIN_DISTANCE = 10
PNR_THRESHOLD_REL = 0.05
PNR_NOISE_RADIUS_FRAC = 0.5
PNR_DC_EXCLUSION_RADIUS = 3.0  # peak finding ignores a small disk at DC
HOUGH_THRESHOLD = 5
HOUGH_MIN_LENGTH = 1

#: Canny/Hough settings per imaging modality: (sigma, low, high, gap).
DETECTOR_DEFAULTS: dict[str, dict[str, float | int]] = {
    "stm": {"canny_sigma": 0.1, "canny_low": 1.0, "canny_high": 10.0, "hough_gap": 2},
    "afm": {"canny_sigma": 1.0, "canny_low": 1.0, "canny_high": 10.0, "hough_gap": 2},
    "sem": {"canny_sigma": 1.0, "canny_low": 5.0, "canny_high": 10.0, "hough_gap": 1},
}


@dataclass(frozen=True)
class PnrResult:
    """Peak-to-noise ratio with its plot-ready intermediates."""

    pnr_db: float
    peak_coords: tuple[tuple[int, int], ...]
    p_peak: float
    p_noise: float
    log_spectrum: np.ndarray


@dataclass(frozen=True)
class LineSet:
    """Detected segments with angles folded into (-90, 90] degrees.

    Angles are measured in array coordinates (x right, y down) with the
    x-axis at 0 degrees; the fold makes a horizontal segment 0 and a
    vertical one 90.
    """

    segments: tuple[tuple[tuple[int, int], tuple[int, int]], ...]
    angles_deg: tuple[float, ...]
    lengths: tuple[float, ...]
    hough_seed: int = 0

    def total_length(self) -> float:
        return float(sum(self.lengths))


@dataclass(frozen=True)
class MetricsReport:
    """Side-by-side evaluation of a noisy/denoised pair."""

    modality: str
    theta1: float
    theta2: float
    pnr_noisy: PnrResult
    pnr_denoised: PnrResult
    lines_noisy: LineSet
    lines_denoised: LineSet
    line_len_noisy: float
    line_len_denoised: float
    pnr_delta_db: float
    line_len_delta: float
    hough_seed: int


def _fold_angle(deg: float) -> float:
    while deg <= -90.0:
        deg += 180.0
    while deg > 90.0:
        deg -= 180.0
    return deg


def _max_radius(shape: tuple[int, int]) -> float:
    cy, cx = shape[0] // 2, shape[1] // 2
    return float(np.hypot(max(cy, shape[0] - 1 - cy), max(cx, shape[1] - 1 - cx)))


def pnr_score(
    img: GrayImage,
    min_distance: int = PNR_MIN_DISTANCE,
    threshold_rel: float = PNR_THRESHOLD_REL,
    noise_radius_frac: float = PNR_NOISE_RADIUS_FRAC,
) -> PnrResult:
    """Spectral peak power over high-frequency noise power, in dB.

    The image is min-max normalized, tapered by a 2D Hann window, and
    transformed; peaks are found on the [0, 1]-normalized log1p magnitude
    spectrum (minimum separation and relative threshold as configured),
    excluding a small disk at DC. Peak and noise powers are means of the
    squared magnitude; the noise region is everything beyond
    noise_radius_frac of the maximum center-to-corner radius. With no
    peaks the result carries a -inf sentinel instead of raising.
    """
    if min(img.shape) < 32:
        raise InvalidInputError(f"image {img.shape} is too small; need at least 32x32")
    pixels = img.pixels
    span = np.ptp(pixels)
    normalized = (pixels - pixels.min()) / span if span > 0 else np.zeros_like(pixels)
    window = np.outer(np.hanning(img.height), np.hanning(img.width))
    spectrum = np.fft.fftshift(np.fft.fft2(normalized * window))
    magnitude = np.abs(spectrum)
    log_spectrum = np.log1p(magnitude)
    log_span = np.ptp(log_spectrum)
    log_norm = (
        (log_spectrum - log_spectrum.min()) / log_span
        if log_span > 0
        else np.zeros_like(log_spectrum)
    )
    raw_peaks = peak_local_max(
        log_norm, min_distance=min_distance, threshold_rel=threshold_rel
    )
    cy, cx = img.height // 2, img.width // 2
    keep = np.hypot(raw_peaks[:, 0] - cy, raw_peaks[:, 1] - cx) > PNR_DC_EXCLUSION_RADIUS
    peaks = raw_peaks[keep]

    power = magnitude**2
    yy, xx = np.ogrid[: img.height, : img.width]
    rr = np.hypot(yy - cy, xx - cx)
    noise_region = rr > noise_radius_frac * _max_radius(img.shape)
    p_noise = float(power[noise_region].mean())
    if len(peaks) == 0:
        return PnrResult(
            pnr_db=float("-inf"),
            peak_coords=(),
            p_peak=0.0,
            p_noise=p_noise,
            log_spectrum=log_norm,
        )
    p_peak = float(power[peaks[:, 0], peaks[:, 1]].mean())
    pnr_db = 10.0 * np.log10(p_peak / p_noise)
    return PnrResult(
        pnr_db=float(pnr_db),
        peak_coords=tuple((int(r), int(c)) for r, c in peaks),
        p_peak=p_peak,
        p_noise=p_noise,
        log_spectrum=log_norm,
    )


def detect_lines(
    img: GrayImage,
    canny_sigma: float,
    canny_low: float,
    canny_high: float,
    hough_threshold: int = HOUGH_THRESHOLD,
    hough_min_length: int = HOUGH_MIN_LENGTH,
    hough_gap: int = 2,
    seed: int = 0,
) -> LineSet:
    """Canny edges followed by seeded probabilistic Hough segments.

    Hysteresis thresholds are given on the 8-bit intensity scale. The Hough
    stage is randomized, so its seed is recorded in the result.
    """
    if canny_sigma <= 0 or canny_low <= 0 or canny_high <= 0:
        raise InvalidInputError("detector parameters must be positive")
    if canny_low >= canny_high:
        raise InvalidInputError(
            f"canny_low {canny_low} must be below canny_high {canny_high}"
        )
    edges = canny(
        img.pixels * 255.0,
        sigma=canny_sigma,
        low_threshold=canny_low,
        high_threshold=canny_high,
    )
    segments = probabilistic_hough_line(
        edges,
        threshold=hough_threshold,
        line_length=hough_min_length,
        line_gap=hough_gap,
        rng=np.random.default_rng(seed),
    )
    angles = []
    lengths = []
    for (x1, y1), (x2, y2) in segments:
        angles.append(_fold_angle(float(np.degrees(np.arctan2(y2 - y1, x2 - x1)))))
        lengths.append(float(np.hypot(x2 - x1, y2 - y1)))
    return LineSet(
        segments=tuple((tuple(p), tuple(q)) for p, q in segments),
        angles_deg=tuple(angles),
        lengths=tuple(lengths),
        hough_seed=seed,
    )


def detect_lines_for_modality(img: GrayImage, modality: str, seed: int = 0) -> LineSet:
    """detect_lines with the per-modality default detector settings."""
    if modality not in DETECTOR_DEFAULTS:
        raise InvalidInputError(
            f"unknown modality {modality!r}; expected one of {sorted(DETECTOR_DEFAULTS)}"
        )
    params = DETECTOR_DEFAULTS[modality]
    return detect_lines(
        img,
        canny_sigma=float(params["canny_sigma"]),
        canny_low=float(params["canny_low"]),
        canny_high=float(params["canny_high"]),
        hough_gap=int(params["hough_gap"]),
        seed=seed,
    )


def line_length_in_range(lines: LineSet, theta1: float, theta2: float) -> float:
    """Total length of segments with angle in (theta1, theta2].

    The half-open interval matches the (-90, 90] angle fold, so the full
    range sums every segment exactly once.
    """
    if theta1 >= theta2:
        raise InvalidInputError(f"need theta1 < theta2, got {theta1}, {theta2}")
    return float(
        sum(
            length
            for angle, length in zip(lines.angles_deg, lines.lengths)
            if theta1 < angle <= theta2
        )
    )


def evaluate_pair(
    noisy: GrayImage,
    denoised: GrayImage,
    modality: str,
    angle_range: tuple[float, float] = (-30.0, 30.0),
    seed: int = 0,
) -> MetricsReport:
    """PNR and angle-filtered line length for both images, with deltas."""
    if noisy.shape != denoised.shape:
        raise InvalidInputError(
            f"shape mismatch: noisy {noisy.shape} vs denoised {denoised.shape}"
        )
    theta1, theta2 = angle_range
    pnr_noisy = pnr_score(noisy)
    pnr_denoised = pnr_score(denoised)
    lines_noisy = detect_lines_for_modality(noisy, modality, seed=seed)
    lines_denoised = detect_lines_for_modality(denoised, modality, seed=seed)
    len_noisy = line_length_in_range(lines_noisy, theta1, theta2)
    len_denoised = line_length_in_range(lines_denoised, theta1, theta2)
    return MetricsReport(
        modality=modality,
        theta1=theta1,
        theta2=theta2,
        pnr_noisy=pnr_noisy,
        pnr_denoised=pnr_denoised,
        lines_noisy=lines_noisy,
        lines_denoised=lines_denoised,
        line_len_noisy=len_noisy,
        line_len_denoised=len_denoised,
        pnr_delta_db=pnr_denoised.pnr_db - pnr_noisy.pnr_db,
        line_len_delta=len_denoised - len_noisy,
        hough_seed=seed,
    )
