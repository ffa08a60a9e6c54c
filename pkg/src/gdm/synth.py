"""Synthetic test images and controlled artifact injectors.

The generator renders standing-wave ripple patterns around random point
scatterers in a 2D free-electron gas: each scatterer contributes
A*cos(2*k_F*|r - r_i| + phi_i) / max(|r - r_i|, r_min)^decay with a dark
disk at its center, where the Fermi wavevector k_F follows from the
effective mass and chemical potential. The injectors add scan-line
offsets, bright strips, or Gaussian noise so the preprocessing and metric
stages can be exercised end to end without experimental data.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import constants
from skimage.draw import line as draw_line

from .errors import InvalidInputError
from .imagecore import GrayImage

ARTIFACT_KINDS = ("scanlines", "bright_strips", "gaussian_noise")

_DEFECT_RADIUS_PX = 2.0  # dark-disk radius; also the singularity guard r_min
_RIPPLE_PHASE = 0.0  # one shared phase: the ripple pattern is fixed at each defect


def fermi_wavevector_nm(effective_mass_ratio: float, chemical_potential_ev: float) -> float:
    """k_F = sqrt(2 m* mu) / hbar, in 1/nm, from SI physical constants."""
    if effective_mass_ratio <= 0:
        raise InvalidInputError(
            f"effective mass ratio must be positive, got {effective_mass_ratio}"
        )
    if chemical_potential_ev <= 0:
        raise InvalidInputError(
            f"chemical potential must be positive, got {chemical_potential_ev}"
        )
    mass = effective_mass_ratio * constants.m_e
    energy = chemical_potential_ev * constants.e
    return float(np.sqrt(2.0 * mass * energy) / constants.hbar * 1e-9)


@dataclass(frozen=True)
class QpiParams:
    """Parameters of the standing-wave ripple generator."""

    effective_mass_ratio: float = 0.38
    chemical_potential_ev: float = 0.45
    image_size_px: int = 256
    field_of_view_nm: float = 30.0
    n_scatterers: int = 8
    decay_exponent: float = 0.5
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        # fermi_wavevector_nm validates mass and potential
        fermi_wavevector_nm(self.effective_mass_ratio, self.chemical_potential_ev)
        if self.image_size_px < 8:
            raise InvalidInputError(
                f"image_size_px must be >= 8, got {self.image_size_px}"
            )
        if not self.field_of_view_nm > 0:
            raise InvalidInputError(
                f"field_of_view_nm must be positive, got {self.field_of_view_nm}"
            )
        if self.n_scatterers < 1:
            raise InvalidInputError(
                f"n_scatterers must be >= 1, got {self.n_scatterers}"
            )
        if self.decay_exponent < 0:
            raise InvalidInputError(
                f"decay_exponent must be nonnegative, got {self.decay_exponent}"
            )

    @property
    def k_f_nm_inv(self) -> float:
        return fermi_wavevector_nm(self.effective_mass_ratio, self.chemical_potential_ev)

    @property
    def ripple_period_nm(self) -> float:
        """Crest-to-crest spacing of cos(2 k_F r): pi / k_F."""
        return float(np.pi / self.k_f_nm_inv)

    @property
    def pixel_size_nm(self) -> float:
        return self.field_of_view_nm / self.image_size_px

    def to_json(self) -> dict:
        return {
            "effective_mass_ratio": self.effective_mass_ratio,
            "chemical_potential_ev": self.chemical_potential_ev,
            "image_size_px": self.image_size_px,
            "field_of_view_nm": self.field_of_view_nm,
            "n_scatterers": self.n_scatterers,
            "decay_exponent": self.decay_exponent,
            "amplitude": self.amplitude,
            "seed": self.seed,
            "k_f_nm_inv": self.k_f_nm_inv,
            "ripple_period_nm": self.ripple_period_nm,
        }


def simulate_qpi(params: QpiParams) -> GrayImage:
    """Render ripples around seeded random scatterers, normalized to [0, 1].

    Scatterer positions are drawn from the seed; a dark disk of two pixels
    marks each defect center. The recorded pixel_size_nm lets metric code
    convert lags to physical units.
    """
    rng = np.random.default_rng(params.seed)
    n = params.image_size_px
    px = params.pixel_size_nm
    kf = params.k_f_nm_inv
    coords = (np.arange(n) + 0.5) * px
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    centers = rng.uniform(0.0, params.field_of_view_nm, size=(params.n_scatterers, 2))
    r_min = _DEFECT_RADIUS_PX * px

    field = np.ones((n, n), dtype=np.float64)
    dark = np.zeros((n, n), dtype=bool)
    for cy, cx in centers:
        dist = np.hypot(yy - cy, xx - cx)
        envelope = np.maximum(dist, r_min) ** params.decay_exponent
        field += params.amplitude * np.cos(2.0 * kf * dist + _RIPPLE_PHASE) / envelope
        dark |= dist < r_min
    field[dark] = field.min()
    span = np.ptp(field)
    normalized = (field - field.min()) / span if span > 0 else np.zeros_like(field)
    return GrayImage(pixels=normalized, pixel_size_nm=px)


def simulate_lattice(size_px: int, period_px: float) -> GrayImage:
    """Hexagonal cosine-sum texture; a deterministic lattice-like pattern."""
    if size_px < 4:
        raise InvalidInputError(f"size_px must be >= 4, got {size_px}")
    if not period_px > 0:
        raise InvalidInputError(f"period_px must be positive, got {period_px}")
    yy, xx = np.mgrid[:size_px, :size_px].astype(np.float64)
    k = 2.0 * np.pi / period_px
    field = np.zeros((size_px, size_px), dtype=np.float64)
    for angle in (0.0, np.pi / 3.0, 2.0 * np.pi / 3.0):
        field += np.cos(k * (xx * np.cos(angle) + yy * np.sin(angle)))
    span = np.ptp(field)
    return GrayImage(pixels=(field - field.min()) / span)


@dataclass(frozen=True)
class ArtifactSpec:
    """Configuration of one artifact injector."""

    kind: str
    amplitude: float = 0.2
    density: float = 0.3
    sigma: float = 0.05
    angle_jitter_deg: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ARTIFACT_KINDS:
            raise InvalidInputError(
                f"unknown artifact kind {self.kind!r}; expected one of {ARTIFACT_KINDS}"
            )
        if self.amplitude < 0:
            raise InvalidInputError(f"amplitude must be >= 0, got {self.amplitude}")
        if self.density < 0:
            raise InvalidInputError(f"density must be >= 0, got {self.density}")
        if self.sigma < 0:
            raise InvalidInputError(f"sigma must be >= 0, got {self.sigma}")


def _require_kind(spec: ArtifactSpec, kind: str) -> None:
    if spec.kind != kind:
        raise InvalidInputError(f"expected an ArtifactSpec of kind {kind!r}, got {spec.kind!r}")


def add_scanlines(img: GrayImage, spec: ArtifactSpec) -> GrayImage:
    """Row-wise intensity offsets plus short near-horizontal jitter segments.

    Offsets are amplitude-scaled uniform draws per row; segments start at
    random positions, run a random fraction of the width at an angle within
    +-angle_jitter_deg of horizontal, and shift intensity by a random
    amplitude-scaled amount. Output is clamped to [0, 1]; amplitude 0 is
    the identity.
    """
    _require_kind(spec, "scanlines")
    rng = np.random.default_rng(spec.seed)
    h, w = img.shape
    out = img.pixels.copy()
    offsets = spec.amplitude * rng.uniform(-0.5, 0.5, size=h)
    out += offsets[:, None]

    n_segments = int(round(spec.density * h))
    for _ in range(n_segments):
        r0 = int(rng.integers(0, h))
        c0 = int(rng.integers(0, w))
        length = int(rng.integers(max(w // 8, 2), max(w // 2, 3)))
        angle = np.radians(rng.uniform(-spec.angle_jitter_deg, spec.angle_jitter_deg))
        r1 = int(np.clip(round(r0 + length * np.sin(angle)), 0, h - 1))
        c1 = int(np.clip(c0 + length * np.cos(angle), 0, w - 1))
        rr, cc = draw_line(r0, c0, r1, c1)
        out[rr, cc] += spec.amplitude * rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])
    return img.with_pixels(np.clip(out, 0.0, 1.0))


def add_bright_strips(img: GrayImage, spec: ArtifactSpec) -> GrayImage:
    """Paint thin saturated horizontal strips detectable by the strip mask.

    Every painted pixel is drawn above 131/255, so thresholding at 130
    recovers the painted area. The strip count scales with amplitude and
    density; amplitude 0 paints nothing.
    """
    _require_kind(spec, "bright_strips")
    rng = np.random.default_rng(spec.seed)
    h, w = img.shape
    out = img.pixels.copy()
    n_strips = int(round(20.0 * spec.density * spec.amplitude))
    for _ in range(n_strips):
        thickness = int(rng.integers(1, 4))
        r0 = int(rng.integers(0, max(h - thickness, 1)))
        length = int(rng.integers(max(w // 6, 2), max(w // 2, 3)))
        c0 = int(rng.integers(0, max(w - length, 1)))
        values = rng.uniform(131.0, 255.0, size=(thickness, length)) / 255.0
        out[r0 : r0 + thickness, c0 : c0 + length] = values
    return img.with_pixels(np.clip(out, 0.0, 1.0))


def add_gaussian_noise(img: GrayImage, spec: ArtifactSpec) -> GrayImage:
    """Add clamped N(0, sigma) noise; sigma 0 returns the image unchanged."""
    _require_kind(spec, "gaussian_noise")
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.sigma, size=img.shape)
    return img.with_pixels(np.clip(img.pixels + noise, 0.0, 1.0))


def image_checksum(img: GrayImage) -> str:
    """Stable hex digest of the pixel buffer, for determinism checks."""
    return hashlib.sha256(np.ascontiguousarray(img.pixels).tobytes()).hexdigest()
