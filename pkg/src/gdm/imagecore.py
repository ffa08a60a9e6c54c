"""Grayscale image plumbing: I/O, normalization, patching, blind-spot masking.

Every other module consumes the :class:`GrayImage` container defined here.
Pixel values are always floats in [0, 1]; the originating bit depth is kept
so files can be written back at native precision.
"""

from __future__ import annotations

import dataclasses
import pathlib
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ImageIOError, InvalidInputError

_NEIGHBORHOOD = 5  # side of the square window used for blind-spot substitution


@dataclass(frozen=True)
class GrayImage:
    """A 2D grayscale image with intensities normalized to [0, 1].

    Parameters
    ----------
    pixels : ndarray
        H x W float array, every value in [0, 1].
    source_bit_depth : int
        Bit depth of the originating file (8 or 16); controls write-back
        quantization.
    pixel_size_nm : float, optional
        Physical size of one pixel, when known.
    """

    pixels: np.ndarray
    source_bit_depth: int = 8
    pixel_size_nm: float | None = None

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError(
                f"image must be a non-empty 2D array, got shape {px.shape}"
            )
        if not np.isfinite(px).all():
            raise InvalidInputError("image contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidInputError(
                f"intensities must lie in [0, 1], got range "
                f"[{px.min():.6g}, {px.max():.6g}]"
            )
        if self.source_bit_depth not in (8, 16):
            raise InvalidInputError(
                f"source_bit_depth must be 8 or 16, got {self.source_bit_depth}"
            )
        if self.pixel_size_nm is not None and not self.pixel_size_nm > 0:
            raise InvalidInputError("pixel_size_nm must be positive")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]

    def with_pixels(self, pixels: np.ndarray) -> "GrayImage":
        """Same metadata, new pixel array."""
        return dataclasses.replace(self, pixels=pixels)

    def to_quantized(self) -> np.ndarray:
        """Denormalize to the source bit depth (uint8 or uint16)."""
        levels = (1 << self.source_bit_depth) - 1
        dtype = np.uint8 if self.source_bit_depth == 8 else np.uint16
        return np.round(self.pixels * levels).astype(dtype)


@dataclass(frozen=True)
class Patch:
    """A square window of a source image.

    ``origin`` is the (row, col) of the patch's top-left corner in the
    source; the window must lie fully inside the source bounds.
    """

    pixels: np.ndarray
    origin: tuple[int, int]

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class MaskedPatch:
    """A patch corrupted at blind-spot coordinates.

    ``corrupted`` equals the source patch except at ``mask_coords``, where
    the pixel was replaced by a neighborhood draw; ``original_values`` keeps
    the pre-corruption intensities aligned with ``mask_coords``.
    """

    corrupted: np.ndarray
    mask_coords: np.ndarray  # (n, 2) int rows of (row, col)
    original_values: np.ndarray  # (n,) floats

    def original(self) -> np.ndarray:
        """Reconstruct the uncorrupted patch."""
        out = self.corrupted.copy()
        out[self.mask_coords[:, 0], self.mask_coords[:, 1]] = self.original_values
        return out


def load_image(path: str | pathlib.Path) -> GrayImage:
    """Read an 8- or 16-bit grayscale PNG/TIFF and normalize to [0, 1].

    RGB inputs are converted by averaging the channels. Normalization
    divides by (2^bit_depth - 1) so the maximum representable intensity
    maps to exactly 1.0.
    """
    path = pathlib.Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                bit_depth = 16
            elif mode in ("L", "P"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
                bit_depth = 8
            elif mode in ("RGB", "RGBA", "LA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = rgb.mean(axis=2)
                bit_depth = 8
            else:
                raise ImageIOError(f"unsupported image mode {mode!r} in {path}")
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"zero-area or non-2D image: {path}")
    levels = (1 << bit_depth) - 1
    return GrayImage(pixels=arr / levels, source_bit_depth=bit_depth)


def save_image(img: GrayImage, path: str | pathlib.Path) -> None:
    """Write at the image's source bit depth (8-bit PNG or 16-bit TIFF/PNG)."""
    path = pathlib.Path(path)
    data = img.to_quantized()
    try:
        Image.fromarray(data).save(path)  # uint16 -> I;16, uint8 -> L
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot write image {path}: {exc}") from exc


def _grid_starts(extent: int, size: int, stride: int) -> list[int]:
    # regular grid plus an edge-aligned start so the last row/col is covered
    starts = list(range(0, extent - size + 1, stride))
    if starts[-1] != extent - size:
        starts.append(extent - size)
    return starts


def extract_patches(img: GrayImage, patch_size: int, stride: int) -> list[Patch]:
    """All patches on the stride grid, plus edge-aligned ones.

    The grid starts at (0, 0); when the stride does not tile the image
    exactly, one extra start per axis is aligned to the far edge so every
    pixel is covered. The count is
    ceil((H - S)/stride + 1) * ceil((W - S)/stride + 1).
    """
    if patch_size < 1 or stride < 1:
        raise InvalidInputError("patch_size and stride must be >= 1")
    if patch_size > min(img.height, img.width):
        raise InvalidInputError(
            f"patch_size {patch_size} exceeds image dimensions "
            f"{img.height}x{img.width}"
        )
    rows = _grid_starts(img.height, patch_size, stride)
    cols = _grid_starts(img.width, patch_size, stride)
    return [
        Patch(
            pixels=img.pixels[r : r + patch_size, c : c + patch_size].copy(),
            origin=(r, c),
        )
        for r in rows
        for c in cols
    ]


def apply_blindspot_mask(
    patch: Patch, fraction: float, rng: np.random.Generator
) -> MaskedPatch:
    """Corrupt round(fraction * S^2) random pixels by neighborhood substitution.

    Each masked pixel is replaced by the original value of a uniformly
    drawn non-masked pixel from its 5x5 neighborhood (clipped at patch
    borders). If every in-bounds neighbor happens to be masked, the pixel
    keeps its own value. Non-masked pixels are untouched.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError(f"mask fraction must be in (0, 1), got {fraction}")
    size = patch.size
    n_mask = int(round(fraction * size * size))
    flat = rng.choice(size * size, size=n_mask, replace=False)
    coords = np.stack([flat // size, flat % size], axis=1)

    masked = np.zeros((size, size), dtype=bool)
    masked[coords[:, 0], coords[:, 1]] = True

    half = _NEIGHBORHOOD // 2
    off = np.arange(-half, half + 1)
    offsets = np.stack(np.meshgrid(off, off, indexing="ij"), axis=-1).reshape(-1, 2)

    neighbors = coords[:, None, :] + offsets[None, :, :]  # (n, 25, 2)
    in_bounds = ((neighbors >= 0) & (neighbors < size)).all(axis=2)
    clipped = np.clip(neighbors, 0, size - 1)
    candidate = in_bounds & ~masked[clipped[..., 0], clipped[..., 1]]

    counts = candidate.sum(axis=1)
    # uniform draw among candidates via a per-row categorical sample
    weights = candidate.astype(np.float64)
    weights[counts == 0, :] = 0.0
    cdf = np.cumsum(weights, axis=1)
    totals = np.where(counts == 0, 1.0, cdf[:, -1])
    u = rng.random(n_mask) * totals
    pick = (u[:, None] >= cdf).sum(axis=1)
    pick = np.minimum(pick, offsets.shape[0] - 1)

    src = clipped[np.arange(n_mask), pick]
    corrupted = patch.pixels.copy()
    original_values = patch.pixels[coords[:, 0], coords[:, 1]].copy()
    replacement = patch.pixels[src[:, 0], src[:, 1]]
    replacement = np.where(counts == 0, original_values, replacement)
    corrupted[coords[:, 0], coords[:, 1]] = replacement
    return MaskedPatch(
        corrupted=corrupted, mask_coords=coords, original_values=original_values
    )


@dataclass(frozen=True)
class CropRecord:
    """How much padding to strip to restore an image's original size."""

    pad_bottom: int
    pad_right: int

    def crop(self, pixels: np.ndarray) -> np.ndarray:
        h = pixels.shape[0] - self.pad_bottom
        w = pixels.shape[1] - self.pad_right
        return pixels[:h, :w]


def pad_to_multiple(img: GrayImage, m: int) -> tuple[GrayImage, CropRecord]:
    """Reflect-pad right/bottom so both dimensions are multiples of ``m``.

    The returned record crops the padded image back to the original size
    exactly. Images too small for reflection fall back to edge padding.
    """
    if m < 1:
        raise InvalidInputError(f"multiple must be >= 1, got {m}")
    pad_b = (-img.height) % m
    pad_r = (-img.width) % m
    if pad_b == 0 and pad_r == 0:
        return img, CropRecord(0, 0)
    mode = "reflect"
    if pad_b > img.height - 1 or pad_r > img.width - 1:
        mode = "edge"  # reflect needs pad < extent
    padded = np.pad(img.pixels, ((0, pad_b), (0, pad_r)), mode=mode)
    return img.with_pixels(padded), CropRecord(pad_b, pad_r)
