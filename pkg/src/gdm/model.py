"""Compact U-Net: construction, inference, and checkpointing.

Three encoder stages (32, 64, 128 channels), two 2x2 max-poolings, bilinear
2x upsampling, and skip concatenations feeding decoder blocks of input
widths 192 and 96. Every convolutional block is two 3x3 convolutions
(padding 1), each followed by ReLU; a final 1x1 convolution maps back to
one channel. No normalization layers, no dropout.
"""

from __future__ import annotations

import json
import math
import pathlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, InvalidInputError
from .imagecore import GrayImage, pad_to_multiple

_POOLINGS = 2  # two 2x downsamplings: spatial dims must be divisible by 4


@dataclass(frozen=True)
class UNetSpec:
    """Architecture summary; the default reproduces the compact network."""

    encoder_channels: tuple[int, int, int] = (32, 64, 128)
    kernel: int = 3
    padding: int = 1
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self) -> None:
        if len(self.encoder_channels) != 3:
            raise InvalidInputError("exactly three encoder stages are supported")
        if any(c < 1 for c in self.encoder_channels):
            raise InvalidInputError("encoder channel counts must be positive")
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))

    def to_json(self) -> dict:
        return {
            "encoder_channels": list(self.encoder_channels),
            "kernel": self.kernel,
            "padding": self.padding,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "UNetSpec":
        return cls(
            encoder_channels=tuple(blob["encoder_channels"]),
            kernel=blob.get("kernel", 3),
            padding=blob.get("padding", 1),
            in_channels=blob.get("in_channels", 1),
            out_channels=blob.get("out_channels", 1),
        )


class _DoubleConv(nn.Module):
    """Two 3x3 convolutions, each followed by ReLU."""

    def __init__(self, c_in: int, c_out: int, kernel: int, padding: int) -> None:
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(c_in, c_out, kernel, padding=padding),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, kernel, padding=padding),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class CompactUNet(nn.Module):
    """Encoder-decoder with symmetric skip connections.

    Decoder stage d concatenates the upsampled features with the encoder
    stage (3 - d) output, giving decoder input widths 128+64=192 and
    64+32=96 for the default channel plan.
    """

    def __init__(self, spec: UNetSpec) -> None:
        super().__init__()
        self.spec = spec
        c1, c2, c3 = spec.encoder_channels
        k, p = spec.kernel, spec.padding
        self.enc1 = _DoubleConv(spec.in_channels, c1, k, p)
        self.enc2 = _DoubleConv(c1, c2, k, p)
        self.enc3 = _DoubleConv(c2, c3, k, p)
        self.pool = nn.MaxPool2d(2)
        self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        self.dec2 = _DoubleConv(c3 + c2, c2, k, p)
        self.dec1 = _DoubleConv(c2 + c1, c1, k, p)
        self.head = nn.Conv2d(c1, spec.out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise InvalidInputError(
                f"expected a B x C x H x W batch, got shape {tuple(x.shape)}"
            )
        h, w = x.shape[-2], x.shape[-1]
        div = 1 << _POOLINGS
        if h % div or w % div or h < div or w < div:
            raise InvalidInputError(
                f"spatial dims must be multiples of {div} (got {h}x{w}); "
                "use pad_to_multiple first"
            )
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        d2 = self.dec2(torch.cat([self.up(e3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up(d2), e1], dim=1))
        return self.head(d1)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_unet(spec: UNetSpec | None = None, seed: int = 0) -> CompactUNet:
    """Construct the network with fan-in-scaled uniform initialization.

    Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    using an explicit generator, so builds are reproducible from the seed.
    """
    spec = spec or UNetSpec()
    model = CompactUNet(spec)
    gen = torch.Generator().manual_seed(seed & 0xFFFFFFFFFFFFFFFF)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.uniform_(-bound, bound, generator=gen)
    return model


def _feather_profile(extent: int, overlap: int) -> np.ndarray:
    # linear ramp up/down over the overlap region, flat in the middle
    w = np.ones(extent, dtype=np.float64)
    if overlap > 0:
        ramp = (np.arange(overlap) + 1.0) / (overlap + 1.0)
        w[:overlap] = ramp
        w[-overlap:] = ramp[::-1]
    return w


def _denoise_tiled(
    model: CompactUNet, pixels: np.ndarray, tile: int = 256, overlap: int = 32
) -> np.ndarray:
    """Deterministic tiled inference with linear feather blending.

    Fallback for whole-image passes that exhaust memory: windows of
    ``tile`` pixels advance by tile - 2*overlap and their outputs are
    averaged under a separable linear ramp weight.
    """
    h, w = pixels.shape
    tile_h, tile_w = min(tile, h), min(tile, w)
    tile_h -= tile_h % 4
    tile_w -= tile_w % 4
    step_h = max(tile_h - 2 * overlap, 1)
    step_w = max(tile_w - 2 * overlap, 1)
    acc = np.zeros((h, w), dtype=np.float64)
    norm = np.zeros((h, w), dtype=np.float64)
    weight = np.outer(
        _feather_profile(tile_h, min(overlap, tile_h // 4)),
        _feather_profile(tile_w, min(overlap, tile_w // 4)),
    )
    rows = sorted({min(r, h - tile_h) for r in range(0, h, step_h)})
    cols = sorted({min(c, w - tile_w) for c in range(0, w, step_w)})
    with torch.no_grad():
        for r in rows:
            for c in cols:
                window = pixels[r : r + tile_h, c : c + tile_w]
                t = torch.from_numpy(window[None, None].astype(np.float32))
                out = model(t).numpy()[0, 0].astype(np.float64)
                acc[r : r + tile_h, c : c + tile_w] += out * weight
                norm[r : r + tile_h, c : c + tile_w] += weight
    return acc / norm


def denoise_image(model: CompactUNet, img: GrayImage) -> GrayImage:
    """Whole-image inference: pad to a multiple of 4, forward, crop, clamp.

    The network is fully convolutional, so arbitrary sizes are handled by
    one forward pass; output intensities are clamped to [0, 1]. If the
    whole-image pass runs out of memory, a tiled pass with 32-pixel
    feathered overlaps is used instead.
    """
    was_training = model.training
    model.eval()
    padded, crop = pad_to_multiple(img, 1 << _POOLINGS)
    try:
        try:
            with torch.no_grad():
                t = torch.from_numpy(padded.pixels[None, None].astype(np.float32))
                out = model(t).numpy()[0, 0].astype(np.float64)
        except (MemoryError, RuntimeError) as exc:
            if "memory" not in str(exc).lower():
                raise
            out = _denoise_tiled(model, padded.pixels)
    finally:
        if was_training:
            model.train()
    restored = crop.crop(out)
    return img.with_pixels(np.clip(restored, 0.0, 1.0))


def save_checkpoint(
    model: CompactUNet, metadata: dict, path: str | pathlib.Path
) -> tuple[pathlib.Path, pathlib.Path]:
    """Write weights to ``<path>.pt`` and metadata to ``<path>.json``.

    The sidecar always records the architecture so loads can validate
    against the stored tensors.
    """
    base = pathlib.Path(path)
    if base.suffix == ".pt":
        base = base.with_suffix("")
    weights_path = base.with_suffix(".pt")
    meta_path = base.with_suffix(".json")
    meta = dict(metadata)
    meta.setdefault("unet_spec", model.spec.to_json())
    torch.save(model.state_dict(), weights_path)
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return weights_path, meta_path


def load_checkpoint(path: str | pathlib.Path) -> tuple[CompactUNet, dict]:
    """Rebuild the model from ``<path>.pt`` + ``<path>.json``.

    Raises :class:`CheckpointError` naming the failure when either file is
    missing, unreadable, or the metadata architecture does not match the
    stored tensors.
    """
    base = pathlib.Path(path)
    if base.suffix == ".pt":
        base = base.with_suffix("")
    weights_path = base.with_suffix(".pt")
    meta_path = base.with_suffix(".json")
    if not weights_path.exists():
        raise CheckpointError(f"missing checkpoint weights file: {weights_path}")
    if not meta_path.exists():
        raise CheckpointError(f"missing checkpoint metadata file: {meta_path}")
    try:
        metadata = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata {meta_path}: {exc}") from exc
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unpickling error types
        raise CheckpointError(f"corrupt checkpoint weights {weights_path}: {exc}") from exc
    try:
        spec = UNetSpec.from_json(metadata["unet_spec"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"metadata lacks a valid unet_spec: {exc}") from exc
    model = CompactUNet(spec)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(
            f"checkpoint tensors do not match the metadata architecture: {exc}"
        ) from exc
    model.eval()
    return model, metadata
