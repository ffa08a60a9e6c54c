"""The composite training objective.

Three pieces, combined per batch:

- masked-pixel MSE: mean squared error restricted to blind-spot coordinates;
- FFT cosine similarity: cosine of the two center-shifted magnitude spectra,
  computed between the full predicted patch and the full uncorrupted patch;
- total loss L = l_px / (1 + l_fft), or l_px alone when the frequency term
  is ablated.

Per-channel values are combined with user weights w1 + w2 = 1; the batch
reduction is the mean by default, with a literal sum mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from .errors import ConfigError, InvalidInputError
from .imagecore import MaskedPatch

EPSILON = 1e-8  # numerical stabilizer in the cosine-similarity denominator

VALID_REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class ChannelWeights:
    """Per-channel weighting factors; must sum to one.

    Single-channel training is the degenerate case where the absent
    channel's weight is zero.
    """

    w1: float
    w2: float = 0.0

    def __post_init__(self) -> None:
        if self.w1 < 0 or self.w2 < 0:
            raise ConfigError(f"weights must be nonnegative, got {self.w1}, {self.w2}")
        if abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ConfigError(
                f"weights must sum to 1 within 1e-9, got {self.w1} + {self.w2}"
            )

    def for_channel(self, channel_id: int) -> float:
        if channel_id == 1:
            return self.w1
        if channel_id == 2:
            return self.w2
        raise ConfigError(f"no weight defined for channel {channel_id}")


@dataclass(frozen=True)
class LossBreakdown:
    """One optimizer step's loss terms.

    ``l_fft`` is None when the frequency term is ablated, in which case
    ``total`` equals ``l_px``; otherwise total = l_px / (1 + l_fft).
    """

    l_px: float
    l_fft: float | None
    total: float
    per_channel: dict[int, tuple[float, float | None]] = field(default_factory=dict)


def _to_tensor(x: np.ndarray | torch.Tensor) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.from_numpy(np.asarray(x, dtype=np.float64))


def masked_mse(
    pred: np.ndarray | torch.Tensor,
    target_values: Sequence[float] | np.ndarray | torch.Tensor,
    mask_coords: np.ndarray,
) -> torch.Tensor | float:
    """Mean squared error over the masked coordinates only."""
    coords = np.asarray(mask_coords, dtype=np.int64)
    if coords.size == 0:
        raise InvalidInputError("masked_mse requires at least one masked coordinate")
    pred_t = _to_tensor(pred)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise InvalidInputError(f"mask_coords must be (n, 2), got {coords.shape}")
    if (
        coords.min() < 0
        or coords[:, 0].max() >= pred_t.shape[-2]
        or coords[:, 1].max() >= pred_t.shape[-1]
    ):
        raise InvalidInputError("mask coordinates out of bounds")
    targets = _to_tensor(target_values).to(pred_t.dtype)
    if targets.shape[0] != coords.shape[0]:
        raise InvalidInputError("target_values misaligned with mask_coords")
    picked = pred_t[..., coords[:, 0], coords[:, 1]]
    out = ((picked - targets) ** 2).mean()
    return out if isinstance(pred, torch.Tensor) else float(out)


def fft_cosine_similarity(
    pred: np.ndarray | torch.Tensor, target: np.ndarray | torch.Tensor
) -> torch.Tensor | float:
    """Cosine similarity of the center-shifted FFT magnitude spectra.

    Both patches are transformed, shifted, and flattened to magnitude
    vectors a, b; the result is <a, b> / (|a| |b| + 1e-8). Magnitudes are
    nonnegative, so the value lies in [0, 1 + 1e-8].
    """
    pred_t = _to_tensor(pred)
    target_t = _to_tensor(target).to(pred_t.dtype)
    if pred_t.shape != target_t.shape:
        raise InvalidInputError(
            f"shape mismatch: {tuple(pred_t.shape)} vs {tuple(target_t.shape)}"
        )
    a = torch.fft.fftshift(torch.fft.fft2(pred_t), dim=(-2, -1)).abs()
    b = torch.fft.fftshift(torch.fft.fft2(target_t), dim=(-2, -1)).abs()
    a = a.reshape(*a.shape[:-2], -1)
    b = b.reshape(*b.shape[:-2], -1)
    dot = (a * b).sum(dim=-1)
    out = dot / (a.norm(dim=-1) * b.norm(dim=-1) + EPSILON)
    return out if isinstance(pred, torch.Tensor) else float(out)


def combine_channel_losses(
    per_channel: Mapping[int, tuple[float | torch.Tensor, float | torch.Tensor | None]],
    weights: ChannelWeights,
) -> tuple[float | torch.Tensor, float | torch.Tensor | None]:
    """Weight per-channel (mse, fft_sim) pairs into (l_px, l_fft)."""
    if not per_channel:
        raise InvalidInputError("at least one channel is required")
    l_px: float | torch.Tensor = 0.0
    l_fft: float | torch.Tensor | None = None
    for channel_id, (mse, sim) in sorted(per_channel.items()):
        w = weights.for_channel(channel_id)
        l_px = l_px + w * mse
        if sim is not None:
            l_fft = (0.0 if l_fft is None else l_fft) + w * sim
    return l_px, l_fft


def channel_losses(
    per_channel_batches: Mapping[int, Sequence[tuple[torch.Tensor, MaskedPatch]]],
    weights: ChannelWeights,
    reduction: str = "mean",
    compute_fft: bool = True,
) -> tuple[torch.Tensor, torch.Tensor | None, dict[int, tuple[float, float | None]]]:
    """Reduce each channel's batch and combine with the channel weights.

    Each batch entry pairs a predicted patch with its MaskedPatch; the MSE
    uses the masked coordinates, while the FFT similarity compares the full
    prediction with the reconstructed uncorrupted patch. Returns
    (l_px, l_fft, per-channel detail); l_fft is None when compute_fft is
    false.
    """
    if reduction not in VALID_REDUCTIONS:
        raise ConfigError(f"reduction must be one of {VALID_REDUCTIONS}, got {reduction!r}")
    if not per_channel_batches:
        raise InvalidInputError("at least one channel batch is required")
    reduced: dict[int, tuple[torch.Tensor, torch.Tensor | None]] = {}
    for channel_id, batch in per_channel_batches.items():
        weights.for_channel(channel_id)  # missing weight fails before any math
        if len(batch) == 0:
            raise InvalidInputError(f"channel {channel_id} contributed an empty batch")
        mses = torch.stack(
            [
                torch.as_tensor(masked_mse(pred, mp.original_values, mp.mask_coords))
                for pred, mp in batch
            ]
        )
        sims = None
        if compute_fft:
            sims = torch.stack(
                [
                    torch.as_tensor(fft_cosine_similarity(pred, mp.original()))
                    for pred, mp in batch
                ]
            )
        if reduction == "mean":
            reduced[channel_id] = (mses.mean(), None if sims is None else sims.mean())
        else:
            reduced[channel_id] = (mses.sum(), None if sims is None else sims.sum())
    l_px, l_fft = combine_channel_losses(reduced, weights)
    detail = {
        c: (float(m.detach()), None if s is None else float(s.detach()))
        for c, (m, s) in reduced.items()
    }
    return l_px, l_fft, detail


def _scalar(x: float | torch.Tensor) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def total_loss(
    l_px: float | torch.Tensor,
    l_fft: float | torch.Tensor | None,
    fft_enabled: bool = True,
) -> float | torch.Tensor:
    """L = l_px / (1 + l_fft); the ablation returns l_px unchanged.

    Strictly decreasing in l_fft for fixed l_px > 0: a prediction whose
    spectrum aligns better with the target's shrinks the effective loss.
    """
    if _scalar(l_px) < 0:
        raise InvalidInputError(f"l_px must be nonnegative, got {_scalar(l_px)}")
    if not fft_enabled or l_fft is None:
        return l_px
    if _scalar(l_fft) < 0:
        raise InvalidInputError(f"l_fft must be nonnegative, got {_scalar(l_fft)}")
    return l_px / (1.0 + l_fft)
