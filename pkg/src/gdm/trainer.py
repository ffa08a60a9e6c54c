"""Self-supervised training loop for one or two image channels.

Each optimizer step draws one batch of blind-spot-masked patches from every
active channel, runs the network on the corrupted inputs, and minimizes the
weighted composite loss with Adam. An epoch is one pass over the larger
channel's shuffled patch set; the smaller channel's patches repeat
cyclically. Masks are redrawn every epoch, and the learning rate halves
every ten epochs.
"""

from __future__ import annotations

import csv
import math
import pathlib
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from . import __version__
from .errors import ConfigError, TrainingAbortError
from .imagecore import GrayImage, MaskedPatch, Patch, apply_blindspot_mask, extract_patches
from .model import CompactUNet, UNetSpec, build_unet
from .objective import ChannelWeights, LossBreakdown, channel_losses, total_loss

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LR_DECAY_FACTOR = 0.5
LR_DECAY_EVERY = 10  # epochs


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    patch_size: int = 128
    batch_size: int = 8
    learning_rate: float = 1e-4
    mask_fraction: float = 0.1
    epochs: int = 50
    weights: ChannelWeights = field(default_factory=lambda: ChannelWeights(1.0, 0.0))
    reduction: str = "mean"
    fft_loss_enabled: bool = True
    seed: int = 0
    stride: int | None = None  # None means stride = patch_size

    def __post_init__(self) -> None:
        if self.patch_size < 4 or self.patch_size % 4:
            raise ConfigError(
                f"patch_size must be a positive multiple of 4, got {self.patch_size}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ConfigError(
                f"mask_fraction must be in (0, 1), got {self.mask_fraction}"
            )
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"unknown reduction {self.reduction!r}")
        if self.stride is not None and self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    @property
    def effective_stride(self) -> int:
        return self.patch_size if self.stride is None else self.stride

    def to_json(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "mask_fraction": self.mask_fraction,
            "epochs": self.epochs,
            "w1": self.weights.w1,
            "w2": self.weights.w2,
            "reduction": self.reduction,
            "fft_loss_enabled": self.fft_loss_enabled,
            "seed": self.seed,
            "stride": self.stride,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "TrainConfig":
        return cls(
            patch_size=blob.get("patch_size", 128),
            batch_size=blob.get("batch_size", 8),
            learning_rate=blob.get("learning_rate", 1e-4),
            mask_fraction=blob.get("mask_fraction", 0.1),
            epochs=blob.get("epochs", 50),
            weights=ChannelWeights(blob.get("w1", 1.0), blob.get("w2", 0.0)),
            reduction=blob.get("reduction", "mean"),
            fft_loss_enabled=blob.get("fft_loss_enabled", True),
            seed=blob.get("seed", 0),
            stride=blob.get("stride"),
        )


@dataclass(frozen=True)
class ChannelSpec:
    """One training input channel: a preprocessed image plus its weight."""

    channel_id: int
    image: GrayImage
    weight: float

    def __post_init__(self) -> None:
        if self.channel_id not in (1, 2):
            raise ConfigError(f"channel_id must be 1 or 2, got {self.channel_id}")


@dataclass(frozen=True)
class EpochStats:
    """Mean loss terms over one epoch, plus the learning rate used."""

    epoch: int
    l_px: float
    l_fft: float | None
    total: float
    lr: float


@dataclass
class TrainResult:
    """A trained model with its loss history and reproducibility metadata."""

    model: CompactUNet
    history: list[EpochStats]
    metadata: dict


def ablate_fft(config: TrainConfig) -> TrainConfig:
    """Same configuration with the frequency loss term switched off."""
    return replace(config, fft_loss_enabled=False)


def lr_at_epoch(base_lr: float, epoch: int) -> float:
    """base_lr halved once per completed block of ten epochs."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return base_lr * LR_DECAY_FACTOR ** (epoch // LR_DECAY_EVERY)


def write_history_csv(history: Sequence[EpochStats], path: str | pathlib.Path) -> None:
    """Loss history as CSV columns epoch, l_px, l_fft, L, lr.

    The l_fft column is left empty for ablated runs.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_px", "l_fft", "L", "lr"])
        for row in history:
            writer.writerow(
                [
                    row.epoch,
                    f"{row.l_px:.10g}",
                    "" if row.l_fft is None else f"{row.l_fft:.10g}",
                    f"{row.total:.10g}",
                    f"{row.lr:.10g}",
                ]
            )


def _validate_channels(channels: Sequence[ChannelSpec], config: TrainConfig) -> None:
    if not channels:
        raise ConfigError("at least one training channel is required")
    ids = [c.channel_id for c in channels]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate channel ids: {ids}")
    for ch in channels:
        expected = config.weights.for_channel(ch.channel_id)
        if abs(ch.weight - expected) > 1e-12:
            raise ConfigError(
                f"channel {ch.channel_id} weight {ch.weight} disagrees with "
                f"config weights {expected}"
            )
        if min(ch.image.height, ch.image.width) < config.patch_size:
            raise ConfigError(
                f"channel {ch.channel_id} image {ch.image.shape} is smaller than "
                f"patch_size {config.patch_size}"
            )
    present = set(ids)
    for absent in {1, 2} - present:
        if config.weights.for_channel(absent) != 0.0:
            raise ConfigError(
                f"channel {absent} has weight {config.weights.for_channel(absent)} "
                "but no image was supplied"
            )


def _epoch_batches(
    patch_sets: dict[int, list[Patch]], order: dict[int, np.ndarray], batch_size: int
) -> list[dict[int, list[Patch]]]:
    """Group one epoch's shuffled patches into per-step channel batches.

    The largest channel is consumed exactly once; smaller channels cycle
    through their shuffled order as often as needed. The last batch may be
    partial, and every channel contributes the same count per step.
    """
    n_steps = math.ceil(max(len(p) for p in patch_sets.values()) / batch_size)
    n_longest = max(len(p) for p in patch_sets.values())
    batches = []
    for step in range(n_steps):
        lo = step * batch_size
        hi = min(lo + batch_size, n_longest)
        per_channel: dict[int, list[Patch]] = {}
        for cid, patches in patch_sets.items():
            idx = [order[cid][i % len(patches)] for i in range(lo, hi)]
            per_channel[cid] = [patches[i] for i in idx]
        batches.append(per_channel)
    return batches


def train(
    channels: Sequence[ChannelSpec],
    config: TrainConfig,
    batch_callback: Callable[[int, int, LossBreakdown, float], None] | None = None,
) -> TrainResult:
    """Run the full training loop and return the trained model.

    ``batch_callback(epoch, step, breakdown, lr)`` fires after every
    optimizer step. Raises :class:`TrainingAbortError` naming the epoch and
    batch if the loss becomes non-finite.
    """
    _validate_channels(channels, config)
    root = np.random.SeedSequence(config.seed)
    init_ss, shuffle_ss, mask_ss = root.spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    epoch_mask_seeds = mask_ss.spawn(config.epochs)

    init_seed = int(init_ss.generate_state(1, dtype=np.uint64)[0])
    model = build_unet(UNetSpec(), seed=init_seed)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
    )

    patch_sets = {
        ch.channel_id: extract_patches(ch.image, config.patch_size, config.effective_stride)
        for ch in sorted(channels, key=lambda c: c.channel_id)
    }

    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config.learning_rate, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        mask_rng = np.random.default_rng(epoch_mask_seeds[epoch])
        order = {
            cid: shuffle_rng.permutation(len(patches))
            for cid, patches in sorted(patch_sets.items())
        }
        sums = {"l_px": 0.0, "l_fft": 0.0, "total": 0.0}
        batches = _epoch_batches(patch_sets, order, config.batch_size)
        for step, per_channel in enumerate(batches):
            masked: dict[int, list[MaskedPatch]] = {
                cid: [
                    apply_blindspot_mask(p, config.mask_fraction, mask_rng)
                    for p in patches
                ]
                for cid, patches in sorted(per_channel.items())
            }
            pairs: dict[int, list[tuple[torch.Tensor, MaskedPatch]]] = {}
            for cid, mps in masked.items():
                batch_in = torch.from_numpy(
                    np.stack([mp.corrupted for mp in mps])[:, None].astype(np.float32)
                )
                preds = model(batch_in)[:, 0]
                pairs[cid] = [(preds[i], mps[i]) for i in range(len(mps))]
            l_px, l_fft, detail = channel_losses(
                pairs,
                config.weights,
                reduction=config.reduction,
                compute_fft=config.fft_loss_enabled,
            )
            loss = total_loss(l_px, l_fft, fft_enabled=config.fft_loss_enabled)
            if not torch.isfinite(torch.as_tensor(loss)):
                raise TrainingAbortError(
                    f"non-finite loss at epoch {epoch}, batch {step}: "
                    f"{float(torch.as_tensor(loss).detach())}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            breakdown = LossBreakdown(
                l_px=float(l_px.detach()),
                l_fft=None if l_fft is None else float(l_fft.detach()),
                total=float(loss.detach()),
                per_channel=detail,
            )
            sums["l_px"] += breakdown.l_px
            sums["l_fft"] += breakdown.l_fft or 0.0
            sums["total"] += breakdown.total
            if batch_callback is not None:
                batch_callback(epoch, step, breakdown, lr)
        n = len(batches)
        history.append(
            EpochStats(
                epoch=epoch,
                l_px=sums["l_px"] / n,
                l_fft=None if not config.fft_loss_enabled else sums["l_fft"] / n,
                total=sums["total"] / n,
                lr=lr,
            )
        )

    metadata = {
        "toolkit_version": __version__,
        "train_config": config.to_json(),
        "channels": [
            {
                "channel_id": ch.channel_id,
                "weight": ch.weight,
                "image_shape": list(ch.image.shape),
                "n_patches": len(patch_sets[ch.channel_id]),
            }
            for ch in sorted(channels, key=lambda c: c.channel_id)
        ],
        "adam": {"betas": list(ADAM_BETAS), "eps": ADAM_EPS},
        "lr_decay": {"factor": LR_DECAY_FACTOR, "every_epochs": LR_DECAY_EVERY},
        "epochs_completed": config.epochs,
        "seed": config.seed,
        "init_seed": init_seed,
        "final_losses": {
            "l_px": history[-1].l_px,
            "l_fft": history[-1].l_fft,
            "total": history[-1].total,
        },
        "loss_history": [
            {
                "epoch": h.epoch,
                "l_px": h.l_px,
                "l_fft": h.l_fft,
                "L": h.total,
                "lr": h.lr,
            }
            for h in history
        ],
    }
    model.eval()
    return TrainResult(model=model, history=history, metadata=metadata)
