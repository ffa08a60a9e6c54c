"""Network construction, inference, tiled blending, and checkpoints."""

import json

import numpy as np
import pytest
import torch

from gdm.errors import CheckpointError, InvalidInputError
from gdm.imagecore import GrayImage
from gdm.model import (
    UNetSpec,
    _denoise_tiled,
    build_unet,
    denoise_image,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)


def conv_params(c_in, c_out, k):
    return c_out * (c_in * k * k + 1)


# --- architecture ----------------------------------------------------------


def test_parameter_count_matches_layer_by_layer_sum():
    # double 3x3 conv blocks at 32/64/128, two skip-concat decoder stages
    # (192->64, 96->32), and a 1x1 output head
    expected = (
        conv_params(1, 32, 3)
        + conv_params(32, 32, 3)
        + conv_params(32, 64, 3)
        + conv_params(64, 64, 3)
        + conv_params(64, 128, 3)
        + conv_params(128, 128, 3)
        + conv_params(192, 64, 3)
        + conv_params(64, 64, 3)
        + conv_params(96, 32, 3)
        + conv_params(32, 32, 3)
        + conv_params(32, 1, 1)
    )
    assert expected == 470_977
    assert parameter_count(build_unet()) == expected


@pytest.mark.parametrize("size", [4, 16, 64, 128])
def test_forward_preserves_spatial_shape(size):
    model = build_unet(seed=0)
    x = torch.rand(2, 1, size, size)
    with torch.no_grad():
        assert model(x).shape == x.shape


def test_forward_rejects_unbatched_input():
    with pytest.raises(InvalidInputError):
        build_unet()(torch.rand(1, 16, 16))


def test_forward_rejects_size_not_divisible_by_four():
    with pytest.raises(InvalidInputError, match="pad_to_multiple"):
        build_unet()(torch.rand(1, 1, 6, 6))


def test_rectangular_input_is_fine_when_divisible():
    model = build_unet(seed=0)
    x = torch.rand(1, 1, 32, 48)
    with torch.no_grad():
        assert model(x).shape == x.shape


# --- seeded initialization --------------------------------------------------


def test_same_seed_builds_identical_weights():
    a, b = build_unet(seed=11), build_unet(seed=11)
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(pa, pb)


def test_different_seeds_build_different_weights():
    a, b = build_unet(seed=11), build_unet(seed=12)
    assert any(
        not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters())
    )


def test_init_stays_within_fan_in_bound():
    model = build_unet(seed=3)
    for module in model.modules():
        if isinstance(module, torch.nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            bound = 1.0 / np.sqrt(fan_in)
            assert module.weight.abs().max().item() <= bound
            assert module.bias.abs().max().item() <= bound


def test_untrained_net_is_near_constant_on_constant_input():
    # measured once at seed 0: output std 1.04e-3; bound set 10x above
    out = denoise_image(build_unet(seed=0), GrayImage(np.full((64, 64), 0.5)))
    assert float(out.pixels.std()) < 0.01


# --- whole-image inference ---------------------------------------------------


def test_denoise_handles_non_divisible_sizes():
    out = denoise_image(
        build_unet(seed=4), GrayImage(np.random.default_rng(0).random((70, 89)))
    )
    assert out.shape == (70, 89)
    assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


def test_denoise_is_deterministic():
    model = build_unet(seed=4)
    img = GrayImage(np.random.default_rng(1).random((32, 32)))
    assert np.array_equal(denoise_image(model, img).pixels, denoise_image(model, img).pixels)


def test_denoise_restores_training_mode():
    model = build_unet(seed=4).train()
    denoise_image(model, GrayImage(np.zeros((16, 16))))
    assert model.training


def test_denoise_keeps_image_metadata():
    img = GrayImage(
        np.random.default_rng(2).random((32, 32)),
        source_bit_depth=16,
        pixel_size_nm=0.5,
    )
    out = denoise_image(build_unet(seed=4), img)
    assert out.source_bit_depth == 16
    assert out.pixel_size_nm == 0.5


def test_tiled_blending_is_exact_for_pointwise_model():
    # with a zero-receptive-field model, feathered tile blending must equal
    # the direct map, which pins the overlap weights to a partition of unity
    def fake(t):
        return t * 0.5 + 0.1

    pixels = np.random.default_rng(2).random((70, 50))
    out = _denoise_tiled(fake, pixels, tile=32, overlap=8)
    assert np.allclose(out, pixels * 0.5 + 0.1, atol=1e-6)


def test_tiled_path_matches_direct_path_for_real_net():
    model = build_unet(seed=6).eval()
    pixels = np.random.default_rng(3).random((64, 64))
    with torch.no_grad():
        direct = model(torch.from_numpy(pixels[None, None].astype(np.float32)))
    tiled = _denoise_tiled(model, pixels, tile=64, overlap=16)
    assert np.allclose(tiled, direct[0, 0].numpy(), atol=1e-6)


# --- checkpoints --------------------------------------------------------------


def test_checkpoint_round_trip_preserves_weights_and_metadata(tmp_path):
    model = build_unet(seed=5)
    save_checkpoint(model, {"epochs_completed": 3}, tmp_path / "run")
    loaded, meta = load_checkpoint(tmp_path / "run")
    assert meta["epochs_completed"] == 3
    assert not loaded.training
    for pa, pb in zip(model.parameters(), loaded.parameters()):
        assert torch.equal(pa, pb)
    x = torch.rand(1, 1, 16, 16, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        assert torch.equal(model.eval()(x), loaded(x))


def test_checkpoint_base_may_carry_pt_suffix(tmp_path):
    wp, mp = save_checkpoint(build_unet(seed=5), {}, tmp_path / "run.pt")
    assert (wp.name, mp.name) == ("run.pt", "run.json")
    load_checkpoint(tmp_path / "run.pt")
    load_checkpoint(tmp_path / "run")


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent")


def test_corrupt_weight_file_raises(tmp_path):
    wp, _ = save_checkpoint(build_unet(seed=5), {}, tmp_path / "run")
    wp.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "run")


def test_metadata_spec_mismatch_raises(tmp_path):
    _, mp = save_checkpoint(build_unet(seed=5), {}, tmp_path / "run")
    meta = json.loads(mp.read_text())
    meta["unet_spec"]["encoder_channels"] = [16, 32, 64]
    mp.write_text(json.dumps(meta))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "run")


def test_metadata_without_architecture_raises(tmp_path):
    _, mp = save_checkpoint(build_unet(seed=5), {}, tmp_path / "run")
    mp.write_text(json.dumps({"note": "no architecture"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "run")


def test_unreadable_metadata_raises(tmp_path):
    _, mp = save_checkpoint(build_unet(seed=5), {}, tmp_path / "run")
    mp.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "run")


# --- architecture spec ---------------------------------------------------------


def test_unet_spec_round_trips_through_json():
    spec = UNetSpec(encoder_channels=(8, 16, 32))
    assert UNetSpec.from_json(spec.to_json()) == spec


def test_unet_spec_requires_exactly_three_stages():
    with pytest.raises(InvalidInputError):
        UNetSpec(encoder_channels=(8, 16))
    with pytest.raises(InvalidInputError):
        UNetSpec(encoder_channels=(8, 16, 32, 64))


def test_custom_spec_shrinks_the_network():
    small = build_unet(UNetSpec(encoder_channels=(8, 16, 32)), seed=0)
    assert parameter_count(small) < 470_977
    x = torch.rand(1, 1, 16, 16)
    with torch.no_grad():
        assert small(x).shape == x.shape
