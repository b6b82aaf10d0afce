import numpy as np
import pytest
import torch

from cycleseg.networks import (
    DiscriminatorConfig,
    DualHeadUNet3D,
    GeneratorConfig,
    PatchDiscriminator3D,
    to_model_range,
    to_storage_range,
)

TINY_GEN = GeneratorConfig(depth=2, base_channels=(4, 8))
TINY_DISC = DiscriminatorConfig(n_layers=2, base_channels=4)


def test_generator_shape_contract():
    net = DualHeadUNet3D(GeneratorConfig(depth=4, base_channels=(4, 8, 12, 16)))
    x = torch.rand(1, 1, 16, 64, 64) * 2 - 1
    out = net(x)
    assert out.image.shape == (1, 1, 16, 64, 64)
    assert out.seg.shape == (1, 3, 16, 64, 64)


def test_generator_output_ranges():
    torch.manual_seed(0)
    net = DualHeadUNet3D(TINY_GEN)
    x = torch.rand(2, 1, 8, 16, 16) * 2 - 1
    out = net(x)
    assert out.image.min() > -1.0 and out.image.max() < 1.0
    fg, ctr, dist = out.seg.unbind(dim=1)
    assert fg.min() > 0.0 and fg.max() < 1.0
    assert ctr.min() > 0.0 and ctr.max() < 1.0
    assert dist.min() > -1.0 and dist.max() < 1.0


def test_generator_eval_deterministic():
    torch.manual_seed(1)
    net = DualHeadUNet3D(TINY_GEN).eval()
    x = torch.rand(1, 1, 8, 16, 16)
    with torch.no_grad():
        a = net(x)
        b = net(x)
    assert torch.equal(a.image, b.image)
    assert torch.equal(a.seg, b.seg)


def test_generator_rejects_indivisible_dims():
    net = DualHeadUNet3D(GeneratorConfig(depth=4, base_channels=(4, 8, 12, 16)))
    with pytest.raises(ValueError):
        net(torch.rand(1, 1, 12, 64, 64))


def test_generators_have_independent_parameters():
    torch.manual_seed(2)
    f = DualHeadUNet3D(TINY_GEN).eval()
    b = DualHeadUNet3D(TINY_GEN).eval()
    x = torch.rand(1, 1, 8, 16, 16)
    with torch.no_grad():
        before = b(x)
        for p in f.parameters():
            p.add_(1.0)
        after = b(x)
    assert torch.equal(before.image, after.image)
    assert torch.equal(before.seg, after.seg)


def test_discriminator_score_map_smaller():
    net = PatchDiscriminator3D(DiscriminatorConfig(n_layers=3, base_channels=8))
    x = torch.rand(1, 1, 16, 64, 64)
    score = net(x)
    assert score.shape[1] == 1
    assert all(s < i for s, i in zip(score.shape[2:], x.shape[2:]))


def test_discriminator_channel_contract():
    seg_disc = PatchDiscriminator3D(DiscriminatorConfig(in_channels=3, n_layers=2, base_channels=4))
    ok = seg_disc(torch.rand(1, 3, 8, 16, 16))
    assert ok.shape[1] == 1
    with pytest.raises(ValueError):
        seg_disc(torch.rand(1, 1, 8, 16, 16))


def test_discriminator_shift_equivariance():
    torch.manual_seed(3)
    net = PatchDiscriminator3D(DiscriminatorConfig(n_layers=3, base_channels=4)).eval()
    stride = net.config.stride_product
    rng = np.random.default_rng(4)
    base = rng.normal(size=(8, 16, 24 * stride)).astype(np.float32)
    shifted = np.roll(base, stride, axis=2)
    with torch.no_grad():
        s0 = net(torch.from_numpy(base)[None, None])[0, 0]
        s1 = net(torch.from_numpy(shifted)[None, None])[0, 0]
    # away from the x borders the map shifts by exactly one cell
    interior = slice(6, s0.shape[2] - 6)
    torch.testing.assert_close(s1[:, :, 6 + 1 : s0.shape[2] - 6 + 1], s0[:, :, interior], atol=1e-5, rtol=1e-4)


def test_range_helpers_roundtrip():
    x = torch.rand(5)
    torch.testing.assert_close(to_storage_range(to_model_range(x)), x)
    assert float(to_model_range(torch.tensor(0.0))) == -1.0
    assert float(to_model_range(torch.tensor(1.0))) == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(depth=3, base_channels=(4, 8))
    with pytest.raises(ValueError):
        GeneratorConfig(norm="layer")
