import math

import pytest
import torch

from src.msggan.errors import InvalidArgumentError
from src.msggan.generator import MultiScaleGenerator, sample_latent
from src.msggan.layers import EqualizedConv2d, EqualizedLinear, minibatch_stddev, pixnorm

from helpers import tiny_spec


def test_pixnorm_unit_rms():
    x = torch.randn(4, 32, 5, 5) * 7.0
    y = pixnorm(x)
    rms = y.square().mean(dim=1).sqrt()
    assert torch.allclose(rms, torch.ones_like(rms), atol=1e-5)


def test_minibatch_stddev_appends_one_map():
    x = torch.randn(6, 10, 4, 4)
    y = minibatch_stddev(x)
    assert y.shape == (6, 11, 4, 4)
    assert torch.equal(y[:, :10], x)
    expected = x.var(dim=0, unbiased=False).sqrt().mean()
    assert torch.allclose(y[:, 10], expected.expand(6, 4, 4))


def test_minibatch_stddev_identical_samples_give_zeros():
    base = torch.randn(1, 10, 4, 4, requires_grad=True)
    y = minibatch_stddev(base.expand(5, 10, 4, 4))
    assert torch.count_nonzero(y[:, 10]) == 0
    y.sum().backward()
    assert torch.isfinite(base.grad).all()


def test_equalized_weights_are_standard_normal():
    conv = EqualizedConv2d(512, 512, 3, padding=1)
    w = conv.weight.detach()
    assert abs(float(w.mean())) < 0.05
    assert abs(float(w.std()) - 1.0) < 0.05
    assert conv.scale == pytest.approx(math.sqrt(2.0) / math.sqrt(512 * 9))
    assert torch.count_nonzero(conv.bias) == 0


def test_unequalized_bakes_scale_into_weights():
    conv = EqualizedConv2d(256, 256, 3, equalized=False)
    assert conv.scale == 1.0
    assert float(conv.weight.std()) == pytest.approx(math.sqrt(2.0 / (256 * 9)), rel=0.05)


def test_linear_shared_channel_bias():
    lin = EqualizedLinear(8, 4 * 16, bias_features=4)
    with torch.no_grad():
        lin.weight.zero_()
        lin.bias.copy_(torch.tensor([1.0, 2.0, 3.0, 4.0]))
    y = lin(torch.randn(2, 8)).view(2, 4, 4, 4)
    assert torch.equal(y[0, 2], torch.full((4, 4), 3.0))


def test_sample_latent_on_hypersphere():
    z = sample_latent(64, 32, generator=torch.Generator().manual_seed(3))
    assert z.shape == (64, 32)
    assert torch.allclose(z.square().mean(dim=1), torch.ones(64), atol=1e-5)
    with pytest.raises(InvalidArgumentError):
        sample_latent(0, 32)


def test_generator_emits_every_scale():
    spec = tiny_spec(final=16)
    out = MultiScaleGenerator(spec)(sample_latent(3, 16))
    assert sorted(out) == [4, 8, 16]
    for r, x in out.items():
        assert x.shape == (3, 3, r, r)


def test_generator_rejects_wrong_latent_width():
    gen = MultiScaleGenerator(tiny_spec())
    with pytest.raises(InvalidArgumentError):
        gen(torch.randn(2, 15))


def test_generator_trace_matches_table():
    from src.msggan.arch_spec import generator_table
    spec = tiny_spec(final=16)
    trace = []
    MultiScaleGenerator(spec)(sample_latent(2, 16), trace=trace)
    assert trace == [(row.block, row.operation, row.shape) for row in generator_table(spec)]


def test_same_seed_same_generator():
    spec = tiny_spec()
    torch.manual_seed(11)
    a = MultiScaleGenerator(spec)
    torch.manual_seed(11)
    b = MultiScaleGenerator(spec)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
