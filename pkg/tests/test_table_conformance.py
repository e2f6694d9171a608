import pytest
import torch

from src.msggan.arch_spec import discriminator_table, generator_table, resolve_architecture
from src.msggan.discriminator import MultiScaleDiscriminator
from src.msggan.generator import MultiScaleGenerator, sample_latent


@pytest.mark.slow
def test_full_resolution_forward_matches_layer_tables():
    spec = resolve_architecture(1024)
    gen_trace, disc_trace = [], []
    with torch.no_grad():
        images = MultiScaleGenerator(spec)(sample_latent(2, 512), trace=gen_trace)
        scores = MultiScaleDiscriminator(spec)(images, trace=disc_trace)
    assert scores.shape == (2,)

    assert gen_trace == [(row.block, row.operation, row.shape) for row in generator_table(spec)]
    expected = [(row.block, "Combine" if row.operation.startswith("Combine") else row.operation, row.shape)
                for row in discriminator_table(spec) if row.operation != "Raw RGB images"]
    assert disc_trace == expected

    mbs = [shape for _, op, shape in disc_trace if op == "MinBatchStd"]
    assert (36, 512, 512) in mbs
    assert mbs[-1] == (516, 4, 4)
    assert gen_trace[-1] == (9, "ToRGB", (3, 1024, 1024))
