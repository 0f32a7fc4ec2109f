import numpy as np
import pytest

from vclab import dataset as ds
from vclab import networks as nets
from vclab import pipeline as pl


def mini_net(n_domains: int = 2, q: int = 6, latent: int = 3) -> nets.NetConfig:
    return nets.NetConfig(
        input_height=q, n_domains=n_domains, latent_dim=latent,
        enc_blocks=(nets.ConvSpec(3, (3, 3), (1, 1)), nets.ConvSpec(4, (3, 4), (2, 2))),
        disc_blocks=(nets.ConvSpec(3, (3, 3), (2, 2)), nets.ConvSpec(3, (3, 4), (2, 2))),
        cls_blocks=(nets.ConvSpec(3, (3, 3), (2, 2)), nets.ConvSpec(3, (3, 4), (2, 2))),
    )


@pytest.fixture(scope="session")
def toy_corpus():
    return ds.synthesize_toy_corpus(7, n_speakers=2, n_phonemes=3,
                                    utts_per_speaker=3, frames_per_utt=64, q=6)


@pytest.fixture(scope="session")
def mini_config():
    return pl.TrainConfig(batch_size=4, crop_width=16, seed=11, net=mini_net(),
                          iterations_stage1=10, iterations_stage2=10)


@pytest.fixture(scope="session")
def trained_state(toy_corpus, mini_config):
    """A briefly trained two-stage state shared by behavioral tests."""
    state = pl.train_stage1(toy_corpus, mini_config, iterations=25)
    pl.estimate_latent_priors(state, toy_corpus, mini_config)
    return pl.train_stage2(state, toy_corpus, mini_config, iterations=25)


def params_equal(a: dict, b: dict) -> bool:
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


def states_equal(s1: pl.TrainState, s2: pl.TrainState) -> bool:
    return (
        params_equal(s1.model.generator, s2.model.generator)
        and params_equal(s1.model.discriminator, s2.model.discriminator)
        and params_equal(s1.model.classifier, s2.model.classifier)
        and params_equal(s1.model.gen_norm, s2.model.gen_norm)
        and params_equal(s1.adam_g.m, s2.adam_g.m)
        and params_equal(s1.adam_g.v, s2.adam_g.v)
        and s1.adam_g.t == s2.adam_g.t
        and s1.iteration == s2.iteration
        and s1.rng.bit_generator.state == s2.rng.bit_generator.state
    )
