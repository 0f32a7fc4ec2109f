"""Fast finite-difference spot checks of the training objectives.

The exhaustive 20-configuration suite lives in the acceptance tests;
these cover one configuration per rho so plain `pytest -k gradients`
gives quick signal during development.
"""

import numpy as np
import pytest

from vclab import gradsuite


@pytest.mark.parametrize("seed", [200, 201])  # even rho=1, odd rho=2
def test_all_losses_one_config(seed):
    entries = gradsuite.check_config(seed)
    names = {e.loss for e in entries}
    assert {"adv_d (= I_D)", "cls_c (= I_C)", "adv_g", "cls_g", "cyc", "id",
            "asr_reg", "asr_reg d/dy", "i_g stage1", "i_g stage2"} <= names
    for e in entries:
        assert e.max_rel_err <= 1e-4, (e.loss, e.max_rel_err)
        assert e.skip_fraction < 0.05


def test_gated_head_gradients():
    """The sigmoid-gate x linear product head is differentiable too."""
    from dataclasses import replace

    from vclab import dataset as ds
    from vclab import gradcheck as gc
    from vclab import networks as nets
    from vclab import losses as L
    from vclab import pipeline as pl
    from vclab import autodiff as ad

    corpus = ds.synthesize_toy_corpus(9, 2, 3, 2, 32, 6)
    net = replace(gradsuite.mini_net_config(), input_height=6,
                  generator_head="gated")
    cfg = pl.TrainConfig(batch_size=1, crop_width=16, seed=9, net=net)
    state = pl.init_state(corpus, cfg)
    batch = pl.sample_iteration_batch(state.rng, corpus, cfg)
    model, net_cfg = state.model, state.net_cfg

    def build():
        g = nets.wrap(model.generator)
        src_x = ad.Var(batch.g_src_x)
        src1h = nets.one_hot(batch.g_src_codes, net_cfg.n_domains)
        y, _ = nets.encode(net_cfg, g, model.gen_norm, src_x, True)
        same, _ = nets.decode(net_cfg, g, model.gen_norm, y, src1h, True)
        loss = L.rho_norm(same, src_x, rho=2.0)
        return loss, {f"g.{k}": v for k, v in g.items()}, []

    res = gc.check_gradients(build, {f"g.{k}": v for k, v in model.generator.items()},
                             "id gated", step=1e-3)
    assert res.max_rel_err <= 1e-4


def test_detached_fake_leaves_discriminator_gradient_unchanged():
    from vclab import dataset as ds
    from vclab import networks as nets
    from vclab import pipeline as pl

    corpus = ds.synthesize_toy_corpus(3, 2, 3, 2, 32, 6)
    cfg = pl.TrainConfig(batch_size=2, crop_width=16, seed=5,
                         net=gradsuite.mini_net_config())
    state = pl.init_state(corpus, cfg)
    batch = pl.sample_iteration_batch(state.rng, corpus, cfg)
    l1, v1 = pl.build_d_objective(state.net_cfg, state.model, batch, detach_fake=True)
    l1.backward()
    l2, v2 = pl.build_d_objective(state.net_cfg, state.model, batch, detach_fake=False)
    l2.backward()
    assert l1.item() == l2.item()
    g1 = nets.grads_of(v1["d"])
    g2 = nets.grads_of(v2["d"])
    for k in g1:
        np.testing.assert_array_equal(g1[k], g2[k])
    # and the detached variant must not reach the generator
    assert all(v is None or v.grad is None for v in v1["g"].values())
