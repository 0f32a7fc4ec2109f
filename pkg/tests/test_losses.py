"""Closed-form loss values, test doubles, weighted totals."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vclab import losses as L
from vclab.errors import ConfigError

LOG2 = math.log(2.0)


class TestAdversarial:
    def test_uncertain_discriminator(self):
        v = L.adv_loss_d(np.full((1, 4), 0.5), np.full((1, 4), 0.5)).item()
        assert abs(v - 2 * LOG2) < 1e-12

    def test_perfect_discriminator(self):
        v = L.adv_loss_d(np.array([[1 - 1e-7]]), np.array([[1e-7]])).item()
        assert abs(v - 2e-7) < 1e-8

    def test_single_segment_direct(self):
        v = L.adv_loss_d(np.array([[0.8]]), np.array([[0.3]])).item()
        assert abs(v - (-math.log(0.8) - math.log(0.7))) < 1e-12
        assert abs(v - 0.579818) < 1e-6

    def test_generator_fooled(self):
        assert abs(L.adv_loss_g(np.array([[1 - 1e-7]])).item() - 1e-7) < 1e-9

    def test_generator_coin_flip(self):
        assert abs(L.adv_loss_g(np.array([[0.5]])).item() - LOG2) < 1e-12

    def test_generator_two_segments(self):
        v = L.adv_loss_g(np.array([[0.9, 0.6]])).item()
        assert abs(v - (-math.log(0.9) - math.log(0.6)) / 2) < 1e-12
        assert abs(v - 0.308095) < 1e-5


class TestClassification:
    def test_perfect(self):
        probs = np.zeros((1, 4, 1))
        probs[0, 2, 0] = 1.0
        assert L.cls_loss_c(probs, np.array([3]), 4).item() == 0.0

    def test_uniform_four_domains(self):
        probs = np.full((1, 4, 2), 0.25)
        assert abs(L.cls_loss_c(probs, np.array([1]), 4).item() - math.log(4)) < 1e-12

    def test_two_segment_mix(self):
        probs = np.zeros((1, 4, 2))
        probs[0, :, 0] = 0.25
        probs[0, 0, 1] = 0.75
        probs[0, 1:, 1] = 0.25 / 3
        v = L.cls_loss_c(probs, np.array([1]), 4).item()
        assert abs(v - (math.log(4) + math.log(4 / 3)) / 2) < 1e-12
        assert abs(v - 0.836988) < 1e-6

    def test_cls_g_same_shapes(self):
        probs = np.full((2, 4, 3), 0.25)
        assert abs(L.cls_loss_g(probs, np.array([2, 4]), 4).item() - math.log(4)) < 1e-12


class TestRhoNorm:
    def test_coincidence(self):
        a = np.random.default_rng(0).normal(size=(3, 4))
        assert L.rho_norm(a, a).item() == 0.0

    def test_constant_difference(self):
        a = np.zeros((2, 3))
        assert abs(L.rho_norm(a + 2.0, a, rho=1.0).item() - 2.0) < 1e-12

    def test_rho2_elementwise_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        ref = math.sqrt(sum((x - y) ** 2 for x, y in zip(a.flat, b.flat)) / 12)
        assert abs(L.rho_norm(a, b, rho=2.0).item() - ref) < 1e-12

    def test_raw_sum_variant(self):
        a = np.ones((2, 2))
        assert abs(L.rho_norm(a, np.zeros((2, 2)), raw_sum=True).item() - 4.0) < 1e-12

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_nonnegative_and_symmetric_in_sign(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
        v = L.rho_norm(a, b).item()
        assert v >= 0.0
        assert abs(L.rho_norm(b, a).item() - v) < 1e-12


def identity_generator(o, code):
    return o


def constant_generator(value):
    def g(o, code):
        from vclab import autodiff as ad
        return ad.Var(np.full(o.shape, value))
    return g


class TestCycleIdentity:
    def test_identity_double_zero_everywhere(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            o = rng.normal(size=(1, 1, 3, 8))
            assert L.cyc_loss(identity_generator, o, 1, 2).item() == 0.0
            assert L.id_loss(identity_generator, o, 1).item() == 0.0

    def test_constant_double(self):
        o = np.zeros((1, 1, 2, 4))
        g = constant_generator(3.0)
        assert abs(L.cyc_loss(g, o, 1, 2).item() - 3.0) < 1e-12
        assert abs(L.id_loss(g, o, 1).item() - 3.0) < 1e-12

    def test_trained_checkpoint_compositional_oracle(self, trained_state):
        from vclab import networks as nets
        s = trained_state
        g = nets.wrap(s.model.generator)

        def gen(o, code):
            y, _ = nets.encode(s.net_cfg, g, s.model.gen_norm, o, train=False)
            out, _ = nets.decode(s.net_cfg, g, s.model.gen_norm, y,
                                 nets.one_hot([code], 2), train=False)
            return out

        o = np.random.default_rng(3).normal(size=(1, 1, 6, 16))
        v = L.cyc_loss(gen, o, 1, 2).item()
        manual = np.abs(gen(gen(o, 2), 1).value - o).mean()
        assert abs(v - manual) < 1e-12
        vi = L.id_loss(gen, o, 1).item()
        assert abs(vi - np.abs(gen(o, 1).value - o).mean()) < 1e-12


class TestTotals:
    def test_stage1_equals_stage2_with_zero_beta(self):
        w0 = L.LossWeights(beta=0.0)
        kw = dict(adv_d=0.5, adv_g=0.2, cls_c=0.4, cls_g=0.3, cyc=0.4, id=0.5)
        r1 = L.total_objectives(1, 1, w0, **kw)
        r2 = L.total_objectives(1, 2, w0, asr_raw=7.0, asr_mean=1.0, has_priors=True, **kw)
        assert r1.i_g == r2.i_g

    def test_weighted_sum(self):
        w = L.LossWeights()
        r = L.total_objectives(1, 1, w, adv_d=0.9, adv_g=0.2, cls_c=0.8,
                               cls_g=0.3, cyc=0.4, id=0.5)
        assert abs(r.i_g - 1.4) < 1e-12
        assert r.i_d == 0.9 and r.i_c == 0.8

    def test_defaults_echoed(self):
        w = L.LossWeights()
        assert (w.lambda_cls, w.lambda_cyc, w.lambda_id, w.beta) == (1.0, 1.0, 1.0, 0.01)

    def test_stage2_requires_priors(self):
        with pytest.raises(ConfigError):
            L.total_objectives(1, 2, L.LossWeights(), adv_d=0, adv_g=0, cls_c=0,
                               cls_g=0, cyc=0, id=0, has_priors=False)

    @given(st.floats(0.1, 5.0))
    @settings(max_examples=20, deadline=None)
    def test_weight_scaling_is_linear(self, lam):
        kw = dict(adv_d=0.5, adv_g=0.2, cls_c=0.4, cls_g=0.3, cyc=0.7, id=0.5)
        base = L.total_objectives(1, 1, L.LossWeights(lambda_cyc=lam), **kw)
        doubled = L.total_objectives(1, 1, L.LossWeights(lambda_cyc=2 * lam), **kw)
        assert abs((doubled.i_g - base.i_g) - lam * kw["cyc"]) < 1e-10

    def test_report_rejects_non_finite(self):
        with pytest.raises(ValueError):
            L.LossReport(1, 1, math.nan, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)

    def test_weights_validation(self):
        with pytest.raises(ConfigError):
            L.LossWeights(lambda_cyc=-0.1)
        with pytest.raises(ConfigError):
            L.LossWeights(rho=0.0)
