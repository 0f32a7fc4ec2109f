"""Objective proxy metrics: nearest-Gaussian accuracy, scatter, MCD, domain votes."""

import json
import math

import numpy as np
from hypothesis import given, settings, strategies as st

from vclab import evaluate as ev
from vclab import phoneme_prior as pp
from vclab.dataset import PhonemeAlignment, PhonemeInventory

INV3 = PhonemeInventory(("a", "b", "c"))


def priors_at(means, cov=None):
    cov = np.eye(len(means[0])) if cov is None else cov
    pri = {i + 1: pp.GaussianPrior(np.asarray(m, dtype=float), cov, 10)
           for i, m in enumerate(means)}
    return pp.PriorSet(pri, INV3, len(means[0]))


class TestNearestGaussian:
    def test_latents_at_means(self):
        ps = priors_at([[0, 0], [10, 0], [0, 10]])
        lat = [pp.LatentSeq(np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]]))]
        al = [PhonemeAlignment(np.array([1, 2, 3]))]
        acc, confusion = ev.nearest_gaussian_accuracy(lat, al, ps)
        assert acc == 1.0
        assert np.array_equal(confusion, np.eye(3, dtype=int))

    def test_identical_priors_tie_to_lowest(self):
        ps = priors_at([[1, 1], [1, 1], [1, 1]])
        rng = np.random.default_rng(0)
        labels = rng.integers(1, 4, size=50)
        lat = [pp.LatentSeq(rng.normal(size=(2, 50)))]
        al = [PhonemeAlignment(labels)]
        acc, _ = ev.nearest_gaussian_accuracy(lat, al, ps)
        assert acc == np.mean(labels == 1)

    def test_matches_per_frame_oracle(self):
        rng = np.random.default_rng(1)
        ps = priors_at([[-5.0, 0.0], [5.0, 0.0]][:2] + [[0.0, 50.0]])
        pts = np.concatenate([rng.normal(size=(2, 100)) + np.array([[-5], [0]]),
                              rng.normal(size=(2, 100)) + np.array([[5], [0]])], axis=1)
        labels = np.repeat([1, 2], 100)
        acc, _ = ev.nearest_gaussian_accuracy([pp.LatentSeq(pts)],
                                              [PhonemeAlignment(labels)], ps)
        hits = 0
        for t in range(200):
            dens = [pp.prior_log_density(pts[:, t], ps.priors[p]) for p in (1, 2, 3)]
            hits += int(int(np.argmax(dens)) + 1 == labels[t])
        assert acc == hits / 200

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_affine_invariance(self, seed):
        rng = np.random.default_rng(seed)
        means = rng.normal(scale=3, size=(3, 2))
        covs = []
        for _ in range(3):
            a = rng.normal(size=(2, 2))
            covs.append(a @ a.T + 0.3 * np.eye(2))
        pri = {i + 1: pp.GaussianPrior(means[i], covs[i], 5) for i in range(3)}
        ps = pp.PriorSet(pri, INV3, 2)
        pts = rng.normal(scale=2, size=(2, 60))
        labels = rng.integers(1, 4, size=60)
        acc1, _ = ev.nearest_gaussian_accuracy([pp.LatentSeq(pts)],
                                               [PhonemeAlignment(labels)], ps)
        aff = rng.normal(size=(2, 2)) + 2 * np.eye(2)
        shift = rng.normal(size=2)
        pri2 = {p: pp.GaussianPrior(aff @ pr.mean + shift, aff @ pr.covariance @ aff.T,
                                    pr.frame_count) for p, pr in pri.items()}
        ps2 = pp.PriorSet(pri2, INV3, 2)
        pts2 = aff @ pts + shift[:, None]
        acc2, _ = ev.nearest_gaussian_accuracy([pp.LatentSeq(pts2)],
                                               [PhonemeAlignment(labels)], ps2)
        assert acc1 == acc2


class TestScatterRatio:
    def test_zero_within_scatter(self):
        lat = [pp.LatentSeq(np.array([[0.0, 0.0, 5.0, 5.0], [0.0, 0.0, 0.0, 0.0]]))]
        al = [PhonemeAlignment(np.array([1, 1, 2, 2]))]
        assert ev.scatter_ratio(lat, al) == 0.0

    def test_single_class_infinite(self):
        lat = [pp.LatentSeq(np.random.default_rng(0).normal(size=(2, 10)))]
        al = [PhonemeAlignment(np.ones(10, dtype=int))]
        assert ev.scatter_ratio(lat, al) == math.inf

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(3, 90))
        labels = rng.integers(1, 4, size=90)
        got = ev.scatter_ratio([pp.LatentSeq(pts)], [PhonemeAlignment(labels)])
        gm = pts.mean(axis=1)
        within = between = 0.0
        for p in (1, 2, 3):
            sel = pts[:, labels == p]
            m = sel.mean(axis=1)
            for t in range(sel.shape[1]):
                within += float(((sel[:, t] - m) ** 2).sum())
            between += sel.shape[1] * float(((m - gm) ** 2).sum())
        assert abs(got - within / between) < 1e-10

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_translation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(2, 40))
        labels = rng.integers(1, 3, size=40)
        base = ev.scatter_ratio([pp.LatentSeq(pts)], [PhonemeAlignment(labels)])
        shifted = ev.scatter_ratio([pp.LatentSeq(pts + rng.normal(size=(2, 1)))],
                                   [PhonemeAlignment(labels)])
        if math.isinf(base):
            assert math.isinf(shifted)
        else:
            assert abs(base - shifted) < 1e-8


class TestMCD:
    def test_coincidence_zero(self):
        a = np.random.default_rng(0).normal(size=(4, 6))
        assert ev.mel_cepstral_distortion(a, a) == 0.0

    def test_single_coefficient_unit_difference(self):
        a = np.zeros((3, 1))
        b = np.zeros((3, 1))
        b[1, 0] = 1.0
        v = ev.mel_cepstral_distortion(a, b)
        assert abs(v - (10.0 / math.log(10.0)) * math.sqrt(2.0)) < 1e-12
        assert abs(v - 6.1419) < 1e-4

    def test_c0_excluded_by_default(self):
        a = np.zeros((3, 2))
        b = np.zeros((3, 2))
        b[0, :] = 9.0  # energy row only
        assert ev.mel_cepstral_distortion(a, b) == 0.0
        assert ev.mel_cepstral_distortion(a, b, include_c0=True) > 0.0

    def test_frame_permutation_invariance(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(4, 10)), rng.normal(size=(4, 10))
        perm = rng.permutation(10)
        v1 = ev.mel_cepstral_distortion(a, b)
        v2 = ev.mel_cepstral_distortion(a[:, perm], b[:, perm])
        assert abs(v1 - v2) < 1e-12

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_symmetry_and_triangle(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.normal(size=(3, 5)) for _ in range(3))
        ab = ev.mel_cepstral_distortion(a, b)
        ba = ev.mel_cepstral_distortion(b, a)
        assert abs(ab - ba) < 1e-12
        ac = ev.mel_cepstral_distortion(a, c)
        cb = ev.mel_cepstral_distortion(c, b)
        assert ab <= ac + cb + 1e-12


class TestDomainAccuracy:
    def test_always_right_double(self):
        def classify(feats):
            out = np.zeros((3, 4))
            out[1] = 1.0  # always votes domain 2
            return out

        assert ev.domain_accuracy(classify, [None, None], [2, 2]) == 1.0

    def test_always_wrong_double(self):
        def classify(feats):
            out = np.zeros((3, 4))
            out[0] = 1.0
            return out

        assert ev.domain_accuracy(classify, [None, None], [2, 3]) == 0.0

    def test_vote_count_oracle_on_checkpoint(self, trained_state, toy_corpus):
        from vclab import networks as nets
        from vclab import pipeline as pl
        s = trained_state
        cvars = nets.wrap(s.model.classifier)

        def classify(features):
            feats, _ = pl._pad_width_multiple(features, s.net_cfg.time_downsample)
            return nets.classifier(s.net_cfg, cvars, feats[None, None], train=False).value[0]

        converted, targets = [], []
        for u in toy_corpus.utterances[:4]:
            src = toy_corpus.domain_by_code(u.speaker_code)
            for d in toy_corpus.domains:
                if d.code != u.speaker_code:
                    converted.append(pl.convert_utterance(s, u.seq, src, d).features)
                    targets.append(d.code)
        got = ev.domain_accuracy(classify, converted, targets)
        hits = 0
        for feats, tgt in zip(converted, targets):
            probs = classify(feats)
            votes = list(np.argmax(probs, axis=0) + 1)
            counts = {c: votes.count(c) for c in set(votes)}
            top = min(c for c in counts if counts[c] == max(counts.values()))
            hits += int(top == tgt)
        assert got == hits / len(targets)


class TestReport:
    def test_report_roundtrip_and_ranges(self, trained_state, toy_corpus, tmp_path):
        report = ev.build_eval_report(trained_state, toy_corpus)
        assert 0.0 <= report.nearest_gaussian_accuracy <= 1.0
        assert 0.0 <= report.domain_accuracy <= 1.0
        assert report.mcd >= 0.0
        assert report.confusion.sum() == report.frames
        ev.write_report(report, tmp_path)
        loaded = json.loads((tmp_path / "eval_report.json").read_text())
        assert loaded["frames"] == report.frames
        assert (tmp_path / "eval_report.csv").read_text().startswith(
            "nearest_gaussian_accuracy,")

    def test_report_deterministic(self, trained_state, toy_corpus):
        r1 = ev.build_eval_report(trained_state, toy_corpus)
        r2 = ev.build_eval_report(trained_state, toy_corpus)
        assert r1.to_json() == r2.to_json()

    def test_svg_plots_written(self, trained_state, toy_corpus, tmp_path):
        latents, pooled = ev.pl.corpus_latents(trained_state, toy_corpus)
        ev.plot_latent_scatter(latents, pooled, tmp_path / "scatter.svg")
        assert (tmp_path / "scatter.svg").read_text().lstrip().startswith("<?xml")
