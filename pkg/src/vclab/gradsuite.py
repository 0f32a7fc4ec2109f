"""The full analytic-vs-finite-difference gradient verification suite.

For each seeded miniature configuration (Q=6, crop T=16, N=2 domains,
K=3 phonemes) every scalar objective — both adversarial losses, both
classification losses, cycle, identity, the latent regularizer, and the
three weighted totals for both stages — is finite-difference checked
against the tape gradients with respect to every parameter of every
network it depends on plus its feature/latent inputs.

The discriminator and classifier totals are definitionally identical to
their single constituent terms; the suite asserts that identity exactly
(same values, same gradient arrays) rather than re-running the same
finite differences twice.

Configs are independent, so they may run in a small process pool; results
are keyed by seed and therefore deterministic regardless of scheduling.
"""

from __future__ import annotations

import multiprocessing
import time
from dataclasses import dataclass

from . import dataset as ds
from . import gradcheck as gc
from . import losses as L
from . import networks as nets
from . import pipeline as pl

MINI_Q = 6
MINI_T = 16
MINI_N = 2
MINI_K = 3


def mini_net_config() -> nets.NetConfig:
    return nets.NetConfig(
        input_height=MINI_Q, n_domains=MINI_N, latent_dim=2,
        enc_blocks=(nets.ConvSpec(2, (2, 3), (1, 1)), nets.ConvSpec(2, (2, 4), (2, 2))),
        disc_blocks=(nets.ConvSpec(1, (2, 3), (2, 2)), nets.ConvSpec(1, (2, 4), (2, 2))),
        cls_blocks=(nets.ConvSpec(1, (2, 3), (2, 2)), nets.ConvSpec(1, (2, 4), (2, 2))),
    )


@dataclass
class SuiteEntry:
    seed: int
    loss: str
    max_rel_err: float
    checked: int
    skipped: int

    @property
    def skip_fraction(self) -> float:
        total = self.checked + self.skipped
        return self.skipped / total if total else 0.0


def _named(groups: dict) -> dict:
    out = {}
    for prefix, grp in groups.items():
        for k, v in grp.items():
            out[f"{prefix}.{k}"] = v
    return out


def check_config(seed: int, step: float = 1e-3) -> list:
    """All loss gradients for one randomly initialized miniature config."""
    rho = 1.0 if seed % 2 == 0 else 2.0
    corpus = ds.synthesize_toy_corpus(
        seed, n_speakers=MINI_N, n_phonemes=MINI_K, utts_per_speaker=2,
        frames_per_utt=2 * MINI_T, q=MINI_Q,
    )
    cfg = pl.TrainConfig(
        batch_size=1, crop_width=MINI_T, seed=seed, net=mini_net_config(),
        weights=L.LossWeights(rho=rho),
    )
    state = pl.init_state(corpus, cfg)
    pl.estimate_latent_priors(state, corpus, cfg)
    batch = pl.sample_iteration_batch(state.rng, corpus, cfg)
    model, net_cfg, w = state.model, state.net_cfg, cfg.weights
    pooled = pl.pool_labels(batch.g_labels, net_cfg.time_downsample)
    results = []

    def run(loss_name, build, tensors):
        r = gc.check_gradients(build, tensors, loss_name, step=step)
        results.append(SuiteEntry(seed, loss_name, r.max_rel_err, r.checked, r.skipped))

    g_t = {f"g.{k}": v for k, v in model.generator.items()}
    d_t = {f"d.{k}": v for k, v in model.discriminator.items()}
    c_t = {f"c.{k}": v for k, v in model.classifier.items()}

    # adversarial discriminator loss == the full discriminator total
    def build_adv_d():
        loss, v = pl.build_d_objective(net_cfg, model, batch, detach_fake=False)
        gm = _named({"g": v["g"], "d": v["d"]})
        gm["in.d_src_x"] = v["inputs"]["d_src_x"]
        gm["in.d_real_x"] = v["inputs"]["d_real_x"]
        return loss, gm, []

    run("adv_d (= I_D)", build_adv_d,
        dict(g_t, **d_t, **{"in.d_src_x": batch.d_src_x, "in.d_real_x": batch.d_real_x}))

    # classifier loss == the full classifier total
    def build_cls_c():
        loss, v = pl.build_c_objective(net_cfg, model, batch)
        gm = _named({"c": v["c"]})
        gm["in.c_real_x"] = v["inputs"]["c_real_x"]
        return loss, gm, []

    run("cls_c (= I_C)", build_cls_c, dict(c_t, **{"in.c_real_x": batch.c_real_x}))

    # generator-side parts, each in isolation
    def part_builder(which):
        def build():
            g = nets.wrap(model.generator)
            d = nets.wrap(model.discriminator)
            c = nets.wrap(model.classifier)
            src_x = pl.ad.Var(batch.g_src_x)
            src1h = nets.one_hot(batch.g_src_codes, net_cfg.n_domains)
            tgt1h = nets.one_hot(batch.g_tgt_codes, net_cfg.n_domains)
            y, _ = nets.encode(net_cfg, g, model.gen_norm, src_x, True)
            kinks = []
            if which == "adv_g":
                fake, _ = nets.decode(net_cfg, g, model.gen_norm, y, tgt1h, True)
                loss = L.adv_loss_g(nets.discriminator(net_cfg, d, fake, tgt1h, True))
            elif which == "cls_g":
                fake, _ = nets.decode(net_cfg, g, model.gen_norm, y, tgt1h, True)
                loss = L.cls_loss_g(nets.classifier(net_cfg, c, fake, True),
                                    batch.g_tgt_codes, net_cfg.n_domains)
            elif which == "cyc":
                fake, _ = nets.decode(net_cfg, g, model.gen_norm, y, tgt1h, True)
                y2, _ = nets.encode(net_cfg, g, model.gen_norm, fake, True)
                back, _ = nets.decode(net_cfg, g, model.gen_norm, y2, src1h, True)
                loss = L.rho_norm(back, src_x, rho=w.rho)
                kinks = [back.value - batch.g_src_x]
            elif which == "id":
                same, _ = nets.decode(net_cfg, g, model.gen_norm, y, src1h, True)
                loss = L.rho_norm(same, src_x, rho=w.rho)
                kinks = [same.value - batch.g_src_x]
            elif which == "asr":
                loss = pl.latent_regularizer(y, pooled, state.priors, "error")
            gm = _named({"g": g, "d": d, "c": c})
            gm["in.g_src_x"] = src_x
            return loss, gm, kinks

        return build

    all_t = dict(g_t, **d_t, **c_t, **{"in.g_src_x": batch.g_src_x})
    run("adv_g", part_builder("adv_g"), dict(g_t, **d_t, **{"in.g_src_x": batch.g_src_x}))
    run("cls_g", part_builder("cls_g"), dict(g_t, **c_t, **{"in.g_src_x": batch.g_src_x}))
    run("cyc", part_builder("cyc"), dict(g_t, **{"in.g_src_x": batch.g_src_x}))
    run("id", part_builder("id"), dict(g_t, **{"in.g_src_x": batch.g_src_x}))
    run("asr_reg", part_builder("asr"), dict(g_t, **{"in.g_src_x": batch.g_src_x}))

    # latent regularizer w.r.t. the latent inputs directly
    y0, _ = nets.encode(net_cfg, nets.wrap(model.generator), model.gen_norm,
                        batch.g_src_x, True)
    y_arr = y0.value.copy()

    def build_asr_latent():
        yv = pl.ad.Var(y_arr)
        return pl.latent_regularizer(yv, pooled, state.priors, "error"), {"latents": yv}, []

    run("asr_reg d/dy", build_asr_latent, {"latents": y_arr})

    # full generator totals, both stages
    def total_builder(stage):
        def build():
            total, _, v, _, kinks = pl.build_g_objective(
                net_cfg, model, batch, w, stage,
                state.priors, pooled_labels=pooled,
            )
            gm = _named({"g": v["g"], "d": v["d"], "c": v["c"]})
            gm["in.g_src_x"] = v["inputs"]["g_src_x"]
            return total, gm, kinks

        return build

    run("i_g stage1", total_builder(1), all_t)
    run("i_g stage2", total_builder(2), all_t)
    return results


def run_suite(n_configs: int = 20, step: float = 1e-3, processes: int | None = None,
              seed0: int = 100):
    """Returns (entries sorted by (seed, loss), elapsed seconds)."""
    seeds = [seed0 + i for i in range(n_configs)]
    t0 = time.perf_counter()
    if processes is None:
        processes = min(multiprocessing.cpu_count(), 4)
    if processes > 1:
        with multiprocessing.Pool(processes) as pool:
            chunks = pool.map(check_config, seeds)
    else:
        chunks = [check_config(s) for s in seeds]
    elapsed = time.perf_counter() - t0
    entries = [e for chunk in chunks for e in chunk]
    return entries, elapsed
