"""Two-stage training driver, optimizer, state serialization, conversion.

Stage 1 is plain adversarial training: per iteration the discriminator,
the classifier, and the generator each take one Adam step on their own
freshly sampled minibatch, in that order. Between stages, per-phoneme
Gaussian priors are estimated from the (frozen) encoder's latents over
the whole training corpus. Stage 2 runs the identical loop with the
latent regularizer added to the generator objective; with beta == 0 the
regularizer is skipped entirely, so the stage-2 trajectory is
bit-identical to simply continuing stage 1 on the same random stream.

Everything is driven by one seeded PCG64 stream whose state is saved in
checkpoints, so (seed, config, corpus) fully determine all outputs and a
save/resume reproduces the unbroken run bit-exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import networks as nets
from .dataset import AcousticFeatureSeq, Corpus, SpeakerDomain, convert_f0
from .errors import ConfigError, NonFiniteLossError
from .networks import ModelParams, NetConfig
from .phoneme_prior import (
    GaussianPrior,
    LOG_2PI,
    PriorSet,
    estimate_priors,
)

logger = logging.getLogger(__name__)

STATE_MAGIC = b"VCST"


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters; defaults follow common practice for
    this model family (unit loss weights, beta 0.01, batch 8, Adam at
    lr 0.001 with momentum 0.5, 2000 iterations per stage)."""

    weights: L.LossWeights = field(default_factory=L.LossWeights)
    batch_size: int = 8
    iterations_stage1: int = 2000
    iterations_stage2: int = 2000
    learning_rate_g: float = 0.001
    learning_rate_d: float = 0.001
    learning_rate_c: float = 0.001
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    crop_width: int = 128
    seed: int = 0
    covariance_floor: float = 1e-3
    prior_reestimate_every: int = 0
    unseen_phoneme_policy: str = "error"
    rho_raw_sum: bool = False
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.iterations_stage1 < 0 or self.iterations_stage2 < 0:
            raise ConfigError("iteration counts must be >= 0")
        for name in ("learning_rate_g", "learning_rate_d", "learning_rate_c"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.crop_width < 1:
            raise ConfigError("crop_width must be >= 1")
        if not self.net.identity_generator and self.crop_width % self.net.time_downsample != 0:
            raise ConfigError(
                f"crop_width {self.crop_width} not a multiple of the encoder "
                f"downsampling factor {self.net.time_downsample}"
            )
        if self.covariance_floor <= 0:
            raise ConfigError("covariance_floor must be positive")
        if self.unseen_phoneme_policy not in ("error", "skip-frame"):
            raise ConfigError(f"unknown unseen_phoneme_policy {self.unseen_phoneme_policy!r}")

    def to_dict(self) -> dict:
        w = self.weights
        return {
            "weights": {
                "lambda_cls": w.lambda_cls, "lambda_cyc": w.lambda_cyc,
                "lambda_id": w.lambda_id, "beta": w.beta, "rho": w.rho,
            },
            "batch_size": self.batch_size,
            "iterations_stage1": self.iterations_stage1,
            "iterations_stage2": self.iterations_stage2,
            "learning_rate_g": self.learning_rate_g,
            "learning_rate_d": self.learning_rate_d,
            "learning_rate_c": self.learning_rate_c,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "crop_width": self.crop_width,
            "seed": self.seed,
            "covariance_floor": self.covariance_floor,
            "prior_reestimate_every": self.prior_reestimate_every,
            "unseen_phoneme_policy": self.unseen_phoneme_policy,
            "rho_raw_sum": self.rho_raw_sum,
            "net": self.net.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        weights = L.LossWeights(**d.pop("weights", {}))
        net = NetConfig.from_dict(d.pop("net")) if "net" in d else NetConfig()
        return TrainConfig(weights=weights, net=net, **d)

    @staticmethod
    def from_json_file(path) -> "TrainConfig":
        try:
            return TrainConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError, KeyError) as e:
            raise ConfigError(f"bad config file {path}: {e}") from None


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @staticmethod
    def like(params: dict) -> "AdamState":
        return AdamState(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(params: dict, grads: dict, st: AdamState, lr: float,
              b1: float, b2: float, eps: float) -> None:
    """One in-place Adam update with bias correction."""
    st.t += 1
    c1 = 1.0 - b1 ** st.t
    c2 = 1.0 - b2 ** st.t
    for k in params:
        g = grads[k]
        st.m[k] = b1 * st.m[k] + (1.0 - b1) * g
        st.v[k] = b2 * st.v[k] + (1.0 - b2) * g * g
        params[k] = params[k] - lr * (st.m[k] / c1) / (np.sqrt(st.v[k] / c2) + eps)


# -- training state ------------------------------------------------------------

@dataclass
class TrainState:
    net_cfg: NetConfig
    model: ModelParams
    adam_g: AdamState
    adam_d: AdamState
    adam_c: AdamState
    rng: np.random.Generator
    train_config: TrainConfig
    iteration: int = 0
    stage: int = 1
    priors: PriorSet | None = None


def init_state(corpus: Corpus, cfg: TrainConfig) -> TrainState:
    """Fresh state: net geometry bound to the corpus (Q, N), seeded streams."""
    net_cfg = replace(cfg.net, input_height=corpus.utterances[0].seq.q,
                      n_domains=corpus.n_domains)
    min_t = min(u.seq.t for u in corpus.utterances)
    if min_t < cfg.crop_width:
        raise ConfigError(
            f"crop_width {cfg.crop_width} exceeds shortest utterance length {min_t}"
        )
    model = nets.init_model(net_cfg, seed=cfg.seed)
    # Child 3 of the seed tree; children 0-2 are consumed by init_model.
    stream = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])
    return TrainState(
        net_cfg=net_cfg,
        model=model,
        adam_g=AdamState.like(model.generator),
        adam_d=AdamState.like(model.discriminator),
        adam_c=AdamState.like(model.classifier),
        rng=stream,
        train_config=cfg,
    )


# -- minibatch assembly ----------------------------------------------------------

@dataclass
class IterationBatch:
    """One iteration's three minibatches (discriminator, classifier, generator)."""

    d_src_x: np.ndarray
    d_tgt_codes: np.ndarray
    d_real_x: np.ndarray
    c_real_x: np.ndarray
    c_codes: np.ndarray
    g_src_x: np.ndarray
    g_src_codes: np.ndarray
    g_tgt_codes: np.ndarray
    g_labels: np.ndarray


def _domain_index(corpus: Corpus) -> dict:
    idx: dict = {d.code: [] for d in corpus.domains}
    for i, u in enumerate(corpus.utterances):
        idx[u.speaker_code].append(i)
    for code, lst in idx.items():
        if not lst:
            raise ConfigError(f"domain {code} has no utterances")
    return idx


def sample_iteration_batch(rng: np.random.Generator, corpus: Corpus,
                           cfg: TrainConfig) -> IterationBatch:
    """Draws, in a fixed documented order, the three minibatches.

    Sources are uniform over utterances (their domain is the source code);
    targets are uniform over domains, independent of the source. The
    classifier batch samples a domain first, then an utterance within it.
    """
    by_domain = _domain_index(corpus)
    n = corpus.n_domains
    w = cfg.crop_width
    b = cfg.batch_size

    def crop(ui: int) -> np.ndarray:
        u = corpus.utterances[ui]
        start = int(rng.integers(0, u.seq.t - w + 1))
        return u.seq.features[:, start:start + w]

    def crop_with_labels(ui: int):
        u = corpus.utterances[ui]
        start = int(rng.integers(0, u.seq.t - w + 1))
        return (u.seq.features[:, start:start + w],
                u.alignment.labels[start:start + w])

    d_src, d_tgt, d_real = [], [], []
    for _ in range(b):
        tgt = int(rng.integers(1, n + 1))
        real_ui = by_domain[tgt][int(rng.integers(len(by_domain[tgt])))]
        d_real.append(crop(real_ui))
        src_ui = int(rng.integers(corpus.n_utterances))
        d_src.append(crop(src_ui))
        d_tgt.append(tgt)

    c_x, c_codes = [], []
    for _ in range(b):
        code = int(rng.integers(1, n + 1))
        ui = by_domain[code][int(rng.integers(len(by_domain[code])))]
        c_x.append(crop(ui))
        c_codes.append(code)

    g_x, g_src, g_tgt, g_lab = [], [], [], []
    for _ in range(b):
        ui = int(rng.integers(corpus.n_utterances))
        feats, labels = crop_with_labels(ui)
        g_x.append(feats)
        g_lab.append(labels)
        g_src.append(corpus.utterances[ui].speaker_code)
        g_tgt.append(int(rng.integers(1, n + 1)))

    def stack(mats):
        return np.stack(mats)[:, None, :, :]

    return IterationBatch(
        d_src_x=stack(d_src), d_tgt_codes=np.array(d_tgt), d_real_x=stack(d_real),
        c_real_x=stack(c_x), c_codes=np.array(c_codes),
        g_src_x=stack(g_x), g_src_codes=np.array(g_src),
        g_tgt_codes=np.array(g_tgt), g_labels=np.stack(g_lab),
    )


# -- label pooling ----------------------------------------------------------------

def pool_labels(labels: np.ndarray, factor: int) -> np.ndarray:
    """Majority label per window of ``factor`` frames; ties go to the
    label appearing earliest in the window."""
    labels = np.asarray(labels)
    if factor == 1:
        return labels.copy()
    t = labels.shape[-1]
    if t % factor != 0:
        raise ConfigError(f"label length {t} not a multiple of pooling factor {factor}")
    flat = labels.reshape(-1, t // factor, factor)
    out = np.empty(flat.shape[:2], dtype=np.int64)
    for i in range(flat.shape[0]):
        for j in range(flat.shape[1]):
            win = flat[i, j]
            vals, first, counts = np.unique(win, return_index=True, return_counts=True)
            best = np.flatnonzero(counts == counts.max())
            out[i, j] = vals[best[np.argmin(first[best])]]
    return out.reshape(labels.shape[:-1] + (t // factor,))


# -- objectives on the tape ---------------------------------------------------------

def latent_regularizer(y: ad.Var, pooled_labels: np.ndarray, priors: PriorSet,
                       policy: str) -> ad.Var:
    """Raw-sum negative log-likelihood of latent frames (tape version).

    Gradient w.r.t. a frame is precision @ (y - mean), matching the closed
    form in phoneme_prior.asr_regularization_grad.
    """
    b, latent_dim, t_lat = y.shape
    flat = ad.reshape(ad.transpose(y, (0, 2, 1)), (b * t_lat, latent_dim))
    lab = np.asarray(pooled_labels).reshape(-1)
    if lab.shape[0] != b * t_lat:
        raise ConfigError("pooled labels do not match latent frames")
    total = ad.Var(0.0)
    for p in np.unique(lab):
        p = int(p)
        if p not in priors.priors:
            if policy == "error":
                priors.require(p)
            continue
        pr = priors.priors[p]
        idx = np.flatnonzero(lab == p)
        d = ad.sub(ad.take_rows(flat, idx), pr.mean)
        quad = ad.sum_(ad.mul(ad.matmul(d, pr.precision), d))
        const = 0.5 * idx.size * (pr.dim * LOG_2PI + pr.log_det)
        total = total + (0.5 * quad + const)
    return total


def build_d_objective(net_cfg: NetConfig, model: ModelParams, batch: IterationBatch,
                      detach_fake: bool = True, train: bool = True):
    """Discriminator loss; returns (loss, param-var dict).

    detach_fake blocks gradients into the generator (the training path);
    with it off the same function is differentiable through G as well.
    """
    g = nets.wrap(model.generator)
    d = nets.wrap(model.discriminator)
    tgt = nets.one_hot(batch.d_tgt_codes, net_cfg.n_domains)
    src_x = ad.Var(batch.d_src_x)
    real_x = ad.Var(batch.d_real_x)
    y, _ = nets.encode(net_cfg, g, model.gen_norm, src_x, train)
    fake, _ = nets.decode(net_cfg, g, model.gen_norm, y, tgt, train)
    fake_in = ad.Var(fake.value) if detach_fake else fake
    real_p = nets.discriminator(net_cfg, d, real_x, tgt, train)
    fake_p = nets.discriminator(net_cfg, d, fake_in, tgt, train)
    loss = L.adv_loss_d(real_p, fake_p)
    return loss, {"g": g, "d": d, "inputs": {"d_src_x": src_x, "d_real_x": real_x}}


def build_c_objective(net_cfg: NetConfig, model: ModelParams, batch: IterationBatch,
                      train: bool = True):
    c = nets.wrap(model.classifier)
    x = ad.Var(batch.c_real_x)
    probs = nets.classifier(net_cfg, c, x, train)
    loss = L.cls_loss_c(probs, batch.c_codes, net_cfg.n_domains)
    return loss, {"c": c, "inputs": {"c_real_x": x}}


def build_g_objective(net_cfg: NetConfig, model: ModelParams, batch: IterationBatch,
                      weights: L.LossWeights, stage: int, priors: PriorSet | None,
                      policy: str = "error", rho_raw_sum: bool = False,
                      train: bool = True, pooled_labels: np.ndarray | None = None):
    """Full generator objective; returns (total, parts, vars, norm_updates, kinks).

    ``kinks`` carries the pre-|.| difference tensors of the two rho-norm
    terms so finite-difference checkers can detect sign crossings.
    """
    if stage == 2 and priors is None:
        raise ConfigError("stage 2 requires an estimated prior set")
    g = nets.wrap(model.generator)
    d = nets.wrap(model.discriminator)
    c = nets.wrap(model.classifier)
    n = net_cfg.n_domains
    src1h = nets.one_hot(batch.g_src_codes, n)
    tgt1h = nets.one_hot(batch.g_tgt_codes, n)
    src_x = ad.Var(batch.g_src_x)

    updates = []
    y, u = nets.encode(net_cfg, g, model.gen_norm, src_x, train)
    updates.append(u)
    fake, u = nets.decode(net_cfg, g, model.gen_norm, y, tgt1h, train)
    updates.append(u)
    fake_p = nets.discriminator(net_cfg, d, fake, tgt1h, train)
    adv_g = L.adv_loss_g(fake_p)
    cls_probs = nets.classifier(net_cfg, c, fake, train)
    cls_g = L.cls_loss_g(cls_probs, batch.g_tgt_codes, n)
    y2, u = nets.encode(net_cfg, g, model.gen_norm, fake, train)
    updates.append(u)
    cyc_out, u = nets.decode(net_cfg, g, model.gen_norm, y2, src1h, train)
    updates.append(u)
    cyc = L.rho_norm(cyc_out, src_x, rho=weights.rho, raw_sum=rho_raw_sum)
    id_out, u = nets.decode(net_cfg, g, model.gen_norm, y, src1h, train)
    updates.append(u)
    idl = L.rho_norm(id_out, src_x, rho=weights.rho, raw_sum=rho_raw_sum)

    total = adv_g + weights.lambda_cls * cls_g + weights.lambda_cyc * cyc \
        + weights.lambda_id * idl
    asr_raw = 0.0
    asr_mean = 0.0
    if stage == 2 and weights.beta != 0.0:
        if pooled_labels is None:
            pooled_labels = pool_labels(batch.g_labels, net_cfg.time_downsample)
        asr_var = latent_regularizer(y, pooled_labels, priors, policy)
        n_frames = y.shape[0] * y.shape[2]
        asr_mean_var = asr_var * (1.0 / n_frames)
        total = total + weights.beta * asr_mean_var
        asr_raw = asr_var.item()
        asr_mean = asr_mean_var.item()

    parts = {
        "adv_g": adv_g.item(), "cls_g": cls_g.item(),
        "cyc": cyc.item(), "id": idl.item(),
        "asr_raw": asr_raw, "asr_mean": asr_mean,
    }
    kinks = [cyc_out.value - batch.g_src_x, id_out.value - batch.g_src_x]
    return total, parts, {"g": g, "d": d, "c": c, "inputs": {"g_src_x": src_x}}, updates, kinks


# -- the training loop -----------------------------------------------------------

def run_iteration(state: TrainState, corpus: Corpus, cfg: TrainConfig,
                  stage: int) -> L.LossReport:
    """One D step, one C step, one G step, each on a fresh minibatch."""
    batch = sample_iteration_batch(state.rng, corpus, cfg)
    w = cfg.weights

    d_loss, dvars = build_d_objective(state.net_cfg, state.model, batch)
    d_loss.backward()
    adam_step(state.model.discriminator, nets.grads_of(dvars["d"]), state.adam_d,
              cfg.learning_rate_d, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    c_loss, cvars = build_c_objective(state.net_cfg, state.model, batch)
    c_loss.backward()
    adam_step(state.model.classifier, nets.grads_of(cvars["c"]), state.adam_c,
              cfg.learning_rate_c, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    g_total, parts, gvars, norm_updates, _ = build_g_objective(
        state.net_cfg, state.model, batch, w, stage, state.priors,
        policy=cfg.unseen_phoneme_policy, rho_raw_sum=cfg.rho_raw_sum,
    )
    g_total.backward()
    adam_step(state.model.generator, nets.grads_of(gvars["g"]), state.adam_g,
              cfg.learning_rate_g, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    for u in norm_updates:
        nets.apply_norm_updates(state.model.gen_norm, u, state.net_cfg.bn_momentum)

    state.iteration += 1
    state.stage = stage
    values = dict(parts, adv_d=d_loss.item(), cls_c=c_loss.item())
    if not all(np.isfinite(v) for v in values.values()):
        raise NonFiniteLossError(
            f"non-finite loss at iteration {state.iteration}: {values}", state=state
        )
    return L.total_objectives(
        state.iteration, stage, w,
        adv_d=values["adv_d"], adv_g=values["adv_g"], cls_c=values["cls_c"],
        cls_g=values["cls_g"], cyc=values["cyc"], id=values["id"],
        asr_raw=values["asr_raw"], asr_mean=values["asr_mean"],
        has_priors=state.priors is not None,
    )


class TrainLog:
    """Appends one CSV row per iteration; header written once."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            self.path.write_text(L.LossReport.csv_header() + "\n", encoding="utf-8")

    def append(self, report: L.LossReport) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(report.csv_row() + "\n")


def _train_loop(state: TrainState, corpus: Corpus, cfg: TrainConfig, stage: int,
                iterations: int, log: TrainLog | None,
                snapshot_dir=None) -> TrainState:
    for i in range(iterations):
        if (stage == 2 and cfg.prior_reestimate_every > 0 and i > 0
                and i % cfg.prior_reestimate_every == 0):
            estimate_latent_priors(state, corpus, cfg)
        try:
            report = run_iteration(state, corpus, cfg, stage)
        except NonFiniteLossError:
            if snapshot_dir is not None:
                snap = Path(snapshot_dir) / f"diagnostic_iter{state.iteration}.vcst"
                save_state(snap, state)
                logger.error("non-finite loss; diagnostic snapshot at %s", snap)
            raise
        if log is not None:
            log.append(report)
    return state


def train_stage1(corpus: Corpus, cfg: TrainConfig, state: TrainState | None = None,
                 iterations: int | None = None, log: TrainLog | None = None,
                 snapshot_dir=None) -> TrainState:
    if state is None:
        state = init_state(corpus, cfg)
    n = cfg.iterations_stage1 if iterations is None else iterations
    return _train_loop(state, corpus, cfg, 1, n, log, snapshot_dir)


def train_stage2(state: TrainState, corpus: Corpus, cfg: TrainConfig,
                 iterations: int | None = None, log: TrainLog | None = None,
                 snapshot_dir=None) -> TrainState:
    if state.priors is None:
        raise ConfigError("train_stage2 requires priors; run estimate_latent_priors first")
    n = cfg.iterations_stage2 if iterations is None else iterations
    return _train_loop(state, corpus, cfg, 2, n, log, snapshot_dir)


# -- prior estimation over the corpus ----------------------------------------------

def _pad_width_multiple(features: np.ndarray, factor: int) -> tuple[np.ndarray, int]:
    t = features.shape[-1]
    pad = (-t) % factor
    if pad == 0:
        return features, 0
    return np.pad(features, [(0, 0)] * (features.ndim - 1) + [(0, pad)], mode="edge"), pad


def corpus_latents(state: TrainState, corpus: Corpus):
    """Evaluation-mode latents and pooled alignments for every utterance.

    Utterances shorter than a whole downsampling window are edge-padded
    (features and labels alike) before encoding.
    """
    from .phoneme_prior import LatentSeq
    from .dataset import PhonemeAlignment

    factor = state.net_cfg.time_downsample
    latents, pooled = [], []
    for u in corpus.utterances:
        feats, _ = _pad_width_multiple(u.seq.features, factor)
        labels, _ = _pad_width_multiple(u.alignment.labels, factor)
        x = feats[None, None, :, :]
        y, _ = nets.encode(state.net_cfg, nets.wrap(state.model.generator),
                           state.model.gen_norm, x, train=False)
        latents.append(LatentSeq(y.value[0]))
        pooled.append(PhonemeAlignment(pool_labels(labels, factor)))
    return latents, pooled


def estimate_latent_priors(state: TrainState, corpus: Corpus,
                           cfg: TrainConfig) -> TrainState:
    """Estimate and freeze per-phoneme priors from current encoder latents."""
    latents, pooled = corpus_latents(state, corpus)
    priors = estimate_priors(latents, pooled, corpus.inventory,
                             floor=cfg.covariance_floor)
    missing = priors.missing_phonemes
    if missing:
        names = ", ".join(corpus.inventory.names[p - 1] for p in missing)
        logger.warning("phonemes with zero latent frames (no prior): %s", names)
    state.priors = priors
    return state


# -- conversion ----------------------------------------------------------------------

def convert_utterance(state: TrainState, seq: AcousticFeatureSeq,
                      src: SpeakerDomain, tgt: SpeakerDomain) -> AcousticFeatureSeq:
    """Convert features through the generator; normalize pitch; keep the rest.

    Feature width is edge-padded up to the encoder's downsampling multiple
    and trimmed back after decoding, so any T is admissible. Voicing flags
    and the aperiodicity payload pass through untouched.
    """
    factor = state.net_cfg.time_downsample
    feats, pad = _pad_width_multiple(seq.features, factor)
    x = feats[None, None, :, :]
    gvars = nets.wrap(state.model.generator)
    y, _ = nets.encode(state.net_cfg, gvars, state.model.gen_norm, x, train=False)
    code = nets.one_hot([tgt.code], state.net_cfg.n_domains)
    out, _ = nets.decode(state.net_cfg, gvars, state.model.gen_norm, y, code, train=False)
    converted = out.value[0, 0]
    if pad:
        converted = converted[:, :seq.t]
    return AcousticFeatureSeq(
        features=converted,
        log_f0=convert_f0(seq.log_f0, seq.voiced, src, tgt),
        voiced=seq.voiced,
        aperiodicity=seq.aperiodicity,
    )


# -- state serialization ---------------------------------------------------------------

def _rng_state_to_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": str(st["state"]["state"]),
        "inc": str(st["state"]["inc"]),
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _rng_from_json(d: dict) -> np.random.Generator:
    if d["bit_generator"] != "PCG64":
        raise ConfigError(f"unsupported bit generator {d['bit_generator']!r}")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }
    return np.random.Generator(bg)


def save_state(path, state: TrainState) -> None:
    """Exact round-trip of params, optimizer, RNG stream, and priors."""
    tensors: dict = {}
    for prefix, group in (
        ("g", state.model.generator),
        ("d", state.model.discriminator),
        ("c", state.model.classifier),
        ("norm", state.model.gen_norm),
    ):
        for k, v in group.items():
            tensors[f"{prefix}.{k}"] = v
    for name, st in (("adam_g", state.adam_g), ("adam_d", state.adam_d),
                     ("adam_c", state.adam_c)):
        for k, v in st.m.items():
            tensors[f"{name}.m.{k}"] = v
        for k, v in st.v.items():
            tensors[f"{name}.v.{k}"] = v
    prior_meta = None
    if state.priors is not None:
        prior_meta = {
            "latent_dim": state.priors.latent_dim,
            "names": list(state.priors.inventory.names),
            "frame_counts": {
                str(p): pr.frame_count for p, pr in state.priors.priors.items()
            },
        }
        for p, pr in state.priors.priors.items():
            tensors[f"prior.mean.{p}"] = pr.mean
            tensors[f"prior.cov.{p}"] = pr.covariance
    meta = {
        "iteration": state.iteration,
        "stage": state.stage,
        "rng": _rng_state_to_json(state.rng),
        "train_config": state.train_config.to_dict(),
        "net_config": state.net_cfg.to_dict(),
        "init_record": state.model.init_record,
        "adam_t": {"g": state.adam_g.t, "d": state.adam_d.t, "c": state.adam_c.t},
        "priors": prior_meta,
    }
    nets.write_container(path, STATE_MAGIC, meta, tensors)


def load_state(path) -> TrainState:
    meta, tensors = nets.read_container(path, STATE_MAGIC)
    net_cfg = NetConfig.from_dict(meta["net_config"])
    cfg = TrainConfig.from_dict(meta["train_config"])
    groups: dict = {"g": {}, "d": {}, "c": {}, "norm": {}}
    adams = {
        "adam_g": AdamState({}, {}, meta["adam_t"]["g"]),
        "adam_d": AdamState({}, {}, meta["adam_t"]["d"]),
        "adam_c": AdamState({}, {}, meta["adam_t"]["c"]),
    }
    prior_tensors: dict = {}
    for k, v in tensors.items():
        head, rest = k.split(".", 1)
        if head in groups:
            groups[head][rest] = v
        elif head in adams:
            kind, name = rest.split(".", 1)
            getattr(adams[head], kind)[name] = v
        elif head == "prior":
            prior_tensors[rest] = v
        else:
            raise ConfigError(f"unknown tensor group {head!r} in {path}")
    model = ModelParams(groups["g"], groups["d"], groups["c"], groups["norm"],
                        meta.get("init_record", {}))
    priors = None
    if meta.get("priors"):
        from .dataset import PhonemeInventory

        pm = meta["priors"]
        inv = PhonemeInventory(tuple(pm["names"]))
        pr = {}
        for p_str, count in pm["frame_counts"].items():
            p = int(p_str)
            pr[p] = GaussianPrior(
                prior_tensors[f"mean.{p}"], prior_tensors[f"cov.{p}"], int(count)
            )
        priors = PriorSet(pr, inv, int(pm["latent_dim"]))
    return TrainState(
        net_cfg=net_cfg, model=model,
        adam_g=adams["adam_g"], adam_d=adams["adam_d"], adam_c=adams["adam_c"],
        rng=_rng_from_json(meta["rng"]), train_config=cfg,
        iteration=meta["iteration"], stage=meta["stage"], priors=priors,
    )
