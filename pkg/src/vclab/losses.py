"""Scalar training objectives for the adversarial converter.

All expectations are minibatch means: probabilities arrive as (B, S)
segment arrays (already clamped into (0, 1) by the networks), class
distributions as (B, N, S). Losses accept either plain numpy arrays or
tape Vars and always return a Var; call .item() for the float.

The rho-norm defaults to a per-element mean rather than a raw sum so the
lambda weights are independent of crop size; the raw-sum reading is
available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_cyc: float = 1.0
    lambda_id: float = 1.0
    beta: float = 0.01
    rho: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_cyc", "lambda_id", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")


@dataclass
class LossReport:
    """Per-iteration named loss values and the three weighted totals.

    asr_raw is the raw-sum latent regularizer, asr_mean the per-frame
    mean that actually enters the generator total (both logged).
    """

    iteration: int
    stage: int
    adv_d: float
    adv_g: float
    cls_c: float
    cls_g: float
    cyc: float
    id: float
    asr_raw: float
    asr_mean: float
    i_g: float
    i_d: float
    i_c: float

    CSV_FIELDS = (
        "iteration", "stage", "adv_d", "adv_g", "cls_c", "cls_g",
        "cyc", "id", "asr_raw", "asr_mean", "i_g", "i_d", "i_c",
    )

    def __post_init__(self):
        vals = [getattr(self, f) for f in self.CSV_FIELDS]
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite loss report: {self}")

    def csv_row(self) -> str:
        return ",".join(repr(getattr(self, f)) for f in self.CSV_FIELDS)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)


def adv_loss_d(real_probs, fake_probs) -> ad.Var:
    """Discriminator adversarial loss: real scored real, fake scored fake."""
    real_probs, fake_probs = ad.as_var(real_probs), ad.as_var(fake_probs)
    real_term = ad.mean(ad.neg(ad.log(real_probs)))
    fake_term = ad.mean(ad.neg(ad.log(1.0 - fake_probs)))
    return real_term + fake_term


def adv_loss_g(fake_probs) -> ad.Var:
    """Generator adversarial loss: small when the discriminator is fooled."""
    return ad.mean(ad.neg(ad.log(ad.as_var(fake_probs))))


def _selected_log_prob(class_probs, codes, n: int) -> ad.Var:
    class_probs = ad.as_var(class_probs)
    codes = np.asarray(codes, dtype=np.int64)
    b, n_got, _ = class_probs.shape
    if n_got != n:
        raise ConfigError(f"classifier emitted {n_got} classes, expected {n}")
    mask = np.zeros((b, n, 1))
    mask[np.arange(b), codes - 1, 0] = 1.0
    picked = ad.sum_(ad.mul(class_probs, mask), axis=1)
    return ad.mean(ad.neg(ad.log(picked)))


def cls_loss_c(class_probs, true_codes, n_domains: int) -> ad.Var:
    """Classifier cross-entropy on real samples against their true domain."""
    return _selected_log_prob(class_probs, true_codes, n_domains)


def cls_loss_g(class_probs_of_fake, target_codes, n_domains: int) -> ad.Var:
    """Cross-entropy of generated samples against the conversion target."""
    return _selected_log_prob(class_probs_of_fake, target_codes, n_domains)


def rho_norm(a, b, rho: float = 1.0, raw_sum: bool = False) -> ad.Var:
    """Elementwise rho-norm of (a - b): mean(|d|^rho)^(1/rho) by default."""
    if rho <= 0:
        raise ConfigError("rho must be positive")
    diff = ad.sub(ad.as_var(a), ad.as_var(b))
    mag = ad.absolute(diff)
    if rho != 1.0:
        mag = ad.power(mag, rho)
    agg = ad.sum_(mag) if raw_sum else ad.mean(mag)
    if rho != 1.0:
        agg = ad.power(agg, 1.0 / rho)
    return agg


def cyc_loss(generator, o, src_code, tgt_code, rho: float = 1.0,
             raw_sum: bool = False) -> ad.Var:
    """Cycle-consistency: convert to tgt, back to src, compare with o.

    ``generator`` maps (features, code) -> features; test doubles welcome.
    """
    there = generator(ad.as_var(o), tgt_code)
    back = generator(there, src_code)
    return rho_norm(back, o, rho=rho, raw_sum=raw_sum)


def id_loss(generator, o, src_code, rho: float = 1.0, raw_sum: bool = False) -> ad.Var:
    """Identity-mapping: converting to the source domain must be a no-op."""
    return rho_norm(generator(ad.as_var(o), src_code), o, rho=rho, raw_sum=raw_sum)


def total_objectives(iteration: int, stage: int, w: LossWeights, *,
                     adv_d: float, adv_g: float, cls_c: float, cls_g: float,
                     cyc: float, id: float, asr_raw: float = 0.0,
                     asr_mean: float = 0.0, has_priors: bool = False) -> LossReport:
    """Combine part values into the three weighted totals.

    Stage 1 ignores the latent regularizer entirely; stage 2 requires an
    estimated prior set and adds beta times the per-frame mean.
    """
    if stage not in (1, 2):
        raise ConfigError(f"stage must be 1 or 2, got {stage}")
    if stage == 2 and not has_priors:
        raise ConfigError("stage 2 requires an estimated prior set")
    i_g = adv_g + w.lambda_cls * cls_g + w.lambda_cyc * cyc + w.lambda_id * id
    if stage == 2:
        i_g += w.beta * asr_mean
    return LossReport(
        iteration=iteration, stage=stage,
        adv_d=adv_d, adv_g=adv_g, cls_c=cls_c, cls_g=cls_g, cyc=cyc, id=id,
        asr_raw=asr_raw if stage == 2 else 0.0,
        asr_mean=asr_mean if stage == 2 else 0.0,
        i_g=i_g, i_d=adv_d, i_c=cls_c,
    )
