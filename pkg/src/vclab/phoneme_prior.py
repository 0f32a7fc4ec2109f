"""Per-phoneme Gaussian priors over the encoder's latent space.

Pooling every latent frame labeled with phoneme p across the corpus, the
maximum-likelihood mean is the pooled frame average and the covariance is
the pooled average outer product of centered frames. Covariances are then
symmetrized and eigenvalue-floored so the resulting Gaussian is always
invertible (toy corpora routinely produce rank-deficient scatter).

The regularization loss is the negative log-likelihood of each latent
frame under its own phoneme's Gaussian, summed over frames and
utterances (the raw sum; callers that want a batch-size-independent
weight divide by the frame count themselves).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dataset import PhonemeInventory
from .errors import (
    CorpusError,
    FormatError,
    IncompatibleVersionError,
    UnseenPhonemeError,
)

PRIOR_MAGIC = b"VCPR"
PRIOR_VERSION = 1

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianPrior:
    """Mean/covariance of one phoneme's latent distribution.

    The stored covariance is symmetric and positive definite (floored),
    so the Cholesky factor always exists.
    """

    mean: np.ndarray
    covariance: np.ndarray
    frame_count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape inconsistent with mean")
        if np.abs(cov - cov.T).max() > 1e-10:
            raise ValueError("covariance not symmetric")

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.covariance)

    @cached_property
    def log_det(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.chol))))

    @cached_property
    def precision(self) -> np.ndarray:
        ident = np.eye(self.dim)
        z = np.linalg.solve(self.chol, ident)
        return z.T @ z


@dataclass(frozen=True)
class PriorSet:
    """Phoneme index -> GaussianPrior; phonemes never observed are absent."""

    priors: dict
    inventory: PhonemeInventory
    latent_dim: int

    def __post_init__(self):
        for p, pr in self.priors.items():
            if pr.dim != self.latent_dim:
                raise ValueError(f"prior for phoneme {p} has dim {pr.dim}, expected {self.latent_dim}")

    @property
    def missing_phonemes(self) -> tuple:
        return tuple(p for p in range(1, self.inventory.k + 1) if p not in self.priors)

    def require(self, p: int) -> GaussianPrior:
        try:
            return self.priors[p]
        except KeyError:
            raise UnseenPhonemeError(
                f"phoneme {p} has no estimated prior (unseen during estimation)"
            ) from None


@dataclass(frozen=True)
class LatentSeq:
    """Encoder output: L x T latent feature matrix."""

    latents: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.latents, dtype=np.float64)
        object.__setattr__(self, "latents", arr)
        if arr.ndim != 2:
            raise ValueError("latents must be an L x T matrix")
        if not np.isfinite(arr).all():
            raise ValueError("latents contain non-finite values")

    @property
    def dim(self) -> int:
        return self.latents.shape[0]

    @property
    def t(self) -> int:
        return self.latents.shape[1]


def floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrize, then raise every eigenvalue to at least ``floor``."""
    sym = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(sym)
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def estimate_priors(latent_seqs, alignments, inventory: PhonemeInventory,
                    floor: float = 1e-3, diagonal: bool = False) -> PriorSet:
    """Pooled maximum-likelihood Gaussian per phoneme.

    Accumulation runs in utterance-index order (deterministic). Phonemes
    with zero pooled frames receive no prior; PriorSet.missing_phonemes
    lists them. ``diagonal`` keeps only the per-dimension variances, a
    documented approximation of the full outer-product covariance.
    """
    latent_seqs = list(latent_seqs)
    alignments = list(alignments)
    if len(latent_seqs) != len(alignments):
        raise CorpusError("need one alignment per latent sequence")
    if not latent_seqs:
        raise CorpusError("cannot estimate priors from an empty corpus")
    dim = latent_seqs[0].dim
    k = inventory.k

    counts = np.zeros(k + 1, dtype=np.int64)
    sums = np.zeros((k + 1, dim))
    for ls, al in zip(latent_seqs, alignments):
        if ls.t != al.t:
            raise CorpusError(
                f"latent length {ls.t} != alignment length {al.t}"
            )
        if ls.dim != dim:
            raise CorpusError("latent sequences disagree on dimension")
        for p in np.unique(al.labels):
            sel = ls.latents[:, al.labels == p]
            counts[p] += sel.shape[1]
            sums[p] += sel.sum(axis=1)

    means = np.zeros_like(sums)
    seen = counts > 0
    means[seen] = sums[seen] / counts[seen, None]

    scatters = np.zeros((k + 1, dim, dim))
    for ls, al in zip(latent_seqs, alignments):
        for p in np.unique(al.labels):
            centered = ls.latents[:, al.labels == p] - means[p][:, None]
            scatters[p] += centered @ centered.T

    priors = {}
    for p in range(1, k + 1):
        if counts[p] == 0:
            continue
        cov = scatters[p] / counts[p]
        if diagonal:
            cov = np.diag(np.maximum(np.diag(cov), floor))
        else:
            cov = floor_covariance(cov, floor)
        priors[p] = GaussianPrior(means[p], cov, int(counts[p]))
    return PriorSet(priors, inventory, dim)


def prior_log_density(y: np.ndarray, prior: GaussianPrior) -> float:
    """log N(y | mean, covariance) via the Cholesky factor."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != prior.mean.shape:
        raise ValueError(f"latent dim {y.shape} does not match prior dim {prior.mean.shape}")
    z = np.linalg.solve(prior.chol, y - prior.mean)
    return float(-0.5 * (prior.dim * LOG_2PI + prior.log_det + z @ z))


def asr_regularization_loss(latent_seqs, alignments, priors: PriorSet,
                            policy: str = "error") -> float:
    """Raw-sum negative log-likelihood of latents under their phoneme priors.

    ``policy`` controls frames labeled with a phoneme lacking a prior:
    'error' raises, 'skip-frame' drops them from the sum.
    """
    if policy not in ("error", "skip-frame"):
        raise ValueError(f"unknown unseen-phoneme policy {policy!r}")
    total = 0.0
    for ls, al in zip(latent_seqs, alignments):
        if ls.t != al.t:
            raise CorpusError(f"latent length {ls.t} != alignment length {al.t}")
        for p in np.unique(al.labels):
            sel = ls.latents[:, al.labels == p]
            if p not in priors.priors:
                if policy == "error":
                    priors.require(int(p))
                continue
            pr = priors.priors[int(p)]
            z = np.linalg.solve(pr.chol, sel - pr.mean[:, None])
            n = sel.shape[1]
            total += 0.5 * (n * (pr.dim * LOG_2PI + pr.log_det) + float((z * z).sum()))
    return total


def asr_regularization_grad(y: np.ndarray, prior: GaussianPrior) -> np.ndarray:
    """Gradient of the per-frame negative log-density: precision @ (y - mean)."""
    y = np.asarray(y, dtype=np.float64)
    return prior.precision @ (y - prior.mean)


# -- serialization ---------------------------------------------------------

def save_priors(path, priors: PriorSet) -> None:
    """Versioned binary: magic | version | L | K | per-phoneme blocks | names.

    Per-phoneme block: u64 frame_count (0 = absent), then mean (L f64) and
    covariance (L*L f64) only when present. Phoneme names trail the
    numeric blocks as length-prefixed UTF-8 so the inventory round-trips.
    """
    with open(path, "wb") as f:
        f.write(PRIOR_MAGIC)
        f.write(struct.pack("<III", PRIOR_VERSION, priors.latent_dim, priors.inventory.k))
        for p in range(1, priors.inventory.k + 1):
            pr = priors.priors.get(p)
            if pr is None:
                f.write(struct.pack("<Q", 0))
                continue
            f.write(struct.pack("<Q", pr.frame_count))
            f.write(np.ascontiguousarray(pr.mean, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(pr.covariance, dtype="<f8").tobytes())
        for name in priors.inventory.names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)


def load_priors(path) -> PriorSet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != PRIOR_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, dim, k = struct.unpack("<III", f.read(12))
        if version != PRIOR_VERSION:
            raise IncompatibleVersionError(
                f"{path}: prior file version {version} unsupported (expected {PRIOR_VERSION})"
            )
        priors = {}
        for p in range(1, k + 1):
            (count,) = struct.unpack("<Q", f.read(8))
            if count == 0:
                continue
            mean = np.frombuffer(f.read(8 * dim), dtype="<f8").copy()
            cov = np.frombuffer(f.read(8 * dim * dim), dtype="<f8").reshape(dim, dim).copy()
            priors[p] = GaussianPrior(mean, cov, int(count))
        names = []
        for _ in range(k):
            (n,) = struct.unpack("<H", f.read(2))
            names.append(f.read(n).decode("utf-8"))
    return PriorSet(priors, PhonemeInventory(tuple(names)), dim)
