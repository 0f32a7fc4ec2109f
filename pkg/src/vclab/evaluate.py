"""Objective proxy metrics for linguistic retention and conversion quality.

Human listening scores are out of reach for an automated lab, so the
report stands in with measurable proxies: nearest-Gaussian phoneme
accuracy and the within/between scatter ratio of the latent space proxy
for intelligibility/linguistic retention, mel-cepstral distortion as a
crude spectral quality proxy, and classifier domain accuracy of converted
utterances for conversion strength.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import networks as nets
from . import pipeline as pl
from .dataset import Corpus
from .phoneme_prior import PriorSet

MCD_CONST = 10.0 / math.log(10.0)


@dataclass
class EvalReport:
    nearest_gaussian_accuracy: float
    scatter_ratio: float
    mcd: float
    domain_accuracy: float
    confusion: np.ndarray  # K x K counts, rows = true phoneme, cols = predicted
    frames: int

    def __post_init__(self):
        for frac in (self.nearest_gaussian_accuracy, self.domain_accuracy):
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"fraction out of range: {frac}")
        if int(self.confusion.sum()) != self.frames:
            raise ValueError("confusion counts must sum to total frames")

    def to_dict(self) -> dict:
        return {
            "nearest_gaussian_accuracy": self.nearest_gaussian_accuracy,
            "scatter_ratio": self.scatter_ratio,
            "mcd": self.mcd,
            "domain_accuracy": self.domain_accuracy,
            "frames": self.frames,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        head = "nearest_gaussian_accuracy,scatter_ratio,mcd,domain_accuracy,frames"
        row = (f"{self.nearest_gaussian_accuracy!r},{self.scatter_ratio!r},"
               f"{self.mcd!r},{self.domain_accuracy!r},{self.frames}")
        return head + "\n" + row + "\n"


def classify_frames(latents: np.ndarray, priors: PriorSet) -> np.ndarray:
    """Most likely phoneme per frame; ties break to the lowest index."""
    cols = []
    indices = sorted(priors.priors)
    for p in indices:
        pr = priors.priors[p]
        z = np.linalg.solve(pr.chol, latents - pr.mean[:, None])
        cols.append(-0.5 * (pr.dim * np.log(2 * np.pi) + pr.log_det + (z * z).sum(axis=0)))
    scores = np.stack(cols)  # ordered by ascending phoneme index, so argmax
    return np.asarray(indices)[np.argmax(scores, axis=0)]  # picks the lowest on ties


def nearest_gaussian_accuracy(latent_seqs, alignments, priors: PriorSet):
    """Fraction of frames whose nearest prior matches the alignment label.

    Returns (accuracy, K x K confusion counts).
    """
    k = priors.inventory.k
    confusion = np.zeros((k, k), dtype=np.int64)
    hits = 0
    total = 0
    for ls, al in zip(latent_seqs, alignments):
        pred = classify_frames(ls.latents, priors)
        true = al.labels
        hits += int((pred == true).sum())
        total += true.size
        np.add.at(confusion, (true - 1, pred - 1), 1)
    return (hits / total if total else 0.0), confusion


def scatter_ratio(latent_seqs, alignments) -> float:
    """Trace(within-class scatter) / trace(between-class scatter).

    Between-class scatter is frame-count weighted about the global mean.
    A single observed class has zero between-scatter: returns +inf.
    """
    pooled = np.concatenate([ls.latents for ls in latent_seqs], axis=1)
    labels = np.concatenate([al.labels for al in alignments])
    classes = np.unique(labels)
    global_mean = pooled.mean(axis=1)
    within = 0.0
    between = 0.0
    for p in classes:
        sel = pooled[:, labels == p]
        m = sel.mean(axis=1)
        within += float(((sel - m[:, None]) ** 2).sum())
        between += sel.shape[1] * float(((m - global_mean) ** 2).sum())
    if between == 0.0:
        return math.inf
    return within / between


def mel_cepstral_distortion(a: np.ndarray, b: np.ndarray,
                            include_c0: bool = False) -> float:
    """Frame-mean spectral distortion in dB; coefficient 0 excluded by default."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    start = 0 if include_c0 else 1
    d = a[start:] - b[start:]
    per_frame = MCD_CONST * np.sqrt(2.0 * (d * d).sum(axis=0))
    return float(per_frame.mean())


def domain_accuracy(classify, converted_seqs, target_codes) -> float:
    """Fraction of conversions whose segment-majority classifier vote hits
    the target domain. ``classify`` maps a Q x T feature matrix to an
    (N, S) per-segment class distribution; ties in the vote go to the
    lowest domain code."""
    hits = 0
    for seq, tgt in zip(converted_seqs, target_codes):
        probs = classify(seq)
        votes = np.argmax(probs, axis=0) + 1
        counts = np.bincount(votes, minlength=probs.shape[0] + 1)
        winner = int(np.argmax(counts))
        hits += int(winner == tgt)
    return hits / len(target_codes) if target_codes else 0.0


def mean_mahalanobis(latent_seqs, alignments, priors: PriorSet) -> float:
    """Mean distance of each frame to its own phoneme's Gaussian."""
    total = 0.0
    count = 0
    for ls, al in zip(latent_seqs, alignments):
        for p in np.unique(al.labels):
            pr = priors.priors.get(int(p))
            if pr is None:
                continue
            sel = ls.latents[:, al.labels == p]
            z = np.linalg.solve(pr.chol, sel - pr.mean[:, None])
            total += float(np.sqrt((z * z).sum(axis=0)).sum())
            count += sel.shape[1]
    return total / count if count else math.nan


def build_eval_report(state: pl.TrainState, corpus: Corpus) -> EvalReport:
    """Full report for a trained state over a corpus.

    Latent metrics need priors in the state. MCD is the cycle
    reconstruction distortion (convert to every other domain and back),
    the only reference-free variant available without parallel data.
    """
    if state.priors is None:
        raise pl.ConfigError("evaluation requires a state with estimated priors")
    latents, pooled = pl.corpus_latents(state, corpus)
    acc, confusion = nearest_gaussian_accuracy(latents, pooled, state.priors)
    ratio = scatter_ratio(latents, pooled)

    cvars = nets.wrap(state.model.classifier)

    def classify(features: np.ndarray) -> np.ndarray:
        factor = state.net_cfg.time_downsample
        feats, _ = pl._pad_width_multiple(features, factor)
        out = nets.classifier(state.net_cfg, cvars, feats[None, None], train=False)
        return out.value[0]

    mcds = []
    converted, targets = [], []
    domains = {d.code: d for d in corpus.domains}
    for u in corpus.utterances:
        src = domains[u.speaker_code]
        for d in corpus.domains:
            if d.code == u.speaker_code:
                continue
            there = pl.convert_utterance(state, u.seq, src, d)
            converted.append(there.features)
            targets.append(d.code)
            back = pl.convert_utterance(state, there, d, src)
            mcds.append(mel_cepstral_distortion(back.features, u.seq.features))
    dom_acc = domain_accuracy(classify, converted, targets)

    frames = int(sum(al.t for al in pooled))
    return EvalReport(
        nearest_gaussian_accuracy=acc,
        scatter_ratio=ratio,
        mcd=float(np.mean(mcds)) if mcds else 0.0,
        domain_accuracy=dom_acc,
        confusion=confusion,
        frames=frames,
    )


def write_report(report: EvalReport, out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "eval_report.csv").write_text(report.to_csv(), encoding="utf-8")


def plot_training_log(csv_path, out_svg) -> None:
    """Loss trajectories from a training CSV, written as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = np.genfromtxt(csv_path, delimiter=",", names=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    for name in ("i_g", "i_d", "i_c", "cyc", "id"):
        if name in (rows.dtype.names or ()):
            ax.plot(rows["iteration"], rows[name], label=name, linewidth=0.9)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_svg, format="svg")
    plt.close(fig)


def plot_latent_scatter(latent_seqs, alignments, out_svg) -> None:
    """First two latent dimensions, colored by phoneme label."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pooled = np.concatenate([ls.latents for ls in latent_seqs], axis=1)
    labels = np.concatenate([al.labels for al in alignments])
    fig, ax = plt.subplots(figsize=(5, 5))
    for p in np.unique(labels):
        pts = pooled[:2, labels == p]
        ax.scatter(pts[0], pts[1], s=4, label=f"ph{p}", alpha=0.5)
    ax.set_xlabel("latent dim 0")
    ax.set_ylabel("latent dim 1")
    ax.legend(fontsize=8, markerscale=2)
    fig.tight_layout()
    fig.savefig(out_svg, format="svg")
    plt.close(fig)
