"""Command-line surface: prepare / train / convert / eval.

Every command is deterministic under a fixed seed, reads only its
declared inputs, and writes only under --out. Validation failures exit
with status 2 and a diagnostic on stderr; unexpected errors exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import pipeline as pl
from .dataset import (
    load_corpus,
    save_corpus,
    synthesize_toy_corpus,
)
from .errors import FormatError, ValidationError
from .phoneme_prior import save_priors


def _load_config(args) -> pl.TrainConfig:
    cfg = pl.TrainConfig() if args.config is None else pl.TrainConfig.from_json_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "beta", None) is not None:
        cfg = replace(cfg, weights=replace(cfg.weights, beta=args.beta))
    if getattr(args, "iterations", None) is not None:
        cfg = replace(cfg, iterations_stage1=args.iterations,
                      iterations_stage2=args.iterations)
    return cfg


def cmd_prepare(args) -> int:
    out = Path(args.out) if args.out else None
    if args.synthetic:
        if out is None:
            print("error: --synthetic requires --out", file=sys.stderr)
            return 2
        corpus = synthesize_toy_corpus(
            args.seed if args.seed is not None else 0,
            n_speakers=args.speakers, n_phonemes=args.phonemes,
            utts_per_speaker=args.utterances, frames_per_utt=args.frames,
            q=args.coeffs,
        )
        manifest = save_corpus(corpus, out)
        print(f"synthetic corpus written: {manifest}")
    else:
        if args.corpus is None:
            print("error: need --corpus or --synthetic", file=sys.stderr)
            return 2
        corpus = load_corpus(args.corpus)
    hist = np.zeros(corpus.inventory.k, dtype=np.int64)
    frames = 0
    for u in corpus.utterances:
        frames += u.seq.t
        hist += np.bincount(u.alignment.labels - 1, minlength=corpus.inventory.k)
    print(f"speakers: {corpus.n_domains} ({', '.join(d.name for d in corpus.domains)})")
    print(f"utterances: {corpus.n_utterances}")
    print(f"total frames: {frames}")
    print("phoneme histogram:")
    for name, count in zip(corpus.inventory.names, hist):
        print(f"  {name}: {int(count)}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_record.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    log = pl.TrainLog(out / "train_log.csv")

    if args.stage2_from:
        state = pl.load_state(args.stage2_from)
    else:
        state = pl.train_stage1(corpus, cfg, log=log, snapshot_dir=out)
        pl.save_state(out / "checkpoint_stage1.vcst", state)
    if not args.stage1_only:
        if state.priors is None:
            pl.estimate_latent_priors(state, corpus, cfg)
            save_priors(out / "priors.vcp", state.priors)
        state = pl.train_stage2(state, corpus, cfg, log=log, snapshot_dir=out)
    pl.save_state(out / "checkpoint_final.vcst", state)
    print(f"training complete at iteration {state.iteration}; outputs in {out}")
    return 0


def cmd_convert(args) -> int:
    state = pl.load_state(args.checkpoint)
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    domains = {d.name: d for d in corpus.domains}
    if args.target is not None and args.target not in domains:
        print(f"error: unknown speaker name {args.target!r}", file=sys.stderr)
        return 2

    from .dataset import write_feature_file

    entries = []
    for u in corpus.utterances:
        src = corpus.domain_by_code(u.speaker_code)
        if args.target is not None:
            targets = [domains[args.target]]
        else:
            targets = [d for d in corpus.domains if d.code != u.speaker_code]
        for tgt in targets:
            converted = pl.convert_utterance(state, u.seq, src, tgt)
            rel = f"{u.uid}__to__{tgt.name}.vcf"
            write_feature_file(out / rel, converted)
            entries.append({"id": u.uid, "source": src.name, "target": tgt.name,
                            "feature_file": rel})
    (out / "conversion_manifest.json").write_text(
        json.dumps({"conversions": entries}, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(entries)} converted feature files to {out}")
    return 0


def cmd_eval(args) -> int:
    state = pl.load_state(args.checkpoint)
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    report = ev.build_eval_report(state, corpus)
    ev.write_report(report, out)
    if args.svg:
        latents, pooled = pl.corpus_latents(state, corpus)
        ev.plot_latent_scatter(latents, pooled, out / "latent_scatter.svg")
        if args.train_log and Path(args.train_log).exists():
            ev.plot_training_log(args.train_log, out / "training_curves.svg")
    print(report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vclab",
        description="non-parallel many-to-many voice conversion lab "
                    "(feature-domain training, conversion, evaluation)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="validate a corpus manifest or synthesize a toy corpus")
    sp.add_argument("--corpus", help="manifest to validate")
    sp.add_argument("--synthetic", action="store_true", help="write a synthetic corpus")
    sp.add_argument("--out", help="output directory for --synthetic")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--speakers", type=int, default=4)
    sp.add_argument("--phonemes", type=int, default=5)
    sp.add_argument("--utterances", type=int, default=24, help="per speaker")
    sp.add_argument("--frames", type=int, default=256, help="per utterance")
    sp.add_argument("--coeffs", type=int, default=8, help="feature coefficients per frame")
    sp.set_defaults(func=cmd_prepare)

    st = sub.add_parser("train", help="run the two-stage training schedule")
    st.add_argument("--corpus", required=True)
    st.add_argument("--out", required=True)
    st.add_argument("--config", help="JSON training config (defaults otherwise)")
    st.add_argument("--seed", type=int, default=None, help="override config seed")
    st.add_argument("--beta", type=float, default=None, help="override regularizer weight")
    st.add_argument("--iterations", type=int, default=None,
                    help="override both stages' iteration counts")
    st.add_argument("--stage1-only", action="store_true")
    st.add_argument("--stage2-from", metavar="CKPT", help="resume stage 2 from a state file")
    st.set_defaults(func=cmd_train)

    sc = sub.add_parser("convert", help="convert utterances to target speakers")
    sc.add_argument("--checkpoint", required=True)
    sc.add_argument("--corpus", required=True)
    sc.add_argument("--out", required=True)
    sc.add_argument("--target", help="target speaker name (default: all other speakers)")
    sc.set_defaults(func=cmd_convert)

    se = sub.add_parser("eval", help="objective metrics for a checkpoint over a corpus")
    se.add_argument("--checkpoint", required=True)
    se.add_argument("--corpus", required=True)
    se.add_argument("--out", required=True)
    se.add_argument("--svg", action="store_true", help="also write SVG plots")
    se.add_argument("--train-log", help="training CSV for trajectory plots")
    se.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
