"""Feature corpora: types, file formats, synthesis, F0 statistics.

A corpus is a set of utterances, each an acoustic feature matrix (Q
coefficients x T frames, one frame per 5 ms) with per-frame log-F0,
voicing flags, an opaque aperiodicity payload, and a same-length
frame-level phoneme alignment produced by an external recognizer.

On-disk formats (all little-endian, bit-exact round-trips):

* feature file: 16-byte header ``magic 'VCF1' | u32 version | u32 Q |
  u32 T``, then Q*T float32 features row-major, T float32 log-F0 (NaN on
  unvoiced frames), T u8 voicing flags, u32 payload length, payload.
* alignment file: UTF-8 text, one integer label per line.
* manifest: JSON listing utterances, the phoneme inventory, and speakers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusError, FormatError, IncompatibleVersionError, InsufficientDataError

FEATURE_MAGIC = b"VCF1"
FEATURE_VERSION = 1

# Domains with essentially constant pitch would blow up the normalization
# ratio; clamp the stored deviation.
F0_STD_FLOOR = 1e-6


def _frozen_array(x, dtype) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class AcousticFeatureSeq:
    """Q x T feature matrix plus per-frame log-F0, voicing, and payload.

    log_f0 is natural-log Hz and is finite exactly on voiced frames; NaN
    elsewhere so accidental use of unvoiced pitch is detectable. The
    aperiodicity payload is opaque bytes carried through unmodified.
    """

    features: np.ndarray
    log_f0: np.ndarray
    voiced: np.ndarray
    aperiodicity: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features, np.float64))
        object.__setattr__(self, "log_f0", _frozen_array(self.log_f0, np.float64))
        object.__setattr__(self, "voiced", _frozen_array(self.voiced, bool))
        if self.features.ndim != 2:
            raise CorpusError("features must be a Q x T matrix")
        q, t = self.features.shape
        if q < 1 or t < 1:
            raise CorpusError("features need Q >= 1 and T >= 1")
        if self.log_f0.shape != (t,) or self.voiced.shape != (t,):
            raise CorpusError("log_f0 and voiced must have length T")
        if not np.isfinite(self.features).all():
            raise CorpusError("features contain non-finite values")
        if not np.isfinite(self.log_f0[self.voiced]).all():
            raise CorpusError("log_f0 must be finite on voiced frames")
        if np.isfinite(self.log_f0[~self.voiced]).any():
            raise CorpusError("log_f0 must be NaN on unvoiced frames")

    @property
    def q(self) -> int:
        return self.features.shape[0]

    @property
    def t(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PhonemeAlignment:
    """Frame-level phoneme indices in {1..K}, one per feature frame."""

    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen_array(self.labels, np.int64))
        if self.labels.ndim != 1 or self.labels.size < 1:
            raise CorpusError("alignment must be a non-empty label vector")

    @property
    def t(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class PhonemeInventory:
    names: tuple

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise CorpusError("phoneme names must be unique")
        if not self.names:
            raise CorpusError("inventory must contain at least one phoneme")

    @property
    def k(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class SpeakerDomain:
    """One conversion domain: contiguous code in {1..N} plus log-F0 stats."""

    code: int
    name: str
    f0_mean: float
    f0_std: float

    def __post_init__(self):
        if self.f0_std <= 0:
            raise CorpusError(f"speaker {self.name!r}: log-F0 std must be positive")


@dataclass(frozen=True)
class Utterance:
    uid: str
    seq: AcousticFeatureSeq
    alignment: PhonemeAlignment
    speaker_code: int


@dataclass(frozen=True)
class Corpus:
    """Validated, immutable multi-speaker corpus."""

    utterances: tuple
    inventory: PhonemeInventory
    domains: tuple

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        object.__setattr__(self, "domains", tuple(self.domains))
        if not self.utterances:
            raise CorpusError("corpus has no utterances")
        codes = sorted(d.code for d in self.domains)
        if codes != list(range(1, len(codes) + 1)):
            raise CorpusError("speaker codes must be contiguous 1..N")
        valid = {d.code for d in self.domains}
        for u in self.utterances:
            if u.speaker_code not in valid:
                raise CorpusError(f"utterance {u.uid!r}: unknown speaker code {u.speaker_code}")
            if u.alignment.t != u.seq.t:
                raise CorpusError(
                    f"utterance {u.uid!r}: alignment length {u.alignment.t} != feature length {u.seq.t}"
                )
            bad = (u.alignment.labels < 1) | (u.alignment.labels > self.inventory.k)
            if bad.any():
                raise CorpusError(
                    f"utterance {u.uid!r}: label {int(u.alignment.labels[bad][0])} outside inventory 1..{self.inventory.k}"
                )

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    @property
    def n_utterances(self) -> int:
        return len(self.utterances)

    def domain_by_code(self, code: int) -> SpeakerDomain:
        for d in self.domains:
            if d.code == code:
                return d
        raise CorpusError(f"unknown speaker code {code}")

    def domain_by_name(self, name: str) -> SpeakerDomain:
        for d in self.domains:
            if d.name == name:
                return d
        raise CorpusError(f"unknown speaker name {name!r}")


# -- F0 statistics and conversion ---------------------------------------

def pooled_f0_statistics(seqs, floor: bool = False) -> tuple[float, float]:
    """Mean and population std of log-F0 over all voiced frames of ``seqs``.

    With ``floor`` the std is clamped below at F0_STD_FLOOR (the value
    stored on SpeakerDomain); without it the raw statistic is returned.
    """
    vals = [u.log_f0[u.voiced] for u in seqs]
    pooled = np.concatenate(vals) if vals else np.empty(0)
    if pooled.size < 2:
        raise InsufficientDataError(
            f"need at least 2 voiced frames for F0 statistics, got {pooled.size}"
        )
    m = float(pooled.mean())
    s = float(np.sqrt(np.mean((pooled - m) ** 2)))
    if floor:
        s = max(s, F0_STD_FLOOR)
    return m, s


def f0_statistics(corpus: Corpus, domain: int, floor: bool = False) -> tuple[float, float]:
    """Log-F0 mean/std over the voiced frames of one domain's utterances."""
    seqs = [u.seq for u in corpus.utterances if u.speaker_code == domain]
    return pooled_f0_statistics(seqs, floor=floor)


def convert_f0(log_f0: np.ndarray, voiced: np.ndarray, src: SpeakerDomain,
               tgt: SpeakerDomain) -> np.ndarray:
    """Log-Gaussian normalization of pitch from src to tgt statistics.

    Voiced frames map through ``tgt.mean + (tgt.std/src.std) * (x - src.mean)``;
    unvoiced frames pass through unchanged. Equal statistics must be an
    exact identity, so that case short-circuits.
    """
    log_f0 = np.asarray(log_f0, dtype=np.float64)
    voiced = np.asarray(voiced, dtype=bool)
    if src.f0_mean == tgt.f0_mean and src.f0_std == tgt.f0_std:
        return log_f0.copy()
    out = log_f0.copy()
    out[voiced] = tgt.f0_mean + (tgt.f0_std / src.f0_std) * (log_f0[voiced] - src.f0_mean)
    return out


# -- cropping ------------------------------------------------------------

def crop_segment(seq: AcousticFeatureSeq, start: int, width: int) -> AcousticFeatureSeq:
    """Contiguous [start, start+width) sub-sequence of every per-frame field.

    The aperiodicity payload is opaque and cannot be sliced; it is carried
    over verbatim.
    """
    if width < 1:
        raise CorpusError(f"crop width must be >= 1, got {width}")
    if start < 0 or start + width > seq.t:
        raise CorpusError(
            f"crop [{start}, {start + width}) out of range for T={seq.t}"
        )
    sl = slice(start, start + width)
    return AcousticFeatureSeq(
        features=seq.features[:, sl],
        log_f0=seq.log_f0[sl],
        voiced=seq.voiced[sl],
        aperiodicity=seq.aperiodicity,
    )


# -- synthetic corpora ----------------------------------------------------

@dataclass(frozen=True)
class ToyTruth:
    """Generation record for a synthetic corpus (for oracle tests)."""

    templates: np.ndarray        # K x Q
    speaker_gain: np.ndarray     # N
    speaker_offset: np.ndarray   # N x Q
    f0_mean: np.ndarray          # N
    f0_std: np.ndarray           # N
    noise_scale: float


def synthesize_toy_corpus_with_truth(
    seed: int,
    n_speakers: int,
    n_phonemes: int,
    utts_per_speaker: int,
    frames_per_utt: int,
    q: int,
    noise_scale: float = 0.1,
    template_scale: float = 1.0,
    speaker_offset_scale: float = 0.5,
    speaker_gain_range: tuple = (0.7, 1.3),
    segment_frames: tuple = (8, 24),
) -> tuple[Corpus, ToyTruth]:
    """Deterministic synthetic corpus with known per-frame ground truth.

    Each frame is a phoneme template scaled and shifted per speaker plus
    Gaussian noise; the alignment records the generating phoneme. Phoneme
    labels persist for segment_frames-long runs (40-120 ms at a 5 ms hop
    by default, long relative to typical encoder receptive fields). The
    speaker knobs control how strongly the per-speaker affine transform
    entangles speaker identity with the phoneme content.
    """
    if min(n_speakers, n_phonemes, utts_per_speaker, frames_per_utt, q) < 1:
        raise CorpusError("all toy corpus counts must be >= 1")
    rng = np.random.default_rng(seed)
    templates = template_scale * rng.normal(size=(n_phonemes, q))
    gain = rng.uniform(*speaker_gain_range, size=n_speakers)
    offset = rng.normal(scale=speaker_offset_scale, size=(n_speakers, q))
    f0_mean = rng.uniform(4.6, 5.6, size=n_speakers)
    f0_std = rng.uniform(0.1, 0.3, size=n_speakers)

    names = tuple(f"ph{i + 1}" for i in range(n_phonemes))
    inventory = PhonemeInventory(names)

    utterances = []
    per_speaker_seqs = {s: [] for s in range(n_speakers)}
    for s in range(n_speakers):
        for u in range(utts_per_speaker):
            labels = np.empty(frames_per_utt, dtype=np.int64)
            t = 0
            while t < frames_per_utt:
                seg = int(rng.integers(segment_frames[0], segment_frames[1] + 1))
                labels[t:t + seg] = int(rng.integers(1, n_phonemes + 1))
                t += seg
            clean = gain[s] * templates[labels - 1] + offset[s]
            feats = (clean + noise_scale * rng.normal(size=(frames_per_utt, q))).T
            voiced = rng.random(frames_per_utt) < 0.85
            if voiced.sum() < 2:
                voiced[:2] = True
            log_f0 = np.full(frames_per_utt, np.nan)
            log_f0[voiced] = f0_mean[s] + f0_std[s] * rng.normal(size=int(voiced.sum()))
            payload = rng.bytes(32)
            seq = AcousticFeatureSeq(feats, log_f0, voiced, payload)
            per_speaker_seqs[s].append(seq)
            utterances.append(
                Utterance(f"spk{s + 1}_utt{u:03d}", seq, PhonemeAlignment(labels), s + 1)
            )

    domains = []
    for s in range(n_speakers):
        m, sd = pooled_f0_statistics(per_speaker_seqs[s], floor=True)
        domains.append(SpeakerDomain(s + 1, f"spk{s + 1}", m, sd))

    corpus = Corpus(tuple(utterances), inventory, tuple(domains))
    truth = ToyTruth(templates, gain, offset, f0_mean, f0_std, noise_scale)
    return corpus, truth


def synthesize_toy_corpus(seed: int, n_speakers: int, n_phonemes: int,
                          utts_per_speaker: int, frames_per_utt: int, q: int,
                          noise_scale: float = 0.1,
                          template_scale: float = 1.0,
                          speaker_offset_scale: float = 0.5,
                          speaker_gain_range: tuple = (0.7, 1.3),
                          segment_frames: tuple = (8, 24)) -> Corpus:
    corpus, _ = synthesize_toy_corpus_with_truth(
        seed, n_speakers, n_phonemes, utts_per_speaker, frames_per_utt, q,
        noise_scale=noise_scale, template_scale=template_scale,
        speaker_offset_scale=speaker_offset_scale,
        speaker_gain_range=speaker_gain_range,
        segment_frames=segment_frames,
    )
    return corpus


# -- binary feature files --------------------------------------------------

def write_feature_file(path, seq: AcousticFeatureSeq) -> None:
    q, t = seq.features.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, q, t))
        f.write(np.ascontiguousarray(seq.features, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(seq.log_f0, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(seq.voiced, dtype=np.uint8).tobytes())
        f.write(struct.pack("<I", len(seq.aperiodicity)))
        f.write(seq.aperiodicity)


def read_feature_file(path) -> AcousticFeatureSeq:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, q, t = struct.unpack("<III", f.read(12))
        if version != FEATURE_VERSION:
            raise IncompatibleVersionError(
                f"{path}: feature file version {version} unsupported (expected {FEATURE_VERSION})"
            )
        feats = np.frombuffer(f.read(4 * q * t), dtype="<f4").reshape(q, t)
        log_f0 = np.frombuffer(f.read(4 * t), dtype="<f4")
        voiced = np.frombuffer(f.read(t), dtype=np.uint8).astype(bool)
        (plen,) = struct.unpack("<I", f.read(4))
        payload = f.read(plen)
    return AcousticFeatureSeq(
        feats.astype(np.float64), log_f0.astype(np.float64), voiced, payload
    )


def write_alignment_file(path, alignment: PhonemeAlignment) -> None:
    Path(path).write_text("\n".join(str(int(x)) for x in alignment.labels) + "\n", encoding="utf-8")


def read_alignment_file(path) -> PhonemeAlignment:
    lines = Path(path).read_text(encoding="utf-8").split()
    try:
        labels = np.array([int(x) for x in lines], dtype=np.int64)
    except ValueError as e:
        raise CorpusError(f"{path}: non-integer alignment entry ({e})") from None
    return PhonemeAlignment(labels)


# -- manifest / corpus round-trip ------------------------------------------

def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write manifest + per-utterance files under out_dir; returns manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "alignments").mkdir(parents=True, exist_ok=True)
    entries = []
    code_to_name = {d.code: d.name for d in corpus.domains}
    for u in corpus.utterances:
        feat_rel = f"features/{u.uid}.vcf"
        ali_rel = f"alignments/{u.uid}.lab"
        write_feature_file(out_dir / feat_rel, u.seq)
        write_alignment_file(out_dir / ali_rel, u.alignment)
        entries.append(
            {
                "id": u.uid,
                "speaker": code_to_name[u.speaker_code],
                "feature_file": feat_rel,
                "alignment_file": ali_rel,
            }
        )
    manifest = {
        "inventory": {"K": corpus.inventory.k, "names": list(corpus.inventory.names)},
        "speakers": [{"code": d.code, "name": d.name} for d in corpus.domains],
        "utterances": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_corpus(manifest_path) -> Corpus:
    """Load and fully validate a corpus; every failure names the utterance."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise CorpusError(f"manifest {manifest_path} does not exist")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorpusError(f"manifest {manifest_path}: invalid JSON ({e})") from None
    base = manifest_path.parent

    inv = manifest.get("inventory", {})
    names = inv.get("names", [])
    if inv.get("K") != len(names):
        raise CorpusError("manifest inventory K does not match number of names")
    inventory = PhonemeInventory(tuple(names))

    name_to_code = {}
    for spk in manifest.get("speakers", []):
        name_to_code[spk["name"]] = int(spk["code"])

    utterances = []
    per_code_seqs: dict[int, list] = {c: [] for c in name_to_code.values()}
    for entry in manifest.get("utterances", []):
        uid = entry.get("id", "<unnamed>")
        spk = entry.get("speaker")
        if spk not in name_to_code:
            raise CorpusError(f"utterance {uid!r}: unknown speaker {spk!r}")
        feat_path = base / entry["feature_file"]
        ali_path = base / entry["alignment_file"]
        for p in (feat_path, ali_path):
            if not p.exists():
                raise CorpusError(f"utterance {uid!r}: missing file {p}")
        try:
            seq = read_feature_file(feat_path)
            alignment = read_alignment_file(ali_path)
        except (FormatError, CorpusError) as e:
            raise CorpusError(f"utterance {uid!r}: {e}") from None
        if alignment.t != seq.t:
            raise CorpusError(
                f"utterance {uid!r}: alignment length {alignment.t} != feature length {seq.t}"
            )
        code = name_to_code[spk]
        per_code_seqs[code].append(seq)
        utterances.append(Utterance(uid, seq, alignment, code))

    domains = []
    for spk in manifest.get("speakers", []):
        code = int(spk["code"])
        try:
            m, s = pooled_f0_statistics(per_code_seqs[code], floor=True)
        except InsufficientDataError as e:
            raise CorpusError(f"speaker {spk['name']!r}: {e}") from None
        domains.append(SpeakerDomain(code, spk["name"], m, s))

    return Corpus(tuple(utterances), inventory, tuple(domains))
