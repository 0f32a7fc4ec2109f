"""Toy-scale differentiable networks: generator, discriminator, classifier.

The generator is an encoder-decoder: conv -> batch-norm -> GLU blocks
downsample the Q x T input to an L x T/r latent sequence (r = product of
the time strides), and mirrored transposed-conv blocks reconstruct Q x T
with the one-hot target domain code concatenated as constant channels at
every decoder block input. The discriminator and classifier are strided
conv/GLU stacks emitting one probability (or one class distribution) per
receptive-field segment.

Everything runs on the float64 autodiff tape, so every forward here is
differentiable end to end and checkable against finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from math import ceil, sqrt

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FormatError, IncompatibleVersionError

CHECKPOINT_MAGIC = b"VCCK"
CONTAINER_VERSION = 1

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class ConvSpec:
    """One conv block: output channels (post-GLU), kernel (kh, kw), stride."""

    channels: int
    kernel: tuple
    stride: tuple


@dataclass(frozen=True)
class NetConfig:
    input_height: int = 36
    n_domains: int = 4
    latent_dim: int = 8
    enc_blocks: tuple = (
        ConvSpec(16, (3, 9), (1, 1)),
        ConvSpec(32, (3, 8), (2, 2)),
        ConvSpec(32, (3, 8), (2, 2)),
    )
    disc_blocks: tuple = (
        ConvSpec(16, (3, 9), (2, 2)),
        ConvSpec(16, (3, 8), (2, 2)),
        ConvSpec(16, (3, 8), (2, 2)),
        ConvSpec(16, (3, 8), (2, 2)),
    )
    cls_blocks: tuple = (
        ConvSpec(8, (3, 9), (2, 2)),
        ConvSpec(8, (3, 8), (2, 2)),
        ConvSpec(8, (3, 8), (2, 2)),
        ConvSpec(8, (3, 8), (2, 2)),
    )
    generator_head: str = "linear"  # or "gated": sigmoid-gate x linear product
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    identity_generator: bool = False

    def __post_init__(self):
        if self.generator_head not in ("linear", "gated"):
            raise ConfigError(f"unknown generator head {self.generator_head!r}")
        if not self.identity_generator:
            if self.enc_blocks[0].stride != (1, 1):
                raise ConfigError("first encoder block must have stride (1, 1)")

    @property
    def time_downsample(self) -> int:
        """Ratio of input frames to latent frames."""
        if self.identity_generator:
            return 1
        r = 1
        for blk in self.enc_blocks:
            r *= blk.stride[1]
        return r

    @property
    def encoder_heights(self) -> tuple:
        hs = [self.input_height]
        for blk in self.enc_blocks:
            hs.append(ceil(hs[-1] / blk.stride[0]))
        return tuple(hs)

    def to_dict(self) -> dict:
        def spec(b):
            return {"channels": b.channels, "kernel": list(b.kernel), "stride": list(b.stride)}

        return {
            "input_height": self.input_height,
            "n_domains": self.n_domains,
            "latent_dim": self.latent_dim,
            "enc_blocks": [spec(b) for b in self.enc_blocks],
            "disc_blocks": [spec(b) for b in self.disc_blocks],
            "cls_blocks": [spec(b) for b in self.cls_blocks],
            "generator_head": self.generator_head,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
            "identity_generator": self.identity_generator,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        def specs(key):
            return tuple(
                ConvSpec(b["channels"], tuple(b["kernel"]), tuple(b["stride"]))
                for b in d[key]
            )

        return NetConfig(
            input_height=d["input_height"],
            n_domains=d["n_domains"],
            latent_dim=d["latent_dim"],
            enc_blocks=specs("enc_blocks"),
            disc_blocks=specs("disc_blocks"),
            cls_blocks=specs("cls_blocks"),
            generator_head=d["generator_head"],
            bn_momentum=d["bn_momentum"],
            bn_eps=d["bn_eps"],
            identity_generator=d["identity_generator"],
        )


@dataclass
class ModelParams:
    """Named float64 tensors for G/D/C plus batch-norm running state."""

    generator: dict
    discriminator: dict
    classifier: dict
    gen_norm: dict
    init_record: dict = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: v.copy() for k, v in self.generator.items()},
            {k: v.copy() for k, v in self.discriminator.items()},
            {k: v.copy() for k, v in self.classifier.items()},
            {k: v.copy() for k, v in self.gen_norm.items()},
            dict(self.init_record),
        )


def wrap(params: dict) -> dict:
    """Plain arrays -> leaf Vars (one fresh tape per objective build)."""
    return {k: ad.Var(v) for k, v in params.items()}


def grads_of(pvars: dict) -> dict:
    return {
        k: (v.grad if v.grad is not None else np.zeros_like(v.value))
        for k, v in pvars.items()
    }


# -- initialization ----------------------------------------------------------

def _conv_w(rng, cout, cin, kh, kw):
    bound = 1.0 / sqrt(cin * kh * kw)
    return rng.uniform(-bound, bound, size=(cout, cin, kh, kw))


def _convt_w(rng, cin, cout, kh, kw):
    bound = 1.0 / sqrt(cin * kh * kw)
    return rng.uniform(-bound, bound, size=(cin, cout, kh, kw))


def init_model(cfg: NetConfig, seed: int) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases, identity norm state."""
    ss = np.random.SeedSequence(seed)
    rg, rd, rc = (np.random.default_rng(s) for s in ss.spawn(3))
    n = cfg.n_domains

    g: dict = {}
    norm: dict = {}
    if not cfg.identity_generator:
        cin = 1
        for i, blk in enumerate(cfg.enc_blocks):
            kh, kw = blk.kernel
            g[f"enc.b{i}.w"] = _conv_w(rg, 2 * blk.channels, cin, kh, kw)
            g[f"enc.b{i}.b"] = np.zeros(2 * blk.channels)
            g[f"enc.b{i}.gamma"] = np.ones(2 * blk.channels)
            g[f"enc.b{i}.beta"] = np.zeros(2 * blk.channels)
            norm[f"enc.b{i}.mean"] = np.zeros(2 * blk.channels)
            norm[f"enc.b{i}.var"] = np.ones(2 * blk.channels)
            cin = blk.channels
        h_last = cfg.encoder_heights[-1]
        g["enc.head.w"] = _conv_w(rg, cfg.latent_dim, cin, h_last, 1)
        g["enc.head.b"] = np.zeros(cfg.latent_dim)

        c_last = cfg.enc_blocks[-1].channels
        g["dec.lift.w"] = _convt_w(rg, cfg.latent_dim + n, 2 * c_last, h_last, 1)
        g["dec.lift.b"] = np.zeros(2 * c_last)
        g["dec.lift.gamma"] = np.ones(2 * c_last)
        g["dec.lift.beta"] = np.zeros(2 * c_last)
        norm["dec.lift.mean"] = np.zeros(2 * c_last)
        norm["dec.lift.var"] = np.ones(2 * c_last)
        for j, i in enumerate(range(len(cfg.enc_blocks) - 1, 0, -1)):
            blk = cfg.enc_blocks[i]
            cout = cfg.enc_blocks[i - 1].channels
            kh, kw = blk.kernel
            g[f"dec.b{j}.w"] = _convt_w(rg, blk.channels + n, 2 * cout, kh, kw)
            g[f"dec.b{j}.b"] = np.zeros(2 * cout)
            g[f"dec.b{j}.gamma"] = np.ones(2 * cout)
            g[f"dec.b{j}.beta"] = np.zeros(2 * cout)
            norm[f"dec.b{j}.mean"] = np.zeros(2 * cout)
            norm[f"dec.b{j}.var"] = np.ones(2 * cout)
        kh, kw = cfg.enc_blocks[0].kernel
        c0 = cfg.enc_blocks[0].channels
        g["dec.out.w"] = _conv_w(rg, 1, c0 + n, kh, kw)
        g["dec.out.b"] = np.zeros(1)
        if cfg.generator_head == "gated":
            g["dec.gate.w"] = _conv_w(rg, 1, c0 + n, kh, kw)
            g["dec.gate.b"] = np.zeros(1)

    d: dict = {}
    cin, h = 1, cfg.input_height
    for i, blk in enumerate(cfg.disc_blocks):
        kh, kw = blk.kernel
        d[f"b{i}.w"] = _conv_w(rd, 2 * blk.channels, cin + n, kh, kw)
        d[f"b{i}.b"] = np.zeros(2 * blk.channels)
        cin = blk.channels
        h = ceil(h / blk.stride[0])
    d["out.w"] = _conv_w(rd, 1, cin + n, h, 1)
    d["out.b"] = np.zeros(1)

    c: dict = {}
    cin, h = 1, cfg.input_height
    for i, blk in enumerate(cfg.cls_blocks):
        kh, kw = blk.kernel
        c[f"b{i}.w"] = _conv_w(rc, 2 * blk.channels, cin, kh, kw)
        c[f"b{i}.b"] = np.zeros(2 * blk.channels)
        cin = blk.channels
        h = ceil(h / blk.stride[0])
    c["out.w"] = _conv_w(rc, n, cin, h, 1)
    c["out.b"] = np.zeros(n)

    return ModelParams(g, d, c, norm, {"seed": seed, "scheme": "fan_in_uniform"})


# -- building blocks ---------------------------------------------------------

def _glu(x: ad.Var) -> ad.Var:
    return ad.glu(x, axis=1)


def _batchnorm(x, gamma, beta, run_mean, run_var, train: bool, eps: float):
    """Channel batch-norm; returns (out, (batch_mean, batch_var) or None)."""
    if train:
        out, m, v = ad.batchnorm_train(x, gamma, beta, eps)
        return out, (m, v)
    c = x.shape[1]
    inv = 1.0 / np.sqrt(run_var + eps)
    xhat = ad.mul(ad.sub(x, run_mean.reshape(1, c, 1, 1)), inv.reshape(1, c, 1, 1))
    out = ad.add(ad.mul(xhat, ad.reshape(gamma, (1, c, 1, 1))),
                 ad.reshape(beta, (1, c, 1, 1)))
    return out, None


@lru_cache(maxsize=128)
def _code_channels_cached(code_bytes: bytes, b: int, n: int, h: int, w: int) -> np.ndarray:
    code = np.frombuffer(code_bytes, dtype=np.float64).reshape(b, n)
    return np.broadcast_to(code[:, :, None, None], (b, n, h, w)).copy()


def _code_channels(code: np.ndarray, h: int, w: int) -> ad.Var:
    b, n = code.shape
    return ad.Var(_code_channels_cached(code.tobytes(), b, n, h, w))


def _same_conv(x, w, b, stride):
    _, _, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    pt, pb = ad.same_pads(h, kh, stride[0])
    pl, pr = ad.same_pads(wd, kw, stride[1])
    return ad.conv2d(x, w, b, stride, (pt, pb, pl, pr))


def _mirror_convt(x, w, b, stride, out_hw):
    kh, kw = w.shape[2], w.shape[3]
    pt, pb = ad.same_pads(out_hw[0], kh, stride[0])
    pl, pr = ad.same_pads(out_hw[1], kw, stride[1])
    return ad.conv2d_transpose(x, w, b, stride, (pt, pb, pl, pr), out_hw)


# -- generator ----------------------------------------------------------------

def encode(cfg: NetConfig, gparams: dict, gen_norm: dict, x, train: bool):
    """Features (B, 1, Q, T) -> latents (B, L, T/r); returns (y, norm_updates).

    norm_updates maps layer prefix -> (batch_mean, batch_var); None in
    evaluation mode. T must be a multiple of the time downsampling factor.
    """
    x = ad.as_var(x)
    b, cin, q, t = x.shape
    if cin != 1 or q != cfg.input_height:
        raise ConfigError(f"encoder expects (B, 1, {cfg.input_height}, T), got {x.shape}")
    if cfg.identity_generator:
        return ad.reshape(x, (b, q, t)), None
    r = cfg.time_downsample
    if t % r != 0 or t < r:
        raise ConfigError(f"input width {t} not a positive multiple of downsampling {r}")
    updates = {} if train else None
    out = x
    for i, blk in enumerate(cfg.enc_blocks):
        out = _same_conv(out, gparams[f"enc.b{i}.w"], gparams[f"enc.b{i}.b"], blk.stride)
        out, stats = _batchnorm(
            out, gparams[f"enc.b{i}.gamma"], gparams[f"enc.b{i}.beta"],
            gen_norm[f"enc.b{i}.mean"], gen_norm[f"enc.b{i}.var"], train, cfg.bn_eps,
        )
        if stats is not None:
            updates[f"enc.b{i}"] = stats
        out = _glu(out)
    out = ad.conv2d(out, gparams["enc.head.w"], gparams["enc.head.b"], (1, 1), (0, 0, 0, 0))
    y = ad.reshape(out, (b, cfg.latent_dim, t // r))
    return y, updates


def decode(cfg: NetConfig, gparams: dict, gen_norm: dict, y, code: np.ndarray, train: bool):
    """Latents (B, L, T/r) + one-hot code (B, N) -> features (B, 1, Q, T)."""
    y = ad.as_var(y)
    b, latent_dim, t_lat = y.shape
    if cfg.identity_generator:
        return ad.reshape(y, (b, 1, latent_dim, t_lat)), None
    if latent_dim != cfg.latent_dim:
        raise ConfigError(f"decoder expects latent dim {cfg.latent_dim}, got {latent_dim}")
    code = np.asarray(code, dtype=np.float64)
    heights = cfg.encoder_heights
    widths = [t_lat]
    for blk in reversed(cfg.enc_blocks):
        widths.append(widths[-1] * blk.stride[1])
    widths = widths[::-1]  # widths[i] pairs with heights[i]

    updates = {} if train else None
    out = ad.reshape(y, (b, latent_dim, 1, t_lat))
    out = ad.concat([out, _code_channels(code, 1, t_lat)], axis=1)
    out = ad.conv2d_transpose(
        out, gparams["dec.lift.w"], gparams["dec.lift.b"], (1, 1), (0, 0, 0, 0),
        (heights[-1], t_lat),
    )
    out, stats = _batchnorm(
        out, gparams["dec.lift.gamma"], gparams["dec.lift.beta"],
        gen_norm["dec.lift.mean"], gen_norm["dec.lift.var"], train, cfg.bn_eps,
    )
    if stats is not None:
        updates["dec.lift"] = stats
    out = _glu(out)

    for j, i in enumerate(range(len(cfg.enc_blocks) - 1, 0, -1)):
        blk = cfg.enc_blocks[i]
        h, w = out.shape[2], out.shape[3]
        out = ad.concat([out, _code_channels(code, h, w)], axis=1)
        out = _mirror_convt(
            out, gparams[f"dec.b{j}.w"], gparams[f"dec.b{j}.b"], blk.stride,
            (heights[i], widths[i]),
        )
        out, stats = _batchnorm(
            out, gparams[f"dec.b{j}.gamma"], gparams[f"dec.b{j}.beta"],
            gen_norm[f"dec.b{j}.mean"], gen_norm[f"dec.b{j}.var"], train, cfg.bn_eps,
        )
        if stats is not None:
            updates[f"dec.b{j}"] = stats
        out = _glu(out)

    h, w = out.shape[2], out.shape[3]
    out = ad.concat([out, _code_channels(code, h, w)], axis=1)
    lin = _same_conv(out, gparams["dec.out.w"], gparams["dec.out.b"], (1, 1))
    if cfg.generator_head == "gated":
        gate = _same_conv(out, gparams["dec.gate.w"], gparams["dec.gate.b"], (1, 1))
        lin = ad.mul(lin, ad.sigmoid(gate))
    return lin, updates


def apply_norm_updates(gen_norm: dict, updates: dict, momentum: float) -> None:
    """EMA-commit batch statistics gathered by a training-mode forward."""
    if not updates:
        return
    for prefix, (m, v) in updates.items():
        gen_norm[f"{prefix}.mean"] = momentum * gen_norm[f"{prefix}.mean"] + (1 - momentum) * m
        gen_norm[f"{prefix}.var"] = momentum * gen_norm[f"{prefix}.var"] + (1 - momentum) * v


# -- discriminator / classifier ----------------------------------------------

def discriminator(cfg: NetConfig, dparams: dict, x, code: np.ndarray, train: bool) -> ad.Var:
    """Per-segment real/fake probabilities (B, S), clamped into (0, 1)."""
    out = ad.as_var(x)
    code = np.asarray(code, dtype=np.float64)
    for i, blk in enumerate(cfg.disc_blocks):
        h, w = out.shape[2], out.shape[3]
        out = ad.concat([out, _code_channels(code, h, w)], axis=1)
        out = _same_conv(out, dparams[f"b{i}.w"], dparams[f"b{i}.b"], blk.stride)
        out = _glu(out)
    h, w = out.shape[2], out.shape[3]
    out = ad.concat([out, _code_channels(code, h, w)], axis=1)
    out = ad.conv2d(out, dparams["out.w"], dparams["out.b"], (1, 1), (0, 0, 0, 0))
    probs = ad.clip(ad.sigmoid(out), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return ad.reshape(probs, (out.shape[0], out.shape[3]))


def classifier(cfg: NetConfig, cparams: dict, x, train: bool) -> ad.Var:
    """Per-segment domain distributions (B, N, S); each segment sums to 1."""
    out = ad.as_var(x)
    for i, blk in enumerate(cfg.cls_blocks):
        out = _same_conv(out, cparams[f"b{i}.w"], cparams[f"b{i}.b"], blk.stride)
        out = _glu(out)
    out = ad.conv2d(out, cparams["out.w"], cparams["out.b"], (1, 1), (0, 0, 0, 0))
    probs = ad.softmax(out, axis=1)
    return ad.reshape(probs, (out.shape[0], cfg.n_domains, out.shape[3]))


def one_hot(codes, n: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if np.any((codes < 1) | (codes > n)):
        raise ConfigError(f"domain codes must lie in 1..{n}")
    out = np.zeros((codes.size, n))
    out[np.arange(codes.size), codes - 1] = 1.0
    return out


# -- named-tensor container ----------------------------------------------------

def write_container(path, magic: bytes, meta: dict, tensors: dict) -> None:
    """magic | u32 version | u64 json-length | json | float64 blocks.

    The JSON carries arbitrary metadata plus the tensor index (names and
    shapes, in order); tensor data follows as little-endian float64.
    """
    index = [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()]
    header = dict(meta)
    header["tensors"] = index
    raw = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", CONTAINER_VERSION))
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for v in tensors.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_container(path, magic: bytes):
    with open(path, "rb") as f:
        got = f.read(4)
        if got != magic:
            raise FormatError(f"{path}: bad magic {got!r} (expected {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CONTAINER_VERSION:
            raise IncompatibleVersionError(
                f"{path}: container version {version} unsupported (expected {CONTAINER_VERSION})"
            )
        (n,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(n).decode("utf-8"))
        tensors = {}
        for entry in meta.pop("tensors"):
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = np.frombuffer(f.read(8 * count), dtype="<f8")
            tensors[entry["name"]] = buf.reshape(shape).copy()
    return meta, tensors


def save_checkpoint(path, cfg: NetConfig, model: ModelParams) -> None:
    tensors = {}
    for prefix, group in (
        ("g", model.generator),
        ("d", model.discriminator),
        ("c", model.classifier),
        ("norm", model.gen_norm),
    ):
        for k, v in group.items():
            tensors[f"{prefix}.{k}"] = v
    meta = {"net_config": cfg.to_dict(), "init_record": model.init_record}
    write_container(path, CHECKPOINT_MAGIC, meta, tensors)


def load_checkpoint(path):
    meta, tensors = read_container(path, CHECKPOINT_MAGIC)
    cfg = NetConfig.from_dict(meta["net_config"])
    groups = {"g": {}, "d": {}, "c": {}, "norm": {}}
    for k, v in tensors.items():
        prefix, name = k.split(".", 1)
        groups[prefix][name] = v
    model = ModelParams(
        groups["g"], groups["d"], groups["c"], groups["norm"],
        meta.get("init_record", {}),
    )
    return cfg, model
