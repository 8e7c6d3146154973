"""End-to-end model: encoders, cyclic separation network, mask, decoder,
plus configuration, parameter/MAC accounting and checkpoint I/O.

One parameter set is shared across all cycles; within a cycle every block
has its own parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .blocks import (
    InterBParams,
    InterTParams,
    ScalePyramid,
    TopDownParams,
    inter_a_b,
    inter_a_t,
    intra_a_global,
    intra_a_prime,
    top_down_pass,
)
from .errors import ConfigConflictError, ConfigError, FormatError, GeometryError
from .nn import (
    avg_pool1d,
    Conv1dParams,
    FfnParams,
    GlnParams,
    QParams,
    conv1d,
    conv1d_out_len,
    conv_transpose1d,
    crop_time,
    ffn,
    gln,
    pad_right,
)
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "ModelParams",
    "SeparationOutput",
    "build_params",
    "named_tensors",
    "encode_audio",
    "separation_forward",
    "audio_only_cycle",
    "separate",
    "count_params",
    "count_macs",
    "save_checkpoint",
    "load_checkpoint",
    "full_scale_config",
]

CHECKPOINT_MAGIC = b"IIAC"
CHECKPOINT_VERSION = 1
VIDEO_FPS = 25  # lip-frame rate the temporal grids are derived from


@dataclass
class ModelConfig:
    sample_rate: int = 8000
    enc_kernel: int = 4
    enc_stride: int = 2
    n_audio_channels: int = 16
    n_video_channels: int = 16
    n_video_in: int = 1  # channels of the raw visual features fed to the conv stub
    depth: int = 3
    n_fusion_cycles: int = 2
    n_audio_cycles: int = 2
    intra_variant: str = "phi"  # "phi" | "phi_prime"
    inter_t_enabled: bool = True
    inter_m_enabled: bool = True
    inter_b_enabled: bool = True
    dropout_p: float = 0.0
    ffn_channels: tuple[int, int, int] = (16, 32, 16)
    q_kernel: int = 1
    audio_only: bool = False
    n_speakers: int = 1

    def __post_init__(self):
        self.ffn_channels = tuple(self.ffn_channels)
        if self.depth < 1 or self.n_fusion_cycles < 1 or self.n_audio_cycles < 0:
            raise ConfigError("depth >= 1, fusion cycles >= 1, audio cycles >= 0 required")
        if self.enc_kernel != 2 * self.enc_stride:
            raise ConfigError("encoder kernel must be twice the stride")
        if self.intra_variant not in ("phi", "phi_prime"):
            raise ConfigError(f"unknown intra variant {self.intra_variant!r}")
        if len(self.ffn_channels) != 3:
            raise ConfigError("ffn_channels must be a triple")
        if self.ffn_channels[2] != self.n_audio_channels:
            raise ConfigError("last ffn channel count must equal the audio embedding size")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        if self.n_speakers < 1:
            raise ConfigError("n_speakers must be >= 1")
        if self.n_speakers > 1 and not self.audio_only:
            raise ConfigError("multi-speaker masks require the audio-only variant")

    @property
    def video_ffn_channels(self) -> tuple[int, int, int]:
        return (self.n_video_channels, self.ffn_channels[1], self.n_video_channels)


def full_scale_config() -> ModelConfig:
    """The full-scale configuration used for cost accounting."""
    return ModelConfig(
        sample_rate=16000,
        enc_kernel=16,
        enc_stride=8,
        n_audio_channels=512,
        n_video_channels=512,
        depth=4,
        n_fusion_cycles=4,
        n_audio_cycles=12,
        ffn_channels=(512, 1024, 512),
        dropout_p=0.1,
    )


@dataclass
class ModelParams:
    encoder: Conv1dParams
    decoder: Conv1dParams
    audio_down: list[tuple[Conv1dParams, GlnParams]]
    video_down: list[tuple[Conv1dParams, GlnParams]] | None
    inter_t: InterTParams
    top_down: TopDownParams
    inter_b: InterBParams | None
    video_stub: list[Conv1dParams] | None
    mask_head: Conv1dParams | None


@dataclass
class SeparationOutput:
    mask: Tensor
    masked_embedding: Tensor
    waveform: Tensor


# ---------------------------------------------------------------------------
# parameter construction


class _Init:
    """Deterministic parameter factory; draws are consumed in field order."""

    def __init__(self, seed: int, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype

    def conv(self, c_out, c_in, k, stride=1, padding=0, bias=False) -> Conv1dParams:
        bound = 1.0 / np.sqrt(c_in * k)
        w = Tensor(self.rng.uniform(-bound, bound, (c_out, c_in, k)).astype(self.dtype),
                   requires_grad=True)
        b = None
        if bias:
            b = Tensor(self.rng.uniform(-bound, bound, (c_out,)).astype(self.dtype),
                       requires_grad=True)
        return Conv1dParams(weight=w, bias=b, stride=stride, padding=padding)

    def gln(self, c) -> GlnParams:
        return GlnParams(
            gain=Tensor(np.ones(c, dtype=self.dtype), requires_grad=True),
            bias=Tensor(np.zeros(c, dtype=self.dtype), requires_grad=True),
        )

    def q(self, c_in, c_out, kernel) -> QParams:
        pad = (kernel - 1) // 2
        return QParams(conv=self.conv(c_out, c_in, kernel, padding=pad), gln=self.gln(c_out))

    def ffn(self, c_in, triple) -> FfnParams:
        c1, c2, c3 = triple
        return FfnParams(
            convs=[
                self.conv(c1, c_in, 1, bias=False),
                self.conv(c2, c1, 5, padding=2, bias=True),
                self.conv(c3, c2, 1, bias=False),
            ],
            gln=self.gln(c3),
        )


def build_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    ini = _Init(seed, dtype)
    na, nv, d, kq = cfg.n_audio_channels, cfg.n_video_channels, cfg.depth, cfg.q_kernel

    encoder = ini.conv(na, 1, cfg.enc_kernel, stride=cfg.enc_stride)
    decoder = ini.conv(na, 1, cfg.enc_kernel, stride=cfg.enc_stride)  # used transposed
    audio_down = [(ini.conv(na, na, 5, stride=2, padding=2), ini.gln(na)) for _ in range(d)]

    if cfg.audio_only:
        video_down = None
        inter_t = InterTParams(q_av=None, q_va=None,
                               ffn_s=ini.ffn(na, cfg.ffn_channels), ffn_v=None)
        inter_m = None
        global_v = None
        local_v = []
        inter_b = None
        video_stub = None
    else:
        video_down = [(ini.conv(nv, nv, 5, stride=2, padding=2), ini.gln(nv)) for _ in range(d)]
        inter_t = InterTParams(
            q_av=ini.q(nv, na, kq) if cfg.inter_t_enabled else None,
            q_va=ini.q(na, nv, kq) if cfg.inter_t_enabled else None,
            ffn_s=ini.ffn(na, cfg.ffn_channels),
            ffn_v=ini.ffn(nv, cfg.video_ffn_channels),
        )
        inter_m = ([ini.q(nv, na, kq) for _ in range(d + 1)]
                   if cfg.inter_m_enabled else None)
        global_v = ([ini.q(nv, nv, kq) for _ in range(d + 1)]
                    if cfg.intra_variant == "phi" else None)
        local_v = [ini.q(nv, nv, kq) for _ in range(d)]
        inter_b = (InterBParams(
            gate_s=ini.q(na, nv, kq), out_s=ini.q(nv, na, kq),
            gate_v=ini.q(nv, na, kq), out_v=ini.q(na, nv, kq),
        ) if cfg.inter_b_enabled else None)
        video_stub = [
            ini.conv(nv, cfg.n_video_in, 3, padding=1, bias=True),
            ini.conv(nv, nv, 3, padding=1, bias=True),
        ]

    global_s = ([ini.q(na, na, kq) for _ in range(d + 1)]
                if cfg.intra_variant == "phi" else None)
    local_s = [ini.q(na, na, kq) for _ in range(d)]
    top_down = TopDownParams(global_s=global_s, global_v=global_v,
                             inter_m=inter_m, local_s=local_s, local_v=local_v)

    mask_head = (ini.conv(cfg.n_speakers * na, na, 1)
                 if cfg.n_speakers > 1 else None)

    return ModelParams(
        encoder=encoder, decoder=decoder,
        audio_down=audio_down, video_down=video_down,
        inter_t=inter_t, top_down=top_down, inter_b=inter_b,
        video_stub=video_stub, mask_head=mask_head,
    )


def _q_tensors(name: str, q: QParams):
    yield f"{name}.conv.weight", q.conv.weight
    if q.conv.bias is not None:
        yield f"{name}.conv.bias", q.conv.bias
    yield f"{name}.gln.gain", q.gln.gain
    yield f"{name}.gln.bias", q.gln.bias


def _ffn_tensors(name: str, f: FfnParams):
    for i, cp in enumerate(f.convs):
        yield f"{name}.conv{i}.weight", cp.weight
        if cp.bias is not None:
            yield f"{name}.conv{i}.bias", cp.bias
    yield f"{name}.gln.gain", f.gln.gain
    yield f"{name}.gln.bias", f.gln.bias


def named_tensors(p: ModelParams, include_aux: bool = True):
    """Ordered (name, tensor) pairs; order defines the checkpoint layout.

    ``include_aux=False`` drops the toy-training video stub and the
    multi-speaker mask head, which are not part of the separation
    architecture proper.
    """
    yield "encoder.weight", p.encoder.weight
    yield "decoder.weight", p.decoder.weight
    for tag, stack in (("audio_down", p.audio_down), ("video_down", p.video_down)):
        if stack is None:
            continue
        for i, (cp, gp) in enumerate(stack):
            yield f"{tag}.{i}.conv.weight", cp.weight
            yield f"{tag}.{i}.gln.gain", gp.gain
            yield f"{tag}.{i}.gln.bias", gp.bias
    if p.inter_t.q_av is not None:
        yield from _q_tensors("inter_t.q_av", p.inter_t.q_av)
        yield from _q_tensors("inter_t.q_va", p.inter_t.q_va)
    yield from _ffn_tensors("inter_t.ffn_s", p.inter_t.ffn_s)
    if p.inter_t.ffn_v is not None:
        yield from _ffn_tensors("inter_t.ffn_v", p.inter_t.ffn_v)
    td = p.top_down
    for tag, qs in (("global_intra_s", td.global_s), ("global_intra_v", td.global_v),
                    ("inter_m", td.inter_m), ("local_intra_s", td.local_s),
                    ("local_intra_v", td.local_v)):
        if qs is None:
            continue
        for i, q in enumerate(qs):
            yield from _q_tensors(f"{tag}.{i}", q)
    if p.inter_b is not None:
        for tag in ("gate_s", "out_s", "gate_v", "out_v"):
            yield from _q_tensors(f"inter_b.{tag}", getattr(p.inter_b, tag))
    if include_aux:
        if p.video_stub is not None:
            for i, cp in enumerate(p.video_stub):
                yield f"video_stub.{i}.weight", cp.weight
                yield f"video_stub.{i}.bias", cp.bias
        if p.mask_head is not None:
            yield "mask_head.weight", p.mask_head.weight


# ---------------------------------------------------------------------------
# forward passes


def _ceil_to(n: int, m: int) -> int:
    return -(-n // m) * m


def encode_audio(wave: Tensor, p: ModelParams) -> Tensor:
    if wave.shape[1] < p.encoder.kernel:
        raise GeometryError("waveform shorter than the encoder kernel")
    return conv1d(wave, p.encoder)


def _bottom_up(x: Tensor, stack, modality: str) -> ScalePyramid:
    levels = [x]
    for cp, gp in stack:
        levels.append(gln(conv1d(levels[-1], cp), gp))
    return ScalePyramid(levels=levels, modality=modality)


def audio_only_cycle(e_s: Tensor, cfg: ModelConfig, p: ModelParams) -> Tensor:
    """One refinement cycle through the audio network alone, sharing the
    audio-side parameters of the fused network."""
    if e_s.shape[1] % (1 << cfg.depth):
        raise GeometryError("audio length must divide by 2^depth")
    pyr = _bottom_up(e_s, p.audio_down, "audio")
    d = cfg.depth
    acc = pyr.levels[d]
    for i in range(d):
        acc = T.ew_add(acc, avg_pool1d(pyr.levels[i], 2 ** (d - i)))
    s_g = ffn(acc, p.inter_t.ffn_s)
    td = p.top_down
    if td.global_s is None:
        bar = [intra_a_prime(x, s_g) for x in pyr.levels]
    else:
        bar = [intra_a_global(x, s_g, td.global_s[i]) for i, x in enumerate(pyr.levels)]
    chk = intra_a_global(bar[d - 1], bar[d], td.local_s[d - 1])
    for i in range(d - 2, -1, -1):
        chk = intra_a_global(bar[i], chk, td.local_s[i])
    return chk


def separation_forward(
    e_s: Tensor,
    e_v: Tensor | None,
    cfg: ModelConfig,
    p: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run the cyclic separation network and return the nonnegative mask."""
    return T.relu(separation_features(e_s, e_v, cfg, p, training=training, rng=rng))


def separation_features(
    e_s: Tensor,
    e_v: Tensor | None,
    cfg: ModelConfig,
    p: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """All cycles of the separation network, without the final
    rectification (exposed so verification can see the pre-mask margin)."""
    step = 1 << cfg.depth
    if e_s.shape[1] % step:
        raise GeometryError("audio embedding length must divide by 2^depth")
    cur_s = e_s
    if cfg.audio_only:
        for _ in range(cfg.n_fusion_cycles + cfg.n_audio_cycles):
            cur_s = audio_only_cycle(cur_s, cfg, p)
    else:
        if e_v is None:
            raise GeometryError("the fused model needs video features")
        if e_v.shape[1] % step:
            raise GeometryError("video embedding length must divide by 2^depth")
        cur_v = e_v
        for _ in range(cfg.n_fusion_cycles):
            s_pyr = _bottom_up(cur_s, p.audio_down, "audio")
            v_pyr = _bottom_up(cur_v, p.video_down, "video")
            g = inter_a_t(
                s_pyr, v_pyr, p.inter_t,
                cross_attention=cfg.inter_t_enabled,
                dropout_p=cfg.dropout_p, training=training, rng=rng,
            )
            s0, v0 = top_down_pass(s_pyr, v_pyr, g, p.top_down)
            if p.inter_b is not None:
                cur_s, cur_v = inter_a_b(s0, v0, p.inter_b)
            else:
                cur_s, cur_v = s0, v0
        for _ in range(cfg.n_audio_cycles):
            cur_s = audio_only_cycle(cur_s, cfg, p)
    return cur_s


def multi_speaker_masks(e_s: Tensor, cfg: ModelConfig, p: ModelParams) -> list[Tensor]:
    """Audio-only variant: one mask per speaker via a 1x1 head conv."""
    if p.mask_head is None:
        raise ConfigError("multi-speaker masks need a mask head (n_speakers > 1)")
    cur = e_s
    for _ in range(cfg.n_fusion_cycles + cfg.n_audio_cycles):
        cur = audio_only_cycle(cur, cfg, p)
    stacked = T.relu(conv1d(cur, p.mask_head))
    na = cfg.n_audio_channels
    return [_slice_channels(stacked, k * na, (k + 1) * na) for k in range(cfg.n_speakers)]


def _slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    from .tensor import _accum, _unary

    def back(g):
        gx = np.zeros_like(x.data)
        gx[lo:hi] = g
        _accum(x, gx)

    return _unary(x, x.data[lo:hi].copy(), back)


def apply_video_stub(feat: Tensor, p: ModelParams) -> Tensor:
    if p.video_stub is None:
        raise ConfigError("this model has no video pathway")
    h = T.sigmoid(conv1d(feat, p.video_stub[0]))
    return conv1d(h, p.video_stub[1])


def separate(
    mixture: Tensor,
    video_feat: Tensor | None,
    cfg: ModelConfig,
    p: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> SeparationOutput:
    """Full pipeline: pad, encode, separate, mask, decode, trim."""
    t_a = mixture.shape[1]
    e_raw = encode_audio(mixture, p)
    step = 1 << cfg.depth
    e_s = pad_right(e_raw, _ceil_to(e_raw.shape[1], step) - e_raw.shape[1])

    e_v = None
    if not cfg.audio_only:
        if video_feat is None:
            raise GeometryError("the fused model needs video features")
        ev_raw = apply_video_stub(video_feat, p) if video_feat.shape[0] == cfg.n_video_in \
            else video_feat
        if ev_raw.shape[0] != cfg.n_video_channels:
            raise GeometryError(
                f"video features must have {cfg.n_video_in} or "
                f"{cfg.n_video_channels} channels, got {video_feat.shape[0]}"
            )
        e_v = pad_right(ev_raw, _ceil_to(ev_raw.shape[1], step) - ev_raw.shape[1])

    mask = separation_forward(e_s, e_v, cfg, p, training=training, rng=rng)
    masked = T.ew_mul(e_s, mask)
    wave = conv_transpose1d(masked, p.decoder)
    if wave.shape[1] < t_a:
        raise GeometryError("decoded waveform shorter than the input")
    return SeparationOutput(mask=mask, masked_embedding=masked,
                            waveform=crop_time(wave, t_a))


# ---------------------------------------------------------------------------
# cost accounting


def count_params(cfg: ModelConfig) -> int:
    """Exact scalar-parameter count of the separation architecture.

    Cycle counts do not enter (one shared weight set). The toy video stub
    and the multi-speaker mask head are auxiliary and excluded.
    """
    return sum(n for _, n in _param_breakdown(cfg))


def _param_breakdown(cfg: ModelConfig) -> list[tuple[str, int]]:
    na, nv, d, kq = cfg.n_audio_channels, cfg.n_video_channels, cfg.depth, cfg.q_kernel
    q = lambda ci, co: ci * co * kq + 2 * co  # conv (no bias) + gln affine

    def ffn_count(c_in, triple):
        c1, c2, c3 = triple
        return c_in * c1 + c1 * c2 * 5 + c2 + c2 * c3 + 2 * c3

    out: list[tuple[str, int]] = [
        ("encoder", na * cfg.enc_kernel),
        ("decoder", na * cfg.enc_kernel),
        ("audio_down", d * (na * na * 5 + 2 * na)),
        ("ffn_s", ffn_count(na, cfg.ffn_channels)),
        ("local_intra_s", d * q(na, na)),
    ]
    if cfg.intra_variant == "phi":
        out.append(("global_intra_s", (d + 1) * q(na, na)))
    if not cfg.audio_only:
        out.append(("video_down", d * (nv * nv * 5 + 2 * nv)))
        out.append(("ffn_v", ffn_count(nv, cfg.video_ffn_channels)))
        out.append(("local_intra_v", d * q(nv, nv)))
        if cfg.intra_variant == "phi":
            out.append(("global_intra_v", (d + 1) * q(nv, nv)))
        if cfg.inter_t_enabled:
            out.append(("inter_t", q(nv, na) + q(na, nv)))
        if cfg.inter_m_enabled:
            out.append(("inter_m", (d + 1) * q(nv, na)))
        if cfg.inter_b_enabled:
            out.append(("inter_b", 2 * q(na, nv) + 2 * q(nv, na)))
    return out


def _grid_lengths(cfg: ModelConfig, audio_seconds: float) -> tuple[list[int], list[int], int]:
    t_a = int(round(audio_seconds * cfg.sample_rate))
    t_raw = conv1d_out_len(t_a, cfg.enc_kernel, cfg.enc_stride, 0)
    step = 1 << cfg.depth
    l0 = _ceil_to(t_raw, step)
    t_v = max(1, (t_a * VIDEO_FPS) // cfg.sample_rate)
    lv0 = _ceil_to(t_v, step)
    ls = [l0 >> i for i in range(cfg.depth + 1)]
    lv = [lv0 >> i for i in range(cfg.depth + 1)]
    return ls, lv, t_a


def count_macs(cfg: ModelConfig, audio_seconds: float) -> int:
    """Multiply-accumulate count; convolutions only, counted per cycle
    application. Element-wise gates, pooling and resampling are excluded."""
    if audio_seconds <= 0:
        raise ValueError("audio_seconds must be positive")
    return sum(n for _, n in _mac_breakdown(cfg, audio_seconds))


def _mac_breakdown(cfg: ModelConfig, audio_seconds: float) -> list[tuple[str, int]]:
    na, nv, d, kq = cfg.n_audio_channels, cfg.n_video_channels, cfg.depth, cfg.q_kernel
    ls, lv, _ = _grid_lengths(cfg, audio_seconds)
    qm = lambda ci, co, l: ci * co * kq * l

    def ffn_macs(c_in, triple, l):
        c1, c2, c3 = triple
        return (c_in * c1 + c1 * c2 * 5 + c2 * c3) * l

    audio_bottom = sum(na * na * 5 * ls[i] for i in range(1, d + 1))
    video_bottom = sum(nv * nv * 5 * lv[i] for i in range(1, d + 1))

    audio_global = (sum(qm(na, na, ls[i]) for i in range(d + 1))
                    if cfg.intra_variant == "phi" else 0)
    video_global = (sum(qm(nv, nv, lv[i]) for i in range(d + 1))
                    if cfg.intra_variant == "phi" else 0)
    audio_local = sum(qm(na, na, ls[i]) for i in range(d))
    video_local = sum(qm(nv, nv, lv[i]) for i in range(d))

    audio_cycle = audio_bottom + ffn_macs(na, cfg.ffn_channels, ls[d]) \
        + audio_global + audio_local

    if cfg.audio_only:
        total_cycles = cfg.n_fusion_cycles + cfg.n_audio_cycles
        out = [("audio_cycles", total_cycles * audio_cycle)]
    else:
        av = audio_cycle + video_bottom + video_global + video_local \
            + ffn_macs(nv, cfg.video_ffn_channels, lv[d])
        if cfg.inter_t_enabled:
            av += qm(nv, na, lv[d]) + qm(na, nv, ls[d])
        if cfg.inter_m_enabled:
            av += sum(qm(nv, na, ls[i]) for i in range(d + 1))
        if cfg.inter_b_enabled:
            av += qm(na, nv, ls[0]) + qm(nv, na, ls[0]) \
                + qm(nv, na, lv[0]) + qm(na, nv, lv[0])
        out = [
            ("fusion_cycles", cfg.n_fusion_cycles * av),
            ("audio_cycles", cfg.n_audio_cycles * audio_cycle),
        ]
    t_raw = conv1d_out_len(int(round(audio_seconds * cfg.sample_rate)),
                           cfg.enc_kernel, cfg.enc_stride, 0)
    out.append(("encoder", na * cfg.enc_kernel * t_raw))
    out.append(("decoder", na * cfg.enc_kernel * ls[0]))
    return out


# ---------------------------------------------------------------------------
# checkpoint I/O


def _config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["ffn_channels"] = list(cfg.ffn_channels)
    return d


def _config_from_dict(d: dict) -> ModelConfig:
    try:
        d = dict(d)
        d["ffn_channels"] = tuple(d["ffn_channels"])
        return ModelConfig(**d)
    except (TypeError, KeyError, ConfigError) as e:
        raise FormatError(f"bad config in checkpoint: {e}") from e


def save_checkpoint(params: ModelParams, cfg: ModelConfig, path) -> None:
    entries = list(named_tensors(params))
    manifest = {
        "config": _config_to_dict(cfg),
        "tensors": [
            {"name": n, "shape": list(t.shape), "dtype": "f32"} for n, t in entries
        ],
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(mbytes)))
        fh.write(mbytes)
        for _, t in entries:
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    if len(blob) < 16:
        raise FormatError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<Q", blob, 8)
    if len(blob) < 16 + mlen:
        raise FormatError("truncated checkpoint manifest")
    try:
        manifest = json.loads(blob[16 : 16 + mlen].decode())
        cfg = _config_from_dict(manifest["config"])
        listed = manifest["tensors"]
    except (ValueError, KeyError) as e:
        raise FormatError(f"unreadable checkpoint manifest: {e}") from e

    params = build_params(cfg, seed=0)
    entries = dict(named_tensors(params))
    if [e["name"] for e in listed] != [n for n, _ in named_tensors(params)]:
        raise FormatError("checkpoint tensor list does not match its config")

    payload = blob[16 + mlen :]
    expected = sum(int(np.prod(e["shape"])) for e in listed) * 4
    if len(payload) != expected:
        raise FormatError(
            f"corrupt checkpoint payload: {len(payload)} bytes, expected {expected}"
        )
    off = 0
    for e in listed:
        shape = tuple(e["shape"])
        t = entries[e["name"]]
        if t.shape != shape:
            raise FormatError(f"shape mismatch for {e['name']}: {shape} vs {t.shape}")
        n = int(np.prod(shape)) * 4
        t.data = np.frombuffer(payload[off : off + n], dtype="<f4").reshape(shape).copy()
        off += n
    return params, cfg


def check_config_compatible(ckpt_cfg: ModelConfig, cli_cfg: ModelConfig | None) -> None:
    if cli_cfg is not None and ckpt_cfg != cli_cfg:
        raise ConfigConflictError("checkpoint config disagrees with the supplied config")
