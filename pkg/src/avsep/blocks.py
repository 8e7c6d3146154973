"""The attention blocks of the separation network.

Naming follows the block positions: gate-and-add modulation within one
modality (``intra_a_global`` and its parameter-free ablation variant
``intra_a_prime``), cross-modal fusion at the coarsest scale
(``inter_a_t``), per-scale cross-modal gating (``inter_a_m``), the
top-down reconstruction pass, and residual cross-modal fusion at the
finest scale (``inter_a_b``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from . import tensor as T
from .nn import FfnParams, QParams, avg_pool1d, dropout, ffn, interp_resample, q_op
from .tensor import Tensor

__all__ = [
    "ScalePyramid",
    "GlobalFeatures",
    "InterTParams",
    "TopDownParams",
    "InterBParams",
    "intra_a_global",
    "intra_a_prime",
    "inter_a_t",
    "inter_a_m",
    "top_down_pass",
    "inter_a_b",
]


@dataclass
class ScalePyramid:
    """Multi-scale features: level i has shape [C x L / 2^i], i = 0..depth."""

    levels: list[Tensor]
    modality: str  # "audio" | "video"

    def __post_init__(self):
        if not self.levels:
            raise GeometryError("pyramid needs at least one level")
        c, l0 = self.levels[0].shape
        for i, lv in enumerate(self.levels):
            if lv.shape != (c, l0 >> i):
                raise GeometryError(
                    f"pyramid level {i} has shape {lv.shape}, expected {(c, l0 >> i)}"
                )

    @property
    def depth(self) -> int:
        return len(self.levels) - 1


@dataclass
class GlobalFeatures:
    s_g: Tensor
    v_g: Tensor


@dataclass
class InterTParams:
    q_av: QParams | None  # video summary -> audio-channel gate
    q_va: QParams | None  # audio summary -> video-channel gate
    ffn_s: FfnParams
    ffn_v: FfnParams | None  # absent in the audio-only variant


@dataclass
class TopDownParams:
    global_s: list[QParams] | None  # per scale, None when the gate-only variant is used
    global_v: list[QParams] | None
    inter_m: list[QParams] | None  # per scale, None when mid-level fusion is disabled
    local_s: list[QParams]  # per scale 0..D-1
    local_v: list[QParams]


@dataclass
class InterBParams:
    gate_s: QParams  # audio -> video-channel gate
    out_s: QParams  # fused video-channel features -> audio channels
    gate_v: QParams  # video -> audio-channel gate
    out_v: QParams


def intra_a_global(x: Tensor, y: Tensor, q: QParams) -> Tensor:
    """sigmoid(Q(up(y))) * x + Q(up(y)); the modulation term is computed
    once and reused for both the gate and the additive path."""
    m = q_op(interp_resample(y, x.shape[1]), q)
    if m.shape != x.shape:
        raise GeometryError(f"modulation shape {m.shape} != input shape {x.shape}")
    return T.ew_add(T.ew_mul(T.sigmoid(m), x), m)


def intra_a_prime(x: Tensor, y: Tensor) -> Tensor:
    """Gate-only variant: sigmoid(up(y)) * x. Parameter-free, so y must
    already have x's channel count."""
    if y.shape[0] != x.shape[0]:
        raise GeometryError(
            f"gate-only modulation needs matching channels: {y.shape[0]} vs {x.shape[0]}"
        )
    return T.ew_mul(T.sigmoid(interp_resample(y, x.shape[1])), x)


def _pooled_sum(levels: list[Tensor]) -> Tensor:
    """sum_i pool(level_i) + coarsest, all at the coarsest temporal length."""
    d = len(levels) - 1
    acc = levels[d]
    for i in range(d):
        acc = T.ew_add(acc, avg_pool1d(levels[i], 2 ** (d - i)))
    return acc


def inter_a_t(
    audio: ScalePyramid,
    video: ScalePyramid,
    p: InterTParams,
    cross_attention: bool = True,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> GlobalFeatures:
    """Coarsest-scale fusion producing the per-modality global features.

    With ``cross_attention`` off the pooled sums feed the FFNs directly
    (the ablation wiring)."""
    if audio.depth != video.depth:
        raise GeometryError("pyramids must have the same number of levels")
    f_s = _pooled_sum(audio.levels)
    f_v = _pooled_sum(video.levels)
    if cross_attention:
        ga = dropout(q_op(f_v, p.q_av), dropout_p, training, rng)
        gv = dropout(q_op(f_s, p.q_va), dropout_p, training, rng)
        s_in = T.ew_mul(f_s, T.sigmoid(interp_resample(ga, f_s.shape[1])))
        v_in = T.ew_mul(f_v, T.sigmoid(interp_resample(gv, f_v.shape[1])))
    else:
        s_in, v_in = f_s, f_v
    s_g = dropout(ffn(s_in, p.ffn_s), dropout_p, training, rng)
    v_g = dropout(ffn(v_in, p.ffn_v), dropout_p, training, rng)
    return GlobalFeatures(s_g=s_g, v_g=v_g)


def inter_a_m(s_bar: Tensor, v_bar: Tensor, q: QParams) -> Tensor:
    """Video-derived gate applied to same-scale audio features:
    sigmoid(Q(up(v))) * s."""
    gate = q_op(interp_resample(v_bar, s_bar.shape[1]), q)
    if gate.shape != s_bar.shape:
        raise GeometryError(f"gate shape {gate.shape} != audio shape {s_bar.shape}")
    return T.ew_mul(T.sigmoid(gate), s_bar)


def top_down_pass(
    audio: ScalePyramid,
    video: ScalePyramid,
    g: GlobalFeatures,
    p: TopDownParams,
) -> tuple[Tensor, Tensor]:
    """Global modulation per scale, optional mid-level cross-modal gating,
    then the coarse-to-fine reconstruction; returns the two finest-scale
    outputs."""
    d = audio.depth
    if d < 1:
        raise GeometryError("top-down pass needs depth >= 1")

    if p.global_s is None:
        s_bar = [intra_a_prime(x, g.s_g) for x in audio.levels]
        v_bar = [intra_a_prime(x, g.v_g) for x in video.levels]
    else:
        s_bar = [intra_a_global(x, g.s_g, p.global_s[i]) for i, x in enumerate(audio.levels)]
        v_bar = [intra_a_global(x, g.v_g, p.global_v[i]) for i, x in enumerate(video.levels)]

    if p.inter_m is None:
        s_mod = s_bar
    else:
        s_mod = [inter_a_m(s_bar[i], v_bar[i], p.inter_m[i]) for i in range(d + 1)]

    s_chk = intra_a_global(s_mod[d - 1], s_mod[d], p.local_s[d - 1])
    v_chk = intra_a_global(v_bar[d - 1], v_bar[d], p.local_v[d - 1])
    for i in range(d - 2, -1, -1):
        s_chk = intra_a_global(s_mod[i], s_chk, p.local_s[i])
        v_chk = intra_a_global(v_bar[i], v_chk, p.local_v[i])
    return s_chk, v_chk


def inter_a_b(s0: Tensor, v0: Tensor, p: InterBParams) -> tuple[Tensor, Tensor]:
    """Finest-scale residual fusion.

    Each branch gates the *other* modality (resampled onto this branch's
    time grid) with its own features, maps the product back to its own
    channel count, and adds the result to the original features."""
    t_a, t_v = s0.shape[1], v0.shape[1]
    fused_s = T.ew_mul(interp_resample(v0, t_a), T.sigmoid(q_op(s0, p.gate_s)))
    e_s = T.ew_add(s0, q_op(fused_s, p.out_s))
    fused_v = T.ew_mul(interp_resample(s0, t_v), T.sigmoid(q_op(v0, p.gate_v)))
    e_v = T.ew_add(v0, q_op(fused_v, p.out_v))
    if e_s.shape != s0.shape or e_v.shape != v0.shape:
        raise GeometryError("residual fusion must preserve input shapes")
    return e_s, e_v
