"""Desk-scale training loop: Adam, global-norm clipping, plateau LR
halving, early stopping, and the toy overfit experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .data import dynamic_mix_batch, energy_envelope, mix_at_snr, synth_sources
from .errors import TrainingError
from .model import (
    ModelConfig,
    ModelParams,
    build_params,
    multi_speaker_masks,
    named_tensors,
    conv_transpose1d,
    encode_audio,
)
from .model import separate as model_separate
from .model import _ceil_to
from .nn import crop_time, pad_right
from .tensor import Tensor
from . import tensor as T

__all__ = [
    "AdamState",
    "ScheduleState",
    "TrainSettings",
    "adam_step",
    "clip_global_norm",
    "train_toy",
    "TrainResult",
]


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[tuple[str, Tensor]], state: AdamState) -> None:
    """Bias-corrected Adam update, in place. Raises on NaN gradients,
    naming the offending parameter."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params:
        g = t.grad
        if g is None:
            g = np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m.setdefault(name, np.zeros_like(t.data))
        v = state.v.setdefault(name, np.zeros_like(t.data))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        t.data = t.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(params: list[tuple[str, Tensor]], max_norm: float = 5.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm;
    returns the pre-clip norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    sq = 0.0
    for _, t in params:
        if t.grad is not None:
            sq += float((t.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(sq)
    if norm > max_norm:
        s = max_norm / norm
        for _, t in params:
            if t.grad is not None:
                t.grad = t.grad * s
    return norm


@dataclass
class ScheduleState:
    """Plateau LR halving plus early stopping on the validation loss.

    Improvement means a strict decrease by at least min_delta; it resets
    both counters. Halving resets only the LR counter.
    """

    plateau_patience: int = 15
    stop_patience: int = 30
    min_delta: float = 1e-6
    best: float = math.inf
    since_improve_lr: int = 0
    since_improve_stop: int = 0
    halvings: int = 0

    def update(self, val_loss: float, state: AdamState) -> bool:
        """Record one epoch's validation loss; returns True to stop."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.since_improve_lr = 0
            self.since_improve_stop = 0
            return False
        self.since_improve_lr += 1
        self.since_improve_stop += 1
        if self.since_improve_lr >= self.plateau_patience:
            state.lr *= 0.5
            self.halvings += 1
            self.since_improve_lr = 0
        return self.since_improve_stop >= self.stop_patience


@dataclass
class TrainSettings:
    lr: float = 0.001
    max_steps: int = 500
    steps_per_epoch: int = 25
    clip_norm: float = 5.0
    plateau_patience: int = 3
    stop_patience: int = 6
    seed: int = 0
    snr_db: float = 0.0
    mixture_seconds: float = 0.5
    target_si_snri_db: float = 12.0  # early exit once the toy run clears this
    dynamic_mix: bool = False
    pool_size: int = 4


@dataclass
class TrainResult:
    params: ModelParams
    cfg: ModelConfig
    history: list[dict]  # epoch, train_loss, val_si_snri, lr
    final_si_snri_db: float
    steps_run: int
    mixture: np.ndarray
    reference: np.ndarray
    video_feat: np.ndarray | None


def _forward_loss_av(mixture, video_feat, reference, cfg, p):
    out = model_separate(Tensor(mixture[None, :].astype(np.float32)),
                         Tensor(video_feat.astype(np.float32)), cfg, p)
    return metrics.si_snr_loss(out.waveform, reference[None, :]), out


def _forward_masks_audio_only(mixture, cfg, p):
    wave = Tensor(mixture[None, :].astype(np.float32))
    e_raw = encode_audio(wave, p)
    step = 1 << cfg.depth
    e_s = pad_right(e_raw, _ceil_to(e_raw.shape[1], step) - e_raw.shape[1])
    masks = multi_speaker_masks(e_s, cfg, p)
    waves = []
    for m in masks:
        decoded = conv_transpose1d(T.ew_mul(e_s, m), p.decoder)
        waves.append(crop_time(decoded, wave.shape[1]))
    return waves


def train_toy(cfg: ModelConfig, settings: TrainSettings,
              log=None) -> TrainResult:
    """Overfit a single synthetic two-source mixture (or dynamically mixed
    pool) and return the trained parameters plus the loss history."""
    rng = np.random.default_rng(settings.seed)
    length = int(round(settings.mixture_seconds * cfg.sample_rate))
    pool = synth_sources(max(2, settings.pool_size if settings.dynamic_mix else 2),
                         length, settings.seed)
    target, interferer = pool[0], pool[1]
    mixture, scaled_interf = mix_at_snr(target, [interferer], settings.snr_db)
    video_feat = None if cfg.audio_only else energy_envelope(target, cfg.sample_rate)

    p = build_params(cfg, seed=settings.seed)
    trainables = list(named_tensors(p))
    state = AdamState(lr=settings.lr)
    sched = ScheduleState(plateau_patience=settings.plateau_patience,
                          stop_patience=settings.stop_patience)

    def eval_si_snri() -> float:
        if cfg.audio_only and cfg.n_speakers > 1:
            waves = _forward_masks_audio_only(mixture, cfg, p)
            ests = [w.data[0] for w in waves]
            refs = [target, scaled_interf]
            _, val = metrics.pit_best(refs, ests)
            base = sum(metrics.si_snr(r, mixture) for r in refs) / len(refs)
            return val - base
        out = model_separate(Tensor(mixture[None, :].astype(np.float32)),
                             None if video_feat is None else Tensor(video_feat),
                             cfg, p)
        return metrics.si_snri(mixture, target, out.waveform.data[0])

    history: list[dict] = []
    steps_run = 0
    epoch = 0
    stop = False
    while steps_run < settings.max_steps and not stop:
        epoch += 1
        train_loss = math.nan
        for _ in range(min(settings.steps_per_epoch, settings.max_steps - steps_run)):
            if settings.dynamic_mix:
                spec = dynamic_mix_batch(pool, 1, rng)[0]
                mix = spec.mixture
                ref = spec.sources[0] * spec.gains[0]
                vfeat = None if cfg.audio_only else energy_envelope(ref, cfg.sample_rate)
            else:
                mix, ref, vfeat = mixture, target, video_feat

            if cfg.audio_only and cfg.n_speakers > 1:
                if settings.dynamic_mix:
                    refs = [spec.sources[k] * spec.gains[k] for k in range(2)]
                else:
                    refs = [target, scaled_interf]
                waves = _forward_masks_audio_only(mix, cfg, p)
                loss = metrics.pit_si_snr_loss(waves, [r[None, :] for r in refs])
            else:
                loss, _ = _forward_loss_av(mix, vfeat, ref, cfg, p)

            train_loss = loss.item()
            if not math.isfinite(train_loss):
                raise TrainingError(f"non-finite loss at step {steps_run}")
            loss.backward()
            clip_global_norm(trainables, settings.clip_norm)
            adam_step(trainables, state)
            for _, t in trainables:
                t.grad = None
            steps_run += 1

        val_si_snri = eval_si_snri()
        val_loss = -val_si_snri
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_si_snri": val_si_snri, "lr": state.lr})
        if log:
            log(f"epoch {epoch}: loss {train_loss:.3f}  "
                f"si-snri {val_si_snri:.2f} dB  lr {state.lr:g}")
        if val_si_snri >= settings.target_si_snri_db:
            break
        stop = sched.update(val_loss, state)

    return TrainResult(params=p, cfg=cfg, history=history,
                       final_si_snri_db=eval_si_snri(), steps_run=steps_run,
                       mixture=mixture, reference=target, video_feat=video_feat)
