"""
Channel pruning driven by the norm-layer scales.

Training adds two terms to the usual GAN objective. The generator pays a
distillation penalty (mean squared error to a frozen dense generator on the
same noise). After every step each norm scale vector takes a gradient step
on its L1 norm followed by soft thresholding with ``lambda = rho * eta``.
Channels whose ``|gamma|`` ends at or below ``rho`` are removed, the
surviving channels are reset to theta_0 in physically smaller matrices, and
the small network is retrained from scratch.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from ganticket import metrics
from ganticket import numcore as nc
from ganticket.errors import ContractError
from ganticket.models import DiscConfig, GenConfig, ParamSet, generator_forward, layer_dims, layer_names
from ganticket.tickets import (
    GanTrainer,
    RoundState,
    TicketRecord,
    TrainConfig,
    TrainHooks,
    dense_round,
    evaluate,
    train_gan,
)

log = logging.getLogger(__name__)

ChannelMask = dict[int, np.ndarray]


class DegenerateLayerWarning(UserWarning):
    """Every channel of a layer fell below the threshold; the largest one was kept."""


@dataclass(frozen=True)
class ChannelPruneConfig:
    rho: float = 0.1
    eta: float = 1e-4
    l1_weight: float = 1.0
    dist_weight: float = 1.0
    steps: int | None = None
    dist: str = "mse"
    mask_during_training: bool = True

    def __post_init__(self):
        if self.rho < 0:
            raise ContractError(f"rho must be >= 0, got {self.rho}")
        if self.eta <= 0:
            raise ContractError(f"eta must be > 0, got {self.eta}")
        if self.dist != "mse":
            raise ContractError(f"unsupported distillation distance {self.dist!r}")


def soft_threshold(x, lam: float):
    """``sign(x) * max(|x| - lam, 0)``, elementwise."""
    if lam < 0:
        raise ContractError(f"threshold must be >= 0, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def prox_update(gamma: np.ndarray, eta: float, rho: float, l1_weight: float = 1.0) -> np.ndarray:
    """Subgradient step on ``l1_weight * ||gamma||_1``, then soft thresholding at ``rho * eta``.

    The subgradient step stops at zero instead of crossing it; a step that
    flips the sign would make small scales oscillate around zero forever.
    """
    return soft_threshold(soft_threshold(gamma, eta * l1_weight), rho * eta)


def keep_channels(gamma: np.ndarray, rho: float, layer: str = "", warn: bool = True) -> np.ndarray:
    keep = np.abs(gamma) > rho
    if not keep.any():
        if warn:
            warnings.warn(f"all channels of {layer or 'layer'} are at or below rho={rho}; keeping the largest",
                          DegenerateLayerWarning, stacklevel=3)
        keep = np.zeros_like(keep)
        keep[int(np.argmax(np.abs(gamma)))] = True
    return keep.astype(np.float64)


def _layer_masks(params: ParamSet, rho: float, warn: bool) -> ChannelMask:
    out: ChannelMask = {}
    for name in params.gamma_names:
        idx = int(name[len("norm"): -len(".gamma")])
        out[idx] = keep_channels(params.params[name], rho, name, warn)
    return out


def extract_channel_masks(g: ParamSet, d: ParamSet, rho: float, warn: bool = True) -> tuple[ChannelMask, ChannelMask]:
    """Per hidden layer 0/1 channel vectors: keep channel c iff ``|gamma_c| > rho``."""
    return _layer_masks(g, rho, warn), _layer_masks(d, rho, warn)


def kept_widths(config, channel_masks: Mapping[int, np.ndarray]) -> list[int]:
    return [int(channel_masks[i].sum()) if i in channel_masks else w for i, w in enumerate(config.hidden)]


def macs(config, channel_masks: Mapping[int, np.ndarray] | None = None) -> int:
    """Multiply-accumulates of one forward sample: ``sum(kept_in * kept_out)`` over layers."""
    hidden = kept_widths(config, channel_masks or {})
    dims = [config.in_dim, *hidden, config.out_dim]
    return int(sum(a * b for a, b in zip(dims[:-1], dims[1:])))


def flops_ratio(channel_masks: Mapping[int, np.ndarray], config: GenConfig | DiscConfig) -> float:
    """MACs of the channel-reduced network over MACs of the dense one."""
    for i, m in channel_masks.items():
        if not 0 <= i < len(config.hidden) or m.shape != (config.hidden[i],):
            raise ContractError(f"channel mask for layer {i} does not fit widths {config.hidden}")
    return macs(config, channel_masks) / macs(config)


def size_ratio(channel_masks: Mapping[int, np.ndarray], config) -> float:
    """Remaining trainable-parameter fraction (weights, biases and norm affine terms)."""
    def count(hidden):
        dims = [config.in_dim, *hidden, config.out_dim]
        n = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
        return n + (2 * sum(hidden) if config.norm else 0)

    return count(kept_widths(config, channel_masks)) / count(list(config.hidden))


def shrink(params: ParamSet, channel_masks: Mapping[int, np.ndarray]) -> ParamSet:
    """Physically remove masked channels: slice every tensor touching them."""
    cfg = params.config
    keep = {i: np.flatnonzero(m) for i, m in channel_masks.items()}
    new_cfg = replace(cfg, hidden=tuple(kept_widths(cfg, channel_masks)))
    p = {k: v.copy() for k, v in params.params.items()}
    bufs = {k: v.copy() for k, v in params.buffers.items()}
    names = layer_names(cfg)
    for li, name in enumerate(names):
        rows = keep.get(li - 1)  # incoming channels come from the previous hidden layer
        cols = keep.get(li) if name != "out" else None
        w = p[f"{name}.weight"]
        if rows is not None:
            w = w[rows, :]
        if cols is not None:
            w = w[:, cols]
            p[f"{name}.bias"] = p[f"{name}.bias"][cols]
            for key in (f"norm{li}.gamma", f"norm{li}.beta"):
                if key in p:
                    p[key] = p[key][cols]
            for key in (f"norm{li}.mean", f"norm{li}.var"):
                if key in bufs:
                    bufs[key] = bufs[key][cols]
        p[f"{name}.weight"] = np.ascontiguousarray(w)
        for key, sel in ((f"{name}.u", rows), (f"{name}.v", cols)):
            if key in bufs and sel is not None and sel.size != bufs[key].size:
                vec = bufs[key][sel]
                bufs[key] = vec / max(float(np.linalg.norm(vec)), 1e-12)
    return ParamSet(new_cfg, p, bufs)


class ChannelPruneHooks(TrainHooks):
    """Distillation loss, per-step channel masks and the proximal scale update."""

    def __init__(self, cp: ChannelPruneConfig, teacher_g: ParamSet | None):
        self.cp = cp
        self.teacher = teacher_g.copy() if teacher_g is not None else None

    def g_channel_masks(self, g):
        if not self.cp.mask_during_training:
            return None
        return _layer_masks(g, self.cp.rho, warn=False)

    def d_channel_masks(self, d):
        if not self.cp.mask_during_training:
            return None
        return _layer_masks(d, self.cp.rho, warn=False) or None

    def g_extra_loss(self, z, fake, g):
        if self.teacher is None or not self.cp.dist_weight:
            return None
        with nc.no_grad():
            target = generator_forward(self.teacher, z).data
        return nc.mul(nc.mean(nc.square(nc.sub(fake, target))), self.cp.dist_weight)

    def after_step(self, step, g, d):
        for params in (g, d):
            for name in params.gamma_names:
                params.params[name] = prox_update(params.params[name], self.cp.eta, self.cp.rho, self.cp.l1_weight)


def cp_train_step(trainer: GanTrainer, real: np.ndarray | None = None) -> tuple[ParamSet, ParamSet]:
    """Advance a trainer built with :class:`ChannelPruneHooks` by one step; returns ``(g, d)``."""
    if not isinstance(trainer.hooks, ChannelPruneHooks):
        raise ContractError("cp_train_step needs a trainer using ChannelPruneHooks")
    trainer.step(real)
    return trainer.g, trainer.d


@dataclass
class ChannelTicket:
    record: TicketRecord
    masks_g: ChannelMask
    masks_d: ChannelMask
    pruned_g: ParamSet
    pruned_d: ParamSet
    small_g0: ParamSet
    small_d0: ParamSet
    trained_g: ParamSet
    trained_d: ParamSet


def run_channel_ticket(cp: ChannelPruneConfig, config: TrainConfig, dense: RoundState | None = None,
                       round_index: int = 0) -> ChannelTicket:
    """Sparsify scales from theta_0, extract channels, reset survivors to theta_0, retrain ``N`` steps."""
    dense = dense or dense_round(config)
    g0, d0 = dense.store[0].g, dense.store[0].d
    hooks = ChannelPruneHooks(cp, dense.trained_g)
    n1 = cp.steps or config.steps
    sparse = train_gan(g0, d0, (None, None), config, hooks=hooks, steps=n1)
    mg, md = extract_channel_masks(sparse.g, sparse.d, cp.rho)
    small_g, small_d = shrink(g0, mg), shrink(d0, md)
    cfg = replace(config, gen=small_g.config, disc=small_d.config)
    res = train_gan(small_g, small_d, (None, None), cfg)
    score = evaluate(res.g, None, cfg)
    full = dense.record.score
    ratio = flops_ratio(mg, config.gen)
    rec = TicketRecord(
        mode="CHANNEL", seed=config.seed, round=round_index, sparsity_g=0.0, sparsity_d=0.0,
        init="theta_0", score=score, dataset=config.dataset, steps=config.steps,
        full_score=full, matching=metrics.is_matching(score, full, config.tol_factor),
        flops_ratio=ratio,
        extra={
            "rho": cp.rho,
            "eta": cp.eta,
            "widths_g": list(small_g.config.hidden),
            "widths_d": list(small_d.config.hidden),
            "size_ratio": size_ratio(mg, config.gen),
            "flops_ratio_d": flops_ratio(md, config.disc),
        },
    )
    return ChannelTicket(rec, mg, md, sparse.g, sparse.d, small_g, small_d, res.g, res.d)
