"""
MLP generator and discriminator.

The generator maps a latent vector through hidden layers of
``linear -> scaled norm -> activation`` to 2-D coordinates. The
discriminator maps coordinates through spectrally normalized linear layers
to one logit. Weight matrices are stored ``(fan_in, fan_out)`` and applied
as ``x @ W + b``.

Parameter names are stable: ``fc{i}.weight``, ``fc{i}.bias``,
``norm{i}.gamma``, ``norm{i}.beta`` for hidden layer ``i`` and
``out.weight``/``out.bias`` for the head. Non-trainable buffers hold the
power-iteration vectors (``fc{i}.u``, ``fc{i}.v``) and the last training
batch statistics of each norm layer (``norm{i}.mean``, ``norm{i}.var``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from ganticket import numcore as nc
from ganticket.errors import ConfigError, ContractError, DimensionError

SN_EPS = 1e-12
NORM_EPS = 1e-5


@dataclass(frozen=True)
class GenConfig:
    latent_dim: int = 8
    hidden: tuple[int, ...] = (64, 64, 64)
    out_dim: int = 2
    activation: str = "relu"
    norm: bool = True

    def __post_init__(self):
        _check_widths(self.hidden, self.out_dim)
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.latent_dim


@dataclass(frozen=True)
class DiscConfig:
    in_dim: int = 2
    hidden: tuple[int, ...] = (64, 64, 64)
    out_dim: int = 1
    activation: str = "relu"
    norm: bool = False
    spectral_norm: bool = True
    power_iters: int = 1
    eval_power_iters: int = 50

    def __post_init__(self):
        _check_widths(self.hidden, self.out_dim)
        if self.in_dim < 1:
            raise ConfigError(f"in_dim must be >= 1, got {self.in_dim}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


def _check_widths(hidden, out_dim):
    if any(int(w) < 1 for w in hidden) or out_dim < 1:
        raise ConfigError(f"layer widths must be positive, got hidden={hidden}, out={out_dim}")


_ACTIVATIONS = {"relu": nc.relu, "tanh": nc.tanh}


def layer_names(config: GenConfig | DiscConfig) -> list[str]:
    return [f"fc{i}" for i in range(len(config.hidden))] + ["out"]


def layer_dims(config: GenConfig | DiscConfig) -> list[tuple[int, int]]:
    dims = [config.in_dim, *config.hidden, config.out_dim]
    return list(zip(dims[:-1], dims[1:]))


@dataclass
class ParamSet:
    """Named arrays for one network: trainable ``params`` and non-trainable ``buffers``."""

    config: GenConfig | DiscConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        if name in self.params:
            return self.params[name]
        return self.buffers[name]

    @property
    def weight_names(self) -> list[str]:
        return [n for n in self.params if n.endswith(".weight")]

    @property
    def gamma_names(self) -> list[str]:
        return [n for n in self.params if n.endswith(".gamma")]

    def copy(self) -> "ParamSet":
        return ParamSet(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def all_arrays(self) -> dict[str, np.ndarray]:
        return {**self.params, **self.buffers}

    def identical(self, other: "ParamSet") -> bool:
        """Bit-level equality of every array (and equal configs)."""
        if self.config != other.config:
            return False
        a, b = self.all_arrays(), other.all_arrays()
        if a.keys() != b.keys():
            return False
        return all(
            a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a
        )


@dataclass(frozen=True)
class Snapshot:
    step: int
    g: ParamSet
    d: ParamSet
    rng_state: dict[str, Any] | None = None

    def __post_init__(self):
        # frozen copies: later training must not alter a stored snapshot
        object.__setattr__(self, "g", self.g.copy())
        object.__setattr__(self, "d", self.d.copy())
        for ps in (self.g, self.d):
            for arr in ps.all_arrays().values():
                arr.setflags(write=False)


def _unit(x: np.ndarray) -> np.ndarray:
    return x / max(float(np.linalg.norm(x)), SN_EPS)


def init_params(config: GenConfig | DiscConfig, seed: int) -> ParamSet:
    """He-normal weights, zero biases, unit norm scales; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    names = layer_names(config)
    is_disc = isinstance(config, DiscConfig)
    for idx, (name, (fan_in, fan_out)) in enumerate(zip(names, layer_dims(config))):
        hidden = name != "out"
        std = np.sqrt((2.0 if hidden else 1.0) / fan_in)
        params[f"{name}.weight"] = rng.standard_normal((fan_in, fan_out)) * std
        params[f"{name}.bias"] = np.zeros(fan_out)
        if is_disc and config.spectral_norm:
            buffers[f"{name}.u"] = _unit(rng.standard_normal(fan_in))
            buffers[f"{name}.v"] = _unit(rng.standard_normal(fan_out))
        if hidden and config.norm:
            params[f"norm{idx}.gamma"] = np.ones(fan_out)
            params[f"norm{idx}.beta"] = np.zeros(fan_out)
            buffers[f"norm{idx}.mean"] = np.zeros(fan_out)
            buffers[f"norm{idx}.var"] = np.ones(fan_out)
    return ParamSet(config, params, buffers)


def power_iterate(w: np.ndarray, u: np.ndarray, v: np.ndarray, iters: int):
    for _ in range(iters):
        v = _unit(w.T @ u)
        u = _unit(w @ v)
    return u, v


def spectral_normalize(w: np.ndarray, u: np.ndarray, v: np.ndarray, iters: int = 1):
    """Return ``(w / sigma, u, v, sigma)`` with ``sigma = u^T w v`` after ``iters`` power steps.

    ``u`` has ``w.shape[0]`` entries and ``v`` has ``w.shape[1]``. A zero
    matrix gives ``sigma`` clamped to 1e-12, so the result stays zero.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionError(f"spectral_normalize expects a matrix, got shape {w.shape}")
    if u.shape != (w.shape[0],) or v.shape != (w.shape[1],):
        raise DimensionError(f"power vectors {u.shape}/{v.shape} do not match matrix {w.shape}")
    u, v = power_iterate(w, u, v, iters)
    sigma = max(float(u @ w @ v), SN_EPS)
    return w / sigma, u, v, sigma


def scaled_norm_forward(x, gamma, beta, stats=None):
    """Standardize each feature over the batch, then scale by ``gamma`` and shift by ``beta``."""
    out, _ = nc.scaled_norm(x, gamma, beta, NORM_EPS, stats)
    return out


def bind(params: ParamSet, requires_grad: bool = True) -> dict[str, nc.Tensor]:
    """Wrap trainable arrays as leaf tensors sharing their memory."""
    return {k: nc.Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.params.items()}


def check_masks(params: ParamSet, masks: Mapping[str, np.ndarray] | None) -> None:
    if masks is None:
        return
    for name, m in masks.items():
        if name not in params.params:
            raise ContractError(f"mask names unknown parameter {name!r}")
        if m.shape != params.params[name].shape:
            raise DimensionError(f"mask {name!r} shape {m.shape} differs from parameter {params.params[name].shape}")


def _mlp(
    params: ParamSet,
    x,
    masks,
    leaves,
    channel_masks,
    train: bool,
    sn_iters: int,
    persist_sn: bool,
) -> nc.Tensor:
    config = params.config
    x = x if isinstance(x, nc.Tensor) else nc.Tensor(x)
    if x.ndim != 2 or x.shape[1] != config.in_dim:
        raise DimensionError(f"input shape {x.shape} incompatible with in_dim {config.in_dim}")
    check_masks(params, masks)
    t = leaves if leaves is not None else {k: nc.Tensor(v) for k, v in params.params.items()}
    act = _ACTIVATIONS[config.activation]
    is_disc = isinstance(config, DiscConfig)
    h = x
    for idx, name in enumerate(layer_names(config)):
        w = t[f"{name}.weight"]
        if masks is not None and f"{name}.weight" in masks:
            w = nc.mul(w, masks[f"{name}.weight"])
        if is_disc and config.spectral_norm:
            u, v = params.buffers[f"{name}.u"], params.buffers[f"{name}.v"]
            u, v = power_iterate(w.data, u, v, sn_iters)
            if persist_sn and sn_iters:
                params.buffers[f"{name}.u"] = u
                params.buffers[f"{name}.v"] = v
            w = nc.spectral_scale(w, u, v, SN_EPS)
        h = nc.linear(h, w, t[f"{name}.bias"])
        if name == "out":
            break
        if config.norm:
            g, b = t[f"norm{idx}.gamma"], t[f"norm{idx}.beta"]
            if train:
                h, (mu, var) = nc.scaled_norm(h, g, b, NORM_EPS)
                params.buffers[f"norm{idx}.mean"] = mu
                params.buffers[f"norm{idx}.var"] = var
            else:
                stats = (params.buffers[f"norm{idx}.mean"], params.buffers[f"norm{idx}.var"])
                h, _ = nc.scaled_norm(h, g, b, NORM_EPS, stats)
        if channel_masks is not None and idx in channel_masks:
            h = nc.mul(h, channel_masks[idx])
        h = act(h)
    return h


def generator_forward(
    params: ParamSet,
    z,
    masks: Mapping[str, np.ndarray] | None = None,
    *,
    leaves: Mapping[str, nc.Tensor] | None = None,
    channel_masks: Mapping[int, np.ndarray] | None = None,
    train: bool = True,
) -> nc.Tensor:
    """Samples ``g(z; m * theta)``.

    In training mode the norm layers use batch statistics and remember them;
    in eval mode they reuse the remembered last-batch statistics.
    ``channel_masks`` maps a hidden-layer index to a 0/1 vector multiplied
    onto that layer's normalized output.
    """
    return _mlp(params, z, masks, leaves, channel_masks, train, 0, False)


def discriminator_forward(
    params: ParamSet,
    x,
    masks: Mapping[str, np.ndarray] | None = None,
    *,
    leaves: Mapping[str, nc.Tensor] | None = None,
    channel_masks: Mapping[int, np.ndarray] | None = None,
    train: bool = True,
    update_sn: bool = True,
) -> nc.Tensor:
    """Logits ``d(x; m * theta)``, shape ``(batch, 1)``.

    Training mode runs ``power_iters`` power-iteration steps per layer and
    stores the refined vectors when ``update_sn``; eval mode runs
    ``eval_power_iters`` steps on copies and leaves the buffers untouched.
    """
    config = params.config
    if train:
        iters = config.power_iters if update_sn else 0
        return _mlp(params, x, masks, leaves, channel_masks, True, iters, update_sn)
    return _mlp(params, x, masks, leaves, channel_masks, False, config.eval_power_iters, False)


def with_widths(config, hidden: tuple[int, ...]):
    return replace(config, hidden=tuple(int(h) for h in hidden))


