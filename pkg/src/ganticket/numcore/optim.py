"""Adam with optional gradient masking for frozen (pruned) entries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ganticket.errors import DimensionError, NonFiniteError

# Conventional GAN setting.
DEFAULT_LR = 2e-4
DEFAULT_BETAS = (0.5, 0.999)
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETAS[0]
    beta2: float = DEFAULT_BETAS[1]
    eps: float = DEFAULT_EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # flat moment buffers; the arrays in ``m`` and ``v`` are views into them
    _layout: tuple = field(default=(), repr=False, compare=False)
    _flat: tuple = field(default=(), repr=False, compare=False)

    def _bind(self, grads: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        layout = tuple((name, g.shape) for name, g in grads.items())
        if layout != self._layout or not self._flat:
            parts_m, parts_v = [], []
            for name, shape in layout:
                parts_m.append(np.asarray(self.m.get(name, np.zeros(shape)), dtype=np.float64).ravel())
                parts_v.append(np.asarray(self.v.get(name, np.zeros(shape)), dtype=np.float64).ravel())
            fm, fv = np.concatenate(parts_m), np.concatenate(parts_v)
            off = 0
            for name, shape in layout:
                n = int(np.prod(shape, dtype=np.int64))
                self.m[name] = fm[off:off + n].reshape(shape)
                self.v[name] = fv[off:off + n].reshape(shape)
                off += n
            self._layout, self._flat = layout, (fm, fv)
        return self._flat


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    grad_mask: Mapping[str, np.ndarray] | None = None,
) -> Mapping[str, np.ndarray]:
    """Apply one Adam update in place to every parameter named in ``grads``.

    Where ``grad_mask`` is 0 the gradient and both moment estimates are
    forced to zero and the update is re-masked as well, so a frozen entry
    keeps its exact value across any number of steps.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {params[name].shape}")
        if grad_mask is not None and name in grad_mask and grad_mask[name].shape != g.shape:
            raise DimensionError(
                f"mask for {name!r} has shape {grad_mask[name].shape}, parameter {g.shape}"
            )
    if not grads:
        return params
    g = np.concatenate([np.ravel(x) for x in grads.values()])
    if not np.isfinite(g).all():
        bad = next(n for n, x in grads.items() if not np.isfinite(x).all())
        raise NonFiniteError(f"non-finite gradient for parameter {bad!r} at step {state.step + 1}")
    mask = None
    if grad_mask is not None and any(name in grad_mask for name in grads):
        mask = np.concatenate([
            np.ravel(grad_mask[name]) if name in grad_mask else np.ones(x.size) for name, x in grads.items()
        ])
        g *= mask

    m, v = state._bind(grads)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    if mask is not None:
        m *= mask
        v *= mask
    update = (state.lr / (1.0 - b1**t)) * m / (np.sqrt(v / (1.0 - b2**t)) + state.eps)
    if mask is not None:
        update *= mask
    off = 0
    for name, x in grads.items():
        p = params[name]
        p -= update[off:off + x.size].reshape(p.shape)
        off += x.size
    return params
