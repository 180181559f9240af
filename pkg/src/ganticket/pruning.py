"""
Unstructured weight masks.

A mask is a ``dict`` from weight-matrix name to a float64 0/1 array of the
same shape. Only ``*.weight`` matrices are prunable; biases, norm scales
and shifts, and power-iteration buffers never are.

Global selection ranks every surviving weight of a network in one pool by
``(|w|, tensor name, flat index)``, so ties break deterministically.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from ganticket.errors import ContractError, DimensionError
from ganticket.models import ParamSet

Mask = dict[str, np.ndarray]

PRUNE_FRACTION = 0.2


def schedule_sparsity(i: int, fraction: float = PRUNE_FRACTION) -> float:
    """Sparsity after ``i`` rounds that each remove ``fraction`` of the survivors."""
    if i < 0:
        raise ContractError(f"round index must be >= 0, got {i}")
    return 1.0 - (1.0 - fraction) ** i


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def target_zero_count(target_sparsity: float, prunable: int) -> int:
    # guards against 0.36 * 1000 = 359.99999999999994
    return round_half_up(round(target_sparsity * prunable, 9))


def _weights(params) -> dict[str, np.ndarray]:
    if isinstance(params, ParamSet):
        return {n: params.params[n] for n in params.weight_names}
    return dict(params)


def ones_mask(params) -> Mask:
    return {n: np.ones_like(w) for n, w in _weights(params).items()}


def prunable_count(mask_or_params) -> int:
    return int(sum(w.size for w in _weights(mask_or_params).values()))


def zero_count(mask: Mapping[str, np.ndarray]) -> int:
    return int(sum(int(np.count_nonzero(m == 0)) for m in mask.values()))


def mask_sparsity(mask: Mapping[str, np.ndarray]) -> float:
    total = prunable_count(mask)
    return zero_count(mask) / total if total else 0.0


def check_congruent(weights: Mapping[str, np.ndarray], mask: Mapping[str, np.ndarray]) -> None:
    if set(weights) != set(mask):
        raise ContractError(
            f"mask tensors {sorted(mask)} do not match prunable tensors {sorted(weights)}"
        )
    for name, w in weights.items():
        if mask[name].shape != w.shape:
            raise DimensionError(f"mask {name!r} shape {mask[name].shape} vs weight {w.shape}")


def _flatten(weights: Mapping[str, np.ndarray], mask: Mapping[str, np.ndarray]):
    names = sorted(weights)
    mags = np.concatenate([np.abs(weights[n]).ravel() for n in names])
    alive = np.concatenate([mask[n].ravel() != 0 for n in names])
    name_rank = np.concatenate([np.full(weights[n].size, i) for i, n in enumerate(names)])
    flat_idx = np.concatenate([np.arange(weights[n].size) for n in names])
    return names, mags, alive, name_rank, flat_idx


def _unflatten(names, weights, keep: np.ndarray) -> Mask:
    out: Mask = {}
    offset = 0
    for n in names:
        size = weights[n].size
        out[n] = keep[offset: offset + size].astype(np.float64).reshape(weights[n].shape)
        offset += size
    return out


def global_magnitude_mask(params, current_mask: Mapping[str, np.ndarray] | None, target_sparsity: float) -> Mask:
    """Zero the smallest-magnitude survivors until ``target_sparsity`` of all prunable weights are zero.

    Positions already pruned in ``current_mask`` stay pruned.
    """
    weights = _weights(params)
    current = ones_mask(weights) if current_mask is None else current_mask
    check_congruent(weights, current)
    if not 0.0 <= target_sparsity <= 1.0:
        raise ContractError(f"target sparsity must lie in [0, 1], got {target_sparsity}")
    total = prunable_count(weights)
    have = zero_count(current)
    want = target_zero_count(target_sparsity, total)
    if want < have:
        raise ContractError(
            f"target sparsity {target_sparsity} is below current sparsity {have / total:.6f}"
        )
    names, mags, alive, name_rank, flat_idx = _flatten(weights, current)
    keep = alive.copy()
    extra = want - have
    if extra:
        survivors = np.flatnonzero(alive)
        # lexsort: last key is primary
        order = np.lexsort((flat_idx[survivors], name_rank[survivors], mags[survivors]))
        keep[survivors[order[:extra]]] = False
    return _unflatten(names, weights, keep)


def random_mask(params, target_sparsity: float, seed: int, current_mask: Mapping[str, np.ndarray] | None = None) -> Mask:
    """Zero a uniformly random set of survivors so the total zero count hits the target."""
    weights = _weights(params)
    current = ones_mask(weights) if current_mask is None else current_mask
    check_congruent(weights, current)
    total = prunable_count(weights)
    have = zero_count(current)
    want = target_zero_count(target_sparsity, total)
    if want < have:
        raise ContractError(
            f"target sparsity {target_sparsity} is below current sparsity {have / total:.6f}"
        )
    names, _, alive, _, _ = _flatten(weights, current)
    keep = alive.copy()
    survivors = np.flatnonzero(alive)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(survivors.size, size=want - have, replace=False)
    keep[survivors[chosen]] = False
    return _unflatten(names, weights, keep)


def apply_mask(params: ParamSet, mask: Mapping[str, np.ndarray] | None) -> ParamSet:
    """Copy of ``params`` with masked weight entries set to exactly +0.0."""
    out = params.copy()
    if mask is None:
        return out
    check_congruent({n: params.params[n] for n in params.weight_names}, mask)
    for name, m in mask.items():
        out.params[name] = np.where(m != 0, out.params[name], 0.0)
    return out


def is_monotone(earlier: Mapping[str, np.ndarray], later: Mapping[str, np.ndarray]) -> bool:
    """True when ``later`` keeps no position that ``earlier`` had pruned."""
    return all(np.all(later[n] <= earlier[n]) for n in earlier)


def pooled_magnitude_masks(g: ParamSet, d: ParamSet, current_g, current_d, target_sparsity: float) -> tuple[Mask, Mask]:
    """Rank generator and discriminator weights together in one global pool."""
    weights = {f"g/{n}": w for n, w in _weights(g).items()}
    weights.update({f"d/{n}": w for n, w in _weights(d).items()})
    cur = {f"g/{n}": m for n, m in (current_g or ones_mask(g)).items()}
    cur.update({f"d/{n}": m for n, m in (current_d or ones_mask(d)).items()})
    merged = global_magnitude_mask(weights, cur, target_sparsity)
    mg = {n[2:]: m for n, m in merged.items() if n.startswith("g/")}
    md = {n[2:]: m for n, m in merged.items() if n.startswith("d/")}
    return mg, md
