"""
Synthetic 2-D distributions.

``ring``
    ``components`` modes evenly spaced on a circle of ``radius`` (a
    continuous ring when ``components == 0``). Noise is applied in polar
    form: the radius gets ``N(0, noise^2)`` and the angle ``N(0,
    (noise/radius)^2)``, so the radial moments are exact.
``grid-mixture``
    ``components`` (a perfect square) isotropic Gaussians on a square grid
    centred at the origin with spacing ``spacing``.
``two-moons``
    The two interleaved half circles, with isotropic noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ganticket.errors import ConfigError, ContractError

KINDS = ("ring", "grid-mixture", "two-moons")


@dataclass(frozen=True)
class DatasetSpec:
    id: str
    kind: str
    components: int = 8
    radius: float = 1.0
    spacing: float = 1.0
    noise: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        if self.radius <= 0 or self.spacing <= 0 or self.noise < 0:
            raise ConfigError(f"dataset {self.id!r}: radius/spacing must be > 0 and noise >= 0")
        if self.components < 0:
            raise ConfigError(f"dataset {self.id!r}: components must be >= 0")
        if self.kind == "grid-mixture":
            side = math.isqrt(self.components)
            if side < 1 or side * side != self.components:
                raise ConfigError(f"grid dataset {self.id!r} needs a perfect-square component count")


REGISTRY: dict[str, DatasetSpec] = {
    "ring8": DatasetSpec("ring8", "ring", components=8, radius=1.0, noise=0.05),
    "grid25": DatasetSpec("grid25", "grid-mixture", components=25, spacing=1.0, noise=0.05),
    "moons": DatasetSpec("moons", "two-moons", components=2, noise=0.05),
}


def get(spec_or_id) -> DatasetSpec:
    if isinstance(spec_or_id, DatasetSpec):
        return spec_or_id
    try:
        return REGISTRY[spec_or_id]
    except KeyError:
        raise ConfigError(f"unknown dataset id {spec_or_id!r}") from None


def grid_centers(components: int, spacing: float) -> np.ndarray:
    side = math.isqrt(components)
    ticks = (np.arange(side) - (side - 1) / 2.0) * spacing
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def sample_from(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ContractError(f"sample count must be >= 1, got {n}")
    if spec.kind == "ring":
        if spec.components:
            angle = 2 * np.pi * rng.integers(0, spec.components, size=n) / spec.components
        else:
            angle = rng.uniform(0.0, 2 * np.pi, size=n)
        eps = rng.standard_normal((n, 2))
        r = spec.radius + spec.noise * eps[:, 0]
        angle = angle + (spec.noise / spec.radius) * eps[:, 1]
        return np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
    if spec.kind == "grid-mixture":
        centers = grid_centers(spec.components, spec.spacing)
        idx = rng.integers(0, len(centers), size=n)
        return centers[idx] + spec.noise * rng.standard_normal((n, 2))
    upper = rng.random(n) < 0.5
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(upper, np.cos(t), 1.0 - np.cos(t))
    y = np.where(upper, np.sin(t), 0.5 - np.sin(t))
    return np.stack([x, y], axis=1) + spec.noise * rng.standard_normal((n, 2))


def sample(spec, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. draws, bit-reproducible for a given ``(spec, n, seed)``."""
    return sample_from(get(spec), n, np.random.default_rng(seed))
