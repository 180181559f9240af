"""
Experiment configuration files.

An INI file read with :mod:`configparser` (no interpolation). Keys are
checked against a fixed schema and every problem is reported as
``[section] key: message``. See the README for the full grammar.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

from ganticket import datasets
from ganticket.channelprune import ChannelPruneConfig
from ganticket.errors import ConfigError
from ganticket.models import DiscConfig, GenConfig
from ganticket.tickets import TicketMode, TrainConfig

CHANNEL = "CHANNEL"
DENSE = "DENSE"  # baseline only
MODES = tuple(m.value for m in TicketMode) + (CHANNEL, DENSE)
ONE_SHOT = ("OMP_G", "OMP_GD")


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    return float(text.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _str(text: str) -> str:
    return text.strip()


def _list(item: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
        if not parts:
            raise ValueError("expected a non-empty list")
        return tuple(item(p) for p in parts)

    return parse


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0, 2, 5-7"`` -> ``(0, 2, 5, 6, 7)``; order kept, duplicates dropped."""
    out: list[int] = []
    for part in [p for p in re.split(r"[,\s]+", str(text).strip()) if p]:
        m = re.fullmatch(r"(-?\d+)-(-?\d+)", part)
        vals = range(int(m.group(1)), int(m.group(2)) + 1) if m else [int(part)]
        if m and int(m.group(2)) < int(m.group(1)):
            raise ValueError(f"empty seed range {part!r}")
        out.extend(v for v in vals if v not in out)
    if not out:
        raise ValueError("seed list is empty")
    return tuple(out)


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "experiment": {
        "name": _str,
        "modes": _list(_str),
        "rounds": _int,
        "seeds": parse_seeds,
        "sparsities": _list(_float),
        "workers": _int,
    },
    "train": {
        "steps": _int,
        "batch_size": _int,
        "dataset": _str,
        "rewind_step": _int,
        "loss": _str,
        "kd_weight": _float,
        "lr": _float,
        "beta1": _float,
        "beta2": _float,
        "eval_samples": _int,
        "pooled": _bool,
        "tol_factor": _float,
        "trace_every": _int,
    },
    "generator": {"latent_dim": _int, "hidden": _list(_int), "activation": _str, "norm": _bool},
    "discriminator": {
        "hidden": _list(_int),
        "activation": _str,
        "norm": _bool,
        "spectral_norm": _bool,
        "power_iters": _int,
        "eval_power_iters": _int,
    },
    "channel": {
        "rhos": _list(_float),
        "eta": _float,
        "l1_weight": _float,
        "dist_weight": _float,
        "steps": _int,
        "mask_during_training": _bool,
    },
}
DATASET_KEYS = {"kind": _str, "components": _int, "radius": _float, "spacing": _float, "noise": _float}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    modes: tuple[str, ...]
    train: TrainConfig
    seeds: tuple[int, ...] = (0,)
    rounds: int = 3
    sparsities: tuple[float, ...] = ()
    rhos: tuple[float, ...] = ()
    channel: ChannelPruneConfig = field(default_factory=ChannelPruneConfig)
    datasets: tuple[datasets.DatasetSpec, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.name):
            raise ConfigError(f"[experiment] name: {self.name!r} must use letters, digits, '_', '-' or '.'")
        if not self.seeds:
            raise ConfigError("[experiment] seeds: seed list must be non-empty")
        if not self.modes:
            raise ConfigError("[experiment] modes: at least one mode is required")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"[experiment] modes: unknown mode {m!r} (expected one of {', '.join(MODES)})")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigError("[experiment] modes: duplicate mode")
        if self.rounds < 1:
            raise ConfigError(f"[experiment] rounds: must be >= 1, got {self.rounds}")
        if self.workers < 1:
            raise ConfigError(f"[experiment] workers: must be >= 1, got {self.workers}")
        if any(m in ONE_SHOT for m in self.modes) and not self.sparsities:
            raise ConfigError("[experiment] sparsities: required by one-shot modes")
        for s in self.sparsities:
            if not 0.0 < s < 1.0:
                raise ConfigError(f"[experiment] sparsities: {s} is not in (0, 1)")
        if CHANNEL in self.modes and not self.rhos:
            raise ConfigError("[channel] rhos: required by the CHANNEL mode")
        if any(r < 0 for r in self.rhos):
            raise ConfigError("[channel] rhos: values must be >= 0")
        known = set(datasets.REGISTRY) | {d.id for d in self.datasets}
        if self.train.dataset not in known:
            raise ConfigError(f"[train] dataset: unknown dataset id {self.train.dataset!r}")

    def for_seed(self, seed: int) -> TrainConfig:
        return replace(self.train, seed=seed)

    def register_datasets(self) -> None:
        for spec in self.datasets:
            datasets.REGISTRY[spec.id] = spec


def _section(parser: configparser.ConfigParser, name: str, schema) -> dict[str, Any]:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in schema:
            raise ConfigError(f"[{name}] {key}: unknown key (expected one of {', '.join(schema)})")
        try:
            out[key] = schema[key](raw)
        except ValueError as err:
            raise ConfigError(f"[{name}] {key}: {err}") from None
    return out


def _build(cls, section: str, values: dict[str, Any], **extra):
    try:
        return cls(**values, **extra)
    except ConfigError:
        raise
    except (ValueError, TypeError) as err:
        raise ConfigError(f"[{section}] {err}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from None
    for sec in parser.sections():
        if sec not in SCHEMA and not sec.startswith("dataset."):
            raise ConfigError(f"[{sec}]: unknown section")
    if not parser.has_section("experiment"):
        raise ConfigError("[experiment]: section is required")

    exp = _section(parser, "experiment", SCHEMA["experiment"])
    for key in ("name", "modes"):
        if key not in exp:
            raise ConfigError(f"[experiment] {key}: required key is missing")

    specs = []
    for sec in parser.sections():
        if sec.startswith("dataset."):
            vals = _section(parser, sec, DATASET_KEYS)
            if "kind" not in vals:
                raise ConfigError(f"[{sec}] kind: required key is missing")
            specs.append(_build(datasets.DatasetSpec, sec, vals, id=sec[len("dataset."):]))

    gen = _build(GenConfig, "generator", _section(parser, "generator", SCHEMA["generator"]))
    disc_vals = _section(parser, "discriminator", SCHEMA["discriminator"])
    disc = _build(DiscConfig, "discriminator", {**disc_vals, "in_dim": 2})
    if gen.out_dim != disc.in_dim:
        raise ConfigError("[generator] out_dim must equal the discriminator input size")
    train = _build(TrainConfig, "train", _section(parser, "train", SCHEMA["train"]), gen=gen, disc=disc)

    ch = _section(parser, "channel", SCHEMA["channel"])
    rhos = ch.pop("rhos", ())
    channel = _build(ChannelPruneConfig, "channel", ch)

    return ExperimentConfig(
        name=exp["name"],
        modes=tuple(m.upper() for m in exp["modes"]),
        train=train,
        seeds=exp.get("seeds", (0,)),
        rounds=exp.get("rounds", 3),
        sparsities=exp.get("sparsities", ()),
        rhos=rhos,
        channel=channel,
        datasets=tuple(specs),
        workers=exp.get("workers", 1),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text, str(path))


def to_text(cfg: ExperimentConfig) -> str:
    """Canonical INI text for ``cfg``; ``parse_config(to_text(c)) == c``."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ", ".join(fmt(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    lines = ["[experiment]", f"name = {cfg.name}", f"modes = {fmt(cfg.modes)}", f"rounds = {cfg.rounds}",
             f"seeds = {fmt(cfg.seeds)}", f"workers = {cfg.workers}"]
    if cfg.sparsities:
        lines.append(f"sparsities = {fmt(cfg.sparsities)}")
    lines.append("\n[train]")
    for f in fields(TrainConfig):
        if f.name not in ("gen", "disc", "seed"):
            lines.append(f"{f.name} = {fmt(getattr(cfg.train, f.name))}")
    for sec, obj, skip in (("generator", cfg.train.gen, ("out_dim",)), ("discriminator", cfg.train.disc, ("in_dim", "out_dim"))):
        lines.append(f"\n[{sec}]")
        for f in fields(obj):
            if f.name not in skip:
                lines.append(f"{f.name} = {fmt(getattr(obj, f.name))}")
    lines.append("\n[channel]")
    if cfg.rhos:
        lines.append(f"rhos = {fmt(cfg.rhos)}")
    for f in fields(ChannelPruneConfig):
        val = getattr(cfg.channel, f.name)
        if f.name not in ("rho", "dist") and val is not None:
            lines.append(f"{f.name} = {fmt(val)}")
    for spec in cfg.datasets:
        lines.append(f"\n[dataset.{spec.id}]")
        for f in fields(spec):
            if f.name != "id":
                lines.append(f"{f.name} = {fmt(getattr(spec, f.name))}")
    return "\n".join(lines) + "\n"
