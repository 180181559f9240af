"""
On-disk run archives.

Layout under ``<root>/<name>/``::

    config.ini                    canonical copy of the experiment config
    manifest.json                 every expected unit, in run order
    seed_<s>/round_000/           dense baseline, shared by every mode
    seed_<s>/<MODE>/round_<k>/    iterative and random-pruning rounds
    seed_<s>/<MODE>/target_<t>/   one-shot pruning to sparsity t
    seed_<s>/CHANNEL/rho_<r>/     channel tickets
    checksums.json                sha256 of every file, written on completion

A unit directory holds ``mask_g.bin``, ``mask_d.bin``, ``g.bin``, ``d.bin``,
``snapshots/step_<n>.bin``, ``trace.json`` and, written last,
``record.json``. A unit counts as done exactly when its record exists.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from ganticket.errors import ConfigError
from ganticket.expcli import checkpoint as ck
from ganticket.expcli.config import CHANNEL, DENSE, ONE_SHOT, ExperimentConfig, parse_config, to_text
from ganticket.tickets import TicketRecord

ROOT_ENV = "GANTICKET_RUNS"
ARCHIVE_FORMAT = 1
RECORD = "record.json"


def default_root() -> Path:
    return Path(os.environ.get(ROOT_ENV, "runs"))


@dataclass(frozen=True)
class Unit:
    """One independently resumable piece of work."""

    seed: int
    mode: str
    key: str  # round_003, target_0.4880, rho_0.1

    @property
    def id(self) -> str:
        if self.mode == DENSE:
            return f"seed_{self.seed}/{self.key}"
        return f"seed_{self.seed}/{self.mode}/{self.key}"

    @property
    def round(self) -> int:
        return int(self.key.split("_")[1]) if self.key.startswith("round_") else 1


def round_key(k: int) -> str:
    return f"round_{k:03d}"


def target_key(t: float) -> str:
    return f"target_{t:.4f}"


def rho_key(rho: float) -> str:
    return f"rho_{rho!r}"


def seed_units(cfg: ExperimentConfig, seed: int) -> list[Unit]:
    units = [Unit(seed, DENSE, round_key(0))]
    for mode in cfg.modes:
        if mode == DENSE:
            continue
        if mode == CHANNEL:
            units += [Unit(seed, mode, rho_key(r)) for r in cfg.rhos]
        elif mode in ONE_SHOT:
            units += [Unit(seed, mode, target_key(t)) for t in cfg.sparsities]
        else:
            units += [Unit(seed, mode, round_key(k)) for k in range(1, cfg.rounds + 1)]
    return units


def expected_units(cfg: ExperimentConfig) -> list[Unit]:
    return [u for s in cfg.seeds for u in seed_units(cfg, s)]


def dumps_json(obj: Any) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def _identity(text: str) -> str:
    # worker count does not change results
    return "\n".join(line for line in text.splitlines() if not line.startswith("workers ="))


class Archive:
    def __init__(self, path: Path | str):
        self.path = Path(path)

    # ---------------------------------------------------------- creation
    @classmethod
    def create_or_open(cls, root: Path | str, cfg: ExperimentConfig) -> "Archive":
        arc = cls(Path(root) / cfg.name)
        text = to_text(cfg)
        cfg_path = arc.path / "config.ini"
        if cfg_path.exists():
            if _identity(cfg_path.read_text()) != _identity(text):
                raise ConfigError(
                    f"archive {arc.path} was created with a different configuration; "
                    "use another --out or experiment name"
                )
            return arc
        arc.path.mkdir(parents=True, exist_ok=True)
        manifest = {"format": ARCHIVE_FORMAT, "name": cfg.name, "units": [u.id for u in expected_units(cfg)]}
        ck.atomic_write(arc.path / "manifest.json", dumps_json(manifest))
        ck.atomic_write(cfg_path, text.encode())
        return arc

    # ------------------------------------------------------------ queries
    def exists(self) -> bool:
        return (self.path / "manifest.json").is_file()

    def config(self) -> ExperimentConfig:
        return parse_config((self.path / "config.ini").read_text(), str(self.path / "config.ini"))

    def manifest(self) -> dict[str, Any]:
        return json.loads((self.path / "manifest.json").read_text())

    def unit_ids(self) -> list[str]:
        return list(self.manifest()["units"])

    def unit_dir(self, unit: Unit | str) -> Path:
        return self.path / (unit.id if isinstance(unit, Unit) else unit)

    def is_done(self, unit: Unit | str) -> bool:
        return (self.unit_dir(unit) / RECORD).is_file()

    def missing(self) -> list[str]:
        return [u for u in self.unit_ids() if not self.is_done(u)]

    def is_complete(self) -> bool:
        return not self.missing()

    def load_record(self, unit: Unit | str) -> TicketRecord:
        return TicketRecord.from_dict(json.loads((self.unit_dir(unit) / RECORD).read_text()))

    def records(self) -> list[tuple[str, TicketRecord]]:
        return [(u, self.load_record(u)) for u in self.unit_ids() if self.is_done(u)]

    # ------------------------------------------------------------- writes
    def write_json(self, unit: Unit | str, name: str, obj: Any) -> None:
        ck.atomic_write(self.unit_dir(unit) / name, dumps_json(obj))

    def write_record(self, unit: Unit | str, record: TicketRecord) -> None:
        self.write_json(unit, RECORD, record.to_dict())

    # ---------------------------------------------------------- checksums
    def files(self) -> Iterable[Path]:
        for p in sorted(self.path.rglob("*")):
            if p.is_file() and not p.name.startswith(".") and p.name != "checksums.json":
                yield p

    def compute_checksums(self) -> dict[str, str]:
        return {str(p.relative_to(self.path)): hashlib.sha256(p.read_bytes()).hexdigest() for p in self.files()}

    def seal(self) -> None:
        """Record checksums of a completed archive (once)."""
        target = self.path / "checksums.json"
        if not target.exists():
            ck.atomic_write(target, dumps_json(self.compute_checksums()))

    def sealed_checksums(self) -> dict[str, str] | None:
        target = self.path / "checksums.json"
        return json.loads(target.read_text()) if target.exists() else None
