"""Shared helpers: tiny experiment configs and hand-built record archives."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from ganticket.expcli import archive as am
from ganticket.expcli.config import parse_config
from ganticket.tickets import TicketRecord

TINY_INI = """\
[experiment]
name = {name}
modes = {modes}
rounds = {rounds}
seeds = {seeds}
sparsities = 0.5
workers = 1

[train]
steps = 30
batch_size = 16
eval_samples = 300

[generator]
latent_dim = 3
hidden = 8, 8

[discriminator]
hidden = 8, 8

[channel]
rhos = 0.5
eta = 0.02
"""


def tiny_text(name="tiny", modes="IMP_G", rounds=2, seeds="0-1") -> str:
    return TINY_INI.format(name=name, modes=modes, rounds=rounds, seeds=seeds)


def tiny_config(**kw):
    return parse_config(tiny_text(**kw))


def record(mode, seed, k, sparsity, score, full=None) -> TicketRecord:
    return TicketRecord(mode=mode, seed=seed, round=k, sparsity_g=sparsity, sparsity_d=0.0, init="theta_0",
                        score=score, dataset="ring8", steps=30, full_score=full)


def record_archive(root: Path, name: str, modes: str, rounds: int, seeds: str, rows, units=None) -> am.Archive:
    """An archive holding only ``record.json`` files.

    ``rows`` maps unit ids to records. ``units`` overrides the manifest's unit
    list, e.g. to hold just the published points of a table.
    """
    arc = am.Archive.create_or_open(root, parse_config(tiny_text(name, modes, rounds, seeds)))
    if units is not None:
        manifest = arc.manifest()
        manifest["units"] = list(units)
        (arc.path / "manifest.json").write_bytes(am.dumps_json(manifest))
    for unit_id, rec in rows.items():
        arc.write_record(unit_id, rec)
    return arc


def tree_bytes(path: Path) -> dict[str, bytes]:
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.fixture
def runs(tmp_path, monkeypatch):
    monkeypatch.setenv(am.ROOT_ENV, str(tmp_path / "runs"))
    return tmp_path / "runs"


def load_json(path: Path):
    return json.loads(path.read_text())
