"""Re-check an archive: file checksums, record/mask consistency and the pruning invariants."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ganticket.errors import CorruptionError, UnsupportedVersionError
from ganticket.expcli import checkpoint as ck
from ganticket.expcli.archive import Archive
from ganticket.expcli.config import CHANNEL
from ganticket.pruning import mask_sparsity

SPARSITY_TOL = 1e-12


def _pruned_nonzero(params, mask) -> list[str]:
    bad = []
    for name, m in mask.items():
        if name in params.params and np.any(params.params[name][m == 0] != 0):
            bad.append(name)
    return bad


def _check_unit(arc: Archive, unit_id: str, problems: list[str]) -> dict | None:
    d = arc.unit_dir(unit_id)
    rec = arc.load_record(unit_id)
    for name in ("mask_g.bin", "mask_d.bin"):
        if not (d / name).is_file():
            problems.append(f"{unit_id}: {name} missing")
            return None
    try:
        mg, md = ck.load_mask(d / "mask_g.bin"), ck.load_mask(d / "mask_d.bin")
        g, dd = ck.load_paramset(d / "g.bin"), ck.load_paramset(d / "d.bin")
        snaps = [ck.load_snapshot(p) for p in sorted((d / "snapshots").glob("*.bin"))]
        for extra in ("g0.bin", "d0.bin"):
            if (d / extra).is_file():
                ck.load_paramset(d / extra)
    except (CorruptionError, UnsupportedVersionError, OSError) as err:
        problems.append(f"{unit_id}: {err}")
        return None
    if rec.mode == CHANNEL:
        return None
    if abs(mask_sparsity(mg) - rec.sparsity_g) > SPARSITY_TOL or abs(mask_sparsity(md) - rec.sparsity_d) > SPARSITY_TOL:
        problems.append(f"{unit_id}: recorded sparsity disagrees with the stored masks")
    if not rec.failed:
        for label, ps, mask in (("g", g, mg), ("d", dd, md)):
            for name in _pruned_nonzero(ps, mask):
                problems.append(f"{unit_id}: trained {label} has non-zero pruned entries in {name}")
        for snap in snaps:
            for label, ps, mask in (("g", snap.g, mg), ("d", snap.d, md)):
                for name in _pruned_nonzero(ps, mask):
                    problems.append(f"{unit_id}: snapshot {snap.step} {label} has non-zero pruned entries in {name}")
    return {"g": mg, "d": md}


def verify(arc: Archive) -> list[str]:
    """All problems found, empty when the archive is sound. Missing units are not problems here."""
    problems: list[str] = []
    if not arc.exists():
        return [f"{arc.path}: no manifest.json"]
    try:
        arc.config()
    except Exception as err:  # a damaged config copy is a finding, not a crash
        problems.append(f"config.ini: {err}")
    sealed = arc.sealed_checksums()
    if sealed is not None:
        current = arc.compute_checksums()
        for rel, digest in sealed.items():
            if rel not in current:
                problems.append(f"{rel}: listed in checksums.json but missing")
            elif current[rel] != digest:
                problems.append(f"{rel}: sha256 mismatch")
        for rel in sorted(set(current) - set(sealed)):
            problems.append(f"{rel}: not listed in checksums.json")
    masks: dict[str, list[tuple[str, dict]]] = {}
    for unit_id in arc.unit_ids():
        if not arc.is_done(unit_id):
            continue
        found = _check_unit(arc, unit_id, problems)
        parts = Path(unit_id).parts
        if found is not None and len(parts) == 3 and parts[2].startswith("round_") and parts[1] != CHANNEL:
            masks.setdefault(f"{parts[0]}/{parts[1]}", []).append((unit_id, found))
    # iterative masks only ever remove weights
    for chain in masks.values():
        for (_, a), (uid, b) in zip(chain, chain[1:]):
            for net in ("g", "d"):
                if any(np.any((b[net][n] != 0) & (a[net][n] == 0)) for n in a[net]):
                    problems.append(f"{uid}: {net} mask revives a weight pruned in the previous round")
    return problems
