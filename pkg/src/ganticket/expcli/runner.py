"""
Running an experiment into an archive, unit by unit.

Each seed is processed sequentially (dense baseline, then every mode's
units in order) and seeds are spread over a process pool. A unit is
skipped when its record already exists, so an interrupted run resumes
where it stopped and, because every unit is a pure function of the config
and the units before it, finishes with the same bytes as an uninterrupted
run.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from ganticket import tickets
from ganticket.channelprune import ChannelTicket, run_channel_ticket
from ganticket.expcli import checkpoint as ck
from ganticket.expcli.archive import Archive, Unit, seed_units
from ganticket.expcli.config import CHANNEL, DENSE, ONE_SHOT, ExperimentConfig
from ganticket.tickets import RoundState, TicketMode

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    """A unit failed; the message names the seed, mode and round."""


# ------------------------------------------------------------ persistence

def save_round(arc: Archive, unit: Unit, state: RoundState) -> None:
    d = arc.unit_dir(unit)
    ck.save_mask(d / "mask_g.bin", state.mask_g)
    ck.save_mask(d / "mask_d.bin", state.mask_d)
    ck.save_paramset(d / "g.bin", state.trained_g)
    ck.save_paramset(d / "d.bin", state.trained_d)
    for step, snap in sorted(state.store.items()):
        ck.save_snapshot(d / "snapshots" / f"step_{step:06d}.bin", snap)
    arc.write_json(unit, "trace.json", state.trace)
    arc.write_record(unit, state.record)


def load_round(arc: Archive, unit: Unit, with_store: bool = False) -> RoundState:
    d = arc.unit_dir(unit)
    store = {}
    if with_store:
        for p in sorted((d / "snapshots").glob("step_*.bin")):
            snap = ck.load_snapshot(p)
            store[snap.step] = snap
    return RoundState(
        unit.round,
        ck.load_mask(d / "mask_g.bin"),
        ck.load_mask(d / "mask_d.bin"),
        ck.load_paramset(d / "g.bin"),
        ck.load_paramset(d / "d.bin"),
        arc.load_record(unit),
        store,
    )


def _channel_mask_tensors(masks):
    return {f"layer_{i}": m for i, m in sorted(masks.items())}


def save_channel(arc: Archive, unit: Unit, ticket: ChannelTicket) -> None:
    d = arc.unit_dir(unit)
    ck.save_mask(d / "mask_g.bin", _channel_mask_tensors(ticket.masks_g))
    ck.save_mask(d / "mask_d.bin", _channel_mask_tensors(ticket.masks_d))
    ck.save_paramset(d / "g.bin", ticket.trained_g)
    ck.save_paramset(d / "d.bin", ticket.trained_d)
    ck.save_paramset(d / "g0.bin", ticket.small_g0)
    ck.save_paramset(d / "d0.bin", ticket.small_d0)
    arc.write_record(unit, ticket.record)


# ---------------------------------------------------------------- running

def _compute(arc: Archive, cfg: ExperimentConfig, unit: Unit, dense: RoundState, prev: RoundState | None):
    tc = cfg.for_seed(unit.seed)
    if unit.mode == CHANNEL:
        rho = float(unit.key[len("rho_"):])
        ticket = run_channel_ticket(replace(cfg.channel, rho=rho), tc, dense)
        save_channel(arc, unit, ticket)
        return None
    if unit.mode in ONE_SHOT:
        target = float(unit.key[len("target_"):])
        state = tickets.one_shot_state(unit.mode, tc, target, dense)
    elif unit.mode == TicketMode.RANDOM_PRUNE.value:
        state = tickets.random_prune_round(tc, unit.round, dense)
    else:
        state = tickets.imp_round(TicketMode(unit.mode), tc, dense, prev, unit.round)
    save_round(arc, unit, state)
    return state


def run_seed(arc_path: str | Path, cfg: ExperimentConfig, seed: int, stop_after: int | None = None) -> int:
    """Complete every missing unit of one seed; returns how many were computed.

    ``stop_after`` aborts (with :class:`KeyboardInterrupt`) after that many
    computed units; it exists to exercise resume.
    """
    cfg.register_datasets()
    arc = Archive(arc_path)
    units = seed_units(cfg, seed)
    computed = 0
    dense = None
    prev: dict[str, RoundState] = {}
    for unit in units:
        try:
            if unit.mode == DENSE:
                if arc.is_done(unit):
                    dense = load_round(arc, unit, with_store=True)
                    continue
                dense = tickets.dense_round(cfg.for_seed(seed))
                save_round(arc, unit, dense)
            elif arc.is_done(unit):
                if unit.mode not in (CHANNEL, TicketMode.RANDOM_PRUNE.value) and unit.mode not in ONE_SHOT:
                    prev[unit.mode] = load_round(arc, unit)
                continue
            else:
                state = _compute(arc, cfg, unit, dense, prev.get(unit.mode, dense))
                if state is not None:
                    prev[unit.mode] = state
            computed += 1
            rec = arc.load_record(unit)
            log.info("seed %d %s %s: score %.6g sparsity %.4f", seed, unit.mode, unit.key, rec.score, rec.sparsity)
        except (KeyboardInterrupt, RunError):
            raise
        except Exception as err:
            raise RunError(f"seed {seed} {unit.mode} {unit.key}: {type(err).__name__}: {err}") from err
        if stop_after is not None and computed >= stop_after:
            raise KeyboardInterrupt(f"stopped after {computed} units")
    return computed


def run_experiment(cfg: ExperimentConfig, root: Path | str, workers: int | None = None,
                   stop_after: int | None = None) -> Archive:
    """Run (or resume) ``cfg`` into ``<root>/<name>``; a complete archive is left untouched."""
    cfg.register_datasets()
    arc = Archive.create_or_open(root, cfg)
    if arc.is_complete():
        arc.seal()
        return arc
    pending = sorted({int(u.split("/")[0][len("seed_"):]) for u in arc.missing()}, key=cfg.seeds.index)
    n = min(workers or cfg.workers, len(pending))
    if n <= 1 or stop_after is not None:
        for seed in pending:
            run_seed(arc.path, cfg, seed, stop_after)
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            for fut in [pool.submit(run_seed, str(arc.path), cfg, s) for s in pending]:
                fut.result()
    arc.seal()
    return arc
