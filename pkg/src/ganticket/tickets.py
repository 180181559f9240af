"""
GAN training and lottery-ticket search.

The unit of work is a *round*: build masks, load starting weights, train
for exactly ``N`` steps and score the generator. Round 0 is always the
dense baseline; later rounds depend only on the previous round's masks and
trained weights plus the dense run's snapshots, which is what lets the
experiment runner persist and resume round by round.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from ganticket import datasets, metrics
from ganticket import numcore as nc
from ganticket.errors import ContractError, NonFiniteError
from ganticket.models import (
    DiscConfig,
    GenConfig,
    ParamSet,
    Snapshot,
    bind,
    discriminator_forward,
    generator_forward,
    init_params,
    spectral_normalize,
)
from ganticket.pruning import (
    Mask,
    apply_mask,
    global_magnitude_mask,
    mask_sparsity,
    ones_mask,
    pooled_magnitude_masks,
    random_mask,
    schedule_sparsity,
)

log = logging.getLogger(__name__)

KD_CLAMP = 1e-7
EVAL_SEED = 20210501
SNAPSHOT_FRACTIONS = (0.0, 0.05, 0.1, 0.2, 1.0)

# seed-stream tags
STREAM_G_INIT = 1
STREAM_D_INIT = 2
STREAM_TRAIN = 3
STREAM_EVAL_Z = 4
STREAM_EVAL_REAL = 5
STREAM_RANDOM_MASK = 6
STREAM_FRESH_INIT = 7


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence((int(seed), *map(int, tags))).generate_state(1, np.uint64)[0] >> 1)


class TicketMode(str, enum.Enum):
    IMP_G = "IMP_G"
    IMP_GD = "IMP_GD"
    IMP_G_F = "IMP_G_F"
    IMP_GD_KD = "IMP_GD_KD"
    OMP_G = "OMP_G"
    OMP_GD = "OMP_GD"
    RANDOM_PRUNE = "RANDOM_PRUNE"
    RANDOM_TICKET = "RANDOM_TICKET"
    STANDARD = "STANDARD"

    @property
    def prunes_discriminator(self) -> bool:
        return self in (TicketMode.IMP_GD, TicketMode.IMP_GD_KD, TicketMode.OMP_GD)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20_000
    batch_size: int = 64
    dataset: str = "ring8"
    seed: int = 0
    rewind_step: int = 0
    loss: str = "hinge"
    kd_weight: float = 1.0
    lr: float = nc.optim.DEFAULT_LR
    beta1: float = nc.optim.DEFAULT_BETAS[0]
    beta2: float = nc.optim.DEFAULT_BETAS[1]
    gen: GenConfig = field(default_factory=GenConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    eval_samples: int = 10_000
    pooled: bool = False
    tol_factor: float = metrics.DEFAULT_TOL_FACTOR
    trace_every: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= self.rewind_step < self.steps:
            raise ContractError(f"rewind step must satisfy 0 <= i < N={self.steps}, got {self.rewind_step}")
        if self.loss not in LOSSES:
            raise ContractError(f"unknown loss flavor {self.loss!r}")
        if self.batch_size < 1:
            raise ContractError("batch size must be positive")

    def snapshot_steps(self) -> list[int]:
        steps = {int(round(f * self.steps)) for f in SNAPSHOT_FRACTIONS}
        steps.add(self.rewind_step)
        return sorted(steps)


@dataclass
class TicketRecord:
    mode: str
    seed: int
    round: int
    sparsity_g: float
    sparsity_d: float
    init: str
    score: float
    dataset: str
    steps: int
    rewind_step: int = 0
    full_score: float | None = None
    matching: bool | None = None
    flops_ratio: float | None = None
    failed: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def sparsity(self) -> float:
        """Curve coordinate: 1 - FLOPs ratio for channel tickets, else generator sparsity."""
        if self.flops_ratio is not None:
            return 1.0 - self.flops_ratio
        return self.sparsity_g

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TicketRecord":
        return cls(**dict(data))


# ------------------------------------------------------------------ losses

def _hinge_d(logits: nc.Tensor, signs: np.ndarray) -> nc.Tensor:
    # mean(relu(1 - d(x))) + mean(relu(1 + d(g(z)))) as one mean over the stacked batch
    return nc.mul(nc.mean(nc.relu(nc.sub(1.0, nc.mul(logits, signs)))), 2.0)


def _hinge_g(logits: nc.Tensor) -> nc.Tensor:
    return nc.neg(nc.mean(logits))


def _ns_d(logits: nc.Tensor, signs: np.ndarray) -> nc.Tensor:
    return nc.mul(nc.mean(nc.softplus(nc.neg(nc.mul(logits, signs)))), 2.0)


def _ns_g(logits: nc.Tensor) -> nc.Tensor:
    return nc.mean(nc.softplus(nc.neg(logits)))


LOSSES = {"hinge": (_hinge_d, _hinge_g), "nonsaturating": (_ns_d, _ns_g)}


def bernoulli_kl(teacher_prob: np.ndarray, student_logits: nc.Tensor) -> nc.Tensor:
    """Mean of KL(Bern(p_teacher) || Bern(sigmoid(student_logits))) over the batch."""
    p = np.clip(teacher_prob, KD_CLAMP, 1.0 - KD_CLAMP)
    q = nc.clip(nc.sigmoid(student_logits), KD_CLAMP, 1.0 - KD_CLAMP)
    const = p * np.log(p) + (1.0 - p) * np.log(1.0 - p)
    cross = nc.add(nc.mul(nc.log(q), p), nc.mul(nc.log(nc.sub(1.0, q)), 1.0 - p))
    return nc.mean(nc.sub(const, cross))


def freeze_discriminator(params: ParamSet) -> ParamSet:
    """Bake spectral normalization into the weights of a copy (eval power iterations, no buffer changes)."""
    cfg = params.config
    out = ParamSet(replace(cfg, spectral_norm=False), {k: v.copy() for k, v in params.params.items()},
                   {k: v.copy() for k, v in params.buffers.items() if not k.endswith((".u", ".v"))})
    if cfg.spectral_norm:
        for name in params.weight_names:
            layer = name[: -len(".weight")]
            w, _, _, _ = spectral_normalize(
                params.params[name], params.buffers[f"{layer}.u"], params.buffers[f"{layer}.v"],
                cfg.eval_power_iters,
            )
            out.params[name] = w
    return out


def teacher_probs(teacher: ParamSet, x: np.ndarray) -> np.ndarray:
    with nc.no_grad():
        logits = discriminator_forward(teacher, x, train=False).data
    return nc.tensor._stable_sigmoid(logits)


def kd_loss(x_batch, d_params: ParamSet, m_d: Mask | None, teacher_params: ParamSet) -> nc.Tensor:
    """KL consistency between the frozen dense teacher and the masked student discriminator."""
    teacher = teacher_params if not teacher_params.config.spectral_norm else freeze_discriminator(teacher_params)
    student = discriminator_forward(d_params, x_batch, m_d, train=False)
    return bernoulli_kl(teacher_probs(teacher, np.asarray(x_batch)), student)


# --------------------------------------------------------------- training

@dataclass
class TrainResult:
    g: ParamSet
    d: ParamSet
    store: dict[int, Snapshot]
    trace: list[dict[str, float]]


class TrainHooks:
    """Extension points used by channel pruning; the base class changes nothing."""

    def g_channel_masks(self, g: ParamSet):
        return None

    def d_channel_masks(self, d: ParamSet):
        return None

    def g_extra_loss(self, z: np.ndarray, fake: nc.Tensor, g: ParamSet) -> nc.Tensor | None:
        return None

    def after_step(self, step: int, g: ParamSet, d: ParamSet) -> None:
        pass


def _check_finite(value: float, what: str, step: int) -> None:
    if not np.isfinite(value):
        raise NonFiniteError(f"{what} became non-finite at step {step}")


class GanTrainer:
    """Owns the state of one training run and advances it one step at a time.

    One step is a discriminator Adam update on a stacked real/fake batch
    followed by a generator Adam update on fresh noise. Gradient masks keep
    pruned entries at exactly zero.
    """

    def __init__(
        self,
        g_params: ParamSet,
        d_params: ParamSet,
        masks: tuple[Mask | None, Mask | None],
        config: TrainConfig,
        kd_teacher: ParamSet | None = None,
        hooks: TrainHooks | None = None,
    ):
        self.mg, self.md = masks
        self.g = apply_mask(g_params, self.mg)
        self.d = apply_mask(d_params, self.md)
        self.config = config
        self.hooks = hooks or TrainHooks()
        self.d_loss_fn, self.g_loss_fn = LOSSES[config.loss]
        self.spec = datasets.get(config.dataset)
        self.rng = np.random.default_rng(derive_seed(config.seed, STREAM_TRAIN))
        self.opt_g = nc.AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.opt_d = nc.AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.teacher = freeze_discriminator(kd_teacher) if kd_teacher is not None else None
        b = config.batch_size
        self.signs = np.concatenate([np.ones((b, 1)), -np.ones((b, 1))])
        self.steps_done = 0

    def snapshot(self) -> Snapshot:
        return Snapshot(self.steps_done, self.g, self.d, self.rng.bit_generator.state)

    def step(self, real: np.ndarray | None = None) -> dict[str, float]:
        cfg, hooks, g, d, mg, md = self.config, self.hooks, self.g, self.d, self.mg, self.md
        b, step = cfg.batch_size, self.steps_done
        cm_g = hooks.g_channel_masks(g)
        cm_d = hooks.d_channel_masks(d)

        if real is None:
            real = datasets.sample_from(self.spec, b, self.rng)
        z = self.rng.standard_normal((b, cfg.gen.latent_dim))
        with nc.no_grad():
            fake = generator_forward(g, z, mg, channel_masks=cm_g).data
        batch = np.concatenate([real, fake])
        d_leaves = bind(d)
        logits = discriminator_forward(d, batch, md, leaves=d_leaves, channel_masks=cm_d)
        d_loss = self.d_loss_fn(logits, self.signs)
        kd_val = 0.0
        if self.teacher is not None and cfg.kd_weight:
            kd = bernoulli_kl(teacher_probs(self.teacher, batch), logits)
            kd_val = kd.item()
            d_loss = nc.add(d_loss, nc.mul(kd, cfg.kd_weight))
        _check_finite(d_loss.item(), "discriminator loss", step)
        nc.backward(d_loss)
        nc.adam_step(d.params, {k: t.grad for k, t in d_leaves.items()}, self.opt_d, md)

        z = self.rng.standard_normal((b, cfg.gen.latent_dim))
        g_leaves = bind(g)
        fake_t = generator_forward(g, z, mg, leaves=g_leaves, channel_masks=cm_g)
        g_loss = self.g_loss_fn(discriminator_forward(d, fake_t, md, channel_masks=cm_d, update_sn=False))
        extra = hooks.g_extra_loss(z, fake_t, g)
        if extra is not None:
            g_loss = nc.add(g_loss, extra)
        _check_finite(g_loss.item(), "generator loss", step)
        nc.backward(g_loss)
        nc.adam_step(g.params, {k: t.grad for k, t in g_leaves.items() if t.grad is not None}, self.opt_g, mg)

        hooks.after_step(step, g, d)
        self.steps_done += 1
        return {"step": step, "d_loss": d_loss.item(), "g_loss": g_loss.item(), "kd": kd_val}


def train_gan(
    g_params: ParamSet,
    d_params: ParamSet,
    masks: tuple[Mask | None, Mask | None],
    config: TrainConfig,
    snapshot_steps: Iterable[int] | None = None,
    kd_teacher: ParamSet | None = None,
    hooks: TrainHooks | None = None,
    steps: int | None = None,
) -> TrainResult:
    """Train for ``steps`` (default ``config.steps``) alternating D/G steps.

    Snapshots are taken before the step with that index, so step 0 is the
    masked starting point and the last one is the trained result.
    """
    trainer = GanTrainer(g_params, d_params, masks, config, kd_teacher, hooks)
    n = config.steps if steps is None else steps
    wanted = set(snapshot_steps or ()) | {0, n}
    trace_every = config.trace_every or max(1, n // 100)
    store: dict[int, Snapshot] = {}
    trace: list[dict[str, float]] = []
    for step in range(n):
        if step in wanted:
            store[step] = trainer.snapshot()
        info = trainer.step()
        if step % trace_every == 0:
            trace.append(info)
    store[n] = trainer.snapshot()
    return TrainResult(trainer.g, trainer.d, store, trace)


def held_out_real(config: TrainConfig, dataset: str | None = None) -> np.ndarray:
    return datasets.sample(dataset or config.dataset, config.eval_samples, derive_seed(EVAL_SEED, STREAM_EVAL_REAL))


def evaluate(g: ParamSet, mask_g: Mask | None, config: TrainConfig, channel_masks=None, real=None) -> float:
    """Fréchet distance between generator samples and held-out real samples.

    The norm layers normalize with the statistics of the whole evaluation
    batch. ``g`` itself is left untouched.
    """
    z = np.random.default_rng(derive_seed(EVAL_SEED, STREAM_EVAL_Z)).standard_normal(
        (config.eval_samples, g.config.latent_dim)
    )
    with nc.no_grad():
        fake = generator_forward(g.copy(), z, mask_g, channel_masks=channel_masks, train=True).data
    if not np.all(np.isfinite(fake)):
        return float("inf")
    return metrics.score_samples(fake, held_out_real(config) if real is None else real)


# ---------------------------------------------------------- rounds & IMP

@dataclass
class RoundState:
    """Everything a later round needs from this one."""

    round: int
    mask_g: Mask
    mask_d: Mask
    trained_g: ParamSet
    trained_d: ParamSet
    record: TicketRecord
    store: dict[int, Snapshot] = field(default_factory=dict)
    trace: list[dict[str, float]] = field(default_factory=list)


def initial_params(config: TrainConfig, seed: int | None = None, fresh: bool = False) -> tuple[ParamSet, ParamSet]:
    """theta_0 for ``seed``; ``fresh`` gives the independent theta_0' used by random tickets."""
    s = config.seed if seed is None else seed
    if fresh:
        s = derive_seed(s, STREAM_FRESH_INIT)
    return (
        init_params(config.gen, derive_seed(s, STREAM_G_INIT)),
        init_params(config.disc, derive_seed(s, STREAM_D_INIT)),
    )


def rewind(store: Mapping[int, Snapshot], step: int, mask: Mask | None, network: str = "g") -> ParamSet:
    """``mask * theta_step`` for one network of a stored snapshot."""
    try:
        snap = store[step]
    except KeyError:
        raise LookupError(f"no snapshot at step {step}; have {sorted(store)}") from None
    return apply_mask(snap.g if network == "g" else snap.d, mask)


def _record(mode, config, k, mg, md, init, score, **kw) -> TicketRecord:
    return TicketRecord(
        mode=str(getattr(mode, "value", mode)),
        seed=config.seed,
        round=k,
        sparsity_g=mask_sparsity(mg),
        sparsity_d=mask_sparsity(md),
        init=init,
        score=score,
        dataset=config.dataset,
        steps=config.steps,
        rewind_step=config.rewind_step,
        **kw,
    )


def dense_round(config: TrainConfig) -> RoundState:
    """Round 0: train the full model from theta_0 and keep the rewind snapshots."""
    g0, d0 = initial_params(config)
    mg, md = ones_mask(g0), ones_mask(d0)
    res = train_gan(g0, d0, (mg, md), config, config.snapshot_steps())
    score = evaluate(res.g, mg, config)
    rec = _record("DENSE", config, 0, mg, md, "theta_0", score, full_score=score, matching=True)
    return RoundState(0, mg, md, res.g, res.d, rec, res.store, res.trace)


def next_masks(mode: TicketMode, config: TrainConfig, prev: RoundState, target: float, k: int) -> tuple[Mask, Mask]:
    if mode is TicketMode.RANDOM_PRUNE:
        seed = derive_seed(config.seed, STREAM_RANDOM_MASK, k)
        return random_mask(prev.trained_g, target, seed, prev.mask_g), prev.mask_d
    if mode.prunes_discriminator:
        if config.pooled:
            return pooled_magnitude_masks(prev.trained_g, prev.trained_d, prev.mask_g, prev.mask_d, target)
        return (
            global_magnitude_mask(prev.trained_g, prev.mask_g, target),
            global_magnitude_mask(prev.trained_d, prev.mask_d, target),
        )
    return global_magnitude_mask(prev.trained_g, prev.mask_g, target), prev.mask_d


def starting_weights(mode: TicketMode, config: TrainConfig, dense: RoundState, prev: RoundState, mg, md):
    """Masked starting weights for a round, plus the name of the init regime."""
    i = config.rewind_step
    if mode is TicketMode.STANDARD:
        return apply_mask(prev.trained_g, mg), apply_mask(prev.trained_d, md), "trained"
    if mode is TicketMode.RANDOM_TICKET:
        g0, d0 = initial_params(config, fresh=True)
        return apply_mask(g0, mg), apply_mask(d0, md), "theta_0'"
    init = "theta_0" if i == 0 else f"theta_{i}"
    g = rewind(dense.store, i, mg, "g")
    if mode is TicketMode.IMP_G_F:
        return g, apply_mask(prev.trained_d, md), init
    return g, rewind(dense.store, i, md, "d"), init


def train_round(mode: TicketMode, config: TrainConfig, dense: RoundState, prev: RoundState,
                mg: Mask, md: Mask, k: int) -> RoundState:
    g, d, init = starting_weights(mode, config, dense, prev, mg, md)
    teacher = dense.trained_d if mode is TicketMode.IMP_GD_KD else None
    res = train_gan(g, d, (mg, md), config, config.snapshot_steps(), kd_teacher=teacher)
    score = evaluate(res.g, mg, config)
    full = dense.record.score
    rec = _record(mode, config, k, mg, md, init, score, full_score=full,
                  matching=metrics.is_matching(score, full, config.tol_factor))
    return RoundState(k, mg, md, res.g, res.d, rec, res.store, res.trace)


def failed_round(mode, config: TrainConfig, prev: RoundState, k: int, mg, md, err: Exception) -> RoundState:
    rec = _record(mode, config, k, mg, md, "failed", float("inf"), failed=True, matching=False,
                  extra={"error": str(err)})
    return RoundState(k, mg, md, prev.trained_g, prev.trained_d, rec)


def imp_round(mode: TicketMode, config: TrainConfig, dense: RoundState, prev: RoundState, k: int) -> RoundState:
    """Prune to ``schedule_sparsity(k)`` from ``prev``'s trained weights, reload, retrain."""
    mode = TicketMode(mode)
    mg, md = next_masks(mode, config, prev, schedule_sparsity(k), k)
    try:
        return train_round(mode, config, dense, prev, mg, md, k)
    except NonFiniteError as err:
        log.warning("%s round %d diverged: %s", mode.value, k, err)
        return failed_round(mode, config, prev, k, mg, md, err)


def run_imp(mode, config: TrainConfig, rounds: int, dense: RoundState | None = None) -> list[TicketRecord]:
    """Records for rounds ``0..rounds``; round 0 is the dense baseline."""
    if rounds < 1:
        raise ContractError(f"rounds must be >= 1, got {rounds}")
    states = run_imp_states(mode, config, rounds, dense)
    return [s.record for s in states]


def run_imp_states(mode, config: TrainConfig, rounds: int, dense: RoundState | None = None) -> list[RoundState]:
    dense = dense or dense_round(config)
    states = [dense]
    for k in range(1, rounds + 1):
        state = imp_round(TicketMode(mode), config, dense, states[-1], k)
        states.append(state)
        if state.record.failed:
            break
    return states


def random_prune_masks(config: TrainConfig, dense: RoundState, k: int) -> Mask:
    """The generator mask random pruning reaches at round ``k``, without training rounds ``1..k-1``.

    Random masks ignore weight values, so the chain equals the one an
    iterative run would draw.
    """
    mg = dense.mask_g
    for j in range(1, k + 1):
        mg = random_mask(dense.trained_g, schedule_sparsity(j), derive_seed(config.seed, STREAM_RANDOM_MASK, j), mg)
    return mg


def random_prune_round(config: TrainConfig, k: int, dense: RoundState | None = None) -> RoundState:
    """Random pruning at round ``k``: random mask at ``schedule_sparsity(k)``, reset to theta_0, retrain."""
    if k < 1:
        raise ContractError(f"round must be >= 1, got {k}")
    dense = dense or dense_round(config)
    mg, md = random_prune_masks(config, dense, k), dense.mask_d
    try:
        return train_round(TicketMode.RANDOM_PRUNE, config, dense, dense, mg, md, k)
    except NonFiniteError as err:
        return failed_round(TicketMode.RANDOM_PRUNE, config, dense, k, mg, md, err)


def run_standard_pruning(config: TrainConfig, rounds: int, dense: RoundState | None = None) -> list[TicketRecord]:
    """Prune 20% of survivors per round and keep training from the pruned weights; never rewinds."""
    return run_imp(TicketMode.STANDARD, config, rounds, dense)


def one_shot_state(mode, config: TrainConfig, target_sparsity: float, dense: RoundState | None = None) -> RoundState:
    mode = TicketMode(mode)
    if mode not in (TicketMode.OMP_G, TicketMode.OMP_GD):
        raise ContractError(f"one-shot pruning needs OMP_G or OMP_GD, got {mode.value}")
    dense = dense or dense_round(config)
    mg, md = next_masks(mode, config, dense, target_sparsity, 1)
    try:
        state = train_round(mode, config, dense, dense, mg, md, 1)
    except NonFiniteError as err:
        return failed_round(mode, config, dense, 1, mg, md, err)
    state.record.extra["target_sparsity"] = target_sparsity
    return state


def run_one_shot(mode, config: TrainConfig, target_sparsity: float, dense: RoundState | None = None) -> TicketRecord:
    """Train dense once, prune straight to ``target_sparsity``, reset to theta_0 and retrain."""
    return one_shot_state(mode, config, target_sparsity, dense).record


# -------------------------------------------------------------- transfer

TRANSFER_REGIMES = ("theta_0", "theta_r", "theta_best")


@dataclass
class SourceTicket:
    """A ticket found on a source dataset: its masks, its theta_0 and its trained weights."""

    record: TicketRecord
    mask_g: Mask
    mask_d: Mask
    init_g: ParamSet
    init_d: ParamSet
    trained_g: ParamSet
    trained_d: ParamSet


def source_ticket(state: RoundState, dense: RoundState) -> SourceTicket:
    snap = dense.store[0]
    return SourceTicket(state.record, state.mask_g, state.mask_d, snap.g, snap.d, state.trained_g, state.trained_d)


def run_transfer(
    sources: Sequence[SourceTicket],
    target_dataset: str,
    regime: str,
    config: TrainConfig,
    fresh_seed: int | None = None,
    full_score: float | None = None,
) -> list[TicketRecord]:
    """Retrain each source mask on ``target_dataset`` from the chosen weights, same hyper-parameters."""
    if regime not in TRANSFER_REGIMES:
        raise ContractError(f"unknown transfer regime {regime!r}; expected one of {TRANSFER_REGIMES}")
    datasets.get(target_dataset)
    target_cfg = replace(config, dataset=target_dataset)
    out = []
    for src in sources:
        if regime == "theta_0":
            g, d = src.init_g, src.init_d
        elif regime == "theta_r":
            base = config.seed if fresh_seed is None else fresh_seed
            g, d = initial_params(target_cfg, seed=base, fresh=True)
        else:
            g, d = src.trained_g, src.trained_d
        res = train_gan(g, d, (src.mask_g, src.mask_d), target_cfg)
        score = evaluate(res.g, src.mask_g, target_cfg)
        rec = _record(src.record.mode, target_cfg, src.record.round, src.mask_g, src.mask_d, regime, score,
                      full_score=full_score,
                      matching=None if full_score is None else metrics.is_matching(score, full_score, config.tol_factor),
                      extra={"source_dataset": src.record.dataset, "source_score": src.record.score})
        out.append(rec)
    return out
