"""Outer training loop: six stages per iteration, in a fixed order.

Each iteration (1) fits the score networks to the current synthetic samples,
(2) materializes the population estimate by Langevin sampling, (3) simulates
state paths under the current actor, (4) moves the synthetic samples along
matched transport geodesics toward the induced law, then updates (5) the
critic and (6) the actor. Per-iteration diagnostics track the critic residual,
the actor suboptimality gap against the frozen population (linear-quadratic
models with a closed form only), and the squared transport gap between the
population estimate and the induced state law.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import (BaselineLQ, baseline_systemic, conditional_optimal_control,
                        conditional_rho)
from .evaluate import actor_control, evaluate_cost
from .langevin import LmcConfig, measures_for_iteration
from .models import FixedMeanMeasure, MfgModel, ParticleEnsemble, TimeGrid, model_from_id
from .neural import LrSchedule, NetStack, adam_step, lr_at, make_netstack
from .objectives import (actor_loss_and_grads, actor_region, critic_loss_and_grads,
                         critic_path_terms, critic_residuals, latin_hypercube,
                         score_loss_and_grads)
from .simulate import picard_target_samples, simulate
from .streams import substream
from .textio import fmt, write_csv
from .transport import otgp_update, w2_empirical

STAGES = ("score_update", "lmc_measures", "simulate", "otgp_update",
          "critic_update", "actor_update")
W2_DIAGNOSTIC_PARTICLES = 200


def _minibatches(n: int, size: int, rng: np.random.Generator) -> list:
    """Shuffled index slices covering range(n); one Adam step per slice."""
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


class TrainingAbort(RuntimeError):
    """Raised when a stage produces a non-finite loss or a diverged chain."""

    def __init__(self, iteration: int, stage: str, reason: str):
        super().__init__(f"training aborted at iteration {iteration}, stage {stage}: {reason}")
        self.iteration = iteration
        self.stage = stage


@dataclass(frozen=True)
class TrainConfig:
    model_id: str
    model_params: object
    horizon: float = 1.0
    n_steps: int = 50
    k_end: int = 250
    dtau: float = 0.5
    beta_a: float = 1.0
    beta_mu: float = 1.5
    n_score_epochs: int = 5
    n_critic_epochs: int = 5
    n_actor_epochs: int = 5
    n_batch: int = 500
    minibatch: int = 64
    lr_actor: float = 0.005
    lr_critic: float = 0.01
    lr_score: float = 0.0015
    gamma_actor: float = 0.1
    gamma_critic: float = 0.1
    gamma_score: float = 0.85
    milestones: tuple = (150, 200)
    hidden: int = 64
    lmc: LmcConfig = field(default_factory=LmcConfig)
    seed: int = 0
    diagnostics_every: int = 10
    n_eval_diagnostics: int = 1000
    strict_determinism: bool = False
    synthetic_init: str = "model"  # bootstrap law of the synthetic samples

    def __post_init__(self):
        if not 0.0 < self.dtau * self.beta_mu <= 1.0:
            raise ValueError("dtau * beta_mu must lie in (0, 1]")
        counts = (self.k_end, self.n_score_epochs, self.n_critic_epochs,
                  self.n_actor_epochs, self.n_batch, self.minibatch)
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be at least 1")
        if self.synthetic_init not in ("standard", "model"):
            raise ValueError("synthetic_init must be 'standard' or 'model'")
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))


@dataclass
class IterationRecord:
    k: int
    score_loss: float
    critic_loss: float
    actor_loss: float
    lyap_actor: Optional[float]
    lyap_critic: Optional[float]
    w2_gap: Optional[float]
    wall_time: float


@dataclass
class TrainResult:
    stack: NetStack
    history: list
    trace: list
    grid: TimeGrid
    model: MfgModel
    baseline: Optional[BaselineLQ]
    config: TrainConfig


def lyapunov_critic(stack: NetStack, traj, measures: Sequence, model: MfgModel,
                    grid: TimeGrid) -> float:
    """Shooting loss evaluated on the given (held-out) trajectory batch."""
    res = critic_residuals(stack, traj, measures, model, grid)
    return float(np.mean(res**2))


def w2_gap(measures: Sequence, traj, grid: TimeGrid, model: Optional[MfgModel] = None,
           max_particles: int = W2_DIAGNOSTIC_PARTICLES,
           rng: Optional[np.random.Generator] = None) -> float:
    """Half the squared flow transport distance between the population estimate
    and the law induced by the current control, time-integrated on the grid."""
    total = 0.0
    for j in range(grid.n_steps):
        if model is None:
            target = traj.states[j]
        else:
            target = picard_target_samples(model, traj, j)
        dist = w2_empirical(measures[j], target, max_particles=max_particles, rng=rng)
        total += dist**2
    return 0.5 * grid.h * total


def lyapunov_actor(stack: NetStack, measures: Sequence, model: MfgModel,
                   baseline: Optional[BaselineLQ], grid: TimeGrid, n_eval: int,
                   rng: np.random.Generator) -> float:
    """Cost gap of the current actor against the optimal control for the frozen
    population flow, estimated with common random numbers.

    The frozen flow enters only through its mean path, taken from the current
    per-step population estimates (the closed form of the conditional optimal
    control needs nothing else). Supported for the systemic-risk model.
    """
    if baseline is None:
        raise ValueError("baseline missing")
    if baseline.model_id != "systemic_risk":
        raise ValueError("actor suboptimality gap requires the systemic-risk closed form")
    m_path = np.array([float(me.mean[0]) for me in measures])
    rho = conditional_rho(baseline, m_path)
    frozen = [FixedMeanMeasure(m_path[j]) for j in range(grid.n_steps)]
    term = FixedMeanMeasure(m_path[-1])
    r_x0, r_noise = rng.spawn(2)
    x0 = model.init_sampler(n_eval, r_x0)
    xi = r_noise.standard_normal((grid.n_steps, n_eval, model.dim_noise))

    def star_control(j, t, states):
        return conditional_optimal_control(baseline, m_path, t, states, rho=rho)

    control = stack if callable(stack) else actor_control(stack)
    traj_cur = simulate(model, grid, control, frozen, x0, increments=xi)
    traj_star = simulate(model, grid, star_control, frozen, x0, increments=xi)
    j_cur = evaluate_cost(model, traj_cur, frozen, grid, terminal_meas=term)
    j_star = evaluate_cost(model, traj_star, frozen, grid, terminal_meas=term)
    return j_cur - j_star


def build_model(cfg: TrainConfig) -> MfgModel:
    return model_from_id(cfg.model_id, cfg.model_params)


def train(cfg: TrainConfig, on_iteration: Optional[Callable] = None) -> TrainResult:
    """Run the full training loop; returns the trained stack and its history.

    `on_iteration(k, stack, traj, measures, record)` is called after each
    iteration (diagnostic hooks, progress reporting).
    """
    model = build_model(cfg)
    grid = TimeGrid(cfg.horizon, cfg.n_steps)
    stack = make_netstack(model.dim_state, model.dim_control, model.measure_dim,
                          grid.n_steps, cfg.hidden, substream(cfg.seed, "init"))
    baseline = baseline_systemic(cfg.model_params, grid) if cfg.model_id == "systemic_risk" else None
    sched_a = LrSchedule(cfg.lr_actor, cfg.milestones, cfg.gamma_actor)
    sched_c = LrSchedule(cfg.lr_critic, cfg.milestones, cfg.gamma_critic)
    sched_s = LrSchedule(cfg.lr_score, cfg.milestones, cfg.gamma_score)

    boot = substream(cfg.seed, "synthetic")
    if cfg.synthetic_init == "model":
        synthetic = [ParticleEnsemble(model.init_sampler(cfg.n_batch, boot))
                     for _ in range(grid.n_steps)]
    else:
        synthetic = [ParticleEnsemble(boot.standard_normal((cfg.n_batch, model.measure_dim)))
                     for _ in range(grid.n_steps)]
    warm = None
    history: list = []
    trace: list = []

    for k in range(cfg.k_end):
        tic = time.perf_counter()
        lr_s, lr_c, lr_a = lr_at(sched_s, k), lr_at(sched_c, k), lr_at(sched_a, k)

        def run(stage: str, fn):
            trace.append(stage)
            try:
                return fn()
            except (ValueError, RuntimeError, FloatingPointError) as exc:
                raise TrainingAbort(k, stage, str(exc)) from exc

        mb_rng = substream(cfg.seed, "minibatch", k)

        def score_stage():
            # Minibatched passes: the Hyvarinen loss is a plain i.i.d.-sample
            # objective, and the per-step score networks need the extra Adam
            # steps to track their moving sample distributions.
            loss = np.nan
            for _ in range(cfg.n_score_epochs):
                chunks = []
                for rows in _minibatches(cfg.n_batch, cfg.minibatch, mb_rng):
                    per_step = []
                    for j in range(grid.n_steps):
                        batch = ParticleEnsemble(synthetic[j].particles[rows])
                        loss_j, grads = score_loss_and_grads(stack.score[j], batch)
                        grads = {name: g / grid.n_steps for name, g in grads.items()}
                        adam_step(stack.adam_score[j], stack.score[j], grads, lr_s)
                        per_step.append(loss_j)
                    chunks.append((len(rows), float(np.mean(per_step))))
                loss = sum(w * v for w, v in chunks) / sum(w for w, _ in chunks)
            return loss

        score_loss = run("score_update", score_stage)

        # Chains start at the synthetic samples the score was just fitted to,
        # so they burn in from inside the region the score net actually knows.
        measures = run("lmc_measures", lambda: measures_for_iteration(
            stack, grid, cfg.lmc, synthetic, substream(cfg.seed, "lmc", k), n_batch=cfg.n_batch))

        def simulate_stage():
            x0 = model.init_sampler(cfg.n_batch, substream(cfg.seed, "x0", k))
            return simulate(model, grid, actor_control(stack), measures, x0,
                            rng=substream(cfg.seed, "sim", k))

        traj = run("simulate", simulate_stage)

        def otgp_stage():
            for j in range(grid.n_steps):
                synthetic[j] = otgp_update(measures[j], picard_target_samples(model, traj, j),
                                           cfg.dtau, cfg.beta_mu)

        run("otgp_update", otgp_stage)

        def critic_stage():
            # One full-batch step per epoch: the shooting residual couples the
            # whole path batch, and subsampled steps turn its martingale term
            # into optimizer noise that can destabilize the actor-critic loop.
            terms = critic_path_terms(model, traj, measures, grid)
            loss = np.nan
            for _ in range(cfg.n_critic_epochs):
                loss, g_v0, g_gv = critic_loss_and_grads(stack, traj, measures, model,
                                                         grid, path_terms=terms)
                adam_step(stack.adam_v0, stack.v0, g_v0, lr_c)
                for j in range(grid.n_steps):
                    adam_step(stack.adam_grad_v[j], stack.grad_v[j], g_gv[j], lr_c)
            return loss

        critic_loss = run("critic_update", critic_stage)

        def actor_stage():
            frozen = [net.copy() for net in stack.actor]
            chi = [latin_hypercube(cfg.n_batch, actor_region(traj, j),
                                   substream(cfg.seed, "chi", k, j))
                   for j in range(grid.n_steps)]
            loss = np.nan
            for _ in range(cfg.n_actor_epochs):
                loss, grads = actor_loss_and_grads(stack, chi, measures, model,
                                                   cfg.beta_a, cfg.dtau, grid,
                                                   frozen_actor=frozen)
                for j in range(grid.n_steps):
                    adam_step(stack.adam_actor[j], stack.actor[j], grads[j], lr_a)
            return loss

        actor_loss = run("actor_update", actor_stage)

        lyap_a = lyap_c = gap = None
        if k % cfg.diagnostics_every == 0 or k == cfg.k_end - 1:
            eval_x0 = model.init_sampler(cfg.n_batch, substream(cfg.seed, "diag_x0", k))
            eval_traj = simulate(model, grid, actor_control(stack), measures, eval_x0,
                                 rng=substream(cfg.seed, "diag_sim", k))
            lyap_c = lyapunov_critic(stack, eval_traj, measures, model, grid)
            gap = w2_gap(measures, traj, grid, model, rng=substream(cfg.seed, "w2", k))
            if baseline is not None:
                lyap_a = lyapunov_actor(stack, measures, model, baseline, grid,
                                        cfg.n_eval_diagnostics, substream(cfg.seed, "lyap_a", k))

        record = IterationRecord(
            k=k, score_loss=score_loss, critic_loss=critic_loss, actor_loss=actor_loss,
            lyap_actor=lyap_a, lyap_critic=lyap_c, w2_gap=gap,
            wall_time=time.perf_counter() - tic,
        )
        for label, value in (("score", score_loss), ("critic", critic_loss), ("actor", actor_loss)):
            if not np.isfinite(value):
                raise TrainingAbort(k, f"{label}_update", "non-finite loss")
        history.append(record)
        if on_iteration is not None:
            on_iteration(k, stack, traj, measures, record)

    return TrainResult(stack=stack, history=history, trace=trace, grid=grid,
                       model=model, baseline=baseline, config=cfg)


HISTORY_COLUMNS = ("k", "score_loss", "critic_loss", "actor_loss",
                   "lyap_actor", "lyap_critic", "w2_gap", "wall_time")


def write_history_csv(history: Sequence, path, zero_wall_time: bool = False) -> None:
    """One iteration per row; empty cells for diagnostics that were not computed.

    `zero_wall_time` replaces timings with 0 so strict-determinism runs
    produce byte-identical files.
    """
    rows = []
    for rec in history:
        wall = 0.0 if zero_wall_time else rec.wall_time
        rows.append([
            str(rec.k), fmt(rec.score_loss), fmt(rec.critic_loss), fmt(rec.actor_loss),
            fmt(rec.lyap_actor), fmt(rec.lyap_critic), fmt(rec.w2_gap), fmt(wall),
        ])
    write_csv(path, list(HISTORY_COLUMNS), rows)


def read_history_csv(path) -> list:
    """Inverse of :func:`write_history_csv`."""
    records = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != list(HISTORY_COLUMNS):
            raise ValueError("unrecognized history file header")
        for line in fh:
            vals = line.rstrip("\n").split(",")
            records.append(IterationRecord(
                k=int(vals[0]),
                score_loss=float(vals[1]),
                critic_loss=float(vals[2]),
                actor_loss=float(vals[3]),
                lyap_actor=float(vals[4]) if vals[4] else None,
                lyap_critic=float(vals[5]) if vals[5] else None,
                w2_gap=float(vals[6]) if vals[6] else None,
                wall_time=float(vals[7]),
            ))
    return records
