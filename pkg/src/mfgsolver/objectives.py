"""Training losses with exact parameter gradients.

Three losses drive the solver: the Hyvarinen score-matching loss for the
per-step score networks, the pathwise shooting loss for the critic pair
(initial value net + value-gradient nets), and the proximal policy-gradient
target loss for the actor nets. Gradients come from the closed-form backprop
in :mod:`mfgsolver.neural`; nothing here is stochastic.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .models import MfgModel, ParticleEnsemble, TimeGrid
from .neural import Mlp, NetStack, backward, divergence, divergence_backward, forward
from .simulate import TrajectoryBatch, apply_sigma

DEGENERATE_HALF_WIDTH = 1e-3


@dataclass(frozen=True)
class ActorRegion:
    """Axis-aligned box the actor is fitted on: center +- half_width."""

    center: np.ndarray
    half_width: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        hw = np.atleast_1d(np.asarray(self.half_width, dtype=float))
        if np.any(hw < 0):
            raise ValueError("half widths must be nonnegative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_width", hw)


def actor_region(traj: TrajectoryBatch, step: int) -> ActorRegion:
    """Box around the states at one step: mean +- 3 population standard deviations.

    Coordinates with zero spread are widened to a small fixed half width so
    the sampling strata stay well-defined.
    """
    states = traj.states[step]
    if states.shape[0] < 2:
        raise ValueError("actor region needs at least 2 paths")
    hw = 3.0 * states.std(axis=0)
    hw = np.where(hw == 0.0, DEGENERATE_HALF_WIDTH, hw)
    return ActorRegion(center=states.mean(axis=0), half_width=hw)


def latin_hypercube(n: int, region: ActorRegion, rng: np.random.Generator) -> np.ndarray:
    """n points in the region with exactly one point per stratum per coordinate."""
    if n < 1:
        raise ValueError("n must be at least 1")
    d = region.center.size
    lo = region.center - region.half_width
    width = 2.0 * region.half_width
    pts = np.empty((n, d))
    for c in range(d):
        strata = rng.permutation(n)
        pts[:, c] = lo[c] + width[c] * (strata + rng.uniform(size=n)) / n
    return pts


def score_loss_and_grads(score_net: Mlp, samples: ParticleEnsemble):
    """Per-step Hyvarinen objective mean[div S + |S|^2 / 2] and its gradients."""
    if score_net.in_dim != score_net.out_dim:
        raise ValueError("score network must be square")
    q = samples.particles
    n = q.shape[0]
    s = forward(score_net, q)
    div = divergence(score_net, q)
    loss = float(np.mean(div) + 0.5 * np.mean(np.sum(s * s, axis=1)))
    if not np.isfinite(loss):
        raise RuntimeError("non-finite score loss")
    grads_div = divergence_backward(score_net, q)
    grads_norm, _ = backward(score_net, q, s / n)
    grads = {name: grads_div[name] / n + grads_norm[name] for name in grads_div}
    return loss, grads


def critic_path_terms(model: MfgModel, traj: TrajectoryBatch, measures: Sequence,
                      grid: TimeGrid):
    """Pieces of the shooting residual that do not depend on critic parameters.

    Returns (running_cost_sum, terminal_cost, noise_factors) where
    noise_factors[j] = sqrt(h) * sigma_j xi_j is the per-path vector the
    value-gradient net at step j is contracted against.
    """
    if traj.increments is None:
        raise ValueError("missing Brownian increments on the trajectory batch")
    h = grid.h
    sqrt_h = np.sqrt(h)
    n = traj.n_paths
    f_sum = np.zeros(n)
    noise_factors = []
    for j, t in enumerate(grid.points):
        x = traj.states[j]
        f_sum += model.running_cost(t, x, measures[j], traj.controls[j]) * h
        sig = model.diffusion(t, x, measures[j])
        noise_factors.append(sqrt_h * apply_sigma(sig, traj.increments[j]))
    terminal = model.terminal_cost(traj.states[-1], ParticleEnsemble(traj.states[-1]))
    return f_sum, terminal, noise_factors


def critic_residuals(stack: NetStack, traj: TrajectoryBatch, measures: Sequence,
                     model: MfgModel, grid: TimeGrid, path_terms=None) -> np.ndarray:
    """Pathwise shooting residual V0(X_0) - sum f h + sum G . sigma sqrt(h) xi - g(X_T)."""
    if path_terms is None:
        path_terms = critic_path_terms(model, traj, measures, grid)
    f_sum, terminal, noise_factors = path_terms
    res = forward(stack.v0, traj.states[0])[:, 0] - f_sum - terminal
    for j in range(grid.n_steps):
        gv = forward(stack.grad_v[j], traj.states[j])
        res = res + np.sum(gv * noise_factors[j], axis=1)
    return res


def critic_loss_and_grads(stack: NetStack, traj: TrajectoryBatch, measures: Sequence,
                          model: MfgModel, grid: TimeGrid, path_terms=None,
                          rows: Optional[np.ndarray] = None):
    """Mean squared shooting residual and exact gradients for all critic nets.

    Costs and the diffusion are constants with respect to the critic, so the
    gradient flows only through the initial-value net and the stochastic
    integral terms. `rows` restricts the loss to a subset of paths (minibatch
    steps); the precomputable `path_terms` always cover the full batch.
    """
    if path_terms is None:
        path_terms = critic_path_terms(model, traj, measures, grid)
    f_sum, terminal, noise_factors = path_terms
    if rows is None:
        rows = slice(None)
        n = traj.n_paths
    else:
        n = len(rows)
    states = [traj.states[j][rows] for j in range(grid.n_steps + 1)]
    gv_vals = [forward(stack.grad_v[j], states[j]) for j in range(grid.n_steps)]
    res = forward(stack.v0, states[0])[:, 0] - f_sum[rows] - terminal[rows]
    for j in range(grid.n_steps):
        res = res + np.sum(gv_vals[j] * noise_factors[j][rows], axis=1)
    loss = float(np.mean(res**2))
    if not np.isfinite(loss):
        raise RuntimeError("non-finite critic loss")
    scale = (2.0 / n) * res
    grads_v0, _ = backward(stack.v0, states[0], scale[:, None])
    grads_gv = []
    for j in range(grid.n_steps):
        upstream = scale[:, None] * noise_factors[j][rows]
        g, _ = backward(stack.grad_v[j], states[j], upstream)
        grads_gv.append(g)
    return loss, grads_v0, grads_gv


def actor_targets(model: MfgModel, grid: TimeGrid, chi: Sequence, measures: Sequence,
                  frozen_actor: Sequence, frozen_grad_v: Sequence,
                  beta_a: float, dtau: float) -> list:
    """Per-step proximal targets A_frozen + beta_a dtau grad_alpha H(., A_frozen, -G)."""
    targets = []
    for j, t in enumerate(grid.points):
        a_frozen = forward(frozen_actor[j], chi[j])
        gv = forward(frozen_grad_v[j], chi[j])
        step = model.grad_alpha_h(t, chi[j], measures[j], a_frozen, gv)
        targets.append(a_frozen + beta_a * dtau * step)
    return targets


def actor_loss_and_grads(stack: NetStack, chi: Sequence, measures: Sequence,
                         model: MfgModel, beta_a: float, dtau: float, grid: TimeGrid,
                         frozen_actor: Optional[Sequence] = None,
                         targets: Optional[list] = None):
    """Summed-over-steps mean squared gap to the proximal targets, with gradients.

    The targets are built from snapshot actor/critic nets taken before the
    epoch loop; only the live actor parameters receive gradients. When no
    snapshot is given the live nets double as the snapshot (the tau = 0 case).
    Targets are evaluated on the same point arrays as the live networks so a
    zero policy-gradient step yields an exactly zero loss (evaluating the
    frozen nets on a differently shaped batch can differ in the last ulp,
    which the optimizer's eps floor would amplify into real parameter drift).
    """
    if targets is None:
        frozen = frozen_actor if frozen_actor is not None else stack.actor
        targets = actor_targets(model, grid, chi, measures, frozen, stack.grad_v, beta_a, dtau)
    loss = 0.0
    grads = []
    for j in range(grid.n_steps):
        live = forward(stack.actor[j], chi[j])
        diff = live - targets[j]
        n = diff.shape[0]
        loss += float(np.mean(np.sum(diff * diff, axis=1)))
        g, _ = backward(stack.actor[j], chi[j], (2.0 / n) * diff)
        grads.append(g)
    if not np.isfinite(loss):
        raise RuntimeError("non-finite actor loss")
    return loss, grads
