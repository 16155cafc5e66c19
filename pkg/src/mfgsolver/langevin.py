"""Langevin Monte Carlo sampling driven by the per-step score networks.

Each physical time step owns one score network; running the discretized
overdamped Langevin chain under that network materializes the current
population estimate at that step as particles. Chains are warm-started from
the previous iteration's terminal samples so burn-in is paid only once.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .models import ParticleEnsemble, TimeGrid
from .neural import Mlp, NetStack, forward, stack_forward, stack_mlps

DIVERGENCE_GUARD = 1e6


@dataclass(frozen=True)
class LmcConfig:
    n_steps: int = 300
    step: float = 0.05
    total: float = 15.0

    def __post_init__(self):
        if self.n_steps < 1 or self.step <= 0:
            raise ValueError("n_steps must be >= 1 and step > 0")
        if not np.isclose(self.n_steps * self.step, self.total, rtol=1e-9):
            raise ValueError("n_steps * step must equal total")


def lmc_sample(score_net: Mlp, init, cfg: LmcConfig,
               rng: Optional[np.random.Generator] = None,
               noise: Optional[np.ndarray] = None) -> ParticleEnsemble:
    """Terminal particles of L <- L + (1/2) S(L) h + sqrt(h) xi after cfg.n_steps.

    `noise`, if given, must have shape (n_steps, n, dim) and overrides `rng`
    (used for replay and exchangeability checks).
    """
    if score_net.in_dim != score_net.out_dim:
        raise ValueError("score network must be square")
    L = np.array(init.particles if isinstance(init, ParticleEnsemble) else init, dtype=float)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be given")
        noise = rng.standard_normal((cfg.n_steps, L.shape[0], L.shape[1]))
    sqrt_h = np.sqrt(cfg.step)
    for u in range(cfg.n_steps):
        L = L + 0.5 * cfg.step * forward(score_net, L) + sqrt_h * noise[u]
        _check_guard(L, u)
    return ParticleEnsemble(L)


def _check_guard(L: np.ndarray, u: int, step_label: str = "") -> None:
    amax = np.abs(L).max()
    if not amax <= DIVERGENCE_GUARD:
        flat = np.abs(L).reshape(L.shape[0], -1).max(axis=1) if L.ndim == 2 else np.abs(L).max(axis=(1, 2))
        bad = int(np.argmax(~(flat <= DIVERGENCE_GUARD)))
        raise RuntimeError(f"langevin chain diverged at particle {bad}{step_label} (chain step {u + 1})")


def measures_for_iteration(stack: NetStack, grid: TimeGrid, cfg: LmcConfig,
                           warm: Optional[Sequence], rng: np.random.Generator,
                           n_batch: Optional[int] = None) -> list:
    """One terminal-particle ensemble per grid point, run for all steps at once.

    `warm` is the previous iteration's list of ensembles (or arrays); when
    None, chains start from i.i.d. standard normals and `n_batch` is required.
    """
    nets = stack.score
    if len(nets) != grid.n_steps:
        raise ValueError("need one score network per grid point")
    dim = nets[0].in_dim
    k = len(nets)
    if warm is None:
        if n_batch is None:
            raise ValueError("n_batch is required on a cold start")
        L = rng.standard_normal((k, n_batch, dim))
    else:
        if len(warm) != k:
            raise ValueError("warm start must supply one ensemble per grid point")
        L = np.stack([w.particles if isinstance(w, ParticleEnsemble) else np.asarray(w, dtype=float)
                      for w in warm])
    st = stack_mlps(nets)
    sqrt_h = np.sqrt(cfg.step)
    for u in range(cfg.n_steps):
        L = L + 0.5 * cfg.step * stack_forward(st, L) + sqrt_h * rng.standard_normal(L.shape)
        flat = np.abs(L).max(axis=(1, 2))
        if not np.all(flat <= DIVERGENCE_GUARD):
            j = int(np.argmax(~(flat <= DIVERGENCE_GUARD)))
            per = np.abs(L[j]).max(axis=1)
            bad = int(np.argmax(~(per <= DIVERGENCE_GUARD)))
            raise RuntimeError(
                f"langevin chain diverged at particle {bad}, grid step {j} (chain step {u + 1})")
    return [ParticleEnsemble(L[j]) for j in range(k)]
