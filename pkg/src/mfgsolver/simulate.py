"""Forward Euler-Maruyama simulation of the controlled state dynamics.

The Brownian increments used to build a trajectory batch are stored with it:
the critic's shooting loss must be evaluated with exactly the draws that
generated the paths, and replaying the recursion with the stored increments
reproduces the states bit for bit.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .models import MfgModel, ParticleEnsemble, TimeGrid


@dataclass
class TrajectoryBatch:
    states: np.ndarray  # (n_steps + 1, n_paths, d)
    increments: Optional[np.ndarray]  # (n_steps, n_paths, n_noise), standard normal
    controls: np.ndarray  # (n_steps, n_paths, n_control)

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]


def apply_sigma(sigma: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """sigma @ xi per path; sigma may be shared (d, n') or per-path (n, d, n')."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 2:
        return xi @ sigma.T
    return np.einsum("nij,nj->ni", sigma, xi)


def sample_initial(model: MfgModel, n: int, rng: np.random.Generator) -> ParticleEnsemble:
    """Draw n i.i.d. initial states from the model's initial law."""
    if n <= 0:
        raise ValueError("n must be positive")
    return ParticleEnsemble(model.init_sampler(n, rng))


def simulate(model: MfgModel, grid: TimeGrid, control: Callable,
             measures: Sequence, x0: np.ndarray,
             rng: Optional[np.random.Generator] = None,
             increments: Optional[np.ndarray] = None) -> TrajectoryBatch:
    """Euler-Maruyama paths under `control(step_index, t, states) -> controls`.

    `measures` supplies one population measure per grid point, entering the
    drift/diffusion at that step. Pass `increments` to replay stored noise;
    otherwise fresh standard normals are drawn from `rng`.
    """
    if len(measures) != grid.n_steps:
        raise ValueError("need one measure per grid point")
    X = np.array(x0, dtype=float)
    n_paths = X.shape[0]
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if increments is None:
        if rng is None:
            raise ValueError("either rng or increments must be given")
        increments = rng.standard_normal((grid.n_steps, n_paths, model.dim_noise))
    h = grid.h
    sqrt_h = np.sqrt(h)
    states = np.empty((grid.n_steps + 1, n_paths, model.dim_state))
    controls = np.empty((grid.n_steps, n_paths, model.dim_control))
    states[0] = X
    for j, t in enumerate(grid.points):
        alpha = control(j, t, X)
        drift = model.drift(t, X, measures[j], alpha)
        sig = model.diffusion(t, X, measures[j])
        X = X + drift * h + sqrt_h * apply_sigma(sig, increments[j])
        if not np.all(np.isfinite(X)):
            bad = int(np.argwhere(~np.isfinite(X).all(axis=1))[0][0])
            raise RuntimeError(f"state blow-up at path {bad}, step {j + 1} (t={t + h:g})")
        states[j + 1] = X
        controls[j] = alpha
    return TrajectoryBatch(states=states, increments=increments, controls=controls)


def picard_target_samples(model: MfgModel, traj: TrajectoryBatch, step: int) -> np.ndarray:
    """Samples of the state (or, for action couplings, control) law at one step."""
    from .models import Coupling

    if model.coupling is Coupling.ACTION_MEASURE:
        return traj.controls[step]
    return traj.states[step]


def dump_trajectories(traj: TrajectoryBatch, grid: TimeGrid, path) -> None:
    """CSV dump with columns (path, t, x_1..x_d, alpha_1..alpha_n)."""
    from .textio import fmt

    d = traj.states.shape[2]
    n_ctrl = traj.controls.shape[2]
    header = ["path", "t"] + [f"x_{i + 1}" for i in range(d)] + [f"alpha_{i + 1}" for i in range(n_ctrl)]
    times = list(grid.points) + [grid.horizon]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for m in range(traj.n_paths):
            for j, t in enumerate(times):
                row = [str(m), fmt(t)]
                row += [fmt(v) for v in traj.states[j, m]]
                if j < grid.n_steps:
                    row += [fmt(v) for v in traj.controls[j, m]]
                else:
                    row += [""] * n_ctrl
                fh.write(",".join(row) + "\n")
