"""Mean-field game models: systemic risk, optimal execution, and flocking.

A model bundles the drift, diffusion, running/terminal costs, and the control
gradient of the Hamiltonian for one game, together with its initial law and
the kind of population coupling (through the state distribution or, for the
optimal-execution game, through the distribution of trading rates).

All callbacks are vectorized over a batch of states (rows) and are pure.
Empirical measures are plain particle sets; models only touch them through
their mean or, for flocking, the velocity-alignment interaction, so nothing
ever copies an ensemble.
"""

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class Coupling(enum.Enum):
    STATE_MEASURE = "state"
    ACTION_MEASURE = "action"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform physical-time grid: N equal steps on [0, horizon], last node excluded.

    `points` holds {0, h, ..., (n_steps-1)h}; the terminal time `horizon`
    itself is not a grid point (controls and measures live on the open grid,
    the terminal cost is evaluated at the horizon).
    """

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")

    @property
    def h(self) -> float:
        return self.horizon / self.n_steps

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.h


@dataclass(frozen=True)
class ParticleEnsemble:
    """Equally weighted particles representing an empirical measure."""

    particles: np.ndarray  # (n, dim)

    def __post_init__(self):
        arr = np.asarray(self.particles, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError("particles must be a (n, dim) array")
        object.__setattr__(self, "particles", arr)

    def __len__(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return empirical_mean(self)


@dataclass(frozen=True)
class FixedMeanMeasure:
    """Measure known only through its mean (closed-form baseline flows)."""

    mean: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))


def empirical_mean(ens: ParticleEnsemble) -> np.ndarray:
    """Arithmetic mean of the particles; raises on an empty ensemble."""
    if len(ens) == 0:
        raise ValueError("empty measure")
    return ens.particles.mean(axis=0)


def flocking_interaction_batch(x: np.ndarray, ens: ParticleEnsemble, beta_w: float) -> np.ndarray:
    """Velocity-alignment kernel averaged over the ensemble, batched over x.

    For each row (s, v) of x, returns the ensemble average of
    w(|s - s'|) (v' - v) with w(r) = (1 + r^2)^(-beta_w).
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != 6 or ens.dim != 6:
        raise ValueError("flocking interaction requires 6-dimensional states")
    s, v = X[:, :3], X[:, 3:]
    sp, vp = ens.particles[:, :3], ens.particles[:, 3:]
    d2 = ((s[:, None, :] - sp[None, :, :]) ** 2).sum(axis=2)  # (n, m)
    w = (1.0 + d2) ** (-beta_w)
    rel = vp[None, :, :] - v[:, None, :]  # (n, m, 3)
    return (w[:, :, None] * rel).mean(axis=1)


def flocking_interaction(x: np.ndarray, ens: ParticleEnsemble, beta_w: float) -> np.ndarray:
    """Single-state version of :func:`flocking_interaction_batch`."""
    return flocking_interaction_batch(np.asarray(x, dtype=float)[None, :], ens, beta_w)[0]


@dataclass(frozen=True)
class MfgModel:
    """One mean-field game: dynamics, costs, and del_alpha of its Hamiltonian.

    With the Hamiltonian H = b^T p - f (the diffusion is control-free in all
    supported models, so the second-order term drops out of the control
    gradient), `grad_alpha_h(t, x, mu, alpha, gv)` evaluates
    grad_alpha H at p = -gv, i.e. -grad_alpha f - (grad_alpha b)^T gv.
    """

    name: str
    dim_state: int
    dim_control: int
    dim_noise: int
    coupling: Coupling
    drift: Callable  # (t, x(n,d), measure, alpha(n,nc)) -> (n, d)
    diffusion: Callable  # (t, x(n,d), measure) -> (d, n') or (n, d, n')
    running_cost: Callable  # (t, x(n,d), measure, alpha(n,nc)) -> (n,)
    terminal_cost: Callable  # (x(n,d), measure) -> (n,)
    grad_alpha_h: Callable  # (t, x, measure, alpha, gv(n,d)) -> (n, nc)
    init_sampler: Callable = field(repr=False)  # (n, rng) -> (n, d)

    @property
    def measure_dim(self) -> int:
        if self.coupling is Coupling.ACTION_MEASURE:
            return self.dim_control
        return self.dim_state


@dataclass(frozen=True)
class SystemicRiskParams:
    """Interbank lending game: mean reversion a, noise sigma, cost weights q, epsilon, c."""

    a: float = 0.1
    sigma: float = 0.5
    q: float = 0.5
    epsilon: float = 1.0
    c: float = 1.0
    init_mean: float = 1.0
    init_var: float = 1.0

    def __post_init__(self):
        if min(self.a, self.q, self.c) < 0:
            raise ValueError("a, q, c must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.q**2 > self.epsilon:
            raise ValueError("well-posedness requires q^2 <= epsilon")
        if self.init_var < 0:
            raise ValueError("init_var must be nonnegative")


@dataclass(frozen=True)
class OptimalExecutionParams:
    """Inventory liquidation game; the coupling runs through the mean trading rate."""

    c_alpha: float = 0.5
    c_x: float = 1.0
    c_g: float = 1.0
    gamma: float = 1.0
    sigma: float = 0.5
    init_mean: float = 1.0
    init_var: float = 1.0

    def __post_init__(self):
        if min(self.c_alpha, self.c_x, self.c_g, self.gamma, self.sigma) <= 0:
            raise ValueError("c_alpha, c_x, c_g, gamma, sigma must all be positive")
        if self.init_var < 0:
            raise ValueError("init_var must be nonnegative")


@dataclass(frozen=True)
class FlockingParams:
    """Velocity-alignment game on position+velocity states in R^6."""

    diffusion: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))  # C, 3x3
    control_weight: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(3))  # R
    alignment_weight: np.ndarray = field(default_factory=lambda: np.eye(3))  # Q
    beta_w: float = 0.2

    def __post_init__(self):
        for label in ("diffusion", "control_weight", "alignment_weight"):
            arr = np.asarray(getattr(self, label), dtype=float)
            if arr.shape != (3, 3):
                raise ValueError(f"{label} must be a 3x3 matrix")
            object.__setattr__(self, label, arr)
        for label in ("control_weight", "alignment_weight"):
            arr = getattr(self, label)
            if not np.allclose(arr, arr.T):
                raise ValueError(f"{label} must be symmetric")
            if np.linalg.eigvalsh(arr).min() < -1e-12:
                raise ValueError(f"{label} must be positive semi-definite")
        if self.beta_w < 0:
            raise ValueError("beta_w must be nonnegative")


def _gaussian_sampler(mean: np.ndarray, std: np.ndarray):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    std = np.atleast_1d(np.asarray(std, dtype=float))

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        if n <= 0:
            raise ValueError("sample count must be positive")
        return mean + std * rng.standard_normal((n, mean.size))

    return sample


def make_systemic_risk(p: SystemicRiskParams) -> MfgModel:
    """Log-reserve game: dX = [a(mbar - X) + alpha] dt + sigma dW."""

    def drift(t, x, measure, alpha):
        return p.a * (measure.mean - x) + alpha

    def diffusion(t, x, measure):
        return np.array([[p.sigma]])

    def running_cost(t, x, measure, alpha):
        gap = (measure.mean - x)[:, 0]
        a1 = alpha[:, 0]
        return 0.5 * a1**2 - p.q * a1 * gap + 0.5 * p.epsilon * gap**2

    def terminal_cost(x, measure):
        return 0.5 * p.c * ((x - measure.mean)[:, 0]) ** 2

    def grad_alpha_h(t, x, measure, alpha, gv):
        return -gv - alpha + p.q * (measure.mean - x)

    return MfgModel(
        name="systemic_risk",
        dim_state=1,
        dim_control=1,
        dim_noise=1,
        coupling=Coupling.STATE_MEASURE,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        grad_alpha_h=grad_alpha_h,
        init_sampler=_gaussian_sampler(p.init_mean, np.sqrt(p.init_var)),
    )


def make_optimal_execution(p: OptimalExecutionParams) -> MfgModel:
    """Liquidation game: dX = alpha dt + sigma dW; measure = law of trading rates."""

    def drift(t, x, measure, alpha):
        return np.array(alpha, copy=True)

    def diffusion(t, x, measure):
        return np.array([[p.sigma]])

    def running_cost(t, x, measure, alpha):
        rate_mean = measure.mean[0]
        return 0.5 * p.c_alpha * alpha[:, 0] ** 2 + 0.5 * p.c_x * x[:, 0] ** 2 - p.gamma * x[:, 0] * rate_mean

    def terminal_cost(x, measure):
        return 0.5 * p.c_g * x[:, 0] ** 2

    def grad_alpha_h(t, x, measure, alpha, gv):
        return -gv - p.c_alpha * alpha

    return MfgModel(
        name="optimal_execution",
        dim_state=1,
        dim_control=1,
        dim_noise=1,
        coupling=Coupling.ACTION_MEASURE,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        grad_alpha_h=grad_alpha_h,
        init_sampler=_gaussian_sampler(p.init_mean, np.sqrt(p.init_var)),
    )


def make_flocking(p: FlockingParams) -> MfgModel:
    """Flocking game on (position, velocity): dS = V dt, dV = alpha dt + C dW."""
    sigma_full = np.vstack([np.zeros((3, 3)), p.diffusion])  # (6, 3)

    def drift(t, x, measure, alpha):
        return np.hstack([x[:, 3:], alpha])

    def diffusion(t, x, measure):
        return sigma_full

    def running_cost(t, x, measure, alpha):
        inter = flocking_interaction_batch(x, measure, p.beta_w)
        ctrl = np.einsum("ni,ij,nj->n", alpha, p.control_weight, alpha)
        align = np.einsum("ni,ij,nj->n", inter, p.alignment_weight, inter)
        return ctrl + align

    def terminal_cost(x, measure):
        return np.zeros(x.shape[0])

    def grad_alpha_h(t, x, measure, alpha, gv):
        return -2.0 * alpha @ p.control_weight.T - gv[:, 3:]

    def init_sampler(n: int, rng: np.random.Generator) -> np.ndarray:
        if n <= 0:
            raise ValueError("sample count must be positive")
        pos = rng.standard_normal((n, 3))
        vel = 1.0 + rng.standard_normal((n, 3))
        return np.hstack([pos, vel])

    return MfgModel(
        name="flocking",
        dim_state=6,
        dim_control=3,
        dim_noise=3,
        coupling=Coupling.STATE_MEASURE,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        grad_alpha_h=grad_alpha_h,
        init_sampler=init_sampler,
    )


_FACTORIES = {
    "systemic_risk": (SystemicRiskParams, make_systemic_risk),
    "optimal_execution": (OptimalExecutionParams, make_optimal_execution),
    "flocking": (FlockingParams, make_flocking),
}


def model_from_id(model_id: str, params) -> MfgModel:
    if model_id not in _FACTORIES:
        raise ValueError(f"unknown model id: {model_id!r}")
    _, factory = _FACTORIES[model_id]
    return factory(params)


def params_class(model_id: str):
    if model_id not in _FACTORIES:
        raise ValueError(f"unknown model id: {model_id!r}")
    return _FACTORIES[model_id][0]
