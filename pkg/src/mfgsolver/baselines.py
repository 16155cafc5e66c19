"""Closed-form equilibria of the two linear-quadratic games.

Both the systemic-risk and the optimal-execution game admit quadratic value
functions whose Riccati coefficients solve in closed form; from them follow
the equilibrium feedback control, the Gaussian population moments, and (for
systemic risk) the optimal control against an arbitrary frozen mean flow.
Integrals that have no elementary antiderivative (running integrals of the
Riccati coefficient) are evaluated by composite trapezoid on a refined grid.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import (FixedMeanMeasure, MfgModel, OptimalExecutionParams,
                     SystemicRiskParams, TimeGrid)

REFINE = 10


@dataclass(frozen=True)
class BaselineLQ:
    """Equilibrium coefficients tabulated on the grid nodes plus the horizon.

    `m` is the mean of the coupling measure (states for systemic risk,
    trading rates for execution); `var` is always the state variance. The
    execution game additionally carries the auxiliary Riccati coefficient
    `etabar`, the state mean `p`, the constant value-offset `zeta`, and the
    action variance.
    """

    model_id: str
    grid: TimeGrid
    times: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    m: np.ndarray
    var: np.ndarray
    params: object
    etabar: Optional[np.ndarray] = None
    zeta: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    action_var: Optional[np.ndarray] = None


def _cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def _refined_times(grid: TimeGrid, refine: int = REFINE) -> np.ndarray:
    return np.linspace(0.0, grid.horizon, grid.n_steps * refine + 1)


def _node_index(grid: TimeGrid, refine: int = REFINE) -> np.ndarray:
    return np.arange(grid.n_steps + 1) * refine


def systemic_eta(p: SystemicRiskParams, horizon: float, t) -> np.ndarray:
    """Closed-form Riccati coefficient of the systemic-risk value function."""
    t = np.asarray(t, dtype=float)
    aq = p.a + p.q
    eps_eff = p.epsilon - p.q**2
    root = np.sqrt(aq**2 + eps_eff)
    d_plus, d_minus = -aq + root, -aq - root
    e = np.exp((d_plus - d_minus) * (horizon - t))
    den = (d_minus * e - d_plus) - p.c * (e - 1.0)
    if np.any(np.abs(den) < 1e-14):
        raise ValueError("degenerate Riccati denominator")
    return (-eps_eff * (e - 1.0) - p.c * (d_plus * e - d_minus)) / den


def systemic_deltas(p: SystemicRiskParams):
    aq = p.a + p.q
    root = np.sqrt(aq**2 + (p.epsilon - p.q**2))
    return -aq + root, -aq - root


def baseline_systemic(p: SystemicRiskParams, grid: TimeGrid, refine: int = REFINE) -> BaselineLQ:
    tr = _refined_times(grid, refine)
    eta_r = systemic_eta(p, grid.horizon, tr)
    run_eta = _cumtrapz(eta_r, tr)
    xi_r = 0.5 * p.sigma**2 * (run_eta[-1] - run_eta)  # (sigma^2 / 2) * int_t^T eta
    # Var(t) = e^{-2A(t)} (Var_0 + sigma^2 int_0^t e^{2A(s)} ds), A = int_0^t (a+q+eta)
    a_run = _cumtrapz(p.a + p.q + eta_r, tr)
    inner = _cumtrapz(np.exp(2.0 * a_run), tr)
    var_r = np.exp(-2.0 * a_run) * (p.init_var + p.sigma**2 * inner)
    idx = _node_index(grid, refine)
    return BaselineLQ(
        model_id="systemic_risk",
        grid=grid,
        times=tr[idx],
        eta=eta_r[idx],
        xi=xi_r[idx],
        m=np.full(grid.n_steps + 1, p.init_mean),
        var=var_r[idx],
        params=p,
    )


def execution_eta(p: OptimalExecutionParams, horizon: float, t) -> np.ndarray:
    """Closed-form Riccati coefficient of the execution value function."""
    t = np.asarray(t, dtype=float)
    kappa = np.sqrt(p.c_x / p.c_alpha)
    ct = p.c_alpha * kappa
    e = np.exp(2.0 * kappa * (horizon - t))
    den = ct - p.c_g + (ct + p.c_g) * e
    if np.any(np.abs(den) < 1e-14):
        raise ValueError("degenerate Riccati denominator")
    return -ct * (ct - p.c_g - (ct + p.c_g) * e) / den


def execution_etabar(p: OptimalExecutionParams, horizon: float, t) -> np.ndarray:
    """Auxiliary Riccati coefficient driving the equilibrium state mean."""
    t = np.asarray(t, dtype=float)
    d_plus, d_minus = execution_deltas(p)
    f = np.exp((d_plus - d_minus) / p.c_alpha * (horizon - t))
    den = (p.c_g - d_plus) - (p.c_g - d_minus) * f
    if np.any(np.abs(den) < 1e-14):
        raise ValueError("degenerate Riccati denominator")
    return ((p.c_g - d_plus) * d_minus - (p.c_g - d_minus) * d_plus * f) / den


def execution_deltas(p: OptimalExecutionParams):
    root = np.sqrt(p.gamma**2 + 4.0 * p.c_alpha * p.c_x)
    return (p.gamma + root) / 2.0, (p.gamma - root) / 2.0


def baseline_execution(p: OptimalExecutionParams, grid: TimeGrid, refine: int = REFINE) -> BaselineLQ:
    tr = _refined_times(grid, refine)
    eta_r = execution_eta(p, grid.horizon, tr)
    etabar_r = execution_etabar(p, grid.horizon, tr)
    p_r = np.exp(-_cumtrapz(etabar_r, tr) / p.c_alpha) * p.init_mean
    xi_r = p_r * (etabar_r - eta_r)
    # state variance, same structure as the systemic model with A = int eta / c_alpha
    a_run = _cumtrapz(eta_r, tr) / p.c_alpha
    inner = _cumtrapz(np.exp(2.0 * a_run), tr)
    var_r = np.exp(-2.0 * a_run) * (p.init_var + p.sigma**2 * inner)
    m_r = -(p_r * etabar_r) / p.c_alpha
    # zeta(t) = int_t^T [sigma^2 eta / 2 - xi^2 / (2 c_alpha)] ds
    zdot = 0.5 * p.sigma**2 * eta_r - xi_r**2 / (2.0 * p.c_alpha)
    zrun = _cumtrapz(zdot, tr)
    zeta_r = zrun[-1] - zrun
    idx = _node_index(grid, refine)
    return BaselineLQ(
        model_id="optimal_execution",
        grid=grid,
        times=tr[idx],
        eta=eta_r[idx],
        xi=xi_r[idx],
        m=m_r[idx],
        var=var_r[idx],
        params=p,
        etabar=etabar_r[idx],
        zeta=zeta_r[idx],
        p=p_r[idx],
        action_var=(eta_r[idx] ** 2 / p.c_alpha**2) * var_r[idx],
    )


def _check_time(b: BaselineLQ, t: float) -> float:
    if not -1e-12 <= t <= b.grid.horizon + 1e-12:
        raise ValueError(f"time {t:g} outside [0, {b.grid.horizon:g}]")
    return float(np.clip(t, 0.0, b.grid.horizon))


def _interp(b: BaselineLQ, arr: np.ndarray, t: float) -> float:
    return float(np.interp(t, b.times, arr))


def equilibrium_control(b: BaselineLQ, t: float, x):
    """Equilibrium feedback control at (t, x); linear interpolation between nodes."""
    t = _check_time(b, t)
    x = np.asarray(x, dtype=float)
    if b.model_id == "systemic_risk":
        return (b.params.q + _interp(b, b.eta, t)) * (_interp(b, b.m, t) - x)
    return -(_interp(b, b.eta, t) * x + _interp(b, b.xi, t)) / b.params.c_alpha


def conditional_rho(b: BaselineLQ, m_path: np.ndarray, refine: int = REFINE) -> np.ndarray:
    """Linear coefficient of the optimal value against a frozen mean flow.

    Systemic risk only. `m_path` is tabulated on the grid points (the value at
    the horizon, if absent, is held constant from the last node). Returns the
    coefficient on the baseline's time nodes.
    """
    if b.model_id != "systemic_risk":
        raise ValueError("conditional control is defined for the systemic-risk model only")
    p = b.params
    m_path = np.atleast_1d(np.asarray(m_path, dtype=float))
    if m_path.size == b.grid.n_steps:
        m_times = b.grid.points
    elif m_path.size == b.grid.n_steps + 1:
        m_times = b.times
    else:
        raise ValueError("mean path must have one value per grid point (or plus the horizon)")
    tr = _refined_times(b.grid, refine)
    m_r = np.interp(tr, m_times, m_path)
    eta_r = systemic_eta(p, b.grid.horizon, tr)
    aq = p.a + p.q
    eps_eff = p.epsilon - p.q**2
    run_eta = _cumtrapz(eta_r, tr)
    tail_eta = run_eta[-1] - run_eta  # int_t^T eta
    weight = np.exp(aq * (b.grid.horizon - tr) + tail_eta)
    integrand = m_r * (eps_eff - aq * eta_r) * weight
    run_int = _cumtrapz(integrand, tr)
    tail_int = run_int[-1] - run_int
    rho_r = (-p.c * m_r[-1] - tail_int) * np.exp(-aq * (b.grid.horizon - tr) - tail_eta)
    return rho_r[_node_index(b.grid, refine)]


def conditional_optimal_control(b: BaselineLQ, m_path: np.ndarray, t: float, x,
                                rho: Optional[np.ndarray] = None):
    """Optimal feedback control against the frozen mean flow `m_path` (systemic risk).

    Pass a precomputed `rho` (from :func:`conditional_rho`) when evaluating
    at many times to avoid re-running the quadrature.
    """
    t = _check_time(b, t)
    if rho is None:
        rho = conditional_rho(b, m_path)
    m_path = np.atleast_1d(np.asarray(m_path, dtype=float))
    m_times = b.grid.points if m_path.size == b.grid.n_steps else b.times
    x = np.asarray(x, dtype=float)
    m_t = float(np.interp(t, m_times, m_path))
    return b.params.q * (m_t - x) - (_interp(b, b.eta, t) * x + float(np.interp(t, b.times, rho)))


def baseline_measures(b: BaselineLQ, grid: TimeGrid) -> list:
    """Coupling measures of the equilibrium flow, one per grid point."""
    return [FixedMeanMeasure(_interp(b, b.m, t)) for t in grid.points]


def terminal_measure(b: BaselineLQ) -> FixedMeanMeasure:
    return FixedMeanMeasure(b.m[-1])


def baseline_simulate(b: BaselineLQ, model: MfgModel, n: int,
                      rng: Optional[np.random.Generator] = None,
                      x0: Optional[np.ndarray] = None,
                      increments: Optional[np.ndarray] = None):
    """Euler-Maruyama paths under the equilibrium control and mean flow.

    Sharing `x0`/`increments` with another simulation yields common random
    numbers for paired comparisons.
    """
    from .simulate import simulate

    if x0 is None:
        if rng is None:
            raise ValueError("either rng or x0 must be given")
        x0 = model.init_sampler(n, rng)

    def control(j, t, states):
        return equilibrium_control(b, t, states)

    return simulate(model, b.grid, control, baseline_measures(b, b.grid), x0,
                    rng=rng, increments=increments)


def mean_initial_value(b: BaselineLQ) -> float:
    """E[v(0, X_0)] under the initial law, from the quadratic value function."""
    p = b.params
    if b.model_id == "systemic_risk":
        return 0.5 * b.eta[0] * p.init_var + b.xi[0]
    second_moment = p.init_var + p.init_mean**2
    return 0.5 * b.eta[0] * second_moment + b.xi[0] * p.init_mean + b.zeta[0]


def riccati_residual(b: BaselineLQ, refine: int = 2 * REFINE) -> dict:
    """Central-difference residuals of the closed-form Riccati coefficients.

    Evaluated at the tabulated nodes with step h/refine; the closed forms
    extend smoothly past the horizon so no one-sided stencils are needed.
    """
    delta = b.grid.h / refine
    t = b.times
    out = {}
    if b.model_id == "systemic_risk":
        p = b.params
        eta = lambda s: systemic_eta(p, b.grid.horizon, s)
        rhs = eta(t) ** 2 + 2.0 * (p.a + p.q) * eta(t) - (p.epsilon - p.q**2)
        out["eta"] = (eta(t + delta) - eta(t - delta)) / (2.0 * delta) - rhs
    else:
        p = b.params
        eta = lambda s: execution_eta(p, b.grid.horizon, s)
        rhs = eta(t) ** 2 / p.c_alpha - p.c_x
        out["eta"] = (eta(t + delta) - eta(t - delta)) / (2.0 * delta) - rhs
        etabar = lambda s: execution_etabar(p, b.grid.horizon, s)
        rhs_bar = -p.gamma / p.c_alpha * etabar(t) + etabar(t) ** 2 / p.c_alpha - p.c_x
        out["etabar"] = (etabar(t + delta) - etabar(t - delta)) / (2.0 * delta) - rhs_bar
    return out


def dump_baseline_csv(b: BaselineLQ, path) -> dict:
    """Write the tabulated coefficients plus residual columns; returns max residuals."""
    from .textio import fmt, write_csv

    res = riccati_residual(b)
    header = ["t", "eta", "xi", "m", "var", "residual_eta"]
    cols = [b.times, b.eta, b.xi, b.m, b.var, res["eta"]]
    if b.model_id == "optimal_execution":
        header += ["etabar", "residual_etabar"]
        cols += [b.etabar, res["etabar"]]
    rows = [[fmt(col[i]) for col in cols] for i in range(b.times.size)]
    write_csv(path, header, rows)
    return {name: float(np.abs(r).max()) for name, r in res.items()}
