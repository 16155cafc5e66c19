"""Paired-simulation metrics against the closed-form baselines.

The baseline system and the learned system are driven by the same initial
draws and Brownian increments (common random numbers), so the reported
relative errors measure policy quality rather than Monte Carlo noise. The
learned system is coupled through the running empirical measure of its own
batch, with no score networks involved; coupling it to the baseline mean flow
instead turns the comparison into an exact pathwise identity check.
"""

import json
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .baselines import BaselineLQ, baseline_measures, baseline_simulate, terminal_measure
from .models import Coupling, MfgModel, ParticleEnsemble, TimeGrid
from .neural import NetStack, forward
from .simulate import TrajectoryBatch, apply_sigma, simulate
from .textio import fmt, write_csv


@dataclass(frozen=True)
class MetricsReport:
    rev: float
    rmse_x: float
    rmse_alpha: float
    rmse_m: float
    n_test: int
    j_hat: float
    j_check: float


def evaluate_cost(model: MfgModel, traj: TrajectoryBatch, measures: Sequence,
                  grid: TimeGrid, terminal_meas=None) -> float:
    """Monte Carlo cost (1/N) sum_m [sum_t f(t, X, mu, alpha) h + g(X_T, mu_T)]."""
    h = grid.h
    total = np.zeros(traj.n_paths)
    for j, t in enumerate(grid.points):
        total += model.running_cost(t, traj.states[j], measures[j], traj.controls[j]) * h
    if terminal_meas is None:
        terminal_meas = ParticleEnsemble(traj.states[-1])
    total += model.terminal_cost(traj.states[-1], terminal_meas)
    return float(total.mean())


def actor_control(stack: NetStack) -> Callable:
    """Feedback control callback backed by the per-step actor networks."""
    return lambda j, t, states: forward(stack.actor[j], states)


def simulate_empirical(model: MfgModel, grid: TimeGrid, control: Callable,
                       x0: np.ndarray, increments: np.ndarray):
    """Euler-Maruyama paths coupled to the batch's own empirical measure.

    At each step the population measure fed to the dynamics and costs is the
    current batch itself (states, or realized controls for action couplings).
    Returns the trajectory batch together with the per-step measures used.
    """
    X = np.array(x0, dtype=float)
    n_paths = X.shape[0]
    h = grid.h
    sqrt_h = np.sqrt(h)
    states = np.empty((grid.n_steps + 1, n_paths, model.dim_state))
    controls = np.empty((grid.n_steps, n_paths, model.dim_control))
    states[0] = X
    measures = []
    for j, t in enumerate(grid.points):
        alpha = control(j, t, X)
        if model.coupling is Coupling.ACTION_MEASURE:
            meas = ParticleEnsemble(alpha)
        else:
            meas = ParticleEnsemble(X)
        measures.append(meas)
        drift = model.drift(t, X, meas, alpha)
        sig = model.diffusion(t, X, meas)
        X = X + drift * h + sqrt_h * apply_sigma(sig, increments[j])
        if not np.all(np.isfinite(X)):
            bad = int(np.argwhere(~np.isfinite(X).all(axis=1))[0][0])
            raise RuntimeError(f"state blow-up at path {bad}, step {j + 1} (t={t + h:g})")
        states[j + 1] = X
        controls[j] = alpha
    return TrajectoryBatch(states=states, increments=increments, controls=controls), measures


def _mean_paths(model: MfgModel, traj: TrajectoryBatch) -> np.ndarray:
    """Per-step population mean: states for state couplings, controls otherwise."""
    if model.coupling is Coupling.ACTION_MEASURE:
        return traj.controls.mean(axis=1)
    return traj.states[:-1].mean(axis=1)


def metrics_from_paths(x_hat, x_check, a_hat, a_check, m_hat, m_check,
                       j_hat: float, j_check: float, n_test: int) -> MetricsReport:
    """Relative pathwise/mean errors and the relative error in value."""
    den_x = float(np.sum(np.asarray(x_hat) ** 2))
    if den_x == 0.0:
        raise ValueError("degenerate denominator: baseline states are identically zero")
    den_a = float(np.sum(np.asarray(a_hat) ** 2))
    den_m = float(np.sum(np.asarray(m_hat) ** 2))
    if den_a == 0.0 or den_m == 0.0:
        raise ValueError("degenerate denominator in control or mean metric")
    return MetricsReport(
        rev=abs(j_hat - j_check) / abs(j_hat),
        rmse_x=float(np.sqrt(np.sum((np.asarray(x_hat) - np.asarray(x_check)) ** 2) / den_x)),
        rmse_alpha=float(np.sqrt(np.sum((np.asarray(a_hat) - np.asarray(a_check)) ** 2) / den_a)),
        rmse_m=float(np.sqrt(np.sum((np.asarray(m_hat) - np.asarray(m_check)) ** 2) / den_m)),
        n_test=n_test,
        j_hat=j_hat,
        j_check=j_check,
    )


def evaluate(stack: Union[NetStack, Callable], model: MfgModel, baseline: BaselineLQ,
             n_test: int, rng: np.random.Generator,
             check_coupling: str = "empirical") -> MetricsReport:
    """Paired evaluation of a trained stack (or a control callback) vs the baseline.

    `check_coupling` selects the population measure of the learned system:
    "empirical" (default, the batch's own running measure) or "baseline"
    (the closed-form mean flow; with the baseline control this makes the two
    systems identical path by path).
    """
    if n_test < 2:
        raise ValueError("n_test must be at least 2")
    if check_coupling not in ("empirical", "baseline"):
        raise ValueError(f"unknown coupling mode: {check_coupling!r}")
    grid = baseline.grid
    r_x0, r_noise = rng.spawn(2)
    x0 = model.init_sampler(n_test, r_x0)
    increments = r_noise.standard_normal((grid.n_steps, n_test, model.dim_noise))

    traj_hat = baseline_simulate(baseline, model, n_test, x0=x0, increments=increments)
    meas_hat = baseline_measures(baseline, grid)
    j_hat = evaluate_cost(model, traj_hat, meas_hat, grid, terminal_meas=terminal_measure(baseline))

    control = stack if callable(stack) else actor_control(stack)
    if check_coupling == "empirical":
        traj_chk, meas_chk = simulate_empirical(model, grid, control, x0, increments)
        j_check = evaluate_cost(model, traj_chk, meas_chk, grid)
    else:
        traj_chk = simulate(model, grid, control, meas_hat, x0, increments=increments)
        j_check = evaluate_cost(model, traj_chk, meas_hat, grid, terminal_meas=terminal_measure(baseline))

    return metrics_from_paths(
        traj_hat.states[:-1], traj_chk.states[:-1],
        traj_hat.controls, traj_chk.controls,
        _mean_paths(model, traj_hat), _mean_paths(model, traj_chk),
        j_hat, j_check, n_test,
    )


def write_metrics_json(report: MetricsReport, path, provenance: Optional[dict] = None) -> None:
    doc = asdict(report)
    if provenance:
        doc["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_snapshot_histograms(systems: dict, times, path, bins: int = 40, component: int = 0) -> None:
    """Per-time histograms of one state/control component for several systems.

    `systems` maps a column label to an array of shape (n_times, n_paths, dim);
    all systems share bin edges per time so the columns are comparable.
    """
    names = list(systems)
    header = ["t", "bin_lo", "bin_hi"] + [f"count_{n}" for n in names]
    rows = []
    for j, t in enumerate(times):
        samples = [np.asarray(systems[n])[j, :, component] for n in names]
        lo = min(s.min() for s in samples)
        hi = max(s.max() for s in samples)
        if hi <= lo:
            hi = lo + 1e-12
        edges = np.linspace(lo, hi, bins + 1)
        counts = [np.histogram(s, bins=edges)[0] for s in samples]
        for i in range(bins):
            rows.append([fmt(t), fmt(edges[i]), fmt(edges[i + 1])] + [str(int(c[i])) for c in counts])
    write_csv(path, header, rows)
