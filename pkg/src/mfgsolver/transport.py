"""Exact optimal transport between equal-size particle sets.

The assignment problem is solved exactly (scipy's Jonker-Volgenant solver,
cubic in the batch size); on top of it sit the geodesic particle update used
by the distribution flow and the empirical Wasserstein-2 diagnostics.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .models import ParticleEnsemble


@dataclass(frozen=True)
class Assignment:
    perm: np.ndarray  # column index matched to each row
    cost: float


def _particles(x) -> np.ndarray:
    return x.particles if isinstance(x, ParticleEnsemble) else np.atleast_2d(np.asarray(x, dtype=float))


def hungarian(costs: np.ndarray) -> Assignment:
    """Minimum-cost perfect matching of a square cost matrix, exactly."""
    costs = np.asarray(costs, dtype=float)
    if costs.ndim != 2 or costs.shape[0] != costs.shape[1] or costs.shape[0] < 1:
        raise ValueError("costs must be a square matrix with N >= 1")
    if not np.all(np.isfinite(costs)):
        raise ValueError("non-finite cost entry")
    rows, cols = linear_sum_assignment(costs)
    return Assignment(perm=cols, cost=float(costs[rows, cols].sum()))


def ot_match(source, target) -> Assignment:
    """Exact squared-Euclidean matching; source row m maps to target[perm[m]]."""
    a, b = _particles(source), _particles(target)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"size mismatch: {a.shape[0]} vs {b.shape[0]} particles")
    return hungarian(cdist(a, b, "sqeuclidean"))


def otgp_update(lmc, rho_target, dtau: float, beta_mu: float) -> ParticleEnsemble:
    """Move each particle the fraction dtau*beta_mu along its matched geodesic."""
    lam = dtau * beta_mu
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"geodesic overshoot: dtau * beta_mu = {lam:g} outside [0, 1]")
    a, b = _particles(lmc), _particles(rho_target)
    match = ot_match(a, b)
    return ParticleEnsemble(lam * b[match.perm] + (1.0 - lam) * a)


def w2_empirical(a, b, max_particles: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None) -> float:
    """Empirical Wasserstein-2 distance via exact matching.

    Unequal sizes (or sizes above `max_particles`) are handled by seeded
    subsampling without replacement; pass `rng` for a reproducible choice.
    """
    pa, pb = _particles(a), _particles(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("size mismatch after subsampling: empty particle set")
    n = min(pa.shape[0], pb.shape[0])
    if max_particles is not None:
        n = min(n, max_particles)
    if rng is None:
        rng = np.random.default_rng(0)
    if pa.shape[0] > n:
        pa = pa[rng.choice(pa.shape[0], size=n, replace=False)]
    if pb.shape[0] > n:
        pb = pb[rng.choice(pb.shape[0], size=n, replace=False)]
    match = ot_match(pa, pb)
    return float(np.sqrt(match.cost / n))
