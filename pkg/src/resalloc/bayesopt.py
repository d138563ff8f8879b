"""Box-constrained Bayesian optimization with a Gaussian-process surrogate.

The loop starts from a Latin-hypercube design, then fits a GP (squared
exponential kernel plus a noise term, marginal-likelihood hyperparameters,
inputs scaled to the unit cube) and evaluates the approximate maximizer of
expected improvement. ``method="random"`` replaces the surrogate with uniform draws.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm, qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel

log = logging.getLogger(__name__)


class SurrogateFailure(RuntimeError):
    pass


@dataclass
class OptimizeResult:
    x: np.ndarray
    y: float
    xs: list[np.ndarray] = field(default_factory=list)
    ys: list[float] = field(default_factory=list)
    incumbents: list[float] = field(default_factory=list)
    fallback_at: int | None = None  # trial index where random search took over


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float, xi: float = 0.0) -> np.ndarray:
    """EI for minimization."""
    sigma = np.maximum(sigma, 1e-12)
    imp = best - mu - xi
    z = imp / sigma
    return imp * norm.cdf(z) + sigma * norm.pdf(z)


def _fit_gp(X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> GaussianProcessRegressor:
    d = X.shape[1]
    kernel = (ConstantKernel(1.0, (1e-3, 1e3))
              * RBF(length_scale=np.full(d, 0.3), length_scale_bounds=(1e-2, 1e2))
              + WhiteKernel(1e-4, (1e-8, 1e0)))
    gp = GaussianProcessRegressor(kernel=kernel, normalize_y=True, n_restarts_optimizer=0,
                                  random_state=int(rng.integers(2**31 - 1)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gp.fit(X, y)
    return gp


def _propose(gp: GaussianProcessRegressor, best: float, d: int, rng: np.random.Generator,
             n_random: int = 1000, n_starts: int = 5, n_local: int = 200) -> np.ndarray:
    """Maximize EI over the unit cube: random candidates, then a batch of
    Gaussian perturbations around the best few."""
    cand = rng.random((n_random * max(1, d // 2), d))
    ei = expected_improvement(*gp.predict(cand, return_std=True), best)
    top = cand[np.argsort(-ei)[:n_starts]]
    for scale in (0.05, 0.01):
        local = np.clip(np.repeat(top, n_local // n_starts, axis=0)
                        + rng.normal(0.0, scale, (n_local // n_starts * len(top), d)), 0.0, 1.0)
        cand = np.vstack([cand, local])
        ei = np.concatenate([ei, expected_improvement(*gp.predict(local, return_std=True), best)])
        top = cand[np.argsort(-ei)[:n_starts]]
    i = int(np.argmax(ei))
    if not np.isfinite(ei[i]):
        raise SurrogateFailure("expected improvement is not finite")
    return cand[i]


def minimize(objective: Callable[[np.ndarray], float], bounds: Sequence[tuple[float, float]],
             n_trials: int = 20, n_initial: int = 5, seed: int = 0, method: str = "gp") -> OptimizeResult:
    """Minimize a noisy black-box ``objective`` over a box.

    Args:
        objective: maps a point (in original units) to a float.
        bounds: ``(low, high)`` per dimension.
        n_trials: total objective evaluations.
        n_initial: size of the Latin-hypercube initial design.
        seed: controls the design, surrogate restarts and acquisition search.
        method: ``"gp"`` or ``"random"``.

    Returns:
        The incumbent (lowest observed objective) and the full trial history.
    """
    if method not in ("gp", "random"):
        raise ValueError(f"unknown method {method!r}")
    if not 2 <= n_initial <= n_trials:
        raise ValueError("need 2 <= n_initial <= n_trials")
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    d = len(bounds)
    rng = np.random.default_rng(seed)
    U = list(qmc.LatinHypercube(d=d, seed=rng).random(n_initial))
    res = OptimizeResult(x=np.empty(d), y=np.inf)

    def evaluate(u: np.ndarray) -> None:
        x = lo + u * (hi - lo)
        y = float(objective(x))
        res.xs.append(x)
        res.ys.append(y)
        if y < res.y:
            res.x, res.y = x, y
        res.incumbents.append(res.y)

    for u in U:
        evaluate(u)
    use_gp = method == "gp"
    while len(res.ys) < n_trials:
        u = None
        if use_gp:
            try:
                Uarr = np.array(U)
                yarr = np.array(res.ys)
                if not np.all(np.isfinite(yarr)):
                    raise SurrogateFailure("non-finite objective values")
                gp = _fit_gp(Uarr, yarr, rng)
                u = _propose(gp, float(np.min(yarr)), d, rng)
            except (SurrogateFailure, np.linalg.LinAlgError, ValueError) as exc:
                log.warning("surrogate failed (%s); random search for remaining trials", exc)
                use_gp = False
                res.fallback_at = len(res.ys)
        if u is None:
            u = rng.random(d)
        U.append(u)
        evaluate(u)
    return res
