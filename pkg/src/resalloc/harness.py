"""Replicated policy evaluation, t-tests, arrival-rate sweeps and CSV export.

Replication ``i`` always uses seed ``base_seed + i``. Two policies evaluated
with the same base seed therefore see the same arrival and service streams.
Results are indexed by seed, so any ``jobs`` count gives identical output.

CSV schemas
-----------
Long format (``export_long``), one row per replication::

    model,policy,lam,horizon,replication,seed,mean_cycle_time,n_completed,n_truncated,max_utilization

Summary format (``export_summary``), one row per report::

    model,policy,lam,n,horizon,base_seed,mean,ci_half_width,tied_best

Floats are written with ``repr``, so reading them back yields the same
values.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .model import ProcessModel
from .policies import make_policy
from .sim import DEFAULT_HORIZON, run_episode

LONG_HEADER = ["model", "policy", "lam", "horizon", "replication", "seed", "mean_cycle_time",
               "n_completed", "n_truncated", "max_utilization"]
SUMMARY_HEADER = ["model", "policy", "lam", "n", "horizon", "base_seed", "mean",
                  "ci_half_width", "tied_best"]
ALPHA = 0.05


class DegenerateVariance(RuntimeWarning):
    """Both samples are constant and equal; the t statistic is undefined."""


@dataclass
class Replication:
    seed: int
    mean_cycle_time: float
    n_completed: int
    n_truncated: int
    utilization: dict[str, float]


@dataclass
class EvalReport:
    policy: str
    model: str
    horizon: float
    base_seed: int
    replications: list[Replication]
    lam: float | None = None
    tied_best: bool | None = None

    def __post_init__(self):
        if len(self.replications) < 2:
            raise ValueError("an evaluation needs at least 2 replications")

    @property
    def n(self) -> int:
        return len(self.replications)

    @property
    def samples(self) -> np.ndarray:
        return np.array([r.mean_cycle_time for r in self.replications])

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def ci_half_width(self) -> float:
        """Half-width of the 95% Student-t interval over replication means."""
        x = self.samples
        sd = float(np.std(x, ddof=1))
        return float(sps.t.ppf(0.975, self.n - 1) * sd / math.sqrt(self.n))

    @property
    def utilization(self) -> dict[str, float]:
        """Per-resource utilization averaged over replications."""
        keys = self.replications[0].utilization.keys()
        return {r: float(np.mean([rep.utilization[r] for rep in self.replications])) for r in keys}


@dataclass
class Comparison:
    a: str
    b: str
    t: float
    p: float
    welch: bool = False

    @property
    def significant(self) -> bool:
        return self.p < ALPHA


# --------------------------------------------------------------------------- evaluation
def _policy_name(policy) -> str:
    if isinstance(policy, str):
        return policy
    return getattr(policy, "name", type(policy).__name__)


def _resolve(policy, model: ProcessModel):
    if isinstance(policy, str):
        return make_policy(policy, model)
    if hasattr(policy, "decide"):
        return policy
    if callable(policy):
        return policy(model)
    raise TypeError(f"not a policy: {policy!r}")


def _replicate(args) -> Replication:
    model, policy, horizon, seed = args
    st = run_episode(model, policy, horizon, seed)
    return Replication(seed, st.mean_cycle_time, st.n_completed, st.n_truncated, st.utilization)


def evaluate(model: ProcessModel, policy, n: int = 100, horizon: float = DEFAULT_HORIZON,
             base_seed: int = 0, jobs: int = 1, name: str | None = None,
             lam: float | None = None) -> EvalReport:
    """Run ``n`` seeded episodes of ``policy`` on ``model``.

    ``policy`` may be a spec string (see ``make_policy``), a policy object
    or a callable building one from the model. With ``jobs > 1`` the policy
    object is pickled into worker processes.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    pol = _resolve(policy, model)
    tasks = [(model, pol, horizon, base_seed + i) for i in range(n)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            reps = list(ex.map(_replicate, tasks, chunksize=max(1, n // (4 * jobs))))
    else:
        reps = [_replicate(t) for t in tasks]
    return EvalReport(name or _policy_name(policy), model.name, horizon, base_seed, reps, lam)


def compare(a: EvalReport, b: EvalReport, welch: bool = False) -> Comparison:
    """Two-sided two-sample t-test on replication means (pooled variance by
    default). Constant, equal samples give ``p = 1`` with a
    ``DegenerateVariance`` warning."""
    x, y = a.samples, b.samples
    if np.ptp(x) == 0 and np.ptp(y) == 0:
        if x[0] == y[0]:
            warnings.warn("both samples are constant and equal", DegenerateVariance, stacklevel=2)
            return Comparison(a.policy, b.policy, 0.0, 1.0, welch)
        t = math.copysign(math.inf, x[0] - y[0])
        return Comparison(a.policy, b.policy, t, 0.0, welch)
    res = sps.ttest_ind(x, y, equal_var=not welch)
    return Comparison(a.policy, b.policy, float(res.statistic), float(res.pvalue), welch)


def mark_tied_best(reports: Sequence[EvalReport], welch: bool = False) -> list[Comparison]:
    """Flag the best report (lowest mean) and every report whose p-value
    against it is at least 0.05. Returns the comparisons against the best."""
    if not reports:
        return []
    best = min(reports, key=lambda r: r.mean)
    comps = []
    for r in reports:
        if r is best:
            r.tied_best = True
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateVariance)
            c = compare(best, r, welch)
        r.tied_best = not c.significant
        comps.append(c)
    return comps


def sweep(family: Callable[[float], ProcessModel], lams: Iterable[float], policies: dict,
          n: int = 100, horizon: float = DEFAULT_HORIZON, base_seed: int = 0,
          jobs: int = 1) -> list[EvalReport]:
    """Evaluate every (rate, policy) cell.

    ``family(lam)`` builds the model at arrival rate ``lam``. ``policies``
    maps display names to anything ``evaluate`` accepts; a callable taking
    the model is invoked per rate, which is where per-rate training hooks in.
    Tied-best flags are set within each rate.
    """
    out = []
    for lam in lams:
        model = family(lam)
        cell = [evaluate(model, p, n, horizon, base_seed, jobs, name=name, lam=lam)
                for name, p in policies.items()]
        mark_tied_best(cell)
        out.extend(cell)
    return out


def sweep_values(spec: str) -> list[float]:
    """Parse ``start:stop:step`` (inclusive stop) into rounded rates."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"sweep must be start:stop:step, got {spec!r}")
    start, stop, step = map(float, parts)
    if step <= 0 or stop < start:
        raise ValueError(f"empty or invalid sweep {spec!r}")
    k = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + i * step, 10) for i in range(k + 1)]


# --------------------------------------------------------------------------- export
def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def export_long(reports: Sequence[EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_HEADER)
        for rep in reports:
            for i, r in enumerate(rep.replications):
                w.writerow([_fmt(v) for v in (rep.model, rep.policy, rep.lam, float(rep.horizon), i, r.seed,
                                               float(r.mean_cycle_time), r.n_completed,
                                               r.n_truncated, float(max(r.utilization.values(), default=0.0)))])


def export_summary(reports: Sequence[EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for rep in reports:
            w.writerow([_fmt(v) for v in (rep.model, rep.policy, rep.lam, rep.n, float(rep.horizon),
                                           rep.base_seed, rep.mean, rep.ci_half_width, rep.tied_best)])


def export_comparisons(comps: Sequence[Comparison], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "t", "p", "significant", "welch"])
        for c in comps:
            w.writerow([_fmt(v) for v in (c.a, c.b, float(c.t), float(c.p), c.significant, c.welch)])


def export(reports: Sequence[EvalReport], path, format: str = "long") -> None:
    if format == "long":
        export_long(reports, path)
    elif format == "summary":
        export_summary(reports, path)
    else:
        raise ValueError(f"unknown export format {format!r}")


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
