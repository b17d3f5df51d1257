"""
Certificates and measurements: weighted distances, Fejer monitors, KKT
residuals, linear-rate fits and high-accuracy reference solutions.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tripd.core import DimensionError, PrimalDualPoint, ProblemSpec, as_metric
from tripd.solver import SolverConfig, solve
from tripd.trace import ConvergenceTrace, fmt_float

__all__ = [
    "ConvergenceTrace",
    "FejerResult",
    "RateFit",
    "ReferenceResult",
    "content_hash",
    "fejer_check",
    "fit_linear_rate",
    "format_summary",
    "kkt_residual",
    "reference_solution",
    "weighted_distance",
]

FEJER_SLACK = 1e-9
RATE_NOISE_FLOOR = 1e-13


def _vec(z) -> np.ndarray:
    return z.stacked() if isinstance(z, PrimalDualPoint) else np.asarray(z, dtype=float).ravel()


def weighted_distance(z, ref, metric) -> float:
    """``||z - ref||_V`` for a metric ``V`` (a :class:`Metric` or array)."""
    a, b = _vec(z), _vec(ref)
    if a.shape != b.shape:
        raise DimensionError("points differ in dimension")
    V = as_metric(metric)
    if V.dim != a.size:
        raise DimensionError("metric dimension does not match the points")
    return V.norm(a - b)


# %% Fejer monitor

@dataclass(frozen=True)
class FejerResult:
    ok: bool
    first_violation: Optional[int]
    max_excess: float
    slack: float

    def __bool__(self):
        return self.ok


def fejer_check(points: Sequence, ref, S, twoPtilde_minus_S, slack: Optional[float] = None) -> FejerResult:
    """Check ``||z+ - z*||^2_S <= ||z - z*||^2_S - ||z+ - z||^2_{2Pt-S} + slack``.

    ``points`` are consecutive iterates of one run. The default slack is
    ``1e-9 * max(1, ||z0 - z*||^2_S)``. ``first_violation`` is the index
    ``k`` of the first failing transition ``z^k -> z^{k+1}``.
    """
    S, W = as_metric(S), as_metric(twoPtilde_minus_S)
    zs = [_vec(p) for p in points]
    r = _vec(ref)
    d = [S.norm_sq(z - r) for z in zs]
    if slack is None:
        slack = FEJER_SLACK * max(1.0, d[0] if d else 1.0)
    first, worst = None, -np.inf
    for k in range(len(zs) - 1):
        excess = d[k + 1] - d[k] + W.norm_sq(zs[k + 1] - zs[k])
        worst = max(worst, excess)
        if excess > slack and first is None:
            first = k
    return FejerResult(first is None, first, float(worst), float(slack))


# %% KKT residual

def kkt_residual(z: PrimalDualPoint, problem: ProblemSpec) -> float:
    """Unit-stepsize fixed-point residual of the optimality system.

    ``||(u - prox_{h*}(u + L x), x - prox_g(x - grad f(x) - L^T u))||``,
    which vanishes exactly on primal-dual solutions.
    """
    z.check_dims(problem)
    u, x = z.u, z.x
    ones_r, ones_n = np.ones(problem.r), np.ones(problem.n)
    ubar = problem.h_conj_prox(u + problem.L.apply(x), ones_r)
    xbar = problem.g_prox(x - problem.f.grad(x) - problem.L.adjoint(u), ones_n)
    return float(np.sqrt(np.sum((u - ubar) ** 2) + np.sum((x - xbar) ** 2)))


# %% rate fitting

SUBLINEAR_SLOPE_RATIO = 0.85


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log(dist)`` against the iteration counter.

    ``flagged`` is set when the window had to be truncated at the noise
    floor or when the slope over the second half of the window is less
    than ``SUBLINEAR_SLOPE_RATIO`` times the slope over the first half.
    Any power law ``k**-p`` gives a ratio near 0.71 on a window spanning
    a factor of two in ``k``, while a geometric tail gives 1.
    """

    k0: float
    k1: float
    slope: float
    r2: float
    q_factor: float
    n_points: int
    flagged: bool
    truncated: bool
    slope_ratio: float

    @property
    def linear(self) -> bool:
        return self.slope < 0 and not self.flagged


def _linfit(t, y):
    A = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - A @ coef) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return float(coef[0]), r2


def fit_linear_rate(dist, iters=None, tail_fraction: float = 0.5, floor: float = RATE_NOISE_FLOOR) -> RateFit:
    """Fit a linear rate to the tail of a distance sequence.

    Parameters
    ----------
    dist : array_like or ConvergenceTrace
        Distances; for a trace, the ``dist_S_to_ref`` column is used.
    iters : array_like, optional
        Abscissa (iteration or transmission counts); defaults to ``0..len-1``.
    tail_fraction : float
        Fraction of the sequence (counted from the end) used for the fit.
    floor : float
        Values at or below it are treated as converged noise and cut off.
    """
    if isinstance(dist, ConvergenceTrace):
        iters = dist.column(dist.columns[0]) if iters is None else iters
        dist = dist.column("dist_S_to_ref")
    d = np.asarray(dist, dtype=float)
    t = np.arange(d.size, dtype=float) if iters is None else np.asarray(iters, dtype=float)
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    truncated = False
    below = np.flatnonzero(~(d > floor))
    if below.size:
        d, t = d[: below[0]], t[: below[0]]
        truncated = True
    start = int(np.floor(d.size * (1.0 - tail_fraction)))
    d, t = d[start:], t[start:]
    if d.size < 10:
        raise ValueError(f"need at least 10 tail points above the noise floor, got {d.size}")
    y = np.log(d)
    slope, r2 = _linfit(t, y)
    h = d.size // 2
    s1, _ = _linfit(t[:h], y[:h])
    s2, _ = _linfit(t[h:], y[h:])
    ratio = s2 / s1 if s1 != 0 else np.nan
    sublinear = bool(slope < 0 and np.isfinite(ratio) and ratio < SUBLINEAR_SLOPE_RATIO)
    q = float(np.exp(slope))
    return RateFit(float(t[0]), float(t[-1]), slope, r2, q, int(d.size), truncated or sublinear, truncated, float(ratio))


# %% reference solutions

@dataclass
class ReferenceResult:
    z: PrimalDualPoint
    residual: float
    kkt: float
    iterations: int
    certified: bool
    from_cache: bool = False


def content_hash(obj) -> str:
    """SHA-256 of a canonical JSON rendering (numpy arrays become lists)."""

    def default(o):
        if isinstance(o, np.ndarray):
            return {"__array__": [fmt_float(v) for v in o.ravel()], "shape": list(o.shape)}
        if isinstance(o, (np.floating, np.integer)):
            return fmt_float(o)
        raise TypeError(f"cannot hash {type(o)}")

    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=default).encode()).hexdigest()


def reference_solution(
    problem: ProblemSpec,
    sigma,
    gamma,
    eps: float = 1e-12,
    max_iters: int = 10_000_000,
    z0: Optional[PrimalDualPoint] = None,
    cache_dir: Optional[str] = None,
    cache_key: Optional[str] = None,
    kkt_factor: float = 10.0,
) -> ReferenceResult:
    """High-accuracy solution by the full TriPD solver.

    Runs until ``||T z - z||_S <= eps``. A point counts as certified only
    when its KKT residual is also within ``kkt_factor * eps``; if not, the
    run continues with a tenfold tighter tolerance while budget remains.
    With ``cache_dir`` and ``cache_key`` (a content hash of the problem
    description chosen by the caller) results are stored as ``.npz`` files.
    """
    path = None
    if cache_dir is not None and cache_key is not None:
        key = content_hash({"key": cache_key, "eps": eps, "sigma": as_metric(sigma).diag(), "gamma": as_metric(gamma).diag()})
        path = os.path.join(cache_dir, f"ref-{key[:32]}.npz")
        if os.path.exists(path):
            data = np.load(path)
            z = PrimalDualPoint(data["u"], data["x"])
            return ReferenceResult(z, float(data["residual"]), float(data["kkt"]), int(data["iterations"]),
                                   bool(data["certified"]), True)
    z = z0
    tol = eps
    used = 0
    resid = np.inf
    kkt = np.inf
    certified = False
    while used < max_iters:
        cfg = SolverConfig(sigma, gamma, max_iters=max_iters - used, tol=tol, record_trace=False, timing=False)
        rep = solve(problem, cfg, z0=z)
        used += rep.iterations
        z, resid = rep.z, rep.residual
        kkt = kkt_residual(z, problem)
        if not rep.converged:
            break
        if kkt <= kkt_factor * eps or rep.iterations == 0 or tol < 1e-300:
            certified = kkt <= kkt_factor * eps
            break
        tol /= 10.0
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(path, u=z.u, x=z.x, residual=resid, kkt=kkt, iterations=used, certified=certified)
    return ReferenceResult(z, float(resid), float(kkt), used, certified)


# %% summaries

def format_summary(items: dict) -> str:
    """``key: value`` lines in insertion order; floats at 17 significant digits."""
    lines = []
    for k, v in items.items():
        if isinstance(v, (float, np.floating)):
            v = fmt_float(v)
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"
