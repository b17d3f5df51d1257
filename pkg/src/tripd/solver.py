"""
The TriPD fixed-point operator, relaxed iterations, the Vu-Condat operator
and the driver loop with stepsize verification.

One TriPD evaluation at ``z = (u, x)`` with metrics ``Sigma``, ``Gamma``:

    ubar = prox_{h*}^{Sigma^-1}(u + Sigma L x)
    x+   = prox_g^{Gamma^-1}(x - Gamma grad f(x) - Gamma L^T ubar)
    u+   = ubar + Sigma L (x+ - x)

``L x`` is carried between iterations so that each evaluation costs one
forward and one adjoint application of ``L``.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from tripd.core import (
    CountingMap,
    DerivedMetrics,
    LinearMap,
    Metric,
    PrimalDualPoint,
    ProblemSpec,
    SmoothTerm,
    as_metric,
    assemble_metrics,
    is_spd,
    operator_norm,
)
from tripd.trace import ConvergenceTrace

DENSE_CHECK_MAX_DIM = 2000
LANCZOS_MAXITER = 200
LANCZOS_TOL = 1e-8
LANCZOS_MARGIN = 1.01
DIVERGENCE_NORM = 1e12

TRACE_COLUMNS = ("iter", "resid_S", "dist_S_to_ref", "L_applies", "elapsed_ns")


class DivergenceError(RuntimeError):
    """The iterate left the finite range or exceeded the divergence bound."""


class StepsizeError(ValueError):
    """Stepsizes violate the convergence condition."""

    def __init__(self, verdict: "StepsizeVerdict"):
        super().__init__(verdict.message)
        self.verdict = verdict


class ProxEvaluationError(RuntimeError):
    """A prox oracle raised; carries the iteration at which it happened."""


@dataclass(frozen=True)
class StepsizeVerdict:
    """Outcome of a stepsize check.

    ``witness`` is a unit direction of nonpositive curvature of the checked
    matrix when the condition is violated, ``None`` otherwise.
    """

    ok: bool
    min_eig: float
    method: str
    witness: Optional[np.ndarray] = None
    message: str = ""

    def __bool__(self):
        return self.ok


# %% stepsize verification

def _min_eig_dense(M: np.ndarray) -> tuple[float, np.ndarray]:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return float(w[0]), V[:, 0]


def _stepsize_operator(problem: ProblemSpec, sigma: Metric, gamma: Metric) -> spla.LinearOperator:
    n = problem.n
    beta, Q, L = problem.f.beta, problem.f.Q, problem.L

    def mv(v):
        v = np.asarray(v, dtype=float).ravel()
        return gamma.solve(v) - 0.5 * beta * Q.matvec(v) - L.adjoint(sigma.matvec(L.apply(v)))

    return spla.LinearOperator((n, n), matvec=mv, dtype=float)


def stepsize_matrix(problem: ProblemSpec, sigma, gamma) -> np.ndarray:
    """Dense ``Gamma^-1 - (beta_f/2) Q - L^T Sigma L``."""
    sigma, gamma = as_metric(sigma), as_metric(gamma)
    Ld = problem.L.to_dense()
    return (
        gamma.inv().to_dense()
        - 0.5 * problem.f.beta * problem.f.Q.to_dense()
        - Ld.T @ sigma.to_dense() @ Ld
    )


def verify_stepsizes(problem: ProblemSpec, sigma, gamma, method: str = "auto") -> StepsizeVerdict:
    """Check ``Gamma^-1 - (beta_f/2) Q - L^T Sigma L`` is positive definite.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense when
    ``n + r <= 2000``). The Lanczos path is matrix free: the condition is
    accepted when the smallest Ritz value, reduced by 1.01 times its
    residual norm, stays above ``1e-12`` times the largest one.
    """
    sigma, gamma = as_metric(sigma), as_metric(gamma)
    if sigma.dim != problem.r or gamma.dim != problem.n:
        from tripd.core import DimensionError

        raise DimensionError("stepsize metrics do not match the problem dimensions")
    if problem.n == 0:
        return StepsizeVerdict(True, np.inf, "dense")
    if method == "auto":
        method = "dense" if problem.n + problem.r <= DENSE_CHECK_MAX_DIM else "lanczos"
    if method == "dense":
        M = stepsize_matrix(problem, sigma, gamma)
        ok = is_spd(0.5 * (M + M.T))
        lam, v = _min_eig_dense(M)
        msg = "" if ok else (
            f"stepsize condition violated: Gamma^-1 - (beta_f/2)Q - L^T Sigma L has eigenvalue {lam:.6g} <= 0"
        )
        return StepsizeVerdict(ok, lam, "dense", None if ok else v, msg)
    op = _stepsize_operator(problem, sigma, gamma)
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(problem.n)
    lo_vals, lo_vecs = spla.eigsh(op, k=1, which="SA", maxiter=LANCZOS_MAXITER * problem.n, tol=LANCZOS_TOL, v0=v0)
    hi_vals = spla.eigsh(op, k=1, which="LA", maxiter=LANCZOS_MAXITER * problem.n, tol=LANCZOS_TOL, v0=v0,
                         return_eigenvectors=False)
    theta, v = float(lo_vals[0]), lo_vecs[:, 0]
    res = float(np.linalg.norm(op.matvec(v) - theta * v))
    ok = theta - LANCZOS_MARGIN * res > 1e-12 * abs(float(hi_vals[0]))
    msg = "" if ok else f"stepsize condition violated (Lanczos): smallest Ritz value {theta:.6g}"
    return StepsizeVerdict(ok, theta, "lanczos", None if ok else v, msg)


def scalar_stepsize_bound(problem: ProblemSpec, sigma: float) -> float:
    """Largest admissible scalar ``gamma`` for ``Q = I``: ``1 / (beta_f/2 + sigma ||L||^2)``."""
    nrm = operator_norm(problem.L)
    return 1.0 / (0.5 * problem.f.beta + sigma * nrm**2)


# %% the TriPD operator

class TriPDOperator:
    """Evaluates the TriPD map with a carried ``L x``.

    Parameters
    ----------
    problem : ProblemSpec
    dm : DerivedMetrics
        Supplies ``Sigma`` and ``Gamma``; only diagonal metrics reach the prox
        oracles as per-coordinate stepsizes (dense metrics are allowed for
        metric-free proxes only).
    """

    def __init__(self, problem: ProblemSpec, dm: DerivedMetrics):
        self.problem = problem
        self.dm = dm
        self.sigma = dm.sigma
        self.gamma = dm.gamma
        self._sig_step = dm.sigma.diag() if dm.sigma.is_diagonal else dm.sigma.to_dense()
        self._gam_step = dm.gamma.diag() if dm.gamma.is_diagonal else dm.gamma.to_dense()

    def evaluate(self, u, x, Lx):
        """Return ``(u+, x+, L x+, ubar)``.

        The forward application of ``L`` is skipped only when the point is
        a fixed point to the last bit (``x+ == x`` and ``ubar == u``).
        """
        p = self.problem
        ubar = p.h_conj_prox(u + self.sigma.matvec(Lx), self._sig_step)
        x_new = p.g_prox(x - self.gamma.matvec(p.f.grad(x) + p.L.adjoint(ubar)), self._gam_step)
        if np.array_equal(x_new, x) and np.array_equal(ubar, u):
            return ubar, x_new, Lx, ubar
        Lx_new = p.L.apply(x_new)
        u_new = ubar + self.sigma.matvec(Lx_new - Lx)
        return u_new, x_new, Lx_new, ubar


def tripd_step(z: PrimalDualPoint, problem: ProblemSpec, dm: DerivedMetrics) -> PrimalDualPoint:
    """One TriPD iteration ``z+ = T z``."""
    z.check_dims(problem)
    u, x, _, _ = TriPDOperator(problem, dm).evaluate(z.u, z.x, problem.L.apply(z.x))
    return PrimalDualPoint(u, x)


def _relaxation_vector(lam, dim: int) -> Optional[np.ndarray]:
    """Diagonal of the relaxation matrix, or ``None`` for the identity."""
    if lam is None:
        return None
    if isinstance(lam, Metric):
        if not lam.is_diagonal:
            raise ValueError("relaxation must be diagonal")
        vec = lam.diag()
    else:
        vec = np.broadcast_to(np.asarray(lam, dtype=float), (dim,)).copy()
    if vec.shape != (dim,):
        raise ValueError("relaxation has the wrong dimension")
    if np.any(vec <= 0) or np.any(vec >= 2):
        raise ValueError("relaxation entries must lie in (0, 2)")
    if np.all(vec == 1.0):
        return None
    return vec


def relaxed_step(z: PrimalDualPoint, problem: ProblemSpec, dm: DerivedMetrics, lam=None) -> PrimalDualPoint:
    """``z+ = z + Lambda (T z - z)`` with diagonal ``0 < Lambda < 2I``.

    ``Lambda = I`` (or ``None``) returns :func:`tripd_step` unchanged.
    """
    vec = _relaxation_vector(lam, problem.r + problem.n)
    tz = tripd_step(z, problem, dm)
    if vec is None:
        return tz
    zs = z.stacked()
    return PrimalDualPoint.from_stacked(zs + vec * (tz.stacked() - zs), problem.r)


# %% Vu-Condat

def vu_condat_step(
    z: PrimalDualPoint,
    problem: ProblemSpec,
    sigma,
    gamma,
    lam: float = 1.0,
    l_term: Optional[SmoothTerm] = None,
) -> PrimalDualPoint:
    """One relaxed Vu-Condat iteration.

    ``l_term`` is the smooth term acting on the duals (the gradient of the
    conjugate of ``l``); leave it out when ``l`` is an indicator of zero.
    """
    if not 0 < lam < 2:
        raise ValueError("lambda must lie in (0, 2)")
    sigma, gamma = as_metric(sigma), as_metric(gamma)
    z.check_dims(problem)
    sstep = sigma.diag() if sigma.is_diagonal else sigma.to_dense()
    gstep = gamma.diag() if gamma.is_diagonal else gamma.to_dense()
    u, x = z.u, z.x
    v = u + sigma.matvec(problem.L.apply(x))
    if l_term is not None:
        v = v - sigma.matvec(l_term.grad(u))
    ubar = problem.h_conj_prox(v, sstep)
    xbar = problem.g_prox(x - gamma.matvec(problem.f.grad(x) + problem.L.adjoint(2.0 * ubar - u)), gstep)
    if lam == 1.0:
        return PrimalDualPoint(ubar, xbar)
    return PrimalDualPoint(u + lam * (ubar - u), x + lam * (xbar - x))


def verify_vu_condat_stepsizes(sigma, gamma, lam, beta_f, Q, beta_l, G, L) -> StepsizeVerdict:
    """Sufficient Fejer condition for the relaxed Vu-Condat iteration.

    With ``c = 1 / (2 (2 - lam))`` both ``A = Sigma^-1 - c beta_l G`` and
    ``Gamma^-1 - c beta_f Q - L^T A^-1 L`` must be positive definite.
    """
    if not 0 < lam < 2:
        raise ValueError("lambda must lie in (0, 2)")
    sigma, gamma = as_metric(sigma), as_metric(gamma)
    Q, G = as_metric(Q), as_metric(G)
    Ld = L.to_dense() if isinstance(L, LinearMap) else np.atleast_2d(np.asarray(L, dtype=float))
    c = 1.0 / (2.0 * (2.0 - lam))
    A = sigma.inv().to_dense() - c * beta_l * G.to_dense()
    if not is_spd(0.5 * (A + A.T)):
        lam_min, v = _min_eig_dense(A)
        return StepsizeVerdict(False, lam_min, "dense", None, "Sigma^-1 - c beta_l G is not positive definite")
    M = gamma.inv().to_dense() - c * beta_f * Q.to_dense() - Ld.T @ np.linalg.solve(A, Ld)
    M = 0.5 * (M + M.T)
    ok = is_spd(M)
    lam_min, v = _min_eig_dense(M)
    return StepsizeVerdict(ok, lam_min, "dense", None if ok else v, "" if ok else "primal Schur complement not positive definite")


def verify_vu_condat_competing(mu: float, nu: float, lam: float, G, Q, L) -> StepsizeVerdict:
    """Averagedness-based condition for ``Gamma = mu Q^-1``, ``Sigma = nu G^-1``.

    Requires ``lam`` in ``(0, 1]`` and ``delta / (1 + delta) > max(mu, nu) / 2``
    with ``delta = ||G^-1/2 L Q^-1/2||^-1 / sqrt(nu mu) - 1``.
    """
    import scipy.linalg as sla

    if mu <= 0 or nu <= 0:
        raise ValueError("mu and nu must be positive")
    Ld = L.to_dense() if isinstance(L, LinearMap) else np.atleast_2d(np.asarray(L, dtype=float))
    Gh = sla.fractional_matrix_power(as_metric(G).to_dense(), -0.5).real
    Qh = sla.fractional_matrix_power(as_metric(Q).to_dense(), -0.5).real
    nrm = float(np.linalg.norm(Gh @ Ld @ Qh, 2))
    delta = np.inf if nrm == 0 else 1.0 / (np.sqrt(nu * mu) * nrm) - 1.0
    margin = (1.0 if np.isinf(delta) else delta / (1.0 + delta)) - max(mu, nu) / 2.0
    ok = bool(0 < lam <= 1 and margin > 0)
    return StepsizeVerdict(ok, float(margin), "closed_form", None, "" if ok else "competing condition violated")


def vu_condat_thresholds(mu: float = 1.5, lam: float = 1.0, tol: float = 1e-12) -> tuple[float, float]:
    """Largest admissible ``nu`` under both Vu-Condat conditions.

    Uses the normalized example ``G^-1/2 L Q^-1/2 = I`` (1x1), ``beta_f =
    beta_l = 1``, ``Gamma = mu Q^-1`` and ``Sigma = nu G^-1``; each threshold
    is located by bisection on the corresponding checker.
    """
    one = np.ones((1, 1))

    def ours(nu):
        return verify_vu_condat_stepsizes(nu * one, mu * one, lam, 1.0, one, 1.0, one, one).ok

    def theirs(nu):
        return verify_vu_condat_competing(mu, nu, lam, one, one, one).ok

    return bisect_threshold(ours, tol), bisect_threshold(theirs, tol)


def bisect_threshold(pred, tol: float = 1e-12, hi: float = 1.0) -> float:
    """Supremum of ``{t > 0 : pred(t)}`` for a predicate true on ``(0, t*)``."""
    lo = 0.0
    while pred(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            return np.inf
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# %% driver

@dataclass
class SolverConfig:
    """Stepsizes, relaxation and termination settings.

    ``relaxation`` is ``None`` (identity), a scalar, a vector over the
    stacked ``(u, x)`` coordinates or a diagonal :class:`Metric`, with
    entries in ``(0, 2)``.
    """

    sigma: object
    gamma: object
    relaxation: object = None
    max_iters: int = 10_000
    tol: float = 1e-10
    record_trace: bool = True
    record_points: bool = False
    timing: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class SolveReport:
    z: PrimalDualPoint
    iterations: int
    stop_reason: str
    residual: float
    trace: Optional[ConvergenceTrace] = None
    points: list = field(default_factory=list)
    l_applies: int = 0
    l_adjoints: int = 0
    metrics: Optional[DerivedMetrics] = None

    @property
    def converged(self) -> bool:
        return "tol" in self.stop_reason


def check_divergence(z: PrimalDualPoint, k: int):
    if not z.is_finite():
        raise DivergenceError(f"non-finite iterate at iteration {k}")
    nrm = float(np.sqrt(z.u @ z.u + z.x @ z.x))
    if nrm > DIVERGENCE_NORM:
        raise DivergenceError(f"iterate norm {nrm:.3e} exceeds {DIVERGENCE_NORM:.0e} at iteration {k}")


def stop_reason(resid: float, tol: float, k: int, max_iters: int) -> Optional[str]:
    hit_tol, hit_max = resid <= tol, k >= max_iters
    if hit_tol and hit_max:
        return "tol+max_iters"
    if hit_tol:
        return "tol"
    if hit_max:
        return "max_iters"
    return None


def solve(
    problem: ProblemSpec,
    config: SolverConfig,
    reference: Optional[PrimalDualPoint] = None,
    z0: Optional[PrimalDualPoint] = None,
    verify: bool = True,
) -> SolveReport:
    """Iterate TriPD until ``||T z - z||_S <= tol`` or ``max_iters``.

    The residual of iteration ``k`` is measured at the point the step
    starts from, and the returned point is the last accepted iterate. A
    point that the operator maps to itself bit for bit ends the run without
    counting an iteration. Raises :class:`StepsizeError` when the stepsize
    check fails and :class:`DivergenceError` on blow-up.
    """
    dm = assemble_metrics(problem, config.sigma, config.gamma)
    if verify:
        verdict = verify_stepsizes(problem, dm.sigma, dm.gamma)
        if not verdict.ok:
            raise StepsizeError(verdict)
    L = CountingMap(problem.L)
    prob = dataclasses.replace(problem, L=L)
    op = TriPDOperator(prob, dm)
    relax = _relaxation_vector(config.relaxation, problem.r + problem.n)
    relax_scalar = None
    if relax is not None and np.all(relax[problem.r:] == relax[problem.r]):
        relax_scalar = float(relax[problem.r])

    z = PrimalDualPoint.zeros(problem) if z0 is None else z0
    z.check_dims(problem)
    u, x = z.u.copy(), z.x.copy()
    Lx = L.apply(x)
    S = dm.S
    trace = ConvergenceTrace(TRACE_COLUMNS) if config.record_trace else None
    points = [PrimalDualPoint(u, x)] if config.record_points else []
    ref_stacked = None if reference is None else reference.stacked()
    t0 = time.perf_counter_ns()
    k, resid, reason = 0, np.inf, None

    while reason is None:
        if k >= config.max_iters:
            reason = "max_iters"
            break
        try:
            u_t, x_t, Lx_t, _ = op.evaluate(u, x, Lx)
        except Exception as exc:
            raise ProxEvaluationError(f"prox evaluation failed at iteration {k + 1}: {exc}") from exc
        du, dx = u_t - u, x_t - x
        if not (np.any(du) or np.any(dx)):
            resid = 0.0
            reason = "tol"
            break
        resid = float(np.sqrt(S.block("dual").norm_sq(du) + S.block("primal").norm_sq(dx)))
        if relax is None:
            u, x, Lx = u_t, x_t, Lx_t
        else:
            lu, lx = relax[: problem.r], relax[problem.r:]
            u = u + lu * du
            if relax_scalar is not None:
                x = x + relax_scalar * dx
                Lx = (1.0 - relax_scalar) * Lx + relax_scalar * Lx_t
            else:
                x = x + lx * dx
                Lx = L.apply(x)
        k += 1
        zk = PrimalDualPoint(u, x)
        check_divergence(zk, k)
        if config.record_points:
            points.append(zk)
        if trace is not None:
            dist = np.nan if ref_stacked is None else S.norm(zk.stacked() - ref_stacked)
            elapsed = time.perf_counter_ns() - t0 if config.timing else 0
            trace.append(k, resid, dist, L.n_apply, elapsed)
        reason = stop_reason(resid, config.tol, k, config.max_iters)

    return SolveReport(PrimalDualPoint(u, x), k, reason, resid, trace, points, L.n_apply, L.n_adjoint, dm)
