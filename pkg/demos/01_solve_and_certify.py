"""
Solve a small box-constrained problem with an l1 coupling term and check
the answer three ways: the Fejer certificate along the run, the KKT
residual at the end, and an independent cvxpy solve.

    minimize 1/2 ||A x - b||^2 + 0.3 ||D x||_1   subject to  -1 <= x <= 1

with ``D`` the first-difference operator.
"""

import numpy as np

from tripd import Metric, PrimalDualPoint, SolverConfig, solve, verify_stepsizes
from tripd.core import LinearMap, ProblemSpec, SmoothTerm
from tripd.diagnostics import fejer_check, fit_linear_rate, kkt_residual, reference_solution
from tripd.prox import prox_box, prox_linf_ball

rng = np.random.default_rng(0)
n = 12
A = rng.standard_normal((20, n))
b = rng.standard_normal(20)
D = np.diff(np.eye(n), axis=0)

problem = ProblemSpec(
    SmoothTerm.least_squares(A, b),
    prox_box(-np.ones(n), np.ones(n)),
    prox_linf_ball(n - 1, 0.3),  # prox of the conjugate of 0.3 ||.||_1
    LinearMap.from_matrix(D),
)

# Scalar steps: sigma = 1 and the largest gamma the condition allows, backed off 10%.
sigma = Metric.identity(n - 1)
gamma = Metric.scalar(0.9 / (problem.f.beta / 2 + np.linalg.norm(D, 2) ** 2), n)
check = verify_stepsizes(problem, sigma, gamma)
print(f"stepsize check ({check.method}): min eigenvalue {check.min_eig:.4g}, ok={check.ok}")

ref = reference_solution(problem, sigma, gamma, eps=1e-12)
print(f"reference: {ref.iterations} iterations, certified={ref.certified}")

run = solve(problem, SolverConfig(sigma, gamma, tol=1e-10, record_points=True, timing=False),
            z0=PrimalDualPoint.zeros(problem), reference=ref.z)
print(f"solve: {run.iterations} iterations, stop={run.stop_reason}, L applications={run.l_applies}")

fej = fejer_check(run.points, ref.z, run.metrics.S, run.metrics.twoPtilde_minus_S)
print(f"Fejer certificate: ok={fej.ok}, worst excess {fej.max_excess:.3g} (slack {fej.slack:.1g})")
print(f"KKT residual: {kkt_residual(run.z, problem):.3g}")

fit = fit_linear_rate(run.trace)
print(f"tail rate: Q-factor {fit.q_factor:.5f} per iteration, R^2 {fit.r2:.4f}")

try:
    import cvxpy as cp
except ImportError:
    cp = None
if cp is not None:
    x = cp.Variable(n)
    cp.Problem(cp.Minimize(0.5 * cp.sum_squares(A @ x - b) + 0.3 * cp.norm1(D @ x)), [x >= -1, x <= 1]).solve()
    print(f"max |x - x_cvxpy|: {np.max(np.abs(run.z.x - x.value)):.2e}")
