import numpy as np
import pytest

from tripd.diagnostics import kkt_residual, reference_solution
from tripd.distributed import AgentGraph, check_local_stepsizes, lift_to_global
from tripd.formation import (
    INPUT_BOX,
    FormationProblem,
    agent_layout,
    build_dynamics,
    build_formation_problem,
    chevron_targets,
    continuous_rhs,
    default_problem,
    default_stepsizes,
    dual_decomposition,
    dual_decomposition_baseline,
    local_cost,
    local_cost_value,
    monitor_indices,
    polygon_positions,
    positions,
    stacked_dynamics,
    state_box,
)
from tripd.instances import consensus_pair


# %% dynamics

def test_dynamics_constants():
    mdl = build_dynamics(5.0, 1.0)
    assert mdl.X2 == pytest.approx(0.818731, abs=5e-7)
    assert mdl.X1 == pytest.approx(0.906346, abs=5e-7)
    assert mdl.X3 == pytest.approx(0.468269, abs=5e-7)
    np.testing.assert_array_equal(mdl.Phi[:2, 2:], mdl.X1 * np.eye(2))
    np.testing.assert_array_equal(mdl.Delta[:2], mdl.X3 * np.eye(2))


def test_dynamics_small_step_limits():
    mdl = build_dynamics(5.0, 1e-9)
    assert abs(mdl.X1) < 1e-8
    assert abs(mdl.X2 - 1.0) < 1e-8
    assert 0.0 <= mdl.X3 < 1e-8


@pytest.mark.parametrize("t_d, dT", [(0.0, 1.0), (5.0, -1.0)])
def test_dynamics_rejects_nonpositive(t_d, dT):
    with pytest.raises(ValueError):
        build_dynamics(t_d, dT)


def rk4(rhs, s, u, T, steps):
    h = T / steps
    for _ in range(steps):
        k1 = rhs(s, u)
        k2 = rhs(s + h / 2 * k1, u)
        k3 = rhs(s + h / 2 * k2, u)
        k4 = rhs(s + h * k3, u)
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s


@pytest.mark.parametrize("seed", range(3))
def test_discretization_matches_ode(seed):
    rng = np.random.default_rng(seed)
    mdl = build_dynamics(5.0, 1.0)
    s = rng.uniform(0, 10, 4)
    u = rng.uniform(0, 15, 2)
    exact = rk4(continuous_rhs(5.0), s, u, 1.0, 2000)
    np.testing.assert_allclose(mdl.Phi @ s + mdl.Delta @ u, exact, atol=1e-6)


def test_stacked_dynamics_forward_simulation():
    mdl = build_dynamics()
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0, 5, 4)
    us = rng.uniform(0, 2, (3, 2))
    xs, x = [], x0
    for u in us:
        x = mdl.Phi @ x + mdl.Delta @ u
        xs.append(x)
    A, B, b = stacked_dynamics(mdl, 3, x0)
    np.testing.assert_allclose(A @ np.concatenate(xs) + B @ us.ravel(), b, atol=1e-12)


# %% geometry and constants

def test_polygon_and_chevron():
    pos = polygon_positions(5)
    np.testing.assert_allclose(np.linalg.norm(pos - [10.0, 10.0], axis=1), 6.0)
    tgt = chevron_targets(5)
    assert np.argmax(tgt[:, 0]) == 2
    np.testing.assert_allclose(tgt[:, 1], -tgt[::-1, 1])
    np.testing.assert_allclose(np.linalg.norm(np.diff(tgt, axis=0), axis=1), 2.0 * np.sqrt(2))
    big = chevron_targets(50)
    assert np.max(np.abs(big)) <= 8.0 + 1e-12


def test_default_constants_and_stepsizes():
    fp = default_problem()
    assert [fp.n_i(i) for i in range(5)] == [4 * 3 * (d + 1) + 2 * 3 for d in (1, 2, 2, 2, 1)]
    assert fp.beta(1) == pytest.approx(30.01)
    sigma, tau, kappa = default_stepsizes(fp)[1]
    assert fp.r[1] == 1.0
    assert sigma == pytest.approx(7.5025)
    assert tau == pytest.approx(0.99 / 24.5075)
    assert kappa == 1.0
    assert all(v.ok for v in check_local_stepsizes(build_formation_problem(fp)))


def test_kappa_scaling_shrinks_tau():
    fp = default_problem()
    fp2 = default_problem()
    fp2.kappa = 2.0
    for (_, t1, _), (_, t2, _) in zip(default_stepsizes(fp), default_stepsizes(fp2)):
        assert t2 < t1


def test_disconnected_structure_rejected():
    fp = default_problem(3, 1)
    with pytest.raises(ValueError):
        FormationProblem(3, 1, fp.model, fp.q, fp.r, fp.lam, [(0, 1)], {(0, 1): np.zeros(2), (1, 0): np.zeros(2)}, fp.x0)


# %% costs

@pytest.mark.parametrize("i", range(3))
def test_local_cost_matches_direct_sum(i):
    fp = default_problem(3, 2)
    H, c = local_cost(fp, i)
    rng = np.random.default_rng(i)
    z0 = np.zeros(fp.n_i(i))
    const = local_cost_value(fp, i, z0)
    for _ in range(5):
        z = rng.standard_normal(fp.n_i(i))
        assert 0.5 * z @ H @ z - c @ z + const == pytest.approx(local_cost_value(fp, i, z), rel=1e-12)


def test_gradient_lipschitz_bound():
    fp = default_problem(5, 3)
    graph = build_formation_problem(fp)
    rng = np.random.default_rng(0)
    for i, a in enumerate(graph.agents):
        for _ in range(100):
            x, y = rng.standard_normal((2, a.n)) * 5
            assert np.linalg.norm(a.f.grad(x) - a.f.grad(y)) <= fp.beta(i) * np.linalg.norm(x - y) * (1 + 1e-12)


def test_gradient_matches_finite_differences():
    fp = default_problem(3, 2)
    a = build_formation_problem(fp).agents[1]
    rng = np.random.default_rng(2)
    x = rng.standard_normal(a.n)
    h = 1e-6
    fd = np.array([(a.f.value(x + h * e) - a.f.value(x - h * e)) / (2 * h) for e in np.eye(a.n)])
    g = a.f.grad(x)
    assert np.linalg.norm(fd - g) <= 1e-6 * max(1.0, np.linalg.norm(g))


# %% built problem

def feasible_local_point(fp, i, rng):
    lay = agent_layout(fp, i)
    z = np.zeros(lay.n)
    x = fp.x0[i]
    us = rng.uniform(0, 0.5, (fp.N, 2))
    xs = []
    for u in us:
        x = fp.model.Phi @ x + fp.model.Delta @ u
        xs.append(x)
    z[lay.x_own] = np.concatenate(xs)
    z[lay.u] = us.ravel()
    return z


def test_feasible_trajectory_has_zero_violation():
    fp = default_problem(3, 2)
    graph = build_formation_problem(fp)
    rng = np.random.default_rng(4)
    lo, hi = state_box(fp)
    for i, a in enumerate(graph.agents):
        z = feasible_local_point(fp, i, rng)
        np.testing.assert_allclose(a.g_prox(z, np.ones(a.n)), z, atol=1e-10)
        lay = agent_layout(fp, i)
        assert np.all((z[lay.x_own] >= lo) & (z[lay.x_own] <= hi))
        assert np.all((z[lay.u] >= INPUT_BOX[0]) & (z[lay.u] <= INPUT_BOX[1]))
        # prox of the box support at a point inside the box is zero
        Lz = a.L.apply(z)
        assert np.allclose(a.h_conj_prox(Lz, np.ones(a.L.out_dim)), 0.0, atol=1e-12)


def test_edge_maps_encode_estimate_agreement():
    fp = default_problem(3, 1)
    graph = build_formation_problem(fp)
    rng = np.random.default_rng(5)
    zs = [feasible_local_point(fp, i, rng) for i in range(3)]
    for e in graph.edges:
        li, lj = agent_layout(fp, e.i), agent_layout(fp, e.j)
        zs[e.i][li.x_nb[e.j]] = zs[e.j][lj.x_own]
        zs[e.j][lj.x_nb[e.i]] = zs[e.i][li.x_own]
    for e in graph.edges:
        np.testing.assert_allclose(e.A_ij.apply(zs[e.i]) + e.A_ji.apply(zs[e.j]), e.b, atol=1e-14)


def solve_formation(fp, eps=1e-11):
    graph = build_formation_problem(fp)
    lifted = lift_to_global(graph)
    ref = reference_solution(lifted.problem, lifted.sigma, lifted.gamma, eps=eps, max_iters=2_000_000)
    zs = [ref.z.x[lifted.cmap.x_off[i]: lifted.cmap.x_off[i] + agent_layout(fp, i).n] for i in range(fp.m)]
    return ref, lifted, zs


def test_two_robot_pure_consensus():
    fp = default_problem(2, 1)
    fp.q[:] = 0.0
    fp.r[:] = 0.0
    fp.lam[:] = 1.0
    fp.offsets = {(0, 1): np.zeros(2), (1, 0): np.zeros(2)}
    fp.x0 = np.array([[1.0, 1.0, 0.0, 0.0], [2.0, 3.0, 0.0, 0.0]])
    ref, _, zs = solve_formation(fp)
    assert ref.certified
    p = {(a, k): (x, y) for a, k, x, y in positions(fp, zs)}
    np.testing.assert_allclose(p[(0, 1)], p[(1, 1)], atol=1e-6)


def central_qp(fp):
    import cvxpy as cp

    zs = [cp.Variable(fp.n_i(i)) for i in range(fp.m)]
    slo, shi = state_box(fp)
    cons, obj = [], 0
    for i in range(fp.m):
        lay = agent_layout(fp, i)
        A, B, b = stacked_dynamics(fp.model, fp.N, fp.x0[i])
        H, c = local_cost(fp, i)
        w, V = np.linalg.eigh(H)
        R = (V * np.sqrt(np.maximum(w, 0))).T
        obj += 0.5 * cp.sum_squares(R @ zs[i]) - c @ zs[i] + local_cost_value(fp, i, np.zeros(fp.n_i(i)))
        cons += [A @ zs[i][lay.x_own] + B @ zs[i][lay.u] == b,
                 zs[i][lay.x_own] >= slo, zs[i][lay.x_own] <= shi,
                 zs[i][lay.u] >= INPUT_BOX[0], zs[i][lay.u] <= INPUT_BOX[1]]
        for j, sl in lay.x_nb.items():
            cons.append(zs[i][sl] == zs[j][agent_layout(fp, j).x_own])
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value, [z.value for z in zs]


def test_reference_matches_central_qp_solver():
    fp = default_problem(3, 2)
    ref, lifted, zs = solve_formation(fp)
    assert ref.certified
    val, zc = central_qp(fp)
    ours = sum(local_cost_value(fp, i, z) for i, z in enumerate(zs))
    assert ours == pytest.approx(val, rel=1e-6, abs=1e-6)
    for i in range(fp.m):
        lay = agent_layout(fp, i)
        np.testing.assert_allclose(zs[i][lay.x_own], zc[i][lay.x_own], atol=1e-4)


def test_optimality_and_arrow_geometry_at_reference():
    fp = default_problem(5, 3)
    ref, lifted, zs = solve_formation(fp)
    assert kkt_residual(ref.z, lifted.problem) <= 1e-6
    rows = positions(fp, zs)
    xy = np.array([[x, y] for _, _, x, y in rows])
    assert np.all((xy >= -1e-8) & (xy <= 20 + 1e-8))
    tgt = chevron_targets(5)

    def arrow_error(step):
        p = np.array([[x, y] for a, k, x, y in rows if k == step])
        rel = p - p.mean(axis=0)
        want = tgt - tgt.mean(axis=0)
        return np.linalg.norm(rel - want)

    errs = [arrow_error(k) for k in range(fp.N + 1)]
    assert errs[-1] < errs[0]
    for i in range(fp.m):
        lay = agent_layout(fp, i)
        for sl in (lay.x_own, lay.u):
            assert np.all(zs[i][sl] >= -1e-8)
    assert monitor_indices(fp, lifted).size == fp.m * 6 * fp.N


# %% dual decomposition

def quad_inner(graph):
    """``argmin 1/2 x^2 - a x + c x`` for the scalar consensus agents."""
    return [(lambda a: lambda c: -(a.f.grad(np.zeros(1)) + c))(a) for a in graph.agents]


def test_baseline_toy_multiplier():
    a1, a2 = 1.0, 4.0
    graph = consensus_pair(a1, a2)
    run = dual_decomposition(graph, quad_inner(graph), max_iters=3000)
    assert run.multipliers[0][0] == pytest.approx((a1 - a2) / 2, abs=1e-3)
    np.testing.assert_allclose([run.z[0][0], run.z[1][0]], [2.5, 2.5], atol=1e-3)
    assert run.transmissions == 3000 * 2 * 2


def test_baseline_without_edges_stops_after_one_iteration():
    graph = consensus_pair(1.0, 4.0)
    lone = AgentGraph(graph.agents[:1], [])
    run = dual_decomposition(lone, quad_inner(lone), max_iters=100)
    assert run.iterations == 1 and run.stop_reason == "no_coupling"
    assert run.z[0][0] == pytest.approx(1.0)


def test_baseline_inner_failure_has_context():
    graph = consensus_pair(1.0, 4.0)

    def broken(c):
        raise ArithmeticError("boom")

    with pytest.raises(RuntimeError, match="agent 0 at iteration 1"):
        dual_decomposition(graph, [broken, broken], max_iters=3)


def test_baseline_violation_decreases_on_formation():
    fp = default_problem(3, 2)
    graph = build_formation_problem(fp)
    run = dual_decomposition_baseline(fp, graph, max_iters=120)
    viol = run.trace.column("max_edge_violation")
    assert np.all(np.isfinite(viol))
    assert viol[-30:].mean() < viol[:30].mean()
    np.testing.assert_array_equal(np.diff(run.trace.column("transmissions")), 2 * 2 * len(graph.edges))
