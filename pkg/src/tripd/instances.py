"""
Small problem generators used by tests, demos and the command line.

All generators are deterministic functions of their ``seed``.
"""

from __future__ import annotations

import numpy as np

from tripd.core import LinearMap, Metric, ProblemSpec, SmoothTerm
from tripd.distributed import AgentGraph, AgentSpec, EdgeConstraint
from tripd.prox import (
    prox_box,
    prox_box_support,
    prox_conjugate,
    prox_l1,
    prox_linf_ball,
    prox_point,
    prox_zero,
)


def qp_1d() -> ProblemSpec:
    """``min 1/2 (x - 2)^2`` over ``[0, 1]`` with a zero coupling term; ``x* = 1``."""
    f = SmoothTerm.quadratic([[1.0]], [2.0])
    return ProblemSpec(f, prox_box([0.0], [1.0]), prox_point(1), LinearMap.from_matrix([[1.0]]))


def random_plq(n: int, r: int, seed: int, diagonal_steps: bool = False, margin: float = 0.95):
    """Random PLQ instance with admissible stepsizes.

    ``f = 1/2 ||A x - b||^2``, ``g = w ||x||_1`` or a box, ``h`` a box
    indicator or an l1 norm (through its conjugate). Returns
    ``(problem, sigma, gamma)`` with ``sigma``, ``gamma`` diagonal.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n + 2, n)) / np.sqrt(n)
    f = SmoothTerm.least_squares(A, rng.standard_normal(n + 2))
    if rng.random() < 0.5:
        g = prox_l1(n, rng.uniform(0.05, 0.5))
    else:
        g = prox_box(-rng.uniform(0.2, 2.0, n), rng.uniform(0.2, 2.0, n))
    L = LinearMap.from_matrix(rng.standard_normal((r, n)) / np.sqrt(n))
    if rng.random() < 0.5:
        h_conj = prox_box_support(-rng.uniform(0.1, 1.0, r), rng.uniform(0.1, 1.0, r))
    else:
        h_conj = prox_linf_ball(r, rng.uniform(0.1, 1.0))
    problem = ProblemSpec(f, g, h_conj, L)
    sig = rng.uniform(0.5, 2.0, r) if diagonal_steps else np.ones(r)
    Ld = L.to_dense()
    lnorm2 = float(np.linalg.norm(np.sqrt(sig)[:, None] * Ld, 2) ** 2) if r else 0.0
    gam = np.full(n, margin / (0.5 * f.beta + lnorm2))
    return problem, Metric.diagonal(sig), Metric.diagonal(gam)


def consensus_pair(a1: float, a2: float, sigma: float = 1.0, tau: float = 0.4, kappa: float = 1.0) -> AgentGraph:
    """Two agents with ``f_i = 1/2 (x_i - a_i)^2`` and ``x_1 = x_2``."""
    agents = []
    for i, a in enumerate((a1, a2)):
        f = SmoothTerm.quadratic([[1.0]], [a])
        agents.append(AgentSpec(i, f, prox_zero(1), prox_point(0), LinearMap.zeros(0, 1), sigma, tau))
    e = EdgeConstraint(0, 1, LinearMap.identity(1), LinearMap.from_matrix([[-1.0]]), [0.0], kappa)
    return AgentGraph(agents, [e])


def random_graph(m: int, seed: int, extra_edge_prob: float = 0.3) -> AgentGraph:
    """Connected random graph of small random agents with admissible local stepsizes.

    A random spanning tree plus extra edges; each agent has a least-squares
    cost, an l1 or box ``g`` and a box-indicator ``h``; edges carry random
    ``A_ij``, ``A_ji`` and ``b``.
    """
    from tripd.distributed import local_stepsize_bound, LocalEdge

    rng = np.random.default_rng(seed)
    ns = rng.integers(1, 4, m)
    rs = rng.integers(0, 3, m)
    pairs = set()
    order = rng.permutation(m)
    for k in range(1, m):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        pairs.add((min(a, b), max(a, b)))
    for a in range(m):
        for b in range(a + 1, m):
            if rng.random() < extra_edge_prob:
                pairs.add((a, b))
    edges = []
    for i, j in sorted(pairs):
        l = int(rng.integers(1, min(ns[i], ns[j]) + 1))
        edges.append(EdgeConstraint(
            i, j,
            LinearMap.from_matrix(rng.standard_normal((l, ns[i]))),
            LinearMap.from_matrix(rng.standard_normal((l, ns[j]))),
            rng.standard_normal(l), float(rng.uniform(0.5, 2.0)),
        ))
    agents = []
    for i in range(m):
        n, r = int(ns[i]), int(rs[i])
        A = rng.standard_normal((n + 1, n))
        f = SmoothTerm.least_squares(A, rng.standard_normal(n + 1))
        g = prox_l1(n, 0.1) if rng.random() < 0.5 else prox_box(-np.ones(n), np.ones(n))
        h_conj = prox_conjugate(prox_box(-np.ones(r), np.ones(r))) if r else prox_zero(0)
        L = LinearMap.from_matrix(rng.standard_normal((r, n))) if r else LinearMap.zeros(0, n)
        sigma = float(rng.uniform(0.5, 2.0))
        probe = AgentSpec(i, f, g, h_conj, L, sigma, 1.0)
        local = [LocalEdge(k, e.other(i), e.A(i), e.b, e.kappa) for k, e in enumerate(edges) if i in (e.i, e.j)]
        tau = 0.9 * local_stepsize_bound(probe, local)
        agents.append(AgentSpec(i, f, g, h_conj, L, sigma, tau))
    return AgentGraph(agents, edges)

