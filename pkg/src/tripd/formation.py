"""
Formation control benchmark: robots with first-order velocity lag move
from a polygon into an arrow while negotiating over a path graph.

Each robot ``i`` optimizes over ``z_i = (x_ii, x_ij for sorted neighbors
j, u_ii)`` where ``x_ij`` is its private estimate of neighbor ``j``'s state
trajectory. Edge constraints force the estimates to agree with the
neighbors' own trajectories. The module also provides the
dual-decomposition baseline with a subgradient multiplier update.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from tripd.core import LinearMap, Metric, SmoothTerm
from tripd.distributed import (
    AgentGraph,
    AgentSpec,
    EdgeConstraint,
    LiftedProblem,
    check_local_stepsizes,
    lift_to_global,
    run_distributed,
)
from tripd.prox import project_affine, prox_box, prox_conjugate
from tripd.trace import ConvergenceTrace

POS_BOX = (0.0, 20.0)
VEL_BOX = (0.0, 15.0)
INPUT_BOX = (0.0, 15.0)


# %% dynamics

@dataclass(frozen=True, eq=False)
class RobotModel:
    t_d: float
    dT: float
    X1: float
    X2: float
    X3: float
    Phi: np.ndarray
    Delta: np.ndarray


def build_dynamics(t_d: float = 5.0, dT: float = 1.0) -> RobotModel:
    """Exact discretization of ``p' = v``, ``v' = -v / t_d + u`` (per axis).

    State ``(p_x, p_y, v_x, v_y)``, input ``(u_x, u_y)``.
    """
    if t_d <= 0 or dT <= 0:
        raise ValueError("t_d and dT must be positive")
    e = math.exp(-dT / t_d)
    X1 = -t_d * math.expm1(-dT / t_d)
    X2 = e
    # t_d^2 (e - 1 + dT/t_d), written to avoid cancellation for small dT
    X3 = t_d**2 * (math.expm1(-dT / t_d) + dT / t_d)
    Phi = np.array([[1, 0, X1, 0], [0, 1, 0, X1], [0, 0, X2, 0], [0, 0, 0, X2]], dtype=float)
    Delta = np.array([[X3, 0], [0, X3], [X1, 0], [0, X1]], dtype=float)
    return RobotModel(t_d, dT, X1, X2, X3, Phi, Delta)


def continuous_rhs(t_d: float):
    """Right-hand side of the continuous model for a constant input."""

    def rhs(s, u):
        return np.array([s[2], s[3], -s[2] / t_d + u[0], -s[3] / t_d + u[1]])

    return rhs


def stacked_dynamics(model: RobotModel, N: int, x0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(A, B, b)`` with ``A x + B u = b`` encoding ``x(k+1) = Phi x(k) + Delta u(k)``.

    ``x = (x(1)..x(N))``, ``u = (u(0)..u(N-1))`` and ``b = (Phi x(0), 0, ..., 0)``.
    """
    A = np.eye(4 * N)
    B = np.zeros((4 * N, 2 * N))
    for k in range(N):
        B[4 * k: 4 * k + 4, 2 * k: 2 * k + 2] = -model.Delta
        if k > 0:
            A[4 * k: 4 * k + 4, 4 * (k - 1): 4 * k] = -model.Phi
    b = np.zeros(4 * N)
    b[:4] = model.Phi @ np.asarray(x0, dtype=float)
    return A, B, b


# %% problem

def polygon_positions(m: int, radius: float = 6.0, center=(10.0, 10.0)) -> np.ndarray:
    ang = 2 * np.pi * np.arange(m) / m + np.pi / 2
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def chevron_targets(m: int, spacing: float = 2.0, max_arm: float = 8.0) -> np.ndarray:
    """Arrow pointing in ``+x``: agent ``m // 2`` is the tip, the others trail
    diagonally behind it along two arms. Spacing shrinks if an arm would
    exceed ``max_arm`` metres.
    """
    c = m // 2
    arm = max(c, m - 1 - c)
    if arm * spacing > max_arm:
        spacing = max_arm / arm
    k = np.arange(m)
    off = (k - c) * spacing
    return np.column_stack([-np.abs(off), -off])


def path_edges(m: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(m - 1)]


@dataclass
class FormationProblem:
    """Parameters of the formation problem.

    ``q``, ``r`` and ``lam`` are per-agent scalars for ``Q_i = q_i I``,
    ``R_i = r_i I`` and the deviation weight. ``offsets[(i, j)]`` is the
    desired ``p_i - p_j`` (applied at every step of the horizon).
    """

    m: int
    N: int
    model: RobotModel
    q: np.ndarray
    r: np.ndarray
    lam: np.ndarray
    edges: list
    offsets: dict
    x0: np.ndarray
    kappa: float = 1.0
    pos_box: tuple = POS_BOX
    vel_box: tuple = VEL_BOX
    input_box: tuple = INPUT_BOX
    neighbors: list = field(init=False)

    def __post_init__(self):
        self.neighbors = [[] for _ in range(self.m)]
        for i, j in self.edges:
            if i == j or not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"bad edge ({i},{j})")
            self.neighbors[i].append(j)
            self.neighbors[j].append(i)
        for nb in self.neighbors:
            nb.sort()
        seen, stack = {0}, [0]
        while stack:
            a = stack.pop()
            for b in self.neighbors[a]:
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        if len(seen) != self.m:
            raise ValueError("neighbor structure is not connected")
        for i in range(self.m):
            for j in self.neighbors[i]:
                if np.shape(self.offsets[(i, j)]) != (2,):
                    raise ValueError(f"offset ({i},{j}) must be a 2-vector")

    def n_i(self, i: int) -> int:
        return 4 * self.N * (len(self.neighbors[i]) + 1) + 2 * self.N

    def beta(self, i: int) -> float:
        return max(self.q[i] ** 2 + self.lam[i] * (len(self.neighbors[i]) + 1), self.r[i] ** 2)

    def config_dict(self) -> dict:
        """Plain description used for content hashing."""
        return {
            "m": self.m, "N": self.N, "t_d": self.model.t_d, "dT": self.model.dT,
            "q": self.q, "r": self.r, "lam": self.lam, "edges": [list(e) for e in self.edges],
            "offsets": {f"{i},{j}": v for (i, j), v in sorted(self.offsets.items())},
            "x0": self.x0, "kappa": self.kappa,
            "boxes": [list(self.pos_box), list(self.vel_box), list(self.input_box)],
        }


def default_problem(m: int = 5, N: int = 3, t_d: float = 5.0, dT: float = 1.0) -> FormationProblem:
    """Polygon-to-arrow scenario with the reference cost constants.

    ``Q_i = 0.1 I``, ``lam_i = 10``, ``R_i = I`` for the first ``m // 2``
    agents and ``2 I`` for the rest; path graph; regular polygon of radius 6
    around (10, 10) at rest; chevron targets with 2 m spacing.
    """
    pos = polygon_positions(m)
    x0 = np.column_stack([pos, np.zeros((m, 2))])
    tgt = chevron_targets(m)
    edges = path_edges(m)
    offsets = {}
    for i, j in edges:
        offsets[(i, j)] = tgt[i] - tgt[j]
        offsets[(j, i)] = tgt[j] - tgt[i]
    r = np.where(np.arange(m) < m // 2, 1.0, 2.0)
    return FormationProblem(m, N, build_dynamics(t_d, dT), np.full(m, 0.1), r, np.full(m, 10.0), edges, offsets, x0)


@dataclass(frozen=True)
class AgentLayout:
    """Index slices of ``z_i``: own states, neighbor estimates, inputs."""

    n: int
    x_own: slice
    x_nb: dict
    u: slice


def agent_layout(fp: FormationProblem, i: int) -> AgentLayout:
    N = fp.N
    nb = fp.neighbors[i]
    x_nb = {j: slice(4 * N * (k + 1), 4 * N * (k + 2)) for k, j in enumerate(nb)}
    off = 4 * N * (len(nb) + 1)
    return AgentLayout(off + 2 * N, slice(0, 4 * N), x_nb, slice(off, off + 2 * N))


def _position_selector(N: int) -> np.ndarray:
    C = np.zeros((2 * N, 4 * N))
    for k in range(N):
        C[2 * k, 4 * k] = 1.0
        C[2 * k + 1, 4 * k + 1] = 1.0
    return C


def local_cost(fp: FormationProblem, i: int) -> tuple[np.ndarray, np.ndarray]:
    """``(H, c)`` with ``f_i(z) = 1/2 z^T H z - c^T z + const``."""
    lay = agent_layout(fp, i)
    N = fp.N
    C = _position_selector(N)
    H = np.zeros((lay.n, lay.n))
    c = np.zeros(lay.n)
    H[lay.x_own, lay.x_own] += fp.q[i] ** 2 * np.eye(4 * N)
    H[lay.u, lay.u] += fp.r[i] ** 2 * np.eye(2 * N)
    CtC = C.T @ C
    for j, sl in lay.x_nb.items():
        D = np.zeros((4 * N, lay.n))
        D[:, lay.x_own] = np.eye(4 * N)
        D[:, sl] = -np.eye(4 * N)
        H += fp.lam[i] * D.T @ CtC @ D
        d = np.tile(np.asarray(fp.offsets[(i, j)], dtype=float), N)
        c += fp.lam[i] * D.T @ C.T @ d
    return H, c


def local_cost_value(fp: FormationProblem, i: int, z) -> float:
    """Direct evaluation of ``f_i`` from its defining sums (test oracle)."""
    lay = agent_layout(fp, i)
    C = _position_selector(fp.N)
    z = np.asarray(z, dtype=float)
    val = 0.5 * np.sum((fp.q[i] * z[lay.x_own]) ** 2) + 0.5 * np.sum((fp.r[i] * z[lay.u]) ** 2)
    for j, sl in lay.x_nb.items():
        d = np.tile(np.asarray(fp.offsets[(i, j)], dtype=float), fp.N)
        val += 0.5 * fp.lam[i] * np.sum((C @ (z[lay.x_own] - z[sl]) - d) ** 2)
    return float(val)


def state_box(fp: FormationProblem) -> tuple[np.ndarray, np.ndarray]:
    lo = np.tile([fp.pos_box[0]] * 2 + [fp.vel_box[0]] * 2, fp.N)
    hi = np.tile([fp.pos_box[1]] * 2 + [fp.vel_box[1]] * 2, fp.N)
    return lo, hi


def input_box(fp: FormationProblem) -> tuple[np.ndarray, np.ndarray]:
    return np.full(2 * fp.N, fp.input_box[0]), np.full(2 * fp.N, fp.input_box[1])


def default_stepsizes(fp: FormationProblem) -> list[tuple[float, float, float]]:
    """Per agent ``(sigma_i, tau_i, kappa)`` with ``sigma_i = beta_i / 4`` and
    ``tau_i = 0.99 / (beta_i / 2 + sigma_i + sum_j kappa)``."""
    out = []
    for i in range(fp.m):
        b = fp.beta(i)
        s = b / 4.0
        t = 0.99 / (b / 2.0 + s + fp.kappa * len(fp.neighbors[i]))
        out.append((s, t, fp.kappa))
    return out


def edge_maps(fp: FormationProblem, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``A_ij`` (on ``z_i``) and ``A_ji`` (on ``z_j``) for the edge ``i < j``."""
    N = fp.N
    li, lj = agent_layout(fp, i), agent_layout(fp, j)
    Aij = np.zeros((8 * N, li.n))
    Aij[: 4 * N, li.x_own] = np.eye(4 * N)
    Aij[4 * N:, li.x_nb[j]] = -np.eye(4 * N)
    Aji = np.zeros((8 * N, lj.n))
    Aji[: 4 * N, lj.x_nb[i]] = -np.eye(4 * N)
    Aji[4 * N:, lj.x_own] = np.eye(4 * N)
    return Aij, Aji


def build_formation_problem(fp: FormationProblem, stepsizes: Optional[Sequence] = None) -> AgentGraph:
    """The formation problem as an :class:`AgentGraph`."""
    steps = default_stepsizes(fp) if stepsizes is None else list(stepsizes)
    N = fp.N
    slo, shi = state_box(fp)
    ilo, ihi = input_box(fp)
    agents = []
    for i in range(fp.m):
        lay = agent_layout(fp, i)
        A, B, b = stacked_dynamics(fp.model, N, fp.x0[i])
        E = np.zeros((4 * N, lay.n))
        E[:, lay.x_own] = A
        E[:, lay.u] = B
        Lm = np.zeros((6 * N, lay.n))
        Lm[: 4 * N, lay.x_own] = np.eye(4 * N)
        Lm[4 * N:, lay.u] = np.eye(2 * N)
        H, c = local_cost(fp, i)
        f = SmoothTerm(
            lay.n,
            (lambda H, c: lambda z: H @ z - c)(H, c),
            Metric.identity(lay.n),
            fp.beta(i),
            (lambda i: lambda z: local_cost_value(fp, i, z))(i),
            f"formation_cost{i}",
        )
        g = project_affine(E, b)
        h_conj = prox_conjugate(prox_box(np.concatenate([slo, ilo]), np.concatenate([shi, ihi])))
        sigma, tau, _ = steps[i]
        agents.append(AgentSpec(i, f, g, h_conj, LinearMap.from_matrix(Lm), sigma, tau))
    edges = []
    for i, j in sorted((min(e), max(e)) for e in fp.edges):
        Aij, Aji = edge_maps(fp, i, j)
        edges.append(EdgeConstraint(i, j, LinearMap.from_matrix(Aij), LinearMap.from_matrix(Aji), np.zeros(8 * N), fp.kappa))
    return AgentGraph(agents, edges)


def monitor_indices(fp: FormationProblem, lifted: LiftedProblem) -> np.ndarray:
    """Global stacked indices of ``v = (x_11, u_11, ..., x_mm, u_mm)``."""
    idx = []
    for i in range(fp.m):
        lay = agent_layout(fp, i)
        for sl in (lay.x_own, lay.u):
            idx.extend(lifted.cmap.global_index(i, "x", None, k) for k in range(sl.start, sl.stop))
    return np.array(idx, dtype=int)


def extract_v(fp: FormationProblem, zs: Sequence[np.ndarray]) -> np.ndarray:
    """``v`` from per-agent local vectors."""
    parts = []
    for i, z in enumerate(zs):
        lay = agent_layout(fp, i)
        parts += [z[lay.x_own], z[lay.u]]
    return np.concatenate(parts)


def positions(fp: FormationProblem, zs: Sequence[np.ndarray]) -> list[tuple[int, int, float, float]]:
    """Rows ``(agent, step, p_x, p_y)`` for steps ``0..N``."""
    rows = []
    for i, z in enumerate(zs):
        rows.append((i, 0, float(fp.x0[i][0]), float(fp.x0[i][1])))
        xs = z[agent_layout(fp, i).x_own].reshape(fp.N, 4)
        for k in range(fp.N):
            rows.append((i, k + 1, float(xs[k, 0]), float(xs[k, 1])))
    return rows


# %% dual decomposition baseline

@dataclass
class BaselineRun:
    trace: ConvergenceTrace
    multipliers: list
    z: list
    iterations: int
    transmissions: int
    stop_reason: str


InnerSolver = Callable[[np.ndarray], np.ndarray]


def dual_decomposition(
    graph: AgentGraph,
    inner: Sequence[InnerSolver],
    stepsize: Callable[[int], float] = lambda k: 10.0 / k,
    max_iters: int = 10_000,
    budget: Optional[int] = None,
    v_of: Optional[Callable[[list], np.ndarray]] = None,
    v_ref: Optional[np.ndarray] = None,
    tol: float = 0.0,
) -> BaselineRun:
    """Subgradient ascent on the edge multipliers.

    ``inner[i](c)`` must return ``argmin_z f_i(z) + g_i(z) + h_i(L_i z) + c^T z``.
    Each iteration solves the inner problems with ``c_i = sum_e A_(e,i)^T mu_e``,
    exchanges ``A_ij z_i`` over every edge (one message per direction) and
    then runs a second round of the same size, so it costs
    ``2 sum_i |N_i|`` transmissions. Multipliers move by
    ``stepsize(k) * (A_ij z_i + A_ji z_j - b)``. Without edges one
    iteration solves the problem exactly.
    """
    mus = [np.zeros(e.l) for e in graph.edges]
    per_iter = 2 * sum(graph.degree(i) for i in range(graph.m))
    trace = ConvergenceTrace(("iter", "transmissions", "dist_v", "max_edge_violation", "dual_step"))
    zs: list = []
    sent = 0
    reason = "max_iters"
    for k in range(1, max_iters + 1):
        zs = []
        for a in graph.agents:
            c = np.zeros(a.n)
            for ek in graph.incident(a.id):
                c += graph.edges[ek].A(a.id).adjoint(mus[ek])
            try:
                zs.append(np.asarray(inner[a.id](c), dtype=float))
            except Exception as exc:
                raise RuntimeError(f"inner solve failed for agent {a.id} at iteration {k}: {exc}") from exc
        sent += per_iter
        alpha = stepsize(k)
        viol = 0.0
        for ek, e in enumerate(graph.edges):
            res = e.A_ij.apply(zs[e.i]) + e.A_ji.apply(zs[e.j]) - e.b
            viol = max(viol, float(np.linalg.norm(res)))
            mus[ek] = mus[ek] + alpha * res
        dist = np.nan
        if v_of is not None and v_ref is not None:
            dist = float(np.linalg.norm(v_of(zs) - v_ref))
        trace.append(k, sent, dist, viol, alpha)
        if not graph.edges:
            reason = "no_coupling"
            break
        if dist <= tol:
            reason = "tol"
            break
        if budget is not None and sent >= budget:
            reason = "budget"
            break
    return BaselineRun(trace, mus, zs, len(trace), sent, reason)


def formation_inner_solvers(fp: FormationProblem, tol: float = 1e-8, max_iter: int = 200) -> list:
    """Per-agent inner QP solvers built with cvxpy (Clarabel backend).

    The estimates ``x_ij`` get the state box as well: it is redundant at
    the coupled optimum but keeps the inner problem bounded for every
    multiplier.
    """
    import cvxpy as cp

    slo, shi = state_box(fp)
    ilo, ihi = input_box(fp)
    solvers = []
    for i in range(fp.m):
        lay = agent_layout(fp, i)
        A, B, b = stacked_dynamics(fp.model, fp.N, fp.x0[i])
        H, c0 = local_cost(fp, i)
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        Hh = (V * np.sqrt(np.maximum(w, 0.0))).T
        z = cp.Variable(lay.n)
        cpar = cp.Parameter(lay.n)
        cons = [A @ z[lay.x_own] + B @ z[lay.u] == b, z[lay.u] >= ilo, z[lay.u] <= ihi,
                z[lay.x_own] >= slo, z[lay.x_own] <= shi]
        for sl in lay.x_nb.values():
            cons += [z[sl] >= slo, z[sl] <= shi]
        prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(Hh @ z) + (cpar - c0) @ z), cons)

        def solve(c, prob=prob, z=z, cpar=cpar):
            cpar.value = np.asarray(c, dtype=float)
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=max_iter)
            if z.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
                raise RuntimeError(f"inner QP status {prob.status}")
            return np.array(z.value)

        solvers.append(solve)
    return solvers


def dual_decomposition_baseline(fp: FormationProblem, graph: AgentGraph, stepsize=lambda k: 10.0 / k,
                                budget: Optional[int] = None, max_iters: int = 10_000,
                                v_ref: Optional[np.ndarray] = None, tol: float = 0.0) -> BaselineRun:
    """Dual decomposition on the formation problem, traced by ``||v - v*||``."""
    return dual_decomposition(graph, formation_inner_solvers(fp), stepsize, max_iters, budget,
                              lambda zs: extract_v(fp, zs), v_ref, tol)


# %% benchmark

@dataclass
class BenchmarkConfig:
    m: int = 5
    N: int = 3
    seed: int = 0
    modes: tuple = ("sync", "async", "baseline")
    p: float = 0.5
    budget: int = 50_000
    tol: float = 1e-8
    target: float = 1e-6
    ref_eps: float = 1e-12
    ref_max_iters: int = 2_000_000
    baseline_max_iters: int = 20_000
    out_dir: Optional[str] = None
    cache_dir: Optional[str] = None


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    traces: dict
    reference_certified: bool
    reference_residual: float
    reference_kkt: float
    v_ref: np.ndarray
    positions: list
    summary: dict


def first_hit(trace: ConvergenceTrace, col: str, level: float, key: str = "transmissions") -> Optional[int]:
    d = trace.column(col)
    idx = np.flatnonzero(d <= level)
    return None if idx.size == 0 else int(trace.column(key)[idx[0]])


def run_benchmark(cfg: BenchmarkConfig) -> BenchmarkReport:
    """Reference solution, TriPD-Dist sync/async runs and the baseline.

    Distances are ``||v - v*||`` against the reference computed on the
    lifted problem. Outputs go to ``cfg.out_dir`` when given:
    ``<mode>.csv`` per method, ``positions.csv`` and ``summary.txt``.
    """
    from tripd.diagnostics import content_hash, fit_linear_rate, format_summary, reference_solution

    fp = default_problem(cfg.m, cfg.N)
    graph = build_formation_problem(fp)
    verdicts = check_local_stepsizes(graph)
    lifted = lift_to_global(graph)
    ref = reference_solution(
        lifted.problem, lifted.sigma, lifted.gamma, eps=cfg.ref_eps, max_iters=cfg.ref_max_iters,
        cache_dir=cfg.cache_dir, cache_key=content_hash(fp.config_dict()),
    )
    mon = monitor_indices(fp, lifted)
    v_ref = ref.z.stacked()[mon]
    traces: dict = {}
    summary: dict = {
        "m": cfg.m, "N": cfg.N, "seed": cfg.seed,
        "local_stepsizes_ok": all(v.ok for v in verdicts),
        "reference_certified": ref.certified,
        "reference_residual_S": ref.residual,
        "reference_kkt": ref.kkt,
        "reference_iterations": ref.iterations,
    }
    for mode in cfg.modes:
        if mode in ("sync", "async"):
            run = run_distributed(graph, mode, cfg.budget, ref.z, cfg.tol, cfg.p, cfg.seed, monitor=mon, lifted=lifted)
            traces[mode] = run.trace
            summary[f"{mode}_rounds"] = run.rounds
            summary[f"{mode}_transmissions"] = run.transmissions
            summary[f"{mode}_final_dist_v"] = float(run.trace.last("dist_monitor"))
            summary[f"{mode}_transmissions_to_target"] = first_hit(run.trace, "dist_monitor", cfg.target)
            d = run.trace.column("dist_monitor")
            t = run.trace.column("transmissions")
            try:
                fit = fit_linear_rate(d, t)
                summary[f"{mode}_rate_r2"] = fit.r2
                summary[f"{mode}_rate_q_per_transmission"] = fit.q_factor
            except ValueError:
                summary[f"{mode}_rate_r2"] = float("nan")
    if "baseline" in cfg.modes:
        hit = summary.get("sync_transmissions_to_target")
        bbudget = max(hit if hit is not None else cfg.budget, 1)
        base = dual_decomposition_baseline(fp, graph, budget=bbudget, max_iters=cfg.baseline_max_iters, v_ref=v_ref)
        traces["baseline"] = base.trace
        summary["baseline_iterations"] = base.iterations
        summary["baseline_transmissions"] = base.transmissions
        summary["baseline_final_dist_v"] = float(base.trace.last("dist_v"))
    zs = [ref.z.x[lifted.cmap.x_off[i]: lifted.cmap.x_off[i] + agent_layout(fp, i).n] for i in range(fp.m)]
    pos = positions(fp, zs)
    if cfg.out_dir is not None:
        os.makedirs(cfg.out_dir, exist_ok=True)
        for name, tr in traces.items():
            tr.to_csv(os.path.join(cfg.out_dir, f"{name}.csv"))
        ConvergenceTrace.from_rows(("row", "agent", "step", "p_x", "p_y"),
                                   [(k,) + r for k, r in enumerate(pos)]).to_csv(os.path.join(cfg.out_dir, "positions.csv"))
        units = {
            "units_transmissions": "messages (one per neighbor per send)",
            "units_dist": "Euclidean norm of v - v* (m, m/s)",
            "units_positions": "m",
        }
        with open(os.path.join(cfg.out_dir, "summary.txt"), "w") as fh:
            fh.write(format_summary({**summary, **units}))
    return BenchmarkReport(cfg, traces, ref.certified, ref.residual, ref.kkt, v_ref, pos, summary)
