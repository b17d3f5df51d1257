"""
Multi-agent problems over an undirected graph and a deterministic
message-passing simulator for the distributed TriPD iteration.

Agent ``i`` holds a private ``x_i``, a dual ``y_i`` for its own ``L_i`` and
one edge dual ``w_(e),i`` per incident edge. Neighbors only ever exchange
``(A_ij x_i, w_(e),i)``. Each edge ``e = (i, j)`` couples the two agents by
``A_ij x_i + A_ji x_j = b_e``.

The same problem can be lifted to a single :class:`ProblemSpec` whose dual
vector stacks ``y_1..y_m`` followed, per edge, by ``w_(e),i`` and
``w_(e),j``. One synchronous round of the simulator is one TriPD step on
the lifted problem; an asynchronous round is one block-coordinate step
with one block per agent.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from tripd.block import ActivationScheme, BlockPartition, probability_matrix, sample_activation
from tripd.core import (
    DimensionError,
    LinearMap,
    Metric,
    PrimalDualPoint,
    ProblemSpec,
    SmoothTerm,
)
from tripd.prox import ProxFunction, prox_conjugate, prox_pair_sum, prox_separable
from tripd.solver import DIVERGENCE_NORM, DivergenceError
from tripd.trace import ConvergenceTrace

BETA_FLOOR = 1e-12
DIST_COLUMNS = ("round", "transmissions", "dist_euclid", "dist_S", "dist_PiInvS", "max_edge_violation")


# %% model

@dataclass(frozen=True, eq=False)
class AgentSpec:
    """Local data of one agent.

    ``h_conj_prox`` is the prox of ``h_i*``; it is called with stepsize
    ``sigma``. ``f`` carries ``beta_i`` and ``Q_i``.
    """

    id: int
    f: SmoothTerm
    g_prox: ProxFunction
    h_conj_prox: ProxFunction
    L: LinearMap
    sigma: float
    tau: float

    def __post_init__(self):
        if self.sigma <= 0 or self.tau <= 0:
            raise ValueError(f"agent {self.id}: stepsizes must be positive")
        if self.f.dim != self.L.in_dim or self.g_prox.dim != self.L.in_dim:
            raise DimensionError(f"agent {self.id}: f, g and L disagree on n_i")
        if self.h_conj_prox.dim != self.L.out_dim:
            raise DimensionError(f"agent {self.id}: h* does not live on the range of L_i")

    @property
    def n(self) -> int:
        return self.L.in_dim

    @property
    def r(self) -> int:
        return self.L.out_dim


@dataclass(frozen=True, eq=False)
class EdgeConstraint:
    """``A_ij x_i + A_ji x_j = b`` with edge stepsize ``kappa``."""

    i: int
    j: int
    A_ij: LinearMap
    A_ji: LinearMap
    b: np.ndarray
    kappa: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "b", np.array(self.b, dtype=float).ravel())
        if self.i == self.j:
            raise ValueError("self-loops are not allowed")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.A_ij.out_dim != self.b.size or self.A_ji.out_dim != self.b.size:
            raise DimensionError(f"edge ({self.i},{self.j}): maps and b disagree on l")

    @property
    def l(self) -> int:
        return self.b.size

    def A(self, agent: int) -> LinearMap:
        """The map applied to ``agent``'s variable."""
        return self.A_ij if agent == self.i else self.A_ji

    def other(self, agent: int) -> int:
        return self.j if agent == self.i else self.i


@dataclass(frozen=True)
class LocalEdge:
    """What agent ``i`` knows about an incident edge: its own map only."""

    edge: int
    neighbor: int
    A: LinearMap
    b: np.ndarray
    kappa: float


class AgentGraph:
    """Agents ``0..m-1`` and undirected edge constraints between them."""

    def __init__(self, agents: Sequence[AgentSpec], edges: Sequence[EdgeConstraint], require_connected: bool = True):
        self.agents = list(agents)
        self.edges = list(edges)
        m = len(self.agents)
        if [a.id for a in self.agents] != list(range(m)):
            raise ValueError("agent ids must be 0..m-1 in order")
        pairs = set()
        self._nbrs: list[list[tuple[int, int]]] = [[] for _ in range(m)]
        for k, e in enumerate(self.edges):
            if not (0 <= e.i < m and 0 <= e.j < m):
                raise ValueError(f"edge ({e.i},{e.j}) references an unknown agent")
            key = (min(e.i, e.j), max(e.i, e.j))
            if key in pairs:
                raise ValueError(f"duplicate edge {key}")
            pairs.add(key)
            if e.A_ij.in_dim != self.agents[e.i].n or e.A_ji.in_dim != self.agents[e.j].n:
                raise DimensionError(f"edge ({e.i},{e.j}) maps do not match agent dimensions")
            self._nbrs[e.i].append((e.j, k))
            self._nbrs[e.j].append((e.i, k))
        for lst in self._nbrs:
            lst.sort()
        if require_connected and m > 1 and not self.is_connected():
            raise ValueError("graph is not connected")

    @property
    def m(self) -> int:
        return len(self.agents)

    def neighbors(self, i: int) -> list[int]:
        return [j for j, _ in self._nbrs[i]]

    def incident(self, i: int) -> list[int]:
        """Edge indices at agent ``i``, ordered by neighbor id."""
        return [k for _, k in self._nbrs[i]]

    def degree(self, i: int) -> int:
        return len(self._nbrs[i])

    def local_edges(self, i: int) -> list[LocalEdge]:
        return [LocalEdge(k, j, self.edges[k].A(i), self.edges[k].b, self.edges[k].kappa) for j, k in self._nbrs[i]]

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            a = stack.pop()
            for b in self.neighbors(a):
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        return len(seen) == self.m

    def edge_violation(self, xs: Sequence[np.ndarray]) -> float:
        """``max_e ||A_ij x_i + A_ji x_j - b_e||``."""
        worst = 0.0
        for e in self.edges:
            worst = max(worst, float(np.linalg.norm(e.A_ij.apply(xs[e.i]) + e.A_ji.apply(xs[e.j]) - e.b)))
        return worst


# %% stepsizes

@dataclass(frozen=True)
class LocalVerdict:
    agent: int
    ok: bool
    tau: float
    bound: float


def local_stepsize_bound(agent: AgentSpec, edges: Sequence[LocalEdge]) -> float:
    """``1 / (beta_i ||Q_i|| / 2 + ||sigma_i L_i^T L_i + sum_j kappa A_ij^T A_ij||)``."""
    Ld = agent.L.to_dense()
    M = agent.sigma * Ld.T @ Ld
    for e in edges:
        Ad = e.A.to_dense()
        M = M + e.kappa * Ad.T @ Ad
    nrm = float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T)))) if M.size else 0.0
    denom = 0.5 * agent.f.beta * agent.f.Q.opnorm() + nrm
    return np.inf if denom == 0 else 1.0 / denom


def check_local_stepsizes(graph: AgentGraph) -> list[LocalVerdict]:
    """Per-agent verdicts, each computed from that agent's data only."""
    out = []
    for a in graph.agents:
        bound = local_stepsize_bound(a, graph.local_edges(a.id))
        out.append(LocalVerdict(a.id, bool(a.tau < bound), a.tau, bound))
    return out


# %% state and messages

@dataclass(frozen=True)
class Message:
    """``(A_ij x_i, w_(e),i)`` sent by agent ``i`` over edge ``e``."""

    Ax: np.ndarray
    w: np.ndarray


@dataclass
class AgentState:
    x: np.ndarray
    y: np.ndarray
    w: dict  # edge index -> own edge dual
    inbox: dict = field(default_factory=dict)  # edge index -> latest Message from the neighbor


class TransmissionLedger:
    """Counts neighbor-directed messages. ``initial`` holds the round-0 broadcast."""

    def __init__(self, m: int):
        self.per_agent = np.zeros(m, dtype=np.int64)
        self.initial = 0

    @property
    def total(self) -> int:
        return int(self.per_agent.sum())

    def record(self, agent: int, count: int):
        if count < 0:
            raise ValueError("negative transmission count")
        self.per_agent[agent] += count


@dataclass
class GraphState:
    agents: list
    ledger: TransmissionLedger
    round: int = 0

    def copy(self) -> "GraphState":
        return copy.deepcopy(self)


def _outgoing(agent: int, edges: Sequence[LocalEdge], st: AgentState) -> dict:
    return {e.edge: (e.neighbor, Message(e.A.apply(st.x), st.w[e.edge].copy())) for e in edges}


def init_state(graph: AgentGraph, x0=None, y0=None, w0=None, count_broadcast: bool = True) -> GraphState:
    """Initial states (zeros by default) followed by the round-0 broadcast."""
    sts = []
    for a in graph.agents:
        x = np.zeros(a.n) if x0 is None else np.array(x0[a.id], dtype=float)
        y = np.zeros(a.r) if y0 is None else np.array(y0[a.id], dtype=float)
        w = {}
        for e in graph.local_edges(a.id):
            w[e.edge] = np.zeros(e.b.size) if w0 is None else np.array(w0[(e.edge, a.id)], dtype=float)
        sts.append(AgentState(x, y, w))
    ledger = TransmissionLedger(graph.m)
    state = GraphState(sts, ledger)
    for a in graph.agents:
        for k, (j, msg) in _outgoing(a.id, graph.local_edges(a.id), sts[a.id]).items():
            sts[j].inbox[k] = msg
        if count_broadcast:
            ledger.record(a.id, graph.degree(a.id))
    ledger.initial = ledger.total
    return state


def agent_update(agent: AgentSpec, edges: Sequence[LocalEdge], st: AgentState) -> AgentState:
    """One local iteration of agent ``i`` from its own state and inbox.

    Returns the new local state (inbox left untouched).
    """
    x, y = st.x, st.y
    wbar = {}
    coupling = np.zeros(agent.n)
    for e in edges:
        msg = st.inbox[e.edge]
        wb = 0.5 * (st.w[e.edge] + msg.w) + 0.5 * e.kappa * (e.A.apply(x) + msg.Ax - e.b)
        wbar[e.edge] = wb
        coupling += e.A.adjoint(wb)
    try:
        Lx = agent.L.apply(x)
        ybar = agent.h_conj_prox(y + agent.sigma * Lx, agent.sigma)
        grad = agent.f.grad(x)
        x_new = agent.g_prox(x - agent.tau * (agent.L.adjoint(ybar) + coupling + grad), agent.tau)
    except Exception as exc:
        raise RuntimeError(f"agent {agent.id}: local prox evaluation failed: {exc}") from exc
    dx = x_new - x
    y_new = ybar + agent.sigma * agent.L.apply(dx)
    w_new = {e.edge: wbar[e.edge] + e.kappa * e.A.apply(dx) for e in edges}
    return AgentState(x_new, y_new, w_new, st.inbox)


def async_round(graph: AgentGraph, state: GraphState, eps) -> GraphState:
    """Active agents (``eps_i = 1``) update and transmit; the rest idle.

    Every read uses the pre-round state, and messages are delivered after
    all active agents have computed, so the result does not depend on the
    order in which agents are evaluated.
    """
    eps = np.asarray(eps)
    if eps.shape != (graph.m,):
        raise DimensionError("one activation flag per agent required")
    new = state.copy()
    outbox = []
    for a in graph.agents:
        if not eps[a.id]:
            continue
        edges = graph.local_edges(a.id)
        st = agent_update(a, edges, state.agents[a.id])
        new.agents[a.id] = AgentState(st.x, st.y, st.w, new.agents[a.id].inbox)
        outbox.append((a.id, _outgoing(a.id, edges, st)))
    for sender, msgs in outbox:
        for k, (j, msg) in msgs.items():
            new.agents[j].inbox[k] = msg
        new.ledger.record(sender, len(msgs))
    new.round = state.round + 1
    return new


def sync_round(graph: AgentGraph, state: GraphState) -> GraphState:
    """Every agent updates and transmits once."""
    return async_round(graph, state, np.ones(graph.m, dtype=np.int8))


# %% lifting

@dataclass(frozen=True, eq=False)
class CoordinateMap:
    """Bijection between global stacked ``(u, x)`` indices and agent-local slots.

    Local slots are ``(agent, kind, key, k)`` with ``kind`` in ``{"y", "w",
    "x"}``; ``key`` is the edge index for ``"w"`` and ``None`` otherwise.
    """

    r: int
    n: int
    y_off: tuple
    w_off: dict
    x_off: tuple
    slots: tuple

    def global_index(self, agent: int, kind: str, key, k: int) -> int:
        if kind == "y":
            return self.y_off[agent] + k
        if kind == "w":
            return self.w_off[(key, agent)] + k
        if kind == "x":
            return self.r + self.x_off[agent] + k
        raise KeyError(kind)

    def local_slot(self, g: int) -> tuple:
        return self.slots[g]


@dataclass(frozen=True, eq=False)
class LiftedProblem:
    problem: ProblemSpec
    partition: BlockPartition
    sigma: Metric
    gamma: Metric
    cmap: CoordinateMap
    graph: AgentGraph

    def to_global(self, state: GraphState) -> PrimalDualPoint:
        return state_to_global(self, state)

    def from_global(self, z: PrimalDualPoint) -> GraphState:
        return global_to_state(self, z)


def lift_to_global(graph: AgentGraph) -> LiftedProblem:
    """Build the single structured problem equivalent to the agent network."""
    m = graph.m
    y_off, off = [], 0
    for a in graph.agents:
        y_off.append(off)
        off += a.r
    w_off = {}
    for k, e in enumerate(graph.edges):
        w_off[(k, e.i)] = off
        off += e.l
        w_off[(k, e.j)] = off
        off += e.l
    r = off
    x_off, off = [], 0
    for a in graph.agents:
        x_off.append(off)
        off += a.n
    n = off

    slots = [None] * (r + n)
    for a in graph.agents:
        for k in range(a.r):
            slots[y_off[a.id] + k] = (a.id, "y", None, k)
        for k in range(a.n):
            slots[r + x_off[a.id] + k] = (a.id, "x", None, k)
    for (ek, ag), o in w_off.items():
        for k in range(graph.edges[ek].l):
            slots[o + k] = (ag, "w", ek, k)
    cmap = CoordinateMap(r, n, tuple(y_off), dict(w_off), tuple(x_off), tuple(slots))

    # L = (L_1 .. L_m ; N) as a sparse matrix
    rows, cols, vals = [], [], []

    def put(M, r0, c0):
        M = M.to_dense()
        ii, jj = np.nonzero(M)
        rows.append(ii + r0)
        cols.append(jj + c0)
        vals.append(M[ii, jj])

    for a in graph.agents:
        put(a.L, y_off[a.id], x_off[a.id])
    for k, e in enumerate(graph.edges):
        put(e.A_ij, w_off[(k, e.i)], x_off[e.i])
        put(e.A_ji, w_off[(k, e.j)], x_off[e.j])
    cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dtype=dt)
    Lmat = sp.csr_matrix((cat(vals, float), (cat(rows, int), cat(cols, int))), shape=(r, n))
    L = LinearMap.from_matrix(Lmat)

    def grad(x):
        return np.concatenate([a.f.grad(x[x_off[a.id]: x_off[a.id] + a.n]) for a in graph.agents]) if m else x

    value = None
    if all(a.f.value is not None for a in graph.agents):
        def value(x):
            return float(sum(a.f.value(x[x_off[a.id]: x_off[a.id] + a.n]) for a in graph.agents))

    Qblocks = [a.f.Q.scaled(max(a.f.beta, BETA_FLOOR)) for a in graph.agents]
    f = SmoothTerm(n, grad, Metric.blockdiag(Qblocks, [f"agent{a.id}" for a in graph.agents]), 1.0, value, "lifted")
    g = prox_separable([(np.arange(x_off[a.id], x_off[a.id] + a.n), a.g_prox) for a in graph.agents], n)
    hblocks = [(np.arange(y_off[a.id], y_off[a.id] + a.r), a.h_conj_prox) for a in graph.agents]
    for k, e in enumerate(graph.edges):
        idx = np.concatenate([np.arange(w_off[(k, e.i)], w_off[(k, e.i)] + e.l), np.arange(w_off[(k, e.j)], w_off[(k, e.j)] + e.l)])
        hblocks.append((idx, prox_conjugate(prox_pair_sum(e.b))))
    h = prox_separable([(i, p) for i, p in hblocks if i.size], r)
    problem = ProblemSpec(f, g, h, L)

    sig = np.empty(r)
    for a in graph.agents:
        sig[y_off[a.id]: y_off[a.id] + a.r] = a.sigma
    for k, e in enumerate(graph.edges):
        for ag in (e.i, e.j):
            sig[w_off[(k, ag)]: w_off[(k, ag)] + e.l] = e.kappa
    tau = np.concatenate([np.full(a.n, a.tau) for a in graph.agents]) if m else np.zeros(0)

    labels = np.array([s[0] for s in slots], dtype=int)
    partition = BlockPartition(r + n, tuple(np.flatnonzero(labels == a.id) for a in graph.agents))
    return LiftedProblem(problem, partition, Metric.diagonal(sig), Metric.diagonal(tau), cmap, graph)


def state_to_global(lifted: LiftedProblem, state: GraphState) -> PrimalDualPoint:
    c = lifted.cmap
    u = np.empty(c.r)
    x = np.empty(c.n)
    for a in lifted.graph.agents:
        st = state.agents[a.id]
        u[c.y_off[a.id]: c.y_off[a.id] + a.r] = st.y
        x[c.x_off[a.id]: c.x_off[a.id] + a.n] = st.x
        for k, w in st.w.items():
            u[c.w_off[(k, a.id)]: c.w_off[(k, a.id)] + w.size] = w
    return PrimalDualPoint(u, x)


def global_to_state(lifted: LiftedProblem, z: PrimalDualPoint) -> GraphState:
    """Agent states holding ``z``, with inboxes consistent with it (not counted)."""
    c, g = lifted.cmap, lifted.graph
    xs = [z.x[c.x_off[a.id]: c.x_off[a.id] + a.n] for a in g.agents]
    ys = [z.u[c.y_off[a.id]: c.y_off[a.id] + a.r] for a in g.agents]
    ws = {}
    for (k, ag), o in c.w_off.items():
        ws[(k, ag)] = z.u[o: o + g.edges[k].l]
    return init_state(g, xs, ys, ws, count_broadcast=False)


# %% driver

@dataclass
class DistributedRun:
    trace: ConvergenceTrace
    state: GraphState
    rounds: int
    transmissions: int
    stop_reason: str


def run_distributed(
    graph: AgentGraph,
    mode: str = "sync",
    budget: int = 10**6,
    reference: Optional[PrimalDualPoint] = None,
    tol: float = 1e-8,
    p=0.5,
    seed: int = 0,
    max_rounds: int = 10**7,
    monitor: Optional[np.ndarray] = None,
    lifted: Optional[LiftedProblem] = None,
    check: bool = True,
    state: Optional[GraphState] = None,
) -> DistributedRun:
    """Simulate rounds until the distance to ``reference`` is at most ``tol``
    or the transmission budget is spent.

    ``mode`` is ``"sync"`` or ``"async"`` (agents active independently with
    probability ``p``, scalar or per agent, round ``k`` drawing with step
    index ``k - 1``). ``monitor`` selects global stacked indices for an
    extra ``dist_monitor`` column, which then drives the stopping test
    instead of ``dist_euclid``. Transmissions in the trace include the
    round-0 broadcast.
    """
    if mode not in ("sync", "async"):
        raise ValueError("mode must be 'sync' or 'async'")
    if check:
        bad = [v.agent for v in check_local_stepsizes(graph) if not v.ok]
        if bad:
            from tripd.solver import StepsizeError, StepsizeVerdict

            raise StepsizeError(StepsizeVerdict(False, np.nan, "local", None, f"local stepsize condition violated for agents {bad}"))
    lifted = lift_to_global(graph) if lifted is None else lifted
    probs = np.broadcast_to(np.asarray(p, dtype=float), (graph.m,))
    scheme = ActivationScheme("independent", tuple(probs if mode == "async" else np.ones(graph.m)), seed)
    S = Metric.diagonal(np.concatenate([1.0 / lifted.sigma.diag(), 1.0 / lifted.gamma.diag()]))
    PiS = Metric.diagonal(S.diag() / probability_matrix(lifted.partition, scheme).diag())
    ref = None if reference is None else reference.stacked()
    cols = DIST_COLUMNS + (("dist_monitor",) if monitor is not None else ())
    trace = ConvergenceTrace(cols)
    state = init_state(graph) if state is None else state

    def record(st):
        z = state_to_global(lifted, st).stacked()
        if ref is None:
            de = ds = dp = dm = np.nan
        else:
            diff = z - ref
            de, ds, dp = float(np.linalg.norm(diff)), S.norm(diff), PiS.norm(diff)
            dm = float(np.linalg.norm(diff[monitor])) if monitor is not None else de
        viol = graph.edge_violation([a.x for a in st.agents])
        row = (st.round, st.ledger.total, de, ds, dp, viol) + ((dm,) if monitor is not None else ())
        trace.append(*row)
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > DIVERGENCE_NORM:
            raise DivergenceError(f"distributed iterate diverged at round {st.round}")
        return dm

    dist = record(state)
    reason = None
    while reason is None:
        if dist <= tol:
            reason = "tol"
        elif state.ledger.total >= budget:
            reason = "budget"
        elif state.round >= max_rounds:
            reason = "max_rounds"
        else:
            if mode == "sync":
                state = sync_round(graph, state)
            else:
                state = async_round(graph, state, sample_activation(scheme, state.round))
            dist = record(state)
    return DistributedRun(trace, state, state.round, state.ledger.total, reason)
