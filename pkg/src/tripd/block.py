"""
Randomized block-coordinate TriPD.

The stacked coordinates ``z = (u, x)`` are split into disjoint blocks. At
each step a random subset of blocks is activated and only their
coordinates take the values of the full candidate ``T z``.

Randomness comes from a small self-contained generator so the activation
sequences are reproducible across languages: the state for step ``k`` is
four successive splitmix64 outputs started from
``mix64(seed XOR mix64(k * 0xD1B54A32D192ED03 + 1))``; draws use
xoshiro256++ and map to ``[0, 1)`` as ``(x >> 11) * 2^-53``.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tripd.core import (
    CountingMap,
    DerivedMetrics,
    DimensionError,
    LinearMap,
    Metric,
    PrimalDualPoint,
    ProblemSpec,
    SmoothTerm,
    assemble_metrics,
)
from tripd.prox import ProxFunction, prox_separable
from tripd.solver import (
    ProxEvaluationError,
    SolveReport,
    SolverConfig,
    StepsizeError,
    TriPDOperator,
    check_divergence,
    stop_reason,
    verify_stepsizes,
)
from tripd.trace import ConvergenceTrace

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STEP_MUL = 0xD1B54A32D192ED03
PRNG_ID = "xoshiro256++/splitmix64"

BC_TRACE_COLUMNS = ("iter", "resid_S", "dist_S_to_ref", "L_applies", "elapsed_ns", "active_mask", "dist_PiInvS_to_ref")


# %% PRNG

def mix64(z: int) -> int:
    """splitmix64 output finalizer."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256pp:
    def __init__(self, state: Sequence[int]):
        if len(state) != 4 or not any(state):
            raise ValueError("xoshiro256++ needs four words, not all zero")
        self.s = [w & MASK64 for w in state]

    @classmethod
    def from_seed(cls, seed: int) -> "Xoshiro256pp":
        sm = SplitMix64(seed)
        return cls([sm.next() for _ in range(4)])

    def next(self) -> int:
        s = self.s
        result = (_rotl((s[0] + s[3]) & MASK64, 23) + s[0]) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        return (self.next() >> 11) * 2.0**-53


def step_generator(seed: int, step_index: int) -> Xoshiro256pp:
    """Generator owning the draws of one step; a pure function of its inputs."""
    key = mix64((seed & MASK64) ^ mix64((step_index * STEP_MUL + 1) & MASK64))
    return Xoshiro256pp.from_seed(key)


# %% partitions and activation

@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Disjoint, nonempty, sorted index blocks covering ``range(dim)``."""

    dim: int
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(np.array(sorted(int(i) for i in b), dtype=int) for b in self.blocks)
        seen = np.zeros(self.dim, dtype=bool)
        for b in blocks:
            if b.size == 0:
                raise ValueError("empty block")
            if b[0] < 0 or b[-1] >= self.dim:
                raise ValueError("block index out of range")
            if np.any(seen[b]) or np.unique(b).size != b.size:
                raise ValueError("blocks overlap")
            seen[b] = True
        if not np.all(seen):
            raise ValueError("blocks do not cover every coordinate")
        for b in blocks:
            b.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def m(self) -> int:
        return len(self.blocks)

    @classmethod
    def from_labels(cls, labels) -> "BlockPartition":
        labels = np.asarray(labels)
        keys = list(dict.fromkeys(labels.tolist()))
        return cls(labels.size, tuple(np.flatnonzero(labels == k) for k in keys))

    @classmethod
    def contiguous(cls, sizes: Sequence[int]) -> "BlockPartition":
        offs = np.cumsum([0] + list(sizes))
        return cls(int(offs[-1]), tuple(np.arange(offs[i], offs[i + 1]) for i in range(len(sizes))))

    @classmethod
    def primal_dual(cls, r: int, n: int) -> "BlockPartition":
        """Two blocks: all duals, then all primals."""
        return cls.contiguous([r, n])

    def mask(self, eps) -> np.ndarray:
        eps = np.asarray(eps)
        if eps.shape != (self.m,):
            raise DimensionError(f"activation vector must have length {self.m}")
        out = np.zeros(self.dim, dtype=bool)
        for e, b in zip(eps, self.blocks):
            if e:
                out[b] = True
        return out

    def labels(self) -> np.ndarray:
        lab = np.empty(self.dim, dtype=int)
        for i, b in enumerate(self.blocks):
            lab[b] = i
        return lab


@dataclass(frozen=True)
class ActivationScheme:
    """``independent``: block ``i`` active with probability ``p_i``.
    ``categorical``: exactly one block, block ``i`` with probability ``p_i``.
    """

    kind: str
    probs: tuple
    seed: int = 0
    algorithm: str = PRNG_ID

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", tuple(float(v) for v in p))
        if self.algorithm != PRNG_ID:
            raise ValueError(f"unsupported generator {self.algorithm!r}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if p.size == 0 or p.ndim != 1:
            raise ValueError("probabilities must be a nonempty vector")
        if self.kind == "independent":
            if np.any(p <= 0) or np.any(p > 1):
                raise ValueError("independent probabilities must lie in (0, 1]")
        elif self.kind == "categorical":
            if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("categorical probabilities must be positive and sum to 1")
        else:
            raise ValueError(f"unknown activation kind {self.kind!r}")

    @property
    def m(self) -> int:
        return len(self.probs)

    def block_probabilities(self) -> np.ndarray:
        """Marginal activation probability of every block."""
        return np.array(self.probs)


def sample_activation(scheme: ActivationScheme, step_index: int) -> np.ndarray:
    """Activation vector ``eps`` in ``{0,1}^m`` for one step (pure in ``(seed, step_index)``)."""
    gen = step_generator(scheme.seed, step_index)
    p = scheme.probs
    if scheme.kind == "independent":
        return np.array([1 if gen.uniform() < pi else 0 for pi in p], dtype=np.int8)
    u = gen.uniform()
    eps = np.zeros(len(p), dtype=np.int8)
    acc = 0.0
    for i, pi in enumerate(p):
        acc += pi
        if u < acc:
            eps[i] = 1
            return eps
    eps[-1] = 1
    return eps


def probability_matrix(partition: BlockPartition, scheme: ActivationScheme) -> Metric:
    """Diagonal ``Pi``: each coordinate gets its block's activation probability."""
    if partition.m != scheme.m:
        raise DimensionError("one probability per block required")
    pi = np.empty(partition.dim)
    for b, p in zip(partition.blocks, scheme.block_probabilities()):
        pi[b] = p
    return Metric.diagonal(pi)


def pi_inv_s(dm: DerivedMetrics, Pi: Metric) -> Metric:
    """The metric ``Pi^-1 S`` (diagonal under diagonal stepsizes)."""
    return Metric.diagonal(dm.S.diag() / Pi.diag())


# %% steps

def _require_diagonal(dm: DerivedMetrics):
    if not (dm.sigma.is_diagonal and dm.gamma.is_diagonal):
        raise ValueError("block-coordinate updates need diagonal stepsizes")


def bc_step(z: PrimalDualPoint, eps, problem: ProblemSpec, dm: DerivedMetrics, partition: BlockPartition) -> PrimalDualPoint:
    """``z+ = z + sum_i eps_i U_i (T z - z)``.

    The full candidate is computed once; coordinates of inactive blocks are
    copied from ``z`` unchanged.
    """
    _require_diagonal(dm)
    z.check_dims(problem)
    if partition.dim != problem.r + problem.n:
        raise DimensionError("partition does not cover the problem")
    mask = partition.mask(eps)
    u_t, x_t, _, _ = TriPDOperator(problem, dm).evaluate(z.u, z.x, problem.L.apply(z.x))
    r = problem.r
    return PrimalDualPoint(np.where(mask[:r], u_t, z.u), np.where(mask[r:], x_t, z.x))


@dataclass(frozen=True, eq=False)
class AgentBlock:
    """One block of a block-separable problem.

    Owns dual coordinates ``dual_idx`` and primal coordinates ``primal_idx``;
    ``L_i`` maps its primal part to its dual part, and the gradient of ``f``
    restricted to the block depends only on the block's primal part.
    """

    dual_idx: np.ndarray
    primal_idx: np.ndarray
    L: LinearMap
    g_prox: ProxFunction
    h_conj_prox: ProxFunction
    grad: object


@dataclass(frozen=True, eq=False)
class BlockSeparableProblem:
    """A problem with block-diagonal ``L`` and block-separable ``f``, ``g``, ``h``.

    Only the active blocks need evaluating (:func:`bc_step_partial`). Use
    :meth:`problem` and :meth:`partition` to obtain the equivalent global
    objects for :func:`bc_step`.
    """

    r: int
    n: int
    blocks: tuple
    f_beta: float
    f_Q: Metric

    def problem(self) -> ProblemSpec:
        rows, cols, vals = [], [], []
        import scipy.sparse as sp

        for b in self.blocks:
            Ld = b.L.to_dense()
            ii, jj = np.nonzero(Ld)
            rows.append(b.dual_idx[ii])
            cols.append(b.primal_idx[jj])
            vals.append(Ld[ii, jj])
        L = sp.csr_matrix(
            (np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [], np.concatenate(cols) if cols else [])),
            shape=(self.r, self.n),
        )

        def grad(x):
            out = np.empty(self.n)
            for b in self.blocks:
                out[b.primal_idx] = b.grad(x[b.primal_idx])
            return out

        f = SmoothTerm(self.n, grad, self.f_Q, self.f_beta, label="block_separable")
        g = prox_separable([(b.primal_idx, b.g_prox) for b in self.blocks], self.n)
        h = prox_separable([(b.dual_idx, b.h_conj_prox) for b in self.blocks], self.r)
        return ProblemSpec(f, g, h, LinearMap.from_matrix(L))

    def partition(self) -> BlockPartition:
        return BlockPartition(self.r + self.n, tuple(np.concatenate([b.dual_idx, self.r + b.primal_idx]) for b in self.blocks))


def bc_step_partial(z: PrimalDualPoint, eps, bsp: BlockSeparableProblem, dm: DerivedMetrics) -> PrimalDualPoint:
    """Block-coordinate step evaluating only the active blocks.

    Agrees with :func:`bc_step` on ``bsp.problem()`` up to rounding.
    """
    _require_diagonal(dm)
    sig, gam = dm.sigma.diag(), dm.gamma.diag()
    u, x = z.u.copy(), z.x.copy()
    for e, b in zip(eps, bsp.blocks):
        if not e:
            continue
        di, pi = b.dual_idx, b.primal_idx
        s, t = sig[di], gam[pi]
        xi = z.x[pi]
        Lxi = b.L.apply(xi)
        ubar = b.h_conj_prox(z.u[di] + s * Lxi, s)
        xn = b.g_prox(xi - t * (b.grad(xi) + b.L.adjoint(ubar)), t)
        x[pi] = xn
        u[di] = ubar + s * (b.L.apply(xn) - Lxi)
    return PrimalDualPoint(u, x)


# %% driver

def run_bc(
    problem: ProblemSpec,
    config: SolverConfig,
    partition: BlockPartition,
    scheme: ActivationScheme,
    reference: Optional[PrimalDualPoint] = None,
    z0: Optional[PrimalDualPoint] = None,
    verify: bool = True,
) -> SolveReport:
    """Randomized block-coordinate iterations.

    Termination uses the full-candidate residual ``||T z - z||_S`` at the
    point each step starts from. Step ``k`` (1-based) draws its activation
    with ``step_index = k - 1``. ``config.relaxation`` is ignored.
    """
    dm = assemble_metrics(problem, config.sigma, config.gamma)
    _require_diagonal(dm)
    if verify:
        verdict = verify_stepsizes(problem, dm.sigma, dm.gamma)
        if not verdict.ok:
            raise StepsizeError(verdict)
    if partition.dim != problem.r + problem.n or partition.m != scheme.m:
        raise DimensionError("partition, scheme and problem disagree")
    L = CountingMap(problem.L)
    op = TriPDOperator(dataclasses.replace(problem, L=L), dm)
    Pi = probability_matrix(partition, scheme)
    W = pi_inv_s(dm, Pi)
    S = dm.S
    r = problem.r

    z = PrimalDualPoint.zeros(problem) if z0 is None else z0
    z.check_dims(problem)
    u, x = z.u.copy(), z.x.copy()
    Lx = L.apply(x)
    trace = ConvergenceTrace(BC_TRACE_COLUMNS) if config.record_trace else None
    points = [PrimalDualPoint(u, x)] if config.record_points else []
    ref = None if reference is None else reference.stacked()
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
            resid, reason = 0.0, "tol"
            break
        resid = float(np.sqrt(S.block("dual").norm_sq(du) + S.block("primal").norm_sq(dx)))
        eps = sample_activation(scheme, k)
        mask = partition.mask(eps)
        mu, mx = mask[:r], mask[r:]
        u = np.where(mu, u_t, u)
        if np.all(mx):
            x, Lx = x_t, Lx_t
        elif np.any(mx):
            x = np.where(mx, x_t, x)
            Lx = L.apply(x)
        k += 1
        zk = PrimalDualPoint(u, x)
        check_divergence(zk, k)
        if config.record_points:
            points.append(zk)
        if trace is not None:
            if ref is None:
                d_s = d_pi = np.nan
            else:
                diff = zk.stacked() - ref
                d_s, d_pi = S.norm(diff), W.norm(diff)
            elapsed = time.perf_counter_ns() - t0 if config.timing else 0
            trace.append(k, resid, d_s, L.n_apply, elapsed, "".join(str(int(e)) for e in eps), d_pi)
        reason = stop_reason(resid, config.tol, k, config.max_iters)

    return SolveReport(PrimalDualPoint(u, x), k, reason, resid, trace, points, L.n_apply, L.n_adjoint, dm)
