"""
Core types shared by every solver: metrics, linear maps, smooth terms,
problem data and the derived matrices of the primal-dual splitting.

Vectors are dense float64 arrays. A primal-dual point is stored dual part
first, ``z = (u, x)``, and every stacked quantity in the package follows
that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

if TYPE_CHECKING:
    from tripd.prox import ProxFunction

SPD_RTOL = 1e-12
SYM_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when array or operator dimensions do not agree."""


class NotSPDError(ValueError):
    """Raised when a matrix that must be positive definite is not."""


class OperatorNormError(RuntimeError):
    """Power iteration did not converge; ``estimate`` holds the best value."""

    def __init__(self, msg, estimate):
        super().__init__(msg)
        self.estimate = estimate


# %% metrics

@dataclass(frozen=True, eq=False)
class Metric:
    """Symmetric matrix with a structured representation.

    ``kind`` is one of ``"dense"``, ``"diagonal"`` or ``"blockdiag"``. Block
    diagonal metrics hold named child metrics and act on the concatenation of
    their blocks. Positive definiteness is not enforced at construction (some
    derived matrices are only semidefinite by design); use :func:`is_spd`.
    """

    dim: int
    kind: str
    data: object
    names: tuple = ()

    # constructors

    @classmethod
    def dense(cls, m) -> "Metric":
        m = np.array(m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"metric must be square, got {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if m.size and np.max(np.abs(m - m.T)) > SYM_TOL * scale:
            raise ValueError("metric is not symmetric")
        m.setflags(write=False)
        return cls(m.shape[0], "dense", m)

    @classmethod
    def diagonal(cls, d) -> "Metric":
        d = np.array(d, dtype=float).ravel()
        d.setflags(write=False)
        return cls(d.size, "diagonal", d)

    @classmethod
    def identity(cls, n: int) -> "Metric":
        return cls.diagonal(np.ones(n))

    @classmethod
    def scalar(cls, c: float, n: int) -> "Metric":
        return cls.diagonal(np.full(n, float(c)))

    @classmethod
    def blockdiag(cls, blocks: Sequence, names: Optional[Sequence[str]] = None) -> "Metric":
        blocks = tuple(b if isinstance(b, Metric) else Metric.dense(b) for b in blocks)
        if names is None:
            names = tuple(f"block{i}" for i in range(len(blocks)))
        if len(names) != len(blocks):
            raise ValueError("one name per block required")
        return cls(sum(b.dim for b in blocks), "blockdiag", blocks, tuple(names))

    # structure

    @property
    def is_diagonal(self) -> bool:
        if self.kind == "diagonal":
            return True
        if self.kind == "blockdiag":
            return all(b.is_diagonal for b in self.data)
        return False

    def diag(self) -> np.ndarray:
        """Diagonal entries (exact for every representation)."""
        if self.kind == "diagonal":
            return np.array(self.data)
        if self.kind == "blockdiag":
            return np.concatenate([b.diag() for b in self.data]) if self.data else np.zeros(0)
        return np.diag(self.data).copy()

    def block(self, name: str) -> "Metric":
        if self.kind != "blockdiag":
            raise KeyError(name)
        return self.data[self.names.index(name)]

    def to_dense(self) -> np.ndarray:
        if self.kind == "dense":
            return np.array(self.data)
        if self.kind == "diagonal":
            return np.diag(self.data)
        return sla.block_diag(*[b.to_dense() for b in self.data]) if self.data else np.zeros((0, 0))

    def _split(self, v):
        offs = np.cumsum([0] + [b.dim for b in self.data])
        return [v[offs[i]:offs[i + 1]] for i in range(len(self.data))]

    # algebra

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.dim:
            raise DimensionError(f"vector of length {v.shape[0]} for metric of dim {self.dim}")
        if self.kind == "diagonal":
            return self.data * v
        if self.kind == "dense":
            return self.data @ v
        return np.concatenate([b.matvec(p) for b, p in zip(self.data, self._split(v))]) if self.data else v.copy()

    def solve(self, v) -> np.ndarray:
        """Apply the inverse."""
        v = np.asarray(v, dtype=float)
        if self.kind == "diagonal":
            return v / self.data
        if self.kind == "dense":
            return np.linalg.solve(self.data, v)
        return np.concatenate([b.solve(p) for b, p in zip(self.data, self._split(v))]) if self.data else v.copy()

    def inv(self) -> "Metric":
        if self.kind == "diagonal":
            return Metric.diagonal(1.0 / self.data)
        if self.kind == "dense":
            inv = np.linalg.inv(self.data)
            return Metric.dense(0.5 * (inv + inv.T))
        return Metric.blockdiag([b.inv() for b in self.data], self.names)

    def scaled(self, c: float) -> "Metric":
        if self.kind == "diagonal":
            return Metric.diagonal(c * self.data)
        if self.kind == "dense":
            return Metric.dense(c * self.data)
        return Metric.blockdiag([b.scaled(c) for b in self.data], self.names)

    def inner(self, a, b) -> float:
        return float(np.dot(np.asarray(a, dtype=float), self.matvec(b)))

    def norm_sq(self, v) -> float:
        return self.inner(v, v)

    def norm(self, v) -> float:
        return float(np.sqrt(max(self.norm_sq(v), 0.0)))

    def opnorm(self) -> float:
        """Spectral norm."""
        if self.kind == "diagonal":
            return float(np.max(np.abs(self.data))) if self.dim else 0.0
        if self.kind == "blockdiag":
            return max((b.opnorm() for b in self.data), default=0.0)
        return float(np.max(np.abs(np.linalg.eigvalsh(self.data)))) if self.dim else 0.0


def as_metric(m) -> Metric:
    if isinstance(m, Metric):
        return m
    m = np.asarray(m, dtype=float)
    if m.ndim == 0:
        raise DimensionError("scalar metric needs a dimension; use Metric.scalar")
    if m.ndim == 1:
        return Metric.diagonal(m)
    return Metric.dense(m)


def is_spd(m) -> bool:
    """True iff ``m`` is symmetric positive definite.

    Cholesky must succeed with every pivot above ``1e-12 * ||m||``.
    Raises ``ValueError`` when ``m`` is asymmetric beyond ``1e-12``.
    """
    if isinstance(m, Metric):
        if m.kind == "diagonal":
            d = m.data
            return bool(d.size == 0 or np.min(d) > SPD_RTOL * np.max(np.abs(d)))
        if m.kind == "blockdiag":
            return all(is_spd(b) for b in m.data)
        a = m.data
    else:
        a = np.asarray(m, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError("square matrix required")
        scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
        if a.size and np.max(np.abs(a - a.T)) > SYM_TOL * scale:
            raise ValueError("matrix is not symmetric")
    if a.size == 0:
        return True
    nrm = np.linalg.norm(a, 2)
    if nrm == 0.0:
        return False
    try:
        c = np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError:
        return False
    return bool(np.min(np.diag(c)) ** 2 > SPD_RTOL * nrm)


# %% linear maps

class LinearMap:
    """Linear map ``R^in_dim -> R^out_dim`` given by apply/adjoint oracles.

    ``matrix`` may be a dense array or a scipy sparse matrix; when present it
    backs both oracles and :meth:`to_dense`.
    """

    def __init__(self, in_dim: int, out_dim: int, apply: Callable, adjoint: Callable, matrix=None):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self._apply = apply
        self._adjoint = adjoint
        self.matrix = matrix

    @classmethod
    def from_matrix(cls, m) -> "LinearMap":
        if sp.issparse(m):
            m = sp.csr_matrix(m, dtype=float)
            mt = m.T.tocsr()
            return cls(m.shape[1], m.shape[0], m.dot, mt.dot, m)
        m = np.atleast_2d(np.array(m, dtype=float))
        m.setflags(write=False)
        return cls(m.shape[1], m.shape[0], m.__matmul__, m.T.__matmul__, m)

    @classmethod
    def identity(cls, n: int) -> "LinearMap":
        return cls.from_matrix(np.eye(n))

    @classmethod
    def zeros(cls, out_dim: int, in_dim: int) -> "LinearMap":
        return cls.from_matrix(np.zeros((out_dim, in_dim)))

    @property
    def shape(self):
        return (self.out_dim, self.in_dim)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.in_dim,):
            raise DimensionError(f"expected input of length {self.in_dim}, got {x.shape}")
        return np.asarray(self._apply(x), dtype=float).reshape(self.out_dim)

    def adjoint(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.out_dim,):
            raise DimensionError(f"expected input of length {self.out_dim}, got {u.shape}")
        return np.asarray(self._adjoint(u), dtype=float).reshape(self.in_dim)

    __call__ = apply

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix.toarray() if sp.issparse(self.matrix) else np.array(self.matrix)
        return np.column_stack([self.apply(e) for e in np.eye(self.in_dim)]) if self.in_dim else np.zeros((self.out_dim, 0))


class CountingMap(LinearMap):
    """Wraps a map and counts forward and adjoint applications."""

    def __init__(self, base: LinearMap):
        super().__init__(base.in_dim, base.out_dim, base._apply, base._adjoint, base.matrix)
        self.base = base
        self.n_apply = 0
        self.n_adjoint = 0

    def apply(self, x):
        self.n_apply += 1
        return super().apply(x)

    def adjoint(self, u):
        self.n_adjoint += 1
        return super().adjoint(u)

    __call__ = apply


def operator_norm(L: LinearMap, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value of ``L`` by power iteration on ``L^T L``.

    Iterates until the Rayleigh-quotient residual drops below ``tol``
    relative to the eigenvalue estimate. Raises :class:`OperatorNormError`
    (carrying the best estimate) if ``max_iter`` is hit first.
    """
    if L.in_dim == 0 or L.out_dim == 0:
        return 0.0
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(L.in_dim)
    v /= np.linalg.norm(v)
    theta = 0.0
    for _ in range(max_iter):
        w = L.adjoint(L.apply(v))
        theta = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        if np.linalg.norm(w - theta * v) <= tol * theta:
            return float(np.sqrt(theta))
        v = w / nw
    raise OperatorNormError("power iteration did not converge", float(np.sqrt(max(theta, 0.0))))


# %% smooth terms and problems

@dataclass(frozen=True, eq=False)
class SmoothTerm:
    """Convex differentiable term with ``beta``-Lipschitz gradient in metric ``Q``.

    The Lipschitz condition reads
    ``||grad(x) - grad(y)||_{Q^-1} <= beta ||x - y||_Q``.
    """

    dim: int
    grad: Callable[[np.ndarray], np.ndarray]
    Q: Metric
    beta: float
    value: Optional[Callable[[np.ndarray], float]] = None
    label: str = ""

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.Q.dim != self.dim:
            raise DimensionError("Q dimension does not match the term")

    @classmethod
    def zero(cls, n: int) -> "SmoothTerm":
        return cls(n, lambda x: np.zeros(n), Metric.identity(n), 0.0, lambda x: 0.0, "zero")

    @classmethod
    def quadratic(cls, H, c=None, Q: Optional[Metric] = None) -> "SmoothTerm":
        """``1/2 x^T H x - c^T x``; ``beta`` is the largest eigenvalue of ``Q^-1/2 H Q^-1/2``."""
        H = np.array(H, dtype=float)
        n = H.shape[0]
        H = 0.5 * (H + H.T)
        c = np.zeros(n) if c is None else np.array(c, dtype=float)
        if Q is None:
            Q = Metric.identity(n)
            beta = float(max(np.max(np.linalg.eigvalsh(H)), 0.0)) if n else 0.0
        else:
            if Q.dim != n:
                raise DimensionError("Q dimension does not match the term")
            qinv_half = sla.fractional_matrix_power(Q.to_dense(), -0.5).real
            beta = float(max(np.max(np.linalg.eigvalsh(qinv_half @ H @ qinv_half)), 0.0))
        return cls(n, lambda x: H @ x - c, Q, beta, lambda x: 0.5 * x @ H @ x - c @ x, "quadratic")

    @classmethod
    def least_squares(cls, A, b) -> "SmoothTerm":
        """``1/2 ||A x - b||^2`` with ``Q = I``."""
        A = np.atleast_2d(np.array(A, dtype=float))
        b = np.array(b, dtype=float)
        n = A.shape[1]
        beta = float(np.linalg.norm(A, 2) ** 2) if A.size else 0.0
        return cls(
            n,
            lambda x: A.T @ (A @ x - b),
            Metric.identity(n),
            beta,
            lambda x: 0.5 * float(np.sum((A @ x - b) ** 2)),
            "least_squares",
        )


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """``minimize f(x) + g(x) + h(L x)`` given by ``grad f``, ``prox g`` and ``prox h*``.

    ``h_conj_prox`` is the prox of the conjugate of ``h``; build it from a
    prox of ``h`` with :func:`tripd.prox.prox_conjugate` when needed.
    """

    f: SmoothTerm
    g_prox: "ProxFunction"
    h_conj_prox: "ProxFunction"
    L: LinearMap

    def __post_init__(self):
        if self.f.dim != self.L.in_dim or self.g_prox.dim != self.L.in_dim:
            raise DimensionError("f, g and L must share the primal dimension")
        if self.h_conj_prox.dim != self.L.out_dim:
            raise DimensionError("h* must live on the range of L")

    @property
    def n(self) -> int:
        return self.L.in_dim

    @property
    def r(self) -> int:
        return self.L.out_dim


@dataclass(frozen=True, eq=False)
class PrimalDualPoint:
    u: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.array(self.u, dtype=float).ravel())
        object.__setattr__(self, "x", np.array(self.x, dtype=float).ravel())

    @classmethod
    def zeros(cls, problem: ProblemSpec) -> "PrimalDualPoint":
        return cls(np.zeros(problem.r), np.zeros(problem.n))

    @classmethod
    def from_stacked(cls, z, r: int) -> "PrimalDualPoint":
        z = np.asarray(z, dtype=float)
        return cls(z[:r], z[r:])

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u, self.x])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.x)))

    def check_dims(self, problem: ProblemSpec):
        if self.u.size != problem.r or self.x.size != problem.n:
            raise DimensionError(
                f"point has dims (r={self.u.size}, n={self.x.size}), problem has (r={problem.r}, n={problem.n})"
            )


# %% derived metrics

@dataclass(frozen=True, eq=False)
class DerivedMetrics:
    """Stepsizes and the matrices built from them.

    ``S = blkdiag(Sigma^-1, Gamma^-1)`` keeps its structure. ``P``, ``K``,
    ``H``, ``Ptilde`` and ``2 Ptilde - S`` need the dense form of ``L`` and
    are materialized on first access.
    """

    sigma: Metric
    gamma: Metric
    L: LinearMap
    beta_f: float
    Q: Metric
    S: Metric = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "S", Metric.blockdiag([self.sigma.inv(), self.gamma.inv()], ("dual", "primal"))
        )

    @cached_property
    def _Ld(self):
        return self.L.to_dense()

    @cached_property
    def P(self) -> np.ndarray:
        Ld = self._Ld
        return np.block([[self.sigma.inv().to_dense(), 0.5 * Ld], [0.5 * Ld.T, self.gamma.inv().to_dense()]])

    @cached_property
    def K(self) -> np.ndarray:
        Ld = self._Ld
        r, n = Ld.shape
        return np.block([[np.zeros((r, r)), -0.5 * Ld], [0.5 * Ld.T, np.zeros((n, n))]])

    @cached_property
    def H(self) -> np.ndarray:
        return self.P + self.K

    @cached_property
    def Ptilde(self) -> Metric:
        Ld = self._Ld
        lower = self.gamma.inv().to_dense() - 0.25 * self.beta_f * self.Q.to_dense()
        return Metric.dense(np.block([[self.sigma.inv().to_dense(), -0.5 * Ld], [-0.5 * Ld.T, lower]]))

    @cached_property
    def twoPtilde_minus_S(self) -> Metric:
        return Metric.dense(2.0 * self.Ptilde.to_dense() - self.S.to_dense())

    @cached_property
    def S_inv_H_plus_Mt(self) -> np.ndarray:
        """``S^-1 (H + M^T)``, the correction matrix ``[[I, Sigma L], [0, I]]``."""
        Ld = self._Ld
        r, n = Ld.shape
        return np.block([[np.eye(r), self.sigma.to_dense() @ Ld], [np.zeros((n, r)), np.eye(n)]])


def assemble_metrics(problem: ProblemSpec, sigma, gamma) -> DerivedMetrics:
    """Build :class:`DerivedMetrics` for dual stepsize ``sigma`` and primal stepsize ``gamma``."""
    sigma = as_metric(sigma)
    gamma = as_metric(gamma)
    if sigma.dim != problem.r:
        raise DimensionError(f"sigma has dim {sigma.dim}, expected r={problem.r}")
    if gamma.dim != problem.n:
        raise DimensionError(f"gamma has dim {gamma.dim}, expected n={problem.n}")
    if not is_spd(sigma):
        raise NotSPDError("sigma is not positive definite")
    if not is_spd(gamma):
        raise NotSPDError("gamma is not positive definite")
    return DerivedMetrics(sigma, gamma, problem.L, problem.f.beta, problem.f.Q)
