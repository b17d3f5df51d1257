"""
Proximal operators and projections.

Every operator takes a point ``x`` and positive per-coordinate stepsizes
``step`` (scalar or vector) and returns

    argmin_z  phi(z) + 1/2 sum_i (x_i - z_i)^2 / step_i,

i.e. the prox of ``phi`` in the metric ``diag(1/step)``. Only diagonal
metrics are supported; operators flagged ``metric_free`` (the zero function
and point indicators) also accept a dense stepsize matrix.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from tripd.core import DimensionError, LinearMap


class ProxFunction:
    """A proximable function on ``R^dim``.

    Parameters
    ----------
    dim : int
        Dimension of the domain.
    prox : callable
        ``prox(x, step) -> z`` with ``step`` a positive vector of length dim.
    value : callable, optional
        Function value oracle (``np.inf`` outside the domain).
    label : str
        Human readable name used in reports.
    metric_free : bool
        True when the prox does not depend on the metric at all.
    default_step : array_like, optional
        Stepsizes used when the caller passes none.
    """

    def __init__(self, dim, prox, value=None, label="", metric_free=False, default_step=None):
        self.dim = int(dim)
        self._prox = prox
        self.value = value
        self.label = label
        self.metric_free = metric_free
        self.default_step = None if default_step is None else _steps(default_step, self.dim)

    def __call__(self, x, step=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(f"{self.label or 'prox'}: expected length {self.dim}, got {x.shape}")
        if step is None:
            step = self.default_step if self.default_step is not None else np.ones(self.dim)
        step = np.asarray(step, dtype=float)
        if step.ndim == 2:
            if not self.metric_free:
                raise ValueError(f"{self.label or 'prox'}: dense-metric prox is not supported")
            step = np.ones(self.dim)
        return self._prox(x, _steps(step, self.dim))

    prox = __call__

    def __repr__(self):
        return f"ProxFunction({self.label!r}, dim={self.dim})"


def _steps(step, dim) -> np.ndarray:
    s = np.broadcast_to(np.asarray(step, dtype=float), (dim,)).copy()
    if dim and np.min(s) <= 0:
        raise ValueError("stepsizes must be positive")
    return s


# %% elementary operators

def prox_zero(dim: int) -> ProxFunction:
    """Prox of the zero function (identity)."""
    return ProxFunction(dim, lambda x, s: x.copy(), lambda x: 0.0, "zero", metric_free=True)


def prox_point(dim: int, c=None) -> ProxFunction:
    """Projection onto the single point ``c`` (default 0)."""
    c = np.zeros(dim) if c is None else np.array(c, dtype=float)

    def value(x):
        return 0.0 if np.array_equal(x, c) else np.inf

    return ProxFunction(dim, lambda x, s: c.copy(), value, "point", metric_free=True)


def prox_box(lo, hi) -> ProxFunction:
    """Projection onto ``{lo <= x <= hi}``; infinite bounds are allowed.

    Separable, so the result does not depend on the (diagonal) metric.
    """
    lo = np.array(lo, dtype=float).ravel()
    hi = np.array(hi, dtype=float).ravel()
    if lo.shape != hi.shape:
        raise DimensionError("lo and hi differ in length")
    if np.any(lo > hi):
        raise ValueError("empty box: lo > hi")

    def value(x):
        return 0.0 if np.all(x >= lo) and np.all(x <= hi) else np.inf

    return ProxFunction(lo.size, lambda x, s: np.clip(x, lo, hi), value, "box")


def prox_box_support(lo, hi) -> ProxFunction:
    """Prox of the support function of a bounded box (conjugate of its indicator).

    ``sigma(y) = sum_i hi_i max(y_i, 0) + lo_i min(y_i, 0)``.
    """
    lo = np.array(lo, dtype=float).ravel()
    hi = np.array(hi, dtype=float).ravel()
    if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("support prox needs a nonempty bounded box")

    def prox(x, s):
        return np.where(x > s * hi, x - s * hi, np.where(x < s * lo, x - s * lo, 0.0))

    def value(y):
        return float(hi @ np.maximum(y, 0) + lo @ np.minimum(y, 0))

    return ProxFunction(lo.size, prox, value, "box_support")


def soft_threshold(x, t):
    """Shrink towards zero by ``t``; values with ``|x| <= t`` map to exactly 0."""
    return np.where(x > t, x - t, np.where(x < -t, x + t, 0.0))


def prox_l1(dim: int, weight=1.0) -> ProxFunction:
    """Prox of ``sum_i w_i |x_i|``."""
    w = np.broadcast_to(np.asarray(weight, dtype=float), (dim,)).copy()
    return ProxFunction(dim, lambda x, s: soft_threshold(x, s * w), lambda x: float(w @ np.abs(x)), "l1")


def prox_linf_ball(dim: int, radius=1.0) -> ProxFunction:
    """Projection onto ``{|x_i| <= radius_i}``, the conjugate of the weighted l1 norm."""
    rad = np.broadcast_to(np.asarray(radius, dtype=float), (dim,))
    f = prox_box(-rad, rad)
    f.label = "linf_ball"
    return f


def prox_quadratic(A, q) -> ProxFunction:
    """Prox of ``1/2 ||A x - q||^2``.

    Solves ``(A^T A + diag(1/s)) z = A^T q + x / s``. The Cholesky factor is
    cached per distinct stepsize vector.
    """
    A = np.atleast_2d(np.array(A, dtype=float))
    q = np.array(q, dtype=float)
    AtA = A.T @ A
    Atq = A.T @ q
    cache = {}

    def prox(x, s):
        key = s.tobytes()
        fac = cache.get(key)
        if fac is None:
            if len(cache) > 32:
                cache.clear()
            fac = cache[key] = sla.cho_factor(AtA + np.diag(1.0 / s))
        return sla.cho_solve(fac, Atq + x / s)

    return ProxFunction(A.shape[1], prox, lambda x: 0.5 * float(np.sum((A @ x - q) ** 2)), "quadratic")


def prox_piecewise_quadratic(a, b, c, d) -> ProxFunction:
    """Prox of a separable scalar PLQ function with a kink at 0.

    ``phi(x) = a/2 x^2 + b x`` for ``x >= 0`` and ``c/2 x^2 - d x`` for
    ``x < 0``, with ``a, c >= 0`` and ``b, d >= 0`` (so ``phi`` is convex and
    ``dphi(0) = [-d, b]``). Parameters broadcast per coordinate.
    """
    a, b, c, d = (np.atleast_1d(np.asarray(t, dtype=float)) for t in (a, b, c, d))
    dim = np.broadcast(a, b, c, d).shape[0]
    a, b, c, d = (np.broadcast_to(t, (dim,)) for t in (a, b, c, d))
    if np.any(a < 0) or np.any(b < 0) or np.any(c < 0) or np.any(d < 0):
        raise ValueError("coefficients must be nonnegative")

    def prox(x, s):
        return np.where(x > s * b, (x - s * b) / (1 + s * a), np.where(x < -s * d, (x + s * d) / (1 + s * c), 0.0))

    def value(x):
        pos = 0.5 * a * x**2 + b * x
        neg = 0.5 * c * x**2 - d * x
        return float(np.sum(np.where(x >= 0, pos, neg)))

    return ProxFunction(dim, prox, value, "piecewise_quadratic")


def prox_piecewise_quadratic_conj(a, b, c, d) -> ProxFunction:
    """Prox of the conjugate of :func:`prox_piecewise_quadratic` (``a, c > 0``).

    The conjugate is the dead-zone quadratic ``(y - b)^2 / 2a`` above ``b``,
    ``(y + d)^2 / 2c`` below ``-d`` and zero in between.
    """
    a, b, c, d = (np.atleast_1d(np.asarray(t, dtype=float)) for t in (a, b, c, d))
    dim = np.broadcast(a, b, c, d).shape[0]
    a, b, c, d = (np.broadcast_to(t, (dim,)) for t in (a, b, c, d))
    if np.any(a <= 0) or np.any(c <= 0):
        raise ValueError("curvatures must be positive for a finite conjugate")

    def prox(y, s):
        up = (a * y + s * b) / (a + s)
        dn = (c * y - s * d) / (c + s)
        return np.where(y > b, up, np.where(y < -d, dn, y))

    def value(y):
        return float(np.sum(np.where(y > b, (y - b) ** 2 / (2 * a), np.where(y < -d, (y + d) ** 2 / (2 * c), 0.0))))

    return ProxFunction(dim, prox, value, "piecewise_quadratic_conj")


# %% projections

def project_affine(E, b) -> ProxFunction:
    """Projection onto ``{z | E z = b}`` in the metric ``diag(1/step)``.

    ``E`` must have full row rank; the factorization of ``E E^T`` used for
    uniform stepsizes is computed once here. Non-uniform stepsizes use the
    weighted normal equations ``E diag(s) E^T``, cached per stepsize vector.
    """
    if isinstance(E, LinearMap):
        E = E.to_dense()
    E = np.atleast_2d(np.array(E, dtype=float))
    b = np.array(b, dtype=float).ravel()
    if b.size != E.shape[0]:
        raise DimensionError("b must have one entry per row of E")
    sv = np.linalg.svd(E, compute_uv=False)
    if sv.size and sv[-1] <= 1e-10 * max(1.0, sv[0]):
        raise ValueError("E is rank deficient")
    base = sla.cho_factor(E @ E.T)
    cache = {}

    def prox(x, s):
        res = E @ x - b
        if np.all(s == s[0]):
            return x - E.T @ sla.cho_solve(base, res)
        key = s.tobytes()
        fac = cache.get(key)
        if fac is None:
            if len(cache) > 32:
                cache.clear()
            fac = cache[key] = sla.cho_factor((E * s) @ E.T)
        return x - s * (E.T @ sla.cho_solve(fac, res))

    def value(x):
        return 0.0 if np.linalg.norm(E @ x - b) <= 1e-10 * (1 + np.linalg.norm(b)) else np.inf

    f = ProxFunction(E.shape[1], prox, value, "affine")
    f.E, f.b = E, b
    return f


def project_pair_sum(b):
    """Euclidean projection of a pair ``(w1, w2)`` onto ``{z1 + z2 = b}``."""
    b = np.array(b, dtype=float).ravel()

    def proj(w1, w2):
        w1 = np.asarray(w1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        if w1.shape != b.shape or w2.shape != b.shape:
            raise DimensionError("pair components must match b")
        return 0.5 * (w1 - w2 + b), 0.5 * (-w1 + w2 + b)

    return proj


def prox_pair_sum(b) -> ProxFunction:
    """Indicator of ``{(z1, z2) | z1 + z2 = b}`` as a prox on the stacked pair.

    With equal weights on both halves this is :func:`project_pair_sum`.
    """
    b = np.array(b, dtype=float).ravel()
    l = b.size
    pair = project_pair_sum(b)

    def prox(w, s):
        w1, w2 = w[:l], w[l:]
        s1, s2 = s[:l], s[l:]
        if np.array_equal(s1, s2):
            return np.concatenate(pair(w1, w2))
        t = (b - w1 - w2) / (s1 + s2)
        return np.concatenate([w1 + s1 * t, w2 + s2 * t])

    def value(w):
        return 0.0 if np.allclose(w[:l] + w[l:], b, atol=1e-10) else np.inf

    return ProxFunction(2 * l, prox, value, "pair_sum")


# %% combinators

def prox_conjugate(p: ProxFunction, gammas=None) -> ProxFunction:
    """Prox of the conjugate via the Moreau decomposition.

    ``prox_{f*}(x, s) = x - s * prox_f(x / s, 1 / s)``. ``gammas``, if given,
    become the default stepsizes of the returned operator.
    """
    if gammas is not None and np.any(np.asarray(gammas, dtype=float) <= 0):
        raise ValueError("conjugate weights must be positive")

    def prox(x, s):
        return x - s * p(x / s, 1.0 / s)

    return ProxFunction(
        p.dim, prox, None, f"conj({p.label})", metric_free=p.label == "zero", default_step=gammas,
    )


def prox_separable(blocks: Sequence, dim: Optional[int] = None) -> ProxFunction:
    """Block-separable sum: ``blocks`` is a sequence of ``(indices, ProxFunction)``.

    The index sets must be disjoint and cover ``range(dim)``.
    """
    blocks = [(np.asarray(idx, dtype=int), p) for idx, p in blocks]
    total = sum(idx.size for idx, _ in blocks)
    dim = total if dim is None else dim
    seen = np.zeros(dim, dtype=bool)
    for idx, p in blocks:
        if idx.size != p.dim:
            raise DimensionError("index block size does not match its prox")
        if np.any(seen[idx]):
            raise ValueError("overlapping index blocks")
        seen[idx] = True
    if not np.all(seen):
        raise ValueError("index blocks do not cover the space")

    def prox(x, s):
        out = np.empty_like(x)
        for idx, p in blocks:
            out[idx] = p(x[idx], s[idx])
        return out

    def value(x):
        return float(sum(p.value(x[idx]) for idx, p in blocks))

    has_values = all(p.value is not None for _, p in blocks)
    f = ProxFunction(dim, prox, value if has_values else None, "separable")
    f.blocks = blocks
    return f


def prox_scaled_step(p: ProxFunction, scale: float) -> ProxFunction:
    """Prox of ``scale * phi`` expressed through ``p``."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    value = None if p.value is None else (lambda x: scale * p.value(x))
    return ProxFunction(p.dim, lambda x, s: p(x, scale * s), value, f"{scale}*{p.label}", p.metric_free)

