"""
Configuration files and CSV output.

Configs are JSON documents. Problem configs look like::

    {
      "problem": {
        "kind": "explicit",
        "L": [[1.0, 0.0], [0.0, 2.0]],
        "f": {"kind": "least_squares", "A": [[...]], "b": [...]},
        "g": {"kind": "box", "lo": [0, 0], "hi": [1, 1]},
        "h": {"kind": "l1", "weight": 0.5}
      },
      "stepsizes": {"sigma": 1.0, "gamma": 0.2},
      "solver": {"tol": 1e-10, "max_iters": 10000, "relaxation": 1.0},
      "blocks": {"kind": "independent", "p": [0.5, 0.5], "labels": [0, 0, 1, 1]}
    }

``"kind": "random_plq"`` with ``n`` and ``r`` draws an instance from the
run seed instead. Graph configs (``dist``) list ``agents`` (each with
``f``, ``g``, ``h``, ``L``, ``sigma``, ``tau``) and ``edges`` (``i``,
``j``, ``A_ij``, ``A_ji``, ``b``, ``kappa``). Function entries:

* ``f``: ``zero``, ``quadratic`` (``H``, optional ``c``),
  ``least_squares`` (``A``, ``b``).
* ``g``, ``h``: ``zero``, ``box`` (``lo``, ``hi``), ``l1`` (``weight``),
  ``point`` (``c``), ``affine`` (``E``, ``b``). ``h`` is converted to the
  prox of its conjugate.
"""

from __future__ import annotations

import csv
import json
from typing import Any, Sequence

import numpy as np

from tripd.core import LinearMap, ProblemSpec, SmoothTerm
from tripd.prox import (
    ProxFunction,
    project_affine,
    prox_box,
    prox_box_support,
    prox_conjugate,
    prox_l1,
    prox_linf_ball,
    prox_point,
    prox_zero,
)
from tripd.trace import fmt_float


class ConfigError(ValueError):
    """Schema or parse error; the message names the offending key or line."""


def load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _get(d: dict, key: str, where: str, default: Any = ...):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    if key not in d:
        if default is ...:
            raise ConfigError(f"{where}.{key}: missing required key")
        return default
    return d[key]


def _array(v, where: str, ndim: int) -> np.ndarray:
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not numeric") from exc
    if ndim == 2:
        a = np.atleast_2d(a) if a.size else a.reshape(0, 0)
    elif ndim == 1:
        a = np.atleast_1d(a)
    if a.ndim != ndim or not np.all(np.isfinite(a)):
        raise ConfigError(f"{where}: expected a finite {ndim}-d array")
    return a


def parse_matrix(v, where: str, cols: int) -> np.ndarray:
    """2-d matrix with ``cols`` columns; an empty list means zero rows."""
    if isinstance(v, list) and len(v) == 0:
        return np.zeros((0, cols))
    a = _array(v, where, 2)
    if a.shape[1] != cols:
        raise ConfigError(f"{where}: expected {cols} columns, got {a.shape[1]}")
    return a


def parse_smooth(entry: dict, where: str, dim: int) -> SmoothTerm:
    kind = _get(entry, "kind", where)
    if kind == "zero":
        return SmoothTerm.zero(dim)
    if kind == "quadratic":
        H = _array(_get(entry, "H", where), f"{where}.H", 2)
        c = _get(entry, "c", where, None)
        f = SmoothTerm.quadratic(H, None if c is None else _array(c, f"{where}.c", 1))
    elif kind == "least_squares":
        f = SmoothTerm.least_squares(_array(_get(entry, "A", where), f"{where}.A", 2),
                                     _array(_get(entry, "b", where), f"{where}.b", 1))
    else:
        raise ConfigError(f"{where}.kind: unknown smooth term {kind!r}")
    if f.dim != dim:
        raise ConfigError(f"{where}: dimension {f.dim} does not match {dim}")
    return f


def parse_prox(entry: dict, where: str, dim: int) -> ProxFunction:
    kind = _get(entry, "kind", where)
    try:
        if kind == "zero":
            p = prox_zero(dim)
        elif kind == "box":
            lo = np.broadcast_to(_array(_get(entry, "lo", where), f"{where}.lo", 1), (dim,))
            hi = np.broadcast_to(_array(_get(entry, "hi", where), f"{where}.hi", 1), (dim,))
            p = prox_box(lo, hi)
        elif kind == "l1":
            p = prox_l1(dim, _get(entry, "weight", where, 1.0))
        elif kind == "point":
            p = prox_point(dim, _get(entry, "c", where, None))
        elif kind == "affine":
            p = project_affine(_array(_get(entry, "E", where), f"{where}.E", 2), _array(_get(entry, "b", where), f"{where}.b", 1))
        else:
            raise ConfigError(f"{where}.kind: unknown function {kind!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    if p.dim != dim:
        raise ConfigError(f"{where}: dimension {p.dim} does not match {dim}")
    return p


def parse_conj_prox(entry: dict, where: str, dim: int) -> ProxFunction:
    """Prox of ``h*`` for an ``h`` entry, using closed forms where available."""
    kind = _get(entry, "kind", where)
    if kind == "zero":
        return prox_point(dim)
    if kind == "l1":
        return prox_linf_ball(dim, _get(entry, "weight", where, 1.0))
    if kind == "box":
        lo = np.broadcast_to(_array(_get(entry, "lo", where), f"{where}.lo", 1), (dim,))
        hi = np.broadcast_to(_array(_get(entry, "hi", where), f"{where}.hi", 1), (dim,))
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            return prox_box_support(lo, hi)
    return prox_conjugate(parse_prox(entry, where, dim))


def parse_problem(cfg: dict, seed: int = 0):
    """``(problem, sigma, gamma)`` from a problem config."""
    from tripd.instances import random_plq

    where = "problem"
    entry = _get(cfg, "problem", "config")
    kind = _get(entry, "kind", where, "explicit")
    if kind == "random_plq":
        n = int(_get(entry, "n", where))
        r = int(_get(entry, "r", where))
        problem, sigma, gamma = random_plq(n, r, seed, bool(_get(entry, "diagonal_steps", where, False)))
    elif kind == "explicit":
        Lm = _array(_get(entry, "L", where), f"{where}.L", 2)
        r, n = Lm.shape
        f = parse_smooth(_get(entry, "f", where, {"kind": "zero"}), f"{where}.f", n)
        g = parse_prox(_get(entry, "g", where, {"kind": "zero"}), f"{where}.g", n)
        h = parse_conj_prox(_get(entry, "h", where, {"kind": "zero"}), f"{where}.h", r)
        problem = ProblemSpec(f, g, h, LinearMap.from_matrix(Lm))
        sigma = gamma = None
    else:
        raise ConfigError(f"{where}.kind: unknown problem kind {kind!r}")
    steps = cfg.get("stepsizes")
    if steps is not None:
        sigma = _steps(_get(steps, "sigma", "stepsizes"), problem.r, "stepsizes.sigma")
        gamma = _steps(_get(steps, "gamma", "stepsizes"), problem.n, "stepsizes.gamma")
    if sigma is None or gamma is None:
        raise ConfigError("stepsizes: required for explicit problems")
    return problem, sigma, gamma


def _steps(v, dim: int, where: str):
    from tripd.core import Metric

    a = np.broadcast_to(_array(v, where, 1), (dim,)) if np.ndim(v) else np.full(dim, float(v))
    if np.any(a <= 0):
        raise ConfigError(f"{where}: stepsizes must be positive")
    return Metric.diagonal(a)


def parse_graph(cfg: dict):
    """:class:`AgentGraph` from a graph config."""
    from tripd.distributed import AgentGraph, AgentSpec, EdgeConstraint

    agents = []
    for k, a in enumerate(_get(cfg, "agents", "config")):
        where = f"agents[{k}]"
        Lm = parse_matrix(_get(a, "L", where, []), f"{where}.L", cols=int(_get(a, "n", where)))
        n = int(_get(a, "n", where))
        r = Lm.shape[0]
        try:
            agents.append(AgentSpec(
                k,
                parse_smooth(_get(a, "f", where, {"kind": "zero"}), f"{where}.f", n),
                parse_prox(_get(a, "g", where, {"kind": "zero"}), f"{where}.g", n),
                parse_conj_prox(_get(a, "h", where, {"kind": "zero"}), f"{where}.h", r),
                LinearMap.from_matrix(Lm),
                float(_get(a, "sigma", where)),
                float(_get(a, "tau", where)),
            ))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    edges = []
    for k, e in enumerate(_get(cfg, "edges", "config", [])):
        where = f"edges[{k}]"
        i, j = int(_get(e, "i", where)), int(_get(e, "j", where))
        try:
            edges.append(EdgeConstraint(
                i, j,
                LinearMap.from_matrix(_array(_get(e, "A_ij", where), f"{where}.A_ij", 2)),
                LinearMap.from_matrix(_array(_get(e, "A_ji", where), f"{where}.A_ji", 2)),
                _array(_get(e, "b", where), f"{where}.b", 1),
                float(_get(e, "kappa", where, 1.0)),
            ))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    try:
        return AgentGraph(agents, edges)
    except ValueError as exc:
        raise ConfigError(f"graph: {exc}") from exc


def write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt_float(v) for v in r])


def write_point(path: str, z) -> None:
    """Rows ``(block, index, value)`` with ``block`` in ``{u, x}``."""
    rows = [("u", k, v) for k, v in enumerate(z.u)] + [("x", k, v) for k, v in enumerate(z.x)]
    write_csv(path, ("block", "index", "value"), rows)
