import itertools

import numpy as np
import pytest

from tripd.block import (
    ActivationScheme,
    AgentBlock,
    BlockPartition,
    BlockSeparableProblem,
    SplitMix64,
    Xoshiro256pp,
    bc_step,
    bc_step_partial,
    pi_inv_s,
    probability_matrix,
    run_bc,
    sample_activation,
    step_generator,
)
from tripd.core import DimensionError, LinearMap, Metric, PrimalDualPoint, assemble_metrics
from tripd.instances import random_plq
from tripd.prox import ProxFunction, prox_l1, prox_linf_ball
from tripd.solver import SolverConfig, solve, tripd_step


# %% generator

def test_splitmix64_reference_vector():
    sm = SplitMix64(1234567)
    assert [sm.next() for _ in range(3)] == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_xoshiro256pp_reference_vector():
    g = Xoshiro256pp([1, 2, 3, 4])
    assert g.next() == 41943041
    with pytest.raises(ValueError):
        Xoshiro256pp([0, 0, 0, 0])


def test_step_generator_is_pure():
    a = [step_generator(42, 7).uniform() for _ in range(3)]
    b = [step_generator(42, 7).uniform() for _ in range(3)]
    assert a == b
    assert step_generator(42, 8).uniform() != a[0]
    assert step_generator(43, 7).uniform() != a[0]
    u = step_generator(2**64 - 1, 2**40).uniform()
    assert 0.0 <= u < 1.0


# %% activation

def test_all_active_when_probability_one():
    s = ActivationScheme("independent", (1.0, 1.0, 1.0), seed=5)
    for k in range(50):
        np.testing.assert_array_equal(sample_activation(s, k), [1, 1, 1])


def test_categorical_activates_exactly_one():
    s = ActivationScheme("categorical", (0.2, 0.5, 0.3), seed=9)
    counts = np.zeros(3)
    for k in range(2000):
        e = sample_activation(s, k)
        assert e.sum() == 1
        counts += e
    np.testing.assert_allclose(counts / 2000, [0.2, 0.5, 0.3], atol=0.05)


def test_independent_frequencies():
    s = ActivationScheme("independent", (0.5, 0.5, 0.5, 0.5), seed=2024)
    draws = 100_000
    counts = np.zeros(4)
    for k in range(draws):
        counts += sample_activation(s, k)
    freq = counts / draws
    assert np.all((freq >= 0.49) & (freq <= 0.51)), freq


@pytest.mark.parametrize("kind, probs", [
    ("independent", (0.0, 0.5)),
    ("independent", (1.5,)),
    ("categorical", (0.3, 0.3)),
    ("uniform", (0.5,)),
    ("independent", ()),
])
def test_scheme_validation(kind, probs):
    with pytest.raises(ValueError):
        ActivationScheme(kind, probs)


def test_seed_range():
    with pytest.raises(ValueError):
        ActivationScheme("independent", (0.5,), seed=2**64)


# %% partitions

def test_partition_validation_and_mask():
    part = BlockPartition.from_labels([0, 1, 0, 2])
    assert part.m == 3
    np.testing.assert_array_equal(part.mask([1, 0, 1]), [True, False, True, True])
    np.testing.assert_array_equal(part.labels(), [0, 1, 0, 2])
    with pytest.raises(ValueError):
        BlockPartition(3, ([0, 1], [1, 2]))
    with pytest.raises(ValueError):
        BlockPartition(3, ([0], [1]))
    with pytest.raises(DimensionError):
        part.mask([1, 0])


def test_probability_matrix():
    part = BlockPartition.from_labels([0, 1, 0])
    Pi = probability_matrix(part, ActivationScheme("independent", (0.25, 0.5)))
    np.testing.assert_array_equal(Pi.diag(), [0.25, 0.5, 0.25])


# %% steps

@pytest.mark.parametrize("seed", range(10))
def test_all_active_equals_full_step_bitwise(seed):
    p, sig, gam = random_plq(7, 4, seed)
    dm = assemble_metrics(p, sig, gam)
    rng = np.random.default_rng(seed)
    z = PrimalDualPoint(rng.standard_normal(4), rng.standard_normal(7))
    part = BlockPartition.from_labels(rng.integers(0, 3, 11) if seed else np.arange(11) % 3)
    a = bc_step(z, np.ones(part.m, dtype=int), p, dm, part)
    b = tripd_step(z, p, dm)
    assert np.array_equal(a.stacked(), b.stacked())


def test_no_active_block_leaves_point_unchanged():
    p, sig, gam = random_plq(5, 3, 1)
    dm = assemble_metrics(p, sig, gam)
    z = PrimalDualPoint(np.ones(3), np.arange(5.0))
    part = BlockPartition.contiguous([3, 5])
    out = bc_step(z, [0, 0], p, dm, part)
    assert np.array_equal(out.stacked(), z.stacked())


def test_inactive_coordinates_are_copied():
    p, sig, gam = random_plq(5, 3, 3)
    dm = assemble_metrics(p, sig, gam)
    z = PrimalDualPoint(np.ones(3), np.arange(5.0))
    part = BlockPartition.contiguous([3, 5])
    full = tripd_step(z, p, dm)
    out = bc_step(z, [0, 1], p, dm, part)
    assert np.array_equal(out.u, z.u)
    assert np.array_equal(out.x, full.x)


def counting(p: ProxFunction, log: list, tag) -> ProxFunction:
    def prox(x, s):
        log.append(tag)
        return p(x, s)

    return ProxFunction(p.dim, prox, p.value, p.label)


def separable_problem(log=None, seed=0):
    rng = np.random.default_rng(seed)
    blocks = []
    beta = 0.0
    r_off = n_off = 0
    for k, (r, n) in enumerate([(2, 3), (1, 2), (2, 2)]):
        A = rng.standard_normal((n + 1, n))
        c = rng.standard_normal(n + 1)
        beta = max(beta, np.linalg.norm(A, 2) ** 2)
        g = prox_l1(n, 0.2)
        h = prox_linf_ball(r, 0.5)
        if log is not None:
            g, h = counting(g, log, ("g", k)), counting(h, log, ("h", k))
        blocks.append(AgentBlock(
            np.arange(r_off, r_off + r), np.arange(n_off, n_off + n),
            LinearMap.from_matrix(rng.standard_normal((r, n))), g, h,
            (lambda A, c: lambda x: A.T @ (A @ x - c))(A, c),
        ))
        r_off += r
        n_off += n
    return BlockSeparableProblem(r_off, n_off, tuple(blocks), beta, Metric.identity(n_off))


def test_partial_step_matches_global_and_touches_only_active_blocks():
    log: list = []
    bsp = separable_problem(log)
    p = bsp.problem()
    part = bsp.partition()
    dm = assemble_metrics(p, Metric.scalar(0.5, bsp.r), Metric.scalar(0.02, bsp.n))
    rng = np.random.default_rng(1)
    z = PrimalDualPoint(rng.standard_normal(bsp.r), rng.standard_normal(bsp.n))
    for eps in itertools.product([0, 1], repeat=3):
        log.clear()
        a = bc_step_partial(z, eps, bsp, dm)
        touched = {k for _, k in log}
        assert touched == {k for k, e in enumerate(eps) if e}
        b = bc_step(z, eps, p, dm, part)
        np.testing.assert_allclose(a.stacked(), b.stacked(), atol=1e-14)


def test_bc_requires_diagonal_steps():
    p, _, _ = random_plq(3, 2, 0)
    dense = Metric.dense([[1.0, 0.1], [0.1, 1.0]])
    dm = assemble_metrics(p, dense, Metric.scalar(0.01, 3))
    with pytest.raises(ValueError):
        bc_step(PrimalDualPoint.zeros(p), [1, 1], p, dm, BlockPartition.contiguous([2, 3]))


def exact_expectation(z, ref, p, dm, part, probs):
    """``E ||z+ - z*||^2_{Pi^-1 S}`` by enumerating every activation pattern."""
    W = pi_inv_s(dm, probability_matrix(part, ActivationScheme("independent", tuple(probs))))
    total = 0.0
    for eps in itertools.product([0, 1], repeat=part.m):
        w = np.prod([q if e else 1 - q for e, q in zip(eps, probs)])
        zn = bc_step(z, eps, p, dm, part)
        total += w * W.norm_sq(zn.stacked() - ref)
    return total, W


@pytest.mark.parametrize("seed", range(4))
def test_stochastic_fejer_exact_expectation(seed):
    p, sig, gam = random_plq(6, 4, seed)
    dm = assemble_metrics(p, sig, gam)
    ref = solve(p, SolverConfig(sig, gam, tol=1e-13, max_iters=200_000)).z.stacked()
    rng = np.random.default_rng(seed)
    part = BlockPartition.from_labels(np.arange(10) % 4)
    probs = rng.uniform(0.2, 0.9, 4)
    z = PrimalDualPoint(rng.standard_normal(4), rng.standard_normal(6))
    sch = ActivationScheme("independent", tuple(probs), seed)
    for k in range(5):
        expect, W = exact_expectation(z, ref, p, dm, part, probs)
        tz = tripd_step(z, p, dm)
        bound = W.norm_sq(z.stacked() - ref) - dm.twoPtilde_minus_S.norm_sq(tz.stacked() - z.stacked())
        assert expect <= bound + 1e-10 * max(1.0, abs(bound))
        z = bc_step(z, sample_activation(sch, k), p, dm, part)


# %% driver

def test_run_bc_deterministic():
    p, sig, gam = random_plq(8, 4, 5)
    part = BlockPartition.from_labels(np.arange(12) % 3)
    sch = ActivationScheme("independent", (0.5, 0.5, 0.5), seed=77)
    cfg = SolverConfig(sig, gam, max_iters=300, tol=1e-12, timing=False)
    a = run_bc(p, cfg, part, sch)
    b = run_bc(p, cfg, part, sch)
    assert a.trace.to_csv() == b.trace.to_csv()
    masks = a.trace.column("active_mask")
    for k, m in enumerate(masks[:20]):
        assert m == "".join(str(int(e)) for e in sample_activation(sch, k))


def test_run_bc_with_sure_activation_equals_full_solver():
    p, sig, gam = random_plq(6, 3, 8)
    part = BlockPartition.from_labels(np.arange(9) % 3)
    sch = ActivationScheme("independent", (1.0, 1.0, 1.0), seed=1)
    cfg = SolverConfig(sig, gam, max_iters=400, tol=1e-11, timing=False)
    ref = solve(p, SolverConfig(sig, gam, tol=1e-13, max_iters=100_000)).z
    a = run_bc(p, cfg, part, sch, reference=ref)
    b = solve(p, cfg, reference=ref)
    assert a.iterations == b.iterations
    assert np.array_equal(a.z.stacked(), b.z.stacked())
    for col in ("iter", "resid_S", "dist_S_to_ref", "L_applies"):
        np.testing.assert_array_equal(a.trace.column(col), b.trace.column(col))
    np.testing.assert_array_equal(a.trace.column("dist_PiInvS_to_ref"), a.trace.column("dist_S_to_ref"))


def test_run_bc_converges():
    p, sig, gam = random_plq(6, 3, 12)
    part = BlockPartition.from_labels(np.arange(9) % 3)
    sch = ActivationScheme("categorical", (0.3, 0.3, 0.4), seed=3)
    rep = run_bc(p, SolverConfig(sig, gam, max_iters=200_000, tol=1e-9), part, sch)
    assert rep.converged
    ref = solve(p, SolverConfig(sig, gam, tol=1e-12, max_iters=100_000)).z
    np.testing.assert_allclose(rep.z.stacked(), ref.stacked(), atol=1e-6)


def test_run_bc_dimension_mismatch():
    p, sig, gam = random_plq(4, 2, 0)
    with pytest.raises(DimensionError):
        run_bc(p, SolverConfig(sig, gam), BlockPartition.contiguous([2, 3]), ActivationScheme("independent", (0.5, 0.5)))
    with pytest.raises(DimensionError):
        run_bc(p, SolverConfig(sig, gam), BlockPartition.contiguous([2, 4]), ActivationScheme("independent", (0.5,)))
