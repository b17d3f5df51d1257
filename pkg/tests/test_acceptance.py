"""Acceptance criteria 1-8, one test each.

Every test prints a ``criterion N PASS|FAIL`` line (also collected in the
terminal summary) before asserting, so a failing criterion still reports
its measured numbers.
"""

import time
from pathlib import Path

import numpy as np

from tripd.block import ActivationScheme, BlockPartition, bc_step, pi_inv_s, probability_matrix, sample_activation
from tripd.core import LinearMap, Metric, PrimalDualPoint, SmoothTerm, assemble_metrics
from tripd.diagnostics import fejer_check, fit_linear_rate, kkt_residual, reference_solution
from tripd.distributed import async_round, init_state, lift_to_global, run_distributed, state_to_global, sync_round
from tripd.formation import (
    BenchmarkConfig,
    build_formation_problem,
    default_problem,
    first_hit,
    monitor_indices,
    run_benchmark,
)
from tripd.instances import consensus_pair, qp_1d, random_graph, random_plq
from tripd.prox import (
    project_affine,
    prox_box,
    prox_box_support,
    prox_conjugate,
    prox_l1,
    prox_linf_ball,
    prox_pair_sum,
    prox_piecewise_quadratic,
    prox_piecewise_quadratic_conj,
    prox_point,
    prox_quadratic,
    prox_scaled_step,
    prox_separable,
    prox_zero,
)
from tripd.solver import SolverConfig, solve, tripd_step, verify_stepsizes, vu_condat_thresholds

CONFIGS = Path(__file__).resolve().parent.parent / "demos" / "configs"


# %% 1

def test_criterion_1_vu_condat_thresholds(acceptance):
    t0 = time.perf_counter()
    ours, theirs = vu_condat_thresholds(1.5, 1.0)
    dt = time.perf_counter() - t0
    ok = abs(ours - 1 / 6.5) <= 1e-6 and abs(theirs - 1 / 24) <= 1e-6 and dt < 1.0
    acceptance(1, "Vu-Condat thresholds", ok,
               f"nu_fejer={ours:.9f} vs 1/6.5, nu_averaged={theirs:.9f} vs 1/24, {dt:.3f}s")
    assert ok


# %% 2

def test_criterion_2_fejer_suite(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240602)
    violations, worst, unverified = 0, -np.inf, 0
    for k in range(50):
        n, r = int(rng.integers(1, 31)), int(rng.integers(1, 21))
        p, sig, gam = random_plq(n, r, 1000 + k)
        if not verify_stepsizes(p, sig, gam).ok:
            unverified += 1
            continue
        ref = reference_solution(p, sig, gam, eps=1e-12, max_iters=10**7)
        z0 = PrimalDualPoint(rng.standard_normal(r), rng.standard_normal(n))
        rep = solve(p, SolverConfig(sig, gam, max_iters=500, tol=1e-300, record_points=True, timing=False), z0=z0)
        res = fejer_check(rep.points, ref.z, rep.metrics.S, rep.metrics.twoPtilde_minus_S)
        violations += not res.ok
        worst = max(worst, res.max_excess / res.slack)
    dt = time.perf_counter() - t0
    ok = violations == 0 and unverified == 0 and dt < 60
    acceptance(2, "Fejer monotonicity on 50 PLQ instances", ok,
               f"{violations} violating runs, worst excess/slack={worst:.3g}, {dt:.1f}s")
    assert ok


# %% 3

def test_criterion_3_bc_all_active_bitwise(acceptance):
    t0 = time.perf_counter()
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, r = int(rng.integers(1, 15)), int(rng.integers(1, 10))
        p, sig, gam = random_plq(n, r, seed, diagonal_steps=True)
        dm = assemble_metrics(p, sig, gam)
        z = PrimalDualPoint(rng.standard_normal(r), rng.standard_normal(n))
        part = BlockPartition.from_labels(np.arange(r + n) % int(rng.integers(1, 5)))
        a = bc_step(z, np.ones(part.m, dtype=int), p, dm, part)
        mismatches += not np.array_equal(a.stacked(), tripd_step(z, p, dm).stacked())
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 10
    acceptance(3, "all-active block step equals full step bitwise", ok, f"{mismatches}/100 mismatches, {dt:.2f}s")
    assert ok


# %% 4

def test_criterion_4_stochastic_fejer(acceptance):
    t0 = time.perf_counter()
    p, sig, gam = random_plq(8, 4, 2024, diagonal_steps=True)
    dm = assemble_metrics(p, sig, gam)
    part = BlockPartition.from_labels(np.arange(12) % 4)
    probs = (0.5, 0.5, 0.5, 0.5)
    W = pi_inv_s(dm, probability_matrix(part, ActivationScheme("independent", probs)))
    ref = reference_solution(p, sig, gam, eps=1e-13, max_iters=10**7).z.stacked()
    z_start = PrimalDualPoint(np.full(4, 2.0), np.full(8, -1.0))
    seeds, K = 1000, 200
    # per-sample gap a_{k+1} - a_k + b_k; its mean must be <= 0 up to 3 SE
    gap = np.empty((seeds, K))
    for s in range(seeds):
        sch = ActivationScheme("independent", probs, seed=s)
        z = z_start
        a = W.norm_sq(z.stacked() - ref)
        for k in range(K):
            tz = tripd_step(z, p, dm)
            b = dm.twoPtilde_minus_S.norm_sq(tz.stacked() - z.stacked())
            z = bc_step(z, sample_activation(sch, k), p, dm, part)
            a_next = W.norm_sq(z.stacked() - ref)
            gap[s, k] = a_next - a + b
            a = a_next
    mean = gap.mean(axis=0)
    se = gap.std(axis=0, ddof=1) / np.sqrt(seeds)
    bad = np.flatnonzero(mean > 3 * se)
    dt = time.perf_counter() - t0
    ok = bad.size == 0 and dt < 120
    worst = np.max((mean - 3 * se) / np.maximum(np.abs(gap).mean(axis=0), 1e-300))
    acceptance(4, "stochastic Fejer inequality, 1000 seeds x 200 steps", ok,
               f"{bad.size} steps above 3 SE, worst (mean-3SE)/scale={worst:.3g}, {dt:.1f}s")
    assert ok


# %% 5

def test_criterion_5_distributed_equals_lifted(acceptance):
    t0 = time.perf_counter()
    worst_sync = worst_async = 0.0
    for g in range(20):
        m = 2 + g % 5
        graph = random_graph(m, 500 + g)
        lifted = lift_to_global(graph)
        dm = assemble_metrics(lifted.problem, lifted.sigma, lifted.gamma)
        rng = np.random.default_rng(g)
        st = init_state(graph, x0=[rng.standard_normal(a.n) for a in graph.agents])
        for _ in range(100):
            z = state_to_global(lifted, st)
            st = sync_round(graph, st)
            dev = np.max(np.abs(state_to_global(lifted, st).stacked() - tripd_step(z, lifted.problem, dm).stacked()))
            worst_sync = max(worst_sync, float(dev))
        st = init_state(graph, x0=[rng.standard_normal(a.n) for a in graph.agents])
        for _ in range(100):
            eps = rng.integers(0, 2, m)
            z = state_to_global(lifted, st)
            st = async_round(graph, st, eps)
            dev = np.max(np.abs(state_to_global(lifted, st).stacked()
                                - bc_step(z, eps, lifted.problem, dm, lifted.partition).stacked()))
            worst_async = max(worst_async, float(dev))
    dt = time.perf_counter() - t0
    ok = worst_sync <= 1e-12 and worst_async <= 1e-12 and dt < 60
    acceptance(5, "distributed rounds equal lifted centralized steps", ok,
               f"max deviation sync={worst_sync:.2e}, async={worst_async:.2e}, {dt:.1f}s")
    assert ok


# %% 6

def test_criterion_6_formation_benchmark(acceptance, tmp_path):
    t0 = time.perf_counter()
    rep = run_benchmark(BenchmarkConfig(m=5, N=3, seed=0, p=0.5, budget=50_000, target=1e-6, tol=1e-8,
                                        out_dir=str(tmp_path / "m5")))
    s = rep.summary
    hit_sync, hit_async = s["sync_transmissions_to_target"], s["async_transmissions_to_target"]
    a = hit_sync is not None and hit_async is not None and hit_sync <= 50_000 and hit_async <= 50_000
    b = s["sync_rate_r2"] > 0.95 and s["async_rate_r2"] > 0.95
    base = rep.traces["baseline"]
    reached = first_hit(base, "dist_v", 1e-2)
    base_at = base.column("dist_v")[base.column("transmissions") <= (hit_sync or 0)]
    c = hit_sync is not None and (reached is None or reached > hit_sync) and base_at.size > 0 and base_at.min() > 1e-2
    dt = time.perf_counter() - t0
    ok6 = a and b and c and rep.reference_certified and dt < 300
    acceptance(6, "formation benchmark m=5", ok6,
               f"(a) sync {hit_sync}, async {hit_async} transmissions to 1e-6; "
               f"(b) R2 sync={s['sync_rate_r2']:.4f}, async={s['async_rate_r2']:.4f}; "
               f"(c) baseline best {base_at.min() if base_at.size else float('nan'):.3g} by {hit_sync}; {dt:.1f}s")

    # m = 50 smoke run: sync TriPD-Dist contracts towards a certified reference
    t1 = time.perf_counter()
    fp = default_problem(50, 3)
    graph = build_formation_problem(fp)
    lifted = lift_to_global(graph)
    ref = reference_solution(lifted.problem, lifted.sigma, lifted.gamma, eps=1e-9, max_iters=200_000)
    run = run_distributed(graph, "sync", 10**8, ref.z, 1e-6, seed=0, monitor=monitor_indices(fp, lifted),
                          lifted=lifted, max_rounds=1500)
    d = run.trace.column("dist_monitor")
    fit = fit_linear_rate(d, run.trace.column("round"))
    smoke = ref.certified and d[-1] <= 1e-2 * d[0] and fit.slope < 0
    acceptance(6, "formation m=50 smoke run", smoke,
               f"dist {d[0]:.3g} -> {d[-1]:.3g} in {run.rounds} rounds, "
               f"{run.transmissions} transmissions, {time.perf_counter() - t1:.1f}s")
    assert ok6 and smoke


# %% 7

def moreau_gap(p, pc, x, s):
    return float(np.max(np.abs(x - p(x, s) - s * pc(x / s, 1.0 / s))))


def catalog(rng, n):
    """Every catalog entry paired with a conjugate prox."""
    lo, hi = -rng.uniform(0.1, 2, n), rng.uniform(0.1, 2, n)
    w = rng.uniform(0.1, 2, n)
    a, b, c, d = (rng.uniform(0.1, 2, n) for _ in range(4))
    A = rng.standard_normal((n + 1, n))
    E = rng.standard_normal((max(n - 1, 1), n))
    half = n // 2
    sep = prox_separable([(list(range(half)), prox_l1(half, 0.4)),
                          (list(range(half, n)), prox_box(lo[half:], hi[half:]))])
    pairs = [
        (prox_zero(n), prox_point(n)),
        (prox_point(n, rng.standard_normal(n)), None),
        (prox_box(lo, hi), prox_box_support(lo, hi)),
        (prox_box_support(lo, hi), prox_box(lo, hi)),
        (prox_l1(n, w), prox_linf_ball(n, w)),
        (prox_linf_ball(n, w), prox_l1(n, w)),
        (prox_piecewise_quadratic(a, b, c, d), prox_piecewise_quadratic_conj(a, b, c, d)),
        (prox_piecewise_quadratic_conj(a, b, c, d), prox_piecewise_quadratic(a, b, c, d)),
        (prox_quadratic(A, rng.standard_normal(n + 1)), None),
        (project_affine(E, rng.standard_normal(E.shape[0])), None),
        (sep, None),
        (prox_scaled_step(prox_l1(n, w), 2.5), None),
    ]
    if n % 2 == 0:
        pairs.append((prox_pair_sum(rng.standard_normal(n // 2)), None))
    return [(p, pc if pc is not None else prox_conjugate(p)) for p, pc in pairs]


def smooth_terms(rng):
    n = 5
    H = rng.standard_normal((n, n))
    terms = [
        SmoothTerm.zero(n),
        SmoothTerm.quadratic(H @ H.T, rng.standard_normal(n)),
        SmoothTerm.least_squares(rng.standard_normal((7, n)), rng.standard_normal(7)),
        random_plq(6, 3, 5)[0].f,
        lift_to_global(random_graph(4, 3)).problem.f,
    ]
    terms += [a.f for a in build_formation_problem(default_problem(3, 2)).agents]
    return terms


def fd_error(f, x, h=1e-6):
    fd = np.array([(f.value(x + h * e) - f.value(x - h * e)) / (2 * h) for e in np.eye(x.size)])
    g = f.grad(x)
    return float(np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g)))


def test_criterion_7_numerical_hygiene(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    moreau = 0.0
    for trial in range(40):
        n = 2 + trial % 5
        x = 3 * rng.standard_normal(n)
        s = rng.uniform(0.05, 5.0, n)
        for p, pc in catalog(rng, n):
            moreau = max(moreau, moreau_gap(p, pc, x, s) / max(1.0, np.max(np.abs(x))))
    fd = 0.0
    for f in smooth_terms(rng):
        for _ in range(3):
            fd = max(fd, fd_error(f, rng.standard_normal(f.dim)))
    kkt_ratio = 0.0
    cases = [(qp_1d(), Metric.diagonal([1.0]), Metric.diagonal([0.5]), 1e-12)]
    cases += [random_plq(8 + k, 4 + k % 3, 300 + k) + (1e-11,) for k in range(8)]
    lifted = lift_to_global(consensus_pair(1.0, 4.0))
    cases.append((lifted.problem, lifted.sigma, lifted.gamma, 1e-12))
    lifted = lift_to_global(random_graph(4, 2))
    cases.append((lifted.problem, lifted.sigma, lifted.gamma, 1e-10))
    certified = 0
    for p, sig, gam, eps in cases:
        ref = reference_solution(p, sig, gam, eps=eps, max_iters=10**7)
        if ref.certified:
            certified += 1
            kkt_ratio = max(kkt_ratio, kkt_residual(ref.z, p) / eps)
    dt = time.perf_counter() - t0
    ok = moreau <= 1e-10 and fd <= 1e-6 and kkt_ratio <= 10 and certified == len(cases) and dt < 60
    acceptance(7, "numerical hygiene", ok,
               f"Moreau gap {moreau:.2e}, gradient FD error {fd:.2e}, "
               f"max KKT/eps {kkt_ratio:.2f} over {certified}/{len(cases)} certified, {dt:.1f}s")
    assert ok


# %% 8

def test_criterion_8_cli_determinism(acceptance, tmp_path, capsys):
    from tripd.cli import run

    cfg = lambda name: str(CONFIGS / name)  # noqa: E731
    runs = [
        ["solve", "--config", cfg("random_plq.json"), "--seed", "3"],
        ["solve", "--config", cfg("lasso_box.json")],
        ["bc", "--config", cfg("lasso_box.json"), "--seed", "12345678901234567890"],
        ["dist", "--config", cfg("consensus3.json"), "--mode", "sync"],
        ["dist", "--config", cfg("consensus3.json"), "--mode", "async", "--seed", "9"],
        ["formation", "--m", "3", "--budget", "5000", "--max-iters", "30", "--seed", "2"],
    ]
    t0 = time.perf_counter()
    differing = []
    for k, argv in enumerate(runs):
        outs = []
        for rep in range(2):
            out = tmp_path / f"{k}_{rep}"
            run(argv + ["--out", str(out)])
            outs.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))})
        if not outs[0] or outs[0] != outs[1]:
            differing.append(argv[0])
    capsys.readouterr()
    ok = not differing
    acceptance(8, "CLI determinism", ok,
               f"{len(runs)} commands run twice, differing: {differing or 'none'}, {time.perf_counter() - t0:.1f}s")
    assert ok
