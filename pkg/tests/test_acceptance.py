"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with -s to see them live). The
shared large steady-state run backs both the fixed-point reproduction and
the tail moment bound. Expected total runtime: a few minutes.
"""

import math

import numpy as np
import pytest

from oracles import grid_distributions, min_of_d_oracle
from sparselb.graph import (
    braess_example,
    complete_bipartite,
    generate_fixed_server_degree,
    generate_geometric,
    generate_inhomogeneous,
    log_squared_degree_family,
    perfect_matching,
    radius_for_mean_degree,
)
from sparselb.meanfield import (
    empty_occupancy,
    fixed_point,
    integrate_ode,
    master_inequality_margin,
    psi_series,
    stability_weights,
)
from sparselb.policy import empirical_lipschitz, jsqd_policy
from sparselb.properties import (
    optimal_subcriticality_load,
    sparsity_deficiency,
    sparsity_trend,
)
from sparselb.records import compare_trajectories
from sparselb.simulator import (
    coupled_simulate,
    simulate,
    steady_state,
    tail_moment_margin,
)

LAMBDA = 0.8
D = 2
# stationary mean queue length from the recursion q_i = lambda * q_{i-1}^d
TARGET_MEAN_QLEN = float(fixed_point(LAMBDA, D, 12)[1:].sum())


def _verdict(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def steady_complete_4000():
    return steady_state(
        complete_bipartite(4000, 4000), D, LAMBDA,
        warmup=50.0, measure=200.0, replicas=8, seed=101,
    )


def test_criterion_01_fixed_point_reproduction(steady_complete_4000):
    got = steady_complete_4000.mean_qlen
    rel = abs(got - TARGET_MEAN_QLEN) / TARGET_MEAN_QLEN
    _verdict(
        "1 fixed-point reproduction (complete N=4000)",
        rel <= 0.03,
        f"mean_qlen={got:.4f} target={TARGET_MEAN_QLEN:.4f} rel_err={rel:.4%} (tol 3%)",
    )


def test_criterion_02_sparse_graph_matches_full_flexibility():
    means = []
    for seed in range(8):
        g = generate_fixed_server_degree(4000, 4000, 69, seed=seed)
        s = steady_state(g, D, LAMBDA, warmup=50.0, measure=200.0, replicas=1,
                         seed=200 + seed)
        means.append(s.mean_qlen)
    got = float(np.mean(means))
    rel = abs(got - TARGET_MEAN_QLEN) / TARGET_MEAN_QLEN
    _verdict(
        "2 sparse fixed-degree matches full flexibility",
        rel <= 0.05,
        f"mean over 8 seeds={got:.4f} target={TARGET_MEAN_QLEN:.4f} rel_err={rel:.4%} (tol 5%)",
    )


def test_criterion_03_transient_trajectory():
    depth = 12
    sim = simulate(complete_bipartite(10_000, 10_000), D, LAMBDA, 20.0,
                   seed=303, depth=depth)
    ode = integrate_ode(LAMBDA, empty_occupancy(depth), 20.0, depth=depth, d=D)
    sup, _ = compare_trajectories(sim, ode.record, levels=8)
    _verdict(
        "3 transient trajectory vs mean-field ODE (N=10^4)",
        sup <= 0.02,
        f"sup |q_i(sim) - q_i(ode)| over i<=8 = {sup:.5f} (tol 0.02)",
    )


def _coupling_fixtures():
    fixtures = []
    sizes_fd = (50, 120, 250, 400, 700, 1000)
    for i, n in enumerate(sizes_fd):
        c = max(2, math.ceil(math.log(n) ** 2 / 2))
        fixtures.append((generate_fixed_server_degree(n, n, c, seed=i), False))
    for i, n in enumerate((80, 150, 300, 600, 900)):
        p = min(1.0, math.log(n) ** 2 / n)
        fixtures.append((generate_inhomogeneous(n, n, p, seed=10 + i), False))
    for i, n in enumerate((60, 200, 500, 800)):
        r = radius_for_mean_degree(n, math.log(n) ** 2)
        fixtures.append((generate_geometric(n, n, r, seed=20 + i), True))
    fixtures.append((complete_bipartite(60, 40), False))
    fixtures.append((complete_bipartite(100, 100), False))
    fixtures.append((perfect_matching(50), True))
    fixtures.append((perfect_matching(200), True))
    fixtures.append((braess_example(), False))
    return fixtures


def test_criterion_04_coupling_inequality():
    fixtures = _coupling_fixtures()
    assert len(fixtures) == 20
    total_events = 0
    worst_margin = 0
    for idx, (g, force) in enumerate(fixtures):
        horizon = max(6.0, 1_150_000 / len(fixtures) / (1.8 * g.n_servers))
        coupled = coupled_simulate(
            g, D, LAMBDA, horizon, seed=400 + idx, allow_disconnected=force
        )
        total_events += coupled.event_count
        worst_margin = min(worst_margin, coupled.margin_min)
    _verdict(
        "4 coupling inequality (20 mixed fixtures)",
        total_events >= 1_000_000 and worst_margin >= 0,
        f"events={total_events} min margin={worst_margin} (0 violations required)",
    )


def test_criterion_05_policy_oracle():
    worst = 0.0
    count = 0
    for x in grid_distributions(6, 8):
        for d in (1, 2, 3):
            got = jsqd_policy(d).probabilities(x)
            worst = max(worst, float(np.max(np.abs(got - min_of_d_oracle(x, d)))))
        count += 1
    rng = np.random.default_rng(505)
    worst_sum = 0.0
    for _ in range(10_000):
        x = rng.dirichlet(np.ones(int(rng.integers(1, 20))))
        p = jsqd_policy(2).probabilities(x)
        worst_sum = max(worst_sum, abs(float(p.sum()) - 1.0))
    _verdict(
        "5 policy oracle (min-of-d enumeration)",
        worst <= 1e-12 and worst_sum <= 1e-10,
        f"{count} grid dists x d in 1..3: max |p - oracle| = {worst:.2e} (tol 1e-12); "
        f"max |sum p - 1| = {worst_sum:.2e} on 1e4 random inputs (tol 1e-10)",
    )


def test_criterion_06_lipschitz_bound():
    details = []
    ok = True
    for d in (1, 2, 3, 4):
        bound = 2.0 * math.factorial(d) * d * d
        est = empirical_lipschitz(jsqd_policy(d), 100_000, np.random.default_rng(600 + d))
        ok = ok and est <= bound + 1e-9
        details.append(f"d={d}: {est:.3f} <= {bound:.0f}")
    _verdict("6 Lipschitz bound (1e5 probe pairs per d)", ok, "; ".join(details))


def test_criterion_07_subcriticality_oracle():
    braess = optimal_subcriticality_load(braess_example(), 2)
    ok = abs(braess.optimal_load - 5.0 / 3.0) <= 1e-6
    ok &= abs(optimal_subcriticality_load(perfect_matching(6), 2).optimal_load - 1.0) <= 1e-6
    for n, m in ((4, 4), (8, 5), (5, 9)):
        ok &= abs(optimal_subcriticality_load(complete_bipartite(n, m), 2).optimal_load - 1.0) <= 1e-6
    rng = np.random.default_rng(707)
    worst_gap = math.inf
    for _ in range(12):
        n, m = int(rng.integers(3, 9)), int(rng.integers(2, 8))
        g = generate_inhomogeneous(n, m, 0.5, seed=int(rng.integers(1e6)))
        rep = optimal_subcriticality_load(g, 2)
        worst_gap = min(worst_gap, rep.uniform_metric - rep.optimal_load)
    ok &= worst_gap >= -1e-9
    _verdict(
        "7 subcriticality oracle",
        bool(ok),
        f"braess={braess.optimal_load:.7f} (5/3 +- 1e-6); matching/complete = 1.0; "
        f"min(uniform - optimal) = {worst_gap:.2e} >= 0",
    )


def test_criterion_08_sparsity_checker():
    ok = all(
        sparsity_deficiency(complete_bipartite(8, 5), eps, mode="exact").deficiency == 0.0
        for eps in (0.01, 0.05, 0.1, 0.25, 0.5, 0.9)
    )
    ok &= sparsity_deficiency(perfect_matching(4), 0.4, mode="exact").deficiency == 1.0
    rng = np.random.default_rng(808)
    violations = 0
    for trial in range(50):
        n = int(rng.integers(4, 15))
        m = int(rng.integers(3, 12))
        kind = trial % 3
        seed = int(rng.integers(1e6))
        if kind == 0:
            g = generate_inhomogeneous(n, m, 0.4, seed=seed)
        elif kind == 1:
            c = max(1, min(m, math.ceil(2 * m / n) + 1))
            g = generate_fixed_server_degree(n, m, c, seed=seed)
        else:
            g = generate_geometric(n, m, 0.6, seed=seed)
        eps = float(rng.uniform(0.05, 0.5))
        exact = sparsity_deficiency(g, eps, mode="exact").deficiency
        sampled = sparsity_deficiency(g, eps, mode="sampled", budget=64, seed=trial).deficiency
        if sampled > exact + 1e-15:
            violations += 1
    _verdict(
        "8 sparsity checker",
        bool(ok) and violations == 0,
        f"complete=0 at all eps; matching(4)@0.4=1; "
        f"lower-bound violations on 50 random instances: {violations}",
    )


def test_criterion_09_global_stability():
    details = []
    ok = True
    for lam in (0.5, 0.8):
        depth = 10
        q_star = fixed_point(lam, D, depth)
        res = integrate_ode(lam, empty_occupancy(depth), 50.0, depth=depth, d=D)
        weights = stability_weights(lam, depth)
        psi = psi_series(res.record, weights, q_star)
        mask = (psi.times >= 1.0) & (psi.values > 1e-10)
        decreasing = bool(np.all(np.diff(psi.values[mask]) < 0.0))
        slope_ok = psi.decay_rate is not None and psi.decay_rate < -0.01
        master = master_inequality_margin(
            stability_weights(lam, 30), fixed_point(lam, D, 40)
        )
        ok = ok and decreasing and slope_ok and master >= -1e-12
        details.append(
            f"lam={lam}: slope={psi.decay_rate:.4f}, strictly decreasing={decreasing}, "
            f"master margin={master:.2e}"
        )
    _verdict("9 global stability (weighted-l1 decay)", ok, "; ".join(details))


def test_criterion_10_tail_moment_bound(steady_complete_4000):
    qbar = steady_complete_4000.occupancy_mean
    margins = [tail_moment_margin(qbar, LAMBDA, k) for k in range(1, 7)]
    ok = all(m >= 0.0 for m in margins)
    _verdict(
        "10 tail moment bound (prefactor 9 at lambda=0.8)",
        ok,
        "margins k=1..6: " + ", ".join(f"{m:.4f}" for m in margins),
    )


def test_criterion_11_graph_condition_trends():
    rows = sparsity_trend(
        log_squared_degree_family(),
        epsilons=[0.1],
        sizes=[250, 1000, 4000],
        seeds=list(range(20)),
        budget=256,
    )
    medians = {}
    metric_at_4000 = []
    for n in (250, 1000, 4000):
        vals = [r.deficiency_lb for r in rows if r.n == n]
        medians[n] = float(np.median(vals))
    metric_at_4000 = [r.uniform_metric for r in rows if r.n == 4000]
    decreasing = medians[250] > medians[1000] > medians[4000]
    metric_ok = max(metric_at_4000) <= 1.25
    _verdict(
        "11 statistical graph-condition trends",
        decreasing and metric_ok,
        f"median deficiency: {medians[250]:.4f} > {medians[1000]:.4f} > "
        f"{medians[4000]:.4f}; max uniform metric @4000 = {max(metric_at_4000):.4f} <= 1.25",
    )
