import math

import numpy as np
import pytest

from sparselb.graph import (
    BipartiteGraph,
    GraphFormatError,
    GraphGenerationError,
    GraphSpec,
    braess_example,
    complete_bipartite,
    floyd_sample,
    generate_fixed_server_degree,
    generate_geometric,
    generate_inhomogeneous,
    perfect_matching,
    radius_for_mean_degree,
    read_graph,
    write_graph,
)


def test_complete_bipartite_small():
    g = complete_bipartite(2, 3)
    assert g.n_edges == 6
    assert all(g.dispatcher_degree(w) == 2 for w in range(3))
    g1 = complete_bipartite(1, 1)
    assert g1.n_edges == 1
    assert list(g1.edges()) == [(0, 0)]


def test_complete_bipartite_large_is_implicit():
    # must not materialize 10^8 edges
    g = complete_bipartite(10**4, 10**4)
    assert g.dispatcher_degree(0) == 10**4
    assert g.server_degree(9999) == 10**4
    assert g.n_edges == 10**8
    assert g.is_complete and g.is_connected


def test_perfect_matching():
    g = perfect_matching(4)
    assert sorted(g.edges()) == [(i, i) for i in range(4)]
    assert perfect_matching(1) == complete_bipartite(1, 1)
    g6 = perfect_matching(6)
    assert g6.n_edges == 6
    assert not g6.is_connected  # six components


def test_braess_example():
    g = braess_example()
    assert g.n_servers == g.n_dispatchers == 6
    assert g.n_edges == 14
    # server 0: own dispatcher plus the four sharing dispatchers
    assert g.server_degree(0) == 5
    assert g.server_degree(3) == 1
    matching_edges = set((i, i) for i in range(6))
    assert matching_edges <= set(g.edges())
    assert g.is_connected


def test_adjacency_reverse_consistency():
    # re-derive one direction from the other on every generator
    gs = [
        braess_example(),
        generate_fixed_server_degree(30, 20, 5, seed=3),
        generate_inhomogeneous(25, 15, 0.3, seed=4),
        generate_geometric(40, 30, 0.4, seed=5),
    ]
    for g in gs:
        rederived = [[] for _ in range(g.n_servers)]
        for w, row in enumerate(g.adjacency):
            for v in row:
                rederived[v].append(w)
        assert [list(r) for r in g.reverse_adjacency] == rederived
        rederived_adj = [[] for _ in range(g.n_dispatchers)]
        for v, row in enumerate(g.reverse_adjacency):
            for w in row:
                rederived_adj[w].append(v)
        assert [list(r) for r in g.adjacency] == rederived_adj


def test_degree_zero_dispatcher_rejected():
    with pytest.raises(ValueError):
        BipartiteGraph(3, 2, [[0, 1], []])


def test_duplicate_and_range_validation():
    with pytest.raises(ValueError):
        BipartiteGraph(3, 1, [[0, 0]])
    with pytest.raises(ValueError):
        BipartiteGraph(3, 1, [[0, 3]])


def test_fixed_degree_forced_cases():
    assert generate_fixed_server_degree(4, 4, 4, seed=0) == complete_bipartite(4, 4)
    g = generate_fixed_server_degree(4, 4, 2, seed=1)
    assert g.n_edges == 8
    assert all(g.server_degree(v) == 2 for v in range(4))


def test_fixed_degree_rejects_bad_c():
    with pytest.raises(ValueError):
        generate_fixed_server_degree(4, 4, 5, seed=0)
    with pytest.raises(ValueError):
        generate_fixed_server_degree(4, 4, 0, seed=0)


def test_fixed_degree_impossible_regime_errors():
    # 2 servers of degree 1 cannot cover 3 dispatchers
    with pytest.raises(GraphGenerationError):
        generate_fixed_server_degree(2, 3, 1, seed=0)


def test_fixed_degree_every_seed_exact_degree():
    for seed in range(20):
        g = generate_fixed_server_degree(50, 37, 9, seed=seed)
        assert all(g.server_degree(v) == 9 for v in range(50))
        assert g.n_edges == 450


def test_fixed_degree_dispatcher_degree_statistics():
    # each dispatcher degree is a sum of N indicators with mean c/M
    n = m = 1000
    c = 48
    degs = []
    for seed in range(100):
        g = generate_fixed_server_degree(n, m, c, seed=seed)
        degs.append(g.dispatcher_degrees())
    degs = np.concatenate(degs).astype(float)
    se = degs.std(ddof=1) / math.sqrt(len(degs))
    assert abs(degs.mean() - c * n / m) <= 3 * se + 1e-12


def test_inhomogeneous_p_one_is_complete():
    assert generate_inhomogeneous(5, 3, 1.0, seed=0) == complete_bipartite(5, 3)


def test_inhomogeneous_rejects_bad_p():
    with pytest.raises(ValueError):
        generate_inhomogeneous(5, 3, 0.0, seed=0)
    with pytest.raises(ValueError):
        generate_inhomogeneous(5, 3, [0.5, 1.2, 0.5], seed=0)


def test_inhomogeneous_degree_statistics():
    n = m = 1000
    p = 0.048
    degs = []
    for seed in range(100):
        g = generate_inhomogeneous(n, m, p, seed=seed)
        degs.append(g.dispatcher_degrees())
    degs = np.concatenate(degs).astype(float)
    se = degs.std(ddof=1) / math.sqrt(len(degs))
    assert abs(degs.mean() - n * p) <= 3 * se


def test_inhomogeneous_heterogeneous_groups():
    n = m = 500
    p = np.where(np.arange(m) < m // 2, 0.1, 0.5)
    lo, hi = [], []
    for seed in range(20):
        g = generate_inhomogeneous(n, m, p, seed=seed)
        degs = g.dispatcher_degrees().astype(float)
        lo.append(degs[: m // 2])
        hi.append(degs[m // 2 :])
    for group, target in ((np.concatenate(lo), 50.0), (np.concatenate(hi), 250.0)):
        se = group.std(ddof=1) / math.sqrt(len(group))
        assert abs(group.mean() - target) <= 3 * se


def test_inhomogeneous_edge_count_concentration():
    n, m, p = 200, 200, 0.1
    counts = np.array(
        [generate_inhomogeneous(n, m, p, seed=s).n_edges for s in range(100)], dtype=float
    )
    sd_single = math.sqrt(n * m * p * (1 - p))
    assert abs(counts.mean() - n * m * p) <= 4 * sd_single / math.sqrt(len(counts))


def test_geometric_full_radius_is_complete():
    g = generate_geometric(6, 4, math.sqrt(2), seed=0)
    assert g.is_complete


def test_geometric_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        generate_geometric(5, 5, 0.0, seed=0)


def test_geometric_positions_kept_and_consistent():
    g = generate_geometric(30, 20, 0.35, seed=8)
    sxy = g.meta["server_xy"]
    dxy = g.meta["dispatcher_xy"]
    for w, row in enumerate(g.adjacency):
        dist2 = ((sxy - dxy[w]) ** 2).sum(axis=1)
        assert sorted(np.flatnonzero(dist2 <= 0.35**2).tolist()) == list(row)


def test_geometric_mean_degree():
    # radius tuned so pi r^2 N = ln^2 N; boundary effects covered by the 10%
    n = 2000
    target = math.log(n) ** 2
    radius = radius_for_mean_degree(n, target)
    means = []
    for seed in range(50):
        g = generate_geometric(n, n, radius, seed=seed)
        means.append(g.dispatcher_degrees().mean())
    assert abs(np.mean(means) - target) <= 0.10 * target


def test_generator_determinism():
    specs = [
        GraphSpec("fixed-degree", n=40, m=30, c=6, seed=11),
        GraphSpec("inhomogeneous", n=40, m=30, p=0.2, seed=11),
        GraphSpec("geometric", n=40, m=30, radius=0.3, seed=11),
    ]
    for spec in specs:
        assert spec.build() == spec.build()


def test_different_seeds_differ():
    a = generate_fixed_server_degree(50, 50, 5, seed=0)
    b = generate_fixed_server_degree(50, 50, 5, seed=1)
    assert a != b


def test_floyd_sample_uniformity():
    # all 2-subsets of range(4) equally likely
    import random

    rng = random.Random(0)
    counts = {}
    for _ in range(60000):
        key = frozenset(floyd_sample(4, 2, rng.randrange))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    for c in counts.values():
        assert abs(c - 10000) < 500  # ~4 sigma


def test_graph_spec_validation():
    with pytest.raises(ValueError):
        GraphSpec("nonsense", n=4, m=4).build()
    with pytest.raises(ValueError):
        GraphSpec("fixed-degree", n=4, m=4).build()  # c missing
    with pytest.raises(ValueError):
        GraphSpec("geometric", n=4, m=4, radius=5.0).build()
    assert GraphSpec("braess").build() == braess_example()


def test_io_round_trips(tmp_path):
    for g in (perfect_matching(2), braess_example(), generate_inhomogeneous(9, 7, 0.5, seed=2)):
        path = tmp_path / "g.bpg"
        write_graph(g, path)
        assert read_graph(path) == g


def test_io_braess_edge_count(tmp_path):
    path = tmp_path / "braess.bpg"
    write_graph(braess_example(), path)
    assert read_graph(path).n_edges == 14


def test_io_canonical_order(tmp_path):
    path = tmp_path / "g.bpg"
    write_graph(braess_example(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "BPG v1"
    edges = [tuple(map(int, ln.split())) for ln in lines[2:]]
    assert edges == sorted(edges)


def test_io_accepts_any_order(tmp_path):
    path = tmp_path / "g.bpg"
    path.write_text("BPG v1\n2 2 3\n1 1\n0 0\n0 1\n")
    g = read_graph(path)
    assert sorted(g.edges()) == [(0, 0), (0, 1), (1, 1)]


@pytest.mark.parametrize(
    "content",
    [
        "BGP v1\n2 2 1\n0 0\n",  # bad magic
        "BPG v1\n2 2\n",  # missing edge count
        "BPG v1\n4 1 1\n5 0\n",  # server index out of range
        "BPG v1\n2 2 2\n0 0\n0 0\n",  # duplicate
        "BPG v1\n2 2 2\n0 0\n",  # count mismatch
        "BPG v1\n2 2 1\n0 0 0\n",  # malformed edge line
    ],
)
def test_io_rejects_malformed(tmp_path, content):
    path = tmp_path / "bad.bpg"
    path.write_text(content)
    with pytest.raises(GraphFormatError):
        read_graph(path)


def test_connectivity_flag_matches_bfs():
    g = braess_example()
    assert g.is_connected
    # two disjoint stars: dispatchers {0} -> {0,1}, {1} -> {2}
    g2 = BipartiteGraph(3, 2, [[0, 1], [2]])
    assert not g2.is_connected
