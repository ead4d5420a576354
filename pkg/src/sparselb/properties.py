"""Certification of compatibility graphs against two sufficient conditions.

Proportional sparsity: for every server subset U, all but a vanishing
fraction of dispatchers see U in their neighborhood in proportion |U|/N.
The checker reports the worst deviation found: exactly (full enumeration,
small N) or as a certified lower bound (random probing plus greedy local
search). No efficient upper-bound certificate is known for the sup over
2^N subsets, so sampled mode never claims one.

Subcriticality: some static randomized split of each dispatcher's load
keeps every server's normalized load at most 1 in the limit. The uniform
split gives the closed-form metric max_v (N/M) sum_{w ~ v} 1/deg(w); the
exact finite-N min-max load is solved by bisection on the target load with
a max-flow feasibility check (monotone in the target, so no LP needed).

Both conditions are asymptotic statements about graph sequences; at a
single finite N these routines report the finite-N quantities and leave
threshold interpretation to the caller.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .graph import BipartiteGraph, GraphFamily

ENUMERATION_CAP = 10**6
EXACT_MAX_SERVERS = 22
BISECTION_ITERATIONS = 40
LOAD_TOL = 1e-6
_FLOW_EPS = 1e-12


class EnumerationCapError(ValueError):
    """Raised when the exact min-max would enumerate too many (w, U) pairs."""


# ---------------------------------------------------------------------------
# subcriticality


@dataclass
class SubcriticalityReport:
    """Finite-N load diagnostics for one graph and sample size d."""

    uniform_metric: float
    argmax_server: int
    optimal_load: Optional[float] = None
    gamma_support_size: Optional[int] = None

    @property
    def optimal_computed(self) -> bool:
        return self.optimal_load is not None


def uniform_subcriticality_metric(graph: BipartiteGraph, d: int = 2) -> tuple[float, int]:
    """Max over servers of (N/M) sum_{w ~ v} 1/deg(w), with its argmax.

    Under the uniform split each dispatcher contributes 1/deg(w) to every
    neighbor regardless of d, so the value does not depend on d; the
    parameter is accepted for interface symmetry with the exact solver.
    """
    n, m = graph.n_servers, graph.n_dispatchers
    if graph.is_complete:
        # (N/M) * M * (1/N) without float accumulation error
        return 1.0, 0
    loads = np.zeros(n)
    for w, row in enumerate(graph.adjacency):
        loads[np.asarray(row, dtype=np.int64)] += 1.0 / len(row)
    loads *= n / m
    argmax = int(np.argmax(loads))
    return float(loads[argmax]), argmax


class _Dinic:
    """Max flow on float capacities (small networks; oracle-grade)."""

    def __init__(self, n_nodes: int):
        self.n = n_nodes
        self.head: list[list[int]] = [[] for _ in range(n_nodes)]
        self.to: list[int] = []
        self.cap: list[float] = []

    def add_edge(self, u: int, v: int, capacity: float) -> int:
        idx = len(self.to)
        self.head[u].append(idx)
        self.to.append(v)
        self.cap.append(capacity)
        self.head[v].append(idx + 1)
        self.to.append(u)
        self.cap.append(0.0)
        return idx

    def _bfs(self, s: int, t: int) -> Optional[list[int]]:
        level = [-1] * self.n
        level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for idx in self.head[u]:
                v = self.to[idx]
                if self.cap[idx] > _FLOW_EPS and level[v] < 0:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level if level[t] >= 0 else None

    def _dfs(self, u: int, t: int, pushed: float, level: list[int], it: list[int]) -> float:
        if u == t:
            return pushed
        while it[u] < len(self.head[u]):
            idx = self.head[u][it[u]]
            v = self.to[idx]
            if self.cap[idx] > _FLOW_EPS and level[v] == level[u] + 1:
                got = self._dfs(v, t, min(pushed, self.cap[idx]), level, it)
                if got > _FLOW_EPS:
                    self.cap[idx] -= got
                    self.cap[idx ^ 1] += got
                    return got
            it[u] += 1
        return 0.0

    def max_flow(self, s: int, t: int) -> float:
        total = 0.0
        while True:
            level = self._bfs(s, t)
            if level is None:
                return total
            it = [0] * self.n
            while True:
                pushed = self._dfs(s, t, math.inf, level, it)
                if pushed <= _FLOW_EPS:
                    break
                total += pushed


def _enumerate_pairs(graph: BipartiteGraph, d: int):
    """All (dispatcher, server-subset) pairs with per-pair supply."""
    n, m = graph.n_servers, graph.n_dispatchers
    total = 0
    for row in graph.adjacency:
        total += math.comb(len(row), min(d, len(row)))
        if total > ENUMERATION_CAP:
            raise EnumerationCapError(
                f"exact min-max needs {total}+ (dispatcher, subset) pairs "
                f"(cap {ENUMERATION_CAP}); use uniform_subcriticality_metric instead"
            )
    pairs = []
    for w, row in enumerate(graph.adjacency):
        dw = min(d, len(row))
        supply = (n / m) / math.comb(len(row), dw)
        for subset in combinations(row, dw):
            pairs.append((w, subset, supply))
    return pairs


def optimal_subcriticality_load(
    graph: BipartiteGraph,
    d: int,
    tol: float = LOAD_TOL,
) -> SubcriticalityReport:
    """Exact finite-N min over static splits gamma of the max server load.

    Feasibility of target load t is a max-flow problem (source -> each
    (w, U) pair with its supply -> member servers -> sink at capacity t);
    feasibility is monotone in t, so bisection over
    [1, uniform_metric] converges, and the returned gamma is read off the
    flow at the feasible endpoint. Absolute tolerance `tol` on the load.
    """
    uniform, argmax = uniform_subcriticality_metric(graph, d)
    pairs = _enumerate_pairs(graph, d)
    n = graph.n_servers
    n_pairs = len(pairs)
    source = 0
    sink = 1 + n_pairs + n
    total_supply = sum(p[2] for p in pairs)  # equals N/M * M = N

    def solve(t: float):
        net = _Dinic(sink + 1)
        pair_edges = []
        for k, (_, subset, supply) in enumerate(pairs):
            net.add_edge(source, 1 + k, supply)
            edges = [net.add_edge(1 + k, 1 + n_pairs + v, supply) for v in subset]
            pair_edges.append(edges)
        for v in range(n):
            net.add_edge(1 + n_pairs + v, sink, t)
        flow = net.max_flow(source, sink)
        return flow >= total_supply - 1e-9, net, pair_edges

    lo, hi = 1.0, max(1.0, uniform)
    feasible_lo, net, pair_edges = solve(lo)
    if feasible_lo:
        optimal = lo
    else:
        feasible_hi, net, pair_edges = solve(hi)  # uniform split attains hi
        assert feasible_hi, "uniform split must be feasible at its own load"
        for _ in range(BISECTION_ITERATIONS):
            if hi - lo <= tol / 4:
                break
            mid = 0.5 * (lo + hi)
            ok, net_mid, edges_mid = solve(mid)
            if ok:
                hi, net, pair_edges = mid, net_mid, edges_mid
            else:
                lo = mid
        optimal = hi

    # gamma from the flow at the feasible endpoint: fraction of each pair's
    # supply sent to each member server
    support = 0
    for (w, subset, supply), edges in zip(pairs, pair_edges):
        for idx in edges:
            sent = net.cap[idx ^ 1]  # reverse capacity = routed flow
            if sent > 1e-12 * max(1.0, supply):
                support += 1

    assert optimal <= uniform + 1e-9, "uniform split must be feasible"
    assert optimal >= 1.0 - 1e-9, "flow conservation bounds the load below by 1"
    return SubcriticalityReport(
        uniform_metric=uniform,
        argmax_server=argmax,
        optimal_load=float(optimal),
        gamma_support_size=support,
    )


# ---------------------------------------------------------------------------
# proportional sparsity


@dataclass
class SparsityReport:
    """Worst observed fraction of dispatchers whose view of some server
    subset deviates from proportionality by at least epsilon.

    In sampled mode the deficiency is a certified lower bound on the true
    sup over subsets, never an upper bound.
    """

    epsilon: float
    deficiency: float
    witness_subset: tuple[int, ...]
    mode: str
    subsets_probed: int


def bad_dispatcher_count(graph: BipartiteGraph, subset: Sequence[int], epsilon: float) -> int:
    """Number of dispatchers w with ||N_w & U|/deg(w) - |U|/N| >= epsilon.

    The boundary uses >= exactly, tested as |count*N - size*deg| >=
    eps*(deg*N): the left side is an exact integer, invariant under
    complementing U, so every checker mode agrees bit-for-bit and the
    complement symmetry of the deviation is preserved through floats.
    """
    members = set(subset)
    n = graph.n_servers
    size = len(members)
    bad = 0
    for row in graph.adjacency:
        deg = len(row)
        inter = sum(1 for v in row if v in members)
        if abs(inter * n - size * deg) >= epsilon * (deg * n):
            bad += 1
    return bad


def _exact_deficiency(graph: BipartiteGraph, epsilon: float) -> tuple[int, int, int]:
    """(best bad count, witness mask, subsets probed) by full enumeration.

    The bad set of U equals the bad set of its complement (the deviation is
    invariant), so only masks with the top server bit clear are scanned --
    half the work; the symmetry is asserted on the witness.
    """
    n, m = graph.n_servers, graph.n_dispatchers
    masks = [0] * m
    degs = [len(row) for row in graph.adjacency]
    for w, row in enumerate(graph.adjacency):
        acc = 0
        for v in row:
            acc |= 1 << v
        masks[w] = acc
    thresholds = [epsilon * (deg * n) for deg in degs]
    best, witness = 0, 0
    half = 1 << (n - 1) if n > 1 else 1
    for u in range(half):
        size = u.bit_count()
        if size == 0:
            continue
        bad = 0
        for w in range(m):
            if abs((masks[w] & u).bit_count() * n - size * degs[w]) >= thresholds[w]:
                bad += 1
        if bad > best:
            best, witness = bad, u
    comp = ((1 << n) - 1) & ~witness
    comp_members = [v for v in range(n) if comp >> v & 1]
    assert (
        bad_dispatcher_count(graph, comp_members, epsilon) == best
    ), "complement symmetry violated"
    return best, witness, half


class _SubsetScorer:
    """Vectorized bad-dispatcher counting over one graph.

    Holds a CSR view so a subset evaluates in O(E) numpy work and a
    single-server flip in O(M).
    """

    def __init__(self, graph: BipartiteGraph, epsilon: float):
        self.n = graph.n_servers
        self.m = graph.n_dispatchers
        self.indptr, self.indices = graph.csr()
        self.degs = graph.dispatcher_degrees()
        self.thresholds = epsilon * (self.degs * self.n)

    def counts(self, member: np.ndarray) -> np.ndarray:
        sel = member[self.indices].astype(np.int64)
        return np.add.reduceat(sel, self.indptr[:-1])

    def bad(self, counts: np.ndarray, size: int) -> int:
        dev = np.abs(counts * self.n - size * self.degs)
        return int(np.sum(dev >= self.thresholds))


def _sampled_deficiency(
    graph: BipartiteGraph, epsilon: float, budget: int, seed: int
) -> tuple[int, np.ndarray, int]:
    """(best bad count, witness membership, subsets probed).

    Probes `budget` random subsets uniform over sizes 1..N-1, then runs
    greedy single-server flips (strict improvement only) from the best
    random starts and their complements; complements score identically but
    climb differently, so they come free as extra basins.
    """
    n = graph.n_servers
    rng = np.random.default_rng(seed)
    scorer = _SubsetScorer(graph, epsilon)
    rev = [np.asarray(row, dtype=np.int64) for row in graph.reverse_adjacency]
    probed = 0
    starts: list[tuple[int, np.ndarray]] = []
    for _ in range(budget):
        size = int(rng.integers(1, n)) if n > 1 else 1
        member = np.zeros(n, dtype=bool)
        member[rng.choice(n, size=size, replace=False)] = True
        probed += 1
        starts.append((scorer.bad(scorer.counts(member), size), member))

    starts.sort(key=lambda item: -item[0])
    n_starts = 8 if n <= 512 else 2  # climbs cost O(N*M) per sweep
    seen: set[bytes] = set()
    basins: list[np.ndarray] = []
    for bad, member in starts:
        for cand in (member, ~member):
            if 0 < cand.sum() < n:
                key = cand.tobytes()
                if key not in seen:
                    seen.add(key)
                    basins.append(cand)
        if len(basins) >= 2 * n_starts:
            break

    best_bad, best_member = starts[0]
    for start in basins:
        member = start.copy()
        counts = scorer.counts(member).astype(np.int64)
        size = int(member.sum())
        current = scorer.bad(counts, size)
        improved = True
        while improved:
            improved = False
            for v in rng.permutation(n):
                delta = -1 if member[v] else 1
                if size + delta == 0 or size + delta == n:
                    continue
                trial = counts.copy()
                trial[rev[v]] += delta
                probed += 1
                bad = scorer.bad(trial, size + delta)
                if bad > current:
                    current = bad
                    member[v] = not member[v]
                    counts = trial
                    size += delta
                    improved = True
        if current > best_bad:
            best_bad, best_member = current, member
    return best_bad, best_member, probed


def sparsity_deficiency(
    graph: BipartiteGraph,
    epsilon: float,
    mode: str = "sampled",
    budget: int = 2048,
    seed: int = 0,
) -> SparsityReport:
    """Worst-case bad-dispatcher fraction over server subsets.

    mode="exact" enumerates all subsets (refused above 22 servers);
    mode="sampled" returns a lower bound from `budget` random subsets plus
    greedy local search, deterministic given `seed`.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if mode == "exact":
        if graph.n_servers > EXACT_MAX_SERVERS:
            raise ValueError(
                f"exact enumeration limited to N <= {EXACT_MAX_SERVERS} "
                f"(got N={graph.n_servers}); use mode='sampled'"
            )
        best, witness_mask, probed = _exact_deficiency(graph, epsilon)
        witness = tuple(v for v in range(graph.n_servers) if witness_mask >> v & 1)
    elif mode == "sampled":
        n = graph.n_servers
        if n <= EXACT_MAX_SERVERS and budget >= (1 << max(0, n - 1)):
            # the budget covers exhaustive enumeration, so spend it there:
            # the lower bound becomes tight by construction
            best, witness_mask, probed = _exact_deficiency(graph, epsilon)
            witness = tuple(v for v in range(n) if witness_mask >> v & 1)
        else:
            best, member, probed = _sampled_deficiency(graph, epsilon, budget, seed)
            witness = tuple(int(v) for v in np.flatnonzero(member))
    else:
        raise ValueError(f"mode must be 'exact' or 'sampled', not {mode!r}")
    return SparsityReport(
        epsilon=epsilon,
        deficiency=best / graph.n_dispatchers,
        witness_subset=witness,
        mode=mode,
        subsets_probed=probed,
    )


# ---------------------------------------------------------------------------
# statistical trends over graph families


@dataclass
class TrendRow:
    family: str
    n: int
    m: int
    seed: int
    epsilon: float
    deficiency_lb: float
    uniform_metric: float
    optimal_load: Optional[float] = None


def sparsity_trend(
    family: GraphFamily,
    epsilons: Sequence[float],
    sizes: Sequence[int],
    seeds: Sequence[int],
    budget: int = 256,
    include_optimal: bool = False,
    d: int = 2,
) -> list[TrendRow]:
    """Sampled deficiency and uniform load metric across sizes and seeds.

    One row per (size, seed, epsilon); asymptotic decay of the deficiency
    and boundedness of the metric are for the caller (or a test) to assert
    on the emitted table.
    """
    rows = []
    for n in sizes:
        for seed in seeds:
            graph = family.build(n, seed)
            uniform, _ = uniform_subcriticality_metric(graph, d)
            optimal = None
            if include_optimal:
                optimal = optimal_subcriticality_load(graph, d).optimal_load
            for eps in epsilons:
                report = sparsity_deficiency(
                    graph, eps, mode="sampled", budget=budget, seed=seed
                )
                rows.append(
                    TrendRow(
                        family=family.name,
                        n=n,
                        m=graph.n_dispatchers,
                        seed=seed,
                        epsilon=eps,
                        deficiency_lb=report.deficiency,
                        uniform_metric=uniform,
                        optimal_load=optimal,
                    )
                )
    return rows


def write_trend_csv(rows: Sequence[TrendRow], path, metadata: Optional[dict] = None) -> None:
    from .records import write_metadata

    with open(path, "w", encoding="utf-8") as fh:
        write_metadata(fh, metadata or {})
        fh.write("family,N,M,seed,epsilon,deficiency_lb,uniform_metric,optimal_load\n")
        for r in rows:
            opt = "" if r.optimal_load is None else f"{r.optimal_load:.12g}"
            fh.write(
                f"{r.family},{r.n},{r.m},{r.seed},{r.epsilon:.12g},"
                f"{r.deficiency_lb:.12g},{r.uniform_metric:.12g},{opt}\n"
            )
