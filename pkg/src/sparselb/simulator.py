"""Event-driven simulation of JSQ(d) on a bipartite compatibility graph.

Tasks arrive in one Poisson stream of rate lambda*N; each arrival picks a
dispatcher uniformly, samples min(d, deg) of its compatible servers
without replacement, and joins the shortest sampled queue (ties uniform
among the tied samples). Servers serve FCFS at unit mean rate.

Exponential service uses a memoryless race: the next departure candidate
is redrawn at rate (number of busy servers) after every event, and a
uniform busy server departs - exact by memorylessness, O(1) per event
with no per-server timers. Deterministic and Pareto service schedule an
explicit completion event when each head-of-line task starts service.

The coupled run drives a constrained system and a fully flexible twin
with shared arrival and potential-departure streams to expose their
pathwise occupancy inequality; see coupled_simulate.
"""

from __future__ import annotations

import heapq
import math
import random
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import BipartiteGraph, floyd_sample
from .records import CoupledRecord, SteadyStateSummary, TrajectoryRecord

DEFAULT_DEPTH = 30
DEBUG_CHECK_EVERY = 10_000
PARETO_SHAPE = 3.0
PARETO_SCALE = 2.0 / 3.0  # mean = shape*scale/(shape-1) = 1


class InvariantViolation(RuntimeError):
    """A runtime invariant failed; this signals a bug, not bad input."""


@dataclass(frozen=True)
class ServiceDistribution:
    """Unit-mean service time law: exponential, deterministic, or pareto.

    The Pareto variant has shape 3 and scale 2/3, so all three kinds are
    directly comparable at mean 1.
    """

    kind: str

    _KINDS = ("exponential", "deterministic", "pareto")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"service kind must be one of {self._KINDS}, not {self.kind!r}")

    @property
    def is_markovian(self) -> bool:
        return self.kind == "exponential"

    def draw(self, rng: random.Random) -> float:
        if self.kind == "deterministic":
            return 1.0
        if self.kind == "pareto":
            return PARETO_SCALE * rng.paretovariate(PARETO_SHAPE)
        return rng.expovariate(1.0)


def _as_service(service) -> ServiceDistribution:
    if isinstance(service, ServiceDistribution):
        return service
    return ServiceDistribution(str(service))


def _check_inputs(graph: BipartiteGraph, d: int, lam: float, allow_disconnected: bool, allow_overload: bool):
    if d < 1 or d != int(d):
        raise ValueError("d must be a positive integer")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if lam >= 1:
        if not allow_overload:
            raise ValueError("lambda >= 1 is unstable; pass allow_overload=True to force")
        warnings.warn(f"running overloaded (lambda={lam}); queues will grow without bound")
    if not allow_disconnected and not graph.is_connected:
        raise ValueError(
            "graph is disconnected; pass allow_disconnected=True to simulate anyway"
        )


def _sample_grid(horizon: float, interval: float) -> np.ndarray:
    n = int(math.floor(horizon / interval + 1e-9))
    return np.arange(n + 1) * interval


def choose_shortest(sampled: Sequence[int], lengths: Sequence[int], rng: random.Random) -> int:
    """Shortest queue among the sampled servers, ties uniform among the
    tied samples (used by the generic d >= 3 path; d <= 2 is inlined)."""
    best_len = None
    ties: list[int] = []
    for v in sampled:
        l = lengths[v]
        if best_len is None or l < best_len:
            best_len = l
            ties = [v]
        elif l == best_len:
            ties.append(v)
    if len(ties) == 1:
        return ties[0]
    return ties[rng.randrange(len(ties))]


@dataclass
class _CoreResult:
    record: Optional[TrajectoryRecord]
    area: Optional[list[float]]  # per-level time integral of Q_i over the window
    final_lengths: list[int]
    event_count: int
    arrival_count: int
    departure_count: int


def _simulate_core(
    graph: BipartiteGraph,
    d: int,
    lam: float,
    horizon: float,
    service: ServiceDistribution,
    rng: random.Random,
    initial_lengths: Optional[Sequence[int]],
    sample_interval: Optional[float],
    window: Optional[tuple[float, float]],
    depth: int,
    debug: bool,
    on_assign: Optional[Callable[[int, int, Sequence[int]], None]],
) -> _CoreResult:
    """One replica. Records a trajectory when sample_interval is set and
    accumulates per-level time integrals over `window` when given."""
    n = graph.n_servers
    m = graph.n_dispatchers
    adj = graph.adjacency
    randbelow = rng.randrange
    rnd = rng.random
    expo = rng.expovariate
    arrival_rate = lam * n
    markovian = service.is_markovian

    lengths = [0] * n
    Q = [n]  # Q[i] = number of servers with >= i tasks; grows with max length
    busy: list[int] = []
    pos = [-1] * n
    heap: list[tuple[float, int]] = []
    if initial_lengths is not None:
        if len(initial_lengths) != n:
            raise ValueError("initial_lengths must have one entry per server")
        for v, l in enumerate(initial_lengths):
            l = int(l)
            if l < 0:
                raise ValueError("queue lengths must be nonnegative")
            lengths[v] = l
            while len(Q) <= l:
                Q.append(0)
            for i in range(1, l + 1):
                Q[i] += 1
        for v, l in enumerate(lengths):
            if l > 0:
                pos[v] = len(busy)
                busy.append(v)
                if not markovian:
                    heap.append((service.draw(rng), v))
        heap.sort()

    sampling = sample_interval is not None
    if sampling:
        grid = _sample_grid(horizon, sample_interval)
        occupancy = np.zeros((len(grid), depth))
        overflow = np.zeros(len(grid), dtype=np.int64)
        next_sample = 0

    accumulating = window is not None
    if accumulating:
        w0, w1 = window
        if not 0 <= w0 < w1 <= horizon + 1e-9:
            raise ValueError("window must satisfy 0 <= start < end <= horizon")
        area = [0.0] * len(Q)
        last_upd = [0.0] * len(Q)
        acc_on = False

    def record_sample(idx: int):
        qrow = occupancy[idx]
        top = min(depth, len(Q) - 1)
        for i in range(1, top + 1):
            qrow[i - 1] = Q[i] / n
        overflow[idx] = Q[depth + 1] if len(Q) > depth + 1 else 0

    def flush_level(i: int, now: float):
        # accumulate Q_i over [last_upd[i], now] before Q_i changes
        area[i] += Q[i] * (now - last_upd[i])
        last_upd[i] = now

    def debug_check():
        expect = [0] * len(Q)
        expect[0] = n
        for l in lengths:
            for i in range(1, l + 1):
                if i >= len(expect):
                    expect.extend([0] * (i - len(expect) + 1))
                expect[i] += 1
        if expect != list(Q[: len(expect)]) or any(Q[len(expect) :]):
            raise InvariantViolation("incremental occupancy counts diverged from state")
        if sorted(busy) != sorted(v for v, l in enumerate(lengths) if l > 0) and markovian:
            raise InvariantViolation("busy-server structure diverged from state")

    t = 0.0
    next_arrival = expo(arrival_rate)
    events = arrivals = departures = 0

    while True:
        if markovian:
            nb = len(busy)
            next_dep = t + expo(nb) if nb else math.inf
        else:
            next_dep = heap[0][0] if heap else math.inf
        if next_arrival <= next_dep:
            t_next, is_arrival = next_arrival, True
        else:
            t_next, is_arrival = next_dep, False

        if sampling:
            while next_sample < len(grid) and grid[next_sample] < t_next:
                record_sample(next_sample)
                next_sample += 1
        if t_next > horizon:
            break
        if accumulating and not acc_on and t_next > w0:
            # state has been constant since the last event, so the window
            # opens with the current counts
            acc_on = True
            for i in range(len(Q)):
                last_upd[i] = w0

        t = t_next
        if is_arrival:
            arrivals += 1
            next_arrival = t + expo(arrival_rate)
            row = adj[randbelow(m)]
            nrow = len(row)
            if d == 2 and nrow > 2:
                i = randbelow(nrow)
                j = randbelow(nrow - 1)
                if j >= i:
                    j += 1
                a, b = row[i], row[j]
                la, lb = lengths[a], lengths[b]
                if la < lb:
                    target = a
                elif lb < la:
                    target = b
                else:
                    target = a if rnd() < 0.5 else b
                sampled = (a, b) if on_assign is not None else None
            else:
                de = d if d < nrow else nrow
                if de == nrow:
                    sampled = row
                elif de == 1:
                    sampled = (row[randbelow(nrow)],)
                else:
                    sampled = [row[i] for i in floyd_sample(nrow, de, randbelow)]
                target = choose_shortest(sampled, lengths, rng)
            l = lengths[target]
            if on_assign is not None:
                on_assign(target, l, sampled, lengths)
            lengths[target] = l + 1
            lnew = l + 1
            if lnew >= len(Q):
                Q.append(0)
                if accumulating:
                    area.append(0.0)
                    last_upd.append(w0 if acc_on else 0.0)
            if accumulating and acc_on:
                flush_level(lnew, t)
            Q[lnew] += 1
            if l == 0:
                pos[target] = len(busy)
                busy.append(target)
                if not markovian:
                    heapq.heappush(heap, (t + service.draw(rng), target))
        else:
            departures += 1
            if markovian:
                i = randbelow(len(busy))
                v = busy[i]
            else:
                _, v = heapq.heappop(heap)
            l = lengths[v]
            if accumulating and acc_on:
                flush_level(l, t)
            lengths[v] = l - 1
            Q[l] -= 1
            if l == 1:
                i = pos[v]
                last = busy[-1]
                busy[i] = last
                pos[last] = i
                busy.pop()
                pos[v] = -1
            elif not markovian:
                heapq.heappush(heap, (t + service.draw(rng), v))
        events += 1
        if debug and events % DEBUG_CHECK_EVERY == 0:
            debug_check()

    if debug:
        debug_check()
    if accumulating:
        if not acc_on:  # no event landed past w0; the state held throughout
            for i in range(len(Q)):
                last_upd[i] = w0
        for i in range(len(Q)):
            flush_level(i, w1)

    record = None
    if sampling:
        record = TrajectoryRecord(
            sample_times=grid,
            occupancy=occupancy,
            overflow=overflow,
            n_servers=n,
            event_count=events,
            arrival_count=arrivals,
            departure_count=departures,
            final_queue_lengths=np.array(lengths, dtype=np.int64),
        )
    return _CoreResult(
        record=record,
        area=area if accumulating else None,
        final_lengths=lengths,
        event_count=events,
        arrival_count=arrivals,
        departure_count=departures,
    )


def simulate(
    graph: BipartiteGraph,
    d: int,
    lam: float,
    horizon: float,
    service="exponential",
    initial_lengths: Optional[Sequence[int]] = None,
    sample_interval: float = 0.1,
    seed: int = 0,
    depth: int = DEFAULT_DEPTH,
    allow_disconnected: bool = False,
    allow_overload: bool = False,
    debug: bool = False,
    on_assign: Optional[Callable[[int, int, Sequence[int]], None]] = None,
) -> TrajectoryRecord:
    """Simulate JSQ(d) for `horizon` time units, sampling occupancy every
    `sample_interval`. Deterministic given (config, seed).

    `on_assign(server, queue_length_before, sampled_servers, lengths)` is a
    test hook called at each assignment with live (read-only) state; leave
    it None in production runs.
    """
    service = _as_service(service)
    _check_inputs(graph, d, lam, allow_disconnected, allow_overload)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    result = _simulate_core(
        graph,
        int(d),
        lam,
        horizon,
        service,
        random.Random(seed),
        initial_lengths,
        sample_interval,
        None,
        depth,
        debug,
        on_assign,
    )
    return result.record


def steady_state(
    graph: BipartiteGraph,
    d: int,
    lam: float,
    warmup: Optional[float] = None,
    measure: float = 200.0,
    replicas: int = 8,
    service="exponential",
    seed: int = 0,
    depth: int = DEFAULT_DEPTH,
    allow_disconnected: bool = False,
    allow_overload: bool = False,
) -> SteadyStateSummary:
    """Time-averaged occupancy over [warmup, warmup+measure] per replica,
    with across-replica mean and standard error.

    Replica r runs an isolated simulation seeded with seed XOR r. The
    default warmup is 10/(1-lambda) time units, the relaxation scale of
    the limiting dynamics. The mean queue length integrates every level,
    not just the reported depth.
    """
    service = _as_service(service)
    _check_inputs(graph, d, lam, allow_disconnected, allow_overload)
    if warmup is None:
        warmup = 10.0 / (1.0 - lam)
    if measure <= 0 or warmup < 0:
        raise ValueError("need warmup >= 0 and measure > 0")
    if replicas < 1:
        raise ValueError("need at least one replica")
    n = graph.n_servers
    horizon = warmup + measure
    rep_occ = np.zeros((replicas, depth))
    rep_mql = np.zeros(replicas)
    for r in range(replicas):
        result = _simulate_core(
            graph,
            int(d),
            lam,
            horizon,
            service,
            random.Random(seed ^ r),
            None,
            None,
            (warmup, horizon),
            depth,
            False,
            None,
        )
        area = result.area
        denom = n * measure
        rep_mql[r] = sum(area[1:]) / denom
        top = min(depth, len(area) - 1)
        for i in range(1, top + 1):
            rep_occ[r, i - 1] = area[i] / denom
    mean_q = rep_occ.mean(axis=0)
    mql = float(rep_mql.mean())
    if replicas > 1:
        mql_se = float(rep_mql.std(ddof=1) / math.sqrt(replicas))
        q_se = rep_occ.std(axis=0, ddof=1) / math.sqrt(replicas)
    else:
        mql_se = 0.0
        q_se = np.zeros(depth)
    return SteadyStateSummary(
        replica_mean_qlen=rep_mql,
        replica_occupancy=rep_occ,
        mean_qlen=mql,
        mean_qlen_stderr=mql_se,
        occupancy_mean=mean_q,
        occupancy_stderr=q_se,
        config={
            "d": int(d),
            "lambda": lam,
            "warmup": warmup,
            "measure": measure,
            "replicas": replicas,
            "service": service.kind,
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# coupled two-system run


class _OrderedSystem:
    """Queue state with per-level server lists, supporting rank-ordered
    departures and O(1) level moves.

    Servers are ordered by queue length, within a level by list position
    (a fixed, deterministically evolving order); the occupancy law does
    not depend on the within-level choice.
    """

    __slots__ = ("n", "lengths", "levels", "pos", "Q", "total")

    def __init__(self, n: int):
        self.n = n
        self.lengths = [0] * n
        self.levels: list[list[int]] = [list(range(n))]
        self.pos = list(range(n))
        self.Q = [n]
        self.total = 0

    def move(self, v: int, target_level: int):
        src = self.lengths[v]
        lst = self.levels[src]
        p = self.pos[v]
        last = lst[-1]
        lst[p] = last
        self.pos[last] = p
        lst.pop()
        while len(self.levels) <= target_level:
            self.levels.append([])
            self.Q.append(0)
        dst = self.levels[target_level]
        self.pos[v] = len(dst)
        dst.append(v)
        self.lengths[v] = target_level

    def arrive_at(self, v: int):
        lnew = self.lengths[v] + 1
        self.move(v, lnew)
        self.Q[lnew] += 1
        self.total += 1

    def depart_from(self, v: int):
        lold = self.lengths[v]
        self.move(v, lold - 1)
        self.Q[lold] -= 1
        self.total -= 1

    def nth_ordered(self, j: int) -> tuple[int, int]:
        """(level, server) of the j-th server (0-based) in non-decreasing
        queue-length order."""
        for level, lst in enumerate(self.levels):
            k = len(lst)
            if j < k:
                return level, lst[j]
            j -= k
        raise IndexError("ordered slot out of range")

    def assignment_cdf_invert(self, counts: Sequence[int], total: int, d: int, u: float) -> int:
        """Queue length drawn by inverting the min-of-d sampling CDF at u.

        counts[i] is the number of relevant servers at exact length i;
        p_i = (tail_i/total)^d - (tail_{i+1}/total)^d. Zero-probability
        lengths are never returned.
        """
        tail = total
        cum = 0.0
        last_pos = 0
        prev_pow = 1.0  # (tail_0/total)^d
        for i, c in enumerate(counts):
            if c:
                new_tail = tail - c
                new_pow = (new_tail / total) ** d
                p = prev_pow - new_pow
                prev_pow = new_pow
                tail = new_tail
                last_pos = i
                cum += p
                if u < cum:
                    return i
        return last_pos


def coupled_simulate(
    graph: BipartiteGraph,
    d: int,
    lam: float,
    horizon: float,
    seed: int = 0,
    sample_interval: float = 0.1,
    depth: int = DEFAULT_DEPTH,
    allow_disconnected: bool = False,
) -> CoupledRecord:
    """Run the constrained system and a fully flexible twin on shared
    randomness and verify their pathwise occupancy inequality.

    Both systems start empty and see one Poisson(lambda*N) arrival stream
    and one Poisson(N) potential-departure stream. A potential departure
    draws an ordered slot j: each system independently removes a task from
    its j-th server in queue-length-sorted order, if busy (idle slots are
    no-ops; this uniformizes the unit-rate servers exactly). An arrival
    draws a dispatcher w and a single uniform variate u; the constrained
    system inverts its neighborhood's min-of-d CDF at u, the flexible one
    inverts the global CDF at the same u - the comonotone coupling keeps
    the chosen queue lengths equal as often as the CDFs allow. When they
    differ the mismatch count delta increases by one. Each system then
    places the task on a uniform server at its own chosen length.

    After every event the inequality

        sum_i |Q_i(flexible) - Q_i(constrained)| <= 2 * delta

    is asserted exactly (integer arithmetic); a violation raises
    InvariantViolation and means the implementation is broken, not the
    input. Exponential service only: the construction lives on the
    Markovian system.
    """
    _check_inputs(graph, d, lam, allow_disconnected, False)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    d = int(d)
    n = graph.n_servers
    m = graph.n_dispatchers
    adj = graph.adjacency
    rng = random.Random(seed)
    randbelow = rng.randrange
    rnd = rng.random
    expo = rng.expovariate

    g_sys = _OrderedSystem(n)
    k_sys = _OrderedSystem(n)

    # D = sum_i |Q_i(K) - Q_i(G)|, updated at the touched level only
    state = {"D": 0, "delta": 0, "margin_min": 0}

    def level_diff(i: int) -> int:
        qg = g_sys.Q[i] if i < len(g_sys.Q) else 0
        qk = k_sys.Q[i] if i < len(k_sys.Q) else 0
        return abs(qk - qg)

    grid = _sample_grid(horizon, sample_interval)
    g_occ = np.zeros((len(grid), depth))
    k_occ = np.zeros((len(grid), depth))
    g_over = np.zeros(len(grid), dtype=np.int64)
    k_over = np.zeros(len(grid), dtype=np.int64)
    delta_series = np.zeros(len(grid), dtype=np.int64)
    margin_series = np.zeros(len(grid), dtype=np.int64)
    next_sample = 0

    def record_sample(idx: int):
        for sys_, occ, over in ((g_sys, g_occ, g_over), (k_sys, k_occ, k_over)):
            top = min(depth, len(sys_.Q) - 1)
            for i in range(1, top + 1):
                occ[idx, i - 1] = sys_.Q[i] / n
            over[idx] = sys_.Q[depth + 1] if len(sys_.Q) > depth + 1 else 0
        delta_series[idx] = state["delta"]
        margin_series[idx] = state["margin_min"]

    arrival_rate = lam * n
    dep_rate = float(n)
    t = 0.0
    next_arrival = expo(arrival_rate)
    next_dep = expo(dep_rate)
    events = arrivals = 0

    while True:
        if next_arrival <= next_dep:
            t_next, is_arrival = next_arrival, True
        else:
            t_next, is_arrival = next_dep, False
        while next_sample < len(grid) and grid[next_sample] < t_next:
            record_sample(next_sample)
            next_sample += 1
        if t_next > horizon:
            break
        t = t_next
        if is_arrival:
            arrivals += 1
            next_arrival = t + expo(arrival_rate)
            row = adj[randbelow(m)]
            u = rnd()

            # constrained system: min-of-d over the dispatcher's neighborhood
            nrow = len(row)
            g_lengths = g_sys.lengths
            max_l = 0
            for v in row:
                l = g_lengths[v]
                if l > max_l:
                    max_l = l
            counts_g = [0] * (max_l + 1)
            for v in row:
                counts_g[g_lengths[v]] += 1
            d_g = d if d < nrow else nrow
            i_g = g_sys.assignment_cdf_invert(counts_g, nrow, d_g, u)

            # flexible twin: min-of-d over the global distribution
            counts_k = [len(lst) for lst in k_sys.levels]
            d_k = d if d < n else n
            i_k = k_sys.assignment_cdf_invert(counts_k, n, d_k, u)

            if i_g != i_k:
                state["delta"] += 1

            # step (b): uniform server at the chosen length, per system
            g_candidates = g_sys.levels[i_g]
            vg = g_candidates[randbelow(len(g_candidates))]
            k_candidates = k_sys.levels[i_k]
            vk = k_candidates[randbelow(len(k_candidates))]

            lg, lk = i_g + 1, i_k + 1
            state["D"] -= level_diff(lg)
            g_sys.arrive_at(vg)
            state["D"] += level_diff(lg)
            state["D"] -= level_diff(lk)
            k_sys.arrive_at(vk)
            state["D"] += level_diff(lk)
        else:
            next_dep = t + expo(dep_rate)
            j = randbelow(n)
            lvl_g, vg = g_sys.nth_ordered(j)
            lvl_k, vk = k_sys.nth_ordered(j)
            if lvl_g > 0:
                state["D"] -= level_diff(lvl_g)
                g_sys.depart_from(vg)
                state["D"] += level_diff(lvl_g)
            if lvl_k > 0:
                state["D"] -= level_diff(lvl_k)
                k_sys.depart_from(vk)
                state["D"] += level_diff(lvl_k)
        events += 1
        margin = 2 * state["delta"] - state["D"]
        if margin < state["margin_min"]:
            state["margin_min"] = margin
        if margin < 0:
            raise InvariantViolation(
                f"coupling inequality violated at t={t:.6f}: "
                f"sum|Q_i(K)-Q_i(G)|={state['D']} > 2*delta={2 * state['delta']}"
            )

    while next_sample < len(grid):
        record_sample(next_sample)
        next_sample += 1

    def as_record(occ, over, sys_):
        return TrajectoryRecord(
            sample_times=grid,
            occupancy=occ,
            overflow=over,
            n_servers=n,
            event_count=events,
            arrival_count=arrivals,
            departure_count=arrivals - sys_.total,
        )

    return CoupledRecord(
        g_record=as_record(g_occ, g_over, g_sys),
        k_record=as_record(k_occ, k_over, k_sys),
        delta_series=delta_series,
        margin_series=margin_series,
        mismatch_count=state["delta"],
        margin_min=state["margin_min"],
        event_count=events,
        arrival_count=arrivals,
    )


# ---------------------------------------------------------------------------
# diagnostics on sampled states


def lyapunov_series(record: TrajectoryRecord, k: int) -> np.ndarray:
    """V_k per sample: half of sum_{i>=k} (i-k+1)(i-k+2) X_i, where X_i is
    the number of servers with exactly i tasks.

    Equals the double tail sum over the occupancy counts; the closed form
    is O(depth) per sample. Requires a simulator record (n_servers set)
    with no overflow, since truncated levels would silently drop mass.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if record.n_servers is None:
        raise ValueError("record lacks n_servers; V_k needs absolute counts")
    if np.any(record.overflow > 0):
        raise ValueError("record overflowed its depth; V_k would be truncated")
    n = record.n_servers
    counts = np.rint(record.occupancy * n).astype(np.int64)  # Q_i, i = 1..depth
    q_next = np.concatenate([counts[:, 1:], np.zeros((len(counts), 1), dtype=np.int64)], axis=1)
    x = counts - q_next  # X_i for i = 1..depth
    depth = record.depth
    idx = np.arange(1, depth + 1)
    weights = np.where(idx >= k, 0.5 * (idx - k + 1) * (idx - k + 2), 0.0)
    return x @ weights


def tail_moment_margin(occupancy_mean: Sequence[float], lam: float, k: int) -> float:
    """((1+lam)/(1-lam)) * qbar_{k-1} - sum_{i>=k} qbar_i for steady-state
    occupancy averages (qbar_0 = 1); nonnegative when the stationary tail
    obeys the drift bound."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(occupancy_mean, dtype=float)  # levels 1..K
    prefactor = (1.0 + lam) / (1.0 - lam)
    q_prev = 1.0 if k == 1 else float(q[k - 2])
    return prefactor * q_prev - float(q[k - 1 :].sum())
