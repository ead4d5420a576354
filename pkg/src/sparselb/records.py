"""Result containers and their CSV wire formats.

Every CSV written here starts with a '#'-prefixed metadata block (config
echo, package version, seed) so outputs are self-describing, followed by a
fixed header row:

    trajectory:   t, q1, ..., qK, overflow
    steady state: replica, mean_qlen, q1, ..., qK
    coupled run:  t, q1, ..., qK, overflow, delta, margin_min_so_far

The simulator and the ODE integrator share the trajectory schema so their
outputs diff directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

FORMAT_VERSION = "sparselb v0.1.0"

# metadata keys that must agree before two trajectory files are compared
_COMPARE_KEYS = ("lambda", "d", "depth")


@dataclass
class TrajectoryRecord:
    """Occupancy path sampled on a regular grid.

    occupancy[s, i-1] holds q_i at sample_times[s]; overflow[s] counts
    servers whose queue exceeded the recording depth (dynamics are never
    truncated, only the recording).
    """

    sample_times: np.ndarray
    occupancy: np.ndarray
    overflow: np.ndarray
    n_servers: Optional[int] = None
    event_count: int = 0
    arrival_count: int = 0
    departure_count: int = 0
    final_queue_lengths: Optional[np.ndarray] = None

    @property
    def depth(self) -> int:
        return self.occupancy.shape[1]

    def level(self, i: int) -> np.ndarray:
        """Occupancy series q_i (levels are 1-indexed)."""
        if not 1 <= i <= self.depth:
            raise IndexError(f"level {i} outside recorded depth {self.depth}")
        return self.occupancy[:, i - 1]


@dataclass
class SteadyStateSummary:
    """Time-averaged occupancy per replica plus across-replica statistics."""

    replica_mean_qlen: np.ndarray
    replica_occupancy: np.ndarray
    mean_qlen: float
    mean_qlen_stderr: float
    occupancy_mean: np.ndarray
    occupancy_stderr: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def n_replicas(self) -> int:
        return len(self.replica_mean_qlen)

    @property
    def depth(self) -> int:
        return self.replica_occupancy.shape[1]


@dataclass
class CoupledRecord:
    """Joint path of a constrained system and its fully flexible twin.

    delta_series tracks the running count of arrivals routed to different
    queue lengths in the two systems; margin_series the smallest value of
    2*delta - sum_i |Q_i(flexible) - Q_i(constrained)| seen so far.
    """

    g_record: TrajectoryRecord
    k_record: TrajectoryRecord
    delta_series: np.ndarray
    margin_series: np.ndarray
    mismatch_count: int
    margin_min: int
    event_count: int
    arrival_count: int


# ---------------------------------------------------------------------------
# CSV I/O


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def write_metadata(fh: TextIO, metadata: dict) -> None:
    fh.write(f"# artifact: {FORMAT_VERSION}\n")
    for key, value in metadata.items():
        fh.write(f"# {key}: {value}\n")


def read_metadata(fh: TextIO) -> dict:
    """Consume leading '#' lines into a dict; leaves fh at the header row."""
    meta = {}
    while True:
        pos = fh.tell()
        line = fh.readline()
        if not line.startswith("#"):
            fh.seek(pos)
            return meta
        body = line[1:].strip()
        if ":" in body:
            key, value = body.split(":", 1)
            meta[key.strip()] = value.strip()


def write_trajectory_csv(record: TrajectoryRecord, path, metadata: Optional[dict] = None) -> None:
    k = record.depth
    with open(path, "w", encoding="utf-8") as fh:
        write_metadata(fh, metadata or {})
        fh.write("t," + ",".join(f"q{i}" for i in range(1, k + 1)) + ",overflow\n")
        for s, t in enumerate(record.sample_times):
            row = ",".join(_fmt(v) for v in record.occupancy[s])
            fh.write(f"{_fmt(t)},{row},{int(record.overflow[s])}\n")


def read_trajectory_csv(path) -> tuple[TrajectoryRecord, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        meta = read_metadata(fh)
        header = fh.readline().strip().split(",")
        if header[0] != "t" or header[-1] != "overflow":
            raise ValueError(f"{path}: not a trajectory CSV (header {header[:3]}...)")
        depth = len(header) - 2
        times, occ, over = [], [], []
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            times.append(float(parts[0]))
            occ.append([float(v) for v in parts[1 : 1 + depth]])
            over.append(int(parts[-1]))
    record = TrajectoryRecord(
        sample_times=np.array(times),
        occupancy=np.array(occ).reshape(len(times), depth),
        overflow=np.array(over, dtype=np.int64),
    )
    return record, meta


def write_steady_csv(summary: SteadyStateSummary, path, metadata: Optional[dict] = None) -> None:
    k = summary.depth
    meta = dict(metadata or {})
    meta["mean_qlen"] = _fmt(summary.mean_qlen)
    meta["mean_qlen_stderr"] = _fmt(summary.mean_qlen_stderr)
    with open(path, "w", encoding="utf-8") as fh:
        write_metadata(fh, meta)
        fh.write("replica,mean_qlen," + ",".join(f"q{i}" for i in range(1, k + 1)) + "\n")
        for r in range(summary.n_replicas):
            row = ",".join(_fmt(v) for v in summary.replica_occupancy[r])
            fh.write(f"{r},{_fmt(summary.replica_mean_qlen[r])},{row}\n")


def write_coupled_csv(coupled: CoupledRecord, path, metadata: Optional[dict] = None) -> None:
    rec = coupled.g_record
    k = rec.depth
    with open(path, "w", encoding="utf-8") as fh:
        write_metadata(fh, metadata or {})
        fh.write(
            "t,"
            + ",".join(f"q{i}" for i in range(1, k + 1))
            + ",overflow,delta,margin_min_so_far\n"
        )
        for s, t in enumerate(rec.sample_times):
            row = ",".join(_fmt(v) for v in rec.occupancy[s])
            fh.write(
                f"{_fmt(t)},{row},{int(rec.overflow[s])},"
                f"{int(coupled.delta_series[s])},{int(coupled.margin_series[s])}\n"
            )


# ---------------------------------------------------------------------------
# trajectory comparison


def check_compatible_metadata(meta_a: dict, meta_b: dict) -> None:
    """Refuse comparison when lambda, d, or depth disagree."""
    for key in _COMPARE_KEYS:
        va, vb = meta_a.get(key), meta_b.get(key)
        if va is not None and vb is not None and va != vb:
            raise ValueError(f"metadata mismatch on {key!r}: {va} vs {vb}")


def compare_trajectories(
    a: TrajectoryRecord,
    b: TrajectoryRecord,
    levels: Optional[int] = None,
    time_tol: float = 1e-9,
) -> tuple[float, float]:
    """(sup, l1) distances between two occupancy paths.

    sup is the largest |q_i^a(t) - q_i^b(t)| over sampled times and levels
    i <= `levels`; l1 the largest per-time sum over those levels. When the
    sample grids differ, b is linearly interpolated onto a's grid; the
    horizons must agree.
    """
    k = min(a.depth, b.depth)
    if levels is not None:
        k = min(k, levels)
    ta, tb = a.sample_times, b.sample_times
    if abs(ta[-1] - tb[-1]) > time_tol or abs(ta[0] - tb[0]) > time_tol:
        raise ValueError(
            f"trajectory horizons differ: [{ta[0]}, {ta[-1]}] vs [{tb[0]}, {tb[-1]}]"
        )
    if len(ta) == len(tb) and np.allclose(ta, tb, atol=time_tol, rtol=0):
        qb = b.occupancy[:, :k]
    else:
        qb = np.column_stack(
            [np.interp(ta, tb, b.occupancy[:, i]) for i in range(k)]
        )
    diff = np.abs(a.occupancy[:, :k] - qb)
    return float(diff.max()), float(diff.sum(axis=1).max())
