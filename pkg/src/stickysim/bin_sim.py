"""Event-driven simulation of the bin-indirected assignment scheme.

Flows are hashed statically onto a fixed set of bins; a dynamic table maps
each bin to one server, so a flow's server is wherever its bin currently
lives.  When a flow arrival pushes a server's active-flow count from the high
threshold to one above it, one uniformly random bin is taken from that server
and re-assigned, preferring servers below the low threshold, then servers
below the high threshold, then any server.  Every flow active in a moved bin
has its server changed mid-lifetime and is counted as violated, at most once
per flow.

The event engine is the same exact continuous-time Markov chain loop as
flow_sim: exponential inter-event times at the total rate, uniform pick of
the departing flow, one buffered counter-based generator consumed in a fixed
documented order.  Bin hashes come from a separate deterministic integer
mixer, not from the random stream.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BinBased
from .flow_sim import RngStream, SimConfig, SimStats, _BUFFER, _HIST_START

__all__ = [
    "BinTable",
    "BinSimStats",
    "hash_flow_to_bin",
    "reallocate_bin",
    "run_bin_sim",
]

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_HASH_GAMMA = 0x9E3779B97F4A7C15
_HASH_M1 = 0xBF58476D1CE4E5B9
_HASH_M2 = 0x94D049BB133111EB


def hash_flow_to_bin(flow_id: int, m: int) -> int:
    """Map a flow id to a bin in [0, m) with a fixed 64-bit mixer.

    The mixer is the splitmix64 output function (golden-gamma increment, two
    xor-shift-multiply rounds, final xor-shift), applied to the id modulo
    2**64 and reduced mod m.  Pure integer math, so the mapping is identical
    on every platform and in every run.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m!r}")
    if flow_id < 0:
        raise ValueError(f"flow_id must be non-negative, got {flow_id!r}")
    z = (flow_id + _HASH_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _HASH_M1) & _MASK64
    z = ((z ^ (z >> 27)) * _HASH_M2) & _MASK64
    z ^= z >> 31
    return z % m


def _hash_block(start_id: int, count: int, m: int) -> list[int]:
    """Bins for the `count` sequential flow ids from start_id, vectorized.

    Bitwise-identical to hash_flow_to_bin per id; uint64 arithmetic wraps
    exactly like the masked integer version.
    """
    ids = np.arange(start_id, start_id + count, dtype=np.uint64)
    z = ids + np.uint64(_HASH_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_HASH_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_HASH_M2)
    z ^= z >> np.uint64(31)
    return (z % np.uint64(m)).tolist()


# ---------------------------------------------------------------------------
# bin table
# ---------------------------------------------------------------------------


@dataclass
class BinTable:
    """Mutable bin-to-server table with the bookkeeping the event loop needs.

    assignment[b] is the server currently holding bin b.  server_bins[s] is
    the list of bins at server s, with bin_pos[b] giving bin b's index there
    so a bin can be removed in O(1) by swapping with the last entry.
    bin_flows[b] holds opaque handles of the flows active in bin b; what the
    handles mean is up to the caller (the simulator uses flow slot indices).
    """

    assignment: list[int]
    server_bins: list[list[int]]
    bin_pos: list[int]
    bin_flows: list[list[int]]

    @classmethod
    def initial(cls, bins: int, servers: int) -> "BinTable":
        """Fresh empty table with bins dealt round-robin: bin b -> b mod n."""
        if bins < 1 or servers < 1:
            raise ValueError("need at least one bin and one server")
        assignment = [b % servers for b in range(bins)]
        server_bins: list[list[int]] = [[] for _ in range(servers)]
        bin_pos = [0] * bins
        for b, s in enumerate(assignment):
            bin_pos[b] = len(server_bins[s])
            server_bins[s].append(b)
        return cls(
            assignment=assignment,
            server_bins=server_bins,
            bin_pos=bin_pos,
            bin_flows=[[] for _ in range(bins)],
        )

    @property
    def n_bins(self) -> int:
        return len(self.assignment)

    @property
    def n_servers(self) -> int:
        return len(self.server_bins)

    def server_load(self, server: int) -> int:
        """Active flows at a server = flows across all its bins."""
        return sum(len(self.bin_flows[b]) for b in self.server_bins[server])

    def check_consistency(self) -> None:
        """Raise ValueError unless the cross-references form a bijection.

        Checks that every bin appears exactly once across the per-server
        lists, at the position bin_pos records, on the server assignment
        names.
        """
        seen = [0] * self.n_bins
        for s, bins_here in enumerate(self.server_bins):
            for p, b in enumerate(bins_here):
                if not 0 <= b < self.n_bins:
                    raise ValueError(f"unknown bin {b} at server {s}")
                seen[b] += 1
                if self.assignment[b] != s:
                    raise ValueError(
                        f"bin {b} listed at server {s} but assigned to "
                        f"{self.assignment[b]}"
                    )
                if self.bin_pos[b] != p:
                    raise ValueError(
                        f"bin {b} at position {p} but bin_pos says "
                        f"{self.bin_pos[b]}"
                    )
        missing = [b for b, c in enumerate(seen) if c != 1]
        if missing:
            raise ValueError(f"bins not listed exactly once: {missing[:8]}")
        if len(self.bin_flows) != self.n_bins:
            raise ValueError("bin_flows length does not match bin count")


@dataclass(frozen=True)
class BinSimStats(SimStats):
    """SimStats plus bin-move accounting.

    reallocations counts bin moves inside the measurement window.
    violated_flows counts flows that arrived inside the window and were in a
    moved bin before the window closed, each at most once; it equals the
    violations field for runs produced here, and violated_flows/total_flows
    estimates the per-flow violation probability.
    skipped_reallocations counts triggers that found the server without any
    bin to give up (possible when bins are fewer than servers).
    """

    reallocations: int = 0
    violated_flows: int = 0
    skipped_reallocations: int = 0

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.reallocations < 0 or self.skipped_reallocations < 0:
            raise ValueError("reallocation counters cannot be negative")
        if not 0 <= self.violated_flows <= self.total_flows:
            raise ValueError("violated_flows must lie in [0, total_flows]")


# ---------------------------------------------------------------------------
# reference single-move operation
# ---------------------------------------------------------------------------


def reallocate_bin(
    table: BinTable,
    server: int,
    invite_set: Sequence[int],
    disinvite_set: Sequence[int],
    rng: RngStream,
) -> tuple[int, int, list[int]] | None:
    """Move one uniformly random bin off `server`; return what moved.

    Destination precedence: a uniform member of invite_set if nonempty, else
    a uniform server outside disinvite_set, else a uniform server.  Returns
    (bin, destination, handles of flows active in the bin at the move) so the
    caller can mark them violated; returns None when the server holds no bins
    (the caller should record the skipped move).  Consumes one uniform for
    the bin pick and one for the destination pick.  Sets are sorted before
    drawing so the result depends only on membership, not container order.
    """
    n = table.n_servers
    if not 0 <= server < n:
        raise ValueError(f"server must be in [0, {n}), got {server!r}")
    bins_here = table.server_bins[server]
    if not bins_here:
        return None
    moved = bins_here[rng.randint(len(bins_here))]

    invites = sorted(invite_set)
    if invites:
        dest = invites[rng.randint(len(invites))]
    else:
        blocked = set(disinvite_set)
        open_servers = [s for s in range(n) if s not in blocked]
        if open_servers:
            dest = open_servers[rng.randint(len(open_servers))]
        else:
            dest = rng.randint(n)

    p = table.bin_pos[moved]
    tail = bins_here[-1]
    bins_here[p] = tail
    table.bin_pos[tail] = p
    bins_here.pop()
    dest_bins = table.server_bins[dest]
    table.bin_pos[moved] = len(dest_bins)
    dest_bins.append(moved)
    table.assignment[moved] = dest
    return moved, dest, list(table.bin_flows[moved])


# ---------------------------------------------------------------------------
# event loop
# ---------------------------------------------------------------------------


def run_bin_sim(config: SimConfig, validate_table: bool = False) -> BinSimStats:
    """Simulate one bin-scheme run and return measurement-window statistics.

    The arriving flow's server comes from its bin, so arrivals consume no
    placement draw: per event the stream supplies one uniform for the
    inter-event time and one for the event type, then one for the departing
    flow on departures, and two per triggered bin move (bin pick, then
    destination pick).  A trigger fires when an arrival lifts a server from
    exactly `high` to `high + 1`; bin moves themselves never re-trigger.
    With drain_to_threshold set, the trigger is state based instead: any
    arrival leaving a server above `high` sheds bins until the server is
    back at or below `high`, bounded by the bins it held at trigger time.

    validate_table re-checks the bin-table bijection after every event;
    meant for small test runs, far too slow for production sizes.
    """
    scheme = config.scheme
    if not isinstance(scheme, BinBased):
        raise TypeError(f"run_bin_sim needs a BinBased scheme, got {scheme!r}")
    params = config.params
    n = params.n
    m = scheme.bins
    if m < n:
        logger.warning(
            "bin count m=%d is below server count n=%d; servers without "
            "bins never receive flows",
            m,
            n,
        )
    low = scheme.low
    high: int | float = scheme.high  # int < math.inf compares exactly
    drain = config.drain_to_threshold
    beta = params.beta
    lam_total = params.lam * n
    t_start = float(config.warmup)
    t_stop = t_start + float(config.horizon)
    tracked = config.tracked_server

    gen = np.random.Generator(np.random.Philox(config.seed))
    buf = gen.random(_BUFFER).tolist()
    bi = 0
    log = math.log

    table = BinTable.initial(m, n)
    assignment = table.assignment
    server_bins = table.server_bins
    bin_pos = table.bin_pos
    bin_flows = table.bin_flows

    occ = [0] * n

    # invite (occ < low) and below-high (occ < high) swap lists, as in
    # flow_sim; bulk occupancy jumps from bin moves re-derive membership
    invite = list(range(n)) if low > 0 else []
    invite_pos = list(range(n)) if low > 0 else [-1] * n
    inv_count = len(invite)
    below = list(range(n))
    below_pos = list(range(n))
    bel_count = n

    def fix_membership(s: int, o_old: int, o_new: int) -> None:
        """Repair both swap lists after occ[s] jumped o_old -> o_new."""
        nonlocal inv_count, bel_count
        if (o_old < low) != (o_new < low):
            if o_new < low:
                invite_pos[s] = inv_count
                if inv_count == len(invite):
                    invite.append(s)
                else:
                    invite[inv_count] = s
                inv_count += 1
            else:
                p = invite_pos[s]
                inv_count -= 1
                moved = invite[inv_count]
                invite[p] = moved
                invite_pos[moved] = p
                invite_pos[s] = -1
        if (o_old < high) != (o_new < high):
            if o_new < high:
                below_pos[s] = bel_count
                if bel_count == len(below):
                    below.append(s)
                else:
                    below[bel_count] = s
                bel_count += 1
            else:
                p = below_pos[s]
                bel_count -= 1
                moved = below[bel_count]
                below[p] = moved
                below_pos[moved] = p
                below_pos[s] = -1

    # flow registry: stable slot ids recycled through a free list, so a
    # flow's bin membership position stays valid for its whole lifetime
    flow_bin: list[int] = []
    flow_pos: list[int] = []  # position inside its bin's flow list
    flow_apos: list[int] = []  # position inside the active list
    violated = bytearray()
    # violated_flows only counts flows that arrived inside the window, so it
    # can never exceed total_flows even in very short windows
    in_window = bytearray()
    free: list[int] = []
    active: list[int] = []
    count = 0

    # sequential flow ids feed the hash in blocks (vectorized, identical to
    # per-id hashing); ids are global and never recycled
    next_id = 0
    hash_buf: list[int] = []
    hash_idx = 0

    hist = [0.0] * _HIST_START
    hist_len = _HIST_START
    last = [0.0] * n
    series_t: list[float] = []
    series_o: list[float] = []
    started = False
    reallocations = 0
    violated_flows = 0
    skipped = 0
    total_flows = 0
    flow_int = 0.0
    prev_t = 0.0

    def credit(s: int, o_old: int, t: float) -> None:
        """Time-weight the interval the server spent at o_old."""
        nonlocal hist_len
        if o_old >= hist_len:
            while o_old >= hist_len:
                hist.extend([0.0] * hist_len)
                hist_len *= 2
        hist[o_old] += t - last[s]
        last[s] = t

    def move_one_bin(s: int, t: float) -> None:
        """One triggered re-allocation off server s at time t."""
        nonlocal bi, buf, reallocations, violated_flows, skipped
        bins_here = server_bins[s]
        nb = len(bins_here)
        if nb == 0:
            if started:
                skipped += 1
            return
        if bi == _BUFFER:
            buf = gen.random(_BUFFER).tolist()
            bi = 0
        b = bins_here[int(buf[bi] * nb)]
        bi += 1
        if bi == _BUFFER:
            buf = gen.random(_BUFFER).tolist()
            bi = 0
        u = buf[bi]
        bi += 1
        if inv_count:
            dest = invite[int(u * inv_count)]
        elif bel_count:
            dest = below[int(u * bel_count)]
        else:
            dest = int(u * n)
        p = bin_pos[b]
        tail = bins_here[-1]
        bins_here[p] = tail
        bin_pos[tail] = p
        bins_here.pop()
        dest_bins = server_bins[dest]
        bin_pos[b] = len(dest_bins)
        dest_bins.append(b)
        assignment[b] = dest
        if started:
            reallocations += 1
        flows_here = bin_flows[b]
        for fid in flows_here:
            if not violated[fid]:
                violated[fid] = 1
                if in_window[fid]:
                    violated_flows += 1
        k = len(flows_here)
        if k and dest != s:
            o_old = occ[s]
            o_new = o_old - k
            occ[s] = o_new
            d_old = occ[dest]
            d_new = d_old + k
            occ[dest] = d_new
            if started:
                credit(s, o_old, t)
                credit(dest, d_old, t)
                if s == tracked:
                    series_t.append(t)
                    series_o.append(float(o_new))
                if dest == tracked:
                    series_t.append(t)
                    series_o.append(float(d_new))
            fix_membership(s, o_old, o_new)
            fix_membership(dest, d_old, d_new)

    t = 0.0
    inv_beta = 1.0 / beta
    while True:
        rate = lam_total + count * inv_beta
        if bi == _BUFFER:
            buf = gen.random(_BUFFER).tolist()
            bi = 0
        u = buf[bi]
        bi += 1
        t += -log(1.0 - u) / rate
        if t >= t_stop:
            break
        if not started and t >= t_start:
            started = True
            for s in range(n):
                last[s] = t_start
            prev_t = t_start
            series_t.append(t_start)
            series_o.append(float(occ[tracked]))
        if started:
            flow_int += count * (t - prev_t)
            prev_t = t

        if bi == _BUFFER:
            buf = gen.random(_BUFFER).tolist()
            bi = 0
        u = buf[bi]
        bi += 1

        if u * rate < lam_total:
            # ----- arrival: server dictated by the flow's static bin -----
            if started:
                total_flows += 1
            if hash_idx == len(hash_buf):
                hash_buf = _hash_block(next_id, _BUFFER, m)
                hash_idx = 0
            b = hash_buf[hash_idx]
            hash_idx += 1
            next_id += 1
            s = assignment[b]

            if free:
                fid = free.pop()
                violated[fid] = 0
            else:
                fid = len(flow_bin)
                flow_bin.append(0)
                flow_pos.append(0)
                flow_apos.append(0)
                violated.append(0)
                in_window.append(0)
            in_window[fid] = 1 if started else 0
            flow_bin[fid] = b
            flows_here = bin_flows[b]
            flow_pos[fid] = len(flows_here)
            flows_here.append(fid)
            flow_apos[fid] = count
            active.append(fid)
            count += 1

            o = occ[s]
            occ[s] = o + 1
            if started:
                credit(s, o, t)
                if s == tracked:
                    series_t.append(t)
                    series_o.append(float(o + 1))
            no = o + 1
            if no == low:
                p = invite_pos[s]
                inv_count -= 1
                moved = invite[inv_count]
                invite[p] = moved
                invite_pos[moved] = p
                invite_pos[s] = -1
            if no == high:
                p = below_pos[s]
                bel_count -= 1
                moved = below[bel_count]
                below[p] = moved
                below_pos[moved] = p
                below_pos[s] = -1

            if drain:
                # state-based variant: any arrival leaving the server above
                # high sheds bins until it is back at or below the threshold
                if o >= high:
                    for _ in range(len(server_bins[s])):
                        if occ[s] <= high:
                            break
                        move_one_bin(s, t)
            elif o == high:
                # default: one bin per upward high -> high + 1 crossing
                move_one_bin(s, t)
        else:
            # ----- departure: uniform over active flows -----
            if count == 0:
                continue
            if bi == _BUFFER:
                buf = gen.random(_BUFFER).tolist()
                bi = 0
            j = int(buf[bi] * count)
            bi += 1
            fid = active[j]
            count -= 1
            tail_fid = active[count]
            active[j] = tail_fid
            flow_apos[tail_fid] = j
            active.pop()
            b = flow_bin[fid]
            flows_here = bin_flows[b]
            p = flow_pos[fid]
            tail_fid = flows_here[-1]
            flows_here[p] = tail_fid
            flow_pos[tail_fid] = p
            flows_here.pop()
            free.append(fid)
            s = assignment[b]
            o = occ[s]
            occ[s] = o - 1
            if started:
                credit(s, o, t)
                if s == tracked:
                    series_t.append(t)
                    series_o.append(float(o - 1))
            if o == low:
                invite_pos[s] = inv_count
                if inv_count == len(invite):
                    invite.append(s)
                else:
                    invite[inv_count] = s
                inv_count += 1
            if o == high:
                below_pos[s] = bel_count
                if bel_count == len(below):
                    below.append(s)
                else:
                    below[bel_count] = s
                bel_count += 1

        if validate_table:
            table.check_consistency()
            if sum(len(f) for f in bin_flows) != count:
                raise ValueError("bin flow sets out of sync with flow count")
            if [occ[sv] for sv in range(n)] != [
                table.server_load(sv) for sv in range(n)
            ]:
                raise ValueError("occupancy counters out of sync with table")

    if not started:
        raise ValueError(
            "simulation produced no events inside the measurement window; "
            "increase horizon"
        )
    flow_int += count * (t_stop - prev_t)
    top = 0
    for s in range(n):
        o = occ[s]
        if o >= hist_len:
            hist.extend([0.0] * hist_len)
            hist_len *= 2
        hist[o] += t_stop - last[s]
        if o > top:
            top = o
    for i in range(hist_len - 1, top, -1):
        if hist[i] != 0.0:
            top = i
            break
    hist_arr = np.asarray(hist[: top + 1], dtype=np.float64)
    hist_arr /= hist_arr.sum()

    series = np.empty((len(series_t), 2), dtype=np.float64)
    series[:, 0] = series_t
    series[:, 1] = series_o

    horizon = t_stop - t_start
    return BinSimStats(
        occupancy_hist=hist_arr,
        violations=violated_flows,
        total_flows=total_flows,
        series=series,
        mean_occ=flow_int / (horizon * n),
        reallocations=reallocations,
        violated_flows=violated_flows,
        skipped_reallocations=skipped,
    )
