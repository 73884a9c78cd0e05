"""Event-driven flow-level simulation of the assignment schemes.

A run is an exact continuous-time Markov chain simulation: arrivals form a
Poisson process of rate n*lam, each admitted flow holds one server slot for an
independent exponential duration with mean beta.  Durations being memoryless,
the next departure is always a uniformly random active flow at total rate
count/beta, so the event loop needs no future-event heap: it draws the time to
the next event from the total rate and then picks the event type.

Statistics are time weighted: every server carries the time of its last
occupancy change, and the histogram is credited on each change, which keeps
the per-event cost constant.  All randomness comes from one buffered
counter-based generator consumed in a fixed documented order, so a seed fully
determines the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    BinBased,
    FlowDistribution,
    PowerOfD,
    PullBased,
    SchemeConfig,
    Shedding,
    SystemParams,
    TransferToInvite,
    TransferToLeastLoaded,
    total_variation,
)

__all__ = [
    "RngStream",
    "SimConfig",
    "SimStats",
    "run_flow_sim",
    "assign_flow",
    "empirical_vs_theory",
]

_BUFFER = 1 << 16

# simulated occupancies are unbounded in principle; the histogram grows by
# doubling from this size if a server ever climbs past it
_HIST_START = 1 << 10

DEFAULT_WARMUP_BETAS = 50.0
DEFAULT_HORIZON_BETAS = 200.0


class RngStream:
    """Buffered uniform stream over a counter-based generator (Philox).

    The same seed always yields the same draw sequence; simulation code
    documents how many draws each event consumes so runs are reproducible.
    Exponentials use the inverse transform -scale*log(1 - u), which never
    sees log(0) because uniforms live in [0, 1).
    """

    __slots__ = ("_gen", "_buf", "_idx")

    def __init__(self, seed: int) -> None:
        self._gen = np.random.Generator(np.random.Philox(seed))
        self._buf = self._gen.random(_BUFFER).tolist()
        self._idx = 0

    def uniform(self) -> float:
        """Next uniform draw in [0, 1)."""
        idx = self._idx
        if idx == _BUFFER:
            self._buf = self._gen.random(_BUFFER).tolist()
            idx = 0
        self._idx = idx + 1
        return self._buf[idx]

    def exponential(self, scale: float = 1.0) -> float:
        return -scale * math.log(1.0 - self.uniform())

    def randint(self, k: int) -> int:
        """Uniform integer in [0, k). k is assumed far below 2**53."""
        return int(self.uniform() * k)


@dataclass(frozen=True)
class SimConfig:
    """Run description for the flow-level (and bin-level) simulators.

    warmup/horizon default to multiples of the mean flow duration; statistics
    cover exactly [warmup, warmup + horizon).  transfer_random_flow selects
    which flow of a full server is re-dispatched on a transfer; both variants
    induce the same occupancy process, so recorded statistics are unaffected
    (the flag matters only to per-flow bookkeeping experiments).
    drain_to_threshold applies to bin runs only: when a threshold trigger
    fires, keep moving bins until the server is back at or below the high
    threshold instead of moving exactly one bin.
    """

    params: SystemParams
    scheme: SchemeConfig
    seed: int = 0
    warmup: float | None = None
    horizon: float | None = None
    tracked_server: int = 0
    transfer_random_flow: bool = False
    drain_to_threshold: bool = False

    def __post_init__(self) -> None:
        beta = self.params.beta
        if self.warmup is None:
            object.__setattr__(self, "warmup", DEFAULT_WARMUP_BETAS * beta)
        if self.horizon is None:
            object.__setattr__(self, "horizon", DEFAULT_HORIZON_BETAS * beta)
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        if self.warmup < 0:
            raise ValueError(f"warmup must be non-negative, got {self.warmup!r}")
        if not 0 <= self.tracked_server < self.params.n:
            raise ValueError(
                f"tracked_server must be in [0, {self.params.n}), "
                f"got {self.tracked_server!r}"
            )
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError(f"seed must be a non-negative int, got {self.seed!r}")


@dataclass(frozen=True)
class SimStats:
    """Measurement-window statistics of one simulation run.

    occupancy_hist is the time-weighted fraction of server-time spent at each
    occupancy (sums to 1).  violations counts flows discarded or transferred;
    total_flows counts every flow arriving in the window, admitted or not, so
    violations/total_flows estimates the per-flow violation probability.
    series holds (time, occupancy) samples of the tracked server, one row per
    change plus the initial sample.  mean_occ is the time-average number of
    active flows per server.
    """

    occupancy_hist: np.ndarray
    violations: int
    total_flows: int
    series: np.ndarray
    mean_occ: float

    def __post_init__(self) -> None:
        hist = np.ascontiguousarray(np.asarray(self.occupancy_hist, np.float64))
        hist.flags.writeable = False
        object.__setattr__(self, "occupancy_hist", hist)
        series = np.ascontiguousarray(np.asarray(self.series, np.float64))
        series.flags.writeable = False
        object.__setattr__(self, "series", series)
        if self.violations > self.total_flows:
            raise ValueError("violations cannot exceed total_flows")

    @property
    def violation_rate(self) -> float:
        """Empirical per-flow violation probability (0 when no flows)."""
        if self.total_flows == 0:
            return 0.0
        return self.violations / self.total_flows

    def distribution(self) -> FlowDistribution:
        return FlowDistribution(self.occupancy_hist)


def empirical_vs_theory(stats: SimStats, theory: FlowDistribution) -> float:
    """Total variation distance between a run's histogram and a pmf."""
    return total_variation(stats.occupancy_hist, theory)


# ---------------------------------------------------------------------------
# reference single-flow assignment
# ---------------------------------------------------------------------------


def assign_flow(
    scheme: SchemeConfig,
    server_occupancies: "np.ndarray | list[int]",
    rng: RngStream,
) -> tuple[int | None, bool, tuple[int, int] | None]:
    """Assign one arriving flow given a snapshot of server occupancies.

    Returns (server index or None when discarded, violation flag, transfer
    record (origin, destination) or None).  This is the readable O(n)
    reference for the scheme rules; run_flow_sim keeps the same draw
    semantics with incremental data structures.
    """
    occ = list(server_occupancies)
    n = len(occ)
    if n == 0:
        raise ValueError("need at least one server")
    if any(o < 0 for o in occ):
        raise ValueError("occupancies must be non-negative")

    if isinstance(scheme, PowerOfD):
        d = min(scheme.d, n)
        if d == n:
            sampled = list(range(n))
        else:
            sampled = []
            while len(sampled) < d:
                c = rng.randint(n)
                if c not in sampled:
                    sampled.append(c)
        best = min(occ[c] for c in sampled)
        ties = [c for c in sampled if occ[c] == best]
        return ties[rng.randint(len(ties))], False, None

    if isinstance(scheme, PullBased):
        invite = [s for s in range(n) if occ[s] < scheme.low]
        if invite:
            return invite[rng.randint(len(invite))], False, None
        below = [s for s in range(n) if occ[s] < scheme.high]
        if below:
            return below[rng.randint(len(below))], False, None
        return rng.randint(n), False, None

    if isinstance(scheme, Shedding):
        s = rng.randint(n)
        if occ[s] >= scheme.high:
            return None, True, None
        return s, False, None

    if isinstance(scheme, TransferToInvite):
        s = rng.randint(n)
        if occ[s] < scheme.high:
            return s, False, None
        invite = [c for c in range(n) if occ[c] < scheme.low]
        if invite:
            dest = invite[rng.randint(len(invite))]
        else:
            below = [c for c in range(n) if occ[c] < scheme.high]
            dest = below[rng.randint(len(below))] if below else rng.randint(n)
        return dest, True, (s, dest)

    if isinstance(scheme, TransferToLeastLoaded):
        s = rng.randint(n)
        if occ[s] < scheme.high:
            return s, False, None
        best = min(occ)
        ties = [c for c in range(n) if occ[c] == best]
        dest = ties[rng.randint(len(ties))]
        return dest, True, (s, dest)

    raise TypeError(f"no flow-level assignment rule for {scheme!r}")


# ---------------------------------------------------------------------------
# event loop
# ---------------------------------------------------------------------------


def run_flow_sim(config: SimConfig) -> SimStats:
    """Simulate one run and return its measurement-window statistics.

    Draw order per event: one uniform for the inter-event time, one for the
    event type, then the assignment draws (uniform server picks, d-choices
    candidates, transfer destination) or the departing-flow pick.
    """
    scheme = config.scheme
    if isinstance(scheme, BinBased):
        raise TypeError("BinBased configs are simulated by run_bin_sim")
    params = config.params
    n = params.n
    beta = params.beta
    lam_total = params.lam * n
    t_start = float(config.warmup)
    t_stop = t_start + float(config.horizon)
    tracked = config.tracked_server

    # scheme mode and thresholds, unpacked for the hot loop
    low = high = 0
    if isinstance(scheme, PowerOfD):
        d = scheme.d
        if d == 1:
            mode = 0
        elif d < n:
            mode = 1
        else:
            mode = 2  # sampling all servers is exact least-loaded
        need_levels = mode == 2
        need_invites = False
    elif isinstance(scheme, PullBased):
        mode = 3
        low = scheme.low
        high = scheme.high if scheme.high != math.inf else -1
        need_levels = False
        need_invites = True
    elif isinstance(scheme, Shedding):
        mode = 4
        high = scheme.high if scheme.high != math.inf else -1
        need_levels = False
        need_invites = False
    elif isinstance(scheme, TransferToInvite):
        mode = 5
        low = scheme.low
        high = scheme.high
        need_levels = False
        need_invites = True
    elif isinstance(scheme, TransferToLeastLoaded):
        mode = 6
        high = scheme.high
        need_levels = True
        need_invites = False
    else:
        raise TypeError(f"no flow-level simulation for {scheme!r}")

    gen = np.random.Generator(np.random.Philox(config.seed))
    buf = gen.random(_BUFFER).tolist()
    bi = 0
    log = math.log

    occ = [0] * n

    # invite (occ < low) and below-high (occ < high) membership with swap
    # removal; pos arrays give O(1) membership updates on threshold crossings
    if need_invites:
        invite = list(range(n))
        invite_pos = list(range(n))
        inv_count = n
        below = list(range(n))
        below_pos = list(range(n))
        bel_count = n
    # per-occupancy server buckets with a running minimum for least-loaded
    if need_levels:
        levels = [list(range(n))]
        level_pos = list(range(n))
        cur_min = 0

    # active flows: slot i holds the server of one active flow; departures
    # pick a uniform slot and swap-remove it
    slot: list[int] = []
    count = 0

    hist = [0.0] * _HIST_START
    hist_len = _HIST_START
    last = [0.0] * n
    series_t: list[float] = []
    series_o: list[float] = []
    started = False
    violations = 0
    total_flows = 0
    flow_int = 0.0
    prev_t = 0.0

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
            # ----- arrival -----
            if started:
                total_flows += 1
            if bi == _BUFFER:
                buf = gen.random(_BUFFER).tolist()
                bi = 0
            u = buf[bi]
            bi += 1

            if mode == 0:
                s = int(u * n)
            elif mode == 1:
                cands = [int(u * n)]
                needed = d - 1
                while needed:
                    if bi == _BUFFER:
                        buf = gen.random(_BUFFER).tolist()
                        bi = 0
                    c = int(buf[bi] * n)
                    bi += 1
                    if c not in cands:
                        cands.append(c)
                        needed -= 1
                s = cands[0]
                best = occ[s]
                nb = 1
                for c in cands[1:]:
                    o = occ[c]
                    if o < best:
                        best = o
                        s = c
                        nb = 1
                    elif o == best:
                        # uniform over ties without a second pass: replace the
                        # incumbent with probability 1/(ties so far)
                        nb += 1
                        if bi == _BUFFER:
                            buf = gen.random(_BUFFER).tolist()
                            bi = 0
                        if buf[bi] * nb < 1.0:
                            s = c
                        bi += 1
            elif mode == 2:
                bucket = levels[cur_min]
                s = bucket[int(u * len(bucket))]
            elif mode == 3:
                if inv_count:
                    s = invite[int(u * inv_count)]
                elif bel_count:
                    s = below[int(u * bel_count)]
                else:
                    s = int(u * n)
            elif mode == 4:
                s = int(u * n)
                if occ[s] >= high >= 0:
                    if started:
                        violations += 1
                    continue
            elif mode == 5:
                s = int(u * n)
                if occ[s] >= high:
                    if started:
                        violations += 1
                    if bi == _BUFFER:
                        buf = gen.random(_BUFFER).tolist()
                        bi = 0
                    u = buf[bi]
                    bi += 1
                    if inv_count:
                        s = invite[int(u * inv_count)]
                    elif bel_count:
                        s = below[int(u * bel_count)]
                    else:
                        s = int(u * n)
            else:
                s = int(u * n)
                if occ[s] >= high:
                    if started:
                        violations += 1
                    bucket = levels[cur_min]
                    if bi == _BUFFER:
                        buf = gen.random(_BUFFER).tolist()
                        bi = 0
                    s = bucket[int(buf[bi] * len(bucket))]
                    bi += 1

            o = occ[s]
            occ[s] = o + 1
            slot.append(s)
            count += 1
            if started:
                if o >= hist_len:
                    hist.extend([0.0] * hist_len)
                    hist_len *= 2
                hist[o] += t - last[s]
                last[s] = t
                if s == tracked:
                    series_t.append(t)
                    series_o.append(float(o + 1))
            if need_invites:
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
            elif need_levels:
                bucket = levels[o]
                p = level_pos[s]
                moved = bucket[-1]
                bucket[p] = moved
                level_pos[moved] = p
                bucket.pop()
                if o + 1 >= len(levels):
                    levels.append([])
                dest_bucket = levels[o + 1]
                level_pos[s] = len(dest_bucket)
                dest_bucket.append(s)
                if not bucket and o == cur_min:
                    while not levels[cur_min]:
                        cur_min += 1
        else:
            # ----- departure: uniform over active flows -----
            if count == 0:
                continue
            if bi == _BUFFER:
                buf = gen.random(_BUFFER).tolist()
                bi = 0
            j = int(buf[bi] * count)
            bi += 1
            s = slot[j]
            count -= 1
            slot[j] = slot[count]
            slot.pop()
            o = occ[s]
            occ[s] = o - 1
            if started:
                if o >= hist_len:
                    hist.extend([0.0] * hist_len)
                    hist_len *= 2
                hist[o] += t - last[s]
                last[s] = t
                if s == tracked:
                    series_t.append(t)
                    series_o.append(float(o - 1))
            if need_invites:
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
            elif need_levels:
                bucket = levels[o]
                p = level_pos[s]
                moved = bucket[-1]
                bucket[p] = moved
                level_pos[moved] = p
                bucket.pop()
                dest_bucket = levels[o - 1]
                level_pos[s] = len(dest_bucket)
                dest_bucket.append(s)
                if o - 1 < cur_min:
                    cur_min = o - 1
                elif not bucket and o == cur_min:
                    while not levels[cur_min]:
                        cur_min += 1

    # flush every server's open interval at the window end
    if not started:
        # the whole run ended inside warmup; measure nothing
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
    return SimStats(
        occupancy_hist=hist_arr,
        violations=violations,
        total_flows=total_flows,
        series=series,
        mean_occ=flow_int / (horizon * n),
    )
