"""Mean-field occupancy dynamics and their fixed points.

Each scheme contributes a join-probability vector q[j]: the probability an
arriving flow is placed on a server currently holding j flows, as a function
of the occupancy tail. The shared ODE ds_i/dt = lam*q[i-1] - i(s_i-s_{i+1})/beta
is integrated with fixed-step RK4; fixed points come from closed forms or a
one-dimensional bisection on the carried-traffic curve of an auxiliary
loss-system load sigma.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

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
    log_factorial,
)

__all__ = [
    "NumericalError",
    "BracketError",
    "UnsupportedConfigError",
    "SolveDiagnostics",
    "OdeResult",
    "join_probs",
    "join_probs_power_of_d",
    "join_probs_pull",
    "join_probs_shedding",
    "join_probs_transfer_invite",
    "join_probs_least_loaded",
    "fixed_point_residual",
    "default_i_max",
    "power_of_d_tail_bound",
    "jsq_fixed_point",
    "shedding_fixed_point",
    "solve_pull_fixed_point",
    "solve_transfer_invite_fixed_point",
    "solve_least_loaded_fixed_point",
    "fixed_point",
    "integrate_ode",
]

logger = logging.getLogger(__name__)

# tails this close to 1 are treated as exactly 1 when picking a dynamics case
CASE_EPS = 1e-9

SIGMA_TOL = 1e-12
CARRIED_RESIDUAL_TOL = 1e-10
PROJECTION_TOL = 1e-6
# a pinned saturated level is released once its drift falls below -RELEASE_EPS
RELEASE_EPS = 1e-9
# inside the invite region the approach to saturation is asymptotic, so levels
# this close to 1 are snapped onto the constraint instead of being integrated
PIN_TOL = 1e-4


class NumericalError(RuntimeError):
    """A numerical procedure left its guaranteed operating envelope."""


class BracketError(NumericalError):
    """Bisection could not bracket or meet the carried-traffic residual."""


class UnsupportedConfigError(ValueError):
    """Configuration outside the analytically supported range."""


def default_i_max(rho: float, high: int | float = 0) -> int:
    """Default top occupancy level tracked: covers the threshold and the
    untruncated Poisson bulk plus a 12-sigma cushion."""
    top = math.ceil(rho + 12.0 * math.sqrt(rho + 1.0))
    if high != math.inf and high > 0:
        top = max(top, int(high))
    return max(top, 8)


def _padded_tail(s: np.ndarray, need: int) -> np.ndarray:
    """Tail extended with zeros so levels up to `need` (plus one spare for
    diffs) can be indexed directly."""
    s = np.asarray(s, dtype=np.float64)
    size = max(s.size + 1, need + 2)
    out = np.zeros(size)
    out[: s.size] = s
    return out


# ---------------------------------------------------------------------------
# join probabilities
# ---------------------------------------------------------------------------


def join_probs_power_of_d(s: np.ndarray, d: int) -> np.ndarray:
    """q[j] = s_j^d - s_{j+1}^d: the sampled minimum sits at level j."""
    sp = _padded_tail(s, 0)
    powers = sp**d
    return powers[:-1] - powers[1:]


def join_probs_shedding(s: np.ndarray, high: int | float) -> np.ndarray:
    """Uniform assignment with arrivals to full servers dropped; the vector
    sums to 1 minus the blocked mass."""
    sp = _padded_tail(s, high if high != math.inf else 0)
    q = sp[:-1] - sp[1:]
    if high != math.inf:
        q[high:] = 0.0
    return q


def join_probs_pull(
    s: np.ndarray, low: int, high: int | float, rho: float
) -> np.ndarray:
    """Invite-steered uniform assignment. Three regimes keyed on whether any
    server sits below `low` (invites outstanding) and whether every server
    has reached `high` (all disinvited)."""
    finite_high = high != math.inf
    sp = _padded_tail(s, max(low, high if finite_high else 0))
    q = np.zeros(sp.size - 1)
    s_low = sp[low]
    s_high = sp[high] if finite_high else 0.0

    if s_low < 1.0 - CASE_EPS:
        # invites outstanding: every arrival lands below `low`
        q[:low] = (sp[:low] - sp[1 : low + 1]) / (1.0 - s_low)
        return q

    if not finite_high or s_high < 1.0 - CASE_EPS:
        # no invites; arrivals spread over the non-disinvited band, except the
        # share absorbed by momentary dips below `low`
        dip = low * (1.0 - sp[low + 1])
        if rho <= dip:
            q[low - 1] = 1.0
            return q
        if low >= 1:
            q[low - 1] = dip / rho
        rem = (rho - dip) / rho
        hb = min(high, q.size) if finite_high else q.size
        q[low:hb] = rem * (sp[low:hb] - sp[low + 1 : hb + 1]) / (1.0 - s_high)
        return q

    # every server at or above `high`: dips below `high` absorb what they can,
    # the rest spreads uniformly over the (full) population
    dip = high * (1.0 - sp[high + 1])
    if rho <= dip:
        q[high - 1] = 1.0
        return q
    q[high - 1] = dip / rho
    rem = (rho - dip) / rho
    q[high:] = rem * (sp[high:-1] - sp[high + 1 :])
    return q


def join_probs_transfer_invite(
    s: np.ndarray, low: int, high: int, rho: float
) -> np.ndarray:
    """Uniform assignment with arrivals hitting a full server re-dispatched to
    inviting servers (below `low`)."""
    sp = _padded_tail(s, max(low, high))
    q = np.zeros(sp.size - 1)
    s_low = sp[low]
    s_high = sp[high]

    if s_low < 1.0 - CASE_EPS:
        boost = (1.0 - s_low + s_high) / (1.0 - s_low)
        q[:low] = (sp[:low] - sp[1 : low + 1]) * boost
        q[low:high] = sp[low:high] - sp[low + 1 : high + 1]
        return q

    if s_high < 1.0 - CASE_EPS:
        dip = low * (1.0 - sp[low + 1])
        diffs = sp[low:high] - sp[low + 1 : high + 1]
        if rho * s_high <= dip:
            # dips below `low` absorb every transfer
            if low >= 1:
                q[low - 1] = s_high
            q[low:high] = diffs
            return q
        if low >= 1:
            q[low - 1] = dip / rho
        rem = (rho * s_high - dip) / rho
        q[low:high] = diffs * (1.0 + rem / (1.0 - s_high))
        return q

    # all servers full: identical to the pull scheme's saturated regime
    dip = high * (1.0 - sp[high + 1])
    if rho <= dip:
        q[high - 1] = 1.0
        return q
    q[high - 1] = dip / rho
    q[high:] = (rho - dip) / rho * (sp[high:-1] - sp[high + 1 :])
    return q


def join_probs_least_loaded(
    s: np.ndarray, high: int, rho: float
) -> np.ndarray:
    """Uniform assignment with arrivals hitting a full server re-dispatched to
    a least-loaded server (occupancy m = lowest level present)."""
    sp = _padded_tail(s, high)
    q = np.zeros(sp.size - 1)
    below = np.nonzero(sp[1:] < 1.0 - CASE_EPS)[0]
    m = int(below[0]) if below.size else sp.size - 1
    s_high = sp[high]

    if m < high:
        dip = m * (1.0 - sp[m + 1])
        if rho * s_high <= dip:
            if m >= 1:
                q[m - 1] = s_high
            q[m:high] = sp[m:high] - sp[m + 1 : high + 1]
            return q
        if m >= 1:
            q[m - 1] = dip / rho
        q[m] = s_high + (rho - m) * (1.0 - sp[m + 1]) / rho
        q[m + 1 : high] = sp[m + 1 : high] - sp[m + 2 : high + 1]
        return q

    # least-loaded level at or above `high`: pure greedy filling of dips
    dip = m * (1.0 - sp[m + 1])
    if rho <= dip:
        q[m - 1] = 1.0
        return q
    q[m - 1] = dip / rho
    q[m] = (rho - dip) / rho
    return q


def join_probs(scheme: SchemeConfig, s: np.ndarray, rho: float) -> np.ndarray:
    if isinstance(scheme, PowerOfD):
        return join_probs_power_of_d(s, scheme.d)
    if isinstance(scheme, PullBased):
        return join_probs_pull(s, scheme.low, scheme.high, rho)
    if isinstance(scheme, Shedding):
        return join_probs_shedding(s, scheme.high)
    if isinstance(scheme, TransferToInvite):
        return join_probs_transfer_invite(s, scheme.low, scheme.high, rho)
    if isinstance(scheme, TransferToLeastLoaded):
        return join_probs_least_loaded(s, scheme.high, rho)
    if isinstance(scheme, BinBased):
        raise UnsupportedConfigError(
            "bin-based scheme has no single-server mean-field dynamics; "
            "compare against the transfer-to-invite fixed point instead"
        )
    raise TypeError(f"unknown scheme config: {scheme!r}")


def fixed_point_residual(
    scheme: SchemeConfig, dist: FlowDistribution, rho: float
) -> float:
    """Sup-norm of the stationarity gap rho*q[i-1] - i*p_i over i >= 1."""
    q = join_probs(scheme, dist.to_tail(), rho)
    p = np.zeros(q.size + 1)
    p[: dist.p.size] = dist.p
    i = np.arange(1, q.size + 1)
    return float(np.max(np.abs(rho * q - i * p[1:])))


# ---------------------------------------------------------------------------
# closed-form fixed points
# ---------------------------------------------------------------------------


def jsq_fixed_point(rho: float) -> FlowDistribution:
    """Limiting occupancy under join-shortest-queue flow assignment: mass
    only on floor(rho) and floor(rho)+1, mean exactly rho."""
    if rho < 0 or not math.isfinite(rho):
        raise ValueError(f"rho must be non-negative and finite, got {rho!r}")
    k = math.floor(rho)
    p = np.zeros(k + 2)
    p[k] = k + 1 - rho
    p[k + 1] = rho - k
    return FlowDistribution(p)


def shedding_fixed_point(rho: float, high: int | float) -> FlowDistribution:
    """Poisson(rho) occupancy truncated at `high` and renormalized."""
    if rho <= 0 or not math.isfinite(rho):
        raise ValueError(f"rho must be positive and finite, got {rho!r}")
    if high == math.inf:
        top = default_i_max(rho)
    else:
        if not isinstance(high, int) or high < 1:
            raise ValueError(f"high must be a positive int or math.inf, got {high!r}")
        top = high
    k = np.arange(top + 1)
    logs = k * math.log(rho) - log_factorial(k)
    w = np.exp(logs - logs.max())
    return FlowDistribution(w / w.sum())


def power_of_d_tail_bound(rho: float, d: int, i: int) -> float:
    """Upper bound on the stationary tail s_i under d-choices assignment:
    1 up to floor(rho), then a doubly-geometric decay."""
    if rho <= 0 or not math.isfinite(rho):
        raise ValueError(f"rho must be positive and finite, got {rho!r}")
    if not isinstance(d, int) or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    if not isinstance(i, int) or i < 0:
        raise ValueError(f"i must be a non-negative integer, got {i!r}")
    k = math.floor(rho)
    if i <= k:
        return 1.0
    log_r = math.log(rho / (k + 1))  # < 0 since rho < k+1
    j = i - k
    if d == 1:
        exponent = float(j)
    else:
        exact = (d**j - 1) // (d - 1)  # exact integer geometric sum
        try:
            exponent = float(exact)
        except OverflowError:
            return 0.0
    x = exponent * log_r
    return math.exp(x) if x > -745.0 else 0.0


# ---------------------------------------------------------------------------
# sigma solvers (carried-traffic bisection)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveDiagnostics:
    """How a fixed-point load sigma was found: bisection iterations, the
    carried-traffic residual, and the dummy-user rate of the equivalent
    loss system (None where the regime has no such interpretation)."""

    sigma: float
    iterations: int
    residual: float
    dummy_user_rate: float | None


def _bisect_carried(
    carried: Callable[[float], float], rho: float, lo: float, hi: float
) -> tuple[float, int]:
    """Root of carried(sigma) = rho for a non-decreasing carried-traffic
    curve; widens the bracket geometrically if needed."""
    if carried(lo) > rho + CARRIED_RESIDUAL_TOL:
        raise BracketError(
            f"carried traffic at lower bracket {lo:g} already exceeds rho={rho:g}"
        )
    iterations = 0
    widen = 0
    while carried(hi) < rho:
        lo, hi = hi, 2.0 * hi + 1.0
        widen += 1
        if widen > 200:
            raise BracketError(f"could not bracket carried traffic rho={rho:g}")
    while hi - lo > SIGMA_TOL and iterations < 400:
        mid = 0.5 * (lo + hi)
        if carried(mid) < rho:
            lo = mid
        else:
            hi = mid
        iterations += 1
    return 0.5 * (lo + hi), iterations + widen


def _window_weights(sigma: float, lo: int, hi: int) -> np.ndarray:
    """Normalized weights proportional to sigma^i / i! on lo..hi."""
    if sigma <= 0.0:
        w = np.zeros(hi - lo + 1)
        w[0] = 1.0
        return w
    k = np.arange(lo, hi + 1)
    logs = k * math.log(sigma) - log_factorial(k)
    w = np.exp(logs - logs.max())
    return w / w.sum()


def _open_top(sigma: float, lo: int) -> int:
    # support cut far enough out that the discarded geometric tail is < 1e-15
    base = max(sigma, float(lo))
    return int(base + 12.0 * math.sqrt(base + 1.0) + 60)


def _carried_window(sigma: float, lo: int, hi: int | float) -> tuple[float, np.ndarray]:
    """Carried traffic sigma*(1 - w_top) + lo*w_lo of the loss system living
    on levels lo..hi, together with the weights themselves."""
    if hi == math.inf:
        w = _window_weights(sigma, lo, _open_top(sigma, lo))
        top_mass = 0.0
    else:
        w = _window_weights(sigma, lo, int(hi))
        top_mass = float(w[-1])
    return sigma * (1.0 - top_mass) + lo * float(w[0]), w


def _solve_window(
    rho: float, lo: int, hi: int | float, span: int
) -> tuple[np.ndarray, float, int, float]:
    def carried(sigma: float) -> float:
        return _carried_window(sigma, lo, hi)[0]

    bracket_lo = max(0.0, rho - (hi if hi != math.inf else rho))
    bracket_hi = rho + 10.0 * span
    sigma, iterations = _bisect_carried(carried, rho, bracket_lo, bracket_hi)
    value, w = _carried_window(sigma, lo, hi)
    residual = abs(value - rho)
    if residual > CARRIED_RESIDUAL_TOL:
        raise BracketError(
            f"carried-traffic residual {residual:g} above {CARRIED_RESIDUAL_TOL:g}"
        )
    return w, sigma, iterations, residual


def _embed(weights: np.ndarray, lo: int) -> FlowDistribution:
    p = np.zeros(lo + weights.size)
    p[lo:] = weights
    return FlowDistribution(p)


def solve_pull_fixed_point(
    rho: float, low: int, high: int | float
) -> tuple[FlowDistribution, SolveDiagnostics]:
    """Fixed point of the invite/disinvite scheme. The regime depends on
    where rho sits relative to the thresholds: below `low` the system is a
    pure loss system on 0..low, between the thresholds it lives on
    low..high, and at rho >= high mass piles above the upper threshold."""
    if rho <= 0 or not math.isfinite(rho):
        raise ValueError(f"rho must be positive and finite, got {rho!r}")
    PullBased(low, high)  # reuse threshold validation

    if rho < low:
        lo: int = 0
        hi: int | float = low
        span = low + 1
    elif high != math.inf and rho >= high:
        lo = int(high)
        hi = math.inf
        span = int(high) - low + 1
    else:
        lo = low
        hi = high
        span = (int(high) - low + 1) if high != math.inf else 64

    w, sigma, iterations, residual = _solve_window(rho, lo, hi, span)
    dist = _embed(w, lo)

    if rho < low or sigma <= 0.0:
        dummy = None
    elif hi == math.inf:
        dummy = lo * float(w[0]) / sigma
    else:
        dummy = lo * float(w[0]) / sigma
    return dist, SolveDiagnostics(
        sigma=sigma, iterations=iterations, residual=residual, dummy_user_rate=dummy
    )


def solve_transfer_invite_fixed_point(
    rho: float, low: int, high: int
) -> tuple[FlowDistribution, SolveDiagnostics]:
    """Fixed point of uniform assignment with full-server transfers to
    inviting servers.

    At rho >= high it coincides with the pull scheme.  Between the
    thresholds the pull window law on [low, high] is stationary only while
    the transfer stream outpaces the dips appearing at the low edge
    (rho * p_high >= low * p_low at the solved window law); when the window
    leans left that fails, transfers land below `low` faster than arrivals
    refill, and the support spills below the low threshold.  There, and for
    rho < low, the law splices a sigma-Poisson profile below `low` onto a
    rho-ratio profile up to `high`, with sigma matching the mean to rho."""
    if rho <= 0 or not math.isfinite(rho):
        raise ValueError(f"rho must be positive and finite, got {rho!r}")
    TransferToInvite(low, high)

    if rho >= high:
        return solve_pull_fixed_point(rho, low, high)
    if rho >= low:
        dist, diag = solve_pull_fixed_point(rho, low, high)
        padded = np.zeros(high + 1)
        padded[: dist.p.size] = dist.p
        if rho * padded[high] >= low * padded[low]:
            return dist, diag

    k = np.arange(high + 1)
    log_rho = math.log(rho)

    def log_weights(sigma: float) -> np.ndarray:
        logs = np.empty(high + 1)
        ls = math.log(sigma)
        logs[: low + 1] = k[: low + 1] * ls - log_factorial(k[: low + 1])
        logs[low + 1 :] = (
            low * ls
            + (k[low + 1 :] - low) * log_rho
            - log_factorial(k[low + 1 :])
        )
        return logs

    def mean_occ(sigma: float) -> float:
        if sigma <= 0.0:
            return 0.0
        logs = log_weights(sigma)
        w = np.exp(logs - logs.max())
        w /= w.sum()
        return float(k @ w)

    sigma, iterations = _bisect_carried(mean_occ, rho, 0.0, rho + 10.0 * (high - low + 1))
    residual = abs(mean_occ(sigma) - rho)
    if residual > CARRIED_RESIDUAL_TOL:
        raise BracketError(
            f"carried-traffic residual {residual:g} above {CARRIED_RESIDUAL_TOL:g}"
        )
    logs = log_weights(sigma)
    w = np.exp(logs - logs.max())
    dist = FlowDistribution(w / w.sum())
    return dist, SolveDiagnostics(
        sigma=sigma, iterations=iterations, residual=residual, dummy_user_rate=None
    )


def solve_least_loaded_fixed_point(rho: float, high: int) -> FlowDistribution:
    """Fixed point of uniform assignment with full-server transfers to a
    least-loaded server. Below `high` the support is a band i*..high with a
    geometric-over-factorial profile; at rho >= high the scheme behaves like
    join-shortest-queue."""
    if rho <= 0 or not math.isfinite(rho):
        raise ValueError(f"rho must be positive and finite, got {rho!r}")
    TransferToLeastLoaded(high)

    if rho >= high:
        return jsq_fixed_point(rho)

    log_rho = math.log(rho)

    def log_u(i: int) -> float:
        # log of [h!/(rho^{h-i} i!)], i.e. the weight relative to level `high`
        return log_factorial(high) - log_factorial(i) + (i - high) * log_rho

    istar = next(i for i in range(high + 1) if log_u(i) > 0.0)
    if istar == 0:
        raise UnsupportedConfigError(
            f"support would reach occupancy 0 (rho={rho:g}, high={high}); "
            "band fixed point undefined there"
        )

    band = np.arange(istar + 1, high + 1)
    u = np.exp(log_factorial(high) - log_factorial(band) + (band - high) * log_rho)
    a = math.exp(log_u(istar))
    u_star = rho / (rho - istar) * (a - 1.0)
    total = u_star + float(u.sum())
    p = np.zeros(high + 1)
    p[istar] = u_star / total
    p[istar + 1 :] = u / total
    dist = FlowDistribution(p)

    gap = abs(dist.mean() - rho)
    if gap > 1e-8:
        # reported, not asserted: the band form does not guarantee mean rho
        logger.warning(
            "least-loaded fixed point mean deviates from rho by %.3e "
            "(rho=%g, high=%d)", gap, rho, high
        )
    return dist


def fixed_point(scheme: SchemeConfig, rho: float) -> FlowDistribution:
    """Analytic fixed point for schemes that have one (d-choices with d >= 2
    does not; the bin scheme has no single-server mean-field)."""
    if isinstance(scheme, PowerOfD):
        if scheme.d == 1:
            return shedding_fixed_point(rho, math.inf)
        raise UnsupportedConfigError(
            "d-choices with d >= 2 has no closed-form fixed point; "
            "use integrate_ode and power_of_d_tail_bound"
        )
    if isinstance(scheme, PullBased):
        return solve_pull_fixed_point(rho, scheme.low, scheme.high)[0]
    if isinstance(scheme, Shedding):
        if scheme.high == math.inf:
            return shedding_fixed_point(rho, math.inf)
        return shedding_fixed_point(rho, int(scheme.high))
    if isinstance(scheme, TransferToInvite):
        return solve_transfer_invite_fixed_point(rho, scheme.low, scheme.high)[0]
    if isinstance(scheme, TransferToLeastLoaded):
        return solve_least_loaded_fixed_point(rho, scheme.high)
    raise UnsupportedConfigError(f"no analytic fixed point for {scheme!r}")


# ---------------------------------------------------------------------------
# ODE integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OdeResult:
    """Terminal state of a mean-field integration plus bookkeeping."""

    t: float
    tail: np.ndarray
    residual: float
    max_projection: float
    steps: int
    trajectory: tuple[tuple[float, np.ndarray], ...]

    def distribution(self) -> FlowDistribution:
        return FlowDistribution.from_tail(self.tail)


def integrate_ode(
    scheme: SchemeConfig,
    params: SystemParams,
    s0: np.ndarray,
    t_end: float,
    dt: float | None = None,
    *,
    stop_residual: float | None = None,
    record_every: float | None = None,
) -> OdeResult:
    """Integrate the occupancy-tail ODE with fixed-step RK4.

    The threshold schemes switch vector fields on saturation surfaces (a tail
    entry hitting 1) and their rates blow up as those surfaces are approached,
    so the flow is integrated as a hybrid system: once a tail entry reaches 1
    it is pinned there and the saturated-case dynamics take over, until the
    drift at the constraint turns negative and the entry is released.  Every
    state fed to the rate evaluation is first projected onto valid tails
    (s_0 = 1, pinned prefix at 1, entries in [0, 1], non-increasing).  A
    projection repair larger than PROJECTION_TOL at the terminal step aborts;
    stop_residual stops early once sup|ds/dt| falls below it.

    Below the invite threshold the snap-to-constraint window is PIN_TOL wide,
    so configurations whose true stationary tails there fall within PIN_TOL of
    1 (offered load just under the invite threshold) may see those entries
    biased by up to PIN_TOL.  For the same reason, when rho sits below the
    invite threshold, starts whose transient saturates the sub-threshold
    levels (every server above ceil(rho) at once) can stick at a spurious
    point mass at ceil(rho); use starts that keep those tails off 1, such as
    the empty state."""
    s = np.asarray(s0, dtype=np.float64).copy()
    if s.ndim != 1 or s.size < 2:
        raise ValueError("s0 must be a 1-d tail with at least two levels")
    if abs(s[0] - 1.0) > 1e-9:
        raise ValueError(f"s0[0] must be 1, got {s[0]!r}")
    if np.any(np.diff(s) > 1e-9) or np.any(s < -1e-9) or np.any(s > 1.0 + 1e-9):
        raise ValueError("s0 must be a non-increasing tail in [0, 1]")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    lam, beta, rho = params.lam, params.beta, params.rho
    if dt is None:
        dt = 1e-3 * beta
    if dt <= 0:
        raise ValueError("dt must be positive")

    size = s.size
    idx = np.arange(1, size)

    # Saturated-prefix bookkeeping: levels whose tail has reached 1 are pinned
    # there (they are fast variables slaved to the saturation constraint; the
    # scheme's saturated-case dynamics only apply when the tail is exactly 1).
    # A pinned level is released as soon as its drift at the constraint turns
    # negative, i.e. the sliding mode can no longer hold it.
    invite_low = (
        scheme.low if isinstance(scheme, (PullBased, TransferToInvite)) else None
    )

    def may_pin(level: int, value: float) -> bool:
        if value >= 1.0 - 1e-12:
            return True
        # slaved dip in the invite region: relaxation to 1 is asymptotic and
        # arbitrarily stiff, so snap once the remaining distance is negligible
        if invite_low is not None and level < invite_low:
            return value >= 1.0 - PIN_TOL
        return False

    sat = 0
    while sat + 1 < size and may_pin(sat + 1, float(s[sat + 1])):
        sat += 1
        s[sat] = 1.0

    def project(state: np.ndarray) -> np.ndarray:
        state[: sat + 1] = 1.0
        np.clip(state, 0.0, 1.0, out=state)
        np.minimum.accumulate(state, out=state)
        return state

    # Departures out of a pinned prefix open transient dips that fall inside
    # the invite set of the pull-family schemes, where the join weights are
    # normalised by the vanishing mass below the invite threshold.  Those dips
    # are then refilled arbitrarily fast, so on the slow timescale they siphon
    # their refill demand off the arrival stream before it reaches the
    # unsaturated levels.  Other schemes (and saturated levels at or above the
    # threshold) give dips no such priority and need no correction.
    def rhs(state: np.ndarray) -> np.ndarray:
        q = join_probs(scheme, state, rho)
        upper = np.empty(size)
        upper[:-1] = state[1:]
        upper[-1] = 0.0
        ds = np.empty(size)
        ds[0] = 0.0
        ds[1:] = lam * q[: size - 1] - idx * (state[1:] - upper[1:]) / beta
        if invite_low is not None and 0 < sat < invite_low and ds[sat] < 0.0:
            # if the whole stream cannot cover the refill demand, ds[sat]
            # stays negative and the release rule frees the level
            deficit = -float(ds[sat])
            visible = lam * float(q[sat : size - 1].sum())
            cover = min(deficit, visible)
            if cover > 0.0:
                ds[sat] += cover
                scale = cover / visible
                ds[sat + 1 :] -= (lam * scale) * q[sat : size - 1]
        return ds

    n_steps = max(1, math.ceil(t_end / dt))
    record_stride = (
        max(1, round(record_every / dt)) if record_every is not None else None
    )
    trajectory: list[tuple[float, np.ndarray]] = []
    max_projection = 0.0
    last_projection = 0.0
    t = 0.0
    k1 = rhs(s)
    while sat > 0 and k1[sat] < -RELEASE_EPS:
        sat -= 1
    step = 0
    while step < n_steps:
        if stop_residual is not None and float(np.abs(k1).max()) < stop_residual:
            break
        # stage states are projected so the join probabilities only ever see
        # valid tails; in smooth regions the projection is the identity and
        # this is classical RK4
        k2 = rhs(project(s + (0.5 * dt) * k1))
        k3 = rhs(project(s + (0.5 * dt) * k2))
        k4 = rhs(project(s + dt * k3))
        s_next = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        raw = s_next.copy()
        project(s_next)
        last_projection = float(np.abs(raw - s_next).max())
        if last_projection > max_projection:
            max_projection = last_projection
        s = s_next
        # a level that climbed to 1 joins the pinned prefix; its saturated-case
        # drift is then evaluated with the tail exactly at 1
        while sat + 1 < size and may_pin(sat + 1, float(s[sat + 1])):
            sat += 1
            s[sat] = 1.0
        t += dt
        step += 1
        if record_stride is not None and step % record_stride == 0:
            frozen = s.copy()
            frozen.flags.writeable = False
            trajectory.append((t, frozen))
        k1 = rhs(s)
        while sat > 0 and k1[sat] < -RELEASE_EPS:
            sat -= 1

    # large repairs during a saturation transient are the hybrid dynamics
    # sliding along the constraint set, so only a repair that persists at the
    # terminal step marks a numerically untrustworthy run
    if last_projection > PROJECTION_TOL:
        raise NumericalError(
            f"projection distance {last_projection:g} at the terminal step "
            f"exceeds {PROJECTION_TOL:g}; reduce dt"
        )

    s.flags.writeable = False
    return OdeResult(
        t=t,
        tail=s,
        residual=float(np.abs(k1).max()),
        max_projection=max_projection,
        steps=step,
        trajectory=tuple(trajectory),
    )
