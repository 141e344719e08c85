"""
Rate solvers for networks of loss queues.

Three problems are handled here:

* the symmetric (d-regular, identical queues) fixed point where every queue
  receives ``d`` equal rejection streams from its neighbours;
* inverting an observed occupancy into the total arrival rate that attains it;
* the two-node network relaxed to a four-state Markov chain, with the
  rejection flows found by fixed-point iteration.

All root finding is done by bisection on monotone maps rather than by
polynomial root solvers, whose coefficients carry ``1/i!`` and ``mu**(1-i)``
factors and lose precision for large ``k``. The polynomial coefficients are
still exposed for sign-change diagnostics.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .queue import QueueSpec, ctmc_stationary, stationary_distribution


class StabilityError(ValueError):
    """Exogenous load meets or exceeds service capacity."""


class ConvergenceError(RuntimeError):
    """Fixed-point iteration ran out of iterations; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


_MAX_BISECTIONS = 400
_MAX_DOUBLINGS = 2000


def _bisect_increasing(f, lo, hi, tolerance):
    """Root of an increasing ``f`` bracketed by ``f(lo) <= 0 < f(hi)``."""
    for _ in range(_MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
        if abs(fm) < tolerance and hi - lo <= tolerance * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def _expand_bracket(f, start):
    hi = start
    for _ in range(_MAX_DOUBLINGS):
        if f(hi) > 0:
            return hi
        hi *= 2.0
    raise ConvergenceError(f"could not bracket root starting from {start}")


# ---------------------------------------------------------------------------
# symmetric networks


@dataclass(frozen=True)
class SymmetricNetworkSpec:
    degree: int
    queue: QueueSpec

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"degree must be a positive integer, got {self.degree!r}")


@dataclass(frozen=True)
class SymmetricSolution:
    total_arrival_rate: float
    per_neighbor_rejection: float
    blocking: float
    occupancy: float


def solve_symmetric(spec, tolerance=1e-12):
    """
    Total arrival rate of every queue in a d-regular network of identical queues.

    Solves ``y - lam = y * pi_k(y)`` for the unique ``y > lam`` by bisection on
    ``g(y) = y - lam - y * pi_k(y)``. ``g(lam) < 0`` for ``lam > 0`` and the
    upper end of the bracket is found by doubling.

    Raises
    ------
    StabilityError
        If the exogenous rate is at least ``k * mu``.
    """
    q = spec.queue
    lam = q.exo_arrival_rate
    if lam >= q.capacity:
        raise StabilityError(
            f"exogenous rate {lam} must be below capacity k*mu = {q.capacity}"
        )
    if lam == 0:
        return SymmetricSolution(0.0, 0.0, 0.0, 0.0)

    def g(y):
        return y - lam - stationary_distribution(q, y).rejection_rate

    hi = _expand_bracket(g, 2.0 * lam)
    y = _bisect_increasing(g, lam, hi, tolerance * lam)
    dist = stationary_distribution(q, y)
    return SymmetricSolution(
        total_arrival_rate=y,
        per_neighbor_rejection=dist.rejection_rate / spec.degree,
        blocking=dist.blocking,
        occupancy=dist.occupancy,
    )


def symmetric_polynomial_coefficients(servers, service_rate, exo_arrival_rate):
    """
    Coefficients (constant term first) of the symmetric fixed point written as
    a polynomial in ``y``: ``c_j = (j mu - lam) / (mu**j j!)``.
    """
    mu, lam = float(service_rate), float(exo_arrival_rate)
    return np.array(
        [(j * mu - lam) / (mu**j * math.factorial(j)) for j in range(int(servers) + 1)]
    )


# ---------------------------------------------------------------------------
# occupancy inversion


def occupancy_polynomial_coefficients(servers, service_rate, occupancy):
    """
    Coefficients (constant term first) of the polynomial whose positive root
    is the arrival rate attaining ``occupancy``:
    ``c_i = mu**(1-i) * (i - u k) / i!``.
    """
    k, mu, u = int(servers), float(service_rate), float(occupancy)
    return np.array([mu ** (1 - i) * (i - u * k) / math.factorial(i) for i in range(k + 1)])


def invert_occupancy(servers, service_rate, occupancy, tolerance=1e-12):
    """
    Total arrival rate ``y`` at which an M/M/k/k queue has the given occupancy.

    Occupancy is strictly increasing in ``y`` and tends to 1, so the root is
    found by doubling an upper bound and bisecting.

    Parameters
    ----------
    servers, service_rate :
        Queue parameters ``k`` and ``mu``.
    occupancy : float
        Observed busy fraction in ``[0, 1)``. Clamp raw loads before calling.
    tolerance : float
        Target absolute residual on the occupancy.
    """
    u = float(occupancy)
    if not np.isfinite(u) or u < 0:
        raise ValueError(f"occupancy must be in [0, 1), got {occupancy!r}")
    if u >= 1:
        raise ValueError(
            f"occupancy must be below 1 (full occupancy needs infinite arrivals), got {occupancy!r}"
        )
    spec = QueueSpec(servers, service_rate)
    if u == 0:
        return 0.0

    def f(y):
        return stationary_distribution(spec, y).occupancy - u

    hi = _expand_bracket(f, spec.capacity)
    return _bisect_increasing(f, 0.0, hi, tolerance)


def descartes_positive_roots(coefficients):
    """
    Number of sign changes in the nonzero coefficients.

    By Descartes' rule of signs this bounds the number of positive real roots
    and has the same parity.
    """
    c = np.asarray(coefficients, dtype=float)
    signs = np.sign(c[c != 0])
    if signs.size == 0:
        raise ValueError("at least one coefficient must be nonzero")
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


# ---------------------------------------------------------------------------
# two-node network


@dataclass(frozen=True)
class TwoNodeSpec:
    lambda1: float
    lambda2: float
    mu1: float
    mu2: float
    travel_time: float = 1.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2) < 0:
            raise ValueError("exogenous rates must be nonnegative")
        if min(self.mu1, self.mu2) <= 0:
            raise ValueError("service rates must be positive")
        if self.travel_time <= 0:
            raise ValueError("travel_time must be positive")
        if self.lambda1 + self.lambda2 >= self.mu1 + self.mu2:
            raise StabilityError("need lambda1 + lambda2 < mu1 + mu2")


@dataclass(frozen=True)
class TwoNodeSolution:
    pi: np.ndarray
    x12: float
    x21: float
    p_full_1: float
    p_full_2: float
    sojourn_1: float
    sojourn_2: float
    mean_sojourn: float
    iterations: int = field(default=0, compare=False)


def two_node_generator(spec, x12, x21):
    """
    Four-state generator over (both idle, 1 busy, 2 busy, both busy).

    Queue 1 fills at rate ``lambda1 + x21`` (its exogenous stream plus the
    tasks rejected by queue 2) and queue 2 at ``lambda2 + x12``.
    """
    a1 = spec.lambda1 + x21
    a2 = spec.lambda2 + x12
    q = np.array(
        [
            [0.0, a1, a2, 0.0],
            [spec.mu1, 0.0, 0.0, a2],
            [spec.mu2, 0.0, 0.0, a1],
            [0.0, spec.mu2, spec.mu1, 0.0],
        ]
    )
    q[np.diag_indices_from(q)] = -q.sum(axis=1)
    return q


def _two_node_map(spec, x12, x21):
    pi = ctmc_stationary(two_node_generator(spec, x12, x21))
    p1 = pi[1] + pi[3]
    p2 = pi[2] + pi[3]
    new12 = (spec.lambda1 + x21) * p1
    new21 = (spec.lambda2 + new12) * p2
    return pi, p1, p2, new12, new21


def two_node_sojourn(p_full_1, p_full_2, travel_time):
    """
    Expected search time for tasks entering node 1 or node 2 first.

    Each rejection costs one traversal of ``travel_time``; the two recursions
    ``W1 = P1 (d + W2)`` and ``W2 = P2 (d + W1)`` are solved jointly.
    """
    denom = 1.0 - p_full_1 * p_full_2
    if denom <= 0:
        return math.inf, math.inf
    w1 = p_full_1 * (1.0 + p_full_2) * travel_time / denom
    w2 = p_full_2 * (1.0 + p_full_1) * travel_time / denom
    return w1, w2


def solve_two_node(spec, tolerance=1e-9, max_iterations=10_000):
    """
    Rejection flows and stationary distribution of the relaxed two-node network.

    Iterates ``x12 <- (lambda1 + x21) P1`` then ``x21 <- (lambda2 + x12) P2``
    from zero flows, where ``P_i`` is the stationary probability queue ``i``
    is busy. The step is halved whenever successive updates of a flow
    alternate in sign.

    Raises
    ------
    ConvergenceError
        After ``max_iterations`` without both flows changing by less than
        ``tolerance``. The exception's ``last`` attribute holds ``(x12, x21)``.
    """
    x12 = x21 = 0.0
    step = 1.0
    prev = (0.0, 0.0)
    for it in range(1, max_iterations + 1):
        _, _, _, t12, t21 = _two_node_map(spec, x12, x21)
        d12, d21 = t12 - x12, t21 - x21
        if (d12 * prev[0] < 0 or d21 * prev[1] < 0) and step > 1e-6:
            step *= 0.5
        prev = (d12, d21)
        x12 += step * d12
        x21 += step * d21
        if abs(step * d12) < tolerance and abs(step * d21) < tolerance:
            break
    else:
        raise ConvergenceError(
            f"two-node iteration did not converge in {max_iterations} steps",
            last=(x12, x21),
        )

    pi = ctmc_stationary(two_node_generator(spec, x12, x21))
    p1 = float(pi[1] + pi[3])
    p2 = float(pi[2] + pi[3])
    w1, w2 = two_node_sojourn(p1, p2, spec.travel_time)
    return TwoNodeSolution(
        pi=pi,
        x12=x12,
        x21=x21,
        p_full_1=p1,
        p_full_2=p2,
        sojourn_1=w1,
        sojourn_2=w2,
        mean_sojourn=0.5 * (w1 + w2),
        iterations=it,
    )
