"""
Analytic formulas for a single M/M/k/k loss queue.

A queue has ``k`` servers, a per-server service rate ``mu`` and no waiting
room. Tasks that find every server busy are rejected. Everything here is a
pure function of its inputs.
"""

from dataclasses import dataclass

import numpy as np

# rescale the unnormalised terms before they overflow a double
_RESCALE_AT = 1e250


class InvalidQueueError(ValueError):
    """Raised for queue parameters outside their valid domain."""


@dataclass(frozen=True)
class QueueSpec:
    """One finite-capacity queue (a block-face with ``servers`` spaces)."""

    servers: int
    service_rate: float
    exo_arrival_rate: float = 0.0

    def __post_init__(self):
        if isinstance(self.servers, bool) or int(self.servers) != self.servers or self.servers < 1:
            raise InvalidQueueError(f"servers must be a positive integer, got {self.servers!r}")
        if not np.isfinite(self.service_rate) or self.service_rate <= 0:
            raise InvalidQueueError(f"service_rate must be positive, got {self.service_rate!r}")
        if not np.isfinite(self.exo_arrival_rate) or self.exo_arrival_rate < 0:
            raise InvalidQueueError(
                f"exo_arrival_rate must be nonnegative, got {self.exo_arrival_rate!r}"
            )
        object.__setattr__(self, "servers", int(self.servers))

    @property
    def capacity(self):
        """Maximum service throughput ``k * mu``."""
        return self.servers * self.service_rate


@dataclass(frozen=True)
class StationaryDistribution:
    probs: np.ndarray
    total_arrival_rate: float
    utilization: float

    @property
    def servers(self):
        return len(self.probs) - 1

    @property
    def blocking(self):
        return float(self.probs[-1])

    @property
    def occupancy(self):
        k = self.servers
        return self.utilization / k * (1.0 - self.blocking)

    @property
    def rejection_rate(self):
        return self.total_arrival_rate * self.blocking

    @property
    def mean_busy(self):
        return float(np.dot(np.arange(len(self.probs)), self.probs))


def _check_rate(total_arrival_rate):
    y = float(total_arrival_rate)
    if not np.isfinite(y) or y < 0:
        raise InvalidQueueError(f"total arrival rate must be finite and >= 0, got {total_arrival_rate!r}")
    return y


def stationary_distribution(spec, total_arrival_rate):
    """
    Stationary distribution of busy-server counts for an M/M/k/k queue.

    Parameters
    ----------
    spec : QueueSpec
        Server count and service rate; the exogenous rate is ignored.
    total_arrival_rate : float
        Combined (exogenous plus rejected-from-neighbours) arrival rate ``y``.
        Zero gives the empty-system distribution.

    Returns
    -------
    StationaryDistribution
        ``probs[i]`` is the long-run probability that ``i`` servers are busy,
        proportional to ``rho**i / i!`` with ``rho = y / mu``.
    """
    y = _check_rate(total_arrival_rate)
    k = spec.servers
    rho = y / spec.service_rate
    terms = np.empty(k + 1)
    t = 1.0
    terms[0] = t
    for i in range(1, k + 1):
        t *= rho / i
        if t > _RESCALE_AT:
            terms[:i] /= t
            t = 1.0
        terms[i] = t
    probs = terms / terms.sum()
    return StationaryDistribution(probs=probs, total_arrival_rate=y, utilization=rho)


def erlang_b(servers, offered_load):
    """Erlang-B blocking via ``B_j = a B_{j-1} / (j + a B_{j-1})``, ``B_0 = 1``."""
    if offered_load < 0:
        raise InvalidQueueError("offered load must be nonnegative")
    b = 1.0
    for j in range(1, int(servers) + 1):
        b = offered_load * b / (j + offered_load * b)
    return b


def blocking_probability(spec, total_arrival_rate):
    """Probability that all ``k`` servers are busy (the Erlang-B value)."""
    return stationary_distribution(spec, total_arrival_rate).blocking


def occupancy(spec, total_arrival_rate):
    """Fraction of busy servers, ``y / (k mu) * (1 - pi_k)``, by Little's law."""
    return stationary_distribution(spec, total_arrival_rate).occupancy


def rejection_rate(spec, total_arrival_rate):
    """Rate at which arrivals are turned away, ``y * pi_k``."""
    return stationary_distribution(spec, total_arrival_rate).rejection_rate


def birth_death_generator(spec, total_arrival_rate):
    """Explicit ``(k+1) x (k+1)`` transition-rate matrix of the queue."""
    y = _check_rate(total_arrival_rate)
    k, mu = spec.servers, spec.service_rate
    q = np.zeros((k + 1, k + 1))
    for i in range(k):
        q[i, i + 1] = y
        q[i + 1, i] = (i + 1) * mu
    q[np.diag_indices_from(q)] = -q.sum(axis=1)
    return q


def ctmc_stationary(generator):
    """
    Solve ``pi Q = 0`` with ``sum(pi) = 1`` for an irreducible generator.

    One balance equation is replaced by the normalisation constraint.
    """
    q = np.asarray(generator, dtype=float)
    n = q.shape[0]
    a = q.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
