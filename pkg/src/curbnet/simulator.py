"""
Discrete-event simulation of a network of loss queues with searching tasks.

Tasks arrive at each queue as a Poisson stream. An arriving task takes a
free server if there is one and leaves the network when its service ends.
Otherwise it is rejected, picks one of the queue's out-edges uniformly at
random and arrives at the far end after the edge's fixed travel time, where
it tries again.

Each replication draws from three independent random streams (exogenous
arrivals, service times, routing) derived from its seed. Runs that differ
only in the service distribution therefore see identical exogenous arrival
epochs, which keeps M/M versus M/D comparisons paired.
"""

import heapq
import math
import random
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .network import stability_check

EXPONENTIAL = "exponential"
DETERMINISTIC = "deterministic"
EMPIRICAL = "empirical"

_EXO, _EDGE, _DEPART = 0, 1, 2
_CHECKPOINTS = 10


class SimulationConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceDistribution:
    kind: str
    mean: float
    samples: tuple = ()

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, DETERMINISTIC, EMPIRICAL):
            raise SimulationConfigError(f"unknown service kind {self.kind!r}")
        if self.kind == EMPIRICAL:
            if not self.samples:
                raise SimulationConfigError("empirical service needs at least one sample")
            if min(self.samples) <= 0:
                raise SimulationConfigError("empirical service samples must be positive")
        if not self.mean > 0 or not math.isfinite(self.mean):
            raise SimulationConfigError(f"service mean must be positive, got {self.mean!r}")

    @classmethod
    def exponential(cls, mean):
        return cls(EXPONENTIAL, float(mean))

    @classmethod
    def deterministic(cls, value):
        return cls(DETERMINISTIC, float(value))

    @classmethod
    def empirical(cls, samples):
        samples = tuple(float(s) for s in samples)
        if not samples:
            raise SimulationConfigError("empirical service needs at least one sample")
        return cls(EMPIRICAL, sum(samples) / len(samples), samples)


def sample_service(dist, rng):
    """Draw one service time from ``dist`` using a ``random.Random`` stream."""
    if dist.kind == EXPONENTIAL:
        return dist.mean * -math.log(1.0 - rng.random())
    if dist.kind == DETERMINISTIC:
        return dist.mean
    return dist.samples[rng.randrange(len(dist.samples))]


def _sampler(dist, rng):
    if dist.kind == EXPONENTIAL:
        mean, draw, log = dist.mean, rng.random, math.log
        return lambda: -mean * log(1.0 - draw())
    if dist.kind == DETERMINISTIC:
        value = dist.mean
        return lambda: value
    samples, pick = dist.samples, rng.randrange
    n = len(samples)
    return lambda: samples[pick(n)]


def default_service(topology, kind=EXPONENTIAL):
    """Per-node service distributions with mean ``1 / service_rate``."""
    out = {}
    for node_id, spec in topology.nodes.items():
        mean = 1.0 / spec.service_rate
        if kind == EXPONENTIAL:
            out[node_id] = ServiceDistribution.exponential(mean)
        elif kind == DETERMINISTIC:
            out[node_id] = ServiceDistribution.deterministic(mean)
        else:
            raise SimulationConfigError(f"default service cannot be {kind!r}")
    return out


@dataclass(frozen=True)
class SimConfig:
    """
    Everything needed to reproduce a simulation.

    ``service`` maps node id to a ServiceDistribution; nodes left out get an
    exponential distribution with mean ``1 / service_rate``. ``warmup=None``
    means one fifth of the horizon. ``dead_end`` says what happens to a task
    rejected by a node without out-edges: ``"error"`` aborts the run,
    ``"drop"`` lets it leave the network (an isolated loss queue).
    """

    topology: object
    horizon: float
    service: dict = field(default_factory=dict)
    warmup: float = None
    seed: int = 0
    replications: int = 1
    convergence_bucket: float = None
    dead_end: str = "error"

    def __post_init__(self):
        if not self.horizon > 0:
            raise SimulationConfigError("horizon must be positive")
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.horizon / 5.0)
        if not 0 <= self.warmup < self.horizon:
            raise SimulationConfigError("need 0 <= warmup < horizon")
        if int(self.replications) != self.replications or self.replications < 1:
            raise SimulationConfigError("replications must be a positive integer")
        if self.convergence_bucket is not None and not self.convergence_bucket > 0:
            raise SimulationConfigError("convergence_bucket must be positive")
        if self.dead_end not in ("error", "drop"):
            raise SimulationConfigError("dead_end must be 'error' or 'drop'")
        unknown = set(self.service) - set(self.topology.node_ids)
        if unknown:
            raise SimulationConfigError(f"service given for unknown node(s) {sorted(unknown)}")

    def resolved_service(self):
        svc = default_service(self.topology)
        svc.update(self.service)
        return svc

    def with_service_kind(self, kind):
        """Same config with every node switched to exponential or deterministic service."""
        return replace(self, service=default_service(self.topology, kind))


@dataclass
class SimReport:
    """
    Measured outputs of one replication.

    Per-node dicts are keyed by node id. Counts named ``*_count`` and the
    occupancy cover ``[warmup, horizon]`` only; ``total_arrivals``,
    ``served_count``, ``still_in_transit_count``, ``in_service_at_end`` and
    ``dropped_count`` cover the whole run so that the conservation identity
    can be checked exactly.
    """

    seed: int
    horizon: float
    warmup: float
    node_ids: tuple
    occupancy: dict
    rejection_count: dict
    rejection_rate: dict
    arrival_count: dict
    exo_arrival_count: dict
    exo_rejection_count: dict
    route_counts: dict
    started_count: int
    searched_count: int
    total_search_time: float
    total_arrivals: int
    served_count: int
    still_in_transit_count: int
    in_service_at_end: int
    dropped_count: int
    occupancy_series: dict = None
    bucket: float = None
    checkpoint_times: tuple = ()
    in_transit_checkpoints: tuple = ()

    @property
    def average_search_time(self):
        """Mean search time over tasks rejected at least once (0 if none were)."""
        return self.total_search_time / self.searched_count if self.searched_count else 0.0

    @property
    def average_search_time_all(self):
        """Mean search time over every task that started service in the window."""
        return self.total_search_time / self.started_count if self.started_count else 0.0

    def blocking_fraction(self, node_id):
        n = self.arrival_count[node_id]
        return self.rejection_count[node_id] / n if n else 0.0

    def conserved(self):
        return self.total_arrivals == (
            self.served_count
            + self.still_in_transit_count
            + self.in_service_at_end
            + self.dropped_count
        )


def run(config):
    """Simulate one replication with ``config.seed``."""
    topo = config.topology
    ids = topo.node_ids
    index = {n: i for i, n in enumerate(ids)}
    n = len(ids)
    specs = [topo.nodes[x] for x in ids]
    servers = [s.servers for s in specs]
    rates = [s.exo_arrival_rate for s in specs]
    nbrs = [[index[e.target] for e in topo.out_edges(x)] for x in ids]
    delays = [[e.travel_time for e in topo.out_edges(x)] for x in ids]
    degree = [len(v) for v in nbrs]

    seed = int(config.seed)
    rng_arr = random.Random(f"{seed}/arrivals")
    rng_svc = random.Random(f"{seed}/service")
    rng_route = random.Random(f"{seed}/routing")
    service = config.resolved_service()
    draw_service = [_sampler(service[x], rng_svc) for x in ids]
    expo = rng_arr.expovariate
    pick = rng_route.randrange

    horizon = float(config.horizon)
    warmup = float(config.warmup)
    bucket = config.convergence_bucket
    if bucket is not None:
        nbuckets = int(math.ceil(horizon / bucket - 1e-12))
        series = [[0.0] * nbuckets for _ in range(n)]

    busy = [0] * n
    last = [0.0] * n
    area = [0.0] * n
    rejections = [0] * n
    arrivals = [0] * n
    exo_arrivals = [0] * n
    exo_rejections = [0] * n
    routes = {}
    started = searched = 0
    search_total = 0.0
    total_arrivals = served = dropped = 0

    def settle(i, t):
        # integrate busy servers of node i up to time t
        s = last[i]
        b = busy[i]
        if b:
            if t > warmup:
                area[i] += b * (t - (s if s > warmup else warmup))
            if bucket is not None:
                row = series[i]
                j = int(s / bucket)
                while s < t and j < nbuckets:
                    edge = (j + 1) * bucket
                    stop = t if t < edge else edge
                    row[j] += b * (stop - s)
                    s = stop
                    j += 1
        last[i] = t

    cp_times = [horizon * (c + 1) / _CHECKPOINTS for c in range(_CHECKPOINTS)]
    cp_values = []
    next_cp = cp_times[0]
    transit = 0

    heap = []
    seq = 0
    for i in range(n):
        if rates[i] > 0:
            heap.append((expo(rates[i]), seq, _EXO, i, -1.0))
            seq += 1
    heapq.heapify(heap)
    push, pop = heapq.heappush, heapq.heappop

    while heap and heap[0][0] <= horizon:
        t, _, kind, i, first_reject = pop(heap)
        while t > next_cp:
            cp_values.append(transit)
            next_cp = cp_times[len(cp_values)] if len(cp_values) < _CHECKPOINTS else math.inf
        if kind == _DEPART:
            settle(i, t)
            busy[i] -= 1
            served += 1
            continue

        counted = t >= warmup
        if kind == _EDGE:
            transit -= 1
        elif kind == _EXO:
            total_arrivals += 1
            push(heap, (t + expo(rates[i]), seq, _EXO, i, -1.0))
            seq += 1
            if counted:
                exo_arrivals[i] += 1
        if counted:
            arrivals[i] += 1

        if busy[i] < servers[i]:
            settle(i, t)
            busy[i] += 1
            push(heap, (t + draw_service[i](), seq, _DEPART, i, -1.0))
            seq += 1
            if counted:
                started += 1
                if first_reject >= 0.0:
                    searched += 1
                    search_total += t - first_reject
            continue

        if counted:
            rejections[i] += 1
            if kind == _EXO:
                exo_rejections[i] += 1
        deg = degree[i]
        if deg == 0:
            if config.dead_end == "drop":
                dropped += 1
                continue
            raise SimulationConfigError(
                f"task rejected at node {ids[i]!r}, which has no out-edges"
            )
        c = pick(deg) if deg > 1 else 0
        j = nbrs[i][c]
        if counted:
            key = (i, j)
            routes[key] = routes.get(key, 0) + 1
        push(heap, (t + delays[i][c], seq, _EDGE, j, t if first_reject < 0.0 else first_reject))
        seq += 1
        transit += 1

    for i in range(n):
        settle(i, horizon)
    in_transit = sum(1 for ev in heap if ev[2] == _EDGE)
    cp_values += [in_transit] * (_CHECKPOINTS - len(cp_values))

    window = horizon - warmup
    occ_series = None
    if bucket is not None:
        occ_series = {}
        for i, x in enumerate(ids):
            row = np.asarray(series[i]) / (servers[i] * bucket)
            if nbuckets and nbuckets * bucket > horizon:
                row[-1] *= bucket / (horizon - (nbuckets - 1) * bucket)
            occ_series[x] = row

    return SimReport(
        seed=seed,
        horizon=horizon,
        warmup=warmup,
        node_ids=tuple(ids),
        occupancy={x: area[i] / (servers[i] * window) for i, x in enumerate(ids)},
        rejection_count={x: rejections[i] for i, x in enumerate(ids)},
        rejection_rate={x: rejections[i] / window for i, x in enumerate(ids)},
        arrival_count={x: arrivals[i] for i, x in enumerate(ids)},
        exo_arrival_count={x: exo_arrivals[i] for i, x in enumerate(ids)},
        exo_rejection_count={x: exo_rejections[i] for i, x in enumerate(ids)},
        route_counts={(ids[a], ids[b]): c for (a, b), c in sorted(routes.items())},
        started_count=started,
        searched_count=searched,
        total_search_time=search_total,
        total_arrivals=total_arrivals,
        served_count=served,
        still_in_transit_count=in_transit,
        in_service_at_end=sum(busy),
        dropped_count=dropped,
        occupancy_series=occ_series,
        bucket=bucket,
        checkpoint_times=tuple(cp_times),
        in_transit_checkpoints=tuple(cp_values),
    )


NODE_METRICS = (
    "occupancy",
    "rejection_rate",
    "rejection_count",
    "arrival_count",
    "exo_arrival_count",
    "exo_rejection_count",
)
NETWORK_METRICS = (
    "average_search_time",
    "average_search_time_all",
    "served_count",
    "still_in_transit_count",
    "in_service_at_end",
    "dropped_count",
    "total_arrivals",
)


@dataclass
class ReplicatedReport:
    """Replications of one config, ordered by replication index."""

    reports: list

    @property
    def node_ids(self):
        return self.reports[0].node_ids

    def __len__(self):
        return len(self.reports)

    def node_values(self, metric):
        """Array of shape (replications, nodes) for a per-node metric."""
        ids = self.node_ids
        return np.array([[getattr(r, metric)[x] for x in ids] for r in self.reports], dtype=float)

    def network_values(self, metric):
        return np.array([getattr(r, metric) for r in self.reports], dtype=float)

    def _std(self, values):
        if len(self.reports) < 2:
            return np.zeros(values.shape[1:]) if values.ndim > 1 else 0.0
        return values.std(axis=0, ddof=1)

    def mean(self, metric):
        if metric in NODE_METRICS:
            return dict(zip(self.node_ids, self.node_values(metric).mean(axis=0)))
        return float(self.network_values(metric).mean())

    def std(self, metric):
        if metric in NODE_METRICS:
            return dict(zip(self.node_ids, self._std(self.node_values(metric))))
        return float(self._std(self.network_values(metric)))

    def stderr(self, metric):
        r = len(self.reports)
        s = self.std(metric)
        if isinstance(s, dict):
            return {k: v / math.sqrt(r) for k, v in s.items()}
        return s / math.sqrt(r)


def _run_seed(args):
    config, seed = args
    return run(replace(config, seed=seed, replications=1))


def replicate(config, workers=1):
    """
    Run ``config.replications`` replications with seeds ``seed, seed+1, ...``.

    With ``workers > 1`` replications run in separate processes; results are
    always returned in replication order.
    """
    report = stability_check(config.topology)
    if config.dead_end == "error" and not report.stable_capacity_condition:
        warnings.warn(
            f"exogenous load {report.total_lambda:g} is not below total capacity "
            f"{report.total_capacity:g}; tasks in transit may grow without bound",
            stacklevel=2,
        )
    jobs = [(config, config.seed + r) for r in range(config.replications)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_seed, jobs))
    else:
        reports = [_run_seed(j) for j in jobs]
    return ReplicatedReport(reports)


@dataclass
class ConvergenceSeries:
    times: np.ndarray
    occupancy: dict
    replications: int

    @property
    def network_mean(self):
        return np.mean(np.vstack(list(self.occupancy.values())), axis=0)


def convergence_series(config, workers=1):
    """
    Occupancy per bucket from time 0, averaged over replications.

    Warmup is ignored. ``times`` holds the right edge of each bucket.
    """
    if config.convergence_bucket is None:
        raise SimulationConfigError("convergence_series needs convergence_bucket")
    cfg = replace(config, warmup=0.0)
    reps = replicate(cfg, workers=workers)
    ids = reps.node_ids
    occ = {x: np.mean([r.occupancy_series[x] for r in reps.reports], axis=0) for x in ids}
    nb = len(next(iter(occ.values())))
    times = np.minimum((np.arange(nb) + 1) * cfg.convergence_bucket, cfg.horizon)
    return ConvergenceSeries(times=times, occupancy=occ, replications=len(reps))


def settling_time(times, series, tolerance, plateau=None, tail=0.5):
    """
    First time after which ``series`` stays within ``tolerance`` of its plateau.

    The plateau defaults to the mean over the last ``tail`` fraction of the
    series.
    """
    series = np.asarray(series, dtype=float)
    if plateau is None:
        plateau = series[int(len(series) * (1 - tail)):].mean()
    outside = np.nonzero(np.abs(series - plateau) > tolerance)[0]
    if outside.size == 0:
        return float(times[0])
    j = outside[-1] + 1
    return float(times[j]) if j < len(times) else math.inf
