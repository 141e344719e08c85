"""Directed topologies of loss queues and per-node rate estimation."""

from collections import deque
from dataclasses import dataclass
from types import MappingProxyType

from .queue import QueueSpec, stationary_distribution
from .solver import invert_occupancy


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    travel_time: float


class Topology:
    """
    Queues (nodes) joined by one-way streets (edges) with fixed travel times.

    Immutable once built. Node ids are strings; insertion order is kept and
    used wherever a deterministic ordering is needed.
    """

    def __init__(self, nodes, edges):
        node_map = {}
        for node_id, spec in nodes:
            node_id = str(node_id)
            if node_id in node_map:
                raise TopologyError(f"duplicate node id {node_id!r}")
            if not isinstance(spec, QueueSpec):
                raise TopologyError(f"node {node_id!r} needs a QueueSpec")
            node_map[node_id] = spec
        seen = set()
        edge_list = []
        for source, target, travel_time in edges:
            source, target = str(source), str(target)
            for end in (source, target):
                if end not in node_map:
                    raise TopologyError(f"edge references unknown node {end!r}")
            if source == target:
                raise TopologyError(f"self-loop on node {source!r}")
            if not travel_time > 0:
                raise TopologyError(f"edge {source}->{target} needs travel_time > 0")
            if (source, target) in seen:
                raise TopologyError(f"duplicate edge {source}->{target}")
            seen.add((source, target))
            edge_list.append(Edge(source, target, float(travel_time)))

        self._nodes = MappingProxyType(node_map)
        self._edges = tuple(edge_list)
        out = {n: [] for n in node_map}
        inc = {n: [] for n in node_map}
        for e in self._edges:
            out[e.source].append(e)
            inc[e.target].append(e)
        self._out = MappingProxyType({n: tuple(v) for n, v in out.items()})
        self._in = MappingProxyType({n: tuple(v) for n, v in inc.items()})

    @property
    def nodes(self):
        return self._nodes

    @property
    def node_ids(self):
        return list(self._nodes)

    @property
    def edges(self):
        return self._edges

    def out_edges(self, node_id):
        return self._out[node_id]

    def in_edges(self, node_id):
        return self._in[node_id]

    def out_degree(self, node_id):
        return len(self._out[node_id])

    def __len__(self):
        return len(self._nodes)

    def __repr__(self):
        return f"Topology({len(self._nodes)} nodes, {len(self._edges)} edges)"

    def __reduce__(self):
        return (
            Topology,
            (list(self._nodes.items()), [(e.source, e.target, e.travel_time) for e in self._edges]),
        )

    def with_exogenous_rates(self, rates):
        """Copy with the given exogenous rates replacing the existing ones."""
        nodes = []
        for node_id, spec in self._nodes.items():
            lam = rates.get(node_id, spec.exo_arrival_rate)
            nodes.append((node_id, QueueSpec(spec.servers, spec.service_rate, lam)))
        return Topology(nodes, [(e.source, e.target, e.travel_time) for e in self._edges])

    @classmethod
    def complete(cls, n, spec, travel_time):
        """``n`` identical queues, every ordered pair joined by an edge."""
        ids = [str(i) for i in range(n)]
        edges = [(a, b, travel_time) for a in ids for b in ids if a != b]
        return cls([(i, spec) for i in ids], edges)


def _reach(start, adjacency):
    seen = {start}
    todo = deque([start])
    while todo:
        node = todo.popleft()
        for nxt in adjacency[node]:
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return seen


def communicates(topology):
    """True iff every queue can be reached from every other (strong connectivity)."""
    ids = topology.node_ids
    if not ids:
        return True
    fwd = {n: [e.target for e in topology.out_edges(n)] for n in ids}
    rev = {n: [e.source for e in topology.in_edges(n)] for n in ids}
    return len(_reach(ids[0], fwd)) == len(ids) and len(_reach(ids[0], rev)) == len(ids)


@dataclass(frozen=True)
class StabilityReport:
    communicates: bool
    stable_rate_condition: bool
    stable_capacity_condition: bool
    total_lambda: float
    total_mu: float
    total_capacity: float


def stability_check(topology):
    """
    Compare the total exogenous rate with the network's service capability.

    Two conditions are reported: the sum of per-server rates
    (``sum lam < sum mu``) and the total capacity (``sum lam < sum k mu``).
    Callers should gate on ``stable_capacity_condition``.
    """
    specs = topology.nodes.values()
    total_lambda = sum(s.exo_arrival_rate for s in specs)
    total_mu = sum(s.service_rate for s in specs)
    total_capacity = sum(s.capacity for s in specs)
    return StabilityReport(
        communicates=communicates(topology),
        stable_rate_condition=total_lambda < total_mu,
        stable_capacity_condition=total_lambda < total_capacity,
        total_lambda=total_lambda,
        total_mu=total_mu,
        total_capacity=total_capacity,
    )


@dataclass(frozen=True)
class NodeEstimate:
    node_id: str
    total_arrival_rate: float
    blocking: float
    rejection_rate: float
    implied_exogenous_share: float
    occupancy: float


def estimate_from_occupancy(topology, occupancies, tolerance=1e-12):
    """
    Decoupled per-node estimates of arrival and rejection rates.

    Each node's total arrival rate is inverted from its own occupancy as if it
    were an isolated M/M/k/k queue. The exogenous share is then the total
    minus the rejections it receives, taking each neighbour's rejections as
    split evenly over that neighbour's out-edges. The share is reported as
    is, negative values included.

    Parameters
    ----------
    occupancies : mapping
        node id -> occupancy in ``[0, 1)``, already clamped.

    Returns
    -------
    dict
        node id -> NodeEstimate, in topology order.
    """
    missing = [n for n in topology.node_ids if n not in occupancies]
    if missing:
        raise KeyError(f"no occupancy for node(s): {', '.join(missing)}")

    partial = {}
    for node_id, spec in topology.nodes.items():
        u = occupancies[node_id]
        y = invert_occupancy(spec.servers, spec.service_rate, u, tolerance)
        dist = stationary_distribution(spec, y)
        partial[node_id] = (u, y, dist.blocking, y * dist.blocking)

    estimates = {}
    for node_id in topology.node_ids:
        u, y, blocking, rejection = partial[node_id]
        inflow = sum(
            partial[e.source][3] / topology.out_degree(e.source)
            for e in topology.in_edges(node_id)
        )
        estimates[node_id] = NodeEstimate(
            node_id=node_id,
            total_arrival_rate=y,
            blocking=blocking,
            rejection_rate=rejection,
            implied_exogenous_share=y - inflow,
            occupancy=u,
        )
    return estimates
