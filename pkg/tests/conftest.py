import numpy as np
import pytest
from scipy.linalg import null_space

from curbnet.network import Topology
from curbnet.queue import QueueSpec


def brute_force_stationary(servers, service_rate, arrival_rate):
    """Null space of the explicit birth-death generator, built independently."""
    n = servers + 1
    q = np.zeros((n, n))
    for i in range(n):
        if i < servers:
            q[i, i + 1] = arrival_rate
        if i > 0:
            q[i, i - 1] = i * service_rate
        q[i, i] = -q[i].sum()
    v = null_space(q.T)[:, 0]
    return v / v.sum()


def two_way_pair(lam1, lam2, mu1, mu2, travel, servers=1):
    return Topology(
        [("1", QueueSpec(servers, mu1, lam1)), ("2", QueueSpec(servers, mu2, lam2))],
        [("1", "2", travel), ("2", "1", travel)],
    )


@pytest.fixture
def pair():
    return two_way_pair(1.0, 1.0, 2.0, 2.0, 0.1)
