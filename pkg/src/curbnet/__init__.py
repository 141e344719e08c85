"""Networks of finite-capacity queues where rejected tasks search neighbouring queues."""

__version__ = "0.1.0"

from .network import (
    NodeEstimate,
    StabilityReport,
    Topology,
    communicates,
    estimate_from_occupancy,
    stability_check,
)
from .queue import (
    QueueSpec,
    StationaryDistribution,
    blocking_probability,
    erlang_b,
    occupancy,
    rejection_rate,
    stationary_distribution,
)
from .simulator import (
    ServiceDistribution,
    SimConfig,
    SimReport,
    convergence_series,
    replicate,
    run,
    sample_service,
)
from .solver import (
    SymmetricNetworkSpec,
    TwoNodeSpec,
    descartes_positive_roots,
    invert_occupancy,
    solve_symmetric,
    solve_two_node,
)
