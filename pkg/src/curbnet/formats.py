"""
On-disk formats: topology and parameter files (JSON) and long-format reports.

Topology file::

    {
      "nodes": [
        {"id": "a", "servers": 5, "service_rate": 0.2, "exo_rate": 0.5},
        {"id": "b", "servers": 3, "service_file": "b_durations.txt", "exo_rate": 0.1}
      ],
      "edges": [
        {"from": "a", "to": "b", "travel_time": 0.1},
        {"from": "b", "to": "a", "travel_time": 0.1}
      ]
    }

``service_file`` (resolved relative to the topology file) lists one service
duration per line. The node's service rate becomes one over the median
duration and the samples feed empirical service in simulation. ``exo_rate``
defaults to 0.

Parameter file (optional overrides)::

    {
      "exo_rates": {"a": 0.4},
      "service": {
        "a": {"kind": "deterministic", "mean": 5.0},
        "b": {"kind": "empirical", "samples": [120, 120, 240]}
      }
    }

Reports are CSV with columns ``node,metric,value,replication,time``. Lines
starting with ``#`` carry the manifest that produced the file.
"""

import csv
import io
import json
import statistics
from pathlib import Path

from .network import Topology
from .queue import QueueSpec
from .simulator import DETERMINISTIC, EMPIRICAL, EXPONENTIAL, ServiceDistribution

REPORT_COLUMNS = ("node", "metric", "value", "replication", "time")
MANIFEST_PREFIX = "# manifest: "


class FormatError(ValueError):
    pass


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def read_samples(path):
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                v = float(line)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: not a number: {line!r}") from exc
            if v <= 0:
                raise FormatError(f"{path}:{lineno}: duration must be positive")
            values.append(v)
    if not values:
        raise FormatError(f"{path}: no durations")
    return values


def parse_topology(doc, base_dir=None):
    """
    Build a Topology from a parsed topology document.

    Returns ``(topology, samples)`` where ``samples`` maps node id to the
    empirical service durations read from ``service_file`` entries.
    """
    if not isinstance(doc, dict) or "nodes" not in doc:
        raise FormatError("topology needs a 'nodes' list")
    base = Path(base_dir) if base_dir is not None else Path(".")
    nodes, samples = [], {}
    for i, entry in enumerate(doc["nodes"]):
        try:
            node_id = str(entry["id"])
            servers = entry["servers"]
            if "service_file" in entry:
                durations = read_samples(base / entry["service_file"])
                samples[node_id] = durations
                rate = 1.0 / statistics.median(durations)
            else:
                rate = float(entry["service_rate"])
            nodes.append((node_id, QueueSpec(servers, rate, float(entry.get("exo_rate", 0.0)))))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"node entry {i}: missing or bad field {exc}") from exc
    edges = []
    for i, entry in enumerate(doc.get("edges", [])):
        try:
            edges.append((str(entry["from"]), str(entry["to"]), float(entry["travel_time"])))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"edge entry {i}: missing or bad field {exc}") from exc
    return Topology(nodes, edges), samples


def load_topology(path):
    path = Path(path)
    return parse_topology(_read_json(path), path.parent)


def topology_document(topology):
    return {
        "nodes": [
            {"id": n, "servers": s.servers, "service_rate": s.service_rate, "exo_rate": s.exo_arrival_rate}
            for n, s in topology.nodes.items()
        ],
        "edges": [{"from": e.source, "to": e.target, "travel_time": e.travel_time} for e in topology.edges],
    }


def save_topology(topology, path):
    with open(path, "w") as fh:
        json.dump(topology_document(topology), fh, indent=2)
        fh.write("\n")


def parse_service(entry):
    kind = entry.get("kind")
    if kind in ("exp", EXPONENTIAL):
        return ServiceDistribution.exponential(float(entry["mean"]))
    if kind in ("det", DETERMINISTIC):
        return ServiceDistribution.deterministic(float(entry["mean"]))
    if kind == EMPIRICAL:
        return ServiceDistribution.empirical(entry["samples"])
    raise FormatError(f"unknown service kind {kind!r}")


def load_params(path):
    """Returns ``(exo_rates, service)`` dicts from a parameter file."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: expected an object")
    try:
        rates = {str(k): float(v) for k, v in doc.get("exo_rates", {}).items()}
        service = {str(k): parse_service(v) for k, v in doc.get("service", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return rates, service


def format_value(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_report(path, rows, manifest):
    """
    Write long-format rows ``(node, metric, value, replication, time)``.

    ``replication`` and ``time`` may be None. The manifest is embedded as a
    single JSON comment line so the file is self-describing.
    """
    buf = io.StringIO()
    buf.write("# curbnet report\n")
    buf.write(MANIFEST_PREFIX + json.dumps(manifest, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for node, metric, value, rep, when in rows:
        writer.writerow(
            [
                node,
                metric,
                format_value(value),
                "" if rep is None else rep,
                "" if when is None else format_value(when),
            ]
        )
    Path(path).write_text(buf.getvalue())


def read_manifest(path):
    with open(path) as fh:
        for line in fh:
            if line.startswith(MANIFEST_PREFIX):
                return json.loads(line[len(MANIFEST_PREFIX):])
            if not line.startswith("#"):
                break
    raise FormatError(f"{path}: no manifest line")


def read_report(path):
    """Rows of a report as dicts with string values."""
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
