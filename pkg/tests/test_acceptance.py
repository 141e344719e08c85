"""
End-to-end acceptance checks.

Every check prints one ``ACCEPTANCE <id> PASS|FAIL`` line (visible under
plain ``pytest``) before asserting. Tolerances and runtime budgets are the
ones the checks were specified with; nothing is loosened when a check fails.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

import curbnet.simulator as simulator
from curbnet.cli import main
from curbnet.formats import read_report, save_topology
from curbnet.network import Topology
from curbnet.queue import QueueSpec, blocking_probability, occupancy, stationary_distribution
from curbnet.simulator import SimConfig, convergence_series, replicate, settling_time
from curbnet.solver import (
    SymmetricNetworkSpec,
    TwoNodeSpec,
    descartes_positive_roots,
    invert_occupancy,
    occupancy_polynomial_coefficients,
    solve_symmetric,
    solve_two_node,
    symmetric_polynomial_coefficients,
)

pytestmark = pytest.mark.acceptance

# every simulated replication in this module, for the conservation check
_RUNS = []


@pytest.fixture(autouse=True)
def _record_runs(monkeypatch):
    real = simulator.run

    def recording(config):
        report = real(config)
        _RUNS.append(report)
        return report

    monkeypatch.setattr(simulator, "run", recording)


@pytest.fixture
def verdict(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {tag} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


def _t_interval(values, level=0.95):
    values = np.asarray(values, dtype=float)
    n = values.size
    half = stats.t.ppf(0.5 + level / 2, n - 1) * values.std(ddof=1) / math.sqrt(n)
    return values.mean() - half, values.mean() + half


def _pair(mu, travel, lam=1.0):
    return Topology(
        [("1", QueueSpec(1, mu, lam)), ("2", QueueSpec(1, mu, lam))],
        [("1", "2", travel), ("2", "1", travel)],
    )


def test_1_two_node_closed_form(verdict):
    start = time.perf_counter()
    worst = 0.0
    for mu in (1.5, 2.0, 3.0, 10.0):
        sol = solve_two_node(TwoNodeSpec(1.0, 1.0, mu, mu, 0.1), tolerance=1e-13)
        expect_pi = np.array([(mu - 1) ** 2, mu - 1, mu - 1, 1.0]) / mu**2
        expect_x = 1.0 / (mu - 1)
        worst = max(worst, np.abs(sol.pi - expect_pi).max(), abs(sol.x12 - expect_x), abs(sol.x21 - expect_x))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 0.1
    assert verdict("1", ok, f"max deviation {worst:.2e} (tol 1e-8), {elapsed * 1e3:.1f} ms")


def test_2_two_node_simulation(verdict):
    mu, travel, reps = 2.0, 0.1, 20
    start = time.perf_counter()
    out = replicate(SimConfig(_pair(mu, travel), horizon=1e5, seed=2024, replications=reps))
    elapsed = time.perf_counter() - start

    flows = out.node_values("rejection_rate")
    mean, se = flows.mean(axis=0), flows.std(axis=0, ddof=1) / math.sqrt(reps)
    within = np.abs(mean - 1.0) <= 3 * se

    sojourn = out.network_values("average_search_time_all")
    w, w_se = sojourn.mean(), sojourn.std(ddof=1) / math.sqrt(reps)
    quadratic_form = mu / (mu**2 - 1) * travel
    linear_form = travel / (mu - 1)
    closer = "d/(mu-1)" if abs(w - linear_form) < abs(w - quadratic_form) else "mu/(mu^2-1)*d"
    verdict(
        "2-sojourn",
        True,
        f"simulated mean search time {w:.4f} +/- {w_se:.4f}; mu/(mu^2-1)*d = {quadratic_form:.4f}, "
        f"d/(mu-1) = {linear_form:.4f}; closer: {closer}; "
        f"within 3 SE of either: {abs(w - quadratic_form) <= 3 * w_se or abs(w - linear_form) <= 3 * w_se}",
    )
    ok = bool(within.all()) and elapsed < 60
    assert verdict(
        "2",
        ok,
        f"rejection flows {np.round(mean, 4).tolist()} +/- {np.round(se, 4).tolist()} (target 1.0 within 3 SE), "
        f"{elapsed:.1f} s",
    )


def test_3_uniqueness_sweep(verdict):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    bad = []
    worst_round_trip = worst_residual = 0.0
    for i in range(1000):
        k = int(rng.integers(1, 21))
        mu = float(rng.uniform(0.05, 5.0))
        if i % 2 == 0:
            lam = float(rng.uniform(0.0, 1.0)) * k * mu
            if lam == 0.0:
                continue
            coeffs = symmetric_polynomial_coefficients(k, mu, lam)
            y = solve_symmetric(SymmetricNetworkSpec(2, QueueSpec(k, mu, lam))).total_arrival_rate
            terms = coeffs * y ** np.arange(k + 1)
            residual = abs(terms.sum()) / np.abs(terms).sum()
            worst_residual = max(worst_residual, residual)
            good = descartes_positive_roots(coeffs) == 1 and y > lam and residual < 1e-9
        else:
            u = float(rng.uniform(0.0, 0.99))
            coeffs = occupancy_polynomial_coefficients(k, mu, u)
            y = invert_occupancy(k, mu, u)
            gap = abs(occupancy(QueueSpec(k, mu), y) - u)
            worst_round_trip = max(worst_round_trip, gap)
            good = descartes_positive_roots(coeffs) == 1 and y > 0 and gap < 1e-8
        if not good:
            bad.append((k, mu))
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 60
    assert verdict(
        "3",
        ok,
        f"{len(bad)} failing instances of 1000; worst occupancy round trip {worst_round_trip:.1e}, "
        f"worst fixed-point residual {worst_residual:.1e}, {elapsed:.1f} s",
    )


def _regular(interarrival):
    return Topology.complete(10, QueueSpec(5, 0.2, 1.0 / interarrival), 0.1)


def test_4a_convergence(verdict):
    bucket, horizon, tol = 1.0, 100.0, 0.02
    lines, ok = [], True
    for ia in (2.0, 1.2):
        settle, plateau = {}, {}
        for kind in ("exponential", "deterministic"):
            cfg = SimConfig(_regular(ia), horizon=horizon, seed=41, replications=400, convergence_bucket=bucket)
            conv = convergence_series(cfg.with_service_kind(kind))
            series = conv.network_mean
            plateau[kind] = series[len(series) // 2:].mean()
            settle[kind] = settling_time(conv.times, series, tol)
        equal = abs(plateau["exponential"] - plateau["deterministic"]) <= 0.02
        not_later = settle["deterministic"] <= settle["exponential"] + bucket
        ok = ok and equal and not_later
        lines.append(
            f"ia={ia}: plateau M/M {plateau['exponential']:.4f} M/D {plateau['deterministic']:.4f}, "
            f"settles M/M t={settle['exponential']:g} M/D t={settle['deterministic']:g}"
        )
    assert verdict("4a", ok, "; ".join(lines))


def test_4b_sweep(verdict):
    reps = 20
    start = time.perf_counter()
    lines, overlap_all, occ_high = [], True, True
    for ia in (4.0, 3.0, 2.0, 1.5, 1.2, 1.1, 1.05):
        res = {}
        for kind in ("exponential", "deterministic"):
            cfg = SimConfig(_regular(ia), horizon=1000.0, warmup=200.0, seed=500, replications=reps)
            out = replicate(cfg.with_service_kind(kind))
            res[kind] = (
                out.node_values("occupancy").mean(axis=1),
                out.node_values("rejection_rate").mean(axis=1),
            )
        ci_mm, ci_md = _t_interval(res["exponential"][1]), _t_interval(res["deterministic"][1])
        overlap = ci_mm[0] <= ci_md[1] and ci_md[0] <= ci_mm[1]
        occ_mm, occ_md = res["exponential"][0].mean(), res["deterministic"][0].mean()
        overlap_all = overlap_all and overlap
        if ia <= 1.2:
            occ_high = occ_high and occ_md > occ_mm
        lines.append(
            f"ia={ia}: rej M/M [{ci_mm[0]:.3f},{ci_mm[1]:.3f}] M/D [{ci_md[0]:.3f},{ci_md[1]:.3f}]"
            f"{'' if overlap else ' (disjoint)'}, occ M/M {occ_mm:.4f} M/D {occ_md:.4f}"
        )
    elapsed = time.perf_counter() - start
    ok = overlap_all and occ_high and elapsed < 600
    detail = (
        f"rejection intervals overlap everywhere: {overlap_all}; M/D occupancy above M/M for ia<=1.2: "
        f"{occ_high}; {elapsed:.1f} s\n    " + "\n    ".join(lines)
    )
    assert verdict("4b", ok, detail)


def test_5_single_queue_oracle(verdict):
    start = time.perf_counter()
    reps, horizon = 30, 2000.0
    misses, worst = [], 0.0
    for k in (1, 3, 5, 10):
        for load in (0.3, 0.7, 0.95):
            y = load * k
            spec = QueueSpec(k, 1.0, y)
            topo = Topology([("q", spec)], [])
            out = replicate(SimConfig(topo, horizon=horizon, seed=7, replications=reps, dead_end="drop"))
            dist = stationary_distribution(spec, y)
            blocking = [r.blocking_fraction("q") for r in out.reports]
            checks = {
                "occupancy": (out.node_values("occupancy")[:, 0], dist.occupancy),
                "blocking": (np.array(blocking), blocking_probability(spec, y)),
                "rejection_rate": (out.node_values("rejection_rate")[:, 0], dist.rejection_rate),
            }
            for name, (values, exact) in checks.items():
                se = values.std(ddof=1) / math.sqrt(reps)
                z = abs(values.mean() - exact) / se
                worst = max(worst, z)
                if z > 3:
                    misses.append(f"k={k} load={load} {name} z={z:.2f}")
    elapsed = time.perf_counter() - start
    ok = not misses and elapsed < 120
    assert verdict("5", ok, f"worst |z| {worst:.2f} over 36 comparisons, {elapsed:.1f} s {misses}")


def _irregular_topology(seed=5, n=30):
    rng = np.random.default_rng(seed)
    edges = {(i, (i + 1) % n) for i in range(n)}
    while len(edges) < 3 * n:
        a, b = (int(v) for v in rng.integers(0, n, 2))
        if a != b:
            edges.add((a, b))
    nodes = []
    for i in range(n):
        k = int(rng.integers(2, 16))
        mu = 1.0 / float(rng.choice([60, 90, 120, 180, 240]))
        nodes.append((str(i), QueueSpec(k, mu, float(rng.uniform(0.3, 0.9)) * k * mu)))
    return Topology(nodes, [(str(a), str(b), 1.0) for a, b in sorted(edges)])


def test_6_round_trip(verdict, tmp_path):
    # time unit is the minute; rates are reported per hour below
    start = time.perf_counter()
    topo_path = tmp_path / "net.json"
    save_topology(_irregular_topology(), topo_path)
    obs = tmp_path / "observed.csv"
    common = ["--horizon", "1000", "--replications", "100"]
    assert main(["simulate", str(topo_path), *common, "--seed", "1", "--out", str(obs)]) == 0
    observed = {
        r["node"]: float(r["value"])
        for r in read_report(obs)
        if r["metric"] == "occupancy" and r["replication"] == "mean"
    }
    occ_path = tmp_path / "occupancy.csv"
    occ_path.write_text("node_id,occupancy\n" + "".join(f"{n},{u!r}\n" for n, u in observed.items()))
    val = tmp_path / "validate.csv"
    assert main(["validate", str(topo_path), str(occ_path), *common, "--seed", "1000", "--out", str(val)]) == 0
    summary = {r["metric"]: float(r["value"]) for r in read_report(val) if r["node"] == "*"}
    elapsed = time.perf_counter() - start

    occ_mean, occ_std = summary["occupancy_error_mean"], summary["occupancy_error_std"]
    rej_per_hour = 60.0 * summary["rejection_rate_error_mean"]
    ok = abs(occ_mean) <= 0.06 and occ_mean <= 0 and abs(rej_per_hour) <= 1.0 and elapsed < 900
    assert verdict(
        "6",
        ok,
        f"occupancy error mean {occ_mean:+.4f} (std {occ_std:.4f}, median "
        f"{summary['occupancy_error_median']:+.4f}); rejection error mean {rej_per_hour:+.3f}/h; "
        f"{int(summary['negative_exogenous_count'])} negative shares clamped; {elapsed:.1f} s",
    )


def test_7_determinism_and_conservation(verdict, tmp_path):
    topo_path = tmp_path / "reg.json"
    save_topology(_regular(1.2), topo_path)
    files = []
    for name in ("a.csv", "b.csv"):
        files.append(tmp_path / name)
        assert main(["simulate", str(topo_path), "--horizon", "300", "--replications", "3", "--seed", "9",
                     "--convergence", "10", "--out", str(files[-1])]) == 0
    identical = files[0].read_bytes() == files[1].read_bytes()
    cfg = SimConfig(_pair(2.0, 0.1), horizon=500.0, seed=3)
    same_report = simulator.run(cfg) == simulator.run(cfg)
    broken = [r.seed for r in _RUNS if not r.conserved()]
    ok = identical and same_report and not broken
    assert verdict(
        "7",
        ok,
        f"byte-identical reports: {identical}, identical in-memory reports: {same_report}; "
        f"conservation holds on {len(_RUNS) - len(broken)}/{len(_RUNS)} recorded runs",
    )
