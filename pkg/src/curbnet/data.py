"""
Parking transactions to model parameters.

Transactions are paid sessions ``(block_id, start, paid_minutes)``. From
them we derive hourly loads (paid spaces over supply), per-block service
statistics and an exponential fit of the gaps between transactions.
"""

import csv
import logging
import math
import statistics
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

OCCUPANCY_CAP = 0.99
_MINUTE = timedelta(minutes=1)
_EPOCH = datetime(1970, 1, 1)


class DataError(ValueError):
    pass


class ParseError(DataError):
    """Malformed input; ``problems`` lists ``(line_number, message)`` pairs."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class MissingDataError(DataError):
    pass


@dataclass(frozen=True)
class TransactionRecord:
    block_id: str
    start_time: datetime
    paid_duration: float

    def __post_init__(self):
        if not self.paid_duration > 0:
            raise DataError(f"paid duration must be positive, got {self.paid_duration!r}")


@dataclass(frozen=True)
class OccupancyRecord:
    block_id: str
    hour: datetime
    load: float

    @property
    def clamped_load(self):
        return clamp_load(self.load)


@dataclass(frozen=True)
class BlockParameters:
    block_id: str
    supply: int
    mean_paid_minutes: float
    median_paid_minutes: float
    empirical_service_samples: tuple

    @property
    def service_rate(self):
        """Per-space service rate, one over the median paid time."""
        return 1.0 / self.median_paid_minutes


@dataclass(frozen=True)
class ExponentialFit:
    rate: float
    sample_count: int
    ks_statistic: float

    @property
    def standard_error(self):
        return self.rate / math.sqrt(self.sample_count)

    @property
    def ks_critical(self):
        # asymptotic 5% critical value
        return 1.358 / math.sqrt(self.sample_count)


def clamp_load(load, cap=OCCUPANCY_CAP):
    if load < 0:
        raise DataError(f"load must be nonnegative, got {load!r}")
    return min(float(load), cap)


def normalize_time(ts, tz=None):
    """Naive local time. Aware timestamps are converted to ``tz`` first."""
    if ts.tzinfo is None:
        return ts
    if tz is None:
        raise DataError(f"timezone-aware timestamp {ts.isoformat()} needs a target timezone")
    return ts.astimezone(tz).replace(tzinfo=None)


def paid_hours_mask(start_hour=8, end_hour=20, weekdays=range(6)):
    """Hour filter: ``start_hour <= hour < end_hour`` on the given weekdays (Mon=0)."""
    days = frozenset(weekdays)

    def mask(hour):
        return hour.weekday() in days and start_hour <= hour.hour < end_hour

    return mask


def _minute_index(ts, ceil=False):
    delta = ts - _EPOCH
    minutes = delta / _MINUTE
    return math.ceil(minutes) if ceil else math.floor(minutes)


def _floor_hour(ts):
    return ts.replace(minute=0, second=0, microsecond=0)


def compute_loads(transactions, supply, hours=None, mask=None):
    """
    Hourly loads per block.

    Each transaction occupies the whole minutes ``[floor(start), ceil(end))``.
    A minute's load is the number of active transactions over the block's
    supply, and an hour's load is the mean of its 60 minute loads.

    Parameters
    ----------
    transactions : iterable of TransactionRecord
    supply : mapping
        block id -> number of spaces.
    hours : iterable of datetime, optional
        Hours to report. Defaults to every hour from the first to the last
        transaction.
    mask : callable, optional
        ``mask(hour) -> bool``; hours for which it is false are dropped.

    Returns
    -------
    list of OccupancyRecord
        Sorted by block (supply order) then hour; blocks without
        transactions get zero loads.
    """
    for block, k in supply.items():
        if not k or k < 1:
            raise DataError(f"block {block!r} has no supply")

    busy_minutes = {}
    first = last = None
    for tx in transactions:
        if tx.block_id not in supply:
            raise DataError(f"transaction for unknown block {tx.block_id!r}")
        m0 = _minute_index(tx.start_time)
        m1 = _minute_index(tx.start_time + timedelta(minutes=tx.paid_duration), ceil=True)
        h0, h1 = m0 // 60, (m1 - 1) // 60
        first = h0 if first is None else min(first, h0)
        last = h1 if last is None else max(last, h1)
        per_block = busy_minutes.setdefault(tx.block_id, {})
        for h in range(h0, h1 + 1):
            overlap = min(m1, (h + 1) * 60) - max(m0, h * 60)
            per_block[h] = per_block.get(h, 0) + overlap

    if hours is None:
        hour_idx = [] if first is None else list(range(first, last + 1))
    else:
        hour_idx = sorted({_minute_index(_floor_hour(h)) // 60 for h in hours})

    records = []
    for block, k in supply.items():
        per_block = busy_minutes.get(block, {})
        for h in hour_idx:
            when = _EPOCH + timedelta(hours=h)
            if mask is not None and not mask(when):
                continue
            records.append(OccupancyRecord(block, when, per_block.get(h, 0) / (60.0 * k)))
    return records


def interarrival_gaps(transactions, block_id):
    starts = sorted(tx.start_time for tx in transactions if tx.block_id == block_id)
    return np.array([(b - a) / _MINUTE for a, b in zip(starts, starts[1:])])


def fit_exponential_interarrivals(transactions, block_id):
    """
    Maximum-likelihood exponential fit to the gaps between transaction starts.

    The Kolmogorov-Smirnov statistic against the fitted distribution is
    returned as a diagnostic only.
    """
    gaps = interarrival_gaps(transactions, block_id)
    if gaps.size < 1:
        raise DataError(f"block {block_id!r} needs at least 2 transactions for a fit")
    mean_gap = gaps.mean()
    if mean_gap <= 0:
        raise DataError(f"block {block_id!r}: all transactions start together")
    ks = stats.kstest(gaps, "expon", args=(0.0, mean_gap)).statistic
    return ExponentialFit(rate=1.0 / mean_gap, sample_count=int(gaps.size), ks_statistic=float(ks))


def block_parameters(transactions, supply, strict=True):
    """
    Supply and paid-time statistics per block.

    Blocks in ``supply`` with no transactions raise MissingDataError when
    ``strict``; otherwise they are left out with a warning.
    """
    durations = {}
    for tx in transactions:
        if tx.block_id not in supply:
            raise DataError(f"transaction for unknown block {tx.block_id!r}")
        durations.setdefault(tx.block_id, []).append(tx.paid_duration)
    missing = [b for b in supply if b not in durations]
    if missing:
        if strict:
            raise MissingDataError(f"no transactions for block(s): {', '.join(missing)}")
        log.warning("no transactions for block(s): %s", ", ".join(missing))
    out = {}
    for block, k in supply.items():
        if block not in durations:
            continue
        d = durations[block]
        out[block] = BlockParameters(
            block_id=block,
            supply=int(k),
            mean_paid_minutes=statistics.fmean(d),
            median_paid_minutes=statistics.median(d),
            empirical_service_samples=tuple(sorted(d)),
        )
    return out


# ---------------------------------------------------------------------------
# file formats


def _rows(path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _is_header(row, numeric_col):
    try:
        float(row[numeric_col])
    except (ValueError, IndexError):
        return True
    return False


def _finish(problems, lenient, path):
    if not problems:
        return
    if lenient:
        for lineno, msg in problems:
            log.warning("%s:%d: skipped, %s", path, lineno, msg)
        return
    lineno, msg = problems[0]
    raise ParseError(f"{path}:{lineno}: {msg}", problems)


def read_transactions(path, lenient=False, tz=None):
    """Parse ``block_id,start_iso8601,paid_minutes`` lines (header optional)."""
    out, problems = [], []
    for n, (lineno, row) in enumerate(_rows(path)):
        if n == 0 and _is_header(row, 2):
            continue
        try:
            if len(row) != 3:
                raise ValueError(f"expected 3 fields, got {len(row)}")
            block, start, minutes = row
            out.append(
                TransactionRecord(block, normalize_time(datetime.fromisoformat(start), tz), float(minutes))
            )
        except ValueError as exc:
            problems.append((lineno, str(exc)))
    _finish(problems, lenient, path)
    return out


def read_supply(path, lenient=False):
    """Parse ``block_id,spaces`` lines (header optional)."""
    out, problems = {}, []
    for n, (lineno, row) in enumerate(_rows(path)):
        if n == 0 and _is_header(row, 1):
            continue
        try:
            if len(row) != 2:
                raise ValueError(f"expected 2 fields, got {len(row)}")
            spaces = float(row[1])
            if spaces != int(spaces) or spaces < 1:
                raise ValueError(f"spaces must be a positive integer, got {row[1]!r}")
            if row[0] in out:
                raise ValueError(f"duplicate block {row[0]!r}")
            out[row[0]] = int(spaces)
        except ValueError as exc:
            problems.append((lineno, str(exc)))
    _finish(problems, lenient, path)
    return out


def read_occupancy(path, lenient=False):
    """
    Parse ``node_id,occupancy`` lines (header optional).

    Raw loads may exceed 1; clamp them with :func:`clamp_load` before
    inverting.
    """
    out, problems = {}, []
    for n, (lineno, row) in enumerate(_rows(path)):
        if n == 0 and _is_header(row, 1):
            continue
        try:
            if len(row) != 2:
                raise ValueError(f"expected 2 fields, got {len(row)}")
            value = float(row[1])
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"occupancy must be a nonnegative number, got {row[1]!r}")
            if row[0] in out:
                raise ValueError(f"duplicate node {row[0]!r}")
            out[row[0]] = value
        except ValueError as exc:
            problems.append((lineno, str(exc)))
    _finish(problems, lenient, path)
    return out
