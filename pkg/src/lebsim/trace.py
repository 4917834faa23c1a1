"""Signal-strength traces: synthetic generation and CSV ingestion.

A trace is a ``(T, n)`` matrix of energy levels in dBm, one row per
timeslot and one column per sensing node, plus the ground-truth channel
state of every slot. The first ``train_len`` rows are the attack-free
calibration window of the fusion center.

Synthetic traces follow a Gaussian-around-class-mean model::

    x[i, j] = mu(state_i) + bias_j + shift_j(i) + N(0, (sigma_j * scale_j(i))**2)

clamped into the global feasible range, where ``shift_j`` and ``scale_j``
are piecewise constant over the node's drift segments.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import FormatError, ParameterError
from .rng import Stream, derive_seed

A_MIN_GLOBAL = -110.0
A_MAX_GLOBAL = -40.0
VALUE_DECIMALS = 6


class ChannelState(IntEnum):
    FREE = -1
    BUSY = 1


def check_state(value) -> int:
    v = int(value)
    if v not in (-1, 1):
        raise ParameterError(f"channel state must be -1 or +1, got {value!r}")
    return v


@dataclass(frozen=True)
class NodeProfile:
    """Per-node signal characteristics.

    ``drift_segments`` holds ``(start_slot, mean_shift_dbm, sigma_scale)``
    triples sorted by start slot; the first one starts at slot 0.
    """

    node_id: int
    location_bias_dbm: float = 0.0
    noise_sigma_dbm: float = 1.0
    drift_segments: tuple = ((0, 0.0, 1.0),)

    def __post_init__(self):
        if self.noise_sigma_dbm < 0 or not math.isfinite(self.noise_sigma_dbm):
            raise ParameterError("noise_sigma_dbm must be a finite non-negative number")
        segs = tuple((int(s), float(m), float(k)) for s, m, k in self.drift_segments)
        if not segs or segs[0][0] != 0:
            raise ParameterError("first drift segment must start at slot 0")
        starts = [s for s, _, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ParameterError("drift segments must be sorted by start slot")
        if any(k <= 0 for _, _, k in segs):
            raise ParameterError("sigma_scale must be positive")
        object.__setattr__(self, "drift_segments", segs)

    def shift_and_scale(self, length: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-slot mean shift and sigma scale over ``range(length)``."""
        starts = np.array([s for s, _, _ in self.drift_segments])
        idx = np.searchsorted(starts, np.arange(length), side="right") - 1
        shifts = np.array([m for _, m, _ in self.drift_segments])[idx]
        scales = np.array([k for _, _, k in self.drift_segments])[idx]
        return shifts, scales


@dataclass(frozen=True)
class ReportVector:
    timeslot: int
    values: np.ndarray
    ground_truth: int


@dataclass
class TraceDataset:
    """Report vectors of ``n_nodes`` sensing nodes over consecutive slots."""

    values: np.ndarray  # (T, n) dBm
    truth: np.ndarray  # (T,) in {-1, +1}
    train_len: int
    bounds: tuple = (A_MIN_GLOBAL, A_MAX_GLOBAL)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.int64)
        if self.values.ndim != 2:
            raise ParameterError("values must be a 2-D (slots x nodes) array")
        if self.truth.shape != (self.values.shape[0],):
            raise ParameterError("truth must have one entry per slot")
        if not np.all(np.isin(self.truth, (-1, 1))):
            raise ParameterError("truth entries must be -1 or +1")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("trace values must be finite")
        if not 0 < self.train_len < len(self):
            raise ParameterError(f"train_len must lie in (0, {len(self)}), got {self.train_len}")

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def report(self, i: int) -> ReportVector:
        return ReportVector(i, self.values[i].copy(), int(self.truth[i]))

    @property
    def reports(self) -> Iterator[ReportVector]:
        return (self.report(i) for i in range(len(self)))

    def history(self, node: int) -> np.ndarray:
        """Full report history of one node."""
        return self.values[:, node].copy()


def generate_schedule(length: int, p_stay: float, seed: int) -> list[int]:
    """Two-state Markov chain of channel states.

    The first state is fair-coin distributed; afterwards the chain keeps its
    state with probability ``p_stay``.
    """
    if int(length) < 1:
        raise ParameterError(f"length must be >= 1, got {length}")
    if not 0.0 < p_stay < 1.0:
        raise ParameterError(f"p_stay must lie in (0, 1), got {p_stay}")
    u = Stream(derive_seed(seed, "schedule")).uniform(int(length))
    states = np.empty(int(length), dtype=np.int64)
    states[0] = 1 if u[0] >= 0.5 else -1
    for i in range(1, int(length)):
        states[i] = states[i - 1] if u[i] < p_stay else -states[i - 1]
    return [int(s) for s in states]


def generate_trace(
    schedule: Sequence[int],
    profiles: Sequence[NodeProfile],
    base_levels: tuple[float, float],
    seed: int,
    train_len: int | None = None,
    bounds: tuple[float, float] = (A_MIN_GLOBAL, A_MAX_GLOBAL),
) -> TraceDataset:
    if not profiles:
        raise ParameterError("at least one node profile is required")
    mu_free, mu_busy = map(float, base_levels)
    if not mu_busy > mu_free:
        raise ParameterError("mu_busy_dbm must exceed mu_free_dbm")
    truth = np.array([check_state(s) for s in schedule], dtype=np.int64)
    length = len(truth)
    if length < 2:
        raise ParameterError("a trace needs at least two slots (training + evaluation)")
    mu = np.where(truth > 0, mu_busy, mu_free)
    values = np.empty((length, len(profiles)))
    for j, prof in enumerate(profiles):
        shift, scale = prof.shift_and_scale(length)
        noise = Stream(derive_seed(seed, "node", prof.node_id)).normal(length)
        values[:, j] = mu + prof.location_bias_dbm + shift + noise * prof.noise_sigma_dbm * scale
    values = np.round(np.clip(values, bounds[0], bounds[1]), VALUE_DECIMALS)
    if train_len is None:
        train_len = max(1, length // 6)
    return TraceDataset(values, truth, int(train_len), tuple(bounds))


@dataclass
class TraceParams:
    """Knobs of the default synthetic deployment.

    Node quality is heterogeneous: every node draws a location bias, a noise
    level and a sequence of drift segments from its own keyed stream, so the
    profile of node ``j`` does not depend on how many nodes exist.
    """

    n_nodes: int = 20
    length: int = 3600
    train_len: int = 600
    p_stay: float = 0.95
    mu_free_dbm: float = -95.0
    mu_busy_dbm: float = -80.0
    bias_sd_dbm: float = 4.0
    sigma_min_dbm: float = 2.0
    sigma_max_dbm: float = 8.0
    drift_every: int = 600
    drift_sd_dbm: float = 3.0
    scale_min: float = 0.8
    scale_max: float = 1.3
    bounds: tuple = (A_MIN_GLOBAL, A_MAX_GLOBAL)


def default_profiles(params: TraceParams, seed: int) -> list[NodeProfile]:
    profiles = []
    for j in range(params.n_nodes):
        s = Stream(derive_seed(seed, "profile", j))
        bias = s.normal() * params.bias_sd_dbm
        sigma = s.uniform(low=params.sigma_min_dbm, high=params.sigma_max_dbm)
        segments = [(0, 0.0, 1.0)]
        if params.drift_every > 0:
            # drift starts once calibration is over
            for start in range(params.train_len, params.length, params.drift_every):
                segments.append(
                    (start, s.normal() * params.drift_sd_dbm, s.uniform(low=params.scale_min, high=params.scale_max))
                )
        profiles.append(NodeProfile(j, bias, sigma, tuple(segments)))
    return profiles


def synthetic_trace(params: TraceParams, seed: int) -> TraceDataset:
    schedule = generate_schedule(params.length, params.p_stay, seed)
    profiles = default_profiles(params, seed)
    return generate_trace(
        schedule, profiles, (params.mu_free_dbm, params.mu_busy_dbm), seed, params.train_len, params.bounds
    )


# -- CSV ---------------------------------------------------------------------


def format_value(v: float) -> str:
    s = f"{v:.{VALUE_DECIMALS}f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def dumps_trace(ds: TraceDataset) -> str:
    buf = io.StringIO()
    n = ds.n_nodes
    buf.write(",".join(["timeslot", "truth"] + [f"node_{j}" for j in range(n)]) + "\n")
    for i in range(len(ds)):
        row = [str(i), str(int(ds.truth[i]))] + [format_value(v) for v in ds.values[i]]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def save_trace_csv(ds: TraceDataset, path) -> None:
    Path(path).write_bytes(dumps_trace(ds).encode("utf-8"))


def _parse_float(cell: str, line: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise FormatError(f"non-numeric cell {cell!r}", line) from None
    if not math.isfinite(v):
        raise FormatError(f"non-finite cell {cell!r}", line)
    return v


def loads_trace(text: str, train_len: int | None = None, bounds=(A_MIN_GLOBAL, A_MAX_GLOBAL)) -> TraceDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[:2] != ["timeslot", "truth"]:
        raise FormatError("header must start with 'timeslot,truth,node_0'", 1)
    n = len(header) - 2
    if header[2:] != [f"node_{j}" for j in range(n)]:
        raise FormatError("node columns must be named node_0 .. node_{n-1} in order", 1)
    values, truth = [], []
    for k, row in enumerate(rows[1:]):
        line = k + 2
        if not row:
            raise FormatError("empty row", line)
        if len(row) != n + 2:
            raise FormatError(f"expected {n + 2} cells, found {len(row)}", line)
        if any(c.strip() == "" for c in row):
            raise FormatError("missing cell", line)
        try:
            slot = int(row[0])
        except ValueError:
            raise FormatError(f"non-integer timeslot {row[0]!r}", line) from None
        if slot != k:
            raise FormatError(f"timeslots must increase from 0 without gaps, expected {k}, got {slot}", line)
        t = row[1].strip()
        if t not in ("-1", "1"):
            raise FormatError(f"truth must be -1 or 1, got {t!r}", line)
        vals = [_parse_float(c, line) for c in row[2:]]
        if any(v < bounds[0] or v > bounds[1] for v in vals):
            raise FormatError(f"value outside feasible range [{bounds[0]}, {bounds[1]}]", line)
        truth.append(int(t))
        values.append(vals)
    if len(values) < 2:
        raise FormatError("trace needs at least two data rows", len(rows))
    if train_len is None:
        train_len = max(1, len(values) // 6)
    return TraceDataset(np.array(values), np.array(truth), int(train_len), tuple(bounds))


def load_trace_csv(path, train_len: int | None = None) -> TraceDataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8: {exc}") from None
    return loads_trace(text, train_len)
