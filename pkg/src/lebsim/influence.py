"""Influence-limiting policy.

The decision flipping influence ``I(S)`` of a node subset ``S`` is the
fraction of recent slots in which pinning the members of ``S`` to the
feasible maximum, or to the feasible minimum, changes the fusion decision.
A subset violates the policy when ``I(S) >= delta(|S|)`` with

    delta(k) = 1 / (1 + exp(-c1 (k - n/2))) - c2 * sum_{j in S} d_ks_j

clamped into ``(0, 1)``; ``d_ks_j`` is the two-sample Kolmogorov-Smirnov
distance between node ``j``'s training reports and its recent reports.
Violators have their members' weights scaled down uniformly until the
subset's share of the total weight equals ``delta``; a node keeps the
smallest cap any violating subset imposes on it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .trace import A_MAX_GLOBAL, A_MIN_GLOBAL

DELTA_FLOOR = 1e-4
KS_MIN_WINDOW = 8


@dataclass
class PolicyParams:
    c1: float = 0.6
    c2: float = 0.08
    eta: int = 4
    window: int = 64
    cadence: int = 16
    ks_window: int = 256
    delta_floor: float = DELTA_FLOOR

    def validate(self, n: Optional[int] = None) -> "PolicyParams":
        if not self.c1 > 0:
            raise ParameterError(f"c1 must be positive, got {self.c1}")
        if self.c2 < 0:
            raise ParameterError(f"c2 must be non-negative, got {self.c2}")
        if self.eta < 1 or (n is not None and self.eta > n):
            raise ParameterError(f"eta must lie in [1, n], got {self.eta}")
        if self.window < 1 or self.cadence < 1 or self.ks_window < 1:
            raise ParameterError("window, cadence and ks_window must be >= 1")
        if not 0 < self.delta_floor < 0.5:
            raise ParameterError("delta_floor must lie in (0, 0.5)")
        return self


@dataclass
class InfluenceEstimate:
    subset: tuple
    flips: int
    window_len: int

    @property
    def value(self) -> float:
        return self.flips / self.window_len


@dataclass
class KsStat:
    node_id: int
    train_dist: np.ndarray
    d_ks: float = 0.0
    current_window: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class WeightCaps:
    caps: np.ndarray
    provenance: dict = field(default_factory=dict)  # node -> violating subset that set its cap
    violators: list = field(default_factory=list)  # (subset, I, delta, scale)
    residual_violations: int = 0

    @property
    def active(self) -> bool:
        return bool(np.any(self.caps < 1.0))


def ks_statistic(train, current) -> float:
    """Two-sample K-S distance ``sup_x |F_train(x) - F_current(x)|``."""
    a = np.sort(np.asarray(train, dtype=np.float64).ravel())
    b = np.sort(np.asarray(current, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ParameterError("both samples must be non-empty")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _sigmoid_part(c1, k, n):
    return 1.0 / (1.0 + np.exp(-c1 * (np.asarray(k, dtype=np.float64) - n / 2.0)))


def threshold(params: PolicyParams, subset_size: int, ks_sum: float, n: int) -> float:
    """Drift-aware influence threshold for a subset of ``subset_size`` nodes."""
    k = int(subset_size)
    if k < 1 or k > n / 2.0:
        raise ParameterError(f"subset size must lie in [1, n/2] = [1, {n / 2}], got {k}")
    if ks_sum < 0:
        raise ParameterError("ks_sum must be non-negative")
    raw = float(_sigmoid_part(params.c1, k, n)) - params.c2 * ks_sum
    return max(params.delta_floor, min(1.0 - params.delta_floor, raw))


def thresholds(params: PolicyParams, sizes: np.ndarray, ks_sums: np.ndarray, n: int) -> np.ndarray:
    raw = _sigmoid_part(params.c1, sizes, n) - params.c2 * np.asarray(ks_sums)
    return np.clip(raw, params.delta_floor, 1.0 - params.delta_floor)


def max_subset_size(eta: int, n: int) -> int:
    return max(0, min(int(eta), n // 2))


def enumerate_subsets(n: int, eta: int) -> list[tuple]:
    """All subsets with ``1 <= |S| <= min(eta, n // 2)``, by size then lexicographically."""
    out = []
    for k in range(1, max_subset_size(eta, n) + 1):
        out.extend(combinations(range(n), k))
    return out


def subset_count(n: int, eta: int) -> int:
    return sum(math.comb(n, k) for k in range(1, max_subset_size(eta, n) + 1))


def incidence_matrix(subsets: Sequence[tuple], n: int) -> np.ndarray:
    inc = np.zeros((len(subsets), n))
    for r, s in enumerate(subsets):
        inc[r, list(s)] = 1.0
    return inc


def estimate_influence(
    subset, window, decide_cf: Callable, bounds=(A_MIN_GLOBAL, A_MAX_GLOBAL)
) -> InfluenceEstimate:
    """Count window slots where the subset can flip ``decide_cf`` by substitution."""
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if window.shape[0] == 0 or window.size == 0:
        raise ParameterError("influence window must be non-empty")
    subset = tuple(sorted(set(int(j) for j in subset)))
    if not subset or subset[0] < 0 or subset[-1] >= window.shape[1]:
        raise ParameterError("subset must be a non-empty list of valid node ids")
    idx = list(subset)
    flips = 0
    for x in window:
        original = decide_cf(x)
        hi = x.copy()
        hi[idx] = bounds[1]
        lo = x.copy()
        lo[idx] = bounds[0]
        if decide_cf(hi) != original or decide_cf(lo) != original:
            flips += 1
    return InfluenceEstimate(subset, flips, window.shape[0])


def batch_influence(fusion, weights, window, incidence, bounds=(A_MIN_GLOBAL, A_MAX_GLOBAL)) -> np.ndarray:
    """Influence of every subset (rows of ``incidence``) at once.

    Relies on the fusion statistic being a sum of per-node terms (see
    ``FusionCenter.node_terms``), so substituting a subset only swaps that
    subset's terms.
    """
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if window.shape[0] == 0:
        raise ParameterError("influence window must be non-empty")
    g, const = fusion.node_terms(window, weights)
    g_hi, _ = fusion.node_terms(np.full_like(window, bounds[1]), weights)
    g_lo, _ = fusion.node_terms(np.full_like(window, bounds[0]), weights)
    total = g.sum(axis=1)
    original = fusion.decide_from_terms(total, const)
    flipped = np.zeros((incidence.shape[0], window.shape[0]), dtype=bool)
    for g_ext in (g_hi, g_lo):
        alt = total[None, :] + incidence @ (g_ext - g).T
        flipped |= fusion.decide_from_terms(alt, const) != original[None, :]
    return flipped.sum(axis=1) / window.shape[0]


def cap_weights(weights, incidence, violating, deltas) -> tuple[np.ndarray, np.ndarray]:
    """Per-node caps from the violating subsets.

    For a violator with member mass ``M`` and remaining mass ``R`` the
    uniform member scale ``s = delta R / (M (1 - delta))`` makes its share
    exactly ``delta``; subsets already at or below their target keep
    ``s = 1``. Returns ``(caps, scales)``.
    """
    w = np.asarray(weights, dtype=np.float64)
    mass = incidence @ w
    rest = w.sum() - mass
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = deltas * rest / (mass * (1.0 - deltas))
    scale = np.where(violating & (mass > 0), np.minimum(1.0, scale), 1.0)
    caps = np.ones(len(w))
    for j in range(len(w)):
        member = incidence[:, j] > 0
        if np.any(member):
            caps[j] = min(1.0, float(scale[member].min()))
    return caps, scale


def enforce(
    params: PolicyParams,
    ks_values,
    window,
    fusion,
    weights,
    subsets=None,
    incidence=None,
    bounds=(A_MIN_GLOBAL, A_MAX_GLOBAL),
) -> WeightCaps:
    """Evaluate every admissible subset and cap the violators' weights."""
    weights = np.asarray(weights, dtype=np.float64)
    n = len(weights)
    if subsets is None:
        subsets = enumerate_subsets(n, params.eta)
    if incidence is None:
        incidence = incidence_matrix(subsets, n)
    if not subsets:
        return WeightCaps(np.ones(n))
    influence = batch_influence(fusion, weights, window, incidence, bounds)
    sizes = incidence.sum(axis=1)
    deltas = thresholds(params, sizes, incidence @ np.asarray(ks_values, dtype=np.float64), n)
    violating = influence >= deltas
    caps, scale = cap_weights(weights, incidence, violating, deltas)
    result = WeightCaps(caps)
    viol_idx = np.flatnonzero(violating)
    result.violators = [(subsets[r], float(influence[r]), float(deltas[r]), float(scale[r])) for r in viol_idx]
    for j in range(n):
        if caps[j] < 1.0:
            rows = viol_idx[incidence[viol_idx, j] > 0]
            result.provenance[j] = subsets[rows[np.argmin(scale[rows])]]
    if len(viol_idx):
        capped = weights * caps
        share = incidence[viol_idx] @ capped / capped.sum()
        result.residual_violations = int(np.sum(share > deltas[viol_idx] * (1.0 + 1e-9)))
    return result


def refresh_ks(stats: list[KsStat], recent_window) -> list[KsStat]:
    """Recompute every node's K-S distance against its training sample.

    Windows shorter than ``KS_MIN_WINDOW`` slots leave the stats untouched.
    """
    recent = np.asarray(recent_window, dtype=np.float64)
    if recent.ndim != 2 or recent.shape[0] < KS_MIN_WINDOW:
        return stats
    for st in stats:
        col = recent[:, st.node_id]
        st.current_window = col.copy()
        st.d_ks = ks_statistic(st.train_dist, col)
    return stats


class InfluenceLimiter:
    """Stateful wrapper running the policy on a fixed cadence."""

    def __init__(self, params: PolicyParams, training_values, bounds=(A_MIN_GLOBAL, A_MAX_GLOBAL)):
        training_values = np.asarray(training_values, dtype=np.float64)
        self.n = training_values.shape[1]
        self.params = params.validate(self.n)
        self.bounds = bounds
        self.ks = [KsStat(j, np.sort(training_values[:, j])) for j in range(self.n)]
        self.subsets = enumerate_subsets(self.n, params.eta)
        self.incidence = incidence_matrix(self.subsets, self.n)
        self.history: list[np.ndarray] = []
        self.caps = WeightCaps(np.ones(self.n))
        self.slots_seen = 0
        self.audit: list[tuple] = []
        self.keep_audit = False

    @property
    def ks_values(self) -> np.ndarray:
        return np.array([st.d_ks for st in self.ks])

    def observe(self, x, slot: int, fusion) -> None:
        """Record one submitted report vector; re-evaluate on cadence."""
        self.history.append(np.asarray(x, dtype=np.float64).copy())
        keep = max(self.params.window, self.params.ks_window)
        if len(self.history) > keep:
            del self.history[: len(self.history) - keep]
        self.slots_seen += 1
        if self.slots_seen % self.params.cadence == 0:
            self.refresh(slot, fusion)

    def refresh(self, slot: int, fusion) -> WeightCaps:
        recent = np.array(self.history[-self.params.ks_window :])
        refresh_ks(self.ks, recent)
        window = np.array(self.history[-self.params.window :])
        self.caps = enforce(
            self.params,
            self.ks_values,
            window,
            fusion,
            fusion.defense_weights,
            self.subsets,
            self.incidence,
            self.bounds,
        )
        if self.keep_audit:
            for subset, infl, delta, scale in self.caps.violators:
                self.audit.append((slot, "-".join(map(str, subset)), infl, delta, scale < 1.0, scale))
        return self.caps


def write_audit_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["slot", "subset", "influence", "delta", "capped", "scale"])
        for slot, subset, infl, delta, capped, scale in rows:
            wr.writerow([slot, subset, f"{infl:.6f}", f"{delta:.6g}", int(capped), f"{scale:.6g}"])
