"""Fusion center: defense step (suspicion -> weights) then data fusion.

The decision mapping ``O: X -> Y`` is the composition

    score_suspicion -> reweight -> [influence caps] -> fuse

Voting rules compare each report with the node's calibrated threshold
``theta_j`` (the midpoint of its class-conditional training means). Trained
rules (LinearSVM, LogisticRegression) see the weighted report
``f_j = w_j x_j + (1 - w_j) theta_j``, so a distrusted node falls back to
its decision-neutral threshold instead of zero dBm.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .defenses import DefenseKind, TrustDefense, make_defense
from .errors import CalibrationError, ParameterError, StateError
from .learners import LogisticSGD, SGDHinge
from .rng import Stream, derive_seed
from .trace import A_MAX_GLOBAL, A_MIN_GLOBAL, TraceDataset

W_FLOOR = 0.01


class FusionRuleKind(str, Enum):
    LINEAR_SVM = "LinearSVM"
    LOGISTIC_REGRESSION = "LogisticRegression"
    AND = "And"
    OR = "Or"
    MAJORITY = "Majority"


VOTING_RULES = (FusionRuleKind.AND, FusionRuleKind.OR, FusionRuleKind.MAJORITY)


def votes(x: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Local hard decisions, ``sign(x - theta)`` with ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= thresholds, 1, -1)


def reweight(suspicion, w_floor: float = W_FLOOR, trust=None) -> np.ndarray:
    """``w_j = max(w_floor, 1 - s_j)``; a trust vector, if given, overrides."""
    if trust is not None:
        return np.maximum(w_floor, np.asarray(trust, dtype=np.float64))
    s = np.asarray(suspicion, dtype=np.float64)
    return np.maximum(w_floor, 1.0 - s)


@dataclass
class FusionConfig:
    defense: DefenseKind = DefenseKind.NONE
    rule: FusionRuleKind = FusionRuleKind.MAJORITY
    window: int = 64
    w_floor: float = W_FLOOR
    heavy_weight: float = 0.5
    trust_rho: float = 0.05
    train_epochs: int = 5
    seed: int = 0
    bounds: tuple = (A_MIN_GLOBAL, A_MAX_GLOBAL)

    def __post_init__(self):
        self.defense = DefenseKind(self.defense)
        self.rule = FusionRuleKind(self.rule)
        if self.window < 1:
            raise ParameterError("defense window must be >= 1")


class FusionCenter:
    def __init__(self, config: FusionConfig | None = None, **overrides):
        if config is None:
            config = FusionConfig(**overrides)
        elif overrides:
            config = FusionConfig(**{**config.__dict__, **overrides})
        self.config = config
        self.defense = make_defense(config.defense)
        if isinstance(self.defense, TrustDefense):
            self.defense.rho = config.trust_rho
        self.calibrated = False
        self.n_nodes = None
        self.thresholds = None
        self.model = None
        self.window = deque(maxlen=config.window)
        self.current_weights = None
        self.defense_weights = None
        lo, hi = config.bounds
        self._centre = 0.5 * (lo + hi)
        self._half = 0.5 * (hi - lo)

    # -- calibration -----------------------------------------------------

    def calibrate(self, training) -> "FusionCenter":
        """Fit thresholds, defense statistics and the fusion model.

        ``training`` is a :class:`TraceDataset` (its calibration prefix is
        used) or a ``(values, truth)`` pair.
        """
        if isinstance(training, TraceDataset):
            values = training.values[: training.train_len]
            truth = training.truth[: training.train_len]
        else:
            values, truth = training
        values = np.asarray(values, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.int64)
        if values.ndim != 2 or len(values) == 0:
            raise CalibrationError("training data must be a non-empty (slots x nodes) array")
        if not (np.any(truth == 1) and np.any(truth == -1)):
            raise CalibrationError("training data must contain both channel states")
        self.n_nodes = values.shape[1]
        busy = values[truth == 1].mean(axis=0)
        free = values[truth == -1].mean(axis=0)
        self.thresholds = 0.5 * (busy + free)
        self.defense.fit(values, truth, self.config.window)
        self.model = self._train_model(values, truth)
        self.window.clear()
        for row in values[-self.config.window :]:
            self.window.append(row.copy())
        self.current_weights = np.ones(self.n_nodes)
        self.defense_weights = np.ones(self.n_nodes)
        self.calibrated = True
        return self

    def _train_model(self, values, truth):
        rule = self.config.rule
        if rule in VOTING_RULES:
            return None
        n = values.shape[1]
        model = SGDHinge(n) if rule == FusionRuleKind.LINEAR_SVM else LogisticSGD(n)
        u = self.scale(values)
        for epoch in range(self.config.train_epochs):
            order = Stream(derive_seed(self.config.seed, "fusion-epoch", epoch)).permutation(len(u))
            for i in order:
                model.fit_one(u[i], int(truth[i]))
        return model

    def scale(self, x):
        return (np.asarray(x, dtype=np.float64) - self._centre) / self._half

    def _require(self):
        if not self.calibrated:
            raise StateError("fusion center is not calibrated")

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_nodes,):
            raise ParameterError(f"expected {self.n_nodes} reports, got shape {x.shape}")
        return x

    # -- decision pipeline -----------------------------------------------

    def _window_with(self, x):
        if not self.defense.uses_window:
            return None
        rows = list(self.window)[-(self.config.window - 1) :] if self.config.window > 1 else []
        rows.append(x)
        return np.vstack(rows)

    def _suspicion(self, x):
        return self.defense.suspicion(x, self._window_with(x))

    def score_suspicion(self, x) -> np.ndarray:
        """Per-node suspicion in ``[0, 1]``; does not change any state."""
        self._require()
        return self._suspicion(self._check(x))[0]

    def reweight(self, suspicion) -> np.ndarray:
        trust = self.defense.trust if isinstance(self.defense, TrustDefense) else None
        return reweight(suspicion, self.config.w_floor, trust)

    def fuse(self, x, weights) -> int:
        self._require()
        x = self._check(x)
        stat, const = self.node_terms(x[None, :], weights)
        return int(self.decide_from_terms(stat.sum(axis=1), const)[0])

    def node_terms(self, X: np.ndarray, weights):
        """Additive per-node decomposition of the fusion statistic.

        Returns ``(G, c)`` with ``G`` of shape ``(rows, n)`` such that the
        decision for row ``r`` is ``decide_from_terms(G[r].sum(), c)``. Every
        supported rule is of this form, which lets the influence estimator
        evaluate subset substitutions with one matrix product.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        w = np.asarray(weights, dtype=np.float64)
        rule = self.config.rule
        if rule == FusionRuleKind.MAJORITY:
            return w * votes(X, self.thresholds), 0.0
        heavy = w >= self.config.heavy_weight
        if rule == FusionRuleKind.AND:
            return (heavy & (votes(X, self.thresholds) < 0)).astype(np.float64), 0.0
        if rule == FusionRuleKind.OR:
            return (heavy & (votes(X, self.thresholds) > 0)).astype(np.float64), 0.0
        f = w * X + (1.0 - w) * self.thresholds
        return self.model.w * self.scale(f), self.model.b

    def decide_from_terms(self, totals, const) -> np.ndarray:
        totals = np.asarray(totals, dtype=np.float64)
        rule = self.config.rule
        if rule == FusionRuleKind.AND:
            return np.where(totals < 0.5, 1, -1)
        if rule == FusionRuleKind.OR:
            return np.where(totals > 0.5, 1, -1)
        return np.where(totals + const >= 0.0, 1, -1)

    def effective_weights(self, weights, caps=None):
        """Apply multiplicative influence caps.

        Capped weights are rescaled so that the largest weight is unchanged;
        this keeps every node's share of the total weight exactly as the caps
        set it while staying on the same scale as the uncapped weights.
        """
        if caps is None:
            return weights
        caps = np.asarray(caps, dtype=np.float64)
        if np.all(caps >= 1.0):
            return weights
        capped = weights * caps
        return capped * (weights.max() / capped.max())

    def decide(self, x, caps=None):
        """Full decision for one slot; commits all state updates.

        Returns ``(decision, weights_used, suspicion)``.
        """
        self._require()
        x = self._check(x)
        suspicion, pending = self._suspicion(x)
        weights = self.reweight(suspicion)
        used = self.effective_weights(weights, caps)
        y = self.fuse(x, used)
        self.defense.commit(pending)
        if isinstance(self.defense, TrustDefense):
            frozen = None if caps is None else np.asarray(caps) < 1.0
            self.defense.update(votes(x, self.thresholds), y, frozen)
        self.window.append(x.copy())
        self.defense_weights = weights
        self.current_weights = used
        return y, used, suspicion

    def decide_counterfactual(self, x_override, weights=None) -> int:
        """Decision on ``x_override`` with the frozen current weights; pure."""
        self._require()
        x = self._check(x_override)
        return self.fuse(x, self.current_weights if weights is None else weights)

    def snapshot(self) -> "FusionCenter":
        return copy.deepcopy(self)
