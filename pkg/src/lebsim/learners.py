"""Incremental binary classifiers over labels {-1, +1}.

All learners share one small protocol: ``predict(x)``, ``fit_one(x, y)``,
``hyperplane()`` and a JSON snapshot via ``to_dict``/``from_dict``.
Linear learners use bias augmentation, i.e. they act on ``[x, 1]`` so that
norms in the update rules include the intercept. Ties resolve to +1
(``sign(0) = +1``), which also fixes the cold-start prediction.
"""

from __future__ import annotations

import json
import math
from enum import Enum

import numpy as np

from .errors import ParameterError
from .rng import Stream

SNAPSHOT_FORMAT = "lebsim.classifier"
SNAPSHOT_VERSION = 1


class ClassifierKind(str, Enum):
    MULTINOMIAL_NB = "MultinomialNB"
    PERCEPTRON = "Perceptron"
    SGD_HINGE = "SGDHinge"
    PASSIVE_AGGRESSIVE_I = "PassiveAggressiveI"
    PASSIVE_AGGRESSIVE_II = "PassiveAggressiveII"
    MLP = "MLP"


ALL_KINDS = tuple(ClassifierKind)


def _sign(score: float) -> int:
    return 1 if score >= 0.0 else -1


def _check_label(y) -> int:
    y = int(y)
    if y not in (-1, 1):
        raise ParameterError(f"label must be -1 or +1, got {y}")
    return y


class OnlineClassifier:
    kind: str = ""

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise ParameterError(f"feature dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self.updates_seen = 0

    def _features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ParameterError(f"expected {self.dim} features, got shape {x.shape}")
        # a finite sum rules out NaN/inf cheaply; only overflow needs the full check
        with np.errstate(over="ignore"):
            total = x.sum()
        if not math.isfinite(total) and not np.all(np.isfinite(x)):
            raise ParameterError("features must be finite")
        return x

    def predict(self, x) -> int:
        raise NotImplementedError

    def fit_one(self, x, y) -> "OnlineClassifier":
        raise NotImplementedError

    def hyperplane(self):
        """``(w, b)`` for linear learners, ``None`` when no hyperplane exists."""
        return None

    # -- snapshots -------------------------------------------------------

    def _params(self) -> dict:
        return {}

    def _state(self) -> dict:
        raise NotImplementedError

    def _load_state(self, state: dict) -> None:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "kind": self.kind,
            "dim": self.dim,
            "updates_seen": self.updates_seen,
            "params": self._params(),
            "state": self._state(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "OnlineClassifier":
        if d.get("format") != SNAPSHOT_FORMAT or d.get("version") != SNAPSHOT_VERSION:
            raise ParameterError("unsupported classifier snapshot")
        cls = _REGISTRY.get(d["kind"])
        if cls is None:
            raise ParameterError(f"unknown classifier kind {d['kind']!r}")
        obj = cls(d["dim"], **d["params"])
        obj.updates_seen = int(d["updates_seen"])
        obj._load_state(d["state"])
        return obj

    @staticmethod
    def from_json(text: str) -> "OnlineClassifier":
        return OnlineClassifier.from_dict(json.loads(text))


class LinearClassifier(OnlineClassifier):
    """Shared storage and prediction for hyperplane learners."""

    def __init__(self, dim: int):
        super().__init__(dim)
        self.w = np.zeros(self.dim)
        self.b = 0.0

    def decision_function(self, x) -> float:
        x = self._features(x)
        return float(self.w @ x + self.b)

    def predict(self, x) -> int:
        return _sign(self.decision_function(x))

    def hyperplane(self):
        return self.w.copy(), float(self.b)

    def _state(self):
        return {"w": self.w.tolist(), "b": self.b}

    def _load_state(self, state):
        self.w = np.array(state["w"], dtype=np.float64)
        self.b = float(state["b"])


class Perceptron(LinearClassifier):
    """Mistake-driven perceptron with unit learning rate."""

    kind = ClassifierKind.PERCEPTRON.value

    def fit_one(self, x, y):
        x = self._features(x)
        y = _check_label(y)
        if _sign(float(self.w @ x + self.b)) != y:
            self.w += y * x
            self.b += y
        self.updates_seen += 1
        return self


class PassiveAggressive(LinearClassifier):
    """Passive-Aggressive learner (Crammer et al. 2006), variants I and II.

    With hinge loss ``l = max(0, 1 - y (w.x + b))`` and the bias-augmented
    norm ``q = |x|^2 + 1`` the step is ``tau = min(C, l / q)`` for PA-I and
    ``tau = l / (q + 1 / (2 C))`` for PA-II.
    """

    def __init__(self, dim: int, C: float = 1.0, variant: int = 1):
        super().__init__(dim)
        if C <= 0:
            raise ParameterError("PA aggressiveness C must be positive")
        if variant not in (1, 2):
            raise ParameterError("PA variant must be 1 or 2")
        self.C = float(C)
        self.variant = int(variant)

    @property
    def kind(self):
        return (ClassifierKind.PASSIVE_AGGRESSIVE_I if self.variant == 1 else ClassifierKind.PASSIVE_AGGRESSIVE_II).value

    def step_size(self, loss: float, sq_norm: float) -> float:
        if self.variant == 1:
            return min(self.C, loss / sq_norm)
        return loss / (sq_norm + 1.0 / (2.0 * self.C))

    def fit_one(self, x, y):
        x = self._features(x)
        y = _check_label(y)
        loss = max(0.0, 1.0 - y * float(self.w @ x + self.b))
        if loss > 0.0:
            tau = self.step_size(loss, float(x @ x) + 1.0)
            self.w += tau * y * x
            self.b += tau * y
        self.updates_seen += 1
        return self

    def _params(self):
        return {"C": self.C, "variant": self.variant}


class SGDHinge(LinearClassifier):
    """Linear SVM by stochastic sub-gradient descent (Pegasos schedule).

    ``eta_t = 1 / (lam * (t + t0))``; every step shrinks ``w`` by
    ``(1 - lam * eta_t)`` and margin violations add ``eta_t * y * x``.
    """

    kind = ClassifierKind.SGD_HINGE.value

    def __init__(self, dim: int, lam: float = 1e-4, t0: float = 1.0):
        super().__init__(dim)
        if lam <= 0 or t0 <= 0:
            raise ParameterError("lam and t0 must be positive")
        self.lam = float(lam)
        self.t0 = float(t0)

    def fit_one(self, x, y):
        x = self._features(x)
        y = _check_label(y)
        eta = 1.0 / (self.lam * (self.updates_seen + self.t0))
        margin = y * float(self.w @ x + self.b)
        shrink = 1.0 - self.lam * eta
        self.w *= shrink
        self.b *= shrink
        if margin < 1.0:
            self.w += eta * y * x
            self.b += eta * y
        self.updates_seen += 1
        return self

    def _params(self):
        return {"lam": self.lam, "t0": self.t0}


class LogisticSGD(LinearClassifier):
    """Logistic regression trained one sample at a time.

    Used as a trainable fusion rule; it is not one of the attacker's
    sub-model kinds.
    """

    kind = "LogisticSGD"

    def __init__(self, dim: int, lr: float = 0.1, l2: float = 1e-4):
        super().__init__(dim)
        self.lr = float(lr)
        self.l2 = float(l2)

    def fit_one(self, x, y):
        x = self._features(x)
        y = _check_label(y)
        z = y * float(self.w @ x + self.b)
        # d/dz log(1 + e^-z) = -1 / (1 + e^z)
        g = -1.0 / (1.0 + math.exp(z)) if z > -700 else -1.0
        self.w -= self.lr * (g * y * x + self.l2 * self.w)
        self.b -= self.lr * g * y
        self.updates_seen += 1
        return self

    def _params(self):
        return {"lr": self.lr, "l2": self.l2}


class MultinomialNB(OnlineClassifier):
    """Multinomial naive Bayes over equal-width binned features.

    Each feature value is mapped to one of ``n_bins`` bins spanning
    ``bounds``; the sample then counts as one token ``(feature, bin)`` per
    feature. Token likelihoods and class priors use Laplace smoothing.
    """

    kind = ClassifierKind.MULTINOMIAL_NB.value

    def __init__(self, dim: int, n_bins: int = 16, bounds=(-110.0, -40.0), alpha: float = 1.0):
        super().__init__(dim)
        lo, hi = float(bounds[0]), float(bounds[1])
        if not hi > lo:
            raise ParameterError("bounds must satisfy low < high")
        self.n_bins = int(n_bins)
        self.bounds = (lo, hi)
        self.alpha = float(alpha)
        self.edges = np.linspace(lo, hi, self.n_bins + 1)
        self.class_count = np.zeros(2)
        self.feature_count = np.zeros((2, self.dim * self.n_bins))
        self._offsets = np.arange(self.dim) * self.n_bins

    def bin_index(self, x) -> np.ndarray:
        lo, hi = self.bounds
        b = np.floor((np.asarray(x, dtype=np.float64) - lo) / (hi - lo) * self.n_bins).astype(np.int64)
        return np.clip(b, 0, self.n_bins - 1)

    def joint_log_likelihood(self, x) -> np.ndarray:
        x = self._features(x)
        tokens = self._offsets + self.bin_index(x)
        total = self.feature_count.sum(axis=1) + self.alpha * self.feature_count.shape[1]
        loglik = np.log(self.feature_count[:, tokens] + self.alpha).sum(axis=1) - self.dim * np.log(total)
        prior = np.log((self.class_count + 1.0) / (self.class_count.sum() + 2.0))
        return prior + loglik

    def predict(self, x) -> int:
        jll = self.joint_log_likelihood(x)
        return 1 if jll[1] >= jll[0] else -1

    def fit_one(self, x, y):
        x = self._features(x)
        c = 1 if _check_label(y) > 0 else 0
        self.class_count[c] += 1
        self.feature_count[c, self._offsets + self.bin_index(x)] += 1
        self.updates_seen += 1
        return self

    def _params(self):
        return {"n_bins": self.n_bins, "bounds": list(self.bounds), "alpha": self.alpha}

    def _state(self):
        return {"class_count": self.class_count.tolist(), "feature_count": self.feature_count.tolist()}

    def _load_state(self, state):
        self.class_count = np.array(state["class_count"], dtype=np.float64)
        self.feature_count = np.array(state["feature_count"], dtype=np.float64)


class MLP(OnlineClassifier):
    """One hidden tanh layer, logistic output, plain SGD on log loss."""

    kind = ClassifierKind.MLP.value

    def __init__(self, dim: int, hidden: int = 8, lr: float = 0.05, seed: int = 0, init_scale: float = 0.1):
        super().__init__(dim)
        self.hidden = int(hidden)
        self.lr = float(lr)
        self.seed = int(seed)
        self.init_scale = float(init_scale)
        s = Stream(self.seed)
        self.W1 = s.uniform((self.hidden, self.dim), -init_scale, init_scale)
        self.b1 = np.zeros(self.hidden)
        self.w2 = s.uniform(self.hidden, -init_scale, init_scale)
        self.b2 = 0.0

    def _forward(self, x):
        h = np.tanh(self.W1 @ x + self.b1)
        z = float(self.w2 @ h + self.b2)
        p = 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0
        return h, p

    def predict_proba(self, x) -> float:
        return self._forward(self._features(x))[1]

    def predict(self, x) -> int:
        return 1 if self.predict_proba(x) >= 0.5 else -1

    def fit_one(self, x, y):
        x = self._features(x)
        t = 1.0 if _check_label(y) > 0 else 0.0
        h, p = self._forward(x)
        g = p - t
        dh = g * self.w2 * (1.0 - h * h)
        self.w2 -= self.lr * g * h
        self.b2 -= self.lr * g
        self.W1 -= self.lr * np.outer(dh, x)
        self.b1 -= self.lr * dh
        self.updates_seen += 1
        return self

    def _params(self):
        return {"hidden": self.hidden, "lr": self.lr, "seed": self.seed, "init_scale": self.init_scale}

    def _state(self):
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2}

    def _load_state(self, state):
        self.W1 = np.array(state["W1"], dtype=np.float64).reshape(self.hidden, self.dim)
        self.b1 = np.array(state["b1"], dtype=np.float64)
        self.w2 = np.array(state["w2"], dtype=np.float64)
        self.b2 = float(state["b2"])


_REGISTRY = {
    ClassifierKind.MULTINOMIAL_NB.value: MultinomialNB,
    ClassifierKind.PERCEPTRON.value: Perceptron,
    ClassifierKind.SGD_HINGE.value: SGDHinge,
    ClassifierKind.PASSIVE_AGGRESSIVE_I.value: PassiveAggressive,
    ClassifierKind.PASSIVE_AGGRESSIVE_II.value: PassiveAggressive,
    ClassifierKind.MLP.value: MLP,
    LogisticSGD.kind: LogisticSGD,
}


def make_classifier(kind, dim: int, seed: int = 0, **params) -> OnlineClassifier:
    """Build a fresh classifier of ``kind`` (a :class:`ClassifierKind` or its name)."""
    name = kind.value if isinstance(kind, ClassifierKind) else str(kind)
    if name == ClassifierKind.PASSIVE_AGGRESSIVE_I.value:
        return PassiveAggressive(dim, C=params.get("C", 1.0), variant=1)
    if name == ClassifierKind.PASSIVE_AGGRESSIVE_II.value:
        return PassiveAggressive(dim, C=params.get("C", 1.0), variant=2)
    if name == ClassifierKind.MLP.value:
        return MLP(dim, seed=seed, **params)
    cls = _REGISTRY.get(name)
    if cls is None:
        raise ParameterError(f"unknown classifier kind {kind!r}")
    return cls(dim, **params)
