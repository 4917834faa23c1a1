"""Learn-Evaluate-Beat attacker.

The attacker controls the first ``m`` nodes. Each slot it

1. *evaluates*: picks the sub-model with the best running internal
   accuracy and attacks only if that accuracy exceeds ``alpha``;
2. *beats*: searches along the pilot hyperplane normal for the smallest
   report change that flips the selected sub-model (binary search, then
   projection into the feasible box);
3. *learns*: after the fusion center announces its decision, scores every
   sub-model on the submitted report (prequential) and trains it on the
   ``(submitted report, decision)`` pair.

Sub-models see reports mapped affinely from the feasible box onto
``[-1, 1]^m``; hyperplanes are reported back in dBm coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError
from .learners import ALL_KINDS, ClassifierKind, OnlineClassifier, PassiveAggressive, make_classifier
from .rng import derive_seed
from .trace import A_MAX_GLOBAL, A_MIN_GLOBAL

DEFAULT_ALPHA = 0.85
DEFAULT_EPSILON = 0.01


@dataclass
class AttackerConfig:
    m: int
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    d_margin: Optional[float] = None
    a_min: Optional[np.ndarray] = None
    a_max: Optional[np.ndarray] = None
    kinds: Sequence[str] = tuple(k.value for k in ALL_KINDS)
    pa_C: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 0:
            raise ParameterError("m must be non-negative")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if self.d_margin is not None and not self.d_margin > 0:
            raise ParameterError("d_margin must be positive")
        self.a_min = np.full(self.m, A_MIN_GLOBAL) if self.a_min is None else np.asarray(self.a_min, float)
        self.a_max = np.full(self.m, A_MAX_GLOBAL) if self.a_max is None else np.asarray(self.a_max, float)
        if self.a_min.shape != (self.m,) or self.a_max.shape != (self.m,):
            raise ParameterError("bounds must have one entry per malicious node")
        if np.any(self.a_min >= self.a_max):
            raise ParameterError("a_min must be below a_max element-wise")
        self.kinds = tuple(ClassifierKind(k).value for k in self.kinds)
        if not self.kinds:
            raise ParameterError("at least one sub-model kind is required")


class ScaledModel:
    """A classifier fed box-normalised reports, queried in dBm."""

    def __init__(self, clf: OnlineClassifier, a_min, a_max):
        self.clf = clf
        self.centre = 0.5 * (np.asarray(a_min) + np.asarray(a_max))
        self.half = 0.5 * (np.asarray(a_max) - np.asarray(a_min))

    @property
    def kind(self) -> str:
        return self.clf.kind

    def _u(self, a):
        return (np.asarray(a, dtype=np.float64) - self.centre) / self.half

    def predict(self, a) -> int:
        return self.clf.predict(self._u(a))

    def fit_one(self, a, y):
        self.clf.fit_one(self._u(a), y)
        return self

    def hyperplane(self):
        hp = self.clf.hyperplane()
        if hp is None:
            return None
        w, b = hp
        return w / self.half, float(b - np.sum(w * self.centre / self.half))


@dataclass
class AttackOutcome:
    attempted: bool
    selected_model: Optional[int]
    perturbation: Optional[np.ndarray]
    submitted: np.ndarray
    surrogate_flip_ok: bool = False
    accuracy: float = float("nan")
    reason: str = ""
    evaluations: int = 0

    @property
    def delta_norm(self) -> float:
        return 0.0 if self.perturbation is None else float(np.linalg.norm(self.perturbation))


def evaluate(accuracies, alpha: float) -> Optional[int]:
    """Index of the most accurate sub-model if it beats ``alpha``, else ``None``.

    Ties go to the lowest index.
    """
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        return None
    best = int(np.argmax(acc))
    return best if acc[best] > alpha else None


@dataclass
class Generation:
    delta: Optional[np.ndarray]
    t: Optional[float]
    evaluations: int
    reason: str = ""


def generate_adversarial(a, model, pilot, cfg: AttackerConfig, current=None) -> Generation:
    """Pilot-direction binary search for a minimal flipping perturbation.

    ``model`` is the selected sub-model (anything with ``predict``), ``pilot``
    the ``(w, b)`` hyperplane that gives the search direction. ``current``
    may carry the already-known prediction ``model.predict(a)``.

    The search keeps ``r`` at a flipping magnitude and ``l`` at a
    non-flipping one and halves ``[l, r]`` until ``r - l <= epsilon``; the
    result ``a + sgn * r * w`` is then clipped into ``[a_min, a_max]`` and
    the flip re-checked on the clipped point.
    """
    a = np.asarray(a, dtype=np.float64)
    w, b = pilot
    w = np.asarray(w, dtype=np.float64)
    if not np.any(w) or not np.all(np.isfinite(w)):
        return Generation(None, None, 0, "zero pilot weights")
    sgn = -1.0 if float(w @ a + b) >= 0.0 else 1.0
    d_margin = cfg.d_margin
    if d_margin is None:
        d_margin = 2.0 * float(np.max(cfg.a_max - cfg.a_min)) / float(np.max(np.abs(w)))
    evals = 0
    if current is None:
        current = model.predict(a)
        evals += 1
    evals += 1
    if model.predict(a + sgn * d_margin * w) == current:
        return Generation(None, None, evals, "initial probe does not flip")
    lo, hi = 0.0, d_margin
    while True:
        mid = lo + (hi - lo) / 2.0
        evals += 1
        if model.predict(a + sgn * mid * w) != current:
            hi = mid
        else:
            lo = mid
        if hi - lo <= cfg.epsilon:
            break
    # hi only ever moves to flipping magnitudes, so a + sgn*hi*w flips
    candidate = a + sgn * hi * w
    projected = np.clip(candidate, cfg.a_min, cfg.a_max)
    if not np.array_equal(projected, candidate):
        evals += 1
        if model.predict(projected) == current:
            return Generation(None, hi, evals, "projection into feasible box undoes the flip")
    return Generation(projected - a, hi, evals)


class SurrogateEnsemble:
    """The attacker's ``L`` sub-models and their internal accuracies."""

    def __init__(self, cfg: AttackerConfig):
        self.cfg = cfg
        self.sub_models = [
            ScaledModel(
                make_classifier(kind, cfg.m, seed=derive_seed(cfg.seed, "submodel", l), **self._params(kind)),
                cfg.a_min,
                cfg.a_max,
            )
            for l, kind in enumerate(cfg.kinds)
        ]
        self.agreements = np.zeros(len(self.sub_models))
        self.i = 0
        self.dedicated_pilot = None
        if not any(sm.hyperplane() is not None for sm in self.sub_models):
            self.dedicated_pilot = ScaledModel(PassiveAggressive(cfg.m, C=cfg.pa_C, variant=1), cfg.a_min, cfg.a_max)

    def _params(self, kind):
        if kind in (ClassifierKind.PASSIVE_AGGRESSIVE_I.value, ClassifierKind.PASSIVE_AGGRESSIVE_II.value):
            return {"C": self.cfg.pa_C}
        if kind == ClassifierKind.MULTINOMIAL_NB.value:
            return {"bounds": (-1.0, 1.0)}
        return {}

    @property
    def accuracies(self) -> np.ndarray:
        return self.agreements / max(1, self.i)

    def pilot(self):
        """Index and model of the pilot (best hyperplane-capable sub-model)."""
        acc = self.accuracies
        best = None
        for l, sm in enumerate(self.sub_models):
            if sm.hyperplane() is not None and (best is None or acc[l] > acc[best]):
                best = l
        if best is None:
            return None, self.dedicated_pilot
        return best, self.sub_models[best]

    def learn(self, a_submitted, y: int) -> "SurrogateEnsemble":
        y = int(y)
        if y not in (-1, 1):
            raise ParameterError("decision must be -1 or +1")
        for l, sm in enumerate(self.sub_models):
            if sm.predict(a_submitted) == y:
                self.agreements[l] += 1
            sm.fit_one(a_submitted, y)
        if self.dedicated_pilot is not None:
            self.dedicated_pilot.fit_one(a_submitted, y)
        self.i += 1
        return self


class LEBAttacker:
    def __init__(self, cfg: AttackerConfig):
        self.cfg = cfg
        self.ensemble = SurrogateEnsemble(cfg)

    def step(self, a_true) -> AttackOutcome:
        a_true = np.asarray(a_true, dtype=np.float64)
        if a_true.shape != (self.cfg.m,):
            raise ParameterError(f"expected {self.cfg.m} attacker reports, got shape {a_true.shape}")
        acc = self.ensemble.accuracies
        l = evaluate(acc, self.cfg.alpha)
        if l is None:
            return AttackOutcome(False, None, None, a_true.copy(), reason="below alpha")
        _, pilot = self.ensemble.pilot()
        selected = self.ensemble.sub_models[l]
        current = selected.predict(a_true)
        gen = generate_adversarial(a_true, selected, pilot.hyperplane(), self.cfg, current=current)
        if gen.delta is None:
            return AttackOutcome(
                False, l, None, a_true.copy(), accuracy=float(acc[l]), reason=gen.reason, evaluations=gen.evaluations
            )
        submitted = a_true + gen.delta
        return AttackOutcome(
            True,
            l,
            gen.delta,
            submitted,
            surrogate_flip_ok=selected.predict(submitted) != current,
            accuracy=float(acc[l]),
            evaluations=gen.evaluations,
        )

    def learn(self, a_submitted, y: int) -> None:
        self.ensemble.learn(a_submitted, y)
