"""Suspicion scoring for the fusion center's defense step.

Each defense turns the current report vector (plus, for window-based
defenses, the recent report history) into a per-node raw score, squashed
to ``[0, 1]`` by ``min(1, raw / raw_cap)``. Defenses are split into a pure
``score`` that returns the raw scores together with any pending state
update, and ``commit`` which applies that update; the fusion center only
commits on real (non-counterfactual) decisions.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import CalibrationError

_TINY = 1e-12


class DefenseKind(str, Enum):
    OUTLIER = "Outlier"
    LOF = "LOF"
    EMPCOV = "EmpCov"
    ROBCOV = "RobCov"
    FZKNN = "FzKNN"
    DSND = "DSND"
    OCSVM = "OCSVM"
    TRUST = "Trust"
    NONE = "None"


def squash(raw, raw_cap: float) -> np.ndarray:
    raw = np.nan_to_num(np.asarray(raw, dtype=np.float64), nan=raw_cap, posinf=raw_cap, neginf=0.0)
    return np.clip(raw / raw_cap, 0.0, 1.0)


def window_features(window: np.ndarray) -> np.ndarray:
    """Per-node ``(mean, std, corr-with-median)`` over a ``(k, n)`` window.

    The correlation is taken against the slot-wise cross-sectional median;
    it is 0 whenever either series is constant.
    """
    window = np.asarray(window, dtype=np.float64)
    mean = window.mean(axis=0)
    centred = window - mean
    std = np.sqrt((centred * centred).mean(axis=0))
    med = np.median(window, axis=1)
    mc = med - med.mean()
    msd = np.sqrt(mc @ mc / len(mc))
    denom = std * msd
    cov = mc @ centred / len(mc)
    corr = np.where(denom > _TINY, cov / np.where(denom > _TINY, denom, 1.0), 0.0)
    return np.column_stack([mean, std, corr])


def training_windows(values: np.ndarray, width: int):
    """Sliding windows over the training prefix (half-overlapping)."""
    k = len(values)
    width = max(2, min(width, k))
    step = max(1, width // 2)
    for start in range(0, k - width + 1, step):
        yield values[start : start + width]


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    sq = (points * points).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def local_outlier_factor(points: np.ndarray, k: int = 5) -> np.ndarray:
    """Classic LOF (Breunig et al. 2000) using exactly ``k`` neighbours."""
    n = len(points)
    k = max(1, min(k, n - 1))
    d = pairwise_distances(points)
    np.fill_diagonal(d, np.inf)
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    kdist = d[np.arange(n)[:, None], nbrs][:, -1]
    reach = np.maximum(kdist[nbrs], d[np.arange(n)[:, None], nbrs])
    lrd = 1.0 / (reach.mean(axis=1) + _TINY)
    return lrd[nbrs].mean(axis=1) / lrd


class Defense:
    kind = DefenseKind.NONE
    raw_cap = 1.0
    uses_window = False

    def fit(self, values: np.ndarray, truth: np.ndarray, window: int) -> None:
        pass

    def score(self, x: np.ndarray, window: np.ndarray):
        """Return ``(raw_scores, pending)``; must not mutate ``self``."""
        return np.zeros(len(x)), None

    def commit(self, pending) -> None:
        pass

    def suspicion(self, x, window):
        raw, pending = self.score(x, window)
        return squash(raw, self.raw_cap), pending


class NoDefense(Defense):
    pass


class OutlierDefense(Defense):
    """Robust z-score against the cross-sectional median, EWMA-smoothed."""

    kind = DefenseKind.OUTLIER
    raw_cap = 3.0

    def __init__(self, smoothing: float = 0.1):
        self.smoothing = smoothing
        self.ewma = None

    def fit(self, values, truth, window):
        self.ewma = np.zeros(values.shape[1])

    def score(self, x, window):
        med = np.median(x)
        mad = np.median(np.abs(x - med))
        z = np.abs(x - med) / max(mad, 1e-9)
        new = (1.0 - self.smoothing) * self.ewma + self.smoothing * z
        return new, new

    def commit(self, pending):
        self.ewma = pending


class _FeatureDefense(Defense):
    """Base for defenses acting on standardized window features."""

    uses_window = True

    def fit(self, values, truth, window):
        feats = [window_features(w) for w in training_windows(values, window)]
        stacked = np.vstack(feats)
        scale = stacked.std(axis=0)
        self.feature_scale = np.where(scale > _TINY, scale, 1.0)
        self.training_features = [f / self.feature_scale for f in feats]
        self._fit_features(self.training_features)

    def _fit_features(self, feats):
        pass

    def points(self, window):
        return window_features(window) / self.feature_scale


class LofDefense(_FeatureDefense):
    kind = DefenseKind.LOF
    raw_cap = 2.0

    def __init__(self, k: int = 5):
        self.k = k

    def score(self, x, window):
        return np.maximum(0.0, local_outlier_factor(self.points(window), self.k) - 1.0), None


class FuzzyKnnDefense(_FeatureDefense):
    """Fuzzy membership to the robust centroid of the node feature cloud."""

    kind = DefenseKind.FZKNN
    raw_cap = 1.0

    def score(self, x, window):
        p = self.points(window)
        centroid = np.median(p, axis=0)
        d = np.linalg.norm(p - centroid, axis=1)
        d_med = np.median(d)
        if d_med <= _TINY:
            mu = np.where(d <= _TINY, 1.0, 0.0)
        else:
            mu = 1.0 / (1.0 + (d / d_med) ** 2)
        return 1.0 - mu, None


class DsndDefense(_FeatureDefense):
    """Double-sided neighbour distance: clones and far-away nodes are suspect."""

    kind = DefenseKind.DSND
    raw_cap = 1.0

    def _fit_features(self, feats):
        dists = []
        for f in feats:
            d = pairwise_distances(f)
            dists.append(d[np.triu_indices(len(f), 1)])
        dists = np.concatenate(dists) if dists else np.array([1.0])
        self.t_low = max(float(np.percentile(dists, 5)), _TINY)
        self.t_high = max(float(np.percentile(dists, 95)), _TINY)

    def score(self, x, window):
        p = self.points(window)
        d = pairwise_distances(p)
        np.fill_diagonal(d, np.inf)
        d_near = d.min(axis=1)
        d_far = np.linalg.norm(p - np.median(p, axis=0), axis=1)
        raw = np.maximum.reduce(
            [(self.t_low - d_near) / self.t_low, (d_far - self.t_high) / self.t_high, np.zeros(len(p))]
        )
        return raw, None


class SvddDefense(_FeatureDefense):
    """One-class boundary as a hypersphere around the training feature median."""

    kind = DefenseKind.OCSVM
    raw_cap = 2.0

    def _fit_features(self, feats):
        pts = np.vstack(feats)
        self.center = np.median(pts, axis=0)
        self.radius = max(float(np.percentile(np.linalg.norm(pts - self.center, axis=1), 95)), _TINY)

    def score(self, x, window):
        d = np.linalg.norm(self.points(window) - self.center, axis=1)
        return np.maximum(0.0, d / self.radius - 1.0), None


def _inv_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return (vecs / np.sqrt(np.maximum(vals, _TINY))) @ vecs.T


class EmpiricalCovarianceDefense(Defense):
    """Whitened residual against the nearest class-conditional training mean.

    The covariance is the pooled within-class covariance of the training
    reports plus a ``ridge * I`` term; the per-node raw score is the squared
    component of the whitened residual.
    """

    kind = DefenseKind.EMPCOV
    raw_cap = 9.0

    def __init__(self, ridge: float = 1e-3):
        self.ridge = ridge

    def _fit_moments(self, values, truth):
        means = {}
        resid = []
        for c in (-1, 1):
            rows = values[truth == c]
            if len(rows) == 0:
                raise CalibrationError("covariance defense needs both channel states in training")
            means[c] = rows.mean(axis=0)
            resid.append(rows - means[c])
        resid = np.vstack(resid)
        cov = resid.T @ resid / max(1, len(resid) - 2) + self.ridge * np.eye(values.shape[1])
        return means, cov

    def fit(self, values, truth, window):
        self.set_moments(*self._fit_moments(values, truth))

    def set_moments(self, means, cov):
        self.means = means
        self.cov = cov
        self.whitener = _inv_sqrt(cov)

    def whitened_residual(self, x):
        best = None
        for c in (-1, 1):
            z = self.whitener @ (x - self.means[c])
            if best is None or z @ z < best @ best:
                best = z
        return best

    def score(self, x, window):
        z = self.whitened_residual(x)
        return z * z, None


class RobustCovarianceDefense(EmpiricalCovarianceDefense):
    """EmpCov refit after trimming the 25% most outlying training rows, 3 times."""

    kind = DefenseKind.ROBCOV

    def __init__(self, ridge: float = 1e-3, trim: float = 0.25, iterations: int = 3):
        super().__init__(ridge)
        self.trim = trim
        self.iterations = iterations

    def fit(self, values, truth, window):
        keep = np.ones(len(values), dtype=bool)
        means, cov = self._fit_moments(values, truth)
        for _ in range(self.iterations):
            w = _inv_sqrt(cov)
            centre = np.where(truth[:, None] > 0, means[1], means[-1])
            z = (values - centre) @ w.T
            d2 = (z * z).sum(axis=1)
            keep = d2 <= np.quantile(d2, 1.0 - self.trim)
            if len(np.unique(truth[keep])) < 2:
                break
            means, cov = self._fit_moments(values[keep], truth[keep])
        self.set_moments(means, cov)


class TrustDefense(Defense):
    """Vote-agreement trust; weights equal the trust values."""

    kind = DefenseKind.TRUST

    def __init__(self, rho: float = 0.05):
        self.rho = rho
        self.trust = None

    def fit(self, values, truth, window):
        self.trust = np.ones(values.shape[1])

    def score(self, x, window):
        return 1.0 - self.trust, None

    def update(self, votes: np.ndarray, decision: int, frozen: np.ndarray | None = None) -> None:
        target = (votes == decision).astype(np.float64)
        new = (1.0 - self.rho) * self.trust + self.rho * target
        if frozen is not None:
            new = np.where(frozen, self.trust, new)
        self.trust = new


def make_defense(kind) -> Defense:
    kind = DefenseKind(kind)
    return {
        DefenseKind.NONE: NoDefense,
        DefenseKind.OUTLIER: OutlierDefense,
        DefenseKind.LOF: LofDefense,
        DefenseKind.EMPCOV: EmpiricalCovarianceDefense,
        DefenseKind.ROBCOV: RobustCovarianceDefense,
        DefenseKind.FZKNN: FuzzyKnnDefense,
        DefenseKind.DSND: DsndDefense,
        DefenseKind.OCSVM: SvddDefense,
        DefenseKind.TRUST: TrustDefense,
    }[kind]()
