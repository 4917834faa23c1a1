"""Per-timeslot duel loop, metrics and parameter sweeps.

A scenario calibrates the fusion center on the attack-free prefix of a
trace and then plays the evaluation slots: the attacker (controlling nodes
``0..m-1``) sees its truthful reports and submits possibly falsified ones,
the fusion center decides, the attacker learns from the announced
decision, and the influence-limiting policy (if enabled) refreshes its
caps on its cadence.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attacker import AttackerConfig, LEBAttacker
from .defenses import DefenseKind
from .errors import ConfigError, ParameterError
from .fusion import FusionCenter, FusionConfig, FusionRuleKind
from .influence import InfluenceLimiter, PolicyParams
from .learners import ALL_KINDS
from .rng import derive_seed
from .trace import TraceDataset, TraceParams, load_trace_csv, synthetic_trace

SCHEMA_VERSION = 1
SWEEP_AXES = ("alpha", "m", "c1", "c2", "eta")

# Scenario trace: moderate SNR with strong per-node bias and no drift.
SCENARIO_TRACE = {
    "mu_busy_dbm": -83.0,
    "sigma_min_dbm": 4.0,
    "sigma_max_dbm": 8.0,
    "bias_sd_dbm": 6.0,
    "drift_sd_dbm": 0.0,
}


def scenario_trace_params(**overrides) -> TraceParams:
    return TraceParams(**{**SCENARIO_TRACE, **overrides})


@dataclass
class AttackerSettings:
    alpha: float = 0.85
    epsilon: float = 0.01
    d_margin: Optional[float] = None
    kinds: tuple = tuple(k.value for k in ALL_KINDS)
    pa_C: float = 1.0


@dataclass
class ScenarioConfig:
    m: int = 8
    defense: str = DefenseKind.FZKNN.value
    rule: str = FusionRuleKind.LOGISTIC_REGRESSION.value
    eval_len: int = 3000
    seed: int = 0
    trace: TraceParams = field(default_factory=scenario_trace_params)
    trace_path: Optional[str] = None
    attacker: AttackerSettings = field(default_factory=AttackerSettings)
    policy: Optional[PolicyParams] = None
    defense_window: int = 64

    @property
    def n(self) -> int:
        return self.trace.n_nodes

    def validate(self, n: Optional[int] = None) -> "ScenarioConfig":
        n = self.n if n is None else n
        try:
            DefenseKind(self.defense)
            FusionRuleKind(self.rule)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 <= self.m < n:
            raise ConfigError(f"m must satisfy 0 <= m < n = {n}, got {self.m}")
        if self.eval_len < 1:
            raise ConfigError("eval_len must be >= 1")
        if self.trace_path is None and not 0 < self.trace.train_len:
            raise ConfigError("trace.train_len must be positive")
        if self.policy is not None:
            try:
                self.policy.validate(n)
            except ParameterError as exc:
                raise ConfigError(f"policy: {exc}") from None
        return self

    # -- JSON ------------------------------------------------------------

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("trace", "attacker", "policy"):
                v = None if v is None else asdict(v)
                if v is not None:
                    v = {k: list(x) if isinstance(x, tuple) else x for k, x in v.items()}
            d[f.name] = v
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            if "trace" in d:
                t = dict(d["trace"])
                if "bounds" in t:
                    t["bounds"] = tuple(t["bounds"])
                d["trace"] = scenario_trace_params(**t)
            if "attacker" in d:
                a = dict(d["attacker"])
                if "kinds" in a:
                    a["kinds"] = tuple(a["kinds"])
                d["attacker"] = AttackerSettings(**a)
            if d.get("policy") is not None:
                d["policy"] = PolicyParams(**d["policy"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad config field: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_json(text)

    def replace(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        for k, v in changes.items():
            d[k] = v
        return ScenarioConfig.from_dict(d)


@dataclass
class TimeslotRecord:
    slot: int
    truth: int
    truthful: np.ndarray
    submitted: np.ndarray
    decision: int
    counterfactual: int
    attempted: bool
    model: Optional[int]
    accuracy: float
    delta_norm: float
    surrogate_flip_ok: bool
    weights: np.ndarray
    caps_active: bool


@dataclass
class MetricsSummary:
    attack_success_ratio: float
    overall_disruption_ratio: float
    attempts: int
    successes: int
    elapsed: int
    fusion_error_rate: float
    counterfactual_flip_rate: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    """Compact per-slot arrays of a run; enough to recompute the metrics."""

    truth: np.ndarray
    decision: np.ndarray
    counterfactual: np.ndarray
    attempted: np.ndarray
    m: int


def compute_metrics(records, m: Optional[int] = None) -> MetricsSummary:
    """Metrics of a run from its records (or a :class:`Trajectory`).

    A success is an attempted slot whose decision contradicts the ground
    truth. Without malicious nodes (``m == 0``) every wrong decision counts
    as disruption, so the disruption ratio equals the plain error rate;
    record lists carry no ``m``, so pass ``m=0`` for attacker-free runs.
    """
    if isinstance(records, Trajectory):
        traj = records
    else:
        records = list(records)
        if not records:
            raise ParameterError("records must be non-empty")
        traj = Trajectory(
            np.array([r.truth for r in records]),
            np.array([r.decision for r in records]),
            np.array([r.counterfactual for r in records]),
            np.array([r.attempted for r in records], dtype=bool),
            1 if m is None else m,
        )
    if m is not None:
        traj.m = m
    elapsed = len(traj.truth)
    if elapsed == 0:
        raise ParameterError("records must be non-empty")
    wrong = traj.decision != traj.truth
    attempts = int(traj.attempted.sum())
    successes = int((traj.attempted & wrong).sum())
    disrupted = int(wrong.sum()) if traj.m == 0 else successes
    return MetricsSummary(
        attack_success_ratio=successes / attempts if attempts else 0.0,
        overall_disruption_ratio=disrupted / elapsed,
        attempts=attempts,
        successes=successes,
        elapsed=elapsed,
        fusion_error_rate=float(np.mean(traj.counterfactual != traj.truth)),
        counterfactual_flip_rate=float(np.mean(traj.decision != traj.counterfactual)),
    )


def build_trace(cfg: ScenarioConfig) -> TraceDataset:
    if cfg.trace_path is not None:
        return load_trace_csv(cfg.trace_path, train_len=cfg.trace.train_len)
    params = TraceParams(**{**asdict(cfg.trace), "length": cfg.trace.train_len + cfg.eval_len})
    return synthetic_trace(params, derive_seed(cfg.seed, "trace"))


def run_scenario(cfg: ScenarioConfig, trace: Optional[TraceDataset] = None, keep_records: bool = True, audit=None):
    """Play one scenario; returns ``(records, summary)``.

    With ``keep_records=False`` the first element is a :class:`Trajectory`
    instead of the full record list. Passing a list as ``audit`` collects
    the policy's audit rows into it.
    """
    if trace is None:
        trace = build_trace(cfg)
    n = trace.n_nodes
    cfg.validate(n)
    start = trace.train_len
    stop = min(len(trace), start + cfg.eval_len)
    if stop <= start:
        raise ConfigError("trace has no evaluation slots after the calibration prefix")

    fusion = FusionCenter(
        FusionConfig(
            defense=cfg.defense,
            rule=cfg.rule,
            window=cfg.defense_window,
            seed=derive_seed(cfg.seed, "fusion"),
            bounds=trace.bounds,
        )
    ).calibrate(trace)
    m = cfg.m
    attacker = None
    if m > 0:
        a = cfg.attacker
        attacker = LEBAttacker(
            AttackerConfig(
                m=m,
                alpha=a.alpha,
                epsilon=a.epsilon,
                d_margin=a.d_margin,
                a_min=np.full(m, trace.bounds[0]),
                a_max=np.full(m, trace.bounds[1]),
                kinds=a.kinds,
                pa_C=a.pa_C,
                seed=derive_seed(cfg.seed, "attacker"),
            )
        )
    limiter = None
    if cfg.policy is not None:
        limiter = InfluenceLimiter(cfg.policy, trace.values[: trace.train_len], trace.bounds)
        limiter.keep_audit = audit is not None

    length = stop - start
    truth = trace.truth[start:stop].copy()
    decisions = np.empty(length, dtype=np.int64)
    counterfactual = np.empty(length, dtype=np.int64)
    attempted = np.zeros(length, dtype=bool)
    records = [] if keep_records else None

    for k, i in enumerate(range(start, stop)):
        x_true = trace.values[i]
        x = x_true
        outcome = None
        if attacker is not None:
            outcome = attacker.step(x_true[:m])
            if outcome.attempted:
                x = x_true.copy()
                x[:m] = outcome.submitted
        caps = None
        if limiter is not None and limiter.caps.active:
            caps = limiter.caps.caps
        y, used, _ = fusion.decide(x, caps)
        cf = y if x is x_true else fusion.decide_counterfactual(x_true)
        if attacker is not None:
            attacker.learn(x[:m], y)
        if limiter is not None:
            limiter.observe(x, i, fusion)
        decisions[k] = y
        counterfactual[k] = cf
        attempted[k] = outcome is not None and outcome.attempted
        if keep_records:
            records.append(
                TimeslotRecord(
                    slot=i,
                    truth=int(truth[k]),
                    truthful=x_true.copy(),
                    submitted=np.array(x, copy=True),
                    decision=y,
                    counterfactual=cf,
                    attempted=bool(attempted[k]),
                    model=None if outcome is None else outcome.selected_model,
                    accuracy=float("nan") if outcome is None else outcome.accuracy,
                    delta_norm=0.0 if outcome is None else outcome.delta_norm,
                    surrogate_flip_ok=bool(outcome is not None and outcome.surrogate_flip_ok),
                    weights=np.array(used, copy=True),
                    caps_active=caps is not None,
                )
            )
    if limiter is not None and audit is not None:
        audit.extend(limiter.audit)
    traj = Trajectory(truth, decisions, counterfactual, attempted, m)
    summary = compute_metrics(traj)
    return (records if keep_records else traj), summary


# -- outputs -------------------------------------------------------------


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    return f"{v:.6f}".rstrip("0").rstrip(".") if isinstance(v, float) else str(v)


def record_columns(n: int) -> list[str]:
    return (
        ["slot", "truth", "decision", "counterfactual", "attempted", "model", "accuracy", "delta_norm"]
        + ["surrogate_flip_ok", "caps_active"]
        + [f"x_{j}" for j in range(n)]
        + [f"s_{j}" for j in range(n)]
        + [f"w_{j}" for j in range(n)]
    )


def dumps_records(records: Sequence[TimeslotRecord]) -> str:
    buf = io.StringIO()
    n = len(records[0].truthful) if records else 0
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(record_columns(n))
    for r in records:
        wr.writerow(
            [r.slot, r.truth, r.decision, r.counterfactual, int(r.attempted), "" if r.model is None else r.model]
            + [_fmt(r.accuracy), _fmt(r.delta_norm), int(r.surrogate_flip_ok), int(r.caps_active)]
            + [_fmt(float(v)) for v in r.truthful]
            + [_fmt(float(v)) for v in r.submitted]
            + [_fmt(float(v)) for v in r.weights]
        )
    return buf.getvalue()


def summary_document(cfg: ScenarioConfig, summary: MetricsSummary) -> dict:
    return {"metrics": summary.to_dict(), "seed": cfg.seed, "config": cfg.to_dict()}


def dumps_summary(cfg: ScenarioConfig, summary: MetricsSummary) -> str:
    return json.dumps(summary_document(cfg, summary), indent=2, sort_keys=True) + "\n"


# -- sweeps --------------------------------------------------------------


def apply_axis(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with one sweep axis set; validates the value."""
    if axis not in SWEEP_AXES:
        raise ParameterError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    d = cfg.to_dict()
    if axis == "alpha":
        v = float(value)
        if not 0.0 < v < 1.0:
            raise ParameterError(f"alpha value {value} outside (0, 1)")
        d["attacker"]["alpha"] = v
    elif axis == "m":
        v = int(value)
        if v != value or not 0 <= v < cfg.n:
            raise ParameterError(f"m value {value} outside [0, {cfg.n})")
        d["m"] = v
    else:
        policy = d["policy"] or asdict(PolicyParams())
        if axis == "eta":
            v = int(value)
            if v != value or not 1 <= v <= cfg.n:
                raise ParameterError(f"eta value {value} outside [1, {cfg.n}]")
        else:
            v = float(value)
            if (axis == "c1" and not v > 0) or (axis == "c2" and not v >= 0):
                raise ParameterError(f"{axis} value {value} out of domain")
        policy[axis] = v
        d["policy"] = policy
    return ScenarioConfig.from_dict(d)


def sweep_seed(base_seed: int, axis: str, value, repeat: int, paired: bool = False) -> int:
    """Seed of one sweep run.

    Unpaired runs hash ``(base_seed, axis, value, repeat)``; paired runs drop
    the value so every axis value replays the same traces.
    """
    if paired:
        return derive_seed(base_seed, axis, repeat)
    return derive_seed(base_seed, axis, repr(value), repeat)


@dataclass
class SweepRow:
    axis: str
    value: float
    repeats: int
    asr_mean: float
    asr_std: float
    odr_mean: float
    odr_std: float
    attempts_mean: float
    successes_mean: float
    error_rate_mean: float
    runs: list = field(default_factory=list, repr=False)


def run_summary(cfg: ScenarioConfig) -> MetricsSummary:
    return run_scenario(cfg, keep_records=False)[1]


def run_many(cfgs: Sequence[ScenarioConfig], runner=None, workers: int = 1) -> list:
    """Run independent scenarios, in worker processes when ``workers > 1``."""
    runner = run_summary if runner is None else runner
    if workers <= 1 or len(cfgs) <= 1:
        return [runner(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(runner, cfgs))


def sweep(
    base: ScenarioConfig,
    axis: str,
    values,
    repeats: int = 1,
    paired: bool = False,
    runner=None,
    workers: int = 1,
) -> list[SweepRow]:
    """One summary row per axis value; ``runner`` defaults to :func:`run_summary`.

    Runs are independent, so with ``workers > 1`` they are spread over
    worker processes (``runner`` must then be picklable).
    """
    values = list(values)
    if not values:
        raise ParameterError("sweep needs at least one value")
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    cfgs = [apply_axis(base, axis, v) for v in values]
    jobs = [cfg.replace(seed=sweep_seed(base.seed, axis, v, r, paired)) for v, cfg in zip(values, cfgs) for r in range(repeats)]
    results = run_many(jobs, runner, workers)
    rows = []
    for i, v in enumerate(values):
        runs = results[i * repeats : (i + 1) * repeats]
        asr = np.array([s.attack_success_ratio for s in runs])
        odr = np.array([s.overall_disruption_ratio for s in runs])
        rows.append(
            SweepRow(
                axis=axis,
                value=v,
                repeats=repeats,
                asr_mean=float(asr.mean()),
                asr_std=float(asr.std(ddof=1)) if repeats > 1 else 0.0,
                odr_mean=float(odr.mean()),
                odr_std=float(odr.std(ddof=1)) if repeats > 1 else 0.0,
                attempts_mean=float(np.mean([s.attempts for s in runs])),
                successes_mean=float(np.mean([s.successes for s in runs])),
                error_rate_mean=float(np.mean([s.fusion_error_rate for s in runs])),
                runs=runs,
            )
        )
    return rows


SWEEP_COLUMNS = (
    "axis",
    "value",
    "repeats",
    "asr_mean",
    "asr_std",
    "odr_mean",
    "odr_std",
    "attempts_mean",
    "successes_mean",
    "error_rate_mean",
)


def dumps_sweep(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SWEEP_COLUMNS)
    for row in rows:
        wr.writerow([_fmt(getattr(row, c)) if isinstance(getattr(row, c), float) else getattr(row, c) for c in SWEEP_COLUMNS])
    return buf.getvalue()
