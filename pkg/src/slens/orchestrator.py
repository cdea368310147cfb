"""Analysis protocol: discovery, per-feature stub/fake probes, confirmation.

For an application workload the orchestrator runs, per replica, one
discovery run, one stub run and one fake run per observed feature, and one
final combined confirmation run: exactly 2 + 2*s workload executions per
replica for s discovered features.  Replica results merge conservatively (a
feature probe "works" only if every replica succeeded).  Optional baseline
runs feed regression detection on throughput and resource metrics.
"""

from __future__ import annotations

import concurrent.futures
import datetime
import logging
import math
import platform
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from . import SlensError, __version__
from .config import DEFAULT_TABLES, InterposerTables
from .harness import (
    AppSpec,
    Limits,
    REASON_TRACER_FAULT,
    WorkloadOutcome,
    run_workload,
)
from .interposer import (
    ALLOW,
    STUB,
    Action,
    FeatureId,
    Policy,
    RunTrace,
    TracerFault,
    fake,
)
from . import syscalls

log = logging.getLogger(__name__)

MODE_STUB = "stub"
MODE_FAKE = "fake"

CLASS_REQUIRED = "required"
CLASS_STUB_ONLY = "stub_only"
CLASS_FAKE_ONLY = "fake_only"
CLASS_ANY = "any"

VERDICT_WORKS = "works"
VERDICT_BREAKS = "breaks"

PROFILE_SCHEMA = 1


class BaselineFailure(SlensError):
    """The workload does not pass even unmodified; nothing to classify."""


def feature_label(f: FeatureId) -> str:
    """Human-readable feature name for logs and tables."""
    name = syscalls.nr_to_name(f.syscall_nr) or f"syscall_{f.syscall_nr}"
    if f.subfeature is not None:
        return f"{name}[{f.subfeature:#x}]"
    if f.pseudofile is not None:
        return f"{name}({f.pseudofile})"
    return name


@dataclass(frozen=True)
class AnalysisConfig:
    """Knobs of one analysis.

    ``perf_runs`` extra allow-all runs collect baseline statistics for
    regression detection; 0 disables it.  ``timeout`` of None applies the
    default rule max(10 s, 3 x discovery duration).
    """

    replicas: int = 3
    parallelism: int = 1
    perf_runs: int = 10
    subfeatures: bool = False
    pseudofiles: bool = False
    perf_margin: float = 0.03
    timeout: float | None = None
    kill_grace: float = 2.0
    sample_period: float = 0.1

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not 1 <= self.parallelism <= self.replicas:
            raise ValueError("parallelism must be in [1, replicas]")
        if self.perf_margin <= 0:
            raise ValueError("perf_margin must be > 0")
        if self.perf_runs < 0:
            raise ValueError("perf_runs must be >= 0")


@dataclass(frozen=True)
class BaselineStats:
    """Metric samples from successful allow-all runs."""

    perf: tuple[float, ...]
    rss: tuple[int, ...]
    fds: tuple[int, ...]
    durations: tuple[float, ...]

    @staticmethod
    def from_outcomes(outcomes: Sequence[WorkloadOutcome]) -> "BaselineStats":
        return BaselineStats(
            perf=tuple(o.perf_metric for o in outcomes if o.perf_metric is not None),
            rss=tuple(o.peak_rss for o in outcomes),
            fds=tuple(o.peak_fds for o in outcomes),
            durations=tuple(o.duration for o in outcomes),
        )


def _pooled_std(a: Sequence[float], b: Sequence[float]) -> float:
    var_a = statistics.variance(a) if len(a) > 1 else 0.0
    var_b = statistics.variance(b) if len(b) > 1 else 0.0
    df = len(a) + len(b) - 2
    if df <= 0:
        return math.sqrt(var_a)
    return math.sqrt(((len(a) - 1) * var_a + (len(b) - 1) * var_b) / df)


def detect_regressions(baseline: BaselineStats,
                       probe_outcomes: Sequence[WorkloadOutcome],
                       margin: float) -> dict[str, float]:
    """Flag probe metrics deviating from the baseline.

    A metric is flagged when the relative difference of means exceeds
    ``margin`` AND the means differ by more than twice the pooled standard
    deviation.  Returns {metric: signed relative delta} for flagged metrics
    among {"perf", "rss", "fds"}.  The perf check is skipped when either
    side has no metric samples.
    """
    flags: dict[str, float] = {}
    series = {
        "perf": (baseline.perf,
                 [o.perf_metric for o in probe_outcomes if o.perf_metric is not None]),
        "rss": (baseline.rss, [o.peak_rss for o in probe_outcomes]),
        "fds": (baseline.fds, [o.peak_fds for o in probe_outcomes]),
    }
    for metric, (base, probe) in series.items():
        if not base or not probe:
            continue
        mean_base = statistics.fmean(base)
        mean_probe = statistics.fmean(probe)
        if mean_base == 0:
            continue
        delta = (mean_probe - mean_base) / mean_base
        if abs(delta) <= margin:
            continue
        if abs(mean_probe - mean_base) > 2 * _pooled_std(base, probe):
            flags[metric] = delta
    return flags


@dataclass
class ProbeResult:
    """Replicated outcomes of probing one feature in one mode."""

    feature: FeatureId
    mode: str
    outcomes: list[WorkloadOutcome]
    verdict: str  # works | breaks
    regression_flags: dict[str, float] = field(default_factory=dict)

    @property
    def works(self) -> bool:
        return self.verdict == VERDICT_WORKS


@dataclass
class AppProfile:
    """Per-application classification of every observed feature."""

    app: str
    workload_hash: str
    observed: tuple[FeatureId, ...]
    classes: dict[FeatureId, str]
    regressions: dict[tuple[FeatureId, str], dict[str, float]]
    confirmed: bool
    metadata: dict

    def __post_init__(self):
        if set(self.classes) != set(self.observed):
            raise ValueError("classes' domain must equal the observed feature set")
        bad = [c for c in self.classes.values()
               if c not in (CLASS_REQUIRED, CLASS_STUB_ONLY, CLASS_FAKE_ONLY, CLASS_ANY)]
        if bad:
            raise ValueError(f"unknown classes: {bad}")

    def features_of_class(self, cls: str) -> tuple[FeatureId, ...]:
        return tuple(sorted((f for f, c in self.classes.items() if c == cls),
                            key=FeatureId.sort_key))

    def traced_syscalls(self) -> frozenset[int]:
        return frozenset(f.syscall_nr for f in self.observed)

    def required_syscalls(self) -> frozenset[int]:
        return frozenset(f.syscall_nr for f, c in self.classes.items()
                         if c == CLASS_REQUIRED)

    def to_json(self) -> dict:
        ordered = sorted(self.observed, key=FeatureId.sort_key)
        return {
            "schema": PROFILE_SCHEMA,
            "app": self.app,
            "workload_hash": self.workload_hash,
            "observed": [f.to_json() for f in ordered],
            "classes": [
                {"feature": f.to_json(), "class": self.classes[f]} for f in ordered
            ],
            "regressions": [
                {"feature": f.to_json(), "mode": mode,
                 "flags": {k: flags[k] for k in sorted(flags)}}
                for (f, mode), flags in sorted(
                    self.regressions.items(),
                    key=lambda kv: (kv[0][0].sort_key(), kv[0][1]))
            ],
            "confirmed": self.confirmed,
            "metadata": self.metadata,
        }

    @staticmethod
    def from_json(d: Mapping) -> "AppProfile":
        if d.get("schema") != PROFILE_SCHEMA:
            raise ValueError(f"unsupported profile schema: {d.get('schema')!r}")
        return AppProfile(
            app=d["app"],
            workload_hash=d["workload_hash"],
            observed=tuple(FeatureId.from_json(f) for f in d["observed"]),
            classes={FeatureId.from_json(e["feature"]): e["class"]
                     for e in d["classes"]},
            regressions={
                (FeatureId.from_json(e["feature"]), e["mode"]): dict(e["flags"])
                for e in d.get("regressions", ())
            },
            confirmed=bool(d["confirmed"]),
            metadata=dict(d.get("metadata", {})),
        )


def probe_policy(feature: FeatureId, mode: str,
                 tables: InterposerTables = DEFAULT_TABLES) -> Policy:
    """Allow-all policy except ``feature`` stubbed or faked."""
    if mode == MODE_STUB:
        return Policy.single(feature, STUB)
    if mode == MODE_FAKE:
        return Policy.single(feature, fake(tables.fake_value_for(feature.syscall_nr)))
    raise ValueError(f"unknown probe mode {mode!r}")


def confirmation_policy(classes: Mapping[FeatureId, str],
                        tables: InterposerTables = DEFAULT_TABLES) -> Policy:
    """Combined policy: stub everything stub-capable, fake the fake_only rest.

    Stubs are preferred for features that tolerate both modes, as the more
    honest failure mode.
    """
    overrides: dict[FeatureId, Action] = {}
    for f, cls in classes.items():
        if cls in (CLASS_STUB_ONLY, CLASS_ANY):
            overrides[f] = STUB
        elif cls == CLASS_FAKE_ONLY:
            overrides[f] = fake(tables.fake_value_for(f.syscall_nr))
    return Policy(overrides=overrides)


def _worker_run(spec: AppSpec, policy: Policy, limits: Limits,
                tables: InterposerTables):
    return run_workload(spec, policy, limits, tables)


class Orchestrator:
    """Runs the analysis protocol for one application spec.

    ``executions`` counts every workload execution performed through this
    object, including baseline runs for regression detection.
    """

    def __init__(self, spec: AppSpec, config: AnalysisConfig = AnalysisConfig(),
                 tables: InterposerTables = DEFAULT_TABLES):
        spec.validate()
        self.spec = spec
        self.config = config
        self.tables = tables.restricted(subfeatures=config.subfeatures,
                                        pseudofiles=config.pseudofiles)
        self.executions = 0
        self.baseline: BaselineStats | None = None
        self.baseline_duration: float | None = None
        self._discovered: tuple[FeatureId, ...] | None = None

    # -- plumbing

    def _limits(self) -> Limits:
        timeout = self.config.timeout
        if timeout is None:
            if self.baseline_duration is not None:
                timeout = max(10.0, 3.0 * self.baseline_duration)
            else:
                timeout = 10.0
        return Limits(timeout=timeout, kill_grace=self.config.kill_grace,
                      sample_period=self.config.sample_period)

    def _run_one(self, policy: Policy, replica: int, label: str
                 ) -> tuple[WorkloadOutcome, RunTrace]:
        t0 = time.monotonic()
        outcome, trace = run_workload(self.spec, policy, self._limits(), self.tables)
        self.executions += 1
        log.info("run app=%s replica=%d what=%s result=%s duration=%.3fs",
                 self.spec.name, replica, label, outcome.reason,
                 time.monotonic() - t0)
        return outcome, trace

    def _run_replicas(self, policy: Policy, label: str
                      ) -> list[tuple[WorkloadOutcome, RunTrace]]:
        """Run ``replicas`` executions, at most ``parallelism`` at a time.

        A replica hitting a tracer fault is re-run once; a second fault
        fails the analysis.
        """
        r, p = self.config.replicas, self.config.parallelism
        results: list[tuple[WorkloadOutcome, RunTrace]] = []
        if p == 1:
            for i in range(r):
                results.append(self._run_one(policy, i, label))
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=p) as pool:
                futures = [
                    pool.submit(_worker_run, self.spec, policy, self._limits(), self.tables)
                    for _ in range(r)
                ]
                for i, fut in enumerate(futures):
                    outcome, trace = fut.result()
                    self.executions += 1
                    log.info("run app=%s replica=%d what=%s result=%s",
                             self.spec.name, i, label, outcome.reason)
                    results.append((outcome, trace))
        for i, (outcome, trace) in enumerate(results):
            if outcome.reason == REASON_TRACER_FAULT:
                log.warning("replica %d of %s hit a tracer fault; re-running once",
                            i, label)
                retry_outcome, retry_trace = self._run_one(policy, i, label + "/retry")
                if retry_outcome.reason == REASON_TRACER_FAULT:
                    raise TracerFault(
                        f"persistent tracer fault while running {label} for {self.spec.name}")
                results[i] = (retry_outcome, retry_trace)
        return results

    # -- protocol operations

    def discover(self) -> tuple[FeatureId, ...]:
        """Allow-all discovery: one run per replica, feature sets merged.

        Also records the baseline duration (for the default timeout rule)
        and, when ``perf_runs`` > 0, baseline metric statistics from that
        many additional allow-all runs.  Raises BaselineFailure when any
        allow-all run fails.
        """
        results = self._run_replicas(Policy.allow_all(), "discovery")
        failures = [o for o, _ in results if not o.success]
        if failures:
            raise BaselineFailure(
                f"workload fails unmodified ({failures[0].reason}); nothing to classify")
        self.baseline_duration = max(o.duration for o, _ in results)
        features: set[FeatureId] = set()
        for _, trace in results:
            features.update(trace.observed)
        self._discovered = tuple(sorted(features, key=FeatureId.sort_key))

        if self.config.perf_runs > 0:
            outcomes = [o for o, _ in results]
            while len(outcomes) < self.config.replicas + self.config.perf_runs:
                outcome, _ = self._run_one(Policy.allow_all(),
                                           len(outcomes), "baseline")
                if not outcome.success:
                    raise BaselineFailure(
                        f"baseline run failed ({outcome.reason}); workload is unreliable")
                outcomes.append(outcome)
            # Statistics come from the dedicated baseline runs only, so the
            # sample size is exactly perf_runs.
            self.baseline = BaselineStats.from_outcomes(outcomes[-self.config.perf_runs:])
        return self._discovered

    def probe_feature(self, feature: FeatureId, mode: str) -> ProbeResult:
        """Probe one feature in stub or fake mode over all replicas."""
        if self._discovered is not None and feature not in self._discovered:
            raise ValueError(f"feature {feature_label(feature)} was not discovered")
        policy = probe_policy(feature, mode, self.tables)
        label = f"{mode}:{feature_label(feature)}"
        results = self._run_replicas(policy, label)
        outcomes = [o for o, _ in results]
        works = all(o.success for o in outcomes)
        result = ProbeResult(
            feature=feature,
            mode=mode,
            outcomes=outcomes,
            verdict=VERDICT_WORKS if works else VERDICT_BREAKS,
        )
        if works and self.baseline is not None:
            result.regression_flags = detect_regressions(
                self.baseline, outcomes, self.config.perf_margin)
        log.info("probe app=%s feature=%s mode=%s verdict=%s flags=%s",
                 self.spec.name, feature_label(feature), mode, result.verdict,
                 result.regression_flags or "-")
        return result

    def probe_custom(self, policy: Policy) -> WorkloadOutcome:
        """Single run under an arbitrary policy, for manual culprit hunting."""
        outcome, _ = self._run_one(policy, 0, "custom")
        return outcome

    def full_analysis(self, db_root: str | None = None,
                      provenance: Mapping[str, str] | None = None) -> AppProfile:
        """Run the whole protocol and return (and optionally persist) a profile.

        On a failed confirmation run the profile is still produced and
        persisted with ``confirmed=False``; callers should then probe
        culprit subsets manually (``probe_custom``).
        """
        features = self.discover()
        s = len(features)
        log.info("discovered %d features for %s", s, self.spec.name)

        probes: dict[tuple[FeatureId, str], ProbeResult] = {}
        for feature in features:
            for mode in (MODE_STUB, MODE_FAKE):
                probes[(feature, mode)] = self.probe_feature(feature, mode)

        classes: dict[FeatureId, str] = {}
        for feature in features:
            stub_ok = probes[(feature, MODE_STUB)].works
            fake_ok = probes[(feature, MODE_FAKE)].works
            if stub_ok and fake_ok:
                classes[feature] = CLASS_ANY
            elif stub_ok:
                classes[feature] = CLASS_STUB_ONLY
            elif fake_ok:
                classes[feature] = CLASS_FAKE_ONLY
            else:
                classes[feature] = CLASS_REQUIRED

        confirm = self._run_replicas(
            confirmation_policy(classes, self.tables), "confirmation")
        confirmed = all(o.success for o, _ in confirm)
        if not confirmed:
            log.warning(
                "confirmation run failed for %s: per-feature verdicts do not "
                "compose; probe subsets manually with a custom policy",
                self.spec.name)

        regressions = {
            key: dict(p.regression_flags)
            for key, p in probes.items() if p.regression_flags
        }
        profile = AppProfile(
            app=self.spec.name,
            workload_hash=self.spec.workload_hash(),
            observed=features,
            classes=classes,
            regressions=regressions,
            confirmed=confirmed,
            metadata={
                "kernel": platform.release(),
                "tool_version": __version__,
                "date": datetime.date.today().isoformat(),
                "replicas": self.config.replicas,
                "parallelism": self.config.parallelism,
                "baseline_duration": self.baseline_duration,
                "feature_count": s,
            },
        )
        if db_root is not None:
            from . import store  # local import: store deserializes AppProfile

            entry = store.DbEntry(profile=profile, provenance=dict(provenance or {
                "submitter": "",
                "date": profile.metadata["date"],
                "kernel": profile.metadata["kernel"],
                "tool_version": profile.metadata["tool_version"],
            }))
            store.save_profile(db_root, entry)
        return profile
