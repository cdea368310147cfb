"""Turn measured profiles plus an OS support state into development guidance.

Three outputs: an incremental support plan (which syscalls to implement,
stub, or fake next, and which application each step unlocks), per-syscall
API-importance statistics, and effort-versus-apps curves comparing planning
strategies.

Planning is a greedy cheapest-app-next loop over weighted delta costs
(implementing a syscall is expensive; declaring a stub or fake is a
one-line change).  Features tolerating both stub and fake are satisfied by
stubbing.  A syscall is emitted at most once across a whole plan: when a
stub or fake would conflict with another pending target app's needs for the
same syscall, the planner implements it instead.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import SlensError
from . import syscalls
from .interposer import FeatureId
from .orchestrator import (
    AppProfile,
    CLASS_ANY,
    CLASS_FAKE_ONLY,
    CLASS_REQUIRED,
    CLASS_STUB_ONLY,
)
from .store import OsSupportSet


class UnconfirmedProfile(SlensError):
    """The profile's final confirmation run did not pass; refuse to plan on it."""


class IncompleteOrdering(SlensError):
    """An externally supplied app ordering does not cover all targets."""


class PlannerError(SlensError):
    pass


@dataclass(frozen=True)
class PlanWeights:
    """Relative cost of satisfying a syscall per mode."""

    implement: float = 1.0
    stub: float = 0.1
    fake: float = 0.1


@dataclass(frozen=True)
class PlanStep:
    """One increment of work: syscall sets to add, and what that unlocks."""

    index: int
    implement: frozenset[int]
    stub: frozenset[int]
    fake: frozenset[int]
    unlocks: tuple[str, ...]
    notes: tuple[str, ...] = ()  # partial-implementation hints per syscall

    def __post_init__(self):
        overlap = (self.implement & self.stub | self.implement & self.fake
                   | self.stub & self.fake)
        if overlap:
            raise ValueError(f"step sets overlap on {sorted(overlap)}")
        if self.index >= 1 and not (self.implement or self.stub or self.fake):
            raise ValueError("non-summary steps must add at least one syscall")


@dataclass(frozen=True)
class SupportPlan:
    initial_supported: tuple[str, ...]
    steps: tuple[PlanStep, ...]
    unreachable: tuple[str, ...]

    def all_apps(self) -> tuple[str, ...]:
        out = list(self.initial_supported)
        for step in self.steps:
            out.extend(step.unlocks)
        out.extend(self.unreachable)
        return tuple(out)

    def to_json(self) -> dict:
        return {
            "initial_supported": list(self.initial_supported),
            "steps": [
                {
                    "index": s.index,
                    "implement": sorted(s.implement),
                    "stub": sorted(s.stub),
                    "fake": sorted(s.fake),
                    "unlocks": list(s.unlocks),
                    "notes": list(s.notes),
                }
                for s in self.steps
            ],
            "unreachable": list(self.unreachable),
        }


@dataclass(frozen=True)
class ImportanceRow:
    traced: float
    required: float

    def __post_init__(self):
        if not 0.0 <= self.required <= self.traced <= 1.0:
            raise ValueError("importance must satisfy 0 <= required <= traced <= 1")


@dataclass(frozen=True)
class ImportanceReport:
    """Fraction of apps tracing / requiring each syscall."""

    apps_total: int
    rows: Mapping[int, ImportanceRow]

    def importance_traced(self, nr: int) -> float:
        row = self.rows.get(nr)
        return row.traced if row else 0.0

    def importance_required(self, nr: int) -> float:
        row = self.rows.get(nr)
        return row.required if row else 0.0


# ---------------------------------------------------------------------------
# Support predicate


def _feature_satisfied(feature: FeatureId, cls: str, state: OsSupportSet) -> bool:
    nr = feature.syscall_nr
    if nr in state.implemented:
        return True
    if cls in (CLASS_STUB_ONLY, CLASS_ANY) and nr in state.declared_stubs:
        return True
    if cls in (CLASS_FAKE_ONLY, CLASS_ANY) and nr in state.declared_fakes:
        return True
    return False


def app_supported(profile: AppProfile, os_state: OsSupportSet) -> bool:
    """True iff every observed feature is satisfied by the OS state."""
    if not profile.confirmed:
        raise UnconfirmedProfile(
            f"profile for {profile.app} is unconfirmed; re-measure before planning")
    return all(
        _feature_satisfied(f, profile.classes[f], os_state) for f in profile.observed
    )


# ---------------------------------------------------------------------------
# Greedy incremental plan


def _mode_constraints(profiles: Sequence[AppProfile]) -> dict[int, set[str]]:
    """Per syscall, the non-implement modes acceptable to every given app.

    An app accepts a mode for a syscall when that mode satisfies all of the
    app's features of that syscall ("implement" always does, so it is not
    tracked).  The planner may emit a stub or fake for a syscall only when
    every pending app that observes it accepts that mode.
    """
    constraints: dict[int, set[str]] = {}
    for profile in profiles:
        per_app: dict[int, set[str]] = {}
        for feature in profile.observed:
            cls = profile.classes[feature]
            if cls == CLASS_REQUIRED:
                modes: set[str] = set()
            elif cls == CLASS_STUB_ONLY:
                modes = {"stub"}
            elif cls == CLASS_FAKE_ONLY:
                modes = {"fake"}
            else:
                modes = {"stub", "fake"}
            nr = feature.syscall_nr
            per_app[nr] = per_app.get(nr, {"stub", "fake"}) & modes
        for nr, modes in per_app.items():
            constraints[nr] = constraints.get(nr, {"stub", "fake"}) & modes
    return constraints


def _app_delta(profile: AppProfile, state: OsSupportSet,
               constraints: Mapping[int, set[str]]
               ) -> tuple[frozenset[int], frozenset[int], frozenset[int]]:
    """Syscall sets to add so this app becomes supported, honoring constraints."""
    implement: set[int] = set()
    stub: set[int] = set()
    fake: set[int] = set()
    for feature in profile.observed:
        cls = profile.classes[feature]
        if _feature_satisfied(feature, cls, state):
            continue
        nr = feature.syscall_nr
        allowed = constraints.get(nr, set())
        if cls == CLASS_REQUIRED or not allowed:
            implement.add(nr)
        elif "stub" in allowed and cls in (CLASS_STUB_ONLY, CLASS_ANY):
            stub.add(nr)
        elif "fake" in allowed and cls in (CLASS_FAKE_ONLY, CLASS_ANY):
            fake.add(nr)
        else:
            implement.add(nr)
    # A syscall needed as an implementation by one feature covers the rest.
    stub -= implement
    fake -= implement
    return frozenset(implement), frozenset(stub), frozenset(fake)


def _subfeature_notes(profiles: Sequence[AppProfile], implement: Iterable[int]) -> tuple[str, ...]:
    """Partial-implementation hints: which sub-features were actually seen."""
    notes = []
    for nr in sorted(implement):
        subs: set[int] = set()
        vectored = False
        for profile in profiles:
            for f in profile.observed:
                if f.syscall_nr != nr:
                    continue
                if f.subfeature is not None:
                    vectored = True
                    subs.add(f.subfeature)
        if vectored and subs:
            name = syscalls.nr_to_name(nr) or str(nr)
            rendered = ", ".join(f"{s:#x}" for s in sorted(subs))
            notes.append(f"{name}: only sub-features {rendered} observed")
    return tuple(notes)


def generate_plan(os_support: OsSupportSet,
                  profiles: Mapping[str, AppProfile] | Iterable[AppProfile],
                  targets: Sequence[str],
                  weights: PlanWeights = PlanWeights(),
                  wont_implement: frozenset[int] = frozenset()) -> SupportPlan:
    """Greedy cheapest-app-next incremental support plan.

    At every step the unsupported target app with the lowest weighted delta
    cost is chosen (ties: fewer implements, then lexicographic app name),
    its delta sets are emitted and folded into the running OS state, and any
    other app that incidentally became supported is credited to the same
    step.  Apps whose required syscalls intersect ``wont_implement`` are
    reported as unreachable instead of planned.
    """
    by_name = (dict(profiles) if isinstance(profiles, Mapping)
               else {p.app: p for p in profiles})
    missing = [t for t in targets if t not in by_name]
    if missing:
        raise PlannerError(f"no profile for target apps: {', '.join(missing)}")
    target_profiles = {t: by_name[t] for t in targets}
    for name, profile in target_profiles.items():
        if not profile.confirmed:
            raise UnconfirmedProfile(
                f"profile for {name} is unconfirmed; re-measure before planning")

    unreachable = tuple(sorted(
        name for name, p in target_profiles.items()
        if p.required_syscalls() & wont_implement
    ))
    state = os_support
    initial = tuple(sorted(
        name for name, p in target_profiles.items()
        if name not in unreachable and app_supported(p, state)
    ))
    pending = {name: p for name, p in target_profiles.items()
               if name not in unreachable and name not in initial}

    steps: list[PlanStep] = []
    while pending:
        constraints = _mode_constraints(list(pending.values()))
        best: tuple | None = None
        for name in sorted(pending):
            implement, stub, fake = _app_delta(pending[name], state, constraints)
            cost = (weights.implement * len(implement)
                    + weights.stub * len(stub) + weights.fake * len(fake))
            rank = (cost, len(implement), name)
            if best is None or rank < best[0]:
                best = (rank, name, implement, stub, fake)
        assert best is not None
        _, chosen, implement, stub, fake = best
        state = state.with_additions(implement, stub, fake)
        unlocked = [chosen]
        del pending[chosen]
        for name in sorted(pending):
            if app_supported(pending[name], state):
                unlocked.append(name)
                del pending[name]
        steps.append(PlanStep(
            index=len(steps) + 1,
            implement=implement,
            stub=stub,
            fake=fake,
            unlocks=tuple(unlocked),
            notes=_subfeature_notes(list(target_profiles.values()), implement),
        ))

    return SupportPlan(initial_supported=initial, steps=tuple(steps),
                       unreachable=unreachable)


def replay_plan(plan: SupportPlan, os_support: OsSupportSet,
                profiles: Mapping[str, AppProfile]) -> None:
    """Validity check: after steps 1..k, everything unlocked so far is supported.

    Raises PlannerError when the plan does not hold or repeats a syscall.
    """
    state = os_support
    seen: set[int] = set(os_support.implemented | os_support.declared_stubs
                         | os_support.declared_fakes)
    supported_so_far = list(plan.initial_supported)
    for name in supported_so_far:
        if not app_supported(profiles[name], state):
            raise PlannerError(f"{name} is not supported at step 0")
    for step in plan.steps:
        emitted = step.implement | step.stub | step.fake
        repeats = emitted & seen
        if repeats:
            raise PlannerError(f"step {step.index} repeats syscalls {sorted(repeats)}")
        seen |= emitted
        state = state.with_additions(step.implement, step.stub, step.fake)
        supported_so_far.extend(step.unlocks)
        for name in supported_so_far:
            if not app_supported(profiles[name], state):
                raise PlannerError(
                    f"{name} is not supported after step {step.index}")


# ---------------------------------------------------------------------------
# API importance


def api_importance(profiles: Iterable[AppProfile]) -> ImportanceReport:
    """Per syscall: fraction of apps tracing it, and fraction requiring it."""
    profiles = list(profiles)
    if not profiles:
        raise PlannerError("empty database: no profiles to analyze")
    traced_counts: dict[int, int] = {}
    required_counts: dict[int, int] = {}
    for profile in profiles:
        for nr in profile.traced_syscalls():
            traced_counts[nr] = traced_counts.get(nr, 0) + 1
        for nr in profile.required_syscalls():
            required_counts[nr] = required_counts.get(nr, 0) + 1
    total = len(profiles)
    rows = {
        nr: ImportanceRow(traced=traced_counts[nr] / total,
                          required=required_counts.get(nr, 0) / total)
        for nr in traced_counts
    }
    return ImportanceReport(apps_total=total, rows=rows)


# ---------------------------------------------------------------------------
# Strategy comparison


def _curve_from_unlock_order(order: Sequence[tuple[frozenset[int], int]],
                             initial_apps: int) -> list[tuple[int, int]]:
    points = [(0, initial_apps)]
    x = 0
    y = initial_apps
    for implemented, unlocked in order:
        x += len(implemented)
        y += unlocked
        points.append((x, y))
    return points


def compare_strategies(profiles: Mapping[str, AppProfile] | Iterable[AppProfile],
                       os_support: OsSupportSet,
                       targets: Sequence[str] | None = None,
                       external_order: Sequence[str] | None = None,
                       weights: PlanWeights = PlanWeights()
                       ) -> dict[str, list[tuple[int, int]]]:
    """Effort curves: cumulative syscalls implemented vs. apps supported.

    Strategies: ``plan`` follows generate_plan, charging only its implement
    sets on the x-axis (stubs and fakes are free effort-wise); ``naive``
    charges every traced syscall of each app as an implementation;
    ``external`` (when an app ordering is given) applies plan-style deltas in
    the supplied order.  All curves are monotone in both coordinates.
    """
    by_name = (dict(profiles) if isinstance(profiles, Mapping)
               else {p.app: p for p in profiles})
    if targets is None:
        targets = sorted(by_name)
    if not targets:
        return {}

    curves: dict[str, list[tuple[int, int]]] = {}

    plan = generate_plan(os_support, by_name, targets, weights)
    order = [(step.implement, len(step.unlocks)) for step in plan.steps]
    curves["plan"] = _curve_from_unlock_order(order, len(plan.initial_supported))

    # Naive: no stubbing or faking; every traced syscall costs an
    # implementation.  Cheapest-next app order for a fair comparison.
    implemented = set(os_support.implemented)
    naive_pending = {
        name: frozenset(by_name[name].traced_syscalls()) for name in targets
    }
    naive_initial = [n for n, t in naive_pending.items() if t <= implemented]
    for name in naive_initial:
        del naive_pending[name]
    naive_order: list[tuple[frozenset[int], int]] = []
    while naive_pending:
        name = min(naive_pending,
                   key=lambda n: (len(naive_pending[n] - implemented), n))
        new = frozenset(naive_pending[name] - implemented)
        implemented |= new
        del naive_pending[name]
        unlocked = 1
        for other in sorted(naive_pending):
            if naive_pending[other] <= implemented:
                unlocked += 1
                del naive_pending[other]
        naive_order.append((new, unlocked))
    curves["naive"] = _curve_from_unlock_order(naive_order, len(naive_initial))

    if external_order is not None:
        missing = [t for t in targets if t not in external_order]
        if missing:
            raise IncompleteOrdering(
                f"external ordering misses target apps: {', '.join(missing)}")
        state = os_support
        ext_order: list[tuple[frozenset[int], int]] = []
        supported = {n for n in targets if app_supported(by_name[n], state)}
        remaining = [n for n in external_order if n in targets and n not in supported]
        all_profiles = [by_name[n] for n in targets]
        constraints = _mode_constraints(all_profiles)
        for name in remaining:
            if app_supported(by_name[name], state):
                continue
            implement, stub, fk = _app_delta(by_name[name], state, constraints)
            state = state.with_additions(implement, stub, fk)
            newly = [n for n in targets
                     if n not in supported and app_supported(by_name[n], state)]
            supported.update(newly)
            ext_order.append((implement, len(newly)))
        curves["external"] = _curve_from_unlock_order(
            ext_order, len([n for n in targets
                            if app_supported(by_name[n], os_support)]))

    return curves


# ---------------------------------------------------------------------------
# Rendering


def render_plan_table(plan: SupportPlan) -> str:
    """Step-by-step plan as a text table (step | implement | stub | fake | support)."""

    def render_set(s: frozenset[int]) -> str:
        return ", ".join(str(n) for n in sorted(s)) if s else "-"

    rows = [("Step", "Implement", "Stub", "Fake", "Support for...")]
    rows.append(("0", "-", "-", "-", f"({len(plan.initial_supported)} apps)"))
    for step in plan.steps:
        rows.append((
            str(step.index),
            render_set(step.implement),
            render_set(step.stub),
            render_set(step.fake),
            "+ " + ", ".join(step.unlocks),
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    out = io.StringIO()
    for i, row in enumerate(rows):
        out.write(" | ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        out.write("\n")
        if i == 0:
            out.write("-+-".join("-" * w for w in widths) + "\n")
    if plan.unreachable:
        out.write(f"unreachable: {', '.join(plan.unreachable)}\n")
    notes = [n for step in plan.steps for n in step.notes]
    if notes:
        out.write("partial-implementation hints:\n")
        for n in notes:
            out.write(f"  {n}\n")
    return out.getvalue()


def render_curves_csv(curves: Mapping[str, Sequence[tuple[int, int]]]) -> str:
    """Curves as CSV: strategy,implemented_syscalls,apps_supported."""
    out = io.StringIO()
    out.write("strategy,implemented_syscalls,apps_supported\n")
    for strategy in sorted(curves):
        for x, y in curves[strategy]:
            out.write(f"{strategy},{x},{y}\n")
    return out.getvalue()


def render_importance_csv(report: ImportanceReport) -> str:
    out = io.StringIO()
    out.write("syscall_nr,name,importance_traced,importance_required\n")
    ordered = sorted(report.rows.items(),
                     key=lambda kv: (-kv[1].required, -kv[1].traced, kv[0]))
    for nr, row in ordered:
        name = syscalls.nr_to_name(nr) or ""
        out.write(f"{nr},{name},{row.traced:.6f},{row.required:.6f}\n")
    return out.getvalue()


def render_importance_json(report: ImportanceReport) -> dict:
    return {
        "apps_total": report.apps_total,
        "syscalls": [
            {"syscall_nr": nr,
             "name": syscalls.nr_to_name(nr),
             "importance_traced": row.traced,
             "importance_required": row.required}
            for nr, row in sorted(report.rows.items())
        ],
    }
