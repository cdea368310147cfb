"""Workload harness: run one application attempt and judge it.

Starts the application under the interposition engine, waits for readiness,
drives it with the user's test script, samples resource usage of the
measured processes via /proc, enforces timeouts, tears the tree down, and
produces a WorkloadOutcome.

Test-script contract (stable):
  - argv[1] = application host, argv[2] = port when one applies;
  - environment carries SLENS_HOST, SLENS_PORT (when applicable) and
    SLENS_APP_PID;
  - exit code 0 means the run succeeded;
  - the last stdout line, if numeric, is taken as the performance metric.

The script runs with the run's working directory as cwd.  The application's
stdout/stderr are captured to app_stdout.log / app_stderr.log there.  The
tokens ``{port}`` and ``{workdir}`` in the app command and environment
values are substituted before launch.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import signal
import socket
import subprocess
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from . import SlensError
from .config import DEFAULT_TABLES, InterposerTables
from .interposer import (
    Command,
    Limits,
    Policy,
    RunTrace,
    TracerFault,
    TraceSession,
    Whitelist,
)

log = logging.getLogger(__name__)

REASON_OK = "script_ok"
REASON_SCRIPT_FAIL = "script_fail"
REASON_CRASH = "crash"
REASON_TIMEOUT = "timeout"
REASON_TRACER_FAULT = "tracer_fault"


class ScriptMissing(SlensError):
    """The test script does not exist or is not executable."""


@dataclass(frozen=True)
class Readiness:
    """When the app is considered ready for the test script.

    Either a fixed delay, or polling a TCP port until it accepts
    connections.  ``port=0`` requests a free port allocated per run.
    """

    delay: float = 0.0
    port: int | None = None

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("readiness delay must be >= 0")


@dataclass(frozen=True)
class AppSpec:
    """An application plus the workload that exercises it."""

    name: str
    app_command: tuple[str, ...]
    test_script: str
    env: Mapping[str, str] = field(default_factory=dict)
    readiness: Readiness = Readiness()
    whitelist: Whitelist = Whitelist()
    workdir_template: str | None = None

    def validate(self) -> None:
        if not os.path.isfile(self.test_script):
            raise ScriptMissing(f"test script not found: {self.test_script}")
        if not os.access(self.test_script, os.X_OK):
            raise ScriptMissing(f"test script not executable: {self.test_script}")

    def workload_hash(self) -> str:
        """Content hash identifying this spec + script combination."""
        self.validate()
        h = hashlib.sha256()
        ident = {
            "name": self.name,
            "app_command": list(self.app_command),
            "env": dict(sorted(self.env.items())),
            "readiness": {"delay": self.readiness.delay, "port": self.readiness.port},
            "whitelist": sorted(self.whitelist.binary_paths),
        }
        h.update(json.dumps(ident, sort_keys=True).encode())
        with open(self.test_script, "rb") as f:
            h.update(f.read())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class ResourceSample:
    """One aggregated reading over a set of processes."""

    timestamp: float
    rss: int  # bytes, sum of per-pid high-water marks (VmHWM)
    fd_count: int  # sum of per-pid open descriptor counts

    def __post_init__(self):
        if self.rss < 0 or self.fd_count < 0:
            raise ValueError("resource readings must be >= 0")


@dataclass(frozen=True)
class WorkloadOutcome:
    """One run's verdict."""

    success: bool
    reason: str
    perf_metric: float | None
    peak_rss: int
    peak_fds: int
    duration: float

    def __post_init__(self):
        if self.success != (self.reason == REASON_OK):
            raise ValueError("success must hold exactly when reason is script_ok")

    def to_json(self) -> dict:
        return {
            "success": self.success,
            "reason": self.reason,
            "perf_metric": self.perf_metric,
            "peak_rss": self.peak_rss,
            "peak_fds": self.peak_fds,
            "duration": self.duration,
        }


def _read_vm_hwm(pid: int) -> int | None:
    try:
        with open(f"/proc/{pid}/status") as f:
            for line in f:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        return None
    return 0  # kernel threads have no VmHWM line


def sample_resources(pids: Iterable[int],
                     on_warning: Callable[[str], None] | None = None) -> ResourceSample:
    """Aggregate high-water RSS and open-descriptor counts over ``pids``.

    Dead pids are skipped silently; unreadable /proc entries of live pids
    are skipped and reported through ``on_warning``.
    """
    rss = 0
    fds = 0
    for pid in pids:
        hwm = _read_vm_hwm(pid)
        if hwm is None:
            continue  # gone
        rss += hwm
        try:
            fds += len(os.listdir(f"/proc/{pid}/fd"))
        except OSError as exc:
            if on_warning:
                on_warning(f"pid {pid}: cannot read fd table: {exc}")
    return ResourceSample(timestamp=time.monotonic(), rss=rss, fd_count=fds)


class _Sampler:
    """Periodic resource sampler over the session's measured pids."""

    def __init__(self, session: TraceSession, period: float):
        self.session = session
        self.period = max(period, 0.005)
        self.peak_rss = 0
        self.peak_fds = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)

    def _take(self) -> None:
        pids = self.session.traced_pids()
        if not pids:
            return
        s = sample_resources(pids)
        self.peak_rss = max(self.peak_rss, s.rss)
        self.peak_fds = max(self.peak_fds, s.fd_count)

    def _loop(self) -> None:
        while not self._stop.wait(self.period):
            self._take()

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._take()  # final reading before teardown
        self._stop.set()
        self._thread.join()


def _allocate_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _poll_port(port: int, deadline: float, session: TraceSession) -> bool:
    while time.monotonic() < deadline:
        status = session.root_status()
        if status is not None and status != (0, None):
            return False  # app died while we were waiting
        try:
            with socket.create_connection(("127.0.0.1", port), timeout=0.2):
                return True
        except OSError:
            time.sleep(0.02)
    return False


def _settled_root_status(session: TraceSession, app_pid: int,
                         grace: float = 0.25) -> tuple[int | None, int | None] | None:
    """Root status, waiting briefly for the exit event if the pid is gone.

    The tracer reaps the root before its exit message reaches our reader
    thread, so a just-exited app can look statusless for a moment.
    """
    status = session.root_status()
    if status is not None or os.path.exists(f"/proc/{app_pid}"):
        return status
    deadline = time.monotonic() + grace
    while time.monotonic() < deadline:
        status = session.root_status()
        if status is not None:
            return status
        time.sleep(0.005)
    return session.root_status()


def _parse_perf_metric(stdout: bytes) -> float | None:
    lines = [ln for ln in stdout.decode(errors="replace").splitlines() if ln.strip()]
    if not lines:
        return None
    try:
        return float(lines[-1].strip())
    except ValueError:
        return None


def _substitute(value: str, port: int | None, workdir: str) -> str:
    if port is not None:
        value = value.replace("{port}", str(port))
    return value.replace("{workdir}", workdir)


def _fresh_workdir(spec: AppSpec) -> str:
    workdir = tempfile.mkdtemp(prefix="slens-run-")
    if spec.workdir_template:
        for entry in os.listdir(spec.workdir_template):
            src = os.path.join(spec.workdir_template, entry)
            dst = os.path.join(workdir, entry)
            if os.path.isdir(src):
                shutil.copytree(src, dst, symlinks=True)
            else:
                shutil.copy2(src, dst)
    return workdir


def run_workload(spec: AppSpec, policy: Policy, limits: Limits,
                 tables: InterposerTables = DEFAULT_TABLES) -> tuple[WorkloadOutcome, RunTrace]:
    """Execute one workload attempt under ``policy`` and judge it.

    The app runs in a fresh working directory instantiated from the spec's
    template, so it never sees state from prior runs.  Success requires the
    test script to exit 0 and the application not to have crashed before the
    script completed.  The process tree is torn down (SIGTERM, then SIGKILL
    after ``limits.kill_grace``) before returning.
    """
    spec.validate()
    workdir = _fresh_workdir(spec)
    keep = os.environ.get("SLENS_KEEP_WORKDIRS") == "1"
    started = time.monotonic()
    try:
        return _run_workload_in(spec, policy, limits, tables, workdir)
    except TracerFault as exc:
        # The run is discarded, never classified; callers retry or abort.
        log.warning("tracer fault for %s: %s", spec.name, exc)
        outcome = WorkloadOutcome(
            success=False, reason=REASON_TRACER_FAULT, perf_metric=None,
            peak_rss=0, peak_fds=0, duration=time.monotonic() - started,
        )
        return outcome, RunTrace(
            observed=Counter(), decisions={}, exit_code=None, signaled=None,
            whitelisted_pids_seen=0, warnings=(str(exc),),
        )
    finally:
        if keep:
            log.info("keeping workdir %s", workdir)
        else:
            shutil.rmtree(workdir, ignore_errors=True)


def _run_workload_in(spec: AppSpec, policy: Policy, limits: Limits,
                     tables: InterposerTables, workdir: str) -> tuple[WorkloadOutcome, RunTrace]:
    port = spec.readiness.port
    if port == 0:
        port = _allocate_port()

    argv = tuple(_substitute(a, port, workdir) for a in spec.app_command)
    env = dict(os.environ)
    env.update({k: _substitute(v, port, workdir) for k, v in spec.env.items()})
    command = Command(
        argv=argv,
        env=env,
        cwd=workdir,
        stdout_path=os.path.join(workdir, "app_stdout.log"),
        stderr_path=os.path.join(workdir, "app_stderr.log"),
    )

    started = time.monotonic()
    session = TraceSession.start(command, policy, spec.whitelist, limits, tables)
    app_pid = session.app_pid  # raises LaunchFailure early
    sampler = _Sampler(session, limits.sample_period)
    sampler.start()
    reason = None
    perf_metric = None
    script_rc: int | None = None
    try:
        # Readiness.
        if spec.readiness.port is not None:
            ready_deadline = started + limits.timeout
            if not _poll_port(port, ready_deadline, session):
                status = session.root_status()
                reason = REASON_CRASH if status is not None else REASON_TIMEOUT
        elif spec.readiness.delay:
            time.sleep(spec.readiness.delay)
            status = session.root_status()
            if status is not None and status != (0, None):
                reason = REASON_CRASH

        # Drive the workload.
        if reason is None:
            script_env = dict(os.environ)
            script_env["SLENS_HOST"] = "127.0.0.1"
            script_env["SLENS_APP_PID"] = str(app_pid)
            script_argv = [spec.test_script, "127.0.0.1"]
            if port is not None:
                script_env["SLENS_PORT"] = str(port)
                script_argv.append(str(port))
            budget = max(0.2, limits.timeout - (time.monotonic() - started))
            try:
                proc = subprocess.run(
                    script_argv, cwd=workdir, env=script_env,
                    stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                    timeout=budget,
                )
                script_rc = proc.returncode
                perf_metric = _parse_perf_metric(proc.stdout)
            except subprocess.TimeoutExpired:
                reason = REASON_TIMEOUT

        duration = time.monotonic() - started

        # The app crashing before script completion trumps a passing script.
        if reason is None:
            status = _settled_root_status(session, app_pid)
            if status is not None and status != (0, None):
                reason = REASON_CRASH
    finally:
        sampler.stop()
        trace = _teardown(session, limits)

    if trace.timed_out and reason in (None, REASON_OK, REASON_SCRIPT_FAIL):
        reason = REASON_TIMEOUT
    if reason is None:
        reason = REASON_OK if script_rc == 0 else REASON_SCRIPT_FAIL

    outcome = WorkloadOutcome(
        success=reason == REASON_OK,
        reason=reason,
        perf_metric=perf_metric,
        peak_rss=sampler.peak_rss,
        peak_fds=sampler.peak_fds,
        duration=duration,
    )
    return outcome, trace


def _teardown(session: TraceSession, limits: Limits) -> RunTrace:
    """Stop the tree: graceful signal, then kill; collect the trace."""
    session.signal_tree(signal.SIGTERM)
    try:
        return session.wait(timeout=limits.kill_grace)
    except TimeoutError:
        pass
    session.signal_tree(signal.SIGKILL)
    try:
        return session.wait(timeout=limits.timeout + limits.kill_grace + 10)
    except TimeoutError:
        session.kill_tracer()
        raise TracerFault("process tree did not terminate after SIGKILL") from None
