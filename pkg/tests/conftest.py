"""Test setup: compile the freestanding C fixtures once per session.

Fixtures are tiny static binaries built with -nostdlib so their syscall
footprint is exactly the calls they make; tests rely on those exact
footprints as oracles.
"""

import os
import platform
import shutil
import subprocess
from pathlib import Path

import pytest

FIXTURE_DIR = Path(__file__).parent / "fixtures"

_C_FIXTURES = [
    "noop", "uname_write", "feat3", "feat5", "feat8", "writer",
    "getrlimit_fallback", "prctl_abort", "errno_echo", "urandom_fallback",
    "two_sources", "main_a", "sentinel_b", "ioctl_tcgets", "flaky_stub",
    "flaky_stub_hard", "sleeper", "fd_hold", "mem_hold", "forker", "notify",
    "echo_server",
]

_SCRIPTS = [
    "check_out.sh", "check_out_any.sh", "check_metric.sh", "const_metric.sh",
    "pass.sh", "fail.sh", "hang.sh", "wait_exit.sh", "echo_client.sh",
]


def pytest_collection_modifyitems(config, items):
    if platform.system() != "Linux" or platform.machine() != "x86_64":
        skip = pytest.mark.skip(reason="trace engine requires Linux on x86_64")
        for item in items:
            item.add_marker(skip)


class FixtureSet:
    """Compiled fixture binaries and executable scripts, by name."""

    def __init__(self, bindir: Path):
        self.bindir = bindir

    def binary(self, name: str) -> str:
        return str(self.bindir / name)

    def script(self, name: str) -> str:
        return str(self.bindir / name)


@pytest.fixture(scope="session")
def fixtures(tmp_path_factory) -> FixtureSet:
    cc = shutil.which("gcc") or shutil.which("cc")
    if cc is None:
        pytest.skip("no C compiler available to build test fixtures")
    bindir = tmp_path_factory.mktemp("fixture-bin")
    for name in _C_FIXTURES:
        src = FIXTURE_DIR / f"{name}.c"
        out = bindir / name
        subprocess.run(
            [cc, "-nostdlib", "-nostartfiles", "-static", "-O2",
             "-o", str(out), str(src)],
            check=True, cwd=FIXTURE_DIR, capture_output=True,
        )
    for name in _SCRIPTS:
        dst = bindir / name
        shutil.copy2(FIXTURE_DIR / name, dst)
        os.chmod(dst, 0o755)
    return FixtureSet(bindir)


@pytest.fixture()
def app_spec_factory(fixtures):
    """Build AppSpecs over compiled fixtures with sensible defaults."""
    from slens import AppSpec, Readiness, Whitelist

    def make(binary: str, script: str = "check_out.sh", *,
             name: str | None = None, whitelist: list[str] | None = None,
             argv_extra: tuple[str, ...] = (), readiness: Readiness = Readiness(),
             command: tuple[str, ...] | None = None) -> AppSpec:
        cmd = command if command is not None else (fixtures.binary(binary), *argv_extra)
        wl = whitelist if whitelist is not None else [fixtures.binary(binary)]
        return AppSpec(
            name=name or binary,
            app_command=cmd,
            test_script=fixtures.script(script),
            readiness=readiness,
            whitelist=Whitelist.of_paths(wl),
        )

    return make
