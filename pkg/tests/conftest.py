import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_RESULTS: dict = {}


@pytest.fixture
def record():
    """record(key, ok, detail): one line in the acceptance summary."""
    def _record(key: str, ok: bool, detail: str):
        _RESULTS[key] = (bool(ok), detail)
        print(f"\n{key}: {'PASS' if ok else 'FAIL'}  {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: (k.split()[0], int(k.split()[1]) if k.split()[1].isdigit() else 99, k)):
        ok, detail = _RESULTS[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
