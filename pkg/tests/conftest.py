import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import make_corpus  # noqa: E402

ACCEPTANCE = []


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("gsc"))


@pytest.fixture(scope="session")
def gsc_root():
    root = os.environ.get("SPIKEKWS_GSC_ROOT")
    if not root or not Path(root).is_dir():
        pytest.skip("Speech Commands v1 corpus not available (set SPIKEKWS_GSC_ROOT)")
    return Path(root)


@pytest.fixture
def record():
    """Register one acceptance line for the terminal summary.

    ``ok`` is True/False for PASS/FAIL, None for SKIP, or a string status
    (e.g. ``"INFO"``) for lines that are reported but not judged.
    """
    def _record(name, ok, detail=""):
        status = ok if isinstance(ok, str) else {True: "PASS", False: "FAIL", None: "SKIP"}[
            None if ok is None else bool(ok)]
        ACCEPTANCE.append((status, name, detail))
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{status:<4}  {name}  {detail}")
