import contextlib

import pytest

CRITERIA = {}


class Criterion:
    """Collects the verdict and a one-line detail for one acceptance criterion."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.detail = ""

    @contextlib.contextmanager
    def check(self):
        CRITERIA[self.number] = ("FAIL", self.title, "did not finish")
        try:
            yield self
        except BaseException as exc:
            detail = self.detail or f"{type(exc).__name__}: {exc}".splitlines()[0]
            CRITERIA[self.number] = ("FAIL", self.title, detail)
            raise
        CRITERIA[self.number] = ("PASS", self.title, self.detail)


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        verdict, title, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}: {detail}")
