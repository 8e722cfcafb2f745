import pytest

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, title)`` returns a reporter
    used as a context manager; an exception inside marks it FAIL."""

    class _Reporter:
        def __init__(self, n, title):
            self.n, self.title, self.detail = n, title, ""

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            ok = exc_type is None
            detail = self.detail if ok else f"{exc_type.__name__}: {exc}".splitlines()[0][:160]
            ACCEPTANCE[self.n] = (self.title, ok, detail)
            print(f"[{'PASS' if ok else 'FAIL'}] criterion {self.n}: {self.title} {detail}")
            return False

    return _Reporter


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}  {detail}")
