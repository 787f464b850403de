import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_orthogonal(n, rng):
    """Haar-ish orthogonal matrix from the QR of a Gaussian (oracle only)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


CRITERIA = {
    1: "gradient correctness",
    2: "orthogonality and isometry",
    3: "round trips",
    4: "spectral control",
    5: "gradient stability",
    6: "addition task",
    7: "copy task",
    8: "counting formulas",
    9: "bounds as code",
}
_verdicts = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, ok, detail)`` for the end-of-session summary."""
    def record(number, ok, detail):
        _verdicts[number] = (bool(ok), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        if number in _verdicts:
            ok, detail = _verdicts[number]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number} {title}: {detail}")
        else:
            terminalreporter.write_line(f"FAIL {number} {title}: not run or errored")
