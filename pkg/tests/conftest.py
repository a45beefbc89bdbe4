import re

import numpy as np
import pytest


def central_diff(f, x, h=1e-6):
    """Central-difference gradient of scalar ``f`` at vector ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return float(np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), floor))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance verdicts --------------------------------------------------
ACCEPTANCE_CRITERIA = tuple(str(i) for i in range(1, 13))
_verdicts = {}
_crashed = set()
_CRITERION_TEST = re.compile(r"test_criterion_(\d+)")


class Verdicts:
    """Records one pass/fail line per acceptance criterion (or sub-part)."""

    def record(self, key, ok, detail):
        _verdicts[key] = (bool(ok), detail)
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        return ok


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_runtest_logreport(report):
    match = _CRITERION_TEST.search(report.nodeid)
    if match and report.failed:
        _crashed.add(str(int(match.group(1))))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in ACCEPTANCE_CRITERIA:
        parts = sorted(k for k in _verdicts if k.rstrip("abc") == crit)
        if not parts:
            if crit in _crashed:
                tr.write_line(f"criterion {crit}: FAIL - test errored before a verdict")
            else:
                tr.write_line(f"criterion {crit}: not run")
            continue
        ok = all(_verdicts[k][0] for k in parts)
        detail = "; ".join(
            (f"{k}: {'PASS' if _verdicts[k][0] else 'FAIL'} " if len(parts) > 1 else "")
            + _verdicts[k][1]
            for k in parts
        )
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} - {detail}")
