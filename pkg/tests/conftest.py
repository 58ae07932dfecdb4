import numpy as np
import pytest

from vfae import tensor as T


def pytest_addoption(parser):
    parser.addoption(
        "--data-dir",
        action="store",
        default=None,
        help="directory holding external datasets (adult/, amazon/, yaleb/) for the quantitative checks",
    )


@pytest.fixture
def data_dir(request):
    return request.config.getoption("--data-dir")


def finite_difference_errors(f, params, step=1e-5, floor=1e-6):
    """Worst elementwise relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss Tensor from scratch on every call.
    """
    for p in params:
        p.zero_grad()
    T.backward(f())
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        for idx in np.ndindex(p.data.shape):
            old = p.data[idx]
            p.data[idx] = old + step
            up = float(f().data)
            p.data[idx] = old - step
            down = float(f().data)
            p.data[idx] = old
            num = (up - down) / (2 * step)
            a = analytic[idx]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, status: str, detail: str) -> None:
    """Remember one acceptance outcome for the end-of-run summary."""
    line = f"criterion {number}: {status}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
