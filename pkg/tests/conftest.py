import numpy as np
import pytest

from dissipative.field import LocalizationParams, LocalizedField, MlpField, make_field
from dissipative.stability import ThetaScheme


def zero_field(dim=2, theta=0.0):
    """c_hat = L = 1 gives c = r = 0, so F vanishes identically."""
    f = make_field(dim, widths=(4,), c_hat_range=(1.0, 1.0), L_range=(1.0, 1.0), rng=0)
    f.scheme = ThetaScheme(theta)
    return f


def linear_field(a_hat, c_hat, L, theta=0.0):
    """One identity layer with zero bias: J = c I + r A / ||A||_2 everywhere."""
    a_hat = np.asarray(a_hat, dtype=float)
    d = a_hat.shape[0]
    mlp = MlpField([a_hat.copy()], [np.zeros(d)], "identity")
    loc = LocalizationParams("ranged", 0.0, 0.0, (c_hat, c_hat), (L, L))
    return LocalizedField(mlp, loc, ThetaScheme(theta))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
