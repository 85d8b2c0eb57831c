import numpy as np
import pytest

from esd_pinn.esd_model import default_chaotic_params, default_initial_state
from esd_pinn.mlp import MlpNetwork, flatten, init_network, unflatten


@pytest.fixture
def params():
    return default_chaotic_params()


@pytest.fixture
def x0():
    return default_initial_state()


def zero_network(hidden=(8,)):
    dims = [1, *hidden, 4]
    return MlpNetwork(tuple(np.zeros((i, o)) for i, o in zip(dims[:-1], dims[1:])),
                      tuple(np.zeros(o) for o in dims[1:]))


def random_network(hidden=(8,), seed=0, scale=0.3):
    """Glorot weights plus random biases so that no gradient entry is trivially zero."""
    net = init_network(len(hidden), hidden[0], seed)
    if len(set(hidden)) > 1:
        raise ValueError("uniform widths only")
    rng = np.random.default_rng(seed + 1000)
    return unflatten(net, flatten(net) + scale * rng.standard_normal(net.n_params))


def constant_network(c, width=3):
    """Network whose output is the constant vector ``c``: all weights zero, output bias ``c``."""
    return MlpNetwork((np.zeros((1, width)), np.zeros((width, 4))),
                      (np.zeros(width), np.asarray(c, dtype=float)))


# Acceptance bookkeeping: each criterion records (passed, detail) before
# asserting, and the terminal summary prints one line per criterion.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 9


@pytest.fixture
def acceptance():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in ACCEPTANCE:
            passed, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
