import numpy as np
import pytest

from spokensem.encoder import EncoderConfig

TOY_ENCODER = EncoderConfig(conv_size=3, conv_channels=2, conv_stride=2, gru_layers=2,
                            gru_hidden=4, attention_hidden=3)


def numeric_grad(f, arr, eps=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (in place)."""
    out = np.zeros_like(arr, dtype=np.float64)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        up = f()
        arr[idx] = old - eps
        down = f()
        arr[idx] = old
        out[idx] = (up - down) / (2 * eps)
    return out


def rel_error(a, b):
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def randomize(params, rng, std=0.1):
    """Redraw every parameter from N(0, std) in 64-bit."""
    for k in params:
        params[k] = rng.normal(0.0, std, size=params[k].shape)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
