import numpy as np
import pytest

from arlab.model import Network, init_network
from arlab.numerics import SeededRng


def random_net(seed, widths=None, max_width=16, max_depth=4):
    rng = SeededRng(seed)
    if widths is None:
        depth = int(rng.integers(2, max_depth + 1))
        widths = [int(w) for w in rng.integers(2, max_width + 1, depth + 1)]
    return init_network(widths, rng.child(99))


def linear_two_class(w):
    """Logits (w.x, 0) as a depth-1 network."""
    w = np.asarray(w, dtype=float)
    return Network([np.stack([w, np.zeros_like(w)])])


@pytest.fixture
def small_net():
    return init_network([4, 6, 5, 3], SeededRng(11))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key, (ok, detail) in mod.RESULTS.items():
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} - {detail}")
