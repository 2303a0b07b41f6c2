import numpy as np
import pytest
import torch

from corrhal.synth import make_pairs

torch.set_num_threads(1)

VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[VERDICTS] = {}


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(verdicts):
        title, passed, detail = verdicts[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}")


@pytest.fixture
def verdict(request):
    """Record one acceptance outcome; it is printed in the terminal summary."""

    def record(number, title, checks: dict, detail: str = ""):
        failed = [name for name, ok in checks.items() if not ok]
        text = detail + (f" | failed: {', '.join(failed)}" if failed else "")
        request.config.stash[VERDICTS][number] = (title, not failed, text)
        assert not failed, text

    return record


@pytest.fixture(scope="session")
def small_pairs():
    """Six deterministic pairs, one per overlap bin."""
    return make_pairs(6, 11, prefix="t")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
