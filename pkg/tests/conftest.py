import socket
import sys

import numpy as np
import pytest

from kgfit.data import build_filter_index
from kgfit.fixtures import ToyKGSpec, generate_toy, random_kg


class NetworkBlocked(RuntimeError):
    pass


def _blocked(*args, **kwargs):
    raise NetworkBlocked("network access attempted during tests")


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """The whole suite runs offline; any outbound connection fails loudly."""
    monkeypatch.setattr(socket.socket, "connect", _blocked)
    monkeypatch.setattr(socket.socket, "connect_ex", _blocked)
    monkeypatch.setattr(socket, "create_connection", _blocked)


@pytest.fixture(scope="session")
def toy():
    return generate_toy(ToyKGSpec())


@pytest.fixture(scope="session")
def small_kg():
    ds = random_kg(seed=3)
    return ds, build_filter_index(ds)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results):
        status, text = results[cid]
        terminalreporter.write_line(f"[{status}] criterion {cid}: {text}")
