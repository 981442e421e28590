import pytest

from teebench.core import Protocol
from teebench.server import BenchmarkServer, ServerConfig

# Both boundary transports must behave identically; parametrize the
# cheap tests over them and keep the slow ones on a single transport.
TRANSPORTS = ("inline", "process")


@pytest.fixture
def tcp_server():
    with BenchmarkServer(ServerConfig(bind="127.0.0.1", port=0)) as server:
        yield server


@pytest.fixture
def udp_server():
    cfg = ServerConfig(bind="127.0.0.1", port=0, protocol=Protocol.UDP,
                       udp_idle_timeout=0.3)
    with BenchmarkServer(cfg) as server:
        yield server


@pytest.fixture(params=TRANSPORTS)
def transport(request):
    return request.param
