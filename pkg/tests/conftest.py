import json
from pathlib import Path

import pytest

from faasbench import protocol as p
from faasbench.proxy import ProxyConfig, serve_proxy
from faasbench.targets import GatewayConfig, TargetConfig, handle_wordcount, serve_target
from faasbench.wire import Reply

FIXTURES = Path(__file__).parent / "fixtures"

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def fixture_text():
    def read(name):
        return (FIXTURES / name).read_text(encoding="utf-8")
    return read


@pytest.fixture
def start_target():
    handles = []

    def start(gateway=GatewayConfig(), functions=None):
        h = serve_target(TargetConfig(gateway=gateway), functions)
        handles.append(h)
        return h

    yield start
    for h in handles:
        h.shutdown()


@pytest.fixture
def start_proxy():
    handles = []

    def start(**kwargs):
        h = serve_proxy(ProxyConfig(**kwargs))
        handles.append(h)
        return h

    yield start
    for h in handles:
        h.shutdown()


@pytest.fixture
def word_stack(start_target, start_proxy):
    """A default target plus proxy; returns (proxy_url, word_target_uri)."""
    target = start_target()
    proxy = start_proxy()
    return proxy.url + "/", target.url + "/func/word"


def uuid_rewriter(body, cancel):
    """A misbehaving function that answers with a different uuid."""
    reply = handle_wordcount(body, cancel)
    obj = json.loads(reply.body)
    obj[p.TARGET_UUID] = obj[p.TARGET_UUID][::-1] + "-rewritten"
    return Reply(reply.status, json.dumps(obj).encode())
