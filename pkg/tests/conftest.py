import pytest

_GATE_KEY = pytest.StashKey[list]()


class Gate:
    def __init__(self, sink: list):
        self.sink = sink
        self.current = None

    def check(self, number: int, title: str, ok: bool, detail: str = ""):
        line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        self.sink.append(line)
        self.current = number
        assert ok, line


@pytest.fixture
def gate(request):
    sink = request.config.stash.setdefault(_GATE_KEY, [])
    g = Gate(sink)
    yield g
    rep = getattr(request.node, "rep_call", None)
    if g.current is None and rep is not None and rep.failed:
        sink.append(f"ACCEPTANCE ? FAIL: {request.node.name} raised before reporting")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_GATE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
