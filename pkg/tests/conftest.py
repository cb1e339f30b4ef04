import pytest

VERDICTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance line: call with the criterion id, then a detail string."""
    state = {}

    def record(criterion: str, detail: str = ""):
        state["id"], state["detail"] = criterion, detail

    yield record
    if "id" in state:
        failed = request.node.rep_call.failed if hasattr(request.node, "rep_call") else True
        line = f"{state['id']} {'FAIL' if failed else 'PASS'}  {state['detail']}"
        VERDICTS[state["id"]] = (not failed, line)
        print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for key in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[key][1])
