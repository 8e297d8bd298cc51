import pytest

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line (printed now and again in the terminal summary), then assert it."""
    lines = request.config.stash[_CRITERIA]

    def check(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  [{number:>2}] {title}: {detail}"
        lines.append((number, line))
        print(line)
        assert passed, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_CRITERIA]
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda item: item[0]):
            terminalreporter.write_line(line)
