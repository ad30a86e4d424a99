import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    path = tmp_path / "out"
    monkeypatch.setenv("DISKBOT_OUT", str(path))
    return path


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
