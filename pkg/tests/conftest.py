import pytest

from selfwalk import engine

_verdicts: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line verdict shown in the terminal summary."""
    def say(line: str):
        print(line)
        _verdicts.append(line)
    return say


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)


def run_preset(name, steps, seed=0, run_index=0, **kw):
    kernel, init = engine.preset(name)
    return engine.run(engine.RunConfig(kernel, steps, seed=seed, initial_profile=init,
                                       run_index=run_index, **kw))


def run_kernel(kernel, steps, seed=0, **kw):
    return engine.run(engine.RunConfig(kernel, steps, seed=seed, **kw))
