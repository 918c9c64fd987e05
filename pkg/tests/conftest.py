import pytest

from diarconf.confidence import Method, score_conversation
from diarconf.selection import EvalConversation
from diarconf.synth import STANDARD_BATTERY, generate_corpus

BLACK_BOX = (Method.COSINE, Method.LOCAL, Method.SILHOUETTE)

_acceptance_results: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): a primary acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _acceptance_results.append((marker.args[0], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _acceptance_results:
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture(scope="session")
def battery():
    """The standard synth battery: 20 seeds, 4 speakers, D=64, 15% errors."""
    spec, count = STANDARD_BATTERY
    return generate_corpus(spec, count)


@pytest.fixture(scope="session")
def battery_eval(battery):
    out = []
    for conv in battery:
        scores = score_conversation(conv.hypothesis, conv.track, BLACK_BOX)
        anns = tuple(a for m in BLACK_BOX for a in scores[m])
        out.append(EvalConversation(conv.reference, conv.hypothesis, anns))
    return out
