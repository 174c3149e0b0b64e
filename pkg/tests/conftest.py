from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
IMAGES = DATA / "images"
TEST_IMAGES = ("camera", "astronaut", "coffee", "chelsea", "rocket")
TUNING_IMAGE = "coins"


@pytest.fixture
def data_dir():
    return DATA


# -- acceptance reporting: one PASS/FAIL line per criterion ------------------------

_CRITERIA: dict[int, dict] = {}


class CriterionLog:
    def __init__(self, number: int, title: str):
        self.entry = _CRITERIA.setdefault(number, {"title": title, "detail": "", "outcome": None})

    def detail(self, text: str) -> None:
        self.entry["detail"] = text


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    log = CriterionLog(number, title)
    request.node.user_properties.append(("criterion", number))
    return log


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for key, num in report.user_properties:
        if key == "criterion" and num in _CRITERIA:
            _CRITERIA[num]["outcome"] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        c = _CRITERIA[num]
        outcome = c["outcome"] or "NOT RUN"
        line = f"criterion {num:2d} {outcome:4s}  {c['title']}"
        if c["detail"]:
            line += f"  [{c['detail']}]"
        terminalreporter.write_line(line)
