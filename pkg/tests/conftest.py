import json
from pathlib import Path

import pytest
from hypothesis import settings

from diagrameval.document import BBox, DiagramElement, Fill, Stroke, TextPayload, VectorDocument

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def reference_results():
    return json.loads((FIXTURES / "reference_results.json").read_text())


def rect(el_id, x, y, w, h, color="#000000", opacity=1.0, z=0, text=None, stroke=None):
    fill = Fill(color, opacity) if color is not None else None
    return DiagramElement(el_id, "rect", BBox(x, y, w, h), fill, stroke, text, z)


def label(el_id, x, y, w, h, content, font_size=12.0, color="#000000", z=0, container=None):
    return DiagramElement(el_id, "text-box", BBox(x, y, w, h), None, None,
                          TextPayload(content, font_size, color, container), z)


def connector(el_id, p0, p1, z=0):
    xs, ys = (p0[0], p1[0]), (p0[1], p1[1])
    bbox = BBox(min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))
    return DiagramElement(el_id, "connector", bbox, None, Stroke("#000000", 1.0), None, z, (p0, p1))


def doc_of(*elements, w=200.0, h=100.0):
    return VectorDocument(w, h, tuple(elements))


# ------------------------------------------------------------ acceptance report

_pending: dict[str, tuple[int, str]] = {}
_outcomes: dict[str, tuple[int, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _pending[item.nodeid] = tuple(marker.args)


def pytest_runtest_logreport(report):
    if report.nodeid not in _pending:
        return
    # the call phase decides, unless setup already failed
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = _pending[report.nodeid]
        _outcomes[report.nodeid] = (number, title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome in sorted(_outcomes.values()):
        terminalreporter.write_line(f"criterion {number:>2}: {outcome}  {title}")
