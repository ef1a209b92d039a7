import numpy as np
import pytest
from hypothesis import strategies as st

from iaml.dataset import AnnotationRecord, UIElement
from iaml.geometry import BBox


@st.composite
def boxes(draw, min_size=1e-3):
    """Valid normalized boxes with sides of at least ``min_size``."""
    x0 = draw(st.floats(0.0, 1.0 - min_size))
    y0 = draw(st.floats(0.0, 1.0 - min_size))
    x1 = draw(st.floats(x0 + min_size, 1.0))
    y1 = draw(st.floats(y0 + min_size, 1.0))
    return BBox(x0, y0, x1, y1)


def random_box(rng, min_size=0.02) -> BBox:
    w, h = rng.uniform(min_size, 0.5, size=2)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return BBox(x0, y0, x0 + w, y0 + h)


def grid_iou(a: BBox, b: BBox, n: int = 1000) -> float:
    """IoU by counting cell centers of an ``n x n`` raster that fall in each box."""
    c = (np.arange(n) + 0.5) / n
    ina_x = (c >= a.x_min) & (c < a.x_max)
    ina_y = (c >= a.y_min) & (c < a.y_max)
    inb_x = (c >= b.x_min) & (c < b.x_max)
    inb_y = (c >= b.y_min) & (c < b.y_max)
    inter = (ina_x & inb_x).sum() * (ina_y & inb_y).sum()
    union = ina_x.sum() * ina_y.sum() + inb_x.sum() * inb_y.sum() - inter
    return inter / union if union else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_records(n=10, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        elems = []
        for j in range(rng.integers(1, 4)):
            w, h = rng.uniform(0.05, 0.3, 2)
            x0, y0 = rng.uniform(0, 1 - w), rng.uniform(0, 1 - h)
            elems.append(UIElement(["button", "text", "icon"][j % 3], BBox(x0, y0, x0 + w, y0 + h), f"e{j}"))
        out.append(AnnotationRecord(f"r{i}", elems, image_ref=f"img/{i}.png"))
    return out


_VERDICTS: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    _VERDICTS[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        status, title, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}" + (f"  [{detail}]" if detail else ""))
