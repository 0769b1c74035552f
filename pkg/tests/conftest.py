from pathlib import Path

import hypothesis
import numpy as np
import pytest

from app.models.data_loader import points_to_csv, series_to_csv
from app.models.graph import GeoPoint, build_adjacency
from app.models.synthetic import diffusion_panel, sample_sites

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False)
hypothesis.settings.load_profile("ci")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training experiments, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# ----------------- спільні дані -----------------

@pytest.fixture
def four_sites():
    """Чотири паркінги: St1-St2 ~0.2 км, St3 далеко, St4 поруч зі St3."""
    return [
        GeoPoint(lat=34.0150, lon=-118.4960, site_id="St2"),
        GeoPoint(lat=34.0168, lon=-118.4960, site_id="St1"),
        GeoPoint(lat=34.0300, lon=-118.4700, site_id="St3"),
        GeoPoint(lat=34.0305, lon=-118.4705, site_id="St4"),
    ]


@pytest.fixture
def synthetic_graph():
    return build_adjacency(sample_sites(8, seed=3), epsilon=0.35)


@pytest.fixture
def synthetic_panel(synthetic_graph):
    return diffusion_panel(synthetic_graph.normalized, synthetic_graph.site_ids, steps=400, seed=5)


@pytest.fixture
def dataset_files(tmp_path: Path, synthetic_graph, synthetic_panel):
    """Координати й ряди на диску, як їх пише `synth`."""
    coords = tmp_path / "sites.csv"
    series = tmp_path / "series.csv"
    coords.write_text(points_to_csv(synthetic_graph.nodes), encoding="utf-8")
    series.write_text(series_to_csv(synthetic_panel), encoding="utf-8")
    return coords, series
