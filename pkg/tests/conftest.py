import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--full-scale",
        action="store_true",
        default=False,
        help="run the full-scale reference reproduction (hours of CPU)",
    )


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "full_scale: full-scale reproduction jobs gated behind --full-scale"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full-scale"):
        return
    skip = pytest.mark.skip(reason="pass --full-scale to run full-scale reproductions")
    for item in items:
        if "full_scale" in item.keywords:
            item.add_marker(skip)
