import numpy
import pytest
import pyspc


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow", action="store_true", default=False, help="run slow acceptance studies"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance study")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def pytest_report_header(config):
    headers = []
    headers.append("pyspc: {}".format(pyspc.__version__))
    headers.append("numpy: {}".format(numpy.__version__))
    return "\n".join(headers)
