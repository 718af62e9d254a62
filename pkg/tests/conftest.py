import os

import pytest


@pytest.fixture(scope="session")
def data_dir():
    path = os.path.join(os.path.dirname(__file__), os.pardir, "data")
    return os.path.abspath(path)
