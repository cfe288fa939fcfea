import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, ROOT)

from main import create_app  # noqa: E402

FIXTURE_DIR = os.path.join(ROOT, 'fixtures')


@pytest.fixture
def app():
    app = create_app({'TESTING': True, 'FIXTURE_DIR': FIXTURE_DIR})
    with app.app_context():
        yield app


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture
def fixture_path():
    def _path(name):
        return os.path.join(FIXTURE_DIR, name)
    return _path


@pytest.fixture
def fixture_dir():
    return FIXTURE_DIR
