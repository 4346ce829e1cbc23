"""
    conftest.py for tt_aggregation.

    The test classes are unittest.TestCase subclasses; the fixture below hands
    them a fresh temporary directory through ``self.tmp``. Read more under:
    - https://docs.pytest.org/en/stable/how-to/unittest.html
"""

import pytest


@pytest.fixture
def tmp_dir(request, tmp_path):
    request.cls.tmp = tmp_path
