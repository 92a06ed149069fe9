from pathlib import Path

import pytest

from segloop.fixtures import confidnet_fixture, toy_fixture

CACHE_DIR = Path(__file__).parent / ".fixture_cache"


@pytest.fixture(scope="session")
def binary_bundle():
    """Pretrained binary-toy checkpoint plus scenes; cached across runs.

    The bundle's master model must never be mutated — tests that train or
    refine take ``bundle.fresh_model()`` clones.
    """
    return toy_fixture("binary", cache_dir=CACHE_DIR)


@pytest.fixture(scope="session")
def confidnet_head(binary_bundle):
    """Confidence head trained against the cached checkpoint."""
    return confidnet_fixture(binary_bundle, cache_dir=CACHE_DIR)
