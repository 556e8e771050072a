import os
from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")

TESTS_DIR = Path(__file__).parent


@pytest.fixture(scope="session")
def fuzz_corpus_dir() -> Path:
    return TESTS_DIR / "fuzz_corpus"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return TESTS_DIR / "data"


@pytest.fixture(scope="session")
def artifact_cache(tmp_path_factory) -> Path:
    """Directory for expensive trained artifacts shared across tests.

    Defaults to a repo-local build dir so repeated test runs reuse trained
    stages; set CMG_TEST_CACHE=tmp to force a cold cache.
    """
    if os.environ.get("CMG_TEST_CACHE") == "tmp":
        return tmp_path_factory.mktemp("cmg-cache")
    path = TESTS_DIR.parent / "build" / "test-cache"
    path.mkdir(parents=True, exist_ok=True)
    return path
