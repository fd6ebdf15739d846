from __future__ import annotations

import pytest

from tcfprobe.corpus import Corpus, bundled_fixture_path, load_resource


@pytest.fixture(scope="session")
def mini_corpus() -> Corpus:
    return load_resource(bundled_fixture_path())
