from __future__ import annotations

from pathlib import Path

import pytest

from scale_mt import load_language_registry, load_pool, parse_language_tag

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = Path(__file__).parent.parent / "goldens"
SCHEMAS = Path(__file__).parent.parent / "schemas"


@pytest.fixture(scope="session")
def registry():
    return load_language_registry()


@pytest.fixture(scope="session")
def tags(registry):
    return {code: parse_language_tag(code, registry) for code in registry}


@pytest.fixture()
def xho_pool():
    return load_pool(str(FIXTURES / "pool_xho_eng.jsonl"))


@pytest.fixture()
def lao_pool():
    return load_pool(str(FIXTURES / "pool_lao_deu.jsonl"))
