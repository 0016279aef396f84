from __future__ import annotations

from pathlib import Path

import pytest

from querydesk.store import AnalyticsStore, default_org, load_dataset, standard_catalog
from querydesk.targets import Principal

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


@pytest.fixture(scope="session")
def catalog():
    return standard_catalog()


@pytest.fixture(scope="session")
def org():
    return default_org()


@pytest.fixture(scope="session")
def smoke_dataset():
    return load_dataset(FIXTURES / "smoke")


@pytest.fixture(scope="session")
def smoke_store(smoke_dataset):
    return AnalyticsStore(smoke_dataset)


@pytest.fixture(scope="session")
def admin(org):
    return Principal.for_subtrees("admin", org, org.roots(), capabilities=("unmasked",))


@pytest.fixture(scope="session")
def manager(org):
    return Principal.for_subtrees("manager", org, ["t-01"], capabilities=("unmasked",))


@pytest.fixture(scope="session")
def masked_analyst(org):
    return Principal.for_subtrees("analyst", org, ["t-01"])


@pytest.fixture(scope="session")
def support_lead(org):
    return Principal.for_subtrees("support-lead", org, ["t-02"], capabilities=("unmasked",))
