from pathlib import Path

import numpy as np
import pytest

from diabnet.data import PIMA_SCHEMA, Dataset, Schema, load_csv

ROOT = Path(__file__).resolve().parent.parent
PIMA_CSV = ROOT / "data" / "pima.csv"


@pytest.fixture(scope="session")
def pima():
    return load_csv(PIMA_CSV, PIMA_SCHEMA)


def toy_dataset(features, labels, names=None):
    features = np.asarray(features, dtype=float)
    if names is None:
        names = tuple(f"f{i}" for i in range(features.shape[1]))
    return Dataset(features, labels, Schema(tuple(names), "y"))


@pytest.fixture
def make_dataset():
    return toy_dataset


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.VERDICTS, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
