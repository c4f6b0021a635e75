from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from mgcvae.molgraph import DEFAULT_SCHEMA, decode_matrix

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


def corpus_rows(name: str = "zinc16.smi") -> list[tuple[str, float, float]]:
    text = resources.files("mgcvae").joinpath(f"data/{name}").read_text(encoding="utf-8")
    rows = []
    for line in text.splitlines():
        if line.startswith("#") or not line.strip():
            continue
        smi, lp, mr = line.split("\t")
        rows.append((smi, float(lp), float(mr)))
    return rows


@pytest.fixture(scope="session")
def zinc_rows():
    return corpus_rows()


@pytest.fixture(scope="session")
def zinc_sample(zinc_rows):
    rng = np.random.default_rng(7)
    idx = rng.choice(len(zinc_rows), size=300, replace=False)
    return [zinc_rows[i][0] for i in sorted(idx)]


def random_graph(seed: int, density: float = 0.7):
    """A valid graph obtained by decoding a seeded random matrix."""
    rng = np.random.default_rng(seed)
    raw = rng.random((DEFAULT_SCHEMA.S, DEFAULT_SCHEMA.width))
    a0 = 1 + DEFAULT_SCHEMA.A
    raw[:, a0:] *= density + 0.35
    return decode_matrix(raw)


graphs = st.integers(0, 2**32 - 1).map(random_graph)


# -- acceptance summary -------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    props = dict(report.user_properties)
    n = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
    _CRITERIA[n] = ("PASS" if report.passed else "FAIL", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
