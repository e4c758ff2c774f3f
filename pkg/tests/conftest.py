import numpy as np
import pytest

from owrlab.datagen import apply_domain_dataset, build_schedule, default_domains, generate_benchmark

# criterion id -> (passed, detail), filled in by tests/test_acceptance.py
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def benchmark():
    """Default 20-class benchmark rendered in all three domains."""
    clean = generate_benchmark(20, 4, 20, seed=0)
    return {spec.domain_id: apply_domain_dataset(clean, spec, 0) for spec in default_domains()}


@pytest.fixture(scope="session")
def default_schedule():
    return build_schedule(range(20), 0.5, 4, 2, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(CRITERIA):
        passed, detail = CRITERIA[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
