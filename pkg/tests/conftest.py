import json

import pytest

from actipol import default_fixture_path, load_default_policies
from actipol.orchestration import ContinuityConfig, Engine
from actipol.store import DependencyStore


@pytest.fixture(scope="session")
def policies():
    return load_default_policies()


@pytest.fixture
def farm_world():
    return json.loads(default_fixture_path().read_text())


@pytest.fixture
def farm_store(farm_world):
    return DependencyStore.from_dict(farm_world)


@pytest.fixture
def make_engine(policies):
    engines = []

    def build(world, continuity=ContinuityConfig(10, 5), depth=2):
        store = world if isinstance(world, DependencyStore) else DependencyStore.from_dict(world)
        engine = Engine(policies, store, continuity, depth)
        engines.append(engine)
        return engine

    yield build
    for e in engines:
        e.shutdown()


def world(activities, deps=(), chains=()):
    """Compact fixture builder: activities as (id, state, mutable) tuples."""
    return {
        "activities": [{"id": a, "state": s, "mutable": m} for a, s, m in activities],
        "dependencies": [
            {"subject": s, "phase": p, "dependent": d, "desired_state": w} for s, p, d, w in deps
        ],
        "transition_dependencies": [
            {"activity": a, "target_state": t, "requirements": [{"activity": r, "state": rs} for r, rs in reqs]}
            for a, t, reqs in chains
        ],
    }


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
