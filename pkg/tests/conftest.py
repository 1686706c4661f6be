from __future__ import annotations

import pytest

from specharness.execpool import RunnerPoolConfig, start_pool

from util import runner_command


@pytest.fixture(scope="session")
def pool():
    config = RunnerPoolConfig(runner_launch_command=runner_command(), pool_size=2)
    with start_pool(config) as handle:
        yield handle


@pytest.fixture()
def fresh_pool():
    """Per-test pool for tests that kill or hang workers."""
    config = RunnerPoolConfig(runner_launch_command=runner_command(), pool_size=1, max_restarts=4)
    with start_pool(config) as handle:
        yield handle
