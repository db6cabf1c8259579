from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_RUNS: dict = {}


def cached_experiment(spec):
    """Run ``spec`` once per session.

    Replications are seeded independently, so a request for fewer
    replications than an earlier run with otherwise equal settings is
    answered by summarising the leading replications of that run.
    """
    from dataclasses import replace

    from tvarcp.harness import run_experiment, summarise

    key = replace(spec, replications=1, threads=1)
    have = _RUNS.get(key)
    if have is None or len(have.replications) < spec.replications:
        have = run_experiment(spec, spec.threads)
        _RUNS[key] = have
    if len(have.replications) == spec.replications:
        return have
    return summarise(spec, have.replications[: spec.replications])


@pytest.fixture(scope="session")
def experiment():
    return cached_experiment


_SUMMARY: list = []


def record_criterion(line: str):
    print(line)
    _SUMMARY.append(line)


def pytest_terminal_summary(terminalreporter):
    if _SUMMARY:
        terminalreporter.section("acceptance criteria")
        for line in _SUMMARY:
            terminalreporter.write_line(line)
