"""Shared fixtures: full-length training runs and lattice solutions.

Each trained artifact is built once per session and reused by the slow
tests and the acceptance suite.
"""
import sys
import time

import pytest

from dqndesign import oracle
from dqndesign.config import load_config
from dqndesign.dqn import train


def _run(profile):
    cfg = load_config(profile)
    t0 = time.perf_counter()
    artifact, log = train(cfg.env, cfg.training)
    seconds = time.perf_counter() - t0
    lat = oracle.build_lattice(cfg.env, cfg.oracle["price_nodes"], cfg.oracle["demand_nodes"],
                               cfg.oracle["coverage"])
    return {"config": cfg, "artifact": artifact, "log": log, "train_seconds": seconds,
            "solution": oracle.backward_induction(lat)}


@pytest.fixture(scope="session")
def price_t2_run():
    return _run("price_only_T2")


@pytest.fixture(scope="session")
def price_t3_run():
    return _run("price_only_T3")


@pytest.fixture(scope="session")
def demand_t3k2_run():
    return _run("price_demand_T3_K2")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
