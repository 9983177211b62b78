"""Shared desk-scale training runs, trained lazily once per session."""

import functools
import statistics

import pytest

from cisnet.evaluation import detection_error
from cisnet.experiments import DESK_EPOCHS, desk_network, desk_task, run
from cisnet.layers import BI_VALUED, SublinearConfig, TruncationConfig
from cisnet.train import TrainConfig, pair_scores, train_curriculum

SEEDS = (0, 1, 2)
VARIANTS = {
    "spl": {},
    "avg": {"spl": SublinearConfig(1.0, 1.0, 2)},
    "btl": {"truncation": TruncationConfig(5.0, BI_VALUED)},
}

ACCEPTANCE: dict[int, str] = {}


class DeskRuns:
    @functools.cache
    def task(self, seed, payload=0.4):
        return desk_task(payload=payload, seed=seed)

    @functools.cache
    def run(self, variant, seed):
        net_cfg = desk_network(seed, **VARIANTS[variant])
        return run(self.task(seed), net_cfg, TrainConfig(seed=seed), DESK_EPOCHS)

    @functools.cache
    def curriculum_pe(self, seed):
        data = {p: self.task(seed, p).train for p in (0.5, 0.4)}
        cks = train_curriculum([0.5, 0.4], data, desk_network(seed), TrainConfig(seed=seed), DESK_EPOCHS)
        net = cks[-1].restore().net
        return detection_error(*pair_scores(net, self.task(seed).test)).pe

    def median_test_pe(self, variant):
        return statistics.median(self.run(variant, s).test_pe for s in SEEDS)


@pytest.fixture(scope="session")
def desk():
    return DeskRuns()


@pytest.fixture
def report(capsys):
    """Print and record one pass/fail line for an acceptance criterion."""
    def emit(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
