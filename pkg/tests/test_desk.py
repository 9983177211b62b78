"""Desk-scale training properties over the shared three-seed runs."""

import math
import statistics

import pytest

from conftest import SEEDS


def test_losses_finite(desk):
    for variant in ("spl", "avg", "btl"):
        for s in SEEDS:
            losses = desk.run(variant, s).trainer.step_losses
            assert all(math.isfinite(v) for v in losses), (variant, s)


@pytest.mark.xfail(strict=True, reason="on the synthetic desk task STL's fifth-epoch loss is lower in only "
                                       "one of three seeds (see decision ledger)")
def test_stl_trains_no_slower_than_btl(desk):
    # loss of the last (fifth) epoch, same seeds and data
    wins = sum(desk.run("spl", s).losses[-1] <= desk.run("btl", s).losses[-1] for s in SEEDS)
    assert wins >= 2


def test_curriculum_not_worse_than_scratch(desk):
    curriculum = statistics.median(desk.curriculum_pe(s) for s in SEEDS)
    scratch = desk.median_test_pe("spl")
    assert curriculum <= scratch + 0.02
