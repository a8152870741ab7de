import sys
import time

import pytest

from daefusion.architecture import ModelConfig
from daefusion.training import TrainConfig, train


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)

LEARNABILITY_SEEDS = tuple(range(10))


def learnability_config(seed):
    """The 32x32 two-class reference setup shared by several tests."""
    return TrainConfig(
        model=ModelConfig(image_size=32, embed_dims=(16, 32, 64), seed=seed),
        steps=500, lr=0.05, momentum=0.9, weight_decay=1e-4,
        target_dsc=0.90, eval_every=25)


@pytest.fixture(scope="session")
def learnability_runs():
    """Ten seeded training runs with early stopping; minutes of work, so
    computed once per session and shared by every consumer."""
    runs = []
    for seed in LEARNABILITY_SEEDS:
        t0 = time.perf_counter()
        result = train(learnability_config(seed))
        runs.append({
            "seed": seed,
            "dsc": result.report.dsc,
            "steps": result.final_step,
            "history": result.history,
            "seconds": time.perf_counter() - t0,
        })
    return runs
