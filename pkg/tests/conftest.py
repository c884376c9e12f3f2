import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**sections):
    """A few-second experiment: 6 subjects x 20 short epochs per domain."""
    from adast.config import ExperimentConfig, apply_overrides

    cfg = ExperimentConfig()
    base = {
        "synth.n_subjects": "6", "synth.epochs_per_subject": "20", "synth.epoch_len": "60",
        "synth.epoch_seconds": "6.0", "arch.epoch_len": "60", "arch.channels": "4,4,8",
        "arch.kernels": "5,3,3", "arch.strides": "2,1,1", "arch.disc_hidden": "8",
        "arch.cls_hidden": "8", "schedule.pretrain_epochs": "2", "schedule.epochs_per_round": "1",
        "schedule.batch_size": "16", "run.seeds": "0",
    }
    base.update({k: str(v) for k, v in sections.items()})
    problems = apply_overrides(cfg, base)
    assert not problems, problems
    return cfg


@pytest.fixture
def tiny():
    return tiny_config


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
