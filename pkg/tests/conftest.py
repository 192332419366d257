import os
import sys

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_models():
    """A quickly trained clone pair on two scenarios, for evaluation plumbing tests."""
    from modeswitch.evaluation import PolicySet
    from modeswitch.experts import collect_demonstrations
    from modeswitch.il import ILConfig, train_il_baseline, train_low_level
    from modeswitch.scenarios import ScenarioId, load_catalog

    cat = load_catalog()
    sids = [ScenarioId.HALTING_CAR, ScenarioId.CROSS_TRAFFIC]
    data = [collect_demonstrations(m, sids, 60, seed=3) for m in (1, 2)]
    cfg = ILConfig(max_epochs=15, seed=2)
    low, _ = train_low_level(data, cat, cfg)
    il, _ = train_il_baseline(data, cat, cfg)
    return PolicySet(low_net=low, il_net=il, catalog=cat)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
