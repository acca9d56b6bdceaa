import os

from hypothesis import HealthCheck, settings

# derandomized by default so the suite is reproducible run to run;
# HYPOTHESIS_PROFILE=explore searches with fresh seeds
settings.register_profile("ci", derandomize=True, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("explore", max_examples=2000, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=str):
        terminalreporter.write_line(mod.RESULTS[key])
