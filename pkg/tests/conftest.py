import numpy as np
import pytest

from vecurve.trial_data import Subject, TrialDataset


def random_dataset(rng, n=100, n_strata=1, rate=0.3, max_time=12.0, integer_times=False):
    """Small random recurrent-event dataset with both arms in every stratum."""
    subjects = []
    for i in range(n):
        arm = i % 2
        censor = float(rng.uniform(1.0, max_time))
        k = rng.poisson(rate * censor * (0.5 if arm else 1.0))
        times = np.sort(rng.uniform(0.0, censor, size=k))
        if integer_times:
            censor = float(np.ceil(censor))
            times = np.unique(np.ceil(times))
        times = times[times > 0]
        subjects.append(Subject(f"p{i}", arm, str((i // 2) % n_strata), censor, tuple(times)))
    return TrialDataset.from_subjects(subjects)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def fixture100(rng):
    return random_dataset(rng, 100)


class StudyRun(dict):
    """Scenario id -> StudySummary, plus the wall time of the run."""

    elapsed = float("nan")


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def full_study():
    """All built-in scenarios at 1000 replicates (about two minutes)."""
    import time

    from vecurve.study_runner import run_table1_study

    start = time.perf_counter()
    run = StudyRun((s.scenario_id, s) for s in run_table1_study(1000, base_seed=7))
    run.elapsed = time.perf_counter() - start
    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
