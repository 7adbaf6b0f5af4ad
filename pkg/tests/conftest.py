import sys

import numpy as np
import pytest

from ecogcrit.dataset import Dataset, Electrode, EsmEvent, Outcome, Recording, Subject, Trial


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_minimal_dataset(n_electrodes=4, n_trials=2, fs=512.0, T=2048, seed=0) -> Dataset:
    """One subject, one task; electrode 3 untested, (0,1) arrest, (1,2) no arrest."""
    r = np.random.default_rng(seed)
    sid = "P01"
    electrodes = tuple(Electrode(i, sid, i % 26, True) for i in range(n_electrodes))
    samples = r.standard_normal((n_electrodes, T)).astype(np.float32)
    rec = Recording(sid, "AR", samples, fs)
    onsets = [256 + 512 * k for k in range(n_trials)]
    trials = tuple(Trial(k, "AR", f"w{k}", o) for k, o in enumerate(onsets))
    esm = (EsmEvent(0, 1, Outcome.ARREST), EsmEvent(1, 2, Outcome.NO_ARREST))
    subject = Subject(sid, electrodes, {"AR": rec}, {"AR": trials}, esm)
    return Dataset(fs, ("AR",), (subject,))


@pytest.fixture
def minimal_dataset():
    return make_minimal_dataset()


def pytest_terminal_summary(terminalreporter):
    """Print one pass/fail line per acceptance criterion that ran."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: (not k.isdigit(), int(k) if k.isdigit() else 0, k)):
        ok, detail = lines[key]
        label = f"criterion {key}" if key.isdigit() else key
        terminalreporter.write_line(f"{label}: {'PASS' if ok else 'FAIL'}  {detail}")
