import numpy as np
import pytest
from hypothesis import settings

from neuroauth.dsp import BandpassSpec, WindowSpec, apply_filter, design_bandpass, segment_windows
from neuroauth.features import FeatureMatrix, build_feature_matrix
from neuroauth.ingest import SyntheticSpec, generate_synthetic

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def featurize(records, window=WindowSpec()) -> FeatureMatrix:
    filt = design_bandpass(BandpassSpec())
    return build_feature_matrix([segment_windows(apply_filter(filt, r), window)
                                 for r in records])


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(n_users=4, n_sessions=9, session_seconds=4.0, seed=3)


@pytest.fixture(scope="session")
def small_records(small_spec):
    return generate_synthetic(small_spec)


@pytest.fixture(scope="session")
def small_features(small_records):
    """4 users x 9 sessions x 4 s of synthetic EEG, featurised with the defaults."""
    return featurize(small_records)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# Acceptance reporting: one line per numbered criterion in the terminal summary.

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        if rep.skipped:
            detail = str(rep.longrepr[2]) if isinstance(rep.longrepr, tuple) else detail
        _ACCEPTANCE[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
