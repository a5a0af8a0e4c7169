import numpy as np
import pytest
from _synth import synth_raw, write_uci

from biglittle.cli import main


def _runs(y, run=4):
    """Reorder class blocks into alternating runs of ``run`` windows."""
    per = np.bincount(y)[1:].max()
    return np.concatenate([np.flatnonzero(y == c)[r:r + run] for r in range(0, per, run) for c in range(1, 7)])


@pytest.fixture(scope="session")
def har_root(tmp_path_factory):
    """Small synthetic dataset in the public UCI-HAR layout."""
    root = tmp_path_factory.mktemp("ucihar")
    X_train, y_train = synth_raw((30,) * 6, seed=0)
    X_test, y_test = synth_raw((12,) * 6, seed=1)
    tr, te = _runs(y_train, 5), _runs(y_test)
    return write_uci(root, X_train[tr], y_train[tr], X_test[te], y_test[te])


@pytest.fixture(scope="session")
def prepared(har_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("prepared")
    assert main(["prepare", "--dataset", str(har_root), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def models_dir(prepared, tmp_path_factory):
    out = tmp_path_factory.mktemp("models")
    assert main(["train", "--dataset", str(prepared), "--model", "all", "--epochs", "6", "--seed", "1",
                 "--out", str(out)]) == 0
    return out


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by the test")
    config._criteria = {}


def pytest_collection_modifyitems(config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            n, text = mark.args
            config._criteria.setdefault(n, {"text": text, "outcomes": []})
            item.user_properties.append(("criterion", n))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when != "call" and not (report.failed or report.skipped):
        return
    reason = ""
    if report.skipped and isinstance(report.longrepr, tuple):
        reason = report.longrepr[2].removeprefix("Skipped: ")
    _CRITERIA_REPORTS.append((props["criterion"], report.outcome, reason))


_CRITERIA_REPORTS = []


def pytest_terminal_summary(terminalreporter, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    for n, outcome, reason in _CRITERIA_REPORTS:
        criteria[n]["outcomes"].append((outcome, reason))
    terminalreporter.section("acceptance criteria")
    for n in sorted(criteria):
        outcomes = criteria[n]["outcomes"]
        if not outcomes:
            continue
        if any(o == "failed" for o, _ in outcomes):
            verdict = "FAIL"
        elif any(o == "skipped" for o, _ in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        line = f"{verdict} criterion {n}: {criteria[n]['text']}"
        reasons = sorted({r for o, r in outcomes if r})
        if verdict == "SKIP" and reasons:
            line += f" ({'; '.join(reasons)})"
        terminalreporter.write_line(line)
