import numpy as np
import pytest

from geofactor.model import ItemConstraint, LoadingStructure, ModelSpec, PriorSpec


def one_factor_spec(q, *, spatial=True, logphi_mean=np.log(0.3), sign_first=True, p=0,
                    sign_mode="soft", **prior_kw):
    """m = 1 model with the first loading sign-constrained."""
    cons = [ItemConstraint(np.zeros(1), np.ones(1, dtype=int),
                           ("positive",) if (sign_first and j == 0) else ("free",))
            for j in range(q)]
    loading = LoadingStructure(np.array([[1 if spatial else 0]]))
    if not spatial:
        loading = LoadingStructure(np.array([[1]]))
    pr = PriorSpec.default(cons, loading, p, logphi_mean=[logphi_mean], **prior_kw)
    return ModelSpec(m=1, constraints=cons, loading=loading, priors=pr, sign_mode=sign_mode)


def two_factor_spec(q, *, p=0, pattern=((1,), (0,)), logphi_mean=np.log(0.3), **prior_kw):
    """m = 2 confirmatory model: item 0 loads on factor 0 only (rotation),
    items 0 and 1 carry positive signs on factors 0 and 1 (reflection)."""
    cons = []
    for j in range(q):
        if j == 0:
            cons.append(ItemConstraint(np.zeros(2), np.array([1, 0]), ("positive", "free")))
        elif j == 1:
            cons.append(ItemConstraint(np.zeros(2), np.array([1, 1]), ("free", "positive")))
        else:
            cons.append(ItemConstraint.free(2))
    loading = LoadingStructure(np.array(pattern))
    pr = PriorSpec.default(cons, loading, p, logphi_mean=[logphi_mean] * loading.g, **prior_kw)
    return ModelSpec(m=2, constraints=cons, loading=loading, priors=pr)


def mc_se(x, axis=0):
    x = np.asarray(x, dtype=float)
    return x.std(axis=axis, ddof=1) / np.sqrt(x.shape[axis])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion in the terminal summary

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _ACCEPTANCE[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"[{status}] {number:>2}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
