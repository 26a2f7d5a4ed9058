import numpy as np
import pytest

from lhs.gmm import GmmModel


def random_gmm(rng, k, d=8, mode="rectangular"):
    w = rng.uniform(0.2, 1.0, k)
    return GmmModel(w / w.sum(), rng.normal(0, 3, (k, d)), rng.uniform(0.5, 4.0, (k, d)), mode)


def sample_gmm(model, n, rng):
    comp = rng.choice(model.n_components, size=n, p=model.weights)
    z = rng.standard_normal((n, model.dim))
    return model.means[comp] + z * np.sqrt(model.variances[comp])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_textures(tmp_path_factory):
    """Four small synthetic texture classes on disk with a manifest."""
    from lhs import harness
    out = tmp_path_factory.mktemp("textures")
    entries = harness.generate_synthetic_textures(out, count=8, size=32, seed=7)
    return out, entries


def fd_fisher(model, v, eps=1e-5):
    """Central differences of log_density w.r.t. each mean and each diagonal precision."""
    from lhs.gmm import log_density
    k, d = model.means.shape
    out = np.empty((k, 16))
    for j in range(k):
        for i in range(d):
            for block in (0, 1):
                vals = []
                for sign in (1, -1):
                    means = model.means.copy()
                    prec = 1.0 / model.variances
                    if block == 0:
                        step = eps * max(1.0, abs(means[j, i]))
                        means[j, i] += sign * step
                    else:
                        step = eps * prec[j, i]
                        prec[j, i] += sign * step
                    m = GmmModel(model.weights, means, 1.0 / prec, model.mode)
                    vals.append(log_density(m, v))
                out[j, block * 8 + i] = (vals[0] - vals[1]) / (2 * step)
    return out.ravel()


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL/SKIP line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::test_criterion_" not in getattr(rep, "nodeid", ""):
                continue
            if rep.when != "call" and not (outcome != "passed" and rep.when == "setup"):
                continue
            props = dict(rep.user_properties)
            name = rep.nodeid.split("::")[-1]
            detail = props.get("detail", "")
            if outcome == "skipped" and isinstance(rep.longrepr, tuple):
                detail = rep.longrepr[2]
            lines.append((name, outcome, detail))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    tags = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for name, outcome, detail in sorted(lines):
        terminalreporter.write_line(f"[{tags[outcome]}] {name}: {detail}")
