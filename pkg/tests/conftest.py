import numpy as np
import pytest

from erasebench.data import InteractionLog, build_dataset
from erasebench.models import ModelHyper
from erasebench.synthetic import make_synthetic_log


def random_log(rng, n_users=12, n_items=8, max_len=8, categories=("a", "b", None)):
    rows = []
    for u in range(n_users):
        n = int(rng.integers(2, max_len + 1))
        items = rng.choice(n_items, size=min(n, n_items), replace=False)
        for t, it in enumerate(items):
            cat = categories[int(it) % len(categories)]
            rows.append((f"u{u:03d}", f"i{int(it):03d}", t + 1, cat))
    return InteractionLog(rows)


@pytest.fixture
def tiny_ds():
    rng = np.random.default_rng(7)
    return build_dataset(random_log(rng, n_users=10, n_items=6), sensitive_categories={"a"})


@pytest.fixture(scope="session")
def small_ds():
    log = make_synthetic_log(n_users=150, n_items=60, mean_interactions=12, seed=3)
    return build_dataset(log, sensitive_categories={"alcohol"})


@pytest.fixture
def tiny_hyper():
    return ModelHyper(embedding_dim=2, layers=2, learning_rate=0.05, l2_reg=1e-3)


def derivative_fixture(kind, seed):
    """A model with at most 50 parameters plus a weighted sample set, for finite-difference checks."""
    from erasebench.models import BPRMF, LightGCN, SampleSet

    rng = np.random.default_rng(seed)
    log = random_log(rng, n_users=4, n_items=5, max_len=5)
    ds = build_dataset(log)
    hyper = ModelHyper(embedding_dim=3, layers=2, l2_reg=1e-2, init_std=0.5)
    cls = BPRMF if kind == "bpr_mf" else LightGCN
    kw = {"dataset": ds} if kind == "lightgcn" else {}
    model = cls(ds.user_count, ds.item_count, hyper, seed=seed, **kw)
    assert model.params.size <= 50
    n = 10
    users = rng.integers(0, ds.user_count, n)
    pos = rng.integers(0, ds.item_count, n)
    neg = (pos + rng.integers(1, ds.item_count, n)) % ds.item_count
    neg[rng.random(n) < 0.3] = -1
    coeffs = rng.normal(size=n)
    return model, SampleSet(users, pos, neg), coeffs


def fd_gradient(model, samples, coeffs, eps=1e-5):
    theta = model.params.values
    out = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = eps
        lp, _ = model.loss_grad(samples, coeffs, values=theta + e)
        lm, _ = model.loss_grad(samples, coeffs, values=theta - e)
        out[k] = (lp - lm) / (2 * eps)
    return out


def fd_hvp(model, samples, coeffs, v, eps=1e-5):
    theta = model.params.values
    _, gp = model.loss_grad(samples, coeffs, values=theta + eps * v)
    _, gm = model.loss_grad(samples, coeffs, values=theta - eps * v)
    return (gp - gm) / (2 * eps)


def max_rel_err(approx, exact):
    return float(np.max(np.abs(approx - exact)) / max(np.max(np.abs(exact)), 1e-12))


def quadratic_problem(seed, p=6, n_forget=2, n_retain=12, l2=0.05):
    """Ridge regression with rows ``0..n_forget-1`` to forget, trained to its exact optimum."""
    from erasebench.models import QuadraticModel, SampleSet

    rng = np.random.default_rng(seed)
    n = n_forget + n_retain
    x = rng.normal(size=(n, p))
    y = x @ rng.normal(size=p) + 0.3 * rng.normal(size=n)
    w_full = np.linalg.solve(x.T @ x + l2 * n * np.eye(p), x.T @ y)
    model = QuadraticModel(x, y, l2, w_full)
    rows = lambda idx: SampleSet(np.asarray(idx), np.zeros(len(idx), dtype=int), None)
    forget = rows(range(n_forget))
    retain = rows(range(n_forget, n))
    xr, yr = x[n_forget:], y[n_forget:]
    w_retrained = np.linalg.solve(xr.T @ xr + l2 * n_retain * np.eye(p), xr.T @ yr)
    return model, forget, retain, w_retrained


def dense_scif(model, forget, modified, retain, damping):
    """``theta - (H + damping I)^-1 g`` for the SCIF objective, by dense linear algebra."""
    samples = forget.concat(modified).concat(retain)
    denom = 2 * len(forget) + len(retain)
    c = np.concatenate([-np.ones(len(forget)), np.ones(len(modified)), np.ones(len(retain))]) / denom
    _, g = model.loss_grad(samples, c)
    h = model.hessian(samples, c) + damping * np.eye(model.params.size)
    return model.params.values - np.linalg.solve(h, g), h


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
