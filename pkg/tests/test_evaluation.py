import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erasebench.core_math import ContractViolation
from erasebench.evaluation import (
    MetricsReport,
    UndefinedMetric,
    aggregate,
    build_report,
    deployable,
    eval_threads,
    ranking_metrics,
    rel_eff,
    rel_eff_from,
    rel_items,
    sensitive_at_k,
    speedup,
    utility,
)
from erasebench.models.base import RecModel
from erasebench.scenarios import gen_sensitive_requests
from erasebench.unlearn import StepOutcome, Trajectory, TrajectoryStep


class TableModel(RecModel):
    """Scores come from a fixed user x item matrix."""

    kind = "table"

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.user_count, self.item_count = self.scores.shape

    def score_users(self, users):
        return self.scores[np.asarray(list(users), dtype=np.int64)]


def traj_of(model, statuses, seconds=0.5):
    t = Trajectory("x", model=model)
    for k, s in enumerate(statuses):
        t.steps.append(TrajectoryStep(k, StepOutcome(None, s, seconds), k + 1))
    return t


# -- ranking ----------------------------------------------------------------

def test_perfect_ranking():
    assert ranking_metrics([3, 1, 2], {3}, 1) == (1.0, 1.0, 1.0)


def test_second_position_discount():
    ndcg, recall, hit = ranking_metrics([5, 3], {3}, 2)
    assert ndcg == pytest.approx(1 / math.log2(3))
    assert ndcg == pytest.approx(0.6309, abs=1e-4)
    assert (recall, hit) == (1.0, 1.0)


def test_recall_capped_by_k():
    ndcg, recall, hit = ranking_metrics([0, 1, 2, 9], {0, 1, 2, 3, 4}, 3)
    assert recall == pytest.approx(3 / 5)
    assert ndcg == pytest.approx(1.0)
    assert hit == 1.0


def test_empty_relevant_is_zero():
    assert ranking_metrics([0, 1], set(), 2) == (0.0, 0.0, 0.0)


def test_miss_is_zero():
    assert ranking_metrics([0, 1], {7}, 2) == (0.0, 0.0, 0.0)


def test_ranking_rejects_bad_input():
    with pytest.raises(ValueError):
        ranking_metrics([0], {0}, 0)
    with pytest.raises(ContractViolation):
        ranking_metrics([0, 0], {0}, 2)


@settings(max_examples=200, deadline=None)
@given(st.permutations(list(range(12))), st.sets(st.integers(0, 11), min_size=1))
def test_recall_hit_monotone_in_k(ranked, relevant):
    prev = (0.0, 0.0)
    for k in range(1, 13):
        ndcg, recall, hit = ranking_metrics(ranked, relevant, k)
        assert 0.0 <= ndcg <= 1.0 + 1e-12
        assert recall >= prev[0] and hit >= prev[1]
        prev = (recall, hit)


# -- utility / sensitive ----------------------------------------------------

def test_utility_excludes_train_items(tiny_ds):
    # a model that scores train items highest must not get credit for them
    scores = np.zeros((tiny_ds.user_count, tiny_ds.item_count))
    for u in range(tiny_ds.user_count):
        scores[u, tiny_ds.seen_items(u)] = 10.0
        for it in tiny_ds.test.get(u, ()):
            scores[u, it] = 5.0
    out = utility(TableModel(scores), tiny_ds, (1,))
    assert out[1]["hit"] == pytest.approx(1.0)
    assert out[1]["ndcg"] == pytest.approx(1.0)


def test_utility_permutation_invariant(small_ds):
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(small_ds.user_count, small_ds.item_count))
    a = utility(TableModel(scores), small_ds, (10, 20))
    rev = dict(reversed(list(small_ds.test.items())))
    b = utility(TableModel(scores), small_ds, (20, 10), test=rev)
    for k in (10, 20):
        for name in ("ndcg", "recall", "hit"):
            assert a[k][name] == b[k][name]


def test_threads_give_same_utility(small_ds, monkeypatch):
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(small_ds.user_count, small_ds.item_count))
    monkeypatch.setenv("ERASEBENCH_THREADS", "1")
    one = utility(TableModel(scores), small_ds, (10,))
    monkeypatch.setenv("ERASEBENCH_THREADS", "4")
    assert eval_threads() == 4
    import erasebench.evaluation as ev

    orig = ev.topk_lists
    monkeypatch.setattr(ev, "topk_lists", lambda m, u, k, d, chunk=512: orig(m, u, k, d, chunk=7))
    four = utility(TableModel(scores), small_ds, (10,))
    assert one == four
    monkeypatch.setenv("ERASEBENCH_THREADS", "junk")
    assert eval_threads() == 1


def test_sensitive_at_k_examples(tiny_ds):
    n_u, n_i = tiny_ds.user_count, tiny_ds.item_count
    scores = np.tile(np.arange(n_i, dtype=float), (n_u, 1))
    model = TableModel(scores)
    users = [0, 1]
    top = [model.predict_topk(u, 1, dataset=tiny_ds)[0] for u in users]
    assert sensitive_at_k(model, users, {top[0]}, 1, tiny_ds) in (0.5, 1.0)
    assert sensitive_at_k(model, users, set(top), 1, tiny_ds) == 1.0
    assert sensitive_at_k(model, users, set(), 1, tiny_ds) == 0.0
    with pytest.raises(ContractViolation):
        sensitive_at_k(model, [], {0}, 1, tiny_ds)


def test_sensitive_at_k_bounds(small_ds):
    rng = np.random.default_rng(2)
    for _ in range(5):
        model = TableModel(rng.normal(size=(small_ds.user_count, small_ds.item_count)))
        users = rng.choice(small_ds.user_count, 10, replace=False)
        items = rng.choice(small_ds.item_count, 5, replace=False)
        vals = [sensitive_at_k(model, users, items, k, small_ds) for k in (1, 5, 20)]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert vals == sorted(vals)


def test_rel_items_identity_is_zero(small_ds):
    model = TableModel(np.random.default_rng(3).normal(size=(small_ds.user_count, small_ds.item_count)))
    assert rel_items(model, model, range(20), range(10), 10, small_ds) == 0.0


def test_rel_eff_examples(small_ds):
    assert rel_eff_from(0.55, 0.50) == pytest.approx(0.10)
    assert rel_eff_from(0.0, 0.3) == -1.0
    with pytest.raises(UndefinedMetric):
        rel_eff_from(0.2, 0.0)
    model = TableModel(np.random.default_rng(4).normal(size=(small_ds.user_count, small_ds.item_count)))
    assert rel_eff(model, model, 20, small_ds) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(1e-6, 1))
def test_rel_eff_lower_bound(nu, nr):
    assert rel_eff_from(nu, nr) >= -1.0


def test_speedup_and_deployable():
    assert speedup(100.0, 0.05) == pytest.approx(2000.0)
    with pytest.raises(ValueError):
        speedup(1.0, 0.0)
    assert deployable(1000.0, -0.01)
    assert not deployable(999.0, 0.0)
    assert not deployable(5000.0, -0.011)


def test_aggregate():
    assert aggregate([1.0]) == (1.0, 0.0)
    mean, std = aggregate([1.0, 2.0, 3.0, None])
    assert mean == 2.0 and std == pytest.approx(1.0)
    assert all(math.isnan(x) for x in aggregate([None]))


# -- report -----------------------------------------------------------------

@pytest.fixture
def sens_setup(small_ds):
    sc = gen_sensitive_requests(small_ds, budget_fraction=0.02, seed=0)
    rng = np.random.default_rng(5)
    shape = (small_ds.user_count, small_ds.item_count)
    return sc, TableModel(rng.normal(size=shape)), TableModel(rng.normal(size=shape))


def test_report_ok(small_ds, sens_setup):
    sc, orig, retr = sens_setup
    unl = TableModel(orig.scores + 0.01)
    rep = build_report(orig, retr, traj_of(unl, ["ok", "ok"]), sc, small_ds, (20, 10), retrain_seconds=100.0)
    assert rep.status == "ok" and rep.ks == [10, 20]
    for k in rep.ks:
        assert rep.rel_items_at_k[k] == pytest.approx(rep.sensitive_retrained[k] - rep.sensitive_at_k[k])
        assert rep.rel_eff_at_k[k] == pytest.approx(rep.utility[k]["ndcg"] / rep.retrained_utility[k]["ndcg"] - 1)
    assert rep.timing["unlearn_total_s"] == 1.0
    assert rep.timing["unlearn_avg_per_request_s"] == 0.5
    assert rep.timing["speedup"] == pytest.approx(100.0)
    assert rep.deployable is False


def test_report_identical_models(small_ds, sens_setup):
    sc, orig, _ = sens_setup
    rep = build_report(orig, orig, traj_of(orig, ["ok"]), sc, small_ds, (10, 20), 1.0)
    assert all(v == 0.0 for v in rep.rel_eff_at_k.values())
    assert all(v == 0.0 for v in rep.rel_items_at_k.values())


def test_report_diverged_has_no_unlearned_numbers(small_ds, sens_setup):
    sc, orig, retr = sens_setup
    rep = build_report(orig, retr, traj_of(orig, ["ok", "diverged"]), sc, small_ds, (10,), 5.0)
    assert rep.status == "div."
    assert rep.utility == {} and rep.rel_eff_at_k == {} and rep.sensitive_at_k == {}
    assert rep.retrained_utility and rep.deployable is None
    rep = build_report(orig, retr, traj_of(orig, ["not_applicable"]), sc, small_ds, (10,), 5.0)
    assert rep.status == "n/a"


def test_report_empty_trajectory_uses_original(small_ds, sens_setup):
    sc, orig, retr = sens_setup
    rep = build_report(orig, retr, traj_of(None, []), sc, small_ds, (10,), 5.0)
    base = build_report(orig, retr, traj_of(orig, ["ok"], seconds=0.0), sc, small_ds, (10,), 5.0)
    assert rep.status == "ok"
    assert rep.utility == base.utility
    assert rep.timing["speedup"] is None and rep.timing["unlearn_avg_per_request_s"] == 0.0


def test_report_vocabulary_mismatch(small_ds, sens_setup):
    sc, orig, _ = sens_setup
    with pytest.raises(ContractViolation):
        build_report(orig, TableModel(np.zeros((3, 3))), None, sc, small_ds)


def test_report_flat_round_trip(small_ds, sens_setup):
    sc, orig, retr = sens_setup
    rep = build_report(orig, retr, traj_of(orig, ["ok"]), sc, small_ds, (10, 20), 3.0)
    back = MetricsReport.from_flat(rep.to_flat())
    assert back.to_flat() == rep.to_flat()
    assert rep.to_json() == back.to_json()
