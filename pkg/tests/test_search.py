"""Search algorithms: textbook cases, oracle comparisons, determinism, robustness."""

import numpy as np
import pytest

import coptdesign as cd
from coptdesign.design import INFEASIBLE, is_infeasible
from coptdesign.errors import ConfigError, InfeasibleError
from coptdesign.search import greedy_search, local_search, reverse_greedy_search

from conftest import iid_problem, random_cluster_problem


def cfg(m, **kw):
    return cd.SearchConfig(m=m, **kw)


def test_iid_all_algorithms_reach_the_textbook_optimum():
    problem = iid_problem(8)
    rng = np.random.default_rng(0)
    for search in (local_search, greedy_search, reverse_greedy_search):
        state, _ = search(problem, cfg(4), np.random.default_rng(1))
        assert state.size == 4
        assert state.value() == pytest.approx(0.25)
    ids, value = cd.brute_force_best(problem, 4)
    assert value == pytest.approx(0.25)


def test_returned_designs_have_requested_size(rng):
    problem = random_cluster_problem(rng, per_cell=2, unit="cell")
    for algorithm in ("local", "greedy", "reverse_greedy"):
        report = cd.multi_start(problem, cfg(4, algorithm=algorithm, starts=2, seed=3))
        assert len(report.best_ids) == 4


def test_local_search_trace_strictly_decreases(rng):
    problem = random_cluster_problem(rng, n_clusters=6, per_cell=2, unit="cell")
    state, trace = local_search(problem, cfg(5, verify_moves=True), np.random.default_rng(5))
    for a, b in zip(trace, trace[1:]):
        assert b < a


def test_local_search_matches_brute_force_on_miniatures(rng):
    hits = 0
    for k in range(10):
        problem = random_cluster_problem(rng, per_cell=int(rng.integers(1, 3)), unit="cell")
        report = cd.multi_start(problem, cfg(4, algorithm="local", starts=10, seed=k))
        _, best = cd.brute_force_best(problem, 4)
        assert report.best_value >= best - 1e-9
        assert report.best_value <= 1.5 * best + 1e-12
        if report.best_value <= best * (1 + 1e-9):
            hits += 1
    assert hits >= 8


def test_greedy_rarely_beats_reverse_greedy(rng):
    # Qualitative ordering: the growth-only search should not do better than
    # reverse greedy on most instances (ties count as "not better").
    wins = 0
    for k in range(10):
        problem = random_cluster_problem(rng, per_cell=2, unit="cell")
        gre = cd.multi_start(problem, cfg(4, algorithm="greedy", starts=3, seed=k))
        rev = cd.multi_start(problem, cfg(4, algorithm="reverse_greedy", starts=1, seed=k))
        if gre.best_value >= rev.best_value - 1e-10:
            wins += 1
    assert wins >= 5


def test_reverse_greedy_is_deterministic(rng):
    problem = random_cluster_problem(rng, n_clusters=6, per_cell=2, unit="cell")
    s1, t1 = reverse_greedy_search(problem, cfg(5))
    s2, t2 = reverse_greedy_search(problem, cfg(5))
    assert s1.ids() == s2.ids()
    assert t1 == t2


def test_reverse_greedy_full_space_when_m_equals_j(rng):
    problem = random_cluster_problem(rng, per_cell=1, unit="cell")
    J = problem.n_units
    state, trace = reverse_greedy_search(problem, cfg(J))
    assert state.ids() == [u.id for u in problem.space.units]
    assert len(trace) == 1


def test_greedy_start_at_target_size_is_returned_unchanged(rng):
    problem = random_cluster_problem(rng, per_cell=2, unit="cell")
    state, trace = greedy_search(
        problem, cfg(4, greedy_start_size=4), np.random.default_rng(2)
    )
    assert state.size == 4
    assert len(trace) == 1


def test_greedy_start_size_validation(rng):
    problem = random_cluster_problem(rng, per_cell=1, unit="cell")
    with pytest.raises(ConfigError):
        greedy_search(problem, cfg(5, greedy_start_size=2), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        greedy_search(problem, cfg(5, greedy_start_size=6), np.random.default_rng(0))


def test_m_larger_than_space_is_infeasible(rng):
    problem = random_cluster_problem(rng, per_cell=1, unit="cell")
    with pytest.raises(InfeasibleError):
        local_search(problem, cfg(problem.n_units + 1), np.random.default_rng(0))


def test_duplicate_pruning_does_not_change_the_result(rng):
    for k in range(5):
        problem = random_cluster_problem(rng, n_clusters=4, per_cell=2, unit="observation")
        seeds = np.random.SeedSequence(k).spawn(1)
        pruned, _ = local_search(problem, cfg(4, prune_duplicates=True),
                                 np.random.default_rng(seeds[0]))
        unpruned, _ = local_search(problem, cfg(4, prune_duplicates=False),
                                   np.random.default_rng(seeds[0]))
        assert pruned.value() == pytest.approx(unpruned.value(), abs=1e-10)
        rev_p, _ = reverse_greedy_search(problem, cfg(4, prune_duplicates=True))
        rev_u, _ = reverse_greedy_search(problem, cfg(4, prune_duplicates=False))
        assert rev_p.value() == pytest.approx(rev_u.value(), abs=1e-10)


def test_incremental_matches_scratch_on_accepted_moves(rng):
    # verify_moves recomputes the objective from scratch after every move.
    problem = random_cluster_problem(rng, n_clusters=5, per_cell=2, unit="cell")
    for search in (local_search, greedy_search, reverse_greedy_search):
        search(problem, cfg(4, verify_moves=True), np.random.default_rng(11))


def test_incremental_matches_scratch_for_robust_problems(rng):
    space = cd.cluster_trial_space(5, 2, 2, np.array([[0, 1], [0, 0], [1, 1], [1, 0], [0, 1]]),
                                   unit="cell")
    spec_a = cd.ModelSpec(
        family_link=cd.FamilyLink("gaussian", "identity"),
        mean=cd.LinearIndicatorMean(n_periods=2),
        covariance=cd.CovarianceSpec.exchangeable(0.3, 0.1, resid_sd=1.0),
    )
    spec_b = cd.ModelSpec(
        family_link=cd.FamilyLink("gaussian", "identity"),
        mean=cd.LinearIndicatorMean(n_periods=2),
        covariance=cd.CovarianceSpec.ar1(0.25, 0.7, resid_sd=1.0),
    )
    problem = cd.DesignProblem(space, [spec_a, spec_b], np.array([1.0, 0, 0]),
                               weights=[0.3, 0.7])
    for search in (local_search, greedy_search, reverse_greedy_search):
        state, _ = search(problem, cfg(4, verify_moves=True), np.random.default_rng(13))
        assert state.size == 4


def test_robust_objective_examples():
    assert cd.robust_objective([2.0], [1.0]) == pytest.approx(2.0)
    assert cd.robust_objective([3.0, 3.0], [0.5, 0.5]) == pytest.approx(3.0)
    assert cd.robust_objective([2.0, 4.0], [0.25, 0.75]) == pytest.approx(3.5)
    assert is_infeasible(cd.robust_objective([2.0, INFEASIBLE], [0.5, 0.5]))
    # linear in the prior: scaling the weights changes nothing.
    assert cd.robust_objective([2.0, 4.0], [0.5, 1.5]) == pytest.approx(
        cd.robust_objective([2.0, 4.0], [1.0, 3.0])
    )
    with pytest.raises(ConfigError):
        cd.robust_objective([1.0], [0.5, 0.5])


def test_robust_problem_combines_component_objectives(rng):
    space = cd.cluster_trial_space(4, 2, 1, np.array([[0, 1], [0, 0], [1, 1], [1, 0]]),
                                   unit="cell")
    spec_a = cd.ModelSpec(
        family_link=cd.FamilyLink("gaussian", "identity"),
        mean=cd.LinearIndicatorMean(n_periods=2),
        covariance=cd.CovarianceSpec.exchangeable(0.25, 0.1, resid_sd=1.0),
    )
    spec_b = cd.ModelSpec(
        family_link=cd.FamilyLink("gaussian", "identity"),
        mean=cd.LinearIndicatorMean(n_periods=2),
        covariance=cd.CovarianceSpec.ar1(0.25, 0.6, resid_sd=1.0),
    )
    c = np.array([1.0, 0.0, 0.0])
    robust = cd.DesignProblem(space, [spec_a, spec_b], c, weights=[0.25, 0.75])
    single_a = cd.DesignProblem(space, spec_a, c)
    single_b = cd.DesignProblem(space, spec_b, c)
    ids = [0, 1, 3, 4]  # both periods and both arms represented
    ga = single_a.value_of_ids(ids)
    gb = single_b.value_of_ids(ids)
    assert robust.value_of_ids(ids) == pytest.approx(0.25 * ga + 0.75 * gb, rel=1e-12)
    state = cd.DesignState(robust, ids)
    assert state.value() == pytest.approx(0.25 * ga + 0.75 * gb, rel=1e-9)


def test_multi_start_report(rng):
    problem = random_cluster_problem(rng, n_clusters=5, per_cell=2, unit="cell")
    report = cd.multi_start(problem, cfg(4, algorithm="local", starts=6, seed=9))
    values = report.finite_values()
    assert report.best_value == min(values)
    rel = report.relative_efficiencies()
    assert min(rel) == pytest.approx(100.0)
    assert all(r >= 100.0 for r in rel)
    # deterministic algorithm: one start, min == max
    rep2 = cd.multi_start(problem, cfg(4, algorithm="reverse_greedy", starts=1, seed=9))
    assert rep2.relative_efficiencies() == [100.0]


def test_multi_start_is_reproducible_and_thread_invariant(rng):
    problem = random_cluster_problem(rng, n_clusters=5, per_cell=2, unit="cell")
    rep1 = cd.multi_start(problem, cfg(4, algorithm="local", starts=4, seed=21, threads=1))
    rep2 = cd.multi_start(problem, cfg(4, algorithm="local", starts=4, seed=21, threads=4))
    assert rep1.to_dict() == rep2.to_dict()
