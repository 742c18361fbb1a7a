import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dictsel import datagen, library, weakform
from dictsel.library import EvaluatedLibrary
from dictsel.regressors import (BudgetExceededError, NoJumpError, RegressorError, SparseModel,
                                best_kept_subset, esr, gbsr, gfsr, gfsr_selection_order,
                                l0_objective, omp, refit, score_jump, screen_then_stls,
                                select_sparsity, ssr, ssr_cv_trace, ssr_removal_order, stls)
from dictsel.scoring import ScoreTrace, score_single, score_subset

from conftest import near_orthogonal_instance, proj_oracle, random_instance, unit_operator_instance


def orthonormal(m, n, seed=0):
    return np.linalg.qr(np.random.default_rng(seed).standard_normal((m, n)))[0]


# --- STLS -------------------------------------------------------------------

def test_stls_two_of_three(rng):
    f, g, h = rng.standard_normal((3, 40))
    model, _ = stls(np.column_stack([f, g, h]), f + g, 0.5)
    assert model.support() == (0, 1)
    assert np.allclose(model.coefficient()[:2], [1, 1])


def test_stls_zero_threshold_is_least_squares(rng):
    D, y = rng.standard_normal((30, 5)), rng.standard_normal(30)
    model, trace = stls(D, y, 0.0)
    assert np.allclose(model.coefficient(), np.linalg.lstsq(D, y, rcond=None)[0])
    assert len(trace.iterations) == 2  # initial solve plus one confirming refit


def test_stls_large_threshold_gives_zero_model(rng):
    D, y = rng.standard_normal((30, 5)), rng.standard_normal(30)
    model, _ = stls(D, y, 1e6)
    assert not model.support()
    assert model.residual_norm[0] == pytest.approx(np.linalg.norm(y))


def test_stls_residual_norm_matches_stored_fields(rng):
    D, y = rng.standard_normal((30, 5)), rng.standard_normal(30)
    model, _ = stls(D, y, 0.1)
    assert model.residuals(D, y)[0] == pytest.approx(model.residual_norm[0], rel=1e-10)


def test_stls_descent_and_fixed_point():
    rng = np.random.default_rng(10)
    for _ in range(100):
        # descent needs ||D||_op = 1
        D, y = unit_operator_instance(rng)
        xi0 = np.linalg.lstsq(D, y, rcond=None)[0]
        lam = float(np.quantile(np.abs(xi0), rng.uniform(0.2, 0.8)))
        model, trace = stls(D, y, lam)
        obj = trace.objectives
        assert np.all(np.diff(obj) <= 1e-10 * obj[0])
        xi = model.coefficient()
        S = list(model.support())
        if trace.iterations[-1].support == tuple(S) and S:
            assert np.all(np.abs(xi[S]) >= lam)
            assert np.linalg.norm((D.T @ (y - D @ xi))[S]) <= 1e-8 * np.linalg.norm(D) * np.linalg.norm(y)


def test_descent_along_greedy_refits():
    rng = np.random.default_rng(11)
    for _ in range(100):
        D, y = unit_operator_instance(rng)
        n = D.shape[1]
        order = gbsr(D, y).removal_order()
        xs = [np.linalg.lstsq(D, y, rcond=None)[0]]
        alive = list(range(n))
        for s in order[:-1]:
            alive.remove(s)
            x = np.zeros(n)
            x[alive] = np.linalg.lstsq(D[:, alive], y, rcond=None)[0]
            xs.append(x)
        alpha = max(abs(xs[i][s]) for i, s in enumerate(order[:-1]))
        F = [l0_objective(D, x, y, alpha) for x in xs]
        assert np.all(np.diff(F) <= 1e-10 * F[0])


def test_low_score_items_fail_first_threshold():
    rng = np.random.default_rng(12)
    for _ in range(100):
        D, y = random_instance(rng)
        n = D.shape[1]
        xi0 = np.linalg.lstsq(D, y, rcond=None)[0]
        lam = float(np.median(np.abs(xi0)))
        omega = min(np.linalg.norm(D[:, i] - proj_oracle(np.delete(D, i, 1), D[:, i])) for i in range(n))
        S0 = set(np.flatnonzero(np.abs(xi0) >= lam))
        for i in range(n):
            # small margin: with an odd count the median equals one coefficient exactly
            if score_single(i, D, y) < (1 - 1e-9) * lam * omega / np.linalg.norm(y):
                assert i not in S0


# --- SSR --------------------------------------------------------------------

def test_ssr_orthonormal_order():
    Q = orthonormal(10, 3)
    path = ssr(Q, 5 * Q[:, 0] + 0.1 * Q[:, 1] + 3 * Q[:, 2])
    assert ssr_removal_order(path) == [1, 2]
    assert len(path) == 3


def test_ssr_single_column():
    assert len(ssr(np.ones((4, 1)), np.arange(4.0))) == 1


def test_ssr_steps_match_direct_refits(rng):
    D, y = rng.standard_normal((20, 5)), rng.standard_normal(20)
    path = ssr(D, y)
    for xi in path:
        S = np.flatnonzero(xi)
        oracle = np.linalg.lstsq(D[:, S], y, rcond=None)[0]
        assert np.allclose(xi[S], oracle, rtol=1e-9)


def test_ssr_min_norm_handles_dependence(rng):
    D = rng.standard_normal((20, 3))
    D = np.column_stack([D, D[:, 0] + D[:, 1]])
    path = ssr(D, rng.standard_normal(20), min_norm=True)
    assert len(path) == 4


def test_ssr_cv_trace_levels(rng):
    D, y = rng.standard_normal((40, 4)), rng.standard_normal(40)
    tr = ssr_cv_trace(D, y, k=4)
    assert tr.level_numbers == [1, 2, 3, 4]
    assert tr.removed_at(4) == (0, 1, 2, 3)


# --- ESR / GBSR / GFSR ------------------------------------------------------

def test_esr_zero_levels_for_sparse_target(rng):
    D = rng.standard_normal((30, 6))
    y = D[:, [1, 4]] @ [2.0, -1.0]
    tr = esr(D, y)
    assert np.all(tr.scores[:4] <= 1e-8)
    assert tr.removed_at(4) == (0, 2, 3, 5)


def test_esr_orthonormal_first_level():
    Q = orthonormal(10, 3)
    y = 5 * Q[:, 0] + 0.1 * Q[:, 1] + 3 * Q[:, 2]
    tr = esr(Q, y, max_remove=1)
    assert tr.removed_at(1) == (1,)
    assert tr.scores[0] == pytest.approx(0.1 / np.linalg.norm(y))


def test_esr_empty_trace(rng):
    assert len(esr(rng.standard_normal((5, 3)), rng.standard_normal(5), max_remove=0)) == 0


def test_esr_budget(rng):
    with pytest.raises(BudgetExceededError, match="level 2"):
        esr(rng.standard_normal((20, 10)), rng.standard_normal(20), max_remove=3, cap=30)


def test_esr_matches_brute_force(rng):
    D, y = rng.standard_normal((15, 6)), rng.standard_normal(15)
    tr = esr(D, y)
    for lv in range(1, 7):
        best = min(score_subset(S, D, y) for S in itertools.combinations(range(6), lv))
        assert tr.at(lv).score == pytest.approx(best, abs=1e-12)


def test_esr_tie_goes_to_smallest_labels():
    D = EvaluatedLibrary(np.eye(4)[:, :3], ("b", "a", "c"))
    tr = esr(D, np.array([0.0, 0.0, 1.0, 0.0]), max_remove=1)
    # removing "a" or "b" both score zero
    assert tr.removed_at(1) == (1,)


def test_best_kept_subset(rng):
    D = rng.standard_normal((25, 7))
    y = D[:, [0, 3, 6]] @ [1.0, 2.0, -1.5]
    assert best_kept_subset(D, y, 3) == (0, 3, 6)


def test_gbsr_matches_ssr_on_orthonormal():
    Q = orthonormal(12, 5, seed=2)
    y = Q @ [3.0, -0.2, 1.1, 0.05, -2.0]
    assert gbsr(Q, y).removal_order()[:4] == ssr_removal_order(ssr(Q, y))


def test_gbsr_first_removals_avoid_sparse_support(rng):
    D = rng.standard_normal((30, 7))
    y = D[:, [2, 5]] @ [1.0, 1.0]
    tr = gbsr(D, y)
    assert np.all(tr.scores[:5] <= 1e-8)
    assert set(tr.removal_order()[:5]).isdisjoint({2, 5})


def test_gbsr_removed_sets_nested(rng):
    tr = gbsr(rng.standard_normal((20, 5)), [rng.standard_normal(20), rng.standard_normal(20)])
    for a, b in zip(tr.levels, tr.levels[1:]):
        assert set(a.removed) < set(b.removed)


def test_greedy_never_beats_exhaustive():
    rng = np.random.default_rng(13)
    for _ in range(20):
        D, y = random_instance(rng, m_max=30, n_max=12, m_min=14)
        g, e = gbsr(D, y), esr(D, y)
        assert np.all(g.scores >= e.scores - 1e-12)


def test_gfsr_single_column():
    tr = gfsr(np.ones((4, 1)), np.arange(1.0, 5.0))
    assert gfsr_selection_order(tr) == [0]


def test_gfsr_orthonormal_first_pick():
    Q = orthonormal(10, 4, seed=5)
    y = Q @ [0.3, -2.0, 1.0, 0.1]
    assert gfsr_selection_order(gfsr(Q, y))[0] == 1


# --- OMP --------------------------------------------------------------------

def test_omp_one_step():
    Q = orthonormal(8, 3)
    model = omp(Q, 2 * Q[:, 0], 1e-10)
    assert model.support() == (0,)
    assert model.residual_norm[0] <= 1e-12


def test_omp_large_delta_empty(rng):
    D = rng.standard_normal((10, 3))
    D /= np.linalg.norm(D, axis=0)
    y = rng.standard_normal(10)
    assert not omp(D, y, np.linalg.norm(y)).support()


def test_omp_requires_unit_columns(rng):
    with pytest.raises(RegressorError):
        omp(rng.standard_normal((10, 3)) * 3, rng.standard_normal(10), 0.1)


def test_omp_selection_is_max_correlation(rng):
    D = rng.standard_normal((30, 6))
    D /= np.linalg.norm(D, axis=0)
    y = rng.standard_normal(30)
    model = omp(D, y, 1e-12, debug=True)
    S = []
    for pick in model.provenance["selection_order"]:
        r = y - proj_oracle(D[:, S], y) if S else y
        corr = np.abs(D.T @ r)
        corr[S] = -1
        assert pick == int(np.argmax(corr))
        S.append(pick)


# --- sparsity level, refit, screening --------------------------------------

SYNTH = ScoreTrace.from_scores([1e-9, 1e-9, 1e-9, 0.4, 0.7], [tuple(range(i)) for i in range(1, 6)])


def test_jump_on_synthetic_trace():
    assert score_jump(SYNTH) == 4
    assert select_sparsity(SYNTH) == 3


def test_threshold_on_synthetic_trace():
    assert select_sparsity(SYNTH, "threshold", 1e-6) == 3


def test_flat_trace_has_no_jump():
    with pytest.raises(NoJumpError):
        select_sparsity(ScoreTrace.from_scores([0.5, 0.5, 0.5]))
    with pytest.raises(NoJumpError):
        select_sparsity(ScoreTrace.from_scores([0.0, 0.0]))


def test_refit_empty_and_full(rng):
    D, y = rng.standard_normal((20, 4)), rng.standard_normal(20)
    empty = refit(D, [], y)
    assert not empty.support() and empty.residual_norm[0] == pytest.approx(np.linalg.norm(y))
    assert np.allclose(refit(D, range(4), y).coefficient(), np.linalg.lstsq(D, y, rcond=None)[0])


def test_refit_lorenz_y_weak_form():
    data = datagen.integrate_rk4(datagen.lorenz(), [-8, 7, 27], (0, 10), 0.01)
    lib = library.normalize_columns(library.evaluate(library.build_lorenz_polytrig_library(), data))
    bank = weakform.build_test_bank(data.times, 64, 8, support_len=2.0)
    ws = weakform.weak_transform_ode(lib, data, bank)
    G = library.EvaluatedLibrary(ws.G / lib.scales, lib.labels, lib.scales)
    model = refit(G, G.indices(["x", "y", "xz"]), ws.target(1))
    assert np.allclose(model.coefficient()[G.indices(["x", "y", "xz"])], [26, -1, -1], rtol=1e-2)


def test_screen_full_fraction_equals_stls(rng):
    D, y = rng.standard_normal((30, 6)), rng.standard_normal(30)
    a = screen_then_stls(D, [y], 1.0, 0.2)
    b, _ = stls(D, y, 0.2)
    assert np.array_equal(a.coefficient(), b.coefficient())


def test_screen_over_pruning_flagged(rng):
    D = EvaluatedLibrary(rng.standard_normal((30, 6)), tuple("abcdef"))
    y = D.matrix @ [1.0, 1, 1, 1, 0, 0]
    model = screen_then_stls(D, [y], 0.5, 0.1, true_support=["a", "b", "c", "d"])
    assert model.provenance["over_pruned"]
    assert len(model.provenance["dropped_true_terms"]) == 1


def test_sparse_model_json_round_trip(rng):
    D, y = rng.standard_normal((20, 4)), rng.standard_normal(20)
    model, _ = stls(D, y, 0.3)
    back = SparseModel.from_dict(json.loads(model.to_json()), model.labels)
    assert np.array_equal(back.coefficients, model.coefficients)


# --- alignment of greedy, exhaustive and thresholded selections -------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_alignment_on_near_orthogonal_dictionaries(seed):
    rng = np.random.default_rng(seed)
    D, y, true = near_orthogonal_instance(rng)
    n, k = D.shape[1], len(true)
    g = gbsr(D, y).retained_at(n - k)
    e = esr(D, y, levels=[n - k]).retained_at(n - k)
    xi0 = np.linalg.lstsq(D, y, rcond=None)[0]
    s0 = tuple(int(i) for i in np.flatnonzero(np.abs(xi0) >= np.sqrt(1e-3)))
    assert g == e == s0 == true
