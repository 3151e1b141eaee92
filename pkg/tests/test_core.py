import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sshdi.core import (Scenario, SplitPlan, SSHDIFit, OneSplitResult, coverage_experiment, infer,
                        one_split, partial_regressions, resampling_variance, sshdi_fit, variance_estimate,
                        z_test)
from sshdi.datagen import CovarianceKind, Dataset, draw_truth, generate_dataset
from sshdi.errors import DegenerateResamples, RunAborted, SelectionTooLarge
from sshdi.numerics import RngStream, ols_fit
from sshdi.oracles import partial_ols_loop, variance_double_loop
from sshdi.selection import FixedSelection, SelectedSet, SelectorConfig

from conftest import random_membership

CHEAP_CV = SelectorConfig.lasso_cv(folds=5, grid_size=30, grid_ratio=0.01)


@pytest.mark.parametrize("n", [8, 9, 40, 41])
def test_split_plan_sizes(n):
    plan = SplitPlan.draw(n, np.random.default_rng(n))
    assert len(plan.d1) == n // 2 and len(plan.d2) == n - n // 2
    assert not set(plan.d1) & set(plan.d2)
    assert sorted(np.r_[plan.d1, plan.d2]) == list(range(n))
    assert plan.membership(n).sum() == n // 2


def _noiseless(n=40, p=15, seed=1):
    truth = draw_truth(p, 3, 0.5, 2.0, RngStream(seed), noise_sd=0.0)
    return truth, generate_dataset(n, p, CovarianceKind.ar1(0.5), truth, RngStream(seed + 1))


def test_one_split_noiseless_exact_recovery():
    truth, data = _noiseless()
    res = one_split(data, CHEAP_CV, RngStream(0, 1), selector=FixedSelection(tuple(truth.active_set)))
    np.testing.assert_allclose(res.beta_tilde[truth.active_set], truth.coefficients, atol=1e-10)
    others = np.setdiff1d(np.arange(data.p), truth.active_set)
    np.testing.assert_allclose(res.beta_tilde[others], 0.0, atol=1e-10)


def test_selected_columns_share_one_regression():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 8))
    y = x[:, 1] - x[:, 4] + rng.normal(size=30)
    sel = [1, 4, 6]
    beta, absent, intercept = partial_regressions(x, y, sel)
    full = ols_fit(np.column_stack([np.ones(30), x[:, sel]]), y)
    np.testing.assert_allclose(beta[sel], full[1:], atol=1e-12)
    assert intercept == pytest.approx(full[0], abs=1e-12)
    assert not absent.any()


def test_partial_regressions_match_per_column_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(40, 6))
    y = x @ np.array([1.0, 0.0, -0.5, 0.0, 0.0, 0.3]) + rng.normal(size=40)
    plan = SplitPlan.draw(40, rng)
    sel = [0, 2]
    beta, _, _ = partial_regressions(x[plan.d1], y[plan.d1], sel)
    np.testing.assert_allclose(beta, partial_ols_loop(x[plan.d1], y[plan.d1], sel), atol=1e-10)


def test_one_split_uses_stream_split_and_matches_oracle():
    rng = np.random.default_rng(4)
    data = Dataset(x=rng.normal(size=(40, 6)), y=rng.normal(size=40))
    stream = RngStream(5, 7)
    res = one_split(data, CHEAP_CV, stream, selector=FixedSelection((1, 3)))
    plan = SplitPlan.draw(40, stream.generator())
    np.testing.assert_array_equal(res.membership, plan.membership(40))
    np.testing.assert_allclose(res.beta_tilde, partial_ols_loop(data.x[plan.d1], data.y[plan.d1], [1, 3]),
                               atol=1e-10)


def test_collinear_focal_column_flagged_absent():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 5))
    x[:, 4] = 2 * x[:, 0] - x[:, 1]
    beta, absent, _ = partial_regressions(x, rng.normal(size=30), [0, 1])
    assert absent.tolist() == [False, False, False, False, True]
    assert beta[4] == 0.0


def test_collinear_selected_column_dropped():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(30, 5))
    x[:, 2] = x[:, 0] + x[:, 1]
    beta, absent, _ = partial_regressions(x, rng.normal(size=30), [0, 1, 2])
    assert absent.sum() == 1 and absent[[0, 1, 2]].sum() == 1
    assert np.all(np.isfinite(beta))


def test_selection_too_large():
    rng = np.random.default_rng(7)
    data = Dataset(x=rng.normal(size=(20, 30)), y=rng.normal(size=20))
    with pytest.raises(SelectionTooLarge):
        one_split(data, CHEAP_CV, RngStream(1), selector=FixedSelection(tuple(range(8))))
    one_split(data, CHEAP_CV, RngStream(1), selector=FixedSelection(tuple(range(7))))


def test_single_resample_average(small_data):
    fit = sshdi_fit(small_data, CHEAP_CV, 1, 3)
    single = one_split(small_data, CHEAP_CV, RngStream(3, 1), max_selected=small_data.n // 4)
    np.testing.assert_array_equal(fit.beta_hat, single.beta_tilde)


def test_default_b_is_n(small_data):
    fit = sshdi_fit(small_data, CHEAP_CV, None, 3, selector=FixedSelection((0,)))
    assert fit.b == small_data.n


def test_worker_count_does_not_change_fit(small_data):
    serial = sshdi_fit(small_data, CHEAP_CV, 20, 11)
    parallel = sshdi_fit(small_data, CHEAP_CV, 20, 11, workers=3)
    assert serial.beta_hat.tobytes() == parallel.beta_hat.tobytes()
    assert serial.beta_tilde.tobytes() == parallel.beta_tilde.tobytes()
    assert serial.membership.tobytes() == parallel.membership.tobytes()


def test_aggregation_identity_and_membership_balance(small_data):
    fit = sshdi_fit(small_data, CHEAP_CV, 25, 5)
    assert np.all(fit.beta_hat - fit.beta_tilde.mean(axis=0) == 0)
    assert np.all(fit.membership.sum(axis=1) == small_data.n // 2)
    j_dot = fit.membership.mean(axis=0)
    assert np.all((0 <= j_dot) & (j_dot <= 1))


class FlakySelector:
    """Fails on the listed stream draws by returning an oversized set."""

    def __init__(self, fail_every):
        self.fail_every = fail_every

    def __call__(self, d2, rng):
        if rng.random() < 1 / self.fail_every:
            return SelectedSet(indices=np.arange(d2.p), method_tag="flaky")
        return SelectedSet(indices=np.array([0]), method_tag="flaky")


def test_failed_resamples_dropped_or_abort():
    rng = np.random.default_rng(8)
    data = Dataset(x=rng.normal(size=(40, 30)), y=rng.normal(size=40))
    fit = sshdi_fit(data, CHEAP_CV, 200, 1, selector=FlakySelector(100), max_failure_rate=0.05)
    assert 0 < len(fit.failures) <= 10
    assert fit.b == 200 - len(fit.failures)
    assert fit.beta_tilde.shape[0] == fit.b
    with pytest.raises(RunAborted):
        sshdi_fit(data, CHEAP_CV, 100, 1, selector=FlakySelector(3))


def _manual_fit(membership, beta_tilde, intercepts=None):
    B, n = membership.shape
    intercepts = np.zeros(B) if intercepts is None else intercepts
    resamples = [OneSplitResult(beta_tilde=beta_tilde[b], intercept=float(intercepts[b]),
                                selected=SelectedSet(np.array([], dtype=np.int64), "none"),
                                membership=membership[b], absent=np.zeros(beta_tilde.shape[1], bool))
                 for b in range(B)]
    return SSHDIFit(beta_hat=beta_tilde.mean(axis=0), intercept_hat=float(np.mean(intercepts)),
                    resamples=resamples, n=n, p=beta_tilde.shape[1], b=B)


def test_variance_matches_double_loop_oracle():
    rng = np.random.default_rng(9)
    member = random_membership(rng, 200, 20)
    est = rng.normal(size=(200, 3)) + member[:, :3] * 0.5
    v_raw, corr = resampling_variance(member, est)
    o_raw, o_b = variance_double_loop(member, est)
    np.testing.assert_allclose(v_raw, o_raw, rtol=0, atol=1e-12)
    np.testing.assert_allclose(v_raw - corr, o_b, rtol=0, atol=1e-12)


def test_constant_coordinate_has_zero_variance():
    rng = np.random.default_rng(10)
    member = random_membership(rng, 50, 20)
    est = np.column_stack([np.full(50, 0.7), rng.normal(size=50)])
    var = variance_estimate(_manual_fit(member, est))
    assert var.v_raw[0] == 0 and var.v_b[0] == 0
    assert var.v_raw[1] > 0


def test_corrected_never_exceeds_uncorrected():
    rng = np.random.default_rng(11)
    for _ in range(20):
        member = random_membership(rng, 30, 16)
        est = rng.normal(size=(30, 4)) + 0.3 * member[:, :4]
        v_raw, corr = resampling_variance(member, est)
        assert np.all(v_raw - corr <= v_raw)
        var = variance_estimate(_manual_fit(member, est))
        assert np.all(var.v_b <= var.v_raw)


def test_negative_corrected_variance_falls_back():
    rng = np.random.default_rng(12)
    member = random_membership(rng, 60, 10)
    # estimates orthogonal to every membership column: only the correction remains
    jc = np.column_stack([np.ones(60), member - member.mean(axis=0)])
    est = rng.normal(size=(60, 5))
    est -= jc @ np.linalg.lstsq(jc, est, rcond=None)[0]
    est += 1.0
    v_raw, corr = resampling_variance(member, est)
    assert np.all(v_raw - corr < 0)
    var = variance_estimate(_manual_fit(member, est))
    assert var.fallback.all()
    np.testing.assert_array_equal(var.v_b, var.v_raw)
    table = infer(_manual_fit(member, est), var)
    assert all("uncorrected_variance" in f for f in table.flags)


def test_degenerate_resamples():
    rng = np.random.default_rng(13)
    member = random_membership(rng, 10, 20)
    est = np.tile(rng.normal(size=3), (10, 1))
    with pytest.raises(DegenerateResamples):
        variance_estimate(_manual_fit(member, est))
    var = variance_estimate(_manual_fit(member, est), allow_degenerate=True)
    assert np.all(var.v_b == 0)


def test_variance_needs_two_resamples():
    member = random_membership(np.random.default_rng(0), 1, 10)
    with pytest.raises(ValueError):
        variance_estimate(_manual_fit(member, np.ones((1, 2))))


def test_bonferroni_arithmetic_789_tests():
    res = z_test(-0.20, 0.042 ** 2, 0.05, "bonferroni", m=789)
    assert res["z"][0] == pytest.approx(-4.7619, abs=1e-3)
    assert 0.001 <= res["p_adjusted"][0] <= 0.004


def test_zero_estimate_gives_unit_p():
    res = z_test([0.0, 0.0], [0.3, 0.0])
    np.testing.assert_array_equal(res["z"], [0.0, 0.0])
    np.testing.assert_array_equal(res["p_raw"], [1.0, 1.0])


def test_zero_variance_nonzero_estimate():
    res = z_test([0.5], [0.0])
    assert np.isinf(res["z"][0]) and res["p_raw"][0] == 0.0
    assert res["ci_low"][0] == res["ci_high"][0] == 0.5


def test_bonferroni_clipping():
    # raw p of 0.01 at z = 2.5758...
    from scipy.stats import norm
    z = norm.isf(0.005)
    res = z_test(np.r_[z, np.zeros(199)], np.ones(200), adjustment="bonferroni")
    assert res["p_raw"][0] == pytest.approx(0.01)
    assert res["p_adjusted"][0] == 1.0
    none = z_test([z], [1.0], adjustment="none")
    assert none["p_adjusted"][0] == pytest.approx(0.01)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=10), st.floats(0.01, 0.5), st.floats(0.001, 0.3))
def test_inference_table_invariants(est, sd, alpha):
    est = np.array(est)
    var = np.full(len(est), sd ** 2)
    res = z_test(est, var, alpha)
    from scipy.stats import norm
    np.testing.assert_allclose(res["se"], sd)
    np.testing.assert_allclose(res["ci_high"] - est, norm.ppf(1 - alpha / 2) * sd)
    np.testing.assert_allclose(res["p_adjusted"], np.minimum(1, len(est) * res["p_raw"]))


def test_infer_table_shape(small_data):
    fit = sshdi_fit(small_data, CHEAP_CV, 30, 2)
    var = variance_estimate(fit)
    table = infer(fit, var, 0.1, "bonferroni")
    assert len(table) == small_data.p and table.m == small_data.p
    np.testing.assert_allclose(table.se, np.sqrt(var.v_b))
    order = table.order()
    assert np.all(np.diff(table.p_adjusted[order]) >= 0)
    # strictly positive interval width once splits disagree
    assert np.all(table.se[~var.fallback] > 0)


def test_scale_equivariance_with_fixed_selection(small_data):
    sel = FixedSelection((0, 3))
    c = 3.5
    scaled = Dataset(x=small_data.x, y=c * small_data.y)
    a = sshdi_fit(small_data, CHEAP_CV, 40, 9, selector=sel)
    b = sshdi_fit(scaled, CHEAP_CV, 40, 9, selector=sel)
    np.testing.assert_allclose(b.beta_tilde, c * a.beta_tilde, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(b.beta_hat, c * a.beta_hat, rtol=1e-10, atol=1e-12)
    va, vb = variance_estimate(a), variance_estimate(b)
    np.testing.assert_allclose(vb.v_raw, c ** 2 * va.v_raw, rtol=1e-9)
    np.testing.assert_allclose(vb.v_b, c ** 2 * va.v_b, rtol=1e-9)
    np.testing.assert_allclose(infer(b, vb).z, infer(a, va).z, rtol=1e-8)


def test_row_permutation_invariance():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(30, 7))
    y = x[:, 0] + rng.normal(size=30)
    perm = rng.permutation(30)
    inv = np.argsort(perm)
    plans = [SplitPlan.draw(30, rng) for _ in range(15)]
    a = np.mean([partial_regressions(x[pl.d1], y[pl.d1], [0])[0] for pl in plans], axis=0)
    xp, yp = x[perm], y[perm]
    # row i of the original data sits at position inv[i] after permuting
    b = np.mean([partial_regressions(xp[np.sort(inv[pl.d1])], yp[np.sort(inv[pl.d1])], [0])[0]
                 for pl in plans], axis=0)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_coverage_noiseless_full_signal_coverage():
    truth = draw_truth(12, 3, 0.5, 2.0, RngStream(0), noise_sd=0.0)
    sc = Scenario(n=30, p=12, covariance=CovarianceKind.identity(), sparsity=3, noise_sd=0.0,
                  selector=CHEAP_CV, b=10)
    rep = coverage_experiment(sc, 5, 1, truth=truth, selector=FixedSelection(tuple(truth.active_set)))
    assert [r["cov_prob"] for r in rep.signal_rows] == [100.0] * 3
    assert all(abs(r["bias"]) < 1e-10 for r in rep.signal_rows)


def test_coverage_noise_bias_within_monte_carlo_error():
    sc = Scenario(n=60, p=20, covariance=CovarianceKind.identity(), sparsity=2, selector=CHEAP_CV, b=30)
    rep = coverage_experiment(sc, 30, 4)
    nr = rep.noise_row
    assert abs(nr["bias"]) <= 3 * nr["bias_sd"] / np.sqrt(30)
    assert nr["cov_prob"] == pytest.approx(nr["cov_prob_pooled"])
    assert len(rep.signal_rows) == 2


def test_coverage_parallel_matches_serial():
    sc = Scenario(n=40, p=10, covariance=CovarianceKind.compound_symmetry(0.5), sparsity=2,
                  selector=CHEAP_CV, b=12)
    a = coverage_experiment(sc, 4, 8)
    b = coverage_experiment(sc, 4, 8, workers=2)
    assert a.signal_rows == b.signal_rows and a.noise_row == b.noise_row
