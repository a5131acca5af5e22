"""Few-shot learners: template init, ridge primal/dual, SVM dual, metrics."""

import numpy as np
import pytest

from fewtrack.core import Sample, SupportSet, design_matrix
from fewtrack.learners import (
    LearnerConfig,
    LearnerKind,
    LearnerState,
    fit_initial,
    fit_metric,
    fit_rr_dual_cls,
    fit_rr_dual_itr,
    fit_rr_prim_itr,
    fit_svm_dual,
    init_theta,
    predict,
    project_dual,
    refresh,
    update_theta_moving_average,
)
from fewtrack.losses import svm_primal_objective, svm_slack
from fewtrack.qpsolver import QPStatus


def make_support(rng, n=12, d=6, capacity=None, normalized=True):
    support = SupportSet(capacity=capacity or max(n, 2))
    for i in range(n):
        support.add(
            Sample(feature=rng.standard_normal(d), label=int(i % 2), weight=1.0, frame=i)
        )
    if normalized:
        support.normalize()
    return support


def support_from(rows, labels, weights=None):
    """Support with explicit features, labels, and (unnormalized) weights.

    add() pins every insertion to the age-0 unit weight, so custom weights
    are written onto the stored samples afterwards.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    weights = [1.0] * len(rows) if weights is None else weights
    support = SupportSet(capacity=len(rows) + 1)
    for i, (row, label) in enumerate(zip(rows, labels)):
        support.add(Sample(feature=row, label=int(label), weight=1.0, frame=i))
    for sample, w in zip(support.samples, weights):
        sample.weight = float(w)
    return support


def closed_form_theta(support, lam):
    phi, y, _ = design_matrix(support)
    return np.linalg.solve(phi.T @ phi + lam * np.eye(phi.shape[1]), phi.T @ y)


def ridge_loss(theta, support, lam):
    phi, y, _ = design_matrix(support)
    resid = phi @ theta - y
    return float(np.sum(resid * resid) + lam * np.sum(theta * theta))


class TestInitTheta:
    def test_target_only(self):
        support = support_from([[1.0, 0.0]], [1])
        theta = init_theta(np.array([1.0, 0.0]), support)
        np.testing.assert_allclose(theta, [[0.0, 1.0], [0.0, 0.0]])

    def test_scale_invariant(self):
        support = support_from([[1.0, 0.0]], [1])
        a = init_theta(np.array([1.0, 0.0]), support)
        b = init_theta(np.array([2.0, 0.0]), support)
        np.testing.assert_allclose(a, b)

    def test_background_column_is_mean_of_negatives(self):
        e2 = [0.0, 1.0, 0.0]
        e3 = [0.0, 0.0, 1.0]
        support = support_from([[1.0, 0.0, 0.0], e2, e3], [1, 0, 0])
        theta = init_theta(np.array([1.0, 0.0, 0.0]), support)
        expected = (np.array(e2) + np.array(e3)) / np.sqrt(2.0)
        np.testing.assert_allclose(theta[:, 0], expected, rtol=1e-14)

    def test_zero_norm_target_rejected(self):
        support = support_from([[1.0, 0.0]], [1])
        with pytest.raises(ValueError, match="zero norm"):
            init_theta(np.zeros(2), support)


class TestRRPrimal:
    def prim_state(self, support, lam, theta=None):
        d = support.features().shape[1]
        return LearnerState(
            config=LearnerConfig(kind=LearnerKind.RR_PRIM_ITR, lam=lam),
            theta=np.zeros((d, 2)) if theta is None else theta,
            fitted=True,
        )

    def test_stationary_at_optimum(self):
        rng = np.random.default_rng(31)
        support = make_support(rng, n=10, d=4)
        theta_star = closed_form_theta(support, 0.1)
        state = fit_rr_prim_itr(self.prim_state(support, 0.1, theta_star), support, 1)
        np.testing.assert_allclose(state.theta, theta_star, atol=1e-10)

    def test_one_step_on_isotropic_quadratic(self):
        # orthonormal design rows and lam=0.5 make the Hessian a multiple of
        # the identity, so the exact line step lands on the optimum
        support = support_from(np.eye(2), [0, 1])
        state = fit_rr_prim_itr(self.prim_state(support, 0.5), support, 1)
        np.testing.assert_allclose(state.theta, closed_form_theta(support, 0.5), atol=1e-12)

    def test_converges_to_closed_form(self):
        rng = np.random.default_rng(64)
        support = make_support(rng, n=30, d=16)
        theta_star = closed_form_theta(support, 0.1)
        state = fit_rr_prim_itr(self.prim_state(support, 0.1), support, 100)
        rel = np.linalg.norm(state.theta - theta_star) / np.linalg.norm(theta_star)
        assert rel <= 1e-6

    def test_objective_monotone_per_step(self):
        rng = np.random.default_rng(90)
        support = make_support(rng, n=14, d=8)
        state = self.prim_state(support, 0.1)
        last = ridge_loss(state.theta, support, 0.1)
        for _ in range(25):
            state = fit_rr_prim_itr(state, support, 1)
            now = ridge_loss(state.theta, support, 0.1)
            assert now <= last + 1e-12
            last = now

    def test_rejects_zero_iters(self):
        rng = np.random.default_rng(1)
        support = make_support(rng, n=4, d=3)
        with pytest.raises(ValueError, match="iters"):
            fit_rr_prim_itr(self.prim_state(support, 0.1), support, 0)


class TestRRDualClosedForm:
    def test_hand_single_sample(self):
        support = support_from([[1.0, 0.0]], [1])
        state = fit_rr_dual_cls(support, 1.0)
        np.testing.assert_allclose(state.dual, [[0.0, 0.5]], atol=1e-14)
        np.testing.assert_allclose(state.theta, [[0.0, 0.5], [0.0, 0.0]], atol=1e-14)

    def test_norm_shrinks_with_lambda(self):
        rng = np.random.default_rng(7)
        support = make_support(rng, n=10, d=5)
        norms = [np.linalg.norm(fit_rr_dual_cls(support, lam).theta) for lam in (1.0, 10.0, 100.0)]
        assert norms[0] > norms[1] > norms[2]

    def test_matches_primal_closed_form(self):
        rng = np.random.default_rng(12)
        support = make_support(rng, n=20, d=64)
        state = fit_rr_dual_cls(support, 0.1)
        theta_star = closed_form_theta(support, 0.1)
        rel = np.linalg.norm(state.theta - theta_star) / np.linalg.norm(theta_star)
        assert rel <= 1e-8

    def test_theta_is_projection_of_stored_dual(self):
        rng = np.random.default_rng(13)
        support = make_support(rng, n=9, d=4)
        state = fit_rr_dual_cls(support, 0.3)
        phi, _, _ = design_matrix(support)
        np.testing.assert_allclose(state.theta, project_dual(state.dual, phi, 1.0), atol=1e-12)

    def test_rejects_nonpositive_lambda(self):
        rng = np.random.default_rng(2)
        support = make_support(rng, n=4, d=3)
        with pytest.raises(ValueError, match="lam"):
            fit_rr_dual_cls(support, 0.0)


class TestRRDualViaQP:
    def test_agrees_with_closed_form(self):
        rng = np.random.default_rng(40)
        for _ in range(10):
            support = make_support(rng, n=int(rng.integers(4, 20)), d=int(rng.integers(3, 12)))
            a = fit_rr_dual_itr(support, 0.1)
            b = fit_rr_dual_cls(support, 0.1)
            assert np.max(np.abs(a.theta - b.theta)) <= 1e-6

    def test_hand_single_sample(self):
        support = support_from([[1.0, 0.0]], [1])
        state = fit_rr_dual_itr(support, 1.0)
        np.testing.assert_allclose(state.dual, [[0.0, 0.5]], atol=1e-8)

    def test_matches_primal_oracle_at_tracking_shape(self):
        rng = np.random.default_rng(41)
        support = make_support(rng, n=60, d=256)
        state = fit_rr_dual_itr(support, 0.1)
        theta_star = closed_form_theta(support, 0.1)
        rel = np.linalg.norm(state.theta - theta_star) / np.linalg.norm(theta_star)
        assert rel <= 1e-6

    def test_records_solver_diagnostics(self):
        rng = np.random.default_rng(42)
        support = make_support(rng, n=8, d=4)
        state = fit_rr_dual_itr(support, 0.1)
        assert state.solve_status == QPStatus.OPTIMAL.value
        assert state.solve_iterations >= 1
        assert state.solve_kkt_residual <= 1e-7


def subgradient_svm(support, lam, iters, seed=0):
    """Projected-subgradient primal baseline; returns the best iterate."""
    feats = support.features()
    labels = support.labels()
    w = support.weights()
    d = feats.shape[1]
    theta = np.zeros((d, 2))
    best = theta.copy()
    best_obj = svm_primal_objective(theta, support, lam)
    for t in range(1, iters + 1):
        scores = feats @ theta
        margins = scores + 1.0
        margins[np.arange(len(labels)), labels] -= 1.0
        k_star = np.argmax(margins, axis=1)
        slack = margins[np.arange(len(labels)), k_star] - scores[np.arange(len(labels)), labels]
        grad = 2.0 * lam * theta
        for n in range(len(labels)):
            if slack[n] > 0 and k_star[n] != labels[n]:
                grad[:, k_star[n]] += w[n] * feats[n]
                grad[:, labels[n]] -= w[n] * feats[n]
        theta = theta - grad / (2.0 * lam * t)
        obj = svm_primal_objective(theta, support, lam)
        if obj < best_obj:
            best_obj = obj
            best = theta.copy()
    return best, best_obj


class TestSVMDual:
    def test_symmetric_separator(self):
        support = support_from([[1.0, 0.0], [-1.0, 0.0]], [1, 0])
        state = fit_svm_dual(support, 0.25)
        cfg = LearnerConfig(kind=LearnerKind.SVM_DUAL_ITR, lam=0.25, gamma=1.0)
        state.config = cfg
        probs = predict(state, np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]]))
        assert probs[0] > 0.5
        assert probs[1] < 0.5
        assert probs[2] == pytest.approx(0.5, abs=1e-9)

    def test_margin_satisfied_sample_has_zero_dual_row(self):
        support = support_from(
            [[1.0, 0.0], [-1.0, 0.0], [5.0, 0.0]], [1, 0, 1]
        )
        state = fit_svm_dual(support, 0.05)
        slack = svm_slack(state.theta, np.array([5.0, 0.0]), 1)
        assert slack == 0.0
        assert np.max(np.abs(state.dual[2])) <= 1e-6

    def test_dual_feasibility_and_complementarity(self):
        rng = np.random.default_rng(50)
        support = make_support(rng, n=12, d=6)
        lam = 0.1
        state = fit_svm_dual(support, lam)
        w = support.weights()
        labels = support.labels()
        onehot = np.zeros((12, 2))
        onehot[np.arange(12), labels] = 1.0
        assert np.all(state.dual <= w[:, None] * onehot + 1e-6)
        np.testing.assert_allclose(state.dual.sum(axis=1), 0.0, atol=1e-6)
        for n in range(12):
            slack = svm_slack(state.theta, support.features()[n], int(labels[n]))
            if slack > 1e-6:
                assert state.dual[n, labels[n]] >= w[n] - 1e-6

    def test_close_to_subgradient_oracle(self):
        rng = np.random.default_rng(51)
        support = make_support(rng, n=12, d=6)
        lam = 0.1
        state = fit_svm_dual(support, lam)
        qp_obj = svm_primal_objective(state.theta, support, lam)
        _, oracle_obj = subgradient_svm(support, lam, iters=20000)
        assert qp_obj <= oracle_obj + 1e-3 * max(1.0, abs(oracle_obj))

    def test_weak_duality_and_tight_gap(self):
        rng = np.random.default_rng(52)
        support = make_support(rng, n=10, d=5)
        lam = 0.1
        state = fit_svm_dual(support, lam)
        feats = support.features()
        gram = feats @ feats.T
        a = state.dual
        dual_obj = float(-np.sum(a * (gram @ a)) / (4.0 * lam) + np.sum(a * np.eye(2)[support.labels()]))
        primal_obj = svm_primal_objective(state.theta, support, lam)
        assert dual_obj <= primal_obj + 1e-9
        assert primal_obj - dual_obj <= 1e-6 * max(1.0, abs(primal_obj))

    def test_dual_feasible_point_dominance(self):
        rng = np.random.default_rng(53)
        support = make_support(rng, n=8, d=4)
        lam = 0.1
        state = fit_svm_dual(support, lam)
        feats = support.features()
        labels = support.labels()
        w = support.weights()
        gram = feats @ feats.T
        onehot = np.eye(2)[labels]

        def neg_dual_objective(a):
            return float(np.sum(a * (gram @ a)) / (4.0 * lam) - np.sum(a * onehot))

        best = neg_dual_objective(state.dual)
        for _ in range(100):
            t = rng.uniform(0.0, 1.0, size=8)
            a = (w * t)[:, None] * (onehot - onehot[:, ::-1])
            assert best <= neg_dual_objective(a) + 1e-8

    def test_one_class_degenerates_with_warning(self):
        support = support_from([[1.0, 0.0], [0.0, 1.0]], [1, 1])
        with pytest.warns(UserWarning, match="one-class"):
            state = fit_svm_dual(support, 0.1)
        assert state.dual is None
        assert state.theta[:, 0] == pytest.approx(0.0)
        assert np.linalg.norm(state.theta[:, 1]) == pytest.approx(1.0)

    def test_theta_is_scaled_projection_of_dual(self):
        rng = np.random.default_rng(54)
        support = make_support(rng, n=9, d=5)
        lam = 0.2
        state = fit_svm_dual(support, lam)
        np.testing.assert_allclose(
            state.theta,
            project_dual(state.dual, support.features(), 1.0 / (2.0 * lam)),
            atol=1e-12,
        )


class TestProjectDual:
    def test_one_hot_row_selects_feature(self):
        phi = np.array([[3.0, 1.0, 2.0], [0.5, -1.0, 4.0]])
        dual = np.array([[0.0, 1.0], [0.0, 0.0]])
        theta = project_dual(dual, phi, 1.0)
        np.testing.assert_allclose(theta[:, 1], phi[0])
        np.testing.assert_allclose(theta[:, 0], 0.0)

    def test_zero_dual_gives_zero_theta(self):
        rng = np.random.default_rng(3)
        phi = rng.standard_normal((5, 4))
        np.testing.assert_allclose(project_dual(np.zeros((5, 2)), phi, 2.0), 0.0)

    def test_matches_elementwise_loop(self):
        rng = np.random.default_rng(6)
        phi = rng.standard_normal((7, 3))
        dual = rng.standard_normal((7, 2))
        scale = 0.37
        expected = np.zeros((3, 2))
        for i in range(3):
            for k in range(2):
                for n in range(7):
                    expected[i, k] += scale * phi[n, i] * dual[n, k]
        np.testing.assert_allclose(project_dual(dual, phi, scale), expected, rtol=1e-12)

    def test_rejects_row_mismatch(self):
        with pytest.raises(ValueError, match="incompatible"):
            project_dual(np.zeros((3, 2)), np.zeros((4, 2)), 1.0)


class TestMovingAverage:
    def state_with(self, theta):
        return LearnerState(
            config=LearnerConfig(kind=LearnerKind.RR_DUAL_CLS),
            theta=np.asarray(theta, dtype=np.float64),
            fitted=True,
        )

    def test_mu_one_replaces(self):
        state = self.state_with(np.ones((3, 2)))
        new = np.full((3, 2), 7.0)
        assert np.array_equal(update_theta_moving_average(state, new, 1.0).theta, new)

    def test_mu_zero_freezes(self):
        state = self.state_with(np.ones((3, 2)))
        out = update_theta_moving_average(state, np.full((3, 2), 7.0), 0.0)
        assert np.array_equal(out.theta, state.theta)

    def test_midpoint(self):
        state = self.state_with(np.zeros((2, 2)))
        new = np.zeros((2, 2))
        new[0, 0] = 2.0
        out = update_theta_moving_average(state, new, 0.5)
        expected = np.zeros((2, 2))
        expected[0, 0] = 1.0
        np.testing.assert_allclose(out.theta, expected)

    def test_validates_mu_and_shape(self):
        state = self.state_with(np.zeros((2, 2)))
        with pytest.raises(ValueError, match="mu"):
            update_theta_moving_average(state, np.zeros((2, 2)), 1.5)
        with pytest.raises(ValueError, match="shapes"):
            update_theta_moving_average(state, np.zeros((3, 2)), 0.5)


class TestMetricLearners:
    def test_proto_single_sample_per_class(self):
        support = support_from([[1.0, 0.0], [0.0, 2.0]], [1, 0])
        state = fit_metric(support, LearnerKind.PROTO)
        np.testing.assert_allclose(state.prototypes[1], [1.0, 0.0])
        np.testing.assert_allclose(state.prototypes[0], [0.0, 2.0])

    def test_proto_mean_of_identical_samples_is_idempotent(self):
        support = support_from([[1.0, 2.0], [1.0, 2.0], [0.0, 1.0]], [1, 1, 0])
        state = fit_metric(support, LearnerKind.PROTO)
        np.testing.assert_allclose(state.prototypes[1], [1.0, 2.0])

    def test_proto_weighted_mean(self):
        d = 4
        e1 = np.eye(d)[0]
        e2 = np.eye(d)[1]
        support = support_from([e1, e2, np.full(d, 0.5)], [1, 1, 0], weights=[1.0, 3.0, 1.0])
        state = fit_metric(support, LearnerKind.PROTO)
        expected = np.zeros(d)
        expected[0] = 0.25
        expected[1] = 0.75
        np.testing.assert_allclose(state.prototypes[1], expected, rtol=1e-14)

    def test_proto_missing_class_rejected(self):
        support = support_from([[1.0, 0.0]], [1])
        with pytest.raises(ValueError, match="class"):
            fit_metric(support, LearnerKind.PROTO)

    def test_matching_snapshot_isolated_from_later_updates(self):
        rng = np.random.default_rng(23)
        support = make_support(rng, n=6, d=4)
        state = fit_metric(support, LearnerKind.MATCHING)
        query = rng.standard_normal((3, 4))
        before = predict(state, query)
        support.add(Sample(feature=rng.standard_normal(4), label=1, weight=1.0, frame=99))
        support.normalize()
        np.testing.assert_array_equal(predict(state, query), before)

    def test_non_metric_kind_rejected(self):
        rng = np.random.default_rng(2)
        support = make_support(rng, n=4, d=3)
        with pytest.raises(ValueError, match="metric"):
            fit_metric(support, LearnerKind.SVM_DUAL_ITR)


class TestPredict:
    def test_identical_columns_give_half(self):
        rng = np.random.default_rng(70)
        col = rng.standard_normal(5)
        state = LearnerState(
            config=LearnerConfig(kind=LearnerKind.RR_DUAL_CLS),
            theta=np.stack([col, col], axis=1),
            fitted=True,
        )
        np.testing.assert_allclose(predict(state, rng.standard_normal((6, 5))), 0.5)

    def test_hand_softmax(self):
        theta = np.array([[0.0, 1.0], [0.0, 0.0]])
        state = LearnerState(
            config=LearnerConfig(kind=LearnerKind.RR_DUAL_CLS, gamma=1.0),
            theta=theta,
            fitted=True,
        )
        prob = predict(state, np.array([[2.0, 0.0]]))[0]
        assert prob == pytest.approx(1.0 / (1.0 + np.exp(-2.0)), rel=1e-12)

    def test_proto_zero_distance_dominates(self):
        support = support_from([[1.0, 0.0], [0.0, 1.0]], [1, 0])
        state = fit_metric(support, LearnerKind.PROTO)
        assert predict(state, np.array([[1.0, 0.0]]))[0] > 0.5

    def test_matching_symmetric_pair(self):
        support = support_from([[1.0, 0.0], [-1.0, 0.0]], [1, 0])
        support.normalize()
        state = fit_metric(support, LearnerKind.MATCHING)
        prob = predict(state, np.array([[1.0, 0.0]]))[0]
        expected = np.exp(1.0) / (np.exp(1.0) + np.exp(-1.0))
        assert prob == pytest.approx(expected, rel=1e-12)

    def test_argmax_invariant_to_theta_scale(self):
        # moderate scales only: once probabilities saturate to 1.0 the
        # argmax ties and the comparison stops being meaningful
        rng = np.random.default_rng(71)
        queries = rng.standard_normal((10, 4))
        theta = rng.standard_normal((4, 2))
        ranks = []
        for c in (0.25, 1.0, 4.0):
            state = LearnerState(
                config=LearnerConfig(kind=LearnerKind.RR_DUAL_ITR, gamma=1.0),
                theta=c * theta,
                fitted=True,
            )
            ranks.append(int(np.argmax(predict(state, queries))))
        assert len(set(ranks)) == 1

    def test_unfitted_state_rejected(self):
        state = LearnerState(config=LearnerConfig(), theta=np.zeros((2, 2)))
        with pytest.raises(RuntimeError, match="not fitted"):
            predict(state, np.zeros((1, 2)))


class TestFitInitialAndRefresh:
    def test_initial_dispatch_per_kind(self):
        rng = np.random.default_rng(80)
        support = make_support(rng, n=10, d=6)
        target = support.features()[1]
        for kind in LearnerKind:
            state = fit_initial(LearnerConfig(kind=kind), support, target)
            assert state.fitted
            assert state.config.kind == kind
            if kind in (LearnerKind.RR_DUAL_CLS, LearnerKind.RR_DUAL_ITR, LearnerKind.SVM_DUAL_ITR):
                assert state.dual is not None
            if kind == LearnerKind.PROTO:
                assert state.prototypes is not None

    def test_refresh_blends_dual_resolve(self):
        rng = np.random.default_rng(81)
        support = make_support(rng, n=10, d=6)
        target = support.features()[1]
        cfg = LearnerConfig(kind=LearnerKind.RR_DUAL_CLS, mu_theta=0.5)
        state = fit_initial(cfg, support, target)
        theta_before = state.theta.copy()
        support.add(Sample(feature=rng.standard_normal(6), label=1, weight=1.0, frame=50))
        support.normalize()
        refreshed = refresh(state, support)
        resolved = fit_rr_dual_cls(support, cfg.lam).theta
        np.testing.assert_allclose(refreshed.theta, 0.5 * theta_before + 0.5 * resolved, atol=1e-12)

    def test_refresh_continues_primal_iterate(self):
        rng = np.random.default_rng(82)
        support = make_support(rng, n=10, d=6)
        target = support.features()[1]
        state = fit_initial(LearnerConfig(kind=LearnerKind.RR_PRIM_ITR), support, target)
        before = ridge_loss(state.theta, support, state.config.lam)
        refreshed = refresh(state, support)
        assert ridge_loss(refreshed.theta, support, state.config.lam) <= before + 1e-12

    def test_fits_are_deterministic(self):
        rng = np.random.default_rng(83)
        support = make_support(rng, n=10, d=6)
        target = support.features()[1]
        for kind in LearnerKind:
            a = fit_initial(LearnerConfig(kind=kind), support, target)
            b = fit_initial(LearnerConfig(kind=kind), support, target)
            assert np.array_equal(a.theta, b.theta)


class TestLearnerConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="lam"):
            LearnerConfig(lam=0.0)
        with pytest.raises(ValueError, match="gamma"):
            LearnerConfig(gamma=-1.0)
        with pytest.raises(ValueError, match="mu_theta"):
            LearnerConfig(mu_theta=1.5)
        with pytest.raises(ValueError, match="iters_refresh"):
            LearnerConfig(iters_refresh=0)

    def test_gamma_override_wins(self):
        cfg = LearnerConfig(kind=LearnerKind.SVM_DUAL_ITR, gamma=3.25)
        assert cfg.resolved_gamma() == 3.25

    def test_refresh_iteration_defaults(self):
        assert LearnerConfig(kind=LearnerKind.RR_PRIM_ITR).resolved_iters_refresh() == 3
        assert LearnerConfig(kind=LearnerKind.RR_DUAL_CLS).resolved_iters_refresh() == 1
        assert LearnerConfig(kind=LearnerKind.RR_DUAL_CLS, iters_refresh=4).resolved_iters_refresh() == 4
