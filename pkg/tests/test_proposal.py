import math

import numpy as np
import pytest
from scipy.integrate import quad

from dramforge import NumericalError, SplitMix64
from dramforge.proposal import (
    ProposalState,
    adaptation_measure,
    effective_cov,
    factorize,
    initial_proposal,
    propose,
    update_mean_cov,
)


def fresh(ndim=2, scale=1.0, eps_rel=1e-12):
    return initial_proposal(ndim, scale, eps_rel)


class _ZeroRng:
    def gauss(self):
        return 0.0


class _SequenceRng:
    def __init__(self, values):
        self.values = list(values)
        self.consumed = 0

    def gauss(self):
        self.consumed += 1
        return self.values.pop(0)


class TestUpdateMeanCov:
    def test_single_point_from_empty(self):
        state = fresh(3)
        x = np.array([1.0, -2.0, 0.5])
        new = update_mean_cov(state, [(x, 1)])
        assert np.array_equal(new.mean, x)
        assert np.array_equal(new.cov, np.zeros((3, 3)))
        assert new.sample_count == 1
        # epsilon carries the factorization of the zero matrix
        assert np.all(np.isfinite(new.chol_lower))

    def test_matches_two_pass_covariance(self):
        # 4 unit basis vectors, 2 copies each
        basis = [np.eye(4)[i] for i in range(4)]
        batch = [(b, 2) for b in basis]
        new = update_mean_cov(fresh(4), batch)
        expanded = np.repeat(np.array(basis), 2, axis=0)
        assert np.allclose(new.mean, expanded.mean(axis=0), rtol=1e-13, atol=0)
        assert np.allclose(new.cov, np.cov(expanded.T, ddof=1), rtol=1e-12, atol=1e-15)

    def test_weighted_matches_numpy_fweights(self):
        rng = np.random.default_rng(5)
        points = rng.normal(0, 2, (12, 3))
        weights = rng.integers(1, 7, 12)
        new = update_mean_cov(fresh(3), list(zip(points, weights)))
        assert np.allclose(
            new.cov, np.cov(points.T, fweights=weights, ddof=1), rtol=1e-12, atol=1e-14
        )
        assert np.allclose(
            new.mean, np.average(points, axis=0, weights=weights), rtol=1e-13, atol=0
        )

    def test_split_batches_bitwise_equal(self):
        rng = np.random.default_rng(11)
        points = rng.normal(0, 1, (10, 2))
        weights = rng.integers(1, 4, 10)
        batch = list(zip(points, weights))
        at_once = update_mean_cov(fresh(2), batch)
        halves = update_mean_cov(update_mean_cov(fresh(2), batch[:5]), batch[5:])
        assert np.array_equal(at_once.mean, halves.mean)
        assert np.array_equal(at_once.cov, halves.cov)
        assert at_once.sample_count == halves.sample_count

    def test_empty_batch_rejected(self):
        with pytest.raises(NumericalError):
            update_mean_cov(fresh(2), [])


class TestFactorize:
    def test_identity(self):
        state = fresh(3, scale=1.0)
        assert np.allclose(state.chol_lower, np.eye(3), atol=1e-6)

    def test_diagonal(self):
        state = fresh(2, scale=1.0, eps_rel=1e-300)
        state.cov = np.diag([4.0, 9.0])
        state.epsilon = 1e-300
        out = factorize(state)
        assert np.allclose(out.chol_lower, np.diag([2.0, 3.0]), rtol=1e-12)

    def test_random_spd_reconstruction(self):
        rng = np.random.default_rng(3)
        m = rng.normal(0, 1, (4, 4))
        state = fresh(4, scale=1.3)
        state.cov = m @ m.T
        out = factorize(state)
        recon = out.chol_lower @ out.chol_lower.T
        expect = out.scale**2 * out.cov + out.epsilon * np.eye(4)
        assert np.allclose(recon, expect, rtol=1e-10)

    def test_epsilon_inflation_on_roundoff_negative_eigenvalue(self):
        state = fresh(2)
        # Nearly singular with a ~5e-14 negative eigenvalue: the kind of
        # matrix accumulation roundoff actually produces.
        state.cov = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-13]])
        state.epsilon = 1e-14
        out = factorize(state)
        assert out.epsilon > 1e-14  # inflated until the factorization held
        recon = out.chol_lower @ out.chol_lower.T
        assert np.allclose(recon, out.scale**2 * out.cov + out.epsilon * np.eye(2), rtol=1e-6)

    def test_unrecoverable_matrix_raises(self):
        state = fresh(2)
        # Grossly indefinite: ten epsilon doublings cannot rescue it.
        state.cov = np.array([[1.0, 2.0], [2.0, 1.0]])
        state.epsilon = 1e-12
        with pytest.raises(NumericalError):
            factorize(state)


class TestPropose:
    def test_zero_deviates_return_center(self):
        state = fresh(3)
        center = np.array([0.3, -0.7, 2.0])
        assert np.array_equal(propose(state, center, 0, _ZeroRng()), center)

    def test_unit_step_along_first_axis(self):
        state = fresh(4)
        center = np.zeros(4)
        out = propose(state, center, 0, _SequenceRng([1.0, 0.0, 0.0, 0.0]))
        assert np.allclose(out, np.eye(4)[0] * state.chol_lower[0, 0])

    def test_consumes_exactly_ndim_gaussians_per_stage(self):
        state = fresh(5)
        for stage in (0, 1, 2):
            rng = _SequenceRng([0.1] * 10)
            propose(state, np.zeros(5), stage, rng)
            assert rng.consumed == 5

    def test_dr_stage_shrinks_step(self):
        state = fresh(2, scale=1.0)
        step0 = propose(state, np.zeros(2), 0, _SequenceRng([1.0, 1.0]))
        step1 = propose(state, np.zeros(2), 1, _SequenceRng([1.0, 1.0]))
        assert np.allclose(step1, 0.5 * step0)

    def test_empirical_covariance_matches_effective(self):
        state = fresh(3, scale=0.8)
        state.cov = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.7]])
        state = factorize(state)
        rng = SplitMix64(17)
        draws = np.array([propose(state, np.zeros(3), 0, rng) for _ in range(100_000)])
        emp = np.cov(draws.T, ddof=1)
        expect = effective_cov(state)
        frob = np.linalg.norm(emp - expect) / np.linalg.norm(expect)
        assert frob < 0.05


def gaussian_tv_quadrature_1d(m1, s1, m2, s2):
    """Numerically integrated total variation between two 1-D normals."""
    p = lambda x: math.exp(-0.5 * ((x - m1) / s1) ** 2) / (s1 * math.sqrt(2 * math.pi))
    q = lambda x: math.exp(-0.5 * ((x - m2) / s2) ** 2) / (s2 * math.sqrt(2 * math.pi))
    lo = min(m1 - 10 * s1, m2 - 10 * s2)
    hi = max(m1 + 10 * s1, m2 + 10 * s2)
    val, _ = quad(lambda x: abs(p(x) - q(x)), lo, hi, limit=400, epsabs=1e-11)
    return 0.5 * val


def gaussian_tv_grid_2d(m1, c1, m2, c2):
    """Grid total variation between two 2-D normals (Simpson-free midpoint)."""
    inv1, inv2 = np.linalg.inv(c1), np.linalg.inv(c2)
    det1, det2 = np.linalg.det(c1), np.linalg.det(c2)
    span = 8.0 * math.sqrt(max(np.max(np.diag(c1)), np.max(np.diag(c2))))
    center = (np.asarray(m1) + np.asarray(m2)) / 2
    n = 400
    xs = np.linspace(center[0] - span, center[0] + span, n)
    ys = np.linspace(center[1] - span, center[1] + span, n)
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    d1 = pts - np.asarray(m1)
    d2 = pts - np.asarray(m2)
    p = np.exp(-0.5 * np.einsum("ni,ij,nj->n", d1, inv1, d1)) / (2 * math.pi * math.sqrt(det1))
    q = np.exp(-0.5 * np.einsum("ni,ij,nj->n", d2, inv2, d2)) / (2 * math.pi * math.sqrt(det2))
    return 0.5 * float(np.abs(p - q).sum() * dx * dy)


def state_with(mean, cov, eps=1e-12):
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    ndim = mean.size
    state = ProposalState(
        mean=mean,
        scatter=np.zeros((ndim, ndim)),
        cov=cov,
        chol_lower=np.zeros((ndim, ndim)),
        chol_inv=np.zeros((ndim, ndim)),
        chol_logdet=0.0,
        scale=1.0,
        epsilon=eps,
        eps_rel=1e-12,
        dr_scale=0.5,
        sample_count=10,
        adaptation_count=0,
    )
    return factorize(state)


class TestAdaptationMeasure:
    def test_identical_states_give_zero(self):
        a = state_with([0.4, -1.0], [[2.0, 0.3], [0.3, 1.0]])
        b = state_with([0.4, -1.0], [[2.0, 0.3], [0.3, 1.0]])
        assert adaptation_measure(a, b) <= 1e-12

    def test_huge_mean_shift_saturates_at_one(self):
        a = state_with([0.0], [[1.0]])
        b = state_with([1e9], [[1.0]])
        assert adaptation_measure(a, b) == 1.0

    def test_known_1d_value(self):
        # N(0,1) vs N(0,4): BC = sqrt(2*1*2/5), measure = sqrt(1 - BC^2)
        a = state_with([0.0], [[1.0]], eps=1e-300)
        b = state_with([0.0], [[4.0]], eps=1e-300)
        expect = math.sqrt(1.0 - 4.0 / 5.0)
        got = adaptation_measure(a, b)
        assert got == pytest.approx(expect, abs=1e-12)
        tv = gaussian_tv_quadrature_1d(0.0, 1.0, 0.0, 2.0)
        assert got >= tv - 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            a = state_with(rng.normal(0, 2, 2), _random_spd(rng, 2))
            b = state_with(rng.normal(0, 2, 2), _random_spd(rng, 2))
            assert adaptation_measure(a, b) == pytest.approx(
                adaptation_measure(b, a), rel=1e-12, abs=1e-15
            )

    def test_upper_bounds_tv_random_1d_pairs(self):
        rng = np.random.default_rng(21)
        for _ in range(60):
            m1, m2 = rng.uniform(-2, 2, 2)
            s1, s2 = rng.uniform(0.4, 2.5, 2)
            a = state_with([m1], [[s1**2]], eps=1e-300)
            b = state_with([m2], [[s2**2]], eps=1e-300)
            tv = gaussian_tv_quadrature_1d(m1, s1, m2, s2)
            assert adaptation_measure(a, b) >= tv - 1e-9

    def test_bounded_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = state_with(rng.normal(0, 5, 3), _random_spd(rng, 3))
            b = state_with(rng.normal(0, 5, 3), _random_spd(rng, 3))
            assert 0.0 <= adaptation_measure(a, b) <= 1.0


def _random_spd(rng, ndim):
    m = rng.normal(0, 1, (ndim, ndim))
    return m @ m.T + 0.3 * np.eye(ndim)
