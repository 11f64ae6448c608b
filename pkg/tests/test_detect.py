"""Detector correctness: dense oracles, unitary special cases, small Monte Carlo."""

import numpy as np
import pytest

from hierdet.core import HierSupport, ProblemDims, block_energies, hier_threshold
from hierdet.detect import (
    CorrelatorMode,
    DetectorConfig,
    StopRule,
    block_correlator,
    correlator_energies,
    detect_from_energies,
    hihtp,
    hiiht,
    ideal_correlator_energies,
    restricted_least_squares,
)
from hierdet.measure import (
    apply_measurement,
    embed,
    make_control_window,
    make_measurement,
    make_signature,
    measurement_from_signature,
    superimpose_signatures,
)
from hierdet.sim import ChannelPrior, sample_channel

from test_measure import dense_operator


def sparse_instance(dims, rng, sigma_h2=1.0):
    h, support = sample_channel(ChannelPrior(dims=dims, sigma_h2=sigma_h2), rng)
    return h, support


def unitary_system(n, u, s, k_u, k_s):
    dims = ProblemDims(n=n, u=u, s=s, k_u=k_u, k_s=k_s, m=n)
    A = make_measurement(np.arange(n), n, randomize_phases=False)
    return dims, A


class TestRestrictedLeastSquares:
    def test_consistent_system_recovers(self):
        n, m = 64, 32
        dims = ProblemDims(n=n, u=4, s=16, k_u=2, k_s=2, m=m)
        rng = np.random.default_rng(0)
        h, support = sparse_instance(dims, rng)
        A = make_measurement(make_control_window(n, m, rng), n, rng)
        y = apply_measurement(A, embed(h, A))
        est = restricted_least_squares(A, y, support, dims)
        assert np.linalg.norm(est - h) <= 1e-8 * np.linalg.norm(h)

    def test_empty_support(self):
        n, m = 32, 8
        dims = ProblemDims(n=n, u=4, s=8, k_u=1, k_s=1, m=m)
        rng = np.random.default_rng(1)
        A = make_measurement(make_control_window(n, m, rng), n, rng)
        y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        est = restricted_least_squares(A, y, HierSupport(blocks=()), dims)
        np.testing.assert_array_equal(est, np.zeros(dims.us))
        np.testing.assert_allclose(
            np.linalg.norm(y - apply_measurement(A, embed(est, A))), np.linalg.norm(y)
        )

    def test_matches_dense_pseudo_inverse(self):
        n, m = 32, 16
        dims = ProblemDims(n=n, u=4, s=8, k_u=2, k_s=2, m=m)
        rng = np.random.default_rng(2)
        support = HierSupport(blocks=(0, 2), per_block={0: (1, 5), 2: (0, 7)})
        A = make_measurement(make_control_window(n, m, rng), n, rng)
        y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        est = restricted_least_squares(A, y, support, dims)
        dense = dense_operator(A)
        idx = support.flat_indices(dims.s)
        coeffs = np.linalg.pinv(dense[:, idx]) @ y
        expected = np.zeros(dims.us, complex)
        expected[idx] = coeffs
        np.testing.assert_allclose(est, expected, atol=1e-7)

    def test_underdetermined_support_rejected(self):
        n, m = 32, 4
        dims = ProblemDims(n=n, u=4, s=8, k_u=2, k_s=4, m=m)
        rng = np.random.default_rng(3)
        A = make_measurement(make_control_window(n, m, rng), n, rng)
        support = HierSupport(
            blocks=(0, 1), per_block={0: (0, 1, 2, 3), 1: (0, 1, 2)}
        )
        with pytest.raises(ValueError, match="underdetermined"):
            restricted_least_squares(A, np.zeros(m, complex), support, dims)


class TestHihtp:
    def test_unitary_noiseless_exact(self):
        dims, A = unitary_system(32, 4, 8, 2, 2)
        rng = np.random.default_rng(4)
        h, support = sparse_instance(dims, rng)
        y = apply_measurement(A, embed(h, A))
        out = hihtp(A, y, dims)
        np.testing.assert_allclose(out.h_hat, h, atol=1e-10)
        min_energy = min(e for e in block_energies(h, dims) if e > 0)
        for xi in (0.0, 1e-6, 0.9 * min_energy):
            cfg = DetectorConfig(xi=xi)
            assert hihtp(A, y, dims, cfg).active_users == set(support.blocks)

    def test_zero_input(self):
        dims, A = unitary_system(32, 4, 8, 2, 2)
        out = hihtp(A, np.zeros(32, complex), dims, DetectorConfig(xi=0.5))
        np.testing.assert_array_equal(out.h_hat, np.zeros(dims.us))
        assert out.active_users == set()
        assert hihtp(A, np.zeros(32, complex), dims).active_users == set()

    def test_noiseless_recovery_region(self):
        dims = ProblemDims(n=256, u=16, s=16, k_u=2, k_s=2, m=128)
        rng_master = np.random.default_rng(5)
        successes = 0
        trials = 25
        for _ in range(trials):
            h, support = sparse_instance(dims, rng_master)
            A = make_measurement(
                make_control_window(dims.n, dims.m, rng_master), dims.n, rng_master
            )
            y = apply_measurement(A, embed(h, A))
            out = hihtp(A, y, dims)
            if (
                out.active_users == set(support.blocks)
                and np.linalg.norm(out.h_hat - h) <= 1e-8 * np.linalg.norm(h)
            ):
                successes += 1
        assert successes >= trials - 1

    def test_iterate_supports_valid_and_deterministic(self):
        dims = ProblemDims(n=64, u=8, s=8, k_u=2, k_s=2, m=32)
        rng = np.random.default_rng(6)
        h, _ = sparse_instance(dims, rng)
        A = make_measurement(make_control_window(dims.n, dims.m, rng), dims.n, rng)
        noise = 0.05 * (rng.standard_normal(dims.m) + 1j * rng.standard_normal(dims.m))
        y = apply_measurement(A, embed(h, A)) + noise
        out1 = hihtp(A, y, dims)
        out2 = hihtp(A, y, dims)
        np.testing.assert_array_equal(out1.h_hat, out2.h_hat)
        assert out1.support_history == out2.support_history
        assert out1.active_users == out2.active_users
        for sup in out1.support_history:
            assert sup.is_valid_for(dims)
        assert out1.iterations <= DetectorConfig().max_iters

    def test_residual_monotone_on_fixed_support(self):
        dims = ProblemDims(n=64, u=8, s=8, k_u=2, k_s=2, m=32)
        rng = np.random.default_rng(7)
        h, _ = sparse_instance(dims, rng)
        A = make_measurement(make_control_window(dims.n, dims.m, rng), dims.n, rng)
        noise = 0.2 * (rng.standard_normal(dims.m) + 1j * rng.standard_normal(dims.m))
        y = apply_measurement(A, embed(h, A)) + noise
        out = hihtp(A, y, dims, DetectorConfig(stop_rule=StopRule.MAX_ITERS, max_iters=8))
        for t in range(1, len(out.support_history)):
            if out.support_history[t] == out.support_history[t - 1]:
                assert out.residual_history[t] <= out.residual_history[t - 1] + 1e-9

    def test_noise_free_consistency(self):
        dims = ProblemDims(n=128, u=8, s=16, k_u=2, k_s=2, m=64)
        rng = np.random.default_rng(8)
        h, _ = sparse_instance(dims, rng)
        A = make_measurement(make_control_window(dims.n, dims.m, rng), dims.n, rng)
        y = apply_measurement(A, embed(h, A))
        xi = 0.1 * min(e for e in block_energies(h, dims) if e > 0)
        out = hihtp(A, y, dims, DetectorConfig(xi=xi))
        if out.residual_history[-1] <= 1e-8 * np.linalg.norm(y):
            expected = {
                int(i) for i in np.flatnonzero(block_energies(h, dims) > xi)
            }
            assert out.active_users >= expected


class TestHiiht:
    def test_unitary_noiseless_exact(self):
        dims, A = unitary_system(32, 4, 8, 2, 2)
        rng = np.random.default_rng(9)
        h, support = sparse_instance(dims, rng)
        y = apply_measurement(A, embed(h, A))
        out = hiiht(A, y, dims)
        np.testing.assert_allclose(out.h_hat, h, atol=1e-10)
        assert out.active_users == set(support.blocks)

    def test_zero_input(self):
        dims, A = unitary_system(32, 4, 8, 2, 2)
        out = hiiht(A, np.zeros(32, complex), dims)
        np.testing.assert_array_equal(out.h_hat, np.zeros(dims.us))
        assert out.active_users == set()

    def test_agrees_with_hihtp_in_recovery_region(self):
        dims = ProblemDims(n=256, u=16, s=16, k_u=2, k_s=2, m=128)
        rng = np.random.default_rng(10)
        agreements = 0
        trials = 40
        for _ in range(trials):
            h, _ = sparse_instance(dims, rng)
            A = make_measurement(
                make_control_window(dims.n, dims.m, rng), dims.n, rng
            )
            y = apply_measurement(A, embed(h, A))
            a = hihtp(A, y, dims)
            b = hiiht(A, y, dims)
            if a.active_users == b.active_users:
                agreements += 1
        assert agreements / trials >= 0.95

    def test_converges_to_tolerance_noiseless(self):
        dims = ProblemDims(n=128, u=8, s=16, k_u=2, k_s=2, m=64)
        rng = np.random.default_rng(11)
        h, _ = sparse_instance(dims, rng)
        A = make_measurement(make_control_window(dims.n, dims.m, rng), dims.n, rng)
        y = apply_measurement(A, embed(h, A))
        out = hiiht(A, y, dims)
        assert np.linalg.norm(out.h_hat - h) <= 1e-8 * np.linalg.norm(h)


class TestBlockCorrelator:
    def test_single_user_full_window(self):
        n = 64
        dims = ProblemDims(n=n, u=4, s=16, k_u=1, k_s=2, m=n)
        rng = np.random.default_rng(12)
        sig = make_signature(np.arange(n), n, n, rng, shift_stride=dims.s)
        h = np.zeros(dims.us, complex)
        h[[3, 7]] = [1.0 + 0.5j, -0.25j]  # user 0 active
        y = superimpose_signatures(h, sig, dims)
        h1_energy = np.vdot(h[:16], h[:16]).real
        for xi in (1e-6, 1.0, 0.9 * n**2 * h1_energy):
            assert block_correlator(y, sig, dims, xi) == {0}

    def test_zero_received_word(self):
        n = 64
        dims = ProblemDims(n=n, u=4, s=16, k_u=1, k_s=2, m=16)
        rng = np.random.default_rng(13)
        sig = make_signature(make_control_window(n, 16, rng), n, 16, rng, shift_stride=16)
        assert block_correlator(np.zeros(n, complex), sig, dims, 1.0) == set()

    def test_subsampled_matches_dense_oracle(self):
        n, m = 32, 12
        dims = ProblemDims(n=n, u=2, s=8, k_u=2, k_s=2, m=m)
        rng = np.random.default_rng(14)
        sig = make_signature(make_control_window(n, m, rng), n, m, rng, shift_stride=8)
        h = np.zeros(dims.us, complex)
        h[[1, 4]] = [1.0, 0.7 - 0.2j]
        h[[8, 13]] = [-0.5j, 0.3]
        y = superimpose_signatures(h, sig, dims) + 0.01 * (
            rng.standard_normal(n) + 1j * rng.standard_normal(n)
        )
        D = np.column_stack([np.roll(sig.p0, t) for t in range(dims.us)])
        stats = D.conj().T @ y
        energies = np.abs(stats.reshape(dims.u, dims.s)) ** 2
        expected = energies.sum(axis=1)
        np.testing.assert_allclose(correlator_energies(y, sig, dims), expected, atol=1e-9)

    def test_rank_based_at_zero_threshold(self):
        energies = np.array([0.1, 5.0, 0.4, 4.0])
        assert detect_from_energies(energies, 0.0, 2) == {1, 3}
        assert detect_from_energies(energies, 0.45, 4) == {1, 3}

    def test_ideal_mode_statistics(self):
        dims = ProblemDims(n=64, u=4, s=16, k_u=1, k_s=2, m=16)
        rng = np.random.default_rng(15)
        h = np.zeros(dims.us, complex)
        h[[0, 5]] = [1.0, 1.0j]
        sigma2 = 1e-8
        energies = ideal_correlator_energies(h, dims, sigma2, rng)
        # active statistic ~ n^2 ||h_0||^2, inactive ~ n s sigma2
        np.testing.assert_allclose(energies[0], dims.n**2 * 2.0, rtol=1e-3)
        assert energies[1:].max() < 1e-3
        detected = block_correlator(
            None, None, dims, 0.0, CorrelatorMode.IDEAL_ORTHOGONAL,
            h=h, sigma2=sigma2, rng=rng,
        )
        assert detected == {0}

    def test_ideal_mode_requires_inputs(self):
        dims = ProblemDims(n=64, u=4, s=16, k_u=1, k_s=2, m=16)
        with pytest.raises(ValueError):
            block_correlator(None, None, dims, 0.0, "ideal")
