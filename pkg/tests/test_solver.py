import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csthin.errors import InfeasibleError, InvalidArgumentError
from csthin.fields import build_steering, hemisphere_grid, steering_from_positions
from csthin.geometry import build_grid, pairwise_distances
from csthin.solver import (
    CsProblem,
    ReducedSystem,
    SolverConfig,
    enforce_min_spacing,
    merge_close_elements,
    power_norm,
    project_ball,
    reweight_loop,
    soft_threshold,
    solve_weighted_l1,
)


def random_problem(rng, k, q, sparsity=None):
    A = rng.normal(size=(q, k)) + 1j * rng.normal(size=(q, k))
    w0 = rng.normal(size=k) + 1j * rng.normal(size=k)
    if sparsity is not None:
        w0[rng.permutation(k)[sparsity:]] = 0
    return A, w0, A @ w0


def jittered_instance(seed, sparsity=3):
    """4x4 candidate lattice with random position jitter and a sparse truth."""
    rng = np.random.default_rng(seed)
    g = build_grid(4, 4, 0.5, 0.5, 1e9)
    x, y = g.positions()
    x = x + rng.uniform(-0.15, 0.15, g.size)
    y = y + rng.uniform(-0.15, 0.15, g.size)
    A = steering_from_positions(x, y, hemisphere_grid(10, 20))
    true = np.sort(rng.choice(g.size, sparsity, replace=False))
    w0 = np.zeros(g.size, dtype=complex)
    w0[true] = 1.0
    return g, A, A @ w0, true


def l0_oracle(A, p, xi, max_sparsity=3):
    """Smallest support whose least-squares residual meets ``xi``; among
    supports of that size the one with the lowest residual."""
    k = A.shape[1]
    for s in range(1, max_sparsity + 1):
        best = None
        for cols in itertools.combinations(range(k), s):
            sub = A[:, cols]
            sol, *_ = np.linalg.lstsq(sub, p, rcond=None)
            r = np.linalg.norm(sub @ sol - p)
            if best is None or r < best[0]:
                best = (r, cols)
        if best[0] <= xi:
            return best[1]
    return None


class TestBuildingBlocks:
    def test_soft_threshold_complex(self):
        z = np.array([3 + 4j, 0.1j, -2.0])
        out = soft_threshold(z, np.array([1.0, 1.0, 2.0]))
        np.testing.assert_allclose(out, [(3 + 4j) * 0.8, 0, 0], atol=1e-15)

    @given(re=st.floats(-100, 100), im=st.floats(-100, 100), t=st.floats(0, 50))
    def test_soft_threshold_shrinks_modulus(self, re, im, t):
        z = complex(re, im)
        out = soft_threshold(np.array([z]), np.array([t]))[0]
        assert abs(abs(out) - max(abs(z) - t, 0.0)) <= 1e-12 * max(abs(z), 1.0)

    def test_project_ball(self):
        c = np.array([1 + 1j, 0])
        z = np.array([4 + 1j, 0])
        np.testing.assert_allclose(project_ball(z, c, 1.0), [2 + 1j, 0])
        inside = np.array([1.2 + 1j, 0.1])
        assert np.array_equal(project_ball(inside, c, 1.0), inside)

    def test_power_norm_upper_bound(self):
        rng = np.random.default_rng(0)
        B = rng.normal(size=(40, 12)) + 1j * rng.normal(size=(40, 12))
        exact = np.linalg.norm(B, 2)
        assert exact * 0.9 <= power_norm(B) <= exact * (1 + 1e-12)

    def test_reduced_system_residual_identity(self):
        rng = np.random.default_rng(1)
        A, _, _ = random_problem(rng, 10, 60)
        p = rng.normal(size=60) + 1j * rng.normal(size=60)
        sys_ = ReducedSystem(A, p)
        for _ in range(5):
            w = rng.normal(size=10) + 1j * rng.normal(size=10)
            assert sys_.residual(w) == pytest.approx(np.linalg.norm(A @ w - p), rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            SolverConfig(outer_stages=0)
        with pytest.raises(InvalidArgumentError):
            SolverConfig(epsilon_reweight=0.0)

    def test_problem_validation(self):
        A = np.ones((4, 3), dtype=complex)
        with pytest.raises(InvalidArgumentError):
            CsProblem(A, np.ones(5), 1.0)
        with pytest.raises(InvalidArgumentError):
            CsProblem(A, np.ones(4), 0.0)
        with pytest.raises(InvalidArgumentError):
            CsProblem(A, np.ones(4), 1.0, gamma=np.array([1.0, 0.0, 1.0]))


class TestWeightedL1:
    def test_large_xi_gives_zero(self):
        rng = np.random.default_rng(2)
        A, _, p = random_problem(rng, 8, 30)
        sol = solve_weighted_l1(CsProblem(A, p, np.linalg.norm(p) * 1.01))
        assert not sol.weights.any()

    def test_infinite_gamma_excluded(self):
        rng = np.random.default_rng(3)
        A, w0, _ = random_problem(rng, 12, 40)
        w0[4] = 0
        p = A @ w0 + 0.3 * A[:, 4]
        gamma = np.ones(12)
        gamma[4] = np.inf
        _, cert = ReducedSystem(A, p).lstsq(np.flatnonzero(np.isfinite(gamma)))
        xi = cert + 0.05 * np.linalg.norm(p)
        sol = solve_weighted_l1(CsProblem(A, p, xi, gamma))
        assert sol.weights[4] == 0
        assert sol.residual <= xi * (1 + 1e-6)

    def test_single_instance_support_matches_oracle(self):
        g, A, p, true = jittered_instance(12345)
        xi = 1e-3 * np.linalg.norm(p)
        w, _ = reweight_loop(g, A, p, xi)
        assert tuple(np.flatnonzero(w)) == l0_oracle(A, p, xi) == tuple(true)

    def test_infeasible_certificate(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(30, 5)) + 1j * rng.normal(size=(30, 5))
        p = rng.normal(size=30) + 1j * rng.normal(size=30)
        _, cert = ReducedSystem(A, p).lstsq()
        with pytest.raises(InfeasibleError) as exc:
            solve_weighted_l1(CsProblem(A, p, 0.5 * cert))
        assert exc.value.residual == pytest.approx(cert, rel=1e-10)
        assert exc.value.xi == 0.5 * cert

    def test_scaling_equivariance(self):
        rng = np.random.default_rng(5)
        A, _, p = random_problem(rng, 16, 64, sparsity=5)
        xi = 0.05 * np.linalg.norm(p)
        base = solve_weighted_l1(CsProblem(A, p, xi)).weights
        for alpha in (1e-3, 7.0, 1e4):
            scaled = solve_weighted_l1(CsProblem(A, alpha * p, alpha * xi)).weights
            assert np.linalg.norm(scaled - alpha * base) <= 1e-4 * alpha * np.linalg.norm(base)

    def test_underdetermined(self):
        rng = np.random.default_rng(6)
        A, _, p = random_problem(rng, 30, 12, sparsity=3)
        xi = 1e-3 * np.linalg.norm(p)
        sol = solve_weighted_l1(CsProblem(A, p, xi))
        assert np.linalg.norm(A @ sol.weights - p) <= xi * (1 + 1e-6)

    def test_objective_not_worse_than_least_squares_point(self):
        rng = np.random.default_rng(7)
        A, _, p = random_problem(rng, 10, 50)
        xi = 0.3 * np.linalg.norm(p)
        sol = solve_weighted_l1(CsProblem(A, p, xi))
        w_ls, _ = ReducedSystem(A, p).lstsq()
        # the scaled LS point (1 - xi/||p||) w_ls is feasible, so the l1
        # minimum can be no larger
        t = 1 - xi / np.linalg.norm(p)
        assert np.abs(sol.weights).sum() <= np.abs(t * w_ls).sum() * (1 + 1e-4)


class TestReweightLoop:
    def test_single_stage_equals_single_solve(self):
        rng = np.random.default_rng(8)
        g = build_grid(3, 3, 0.5, 0.5, 1e9)
        A, _, p = random_problem(rng, 9, 40)
        xi = 0.2 * np.linalg.norm(p)
        cfg = SolverConfig(outer_stages=1, prune_fraction=1e-300)
        w, trace = reweight_loop(g, A, p, xi, cfg=cfg)
        single = solve_weighted_l1(CsProblem(A, p, xi), cfg).weights
        np.testing.assert_array_equal(w, single)
        assert len(trace) == 1

    def test_trace_residual_non_increasing(self):
        g = build_grid(8, 8, 0.5, 0.5, 1e9)
        d = hemisphere_grid(3, 6)
        A = build_steering(g, d)
        rng = np.random.default_rng(9)
        p = A @ (rng.uniform(0.5, 2, g.size) + 0j)
        xi = 0.05 * np.linalg.norm(p)
        _, trace = reweight_loop(g, A, p, xi)
        res = [s.residual for s in trace]
        assert all(b <= a for a, b in zip(res, res[1:]))
        assert all(r <= xi * (1 + 1e-6) for r in res)

    def test_spacing_penalty_marks_neighbors(self):
        # with d_min above the pitch the loop must still return a feasible taper
        g = build_grid(6, 6, 0.5, 0.5, 1e9)
        d = hemisphere_grid(3, 6)
        A = build_steering(g, d)
        p = A @ np.ones(g.size, dtype=complex)
        xi = 0.1 * np.linalg.norm(p)
        w, trace = reweight_loop(g, A, p, xi, d_min=0.75)
        assert np.linalg.norm(A @ w - p) <= xi * (1 + 1e-6)
        assert len(trace) == 5

    def test_support_shrinks_in_most_trials(self):
        nested = total = 0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            g = build_grid(6, 6, 0.5, 0.5, 1e9)
            x, y = g.positions()
            A = steering_from_positions(x + rng.uniform(-0.1, 0.1, 36),
                                        y + rng.uniform(-0.1, 0.1, 36), hemisphere_grid(6, 12))
            w0 = np.zeros(36, dtype=complex)
            w0[rng.choice(36, 5, replace=False)] = rng.uniform(0.5, 1.5, 5)
            p = A @ w0
            prev = None
            cfg = SolverConfig(outer_stages=4)
            # rerun with growing stage counts; stage i is deterministic
            for stages in range(1, 5):
                w, _ = reweight_loop(g, A, p, 1e-2 * np.linalg.norm(p),
                                     cfg=SolverConfig(outer_stages=stages))
                cur = set(np.flatnonzero(w))
                if prev is not None:
                    total += 1
                    nested += cur <= prev
                prev = cur
        assert nested >= 0.9 * total


def test_random_feasibility():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        k = int(rng.integers(4, 33))
        q = int(rng.integers(k, 129))
        A, _, p = random_problem(rng, k, q, sparsity=int(rng.integers(1, k + 1)))
        p = p + 0.01 * (rng.normal(size=q) + 1j * rng.normal(size=q))
        _, cert = ReducedSystem(A, p).lstsq()
        xi = cert + rng.uniform(0.01, 0.5) * (np.linalg.norm(p) - cert)
        sol = solve_weighted_l1(CsProblem(A, p, xi))
        assert np.linalg.norm(A @ sol.weights - p) <= xi * (1 + 1e-6)


class TestMerge:
    def test_co_located_exact(self):
        x, y, w, dropped = merge_close_elements([0.2, 0.2], [0.1, 0.1], [1 + 2j, 3 - 1j], 0.5)
        assert x.tolist() == [0.2] and y.tolist() == [0.1]
        assert w.tolist() == [4 + 1j]
        assert dropped == 0

    def test_compliant_bit_identical(self):
        g = build_grid(6, 6, 0.5, 0.5, 1e9)
        rng = np.random.default_rng(10)
        w = np.zeros(g.size, dtype=complex)
        w[[0, 2, 14, 35]] = rng.normal(size=4) + 1j * rng.normal(size=4)
        out = enforce_min_spacing(g, w, 0.5)
        assert out.tobytes() == w.tobytes()
        assert out is not w

    def test_pair_merges_to_midpoint_site(self):
        g = build_grid(7, 1, 0.3, 0.3, 1e9)
        w = np.zeros(7, dtype=complex)
        w[2] = w[4] = 1.0
        # 0.6 apart with d_min 0.7: midpoint is site 3
        out = enforce_min_spacing(g, w, 0.7)
        assert np.flatnonzero(out).tolist() == [3]
        assert out[3] == 2.0
        A = build_steering(g, ([0.0], [0.0]))
        assert (A @ out)[0] == (A @ w)[0]

    def test_adjacent_equal_pair(self):
        g = build_grid(5, 1, 0.3, 0.3, 1e9)
        w = np.zeros(5, dtype=complex)
        w[1] = w[2] = 1.0
        out = enforce_min_spacing(g, w, 0.5)
        assert np.flatnonzero(out).size == 1 and out.sum() == 2.0

    def test_invalid_dmin(self):
        g = build_grid(2, 2, 0.5, 0.5, 1e9)
        with pytest.raises(InvalidArgumentError):
            enforce_min_spacing(g, np.ones(4), 0.0)

    @given(seed=st.integers(0, 10_000), d_min=st.floats(0.3, 1.6))
    @settings(max_examples=40, deadline=None)
    def test_spacing_postcondition(self, seed, d_min):
        rng = np.random.default_rng(seed)
        g = build_grid(8, 8, 0.3, 0.3, 1e9)
        w = np.where(rng.random(g.size) < 0.5, rng.normal(size=g.size) + 1j, 0)
        out = enforce_min_spacing(g, w, d_min, seed=seed)
        act = np.flatnonzero(out)
        if act.size > 1:
            d = pairwise_distances(g, act)
            np.fill_diagonal(d, np.inf)
            assert d.min() >= d_min * (1 - 1e-9)

    def test_seeded_tiebreak_is_deterministic(self):
        x = np.array([0.0, 0.3, 0.6, 0.9])
        y = np.zeros(4)
        w = np.ones(4, dtype=complex)
        a = merge_close_elements(x, y, w, 0.5, seed=7)
        b = merge_close_elements(x, y, w, 0.5, seed=7)
        for u, v in zip(a, b):
            assert np.array_equal(u, v)
