"""Forest growth, splitting, weighting, and the variance subsample plan.

The split search is checked against a from-scratch exhaustive scan; the
weight combination rule is checked by replaying the documented per-tree
stream derivation and applying the leaf-mass formula by hand.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestdens import expfam
from forestdens.basis import basis_matrix, default_basis
from forestdens.errors import AllWeightsZero, NoCleanTrees
from forestdens.forest import (Box, Dataset, ForestConfig, WeightVector,
                               best_split, delta_tilde, draw_subsamples,
                               grow_branch, grow_from_halves, mu_hat,
                               per_tree_means, se_subsample_plan, sigma_fe,
                               split_half, weights)
from forestdens import forest as forest_mod


def unit_box(d):
    return [[0.0] * d, [1.0] * d]


def make_config(**kw):
    defaults = dict(subsample_size=40, n_trees=4, basis_order=3,
                    initial_parent=unit_box(2), min_child=4,
                    min_fraction=0.05, scheme="mu", n_grid=16, seed=0)
    defaults.update(kw)
    return ForestConfig(**defaults)


def random_dataset(rng, n, d):
    return Dataset(rng.random(n), rng.random((n, d)))


class TestBox:
    def test_contains_closed_bounds(self):
        box = Box([0.0, 0.0], [1.0, 0.5])
        assert box.contains(np.array([0.0, 0.5]))
        assert not box.contains(np.array([0.0, 0.51]))

    def test_open_lower_face(self):
        box = Box([0.2, 0.0], [1.0, 1.0], lower_open=[True, False])
        assert not box.contains(np.array([0.2, 0.3]))
        assert box.contains(np.array([0.2000001, 0.3]))

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            Box([1.0], [0.0])


class TestDrawSubsamples:
    def test_rejects_subsample_equal_to_sample(self):
        cfg = make_config(subsample_size=10, min_child=2)
        with pytest.raises(ValueError):
            draw_subsamples(10, cfg, np.random.default_rng(0))

    def test_cardinality_and_distinctness(self):
        cfg = ForestConfig(subsample_size=4, n_trees=4, basis_order=2,
                           initial_parent=unit_box(1), min_child=2, seed=0)
        sets = draw_subsamples(10, cfg, np.random.default_rng(1))
        assert len(sets) == 4
        for s in sets:
            assert s.size == 4
            assert np.unique(s).size == 4

    def test_inclusion_frequency(self):
        cfg = ForestConfig(subsample_size=4, n_trees=10_000, basis_order=2,
                           initial_parent=unit_box(1), min_child=2, seed=0)
        sets = draw_subsamples(10, cfg, np.random.default_rng(2))
        hits = sum(0 in s for s in sets)
        p = 4 / 10
        se = np.sqrt(p * (1 - p) / 10_000)
        assert abs(hits / 10_000 - p) <= 3 * se


class TestSplitHalf:
    def test_even_sizes(self):
        i0, i1 = split_half(np.arange(4), np.random.default_rng(0))
        assert i1.size == 2 and i0.size == 2
        assert np.array_equal(np.sort(np.concatenate([i0, i1])), np.arange(4))

    def test_odd_sizes_floor_to_deciding_half(self):
        i0, i1 = split_half(np.arange(5), np.random.default_rng(0))
        assert i1.size == 2 and i0.size == 3

    def test_uniform_over_subsets(self):
        rng = np.random.default_rng(3)
        counts = {}
        for _ in range(10_000):
            _, i1 = split_half(np.arange(4), rng)
            counts[tuple(i1)] = counts.get(tuple(i1), 0) + 1
        assert len(counts) == 6
        se = np.sqrt((1 / 6) * (5 / 6) / 10_000)
        for freq in counts.values():
            assert abs(freq / 10_000 - 1 / 6) <= 3 * se


class TestDeltaTilde:
    def test_zero_for_zero_pseudo_outcomes(self):
        assert delta_tilde((np.zeros((3, 2)), np.zeros((2, 2)))) == 0.0

    def test_hand_case(self):
        c1 = np.array([[1.0], [1.0]])
        c2 = np.array([[-2.0]])
        assert delta_tilde((c1, c2)) == pytest.approx(6.0, abs=1e-14)

    def test_rejects_empty_child(self):
        with pytest.raises(ValueError):
            delta_tilde((np.zeros((0, 2)), np.ones((2, 2))))

    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=6),
           st.integers(min_value=1, max_value=4), st.randoms(use_true_random=False))
    @settings(max_examples=100, deadline=None)
    def test_permutation_invariance(self, m1, m2, j, pyrandom):
        rng = np.random.default_rng(pyrandom.randrange(2 ** 32))
        c1 = rng.standard_normal((m1, j))
        c2 = rng.standard_normal((m2, j))
        base = delta_tilde((c1, c2))
        perm1 = rng.permutation(m1)
        perm2 = rng.permutation(m2)
        assert delta_tilde((c1[perm1], c2[perm2])) == pytest.approx(base, rel=1e-12)


def brute_force_split(x_members, rho, cfg, allowed_dims):
    """Independent exhaustive scan over the same candidate grid."""
    m = x_members.shape[0]
    bound = max(cfg.min_fraction * m, cfg.min_child)
    best, best_score = None, -np.inf
    for d in sorted(int(v) for v in allowed_dims):
        lo, hi = x_members[:, d].min(), x_members[:, d].max()
        if not hi > lo:
            continue
        for thr in np.linspace(lo, hi, cfg.n_grid + 2)[1:-1]:
            left = x_members[:, d] <= thr
            nl, nr = int(left.sum()), int((~left).sum())
            if nl < bound or nr < bound:
                continue
            score = delta_tilde((rho[left], rho[~left]))
            if score > best_score:
                best, best_score = (d, float(thr)), score
    return best, best_score


class TestBestSplit:
    def test_separated_clusters_split_on_first_dim(self):
        rng = np.random.default_rng(4)
        m = 30
        x = rng.random((m, 2))
        x[:15, 0] = rng.uniform(0.0, 0.3, 15)
        x[15:, 0] = rng.uniform(0.7, 1.0, 15)
        y = np.concatenate([rng.uniform(0.05, 0.15, 15), rng.uniform(0.85, 0.95, 15)])
        cfg = make_config(basis_order=1, min_child=4)
        spec = default_basis(1)
        pivot = expfam.MomentVector(basis_matrix(spec, y).mean(axis=0))
        got = best_split(cfg.initial_parent, x, y, pivot, cfg, [0, 1], spec=spec)
        assert got is not None
        dim, thr = got
        assert dim == 0
        assert 0.3 < thr < 0.7
        rho = basis_matrix(spec, y) - pivot.mu
        expected, _ = brute_force_split(x, rho, cfg, [0, 1])
        assert got == expected

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(5)
        spec = default_basis(2)
        cfg = make_config(basis_order=2, min_child=3, n_grid=8)
        for _ in range(50):
            m = rng.integers(8, 30)
            x = rng.random((m, 3))
            y = rng.random(m)
            dims = rng.choice(3, size=rng.integers(1, 4), replace=False)
            pivot = expfam.MomentVector(basis_matrix(spec, y).mean(axis=0))
            rho = basis_matrix(spec, y) - pivot.mu
            got = best_split(None, x, y, pivot, cfg, dims, spec=spec)
            expected, exp_score = brute_force_split(x, rho, cfg, dims)
            assert got == expected
            if got is not None:
                left = x[:, got[0]] <= got[1]
                assert delta_tilde((rho[left], rho[~left])) == pytest.approx(exp_score)

    def test_identical_covariates_yield_none(self):
        cfg = make_config(basis_order=1, min_child=2)
        spec = default_basis(1)
        x = np.full((12, 2), 0.4)
        y = np.linspace(0.1, 0.9, 12)
        pivot = expfam.MomentVector(basis_matrix(spec, y).mean(axis=0))
        assert best_split(None, x, y, pivot, cfg, [0, 1], spec=spec) is None

    def test_feasibility_bounds_on_random_instances(self):
        rng = np.random.default_rng(6)
        spec = default_basis(1)
        cfg = make_config(basis_order=1, min_child=3, min_fraction=0.2, n_grid=8)
        for _ in range(200):
            m = int(rng.integers(6, 25))
            x = rng.random((m, 2))
            y = rng.random(m)
            pivot = expfam.MomentVector(basis_matrix(spec, y).mean(axis=0))
            got = best_split(None, x, y, pivot, cfg, [0, 1], spec=spec)
            if got is None:
                continue
            dim, thr = got
            n_left = int((x[:, dim] <= thr).sum())
            bound = max(cfg.min_fraction * m, cfg.min_child)
            assert n_left >= bound and (m - n_left) >= bound

    def test_schemes_agree_at_zero_pivot(self):
        # a solved zero coefficient vector and a zero moment pivot induce the
        # same pseudo-outcomes, hence the same selected split
        rng = np.random.default_rng(7)
        spec = default_basis(3)
        cfg = make_config(basis_order=3, min_child=3)
        zero_theta = expfam.solve_theta(np.zeros(3), spec)
        zero_mu = expfam.MomentVector(np.zeros(3))
        for _ in range(20):
            m = int(rng.integers(8, 24))
            x = rng.random((m, 2))
            y = rng.random(m)
            a = best_split(None, x, y, zero_theta, cfg, [0, 1], spec=spec)
            b = best_split(None, x, y, zero_mu, cfg, [0, 1], spec=spec)
            assert a == b


class TestGrowBranch:
    def test_no_split_when_min_child_large(self):
        rng = np.random.default_rng(8)
        y = rng.random(12)
        x = rng.random((12, 2))
        cfg = make_config(subsample_size=12, min_child=6)  # deciding half is 6 < 12
        res = grow_branch(np.array([0.5, 0.5]), y, x, cfg, np.random.default_rng(0))
        assert res.splits == ()
        np.testing.assert_array_equal(res.leaf_box.lower, [0.0, 0.0])
        np.testing.assert_array_equal(res.leaf_box.upper, [1.0, 1.0])
        assert res.holdout_members.size == 6  # ceil(12 / 2)

    def test_rejects_query_outside_parent(self):
        cfg = make_config(subsample_size=8, min_child=2,
                          initial_parent=[[0.4, 0.4], [0.6, 0.6]])
        rng = np.random.default_rng(9)
        with pytest.raises(ValueError):
            grow_branch(np.array([0.9, 0.5]), rng.random(8), rng.random((8, 2)),
                        cfg, np.random.default_rng(0))

    def test_honesty_and_constraints_on_random_instances(self):
        rng = np.random.default_rng(10)
        x_query = np.array([0.5, 0.5])
        for trial in range(60):
            s = int(rng.integers(12, 40))
            y = rng.random(s)
            x = rng.random((s, 2))
            cfg = make_config(subsample_size=s, min_child=int(rng.integers(2, 5)),
                              min_fraction=float(rng.uniform(0.05, 0.3)),
                              scheme=("mu", "theta")[trial % 2])
            res = grow_branch(x_query, y, x, cfg, np.random.default_rng(trial))
            # honesty: holdout disjoint from the deciding half
            assert not set(res.holdout_members) & set(res.split_members)
            # leaf contains the query point and sits inside the parent
            assert res.leaf_box.contains(x_query)
            assert np.all(res.leaf_box.lower >= 0.0) and np.all(res.leaf_box.upper <= 1.0)
            # child-count constraint on every executed split
            for rec in res.splits:
                bound = max(cfg.min_fraction * rec.n_parent, cfg.min_child)
                assert min(rec.n_left, rec.n_right) >= bound
                assert rec.n_left + rec.n_right == rec.n_parent
            # the loop never runs once the deciding members fall below 2k
            if res.splits:
                assert res.splits[0].n_parent >= 2 * cfg.min_child

    def test_nesting_boxes_shrink_toward_query(self):
        rng = np.random.default_rng(11)
        s = 60
        y = rng.random(s)
        x = rng.random((s, 2))
        cfg = make_config(subsample_size=s, min_child=3, min_fraction=0.05)
        res = grow_branch(np.array([0.5, 0.5]), y, x, cfg, np.random.default_rng(1))
        lo = np.zeros(2)
        hi = np.ones(2)
        for rec in res.splits:
            if 0.5 <= rec.threshold:
                assert rec.threshold <= hi[rec.dim]
                hi[rec.dim] = min(hi[rec.dim], rec.threshold)
            else:
                assert rec.threshold >= lo[rec.dim]
                lo[rec.dim] = max(lo[rec.dim], rec.threshold)
            assert lo[rec.dim] < hi[rec.dim]
        np.testing.assert_array_equal(res.leaf_box.lower, lo)
        np.testing.assert_array_equal(res.leaf_box.upper, hi)


class TestDegenerateKernel:
    def test_enumerated_half_splits_average_to_plain_mean(self):
        # no-split configuration: enumerate every deciding-half choice
        from itertools import combinations

        rng = np.random.default_rng(12)
        s = 4
        y = rng.random(s)
        x = rng.random((s, 2))
        cfg = make_config(subsample_size=s, min_child=2)  # deciding half of 2 < 4
        spec = default_basis(cfg.basis_order)
        phi = basis_matrix(spec, y)
        outputs = []
        for deciding in combinations(range(s), s // 2):
            holdout = [i for i in range(s) if i not in deciding]
            res = grow_from_halves(np.array([0.5, 0.5]), y, x, cfg,
                                   np.array(holdout), np.array(deciding),
                                   np.random.default_rng(0))
            assert np.array_equal(np.sort(res.holdout_members), holdout)
            outputs.append(phi[res.holdout_members].mean(axis=0))
        np.testing.assert_allclose(np.mean(outputs, axis=0), phi.mean(axis=0),
                                   atol=1e-12)


class TestWeights:
    def test_single_tree_no_split_uniform_over_holdout(self):
        rng = np.random.default_rng(13)
        data = random_dataset(rng, 10, 2)
        cfg = make_config(subsample_size=8, n_trees=1, min_child=4, seed=5)
        w = weights(np.array([0.5, 0.5]), data, cfg).weights
        nz = np.flatnonzero(w)
        assert nz.size == 4  # holdout half of the subsample, all inside the box
        np.testing.assert_allclose(w[nz], 0.25)

    def test_sum_to_one_when_leaves_nonempty(self):
        rng = np.random.default_rng(14)
        data = random_dataset(rng, 30, 3)
        cfg = ForestConfig(subsample_size=12, n_trees=16, basis_order=2,
                           initial_parent=unit_box(3), min_child=2, seed=7,
                           scheme="mu")
        w = weights(np.full(3, 0.5), data, cfg)
        assert w.total == pytest.approx(1.0, abs=1e-12)

    def test_two_tree_hand_combination(self):
        # replay the documented stream derivation and apply the leaf-mass
        # formula by hand: each tree spreads 1/(2 * leaf size) over holdouts
        rng = np.random.default_rng(15)
        data = random_dataset(rng, 6, 2)
        cfg = make_config(subsample_size=4, n_trees=2, min_child=2, seed=21)
        x_query = np.array([0.5, 0.5])
        w = weights(x_query, data, cfg).weights

        master, tree_rngs = forest_mod._tree_streams(cfg.seed, cfg.n_trees)
        subsamples = draw_subsamples(data.n, cfg, master)
        expected = np.zeros(data.n)
        for t in range(2):
            idx = subsamples[t]
            res = grow_branch(x_query, data.y[idx], data.x[idx], cfg,
                              tree_rngs[t], index=idx)
            if res.holdout_members.size:
                expected[res.holdout_members] += 1.0 / (2 * res.holdout_members.size)
        np.testing.assert_array_equal(w, expected)
        assert set(np.round(w[w > 0], 10)) <= {0.25, 0.5}

    def test_deterministic_across_runs_and_workers(self):
        rng = np.random.default_rng(16)
        data = random_dataset(rng, 40, 2)
        cfg = make_config(subsample_size=16, n_trees=8, min_child=2, seed=123)
        x_query = np.array([0.5, 0.5])
        w1 = weights(x_query, data, cfg, workers=1).weights
        w2 = weights(x_query, data, cfg, workers=8).weights
        w3 = weights(x_query, data, cfg).weights
        np.testing.assert_array_equal(w1, w2)
        np.testing.assert_array_equal(w1, w3)

    def test_zero_sum_when_parent_excludes_all_data(self):
        rng = np.random.default_rng(17)
        data = Dataset(rng.random(12), 0.9 + 0.1 * rng.random((12, 2)))
        cfg = make_config(subsample_size=6, n_trees=3, min_child=2,
                          initial_parent=[[0.0, 0.0], [0.5, 0.5]])
        w = weights(np.array([0.25, 0.25]), data, cfg)
        assert w.total == 0.0


class TestMuHat:
    def test_uniform_weights_give_sample_mean(self):
        rng = np.random.default_rng(18)
        data = random_dataset(rng, 25, 2)
        spec = default_basis(3)
        w = WeightVector(np.full(25, 1 / 25))
        np.testing.assert_allclose(mu_hat(w, data, spec).mu,
                                   basis_matrix(spec, data.y).mean(axis=0),
                                   atol=1e-14)

    def test_point_mass_weight(self):
        rng = np.random.default_rng(19)
        data = random_dataset(rng, 5, 1)
        spec = default_basis(2)
        w = np.zeros(5)
        w[3] = 1.0
        np.testing.assert_allclose(mu_hat(WeightVector(w), data, spec).mu,
                                   basis_matrix(spec, data.y[3]).ravel(),
                                   atol=1e-14)

    def test_component_bound(self):
        rng = np.random.default_rng(20)
        data = random_dataset(rng, 50, 1)
        spec = default_basis(4)
        raw = rng.random(50)
        w = WeightVector(raw / raw.sum())
        mu = mu_hat(w, data, spec).mu
        assert np.all(np.abs(mu) <= np.sqrt(2 * np.arange(1, 5) + 1))

    def test_all_zero_weights_raise(self):
        rng = np.random.default_rng(21)
        data = random_dataset(rng, 5, 1)
        with pytest.raises(AllWeightsZero):
            mu_hat(WeightVector(np.zeros(5)), data, default_basis(2))


class TestSESubsamplePlan:
    def test_paired_trees_avoid_their_group(self):
        cfg = ForestConfig(subsample_size=4, n_trees=9, basis_order=2,
                           initial_parent=unit_box(1), min_child=2, seed=0)
        rng = np.random.default_rng(22)
        for _ in range(1000):
            plan = se_subsample_plan(12, cfg, n_sigma=2, d_sigma=3, rng=rng)
            assert len(plan.tree_subsamples) == 9
            assert all(t.size == 4 for t in plan.tree_subsamples)
            for l, g in enumerate(plan.delete_groups):
                for t in (2 * l, 2 * l + 1):
                    assert not set(g) & set(plan.tree_subsamples[t])

    def test_precondition_errors(self):
        cfg = ForestConfig(subsample_size=6, n_trees=9, basis_order=2,
                           initial_parent=unit_box(1), min_child=2, seed=0)
        rng = np.random.default_rng(23)
        with pytest.raises(ValueError):
            se_subsample_plan(10, cfg, n_sigma=2, d_sigma=4, rng=rng)  # d >= n - s
        with pytest.raises(ValueError):
            se_subsample_plan(20, cfg, n_sigma=4, d_sigma=2, rng=rng)  # 2n_sigma >= N-1


class TestSigmaFe:
    def _plan(self, n_sigma, n, d_sigma, n_trees, s, seed=0):
        cfg = ForestConfig(subsample_size=s, n_trees=n_trees, basis_order=1,
                           initial_parent=unit_box(1), min_child=2, seed=0)
        return se_subsample_plan(n, cfg, n_sigma, d_sigma, np.random.default_rng(seed))

    def test_identical_tree_outputs_give_zero(self):
        plan = self._plan(n_sigma=3, n=20, d_sigma=2, n_trees=9, s=5)
        h = np.ones((9, 1))
        assert sigma_fe(plan, h, np.array([2.0]), 20, 2, 3) == 0.0

    def test_single_group_gives_zero(self):
        plan = self._plan(n_sigma=1, n=20, d_sigma=2, n_trees=4, s=5)
        h = np.arange(4, dtype=float).reshape(-1, 1)
        assert sigma_fe(plan, h, np.array([1.0]), 20, 2, 1) == pytest.approx(0.0, abs=1e-15)

    def test_two_group_hand_case(self):
        n, d_sigma, s = 40, 2, 5
        plan = self._plan(n_sigma=2, n=n, d_sigma=d_sigma, n_trees=20, s=s, seed=4)
        clean = forest_mod._clean_tree_mask(plan, n)
        h = np.random.default_rng(24).standard_normal((20, 1))
        a = h[clean[0], 0].mean()
        b = h[clean[1], 0].mean()
        m = 0.5 * (a + b)
        expected = np.sqrt((n - d_sigma) / (d_sigma * 2) * ((a - m) ** 2 + (b - m) ** 2))
        got = sigma_fe(plan, h, np.array([1.0]), n, d_sigma, 2)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_scales_linearly_in_t_row(self):
        plan = self._plan(n_sigma=3, n=30, d_sigma=2, n_trees=12, s=5, seed=5)
        h = np.random.default_rng(25).standard_normal((12, 2))
        t_row = np.array([0.7, -0.4])
        base = sigma_fe(plan, h, t_row, 30, 2, 3)
        assert sigma_fe(plan, h, 3.0 * t_row, 30, 2, 3) == pytest.approx(3.0 * base, rel=1e-12)

    def test_no_clean_trees_raises(self):
        # forge a plan-like object whose single group touches every tree
        class Fake:
            tree_subsamples = (np.array([0, 1]), np.array([2, 3]), np.array([0, 2]))
            delete_groups = (np.array([1, 2]),)
            n_sigma = 1
            d_sigma = 2
        with pytest.raises(NoCleanTrees):
            sigma_fe(Fake(), np.zeros((3, 1)), np.array([1.0]), 4, 2, 1)


class TestPerTreeMeans:
    def test_empty_leaf_contributes_zero_row(self):
        rng = np.random.default_rng(26)
        y = rng.random(6)
        spec = default_basis(2)
        phi = basis_matrix(spec, y)

        class Br:
            def __init__(self, members):
                self.holdout_members = np.asarray(members, dtype=np.intp)

        rows = per_tree_means([Br([0, 1]), Br([])], phi)
        np.testing.assert_allclose(rows[0], phi[[0, 1]].mean(axis=0))
        np.testing.assert_array_equal(rows[1], 0.0)
