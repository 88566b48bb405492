"""Distribution core: distances, conditional structure, CMI, sampling, file I/O."""

import numpy as np
import pytest
from scipy import stats as scistats

from cit.dist_core import (
    ConditionalSlice,
    DistributionError,
    JointDistribution,
    NotNormalizedError,
    SampleTriple,
    ShapeMismatchError,
    binary_slice_tv_via_covariance,
    ci_distance_proxy,
    conditional_mutual_information,
    counts_from_samples,
    mixture_q,
    product_of_conditional_marginals,
    product_table,
    read_distribution_file,
    read_sample_file,
    sample_fixed,
    sample_poissonized,
    tv_distance,
    write_distribution_file,
    write_sample_file,
)
from cit.seeding import child_seed, generator

N1 = np.array([[6, 24], [24, 46]]) / 100
N2 = np.array([[46, 24], [24, 6]]) / 100
N3 = np.array([[26, 24], [24, 26]]) / 100
Y1 = np.array([[16, 24], [24, 36]]) / 100
UNIFORM = np.full((2, 2), 0.25)


def random_joint(rng, l1=2, l2=2, n=5):
    mass = rng.dirichlet(np.ones(l1 * l2 * n)).reshape(l1, l2, n)
    return JointDistribution(mass / mass.sum())


class TestTVDistance:
    def test_identity(self):
        assert tv_distance(N1, N1) == 0.0

    def test_dependent_table_vs_product(self):
        # entrywise l1 gap of 12/100 -> TV 0.06
        assert tv_distance(N1, product_table(N1)) == pytest.approx(0.06, abs=1e-12)

    def test_uniform_vs_point_mass(self):
        assert tv_distance([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            tv_distance(np.ones(3) / 3, np.ones(4) / 4)


class TestConditionalStructure:
    def test_product_of_uniform_is_uniform(self):
        s = ConditionalSlice(1.0, UNIFORM)
        q = product_of_conditional_marginals(s)
        np.testing.assert_allclose(q.table, UNIFORM, atol=1e-15)

    def test_independent_table_is_fixed_point(self):
        s = ConditionalSlice(0.5, Y1)
        q = product_of_conditional_marginals(s)
        np.testing.assert_allclose(q.table, Y1, atol=1e-15)
        assert q.weight == 0.5

    def test_symmetric_dependent_table(self):
        q = product_of_conditional_marginals(ConditionalSlice(1.0, N3))
        np.testing.assert_allclose(q.table, np.full((2, 2), 0.25), atol=1e-15)

    def test_mixture_fixed_point_when_already_independent(self):
        p = JointDistribution.from_slices([0.3, 0.7], [Y1, UNIFORM])
        q = mixture_q(p)
        np.testing.assert_allclose(q.mass, p.mass, atol=1e-14)

    def test_mixture_preserves_bin_marginal(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            p = random_joint(rng, 3, 4, 6)
            q = mixture_q(p)
            assert tv_distance(p.z_marginal, q.z_marginal) < 1e-14

    def test_mixture_slices(self):
        p = JointDistribution.from_slices([0.5, 0.5], [N1, UNIFORM])
        q = mixture_q(p)
        np.testing.assert_allclose(
            q.slice_table(0), np.outer([0.3, 0.7], [0.3, 0.7]), atol=1e-14
        )
        np.testing.assert_allclose(q.slice_table(1), UNIFORM, atol=1e-14)

    def test_mixture_slices_are_rank_one(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            q = mixture_q(random_joint(rng, 3, 3, 4))
            for z in range(4):
                t = q.slice_table(z)
                np.testing.assert_allclose(t, product_table(t), atol=1e-12)


class TestCIDistanceProxy:
    def test_zero_for_independent_instance(self):
        p = JointDistribution.from_slices([0.25, 0.75], [Y1, UNIFORM])
        assert ci_distance_proxy(p) < 1e-14

    def test_single_dependent_bin(self):
        p = JointDistribution.from_slices([1.0], [N1])
        assert ci_distance_proxy(p) == pytest.approx(0.06, abs=1e-12)

    def test_two_dependent_bins(self):
        p = JointDistribution.from_slices([0.5, 0.5], [N1, N2])
        assert ci_distance_proxy(p) == pytest.approx(0.06, abs=1e-12)

    def test_zero_iff_rank_one_slices(self):
        rng = np.random.default_rng(2)
        p = random_joint(rng, 2, 3, 4)
        assert ci_distance_proxy(p) > 1e-4  # generic instance is dependent
        assert ci_distance_proxy(mixture_q(p)) < 1e-13


class TestBinaryCovarianceShortcut:
    def test_values(self):
        assert binary_slice_tv_via_covariance(Y1) == pytest.approx(0.0, abs=1e-15)
        assert binary_slice_tv_via_covariance(N1) == pytest.approx(0.06, abs=1e-15)
        assert binary_slice_tv_via_covariance(UNIFORM) == 0.0

    def test_matches_tv_and_l2(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            t = rng.dirichlet(np.ones(4)).reshape(2, 2)
            cov = binary_slice_tv_via_covariance(t)
            prod = product_table(t)
            assert cov == pytest.approx(tv_distance(t, prod), abs=1e-12)
            assert cov == pytest.approx(np.linalg.norm(t - prod), abs=1e-12)

    def test_rejects_non_2x2(self):
        with pytest.raises(ShapeMismatchError):
            binary_slice_tv_via_covariance(np.ones((2, 3)) / 6)


class TestTVDecomposition:
    def test_inequality_and_equality_cases(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            p = random_joint(rng, 2, 3, 5)
            q = random_joint(rng, 2, 3, 5)
            bound = sum(
                p.z_marginal[z] * tv_distance(p.slice_table(z), q.slice_table(z))
                for z in range(5)
            ) + tv_distance(p.z_marginal, q.z_marginal)
            d = tv_distance(p, q)
            assert d <= bound + 1e-12
            assert d < bound - 1e-9  # differing bin marginals: strictly slack
            # equal bin marginals force equality
            q_matched = JointDistribution.from_slices(
                p.z_marginal, np.stack([q.slice_table(z) for z in range(5)])
            )
            lhs = tv_distance(p, q_matched)
            rhs = sum(
                p.z_marginal[z] * tv_distance(p.slice_table(z), q_matched.slice_table(z))
                for z in range(5)
            )
            assert lhs == pytest.approx(rhs, abs=1e-12)


class TestConditionalMutualInformation:
    def test_zero_for_ci(self):
        p = JointDistribution.from_slices([0.25, 0.75], [Y1, UNIFORM])
        assert conditional_mutual_information(p) <= 1e-12

    def test_perfectly_correlated_bit(self):
        mass = np.zeros((2, 2, 1))
        mass[0, 0, 0] = 0.5
        mass[1, 1, 0] = 0.5
        assert conditional_mutual_information(JointDistribution(mass)) == pytest.approx(1.0)

    def test_pinsker_direction(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            p = random_joint(rng, 2, 2, 4)
            cmi = conditional_mutual_information(p)
            eps_lower = ci_distance_proxy(p) / 4
            assert cmi >= 2 * eps_lower**2 - 1e-12

    def test_upper_bound_direction(self):
        # CMI <= C * proxy * log2(4 l1 l2 / proxy): large conditional mutual
        # information forces a proportionally large TV distance (up to the
        # log factor), which is what lets a TV tester decide CMI questions
        rng = np.random.default_rng(21)
        fitted = 0.0
        for _ in range(150):
            l1, l2 = int(rng.integers(2, 4)), int(rng.integers(2, 4))
            n = int(rng.integers(1, 12))
            mass = rng.dirichlet(np.ones(l1 * l2 * n)).reshape(l1, l2, n)
            p = JointDistribution(mass / mass.sum())
            proxy = ci_distance_proxy(p)
            if proxy < 1e-6:
                continue
            cmi = conditional_mutual_information(p)
            fitted = max(fitted, cmi / (proxy * np.log2(4 * l1 * l2 / proxy)))
        print(f"CMI upper-bound fitted constant: {fitted:.3f}")
        assert fitted <= 1.0

    def test_zero_mass_bins_ignored(self):
        p = JointDistribution.from_slices([1.0, 0.0], [N1, UNIFORM])
        q = JointDistribution.from_slices([1.0], [N1])
        assert conditional_mutual_information(p) == pytest.approx(
            conditional_mutual_information(q), abs=1e-14
        )


class TestSampling:
    def test_zero_count(self):
        p = JointDistribution.uniform(2, 2, 3)
        assert sample_fixed(p, 0, 1).shape == (0, 3)

    def test_point_mass(self):
        mass = np.zeros((2, 3, 4))
        mass[1, 2, 3] = 1.0
        s = sample_fixed(JointDistribution(mass), 25, 7)
        assert (s == [1, 2, 3]).all()

    def test_determinism(self):
        p = JointDistribution.uniform(2, 2, 10)
        np.testing.assert_array_equal(sample_fixed(p, 100, 42), sample_fixed(p, 100, 42))

    def test_frequencies_within_5_sigma(self):
        p = JointDistribution.uniform(2, 2, 5)
        count = 40000
        s = sample_fixed(p, count, 11)
        counts = counts_from_samples(s, p.dims)
        expect = count / 20
        sigma = np.sqrt(count * (1 / 20) * (19 / 20))
        assert np.all(np.abs(counts - expect) < 5 * sigma)

    def test_rejects_pseudo_distribution(self):
        pseudo = JointDistribution(np.full((2, 2, 2), 0.25), normalized=False)
        with pytest.raises(NotNormalizedError):
            sample_fixed(pseudo, 5, 0)
        with pytest.raises(NotNormalizedError):
            sample_poissonized(pseudo, 5.0, 0)

    def test_poissonized_mean(self):
        p = JointDistribution.uniform(2, 2, 4)
        sizes = [
            sample_poissonized(p, 30.0, child_seed(8, t)).shape[0] for t in range(800)
        ]
        assert np.mean(sizes) == pytest.approx(30.0, abs=5 * np.sqrt(30 / 800))

    def test_poissonized_truncated_moment_ratio(self):
        # empirical Var[s 1{s>=4}] <= 4.22 E[s 1{s>=4}] per bin
        p = JointDistribution.uniform(2, 2, 8)
        per_bin = []
        for t in range(3000):
            s = sample_poissonized(p, 40.0, child_seed(9, t))
            per_bin.append(np.bincount(s[:, 2], minlength=8))
        sig = np.array(per_bin, dtype=float)  # bin rate lambda = 5
        y = sig * (sig >= 4)
        assert np.all(y.var(axis=0) <= 4.22 * y.mean(axis=0))

    def test_poissonized_bin_independence(self):
        p = JointDistribution.uniform(2, 2, 2)
        counts = []
        for t in range(1500):
            s = sample_poissonized(p, 8.0, child_seed(10, t))
            counts.append(np.bincount(s[:, 2], minlength=2))
        counts = np.array(counts)
        buckets = np.clip(counts, 0, 7)
        table = np.zeros((8, 8))
        np.add.at(table, (buckets[:, 0], buckets[:, 1]), 1)
        keep_r = table.sum(1) > 0
        keep_c = table.sum(0) > 0
        _, pval, _, _ = scistats.chi2_contingency(table[np.ix_(keep_r, keep_c)])
        assert pval > 1e-3

    def test_poisson_requires_positive_rate(self):
        with pytest.raises(ValueError):
            sample_poissonized(JointDistribution.uniform(2, 2, 2), 0.0, 0)


class TestTruncatedPoissonMoments:
    """Monte Carlo checks of the truncated-moment inequalities used by the
    tester analysis, with fitted constants reported on failure."""

    def test_weighted_truncated_moments(self):
        rng = generator(12, "poisson-claims")
        reps = 200000
        fitted_c_upper = 0.0
        fitted_c_lower = np.inf
        for lam in (0.1, 1.0, 5.0, 20.0):
            for a, b in ((2, 2), (2, 8), (4, 8)):
                x = rng.poisson(lam, size=reps).astype(float)
                y = x * np.sqrt(np.minimum(x, a) * np.minimum(x, b)) * (x >= 4)
                mean = y.mean()
                if mean == 0:
                    continue
                fitted_c_upper = max(fitted_c_upper, y.var() / mean)
                lower = min(lam * np.sqrt(min(lam, a) * min(lam, b)), lam**4)
                fitted_c_lower = min(fitted_c_lower, mean / lower)
        print(f"truncated-moment fitted constants: C={fitted_c_upper:.2f} "
              f"c={fitted_c_lower:.4f}")
        assert np.isfinite(fitted_c_upper) and fitted_c_upper < 60, fitted_c_upper
        assert fitted_c_lower > 0.01, fitted_c_lower


class TestSampleTriple:
    def test_range_check(self):
        SampleTriple(1, 1, 4).check(2, 2, 5)
        with pytest.raises(DistributionError):
            SampleTriple(2, 0, 0).check(2, 2, 5)


class TestInvariants:
    def test_negative_mass_rejected(self):
        with pytest.raises(DistributionError):
            JointDistribution(np.array([[[-0.1, 1.1]]]))

    def test_zero_size_dimension_rejected(self):
        with pytest.raises(ShapeMismatchError):
            JointDistribution(np.zeros((0, 2, 3)), normalized=False)

    def test_normalization_tolerance(self):
        mass = np.full((2, 2, 2), 1 / 8) * (1 + 1e-10)
        with pytest.raises(NotNormalizedError):
            JointDistribution(mass)
        JointDistribution(mass, normalized=False)  # pseudo flag allows it

    def test_z_marginal_is_derived(self):
        rng = np.random.default_rng(6)
        p = random_joint(rng, 3, 2, 4)
        np.testing.assert_array_equal(p.z_marginal, p.mass.sum(axis=(0, 1)))

    def test_normalize_round_trip(self):
        pseudo = JointDistribution(np.full((2, 2, 2), 0.25), normalized=False)
        norm, factor = pseudo.normalize()
        assert factor == pytest.approx(2.0)
        assert norm.total_mass == pytest.approx(1.0)


class TestFileFormats:
    def test_distribution_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        p = random_joint(rng, 3, 2, 4)
        path = tmp_path / "dist.tsv"
        write_distribution_file(path, p)
        q = read_distribution_file(path)
        np.testing.assert_array_equal(p.mass, q.mass)
        assert q.normalized

    def test_sample_round_trip(self, tmp_path):
        p = JointDistribution.uniform(2, 3, 4)
        s = sample_fixed(p, 50, 3)
        path = tmp_path / "samples.tsv"
        write_sample_file(path, s, p.dims)
        s2, dims = read_sample_file(path)
        np.testing.assert_array_equal(s, s2)
        assert dims == (2, 3, 4)
        assert path.read_text().splitlines()[0] == "#dims 2 3 4"

    def test_one_based_indices_on_disk(self, tmp_path):
        path = tmp_path / "s.tsv"
        path.write_text("#dims 2 2 2\n1\t2\t1\n")
        s, _ = read_sample_file(path)
        np.testing.assert_array_equal(s, [[0, 1, 0]])

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("#dim 2 2 2\n")
        with pytest.raises(DistributionError):
            read_sample_file(path)
