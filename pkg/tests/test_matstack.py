import numpy as np
import pytest

from subfault.matstack import (
    RankPolicy,
    SubspaceBasis,
    block_hankel,
    block_toeplitz,
    extended_observability,
    grassmann_error,
    min_norm_lsq,
    nullspace_basis,
    numerical_rank,
    principal_angles,
    range_basis,
    range_equal,
    read_matrix_csv,
    write_matrix_csv,
)

# reference residual-spectrum singular values for the benchmark system
FIG_SV_R5 = [26.5500789412737, 24.5755309469592, 17.464565160419, 16.8178553234019,
             13.3593909879432, 9.80428541092819, 0.642137996198499, 0.424179989481712,
             0.196427980417734, 0.1811099220302]


def hankel_oracle(data, depth, width):
    """Index-by-index block Hankel construction."""
    data = np.atleast_2d(np.asarray(data, float).T).T
    d = data.shape[1]
    h = np.zeros((depth * d, width))
    for i in range(depth):
        for j in range(width):
            h[i * d:(i + 1) * d, j] = data[i + j]
    return h


class TestBlockHankel:
    def test_scalar_signal(self):
        h = block_hankel([1.0, 2.0, 3.0, 4.0], 2, 3)
        assert np.array_equal(h, [[1, 2, 3], [2, 3, 4]])

    def test_constant_signal_rank_one(self):
        h = block_hankel(np.ones(30), 4, 20)
        assert numerical_rank(h).rank == 1

    def test_matches_oracle_for_vector_signal(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((6, 2))
        h = block_hankel(data, 2, 4)
        assert h.shape == (4, 4)
        assert np.allclose(h, hankel_oracle(data, 2, 4))

    def test_default_width_uses_all_samples(self):
        data = np.arange(10.0)
        assert block_hankel(data, 3).shape == (3, 8)

    def test_too_short_reports_counts(self):
        with pytest.raises(ValueError, match="requires 6 samples, only 4"):
            block_hankel([1.0, 2.0, 3.0, 4.0], 3, 4)

    def test_shift_property(self):
        rng = np.random.default_rng(11)
        data = rng.standard_normal((25, 3))
        s, n = 4, 10
        deep = block_hankel(data, s + 1, n)
        shallow = block_hankel(data, s, n)
        # dropping the first block row shifts the window by one sample
        assert np.allclose(deep[3:, : n - 1], shallow[:, 1:n])


class TestExtendedObservability:
    def test_identity_system(self):
        obs = extended_observability(np.eye(2), np.eye(2), 3)
        assert np.array_equal(obs, np.vstack([np.eye(2)] * 3))

    def test_demo_system_depth_two(self, demo):
        sys, _ = demo
        obs = extended_observability(sys.A, sys.C, 2)
        assert np.allclose(obs, [[1, 0, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1]])

    def test_depth_one_is_c(self, demo):
        sys, _ = demo
        assert np.array_equal(extended_observability(sys.A, sys.C, 1), sys.C)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            extended_observability(np.eye(3), np.eye(2), 2)


class TestBlockToeplitz:
    def test_depth_one_is_d(self, demo):
        sys, _ = demo
        assert np.array_equal(block_toeplitz(sys.A, sys.B, sys.C, sys.D, 1), sys.D)

    def test_demo_system_markov_layout(self, demo):
        # CB = 0 for this system, so depth 2 is all zero and the first
        # nonzero parameter CAB = [0, 1] appears on the second subdiagonal
        sys, _ = demo
        t2 = block_toeplitz(sys.A, sys.B, sys.C, sys.D, 2)
        assert np.allclose(t2, np.zeros((4, 2)))
        t3 = block_toeplitz(sys.A, sys.B, sys.C, sys.D, 3)
        oracle = np.zeros((6, 3))
        for i in range(3):
            for j in range(i + 1):
                if i == j:
                    blk = sys.D
                else:
                    blk = sys.C @ np.linalg.matrix_power(sys.A, i - j - 1) @ sys.B
                oracle[i * 2:(i + 1) * 2, j:j + 1] = blk
        assert np.allclose(t3, oracle)
        assert np.allclose(t3[4:6, 0], [0.0, 1.0])

    def test_zero_b_gives_block_diagonal_d(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((3, 3))
        c = rng.standard_normal((2, 3))
        d = rng.standard_normal((2, 2))
        t = block_toeplitz(a, np.zeros((3, 2)), c, d, 3)
        oracle = np.kron(np.eye(3), d)
        assert np.allclose(t, oracle)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            block_toeplitz(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), np.zeros((1, 1)), 2)


class TestNumericalRank:
    def test_identity(self):
        assert numerical_rank(np.eye(4), RankPolicy.relative(1e-8)).rank == 4

    def test_reference_spectrum_reads_rank_six_under_gap(self):
        report = numerical_rank(np.diag(FIG_SV_R5), RankPolicy.gap())
        assert report.rank == 6
        assert report.gap_ratio > 10

    def test_constructed_low_rank_with_perturbation(self):
        rng = np.random.default_rng(9)
        m = np.outer(rng.standard_normal(6), rng.standard_normal(6))
        m += np.outer(rng.standard_normal(6), rng.standard_normal(6))
        m += 1e-12 * rng.standard_normal((6, 6))
        assert numerical_rank(m, RankPolicy.relative(1e-8)).rank == 2

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            numerical_rank(np.zeros((0, 3)))

    def test_floor_policy_counts_structural_values(self):
        s = np.diag([10.0, 5.0, 2.0, 1e-13, 5e-14])
        assert numerical_rank(s, RankPolicy.noise_floor(3.0)).rank == 3

    def test_report_zero_matrix(self):
        assert numerical_rank(np.zeros((3, 3))).rank == 0


class TestNullspace:
    def test_one_by_two(self):
        basis = nullspace_basis(np.array([[1.0, 1.0]]))
        assert basis.dim == 1
        assert np.allclose(np.abs(basis.basis.ravel()), [np.sqrt(0.5)] * 2)
        assert basis.basis[0, 0] > 0  # sign convention

    def test_identity_has_trivial_nullspace(self):
        assert nullspace_basis(np.eye(3)).dim == 0

    def test_constructed_rank_three(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((4, 3)) @ rng.standard_normal((3, 6))
        basis = nullspace_basis(m, tol=1e-8)
        assert basis.dim == 3
        assert np.linalg.norm(m @ basis.basis) <= 1e-10

    def test_residual_bound_property(self):
        rng = np.random.default_rng(40)
        for _ in range(20):
            rows = rng.integers(2, 7)
            cols = rng.integers(2, 9)
            m = rng.standard_normal((rows, cols))
            basis = nullspace_basis(m, tol=1e-8)
            if basis.dim:
                assert np.linalg.norm(m @ basis.basis) <= 1e-8 * np.linalg.norm(m)


class TestMinNormLsq:
    def test_identity(self):
        b = np.arange(6.0).reshape(3, 2)
        assert np.allclose(min_norm_lsq(np.eye(3), b), b)

    def test_symmetric_minimum_norm(self):
        x = min_norm_lsq(np.array([[1.0, 1.0]]), np.array([2.0]))
        assert np.allclose(x, [1.0, 1.0])

    def test_consistent_rank_deficient(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((8, 3)) @ rng.standard_normal((3, 5))
        x0 = rng.standard_normal((5, 2))
        b = a @ x0
        x = min_norm_lsq(a, b)
        assert np.linalg.norm(a @ x - b) <= 1e-10
        assert np.linalg.norm(x) <= np.linalg.norm(x0) + 1e-12

    def test_inconsistent_residual_orthogonal_to_range(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((7, 3))
        b = rng.standard_normal(7)
        resid = a @ min_norm_lsq(a, b) - b
        assert np.linalg.norm(a.T @ resid) <= 1e-10 * np.linalg.norm(b)

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            min_norm_lsq(np.eye(3), np.ones(4))


class TestSubspaceGeometry:
    def test_equal_subspaces(self):
        u = SubspaceBasis(np.eye(4)[:, :2])
        assert np.allclose(principal_angles(u, u), 0.0)
        assert grassmann_error(u, u) == 0.0

    def test_orthogonal_lines(self):
        u = np.eye(3)[:, [0]]
        v = np.eye(3)[:, [1]]
        assert np.allclose(principal_angles(u, v), np.pi / 2)

    def test_planar_rotation_angle(self):
        alpha = 0.3
        u = np.eye(3)[:, [0]]
        v = np.array([[np.cos(alpha)], [np.sin(alpha)], [0.0]])
        assert abs(principal_angles(u, v)[0] - alpha) < 1e-12

    def test_symmetry_and_orthogonal_invariance(self):
        rng = np.random.default_rng(77)
        u = np.linalg.qr(rng.standard_normal((8, 3)))[0]
        v = np.linalg.qr(rng.standard_normal((8, 3)))[0]
        a1 = principal_angles(u, v)
        a2 = principal_angles(v, u)
        assert np.allclose(a1, a2, atol=1e-10)
        q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        a3 = principal_angles(u @ q, v)
        assert np.allclose(a1, a3, atol=1e-10)

    def test_grassmann_orthogonal_full_error(self):
        u = np.eye(6)[:, :2]
        v = np.eye(6)[:, 2:4]
        assert abs(grassmann_error(u, v) - 100.0) < 1e-9

    def test_grassmann_45_degrees(self):
        alpha = np.pi / 4
        u = np.eye(5)[:, [0]]
        v = np.zeros((5, 1))
        v[0, 0], v[1, 0] = np.cos(alpha), np.sin(alpha)
        assert abs(grassmann_error(u, v) - 50.0) < 1e-9

    def test_grassmann_rejects_mismatches(self):
        with pytest.raises(ValueError):
            grassmann_error(np.eye(4)[:, :2], np.eye(4)[:, :1])
        with pytest.raises(ValueError):
            grassmann_error(np.eye(4)[:, :3], np.eye(4)[:, 1:])  # 2k > ambient


class TestRangeEqual:
    def test_identical(self):
        m = np.random.default_rng(0).standard_normal((5, 3))
        assert range_equal(m, m)

    def test_different_lines(self):
        assert not range_equal(np.eye(3)[:, [0]], np.eye(3)[:, [1]])

    def test_invariant_under_right_multiplication(self):
        rng = np.random.default_rng(21)
        m = rng.standard_normal((6, 4))
        j = rng.standard_normal((4, 4)) + 4 * np.eye(4)
        assert range_equal(m, m @ j)

    def test_row_count_mismatch(self):
        with pytest.raises(ValueError):
            range_equal(np.eye(3), np.eye(4))

    def test_matrix_power_ranges_sample(self):
        # range(A^(n+1)) = range(A^n) for every square matrix
        rng = np.random.default_rng(33)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            a = _bounded_spectrum_matrix(n, rng)
            an = np.linalg.matrix_power(a, n)
            assert range_equal(np.linalg.matrix_power(a, n + 1), an, tol=1e-8)


def _bounded_spectrum_matrix(n, rng):
    """Random matrix whose nonzero eigenvalues stay away from the tolerance cliff."""
    kind = rng.integers(0, 3)
    if kind == 0:  # nilpotent Jordan block
        return np.diag(np.ones(n - 1), 1) if n > 1 else np.zeros((1, 1))
    eigs = rng.uniform(0.5, 1.5, size=n) * rng.choice([-1.0, 1.0], size=n)
    if kind == 1:  # singular with moderate nonzero spectrum
        k = int(rng.integers(1, n))
        eigs[:k] = 0.0
    d = np.diag(eigs)
    q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    return q @ d @ q.T


class TestMatrixCsv:
    def test_round_trip(self, tmp_path):
        m = np.random.default_rng(1).standard_normal((4, 3))
        path = tmp_path / "m.csv"
        write_matrix_csv(path, m)
        assert np.array_equal(read_matrix_csv(path), m)
        assert open(path).readline().strip() == "4,3"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nonsense\n1.0,2.0\n")
        with pytest.raises(ValueError):
            read_matrix_csv(path)


class TestRangeBasis:
    def test_truncates_at_rank(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 9))
        basis = range_basis(m)
        assert basis.dim == 2
        # the basis spans the columns
        proj = basis.basis @ (basis.basis.T @ m)
        assert np.allclose(proj, m, atol=1e-10)
