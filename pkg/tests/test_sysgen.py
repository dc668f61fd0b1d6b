import numpy as np
import pytest

from subfault.matstack import block_hankel, block_toeplitz, extended_observability
from subfault.sysgen import (
    FaultPair,
    StateSpace,
    Trajectory,
    _place_fault_pair,
    colored_noise,
    fault_signal,
    load_system_json,
    random_system,
    read_trajectory_csv,
    save_system_json,
    simulate,
    stack_channels,
    transmission_zeros,
    white_input,
    write_trajectory_csv,
)


class TestSimulate:
    def test_zero_everything_gives_zero_output(self, demo):
        sys, fault = demo
        t = 20
        y, x = simulate(sys, fault, np.zeros(3), np.zeros((t, 1)), np.zeros((t, 1)))
        assert np.allclose(y.data, 0)
        assert np.allclose(x.data, 0)
        assert len(x) == t + 1

    def test_demo_impulse_response(self, demo):
        sys, _ = demo
        u = np.zeros((4, 1))
        u[0, 0] = 1.0
        y, _ = simulate(sys, None, np.zeros(3), u)
        assert np.allclose(y.data[0], 0)            # D = 0
        assert np.allclose(y.data[1], sys.C @ sys.B.ravel())
        assert np.allclose(y.data[1], [0.0, 0.0])
        assert np.allclose(y.data[2], sys.C @ sys.A @ sys.B.ravel())
        assert np.allclose(y.data[2], [0.0, 1.0])

    def test_joint_linearity(self, demo):
        sys, fault = demo
        rng = np.random.default_rng(4)
        t = 50
        parts = []
        for _ in range(2):
            parts.append((rng.standard_normal(3), rng.standard_normal((t, 1)),
                          rng.standard_normal((t, 1)), rng.standard_normal((t, 2))))
        y_sum, x_sum = simulate(
            sys, fault,
            parts[0][0] + parts[1][0],
            parts[0][1] + parts[1][1],
            parts[0][2] + parts[1][2],
            parts[0][3] + parts[1][3],
        )
        y1, x1 = simulate(sys, fault, *parts[0])
        y2, x2 = simulate(sys, fault, *parts[1])
        assert np.allclose(y_sum.data, y1.data + y2.data, atol=1e-10)
        assert np.allclose(x_sum.data, x1.data + x2.data, atol=1e-10)

    def test_length_mismatch_rejected(self, demo):
        sys, fault = demo
        with pytest.raises(ValueError):
            simulate(sys, fault, None, np.zeros((10, 1)), np.zeros((9, 1)))

    def test_data_equation_consistency(self, demo_run):
        # Y_s = O_s X + T_s U_s + T^f_s V_s ties the simulator to every builder
        sys, fault, x0, u, v, y, x = demo_run
        s = 4
        n = len(u) - s + 1
        y_h = block_hankel(y.data, s)
        u_h = block_hankel(u.data, s)
        v_h = block_hankel(v.data, s)
        obs = extended_observability(sys.A, sys.C, s)
        t_u = block_toeplitz(sys.A, sys.B, sys.C, sys.D, s)
        t_f = block_toeplitz(sys.A, fault.F, sys.C, fault.G, s)
        lhs = y_h
        rhs = obs @ x.data[:n].T + t_u @ u_h + t_f @ v_h
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(lhs)


class TestSignals:
    def test_white_input_deterministic(self):
        a = white_input(2, 50, seed=7)
        b = white_input(2, 50, seed=7)
        assert np.array_equal(a.data, b.data)

    def test_white_input_mean(self):
        u = white_input(3, 10000, seed=1)
        assert np.all(np.abs(u.data.mean(axis=0)) < 0.05)

    def test_white_input_hankel_covariance(self):
        u = white_input(1, 10000, seed=2)
        h = block_hankel(u.data, 5)
        cov = h @ h.T / h.shape[1]
        assert np.linalg.eigvalsh(cov).min() >= 0.5

    def test_fault_v1_values(self):
        v = fault_signal("v1", 11)
        assert v.data[0, 0] == pytest.approx(0.1)
        assert v.data[10, 0] == pytest.approx(0.1 + np.sin(0.25 * 10**1.3))

    def test_fault_v2_construction(self):
        t = 200
        v = fault_signal("v2", t, seed=9)
        z = np.random.default_rng(9).standard_normal(t)
        ramp = 1.0 - 0.99 ** np.arange(t)
        assert np.allclose(v.data[:, 0], ramp + z)
        assert v.data[0, 0] == pytest.approx(z[0])  # ramp starts at zero

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            fault_signal("v3", 10)

    def test_stack_channels(self):
        v = stack_channels(fault_signal("v1", 20), fault_signal("v2", 20, seed=0))
        assert v.dim == 2 and len(v) == 20

    def test_cross_covariance_with_input_decays(self):
        # inputs and faults decorrelate as the horizon grows, at every lag
        for lag_set in [range(6)]:
            norms = []
            for t in (1000, 10000):
                u = white_input(1, t + 6, seed=5).data
                v = fault_signal("v1", t + 6).data
                worst = 0.0
                for lag in lag_set:
                    acc = sum(np.outer(u[k - lag], v[k]) for k in range(lag, t))
                    worst = max(worst, np.linalg.norm(acc / t))
                norms.append(worst)
            assert norms[1] < norms[0]


class TestColoredNoise:
    def test_none_snr_gives_zero(self):
        ref = np.ones((50, 2))
        w = colored_noise(2, 50, None, ref, seed=1)
        assert np.allclose(w.data, 0)

    def test_zero_db_matches_reference_power(self):
        rng = np.random.default_rng(3)
        ref = rng.standard_normal((2000, 2)) * [1.0, 3.0]
        w = colored_noise(2, 2000, 0.0, ref, seed=4)
        ratio = np.mean(w.data**2, axis=0) / np.mean(ref**2, axis=0)
        assert np.all(np.abs(ratio - 1.0) < 0.02)

    def test_forty_db(self):
        rng = np.random.default_rng(5)
        ref = rng.standard_normal((2000, 3))
        w = colored_noise(3, 2000, 40.0, ref, seed=6)
        ratio = np.mean(w.data**2, axis=0) / np.mean(ref**2, axis=0)
        assert np.all(np.abs(ratio / 1e-4 - 1.0) < 0.02)

    def test_zero_power_reference_rejected(self):
        ref = np.zeros((10, 1))
        with pytest.raises(ValueError, match="zero power"):
            colored_noise(1, 10, 40.0, ref, seed=0)


class TestTransmissionZeros:
    def test_demo_channel_has_one_infinite_zero(self, demo):
        sys, fault = demo
        zr = transmission_zeros(sys.A, fault.F, sys.C, fault.G)
        assert zr.finite_zeros == []
        assert zr.infinite_zero_count == 1
        assert zr.l_delay == 1
        assert zr.zeta == 1
        assert zr.left_invertible

    def test_square_invertible_g_has_no_infinite_zeros(self):
        rng = np.random.default_rng(2)
        a = 0.3 * rng.standard_normal((3, 3))
        zr = transmission_zeros(a, rng.standard_normal((3, 2)),
                                rng.standard_normal((2, 3)), np.eye(2))
        assert zr.infinite_zero_count == 0
        assert zr.l_delay == 0

    def test_scalar_zero_formula(self):
        # zero of the scalar channel solves g (q - a) + c f = 0
        a, f, c, g = 0.5, 1.0, 1.0, -0.25
        zr = transmission_zeros([[a]], [[f]], [[c]], [[g]])
        assert len(zr.finite_zeros) == 1
        expected = a - c * f / g
        assert abs(zr.finite_zeros[0] - expected) < 1e-6

    def test_tall_full_column_rank_g(self):
        rng = np.random.default_rng(7)
        a = 0.4 * rng.standard_normal((4, 4))
        c = rng.standard_normal((3, 4))
        g = rng.standard_normal((3, 2))
        zr = transmission_zeros(a, np.zeros((4, 2)), c, g)
        assert zr.zeta == 0
        assert zr.l_delay == 0

    def test_zero_multiplicity_counted(self):
        # forcing both input directions to vanish at the same point gives a
        # zero of multiplicity two
        sys, _ = random_system(5, 1, 4, 2, 0, seed=55, max_tries=100)
        rng = np.random.default_rng(31)
        fault = _place_fault_pair(sys, 2, np.array([0.8, 0.8]), rng)
        zr = transmission_zeros(sys.A, fault.F, sys.C, fault.G)
        assert sum(1 for z in zr.finite_zeros if abs(z - 0.8) < 1e-6) == 2


class TestRandomSystem:
    def test_dimensions_and_stability(self):
        sys, fault = random_system(5, 1, 3, 2, 2, seed=123)
        assert (sys.n_x, sys.n_u, sys.n_y, fault.n_v) == (5, 1, 3, 2)
        assert sys.is_stable()
        assert sys.is_minimal()

    def test_requested_zero_counts_recovered(self):
        for zc in (0, 1, 2, 3):
            sys, fault = random_system(5, 1, 3, 2, zc, seed=50 + zc)
            zr = transmission_zeros(sys.A, fault.F, sys.C, fault.G)
            assert len(zr.finite_zeros) == zc
            assert all(abs(z.imag) < 1e-9 for z in zr.finite_zeros)
            assert zr.left_invertible

    def test_place_then_detect_specific_zero(self):
        sys, _ = random_system(4, 1, 3, 1, 0, seed=17)
        rng = np.random.default_rng(99)
        fault = _place_fault_pair(sys, 1, np.array([1.7]), rng)
        zr = transmission_zeros(sys.A, fault.F, sys.C, fault.G)
        assert any(abs(z - 1.7) < 1e-6 for z in zr.finite_zeros)

    def test_deterministic(self):
        s1, f1 = random_system(4, 1, 2, 1, 1, seed=5)
        s2, f2 = random_system(4, 1, 2, 1, 1, seed=5)
        assert np.array_equal(s1.A, s2.A)
        assert np.array_equal(f1.F, f2.F)

    def test_rejects_wide_fault(self):
        with pytest.raises(ValueError, match="n_y > n_v"):
            random_system(4, 1, 2, 2, 0, seed=1)


class TestTypesAndPersistence:
    def test_trajectory_validation(self):
        with pytest.raises(ValueError):
            Trajectory(np.array([[1.0], [np.nan]]))
        tr = Trajectory(np.ones(5))
        assert tr.dim == 1 and len(tr) == 5

    def test_state_space_validation(self):
        with pytest.raises(ValueError):
            StateSpace(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), np.zeros((1, 1)))

    def test_fault_pair_validation(self, demo):
        sys, _ = demo
        pair = FaultPair(np.ones((3, 1)), np.ones((2, 1)))
        pair.check_matches(sys)
        with pytest.raises(ValueError):
            FaultPair(np.ones((3, 1)), np.ones((2, 2)))

    def test_trajectory_csv_round_trip(self, tmp_path):
        tr = Trajectory(np.random.default_rng(0).standard_normal((7, 3)))
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, tr)
        header = open(path).readline().strip()
        assert header == "t,ch0,ch1,ch2"
        back = read_trajectory_csv(path)
        assert np.array_equal(back.data, tr.data)

    def test_system_json_round_trip(self, tmp_path, demo):
        sys, fault = demo
        path = tmp_path / "sys.json"
        save_system_json(path, sys, fault, seed=42)
        back_sys, back_fault = load_system_json(path)
        assert np.array_equal(back_sys.A, sys.A)
        assert np.array_equal(back_fault.G, fault.G)
