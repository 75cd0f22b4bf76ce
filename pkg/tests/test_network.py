import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_network, random_system
from gridformer.converters import (DeviceSpec, LineParams, OperatingPoint, build_admittance,
                                   device_operating_point, gamma_at)
from gridformer.errors import SingularClosedLoop, SingularInteriorBlock
from gridformer.lti import FrequencyGrid, StateSpaceModel, eval_at, is_stable, singular_values
from gridformer.network import (NetworkModel, PowerSystem, assemble_closed_loop_ss,
                                assemble_dynamic_y, capacity_scale, closed_loop_admittance,
                                closed_loop_impedance, kron_reduce, power_coordinate_sensitivity,
                                power_flow, promote_bus, scaled_grid_operator, static_b_matrix,
                                static_grid_matrix)

W0 = 2 * np.pi * 50
GRID = FrequencyGrid.log(1.0, 1000.0, 40)


def chain():
    return NetworkModel(2, 1, ((0, 2, 2.0, 0.1), (2, 1, 2.0, 0.1), (1, 3, 0.5, 0.1)), [1.0, 1.0])


def two_bus(b=1.0, g=1.0, caps=(1.0, 1.0), tau=0.1):
    return NetworkModel(2, 0, ((0, 1, b, tau), (0, 2, g, tau), (1, 2, g, tau)), caps)


def gain(g, n=2):
    return StateSpaceModel.gain(g * np.eye(n), ("ud", "uq"), ("id", "iq"))


class TestNetworkModel:
    def test_rejects_disconnected(self):
        with pytest.raises(ValueError):
            NetworkModel(2, 1, ((0, 3, 1.0, 0.1), (1, 2, 1.0, 0.1)), [1.0, 1.0])

    @pytest.mark.parametrize("branch", [(0, 1, 0.0, 0.1), (0, 1, 1.0, 0.0), (0, 0, 1.0, 0.1),
                                        (0, 5, 1.0, 0.1)])
    def test_rejects_bad_branch(self, branch):
        with pytest.raises(ValueError):
            NetworkModel(2, 0, (branch, (0, 2, 1.0, 0.1), (1, 2, 1.0, 0.1)), [1.0, 1.0])

    def test_rejects_bad_capacity(self):
        with pytest.raises(ValueError):
            two_bus(caps=(1.0, 0.0))
        with pytest.raises(ValueError):
            NetworkModel(2, 0, ((0, 2, 1.0, 0.1), (1, 2, 1.0, 0.1)), [1.0])

    def test_uniform_tau(self):
        assert two_bus().uniform_tau == 0.1
        net = NetworkModel(1, 0, ((0, 1, 1.0, 0.1), (0, 1, 1.0, 0.3)), [1.0])
        assert net.uniform_tau is None and net.mean_tau == pytest.approx(0.2)


class TestStaticB:
    def test_two_bus(self):
        assert np.array_equal(static_b_matrix(two_bus(2.0)), [[3, -2], [-2, 3]])

    def test_chain(self):
        net = NetworkModel(1, 2, ((0, 1, 2.0, 0.1), (1, 2, 2.0, 0.1), (2, 3, 1e-9, 0.1)), [1.0])
        B = static_b_matrix(net)
        assert np.allclose(B, [[2, -2, 0], [-2, 4, -2], [0, -2, 2]], atol=1e-8)

    def test_single_ground(self):
        net = NetworkModel(1, 0, ((0, 1, 5.0, 0.1),), [1.0])
        assert np.array_equal(static_b_matrix(net), [[5.0]])


class TestDynamicY:
    def test_uniform_kronecker(self):
        net = chain()
        B = static_b_matrix(net)
        for w in (0.0, 10.0, 300.0):
            assert np.allclose(assemble_dynamic_y(net, w), np.kron(B, gamma_at(0.1, 1j * w)),
                               atol=1e-12)

    def test_roll_off(self):
        assert np.max(np.abs(assemble_dynamic_y(chain(), 1e9))) < 1e-5

    def test_single_branch_dc(self):
        net = NetworkModel(1, 0, ((0, 1, 3.0, 0.1),), [1.0])
        ref = 3.0 / 1.01 * np.array([[0.1, 1.0], [-1.0, 0.1]])
        assert np.allclose(assemble_dynamic_y(net, 0.0), ref, atol=1e-14)


class TestKron:
    def test_series_combination(self):
        net = NetworkModel(2, 1, ((0, 2, 2.0, 0.1), (2, 1, 2.0, 0.1), (1, 3, 1e-9, 0.1)),
                           [1.0, 1.0])
        Bk = kron_reduce(static_b_matrix(net), [2], block=1)
        assert Bk[0, 1] == pytest.approx(-1.0)
        assert Bk[0, 0] == pytest.approx(1.0)

    def test_empty_interior(self):
        Y = np.arange(16.0).reshape(4, 4)
        assert np.array_equal(kron_reduce(Y, []), Y)

    def test_commutes_with_gamma(self):
        net = chain()
        Bk = kron_reduce(static_b_matrix(net), [2], block=1)
        for w in np.geomspace(0.5, 5000, 10):
            g = gamma_at(0.1, 1j * w)
            lhs = np.kron(Bk, g)
            rhs = kron_reduce(np.kron(static_b_matrix(net), g), [2])
            assert np.allclose(lhs, rhs, atol=1e-10)

    def test_singular_interior(self):
        Y = np.zeros((4, 4))
        Y[:2, :2] = np.eye(2)
        with pytest.raises(SingularInteriorBlock):
            kron_reduce(Y, [1])

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_preserves_port_behaviour(self, seed):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        net = random_network(rng, n, m)
        for w in rng.uniform(1.0, 2000.0, 5):
            Y = assemble_dynamic_y(net, w)
            Yr = kron_reduce(Y, range(n, n + m))
            for _ in range(4):
                inj = rng.normal(size=2 * n) + 1j * rng.normal(size=2 * n)
                full = np.linalg.solve(Y, np.r_[inj, np.zeros(2 * m)])[:2 * n]
                assert np.allclose(full, np.linalg.solve(Yr, inj), atol=1e-10)


class TestScaling:
    def test_unit_capacity_is_identity(self):
        net = chain()
        Bk = kron_reduce(static_b_matrix(net), [2], block=1)
        assert np.allclose(static_grid_matrix(net), Bk)

    def test_capacity_congruence(self):
        net = two_bus(1.0, 1.0, caps=(4.0, 1.0))
        B = static_b_matrix(net)
        Bn = static_grid_matrix(net)
        assert np.allclose(Bn, B * np.outer([0.5, 1.0], [0.5, 1.0]))
        assert np.allclose(Bn, Bn.T)
        ev = np.sort(np.linalg.eigvals(np.diag([0.25, 1.0]) @ B).real)
        assert np.allclose(ev, np.linalg.eigvalsh(Bn), atol=1e-10)

    def test_grid_eigenvalues(self):
        net = two_bus(1.0, 1.0)
        assert np.allclose(np.linalg.eigvalsh(static_grid_matrix(net)), [1.0, 3.0])

    def test_general_path_agrees(self):
        net = chain()
        fast = scaled_grid_operator(net, GRID)
        slow = scaled_grid_operator(net, GRID, force_general=True)
        assert fast.uniform and not slow.uniform
        assert np.allclose(fast.stack(), slow.stack(), atol=1e-10)

    def test_capacity_scale_power(self):
        X = np.ones((2, 2))
        assert np.allclose(capacity_scale(X, [4.0], power=-0.5), 0.25)
        assert np.allclose(capacity_scale(X, [4.0, 1.0], block=1), [[0.25, 0.5], [0.5, 1.0]])

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_symmetric_static_operator(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        net = random_network(rng, n, int(rng.integers(0, 3)), tau=0.1,
                             capacities=rng.uniform(0.5, 2.0, n))
        Bn = static_grid_matrix(net)
        assert np.allclose(Bn, Bn.T, atol=1e-12)
        S = np.diag(1.0 / net.capacities)
        Bk = capacity_scale(Bn, net.capacities, block=1, power=0.5)
        ev1 = np.sort(np.linalg.eigvals(S @ Bk).real)
        assert np.allclose(ev1, np.linalg.eigvalsh(Bn), atol=1e-10)


class TestClosedLoop:
    def test_single_bus_no_device(self):
        scr = 2.5
        net = NetworkModel(1, 0, ((0, 1, scr, 0.1),), [1.0])
        op = scaled_grid_operator(net, GRID)
        Z = closed_loop_impedance([build_admittance(DeviceSpec("NONE"))], op, 0.0)
        g0 = gamma_at(0.1, 0.0)
        assert singular_values(Z)[0] == pytest.approx(1 / (scr * singular_values(g0)[-1]))

    def test_stiff_devices(self):
        g = 1e6
        net = chain()
        op = scaled_grid_operator(net, GRID)
        Z = closed_loop_impedance([gain(g), gain(g)], op)
        assert np.all(singular_values(Z)[:, 0] <= 1.0001 / g)

    def test_inverse_identity(self):
        rng = np.random.default_rng(3)
        sys = random_system(rng, 3, 2, ("VSG", "PLL-PQ", "DROOP"), None)
        op = sys.grid_operator(GRID)
        Y = closed_loop_admittance(sys.models, op)
        Z = closed_loop_impedance(sys.models, op)
        err = np.linalg.norm(Y @ Z - np.eye(6), axis=(1, 2))
        assert np.all(err <= 1e-9 * 3)

    def test_singular(self):
        # a device that exactly cancels its only line leaves Y_cl identically zero
        net = NetworkModel(1, 0, ((0, 1, 2.0, 0.1),), [1.0])
        op = scaled_grid_operator(net, GRID)
        A = -W0 * (0.1 * np.eye(2) + np.array([[0.0, -1.0], [1.0, 0.0]]))
        dev = StateSpaceModel(A, W0 * np.eye(2), -2.0 * np.eye(2), np.zeros((2, 2)))
        with pytest.raises(SingularClosedLoop):
            closed_loop_impedance([dev], op)

    def test_off_grid_frequency(self):
        net = NetworkModel(1, 0, ((0, 1, 1.0, 0.1), (0, 1, 1.0, 0.2)), [1.0])
        op = scaled_grid_operator(net, GRID)
        with pytest.raises(ValueError):
            closed_loop_impedance([gain(1.0)], op, 1.2345)

    @pytest.mark.parametrize("case_seed", [0, 1, 2])
    def test_state_space_matches(self, case_seed):
        rng = np.random.default_rng(case_seed)
        tau = None if case_seed == 2 else 0.1
        sys = random_system(rng, 3, 1, ("VSG", "PLL-PQ", "VOC"), tau)
        proper, deriv = assemble_closed_loop_ss(sys.models, sys.net)
        w = np.sort(rng.uniform(1.0, 3000.0, 10))
        op = scaled_grid_operator(sys.net, FrequencyGrid(w))
        Z = closed_loop_impedance(sys.models, op)
        for k, wk in enumerate(w):
            s = 1j * wk
            assert np.allclose(eval_at(proper, s) + s * deriv, Z[k], atol=1e-8)

    def test_vsg_case_stable(self):
        from gridformer.casefile import bundled_case
        proper, _ = bundled_case("three_bus_vsg").system().closed_loop_ss()
        assert is_stable(proper)

    def test_dc_gain(self):
        specs = (DeviceSpec("VSG", p0=0.2), DeviceSpec("DROOP", p0=0.2))
        sys = PowerSystem(two_bus(2.0, 2.0), specs)
        proper, deriv = sys.closed_loop_ss()
        op = scaled_grid_operator(sys.net, FrequencyGrid([1e-6]))
        Z0 = closed_loop_impedance(sys.models, op)[0]
        assert np.allclose(eval_at(proper, 1e-6j), Z0, atol=1e-8)


class TestPowerCoordinates:
    def test_reflection_blocks(self):
        rng = np.random.default_rng(4)
        Z = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        ops = [OperatingPoint.no_load()] * 2
        PZ = power_coordinate_sensitivity(Z, ops)
        assert np.allclose(PZ[:2], np.diag([1, -1]) @ Z[:2])
        assert np.allclose(singular_values(PZ), singular_values(Z), atol=1e-10)

    def test_non_unit_voltage(self):
        op = OperatingPoint.from_phasors(0.98 + 0.1j, 0.0)
        U = power_coordinate_sensitivity(np.eye(2), [op])
        assert np.allclose(singular_values(U), np.hypot(0.98, 0.1))
        assert np.hypot(0.98, 0.1) == pytest.approx(0.9851, abs=1e-4)


class TestPowerFlowAndPromotion:
    def test_balance(self):
        rng = np.random.default_rng(5)
        sys = random_system(rng, 3, 2, ("VSG", "PLL-PQ", "DROOP"), None)
        for spec, op, cap, V in zip(sys.specs, sys.ops, sys.net.capacities, sys.voltages):
            assert op.P0 == pytest.approx(spec.p0, abs=1e-8)
            if spec.mode == "pv":
                assert abs(V) == pytest.approx(spec.q0_or_v0, abs=1e-8)

    def test_single_device_matches_local_solver(self):
        net = NetworkModel(1, 0, ((0, 1, 1 / 0.3, 0.1),), [1.0])
        spec = DeviceSpec("PLL-PQ", p0=0.5, q0_or_v0=0.1)
        ops, _ = power_flow(net, [spec])
        ref = device_operating_point(spec, LineParams(0.3, 0.1))
        assert np.allclose(ops[0].U_dq0, ref.U_dq0, atol=1e-9)

    def test_promote(self):
        net = NetworkModel(1, 2, ((0, 1, 1.0, 0.1), (1, 2, 2.0, 0.1), (2, 3, 3.0, 0.1)), [1.0])
        new, idx = promote_bus(net, 2, 0.5)
        assert (new.n, new.m) == (2, 1)
        assert idx[2] == 1 and idx[1] == 2 and idx[3] == 3
        assert np.allclose(static_b_matrix(new)[np.ix_([0, 1, 2], [0, 1, 2])],
                           static_b_matrix(net)[np.ix_([0, 2, 1], [0, 2, 1])])
        with pytest.raises(ValueError):
            promote_bus(net, 0, 1.0)
