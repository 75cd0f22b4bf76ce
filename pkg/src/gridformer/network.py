"""Network admittance assembly, Kron reduction and closed-loop construction.

Buses ``0..n-1`` carry devices, ``n..n+m-1`` are interior, and index ``n+m``
is the grounded node (the infinite source; its voltage deviation is zero).
Network quantities are on the system base; device quantities on their own
rating.  Capacity normalization maps system-base matrices ``X`` to
``S^-1/2 X S^-1/2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .converters import (I2, JROT, OMEGA0, DeviceSpec, OperatingPoint, build_admittance,
                         gamma_at)
from .errors import SingularClosedLoop, SingularInteriorBlock
from .lti import (COND_LIMIT, FrequencyGrid, StateSpaceModel, freqresp, inverse,
                  parallel, scale)
from .powerflow import solve_power_flow


@dataclass(frozen=True, eq=False)
class NetworkModel:
    n: int
    m: int
    branches: tuple
    capacities: np.ndarray
    omega0: float = OMEGA0

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise ValueError("need at least one device bus")
        br = []
        N = self.n + self.m
        for b in self.branches:
            i, j, bij, tau = b
            i, j = int(i), int(j)
            if not (0 <= i <= N and 0 <= j <= N) or i == j:
                raise ValueError(f"bad branch endpoints ({i}, {j})")
            if not bij > 0:
                raise ValueError("branch susceptance must be positive")
            if not tau > 0:
                raise ValueError("branch tau must be positive")
            br.append((i, j, float(bij), float(tau)))
        cap = np.array(self.capacities, float).reshape(-1)
        if cap.size != self.n or np.any(cap <= 0):
            raise ValueError("need one positive capacity per device bus")
        cap.setflags(write=False)
        object.__setattr__(self, "branches", tuple(br))
        object.__setattr__(self, "capacities", cap)
        if not self._connected():
            raise ValueError("network graph is not connected")

    def _connected(self):
        N = self.n + self.m + 1
        parent = list(range(N))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j, _, _ in self.branches:
            parent[find(i)] = find(j)
        roots = {find(k) for k in range(N)}
        return len(roots) == 1

    @property
    def n_buses(self):
        return self.n + self.m

    @property
    def ground(self):
        return self.n + self.m

    @property
    def taus(self):
        return np.array([b[3] for b in self.branches])

    @property
    def uniform_tau(self):
        t = self.taus
        return float(t[0]) if np.all(t == t[0]) else None

    @property
    def mean_tau(self):
        return float(np.mean(self.taus))

    def with_capacities(self, capacities):
        return NetworkModel(self.n, self.m, self.branches, capacities, self.omega0)


def _incidence(net):
    """Branch-to-bus incidence over non-ground buses, shape (N, n_branches)."""
    N = net.n_buses
    E = np.zeros((N, len(net.branches)))
    for k, (i, j, _, _) in enumerate(net.branches):
        if i < N:
            E[i, k] = 1.0
        if j < N:
            E[j, k] = -1.0
    return E


def static_b_matrix(net):
    """Laplacian-plus-ground-shunt susceptance matrix over all non-ground buses."""
    E = _incidence(net)
    b = np.array([br[2] for br in net.branches])
    return (E * b) @ E.T


def assemble_dynamic_y(net, omega):
    """``2(n+m)``-square complex admittance ``sum_ij B_ij gamma_ij(j omega)``."""
    E = _incidence(net)
    N = net.n_buses
    Y = np.zeros((2 * N, 2 * N), complex)
    for k, (_, _, b, tau) in enumerate(net.branches):
        e = E[:, k]
        Y += np.kron(np.outer(e, e), b * gamma_at(tau, 1j * omega, net.omega0))
    return Y


def _block_index(buses, block):
    buses = np.asarray(list(buses), int)
    return (buses[:, None] * block + np.arange(block)).ravel()


def kron_reduce(Y, interior, block=2):
    """Schur complement ``Y1 - Y2 Y4^-1 Y3`` eliminating the ``interior`` buses."""
    Y = np.asarray(Y)
    interior = sorted(set(int(i) for i in interior))
    if not interior:
        return Y.copy()
    nb = Y.shape[-1] // block
    keep = [i for i in range(nb) if i not in interior]
    ik, ii = _block_index(keep, block), _block_index(interior, block)
    Y1 = Y[..., ik[:, None], ik]
    Y2 = Y[..., ik[:, None], ii]
    Y3 = Y[..., ii[:, None], ik]
    Y4 = Y[..., ii[:, None], ii]
    cond = np.linalg.cond(Y4)
    if np.any(~np.isfinite(cond) | (cond > COND_LIMIT)):
        raise SingularInteriorBlock(f"interior block has cond = {np.max(cond):.3g}")
    return Y1 - Y2 @ np.linalg.solve(Y4, Y3)


def capacity_scale(X, capacities, block=2, power=-0.5):
    """``S^p X S^p`` with ``S = diag(capacities) (x) I_block``."""
    d = np.repeat(np.asarray(capacities, float) ** power, block)
    return X * d[:, None] * d[None, :]


@dataclass(frozen=True, eq=False)
class ScaledGridOperator:
    """Capacity-normalized Kron-reduced network admittance on a grid.

    With uniform branch tau (and no frequency-dependent shunts) the operator
    is ``B_grid (x) gamma(s)`` and only the static ``B_grid`` is stored.
    """

    grid: FrequencyGrid
    matrices: np.ndarray | None = None
    b_grid: np.ndarray | None = None
    tau: float | None = None
    omega0: float = OMEGA0
    tau0: float | None = None

    @property
    def uniform(self):
        return self.b_grid is not None

    @property
    def n(self):
        if self.uniform:
            return self.b_grid.shape[0]
        return self.matrices.shape[-1] // 2

    def at(self, k):
        if self.uniform:
            return np.kron(self.b_grid, gamma_at(self.tau, 1j * self.grid.omega[k], self.omega0))
        return self.matrices[k]

    def stack(self):
        if self.uniform:
            g = np.stack([gamma_at(self.tau, 1j * w, self.omega0) for w in self.grid.omega])
            return np.einsum("ij,kab->kiajb", self.b_grid, g).reshape(
                len(self.grid), 2 * self.n, 2 * self.n)
        return self.matrices


def static_grid_matrix(net):
    """Capacity-normalized Kron-reduced static matrix ``B_grid^N``."""
    B = static_b_matrix(net)
    Bk = kron_reduce(B, range(net.n, net.n_buses), block=1)
    return capacity_scale(Bk, net.capacities, block=1)


def scaled_grid_operator(net, grid, shunts=None, force_general=False):
    """``S^-1/2 (Y1 - Y2 Y4^-1 Y3) S^-1/2`` on ``grid``.

    ``shunts`` maps bus index to a stack of ``(K, 2, 2)`` system-base
    admittances added before reduction (devices absorbed into the network).
    """
    tau = net.uniform_tau
    if tau is not None and not shunts and not force_general:
        return ScaledGridOperator(grid, b_grid=static_grid_matrix(net), tau=tau,
                                  omega0=net.omega0, tau0=tau)
    interior = range(net.n, net.n_buses)
    mats = []
    for k, w in enumerate(grid.omega):
        Y = assemble_dynamic_y(net, w)
        for bus, ys in (shunts or {}).items():
            Y[2 * bus:2 * bus + 2, 2 * bus:2 * bus + 2] += ys[k]
        mats.append(capacity_scale(kron_reduce(Y, interior), net.capacities))
    return ScaledGridOperator(grid, matrices=np.array(mats), omega0=net.omega0,
                              tau0=net.mean_tau)


def device_response(devices, omega):
    """Stack of block-diagonal device admittances, shape ``(K, 2n, 2n)``."""
    w = np.atleast_1d(omega)
    n = len(devices)
    out = np.zeros((w.size, 2 * n, 2 * n), complex)
    for i, d in enumerate(devices):
        out[:, 2 * i:2 * i + 2, 2 * i:2 * i + 2] = freqresp(d, w)
    return out


def closed_loop_admittance(devices, netop):
    """``Y_cl^N(j omega_k)`` for every grid point."""
    return netop.stack() + device_response(devices, netop.grid.omega)


def closed_loop_impedance(devices, netop, omega=None):
    """``Z_cl = [Y_grid^N + blockdiag(Y_de,i)]^-1`` on the operator grid.

    With ``omega`` given (a grid frequency or arbitrary value for a
    uniform-tau operator) a single matrix is returned.
    """
    if omega is None:
        Y = closed_loop_admittance(devices, netop)
    else:
        if netop.uniform:
            Yg = np.kron(netop.b_grid, gamma_at(netop.tau, 1j * omega, netop.omega0))
        else:
            k = int(np.argmin(np.abs(netop.grid.omega - omega)))
            if not np.isclose(netop.grid.omega[k], omega, rtol=1e-12):
                raise ValueError("frequency not on the operator grid")
            Yg = netop.matrices[k]
        Y = Yg + device_response(devices, omega)[0]
    cond = np.linalg.cond(Y)
    if np.any(~np.isfinite(cond) | (cond > COND_LIMIT)):
        raise SingularClosedLoop(f"closed-loop admittance has cond = {np.max(cond):.3g}")
    return np.linalg.inv(Y)


def power_coordinate_sensitivity(Z_cl, ops):
    """``U0^N Z_cl`` with blocks ``[[U_d, U_q], [U_q, -U_d]]``."""
    n = len(ops)
    U = np.zeros((2 * n, 2 * n))
    for i, op in enumerate(ops):
        Ud, Uq = op.U_dq0
        U[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[Ud, Uq], [Uq, -Ud]]
    return U @ Z_cl


def network_admittance_ss(net):
    """Branch-state model from all bus voltages to net injected currents (system base)."""
    E = _incidence(net)
    nb = len(net.branches)
    N = net.n_buses
    A = np.zeros((2 * nb, 2 * nb))
    B = np.zeros((2 * nb, 2 * N))
    for k, (_, _, b, tau) in enumerate(net.branches):
        sl = slice(2 * k, 2 * k + 2)
        A[sl, sl] = -net.omega0 * (tau * I2 + JROT)
        B[sl] = net.omega0 * b * np.kron(E[:, k], I2)
    C = np.kron(E, I2)
    return StateSpaceModel(A, B, C, np.zeros((2 * N, 2 * N)))


def assemble_closed_loop_ss(devices, net, shunts=None):
    """State-space ``Z_cl^N(s)`` from device-bus current injections to voltages.

    Returns ``(proper, deriv)`` with ``Z_cl^N(s) = proper(s) + s * deriv``; the
    derivative term is the inductive high-frequency part of the network.
    ``shunts`` maps interior bus index to a system-base admittance model.
    """
    N = net.n_buses
    parts = [network_admittance_ss(net)]
    for i, d in enumerate(devices):
        P = np.zeros((2 * N, 2))
        P[2 * i:2 * i + 2] = I2
        parts.append(scale(d, net.capacities[i] * P, P.T))
    for bus, d in (shunts or {}).items():
        P = np.zeros((2 * N, 2))
        P[2 * bus:2 * bus + 2] = I2
        parts.append(scale(d, P, P.T))
    Ytot = parallel(*parts)
    prop, M = inverse(Ytot)
    idx = np.arange(2 * net.n)
    d = np.repeat(np.sqrt(net.capacities), 2)
    sel = np.zeros((2 * N, 2 * net.n))
    sel[idx, idx] = 1.0
    proper = scale(prop, d[:, None] * sel.T, sel * d[None, :])
    deriv = (d[:, None] * M[np.ix_(idx, idx)]) * d[None, :]
    ins = tuple(f"i{a}{i}" for i in range(net.n) for a in "dq")
    outs = tuple(f"u{a}{i}" for i in range(net.n) for a in "dq")
    return proper.relabel(ins, outs), deriv


def promote_bus(net, bus, capacity):
    """Turn interior ``bus`` into the last device bus.

    Returns the reindexed network and the old-to-new bus index map.
    """
    if not net.n <= bus < net.n_buses:
        raise ValueError("only interior buses can be promoted")
    order = list(range(net.n)) + [bus] + [k for k in range(net.n, net.n_buses) if k != bus]
    new = {old: k for k, old in enumerate(order)}
    new[net.ground] = net.ground
    br = tuple((new[i], new[j], b, t) for i, j, b, t in net.branches)
    caps = list(net.capacities) + [capacity]
    return NetworkModel(net.n + 1, net.m - 1, br, caps, net.omega0), new


def static_admittance(net):
    """Complex system-base bus admittance matrix including the ground node."""
    N = net.n_buses + 1
    Y = np.zeros((N, N), complex)
    for i, j, b, tau in net.branches:
        y = b / complex(tau, 1.0)
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


def power_flow(net, specs, u_ground=1.0):
    """Operating points of the device buses and complex voltages of all buses.

    Device powers are scaled by capacity; the grounded node is the slack.
    Returns ``(ops, V)`` with ``ops`` in device per unit.
    """
    N = net.n_buses
    Y = static_admittance(net)
    kinds, p, q, v = [], np.zeros(N + 1), np.zeros(N + 1), np.ones(N + 1, complex)
    for i in range(N):
        if i < net.n:
            sp = specs[i]
            kinds.append(sp.mode)
            p[i] = sp.p0 * net.capacities[i]
            if sp.mode == "pq":
                q[i] = sp.q0_or_v0 * net.capacities[i]
            else:
                v[i] = sp.q0_or_v0
        else:
            kinds.append("pq")
    kinds.append("slack")
    v[N] = u_ground
    V = solve_power_flow(Y, kinds, p, q, v)
    I_inj = Y @ V
    ops = []
    for i in range(net.n):
        ops.append(OperatingPoint.from_phasors(V[i], I_inj[i] / net.capacities[i]))
    return ops, V[:N]


@dataclass(frozen=True, eq=False)
class PowerSystem:
    """Network plus one device per device bus, linearized at the power-flow solution."""

    net: NetworkModel
    specs: tuple
    ops: tuple = field(default=None)
    models: tuple = field(default=None)
    voltages: np.ndarray = field(default=None)

    def __post_init__(self):
        specs = tuple(s if isinstance(s, DeviceSpec) else DeviceSpec(**s) for s in self.specs)
        if len(specs) != self.net.n:
            raise ValueError("need one device spec per device bus")
        object.__setattr__(self, "specs", specs)
        if self.ops is None:
            ops, V = power_flow(self.net, specs)
            object.__setattr__(self, "ops", tuple(ops))
            object.__setattr__(self, "voltages", V)
        if self.models is None:
            models = tuple(build_admittance(s, o, self.net.omega0)
                           for s, o in zip(specs, self.ops))
            object.__setattr__(self, "models", models)

    @classmethod
    def build(cls, net, specs):
        specs = list(specs)
        caps = [s.capacity for s in specs]
        if not np.allclose(caps, net.capacities):
            net = net.with_capacities(caps)
        return cls(net, tuple(specs))

    def grid_operator(self, grid, shunts=None):
        return scaled_grid_operator(self.net, grid, shunts)

    def closed_loop(self, grid, shunts=None):
        """``(Y_grid^N, Y_cl^N)`` stacks on ``grid``."""
        op = self.grid_operator(grid, shunts)
        Yg = op.stack()
        return op, Yg, Yg + device_response(self.models, grid.omega)

    def closed_loop_ss(self, shunts=None):
        return assemble_closed_loop_ss(self.models, self.net, shunts)
