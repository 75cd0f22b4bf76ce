"""Shared random generators and independent oracles for the test suite."""
import itertools

import numpy as np

from gridformer.converters import DeviceSpec
from gridformer.errors import NoEquilibrium
from gridformer.network import NetworkModel, PowerSystem

MIXED_ARCHS = ("VSG", "DROOP", "VOC", "PLL-GFM", "PLL-PQ", "PLL-PV")


def random_network(rng, n, m, tau=None, capacities=None):
    """Connected network: random spanning tree over all nodes plus extra edges."""
    N = n + m + 1
    nodes = list(rng.permutation(N))
    edges = set()
    for k in range(1, N):
        a, b = nodes[k], nodes[int(rng.integers(k))]
        edges.add((min(a, b), max(a, b)))
    for a, b in itertools.combinations(range(N), 2):
        if rng.random() < 0.25:
            edges.add((a, b))
    br = []
    for a, b in sorted(edges):
        t = tau if tau is not None else rng.uniform(0.05, 0.3)
        br.append((int(a), int(b), rng.uniform(0.5, 5.0), t))
    caps = capacities if capacities is not None else rng.uniform(0.5, 2.0, n)
    return NetworkModel(n, m, tuple(br), caps)


def random_system(rng, n, m, archs=MIXED_ARCHS, tau=None, tries=50):
    """Random network with random devices that has a power-flow solution."""
    for _ in range(tries):
        net = random_network(rng, n, m, tau)
        specs = [DeviceSpec(archs[int(rng.integers(len(archs)))], p0=rng.uniform(0.0, 0.4),
                            capacity=c) for c in net.capacities]
        try:
            return PowerSystem(net, specs)
        except NoEquilibrium:
            continue
    raise RuntimeError("no random system with an equilibrium")


def closed_loop_is_stable(system):
    proper, _ = system.closed_loop_ss()
    return proper.n_states == 0 or np.max(np.linalg.eigvals(proper.A).real) < -1e-9


def placement_instance(rng):
    """Two device buses, two interior candidates, random graph to ground."""
    while True:
        pairs = [p for p in itertools.combinations(range(5), 2) if rng.random() < 0.5]
        try:
            net = NetworkModel(2, 2, [(i, j, rng.uniform(0.5, 5.0), 0.1) for i, j in pairs],
                               [1.0, 1.0])
        except ValueError:
            continue
        try:
            return PowerSystem(net, [DeviceSpec("PLL-PQ", p0=0.3)] * 2)
        except NoEquilibrium:
            continue


def jacobi_hermitian_eigvals(H, tol=1e-15, max_sweeps=100):
    """Eigenvalues of a Hermitian matrix by cyclic complex Jacobi rotations."""
    A = np.array(H, complex)
    n = A.shape[0]
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(A - np.diag(np.diag(A))) ** 2))
        if off <= tol * max(1.0, np.abs(np.diag(A)).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                r = abs(apq)
                if r <= 1e-18 * max(1.0, abs(A[p, p]), abs(A[q, q])):
                    A[p, q] = A[q, p] = 0.0
                    continue
                phase = apq / r
                app, aqq = A[p, p].real, A[q, q].real
                theta = (aqq - app) / (2 * r)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                # U = diag(1, conj(phase)) @ [[c, s], [-s, c]] acting on columns p, q
                U = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]])
                A[:, [p, q]] = A[:, [p, q]] @ U
                A[[p, q], :] = U.conj().T @ A[[p, q], :]
                A[p, q] = A[q, p] = 0.0
    return np.sort(np.diag(A).real)[::-1]


def jacobi_singular_values(M):
    """Singular values via the eigenvalues of ``M^H M`` (independent oracle)."""
    M = np.asarray(M, complex)
    G = M.conj().T @ M if M.shape[0] >= M.shape[1] else M @ M.conj().T
    ev = jacobi_hermitian_eigvals(G)
    return np.sqrt(np.clip(ev, 0.0, None))
