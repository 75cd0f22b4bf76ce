"""Discrete GFM placement and sizing under a capacity budget.

A placed unit sits at an interior bus at zero dispatch, linearized at the
pre-placement bus voltage, and is absorbed into the network as a shunt
admittance before Kron reduction.  The objective is the minimum over the
frequency grid of the system strength seen at the original device buses.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .converters import DeviceSpec, OperatingPoint, build_admittance
from .errors import SearchSpaceTooLarge
from .lti import FrequencyGrid, freqresp, sigma_min
from .network import (PowerSystem, assemble_dynamic_y, capacity_scale, device_response,
                      kron_reduce, promote_bus)
from .strength import bus_strength

MAX_LATTICE = 10 ** 5
TIE_TOL = 1e-12
IMPROVE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PlacementProblem:
    system: PowerSystem
    candidates: tuple
    device: DeviceSpec
    sizes: tuple
    budget: float

    def __post_init__(self):
        net = self.system.net
        cands = tuple(sorted(set(int(c) for c in self.candidates)))
        if any(not net.n <= c < net.n_buses for c in cands):
            raise ValueError("candidates must be interior buses")
        sizes = tuple(sorted(set(float(s) for s in self.sizes)))
        if not sizes or any(s <= 0 for s in sizes):
            raise ValueError("sizes must be positive")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "sizes", sizes)


@dataclass(frozen=True)
class PlacementResult:
    assignment: dict
    achieved: float
    baseline: float
    evaluations: int
    method: str = ""
    trace: tuple = field(default=(), compare=False)

    @property
    def total(self):
        return float(sum(self.assignment.values()))

    def to_dict(self):
        return {"method": self.method,
                "assignment": {str(k): v for k, v in sorted(self.assignment.items())},
                "total_capacity": self.total, "achieved": self.achieved,
                "baseline": self.baseline, "improvement": self.achieved - self.baseline,
                "evaluations": self.evaluations}


class _Evaluator:
    """Caches the network matrices and unit shunt responses on the grid."""

    def __init__(self, problem, grid):
        self.problem = problem
        self.grid = grid
        sysm = problem.system
        net = sysm.net
        self.net = net
        self.Yfull = np.array([assemble_dynamic_y(net, w) for w in grid.omega])
        self.Ydev = device_response(sysm.models, grid.omega)
        self.unit = {}
        for b in problem.candidates:
            V = complex(*_bus_voltage(sysm, b))
            op = OperatingPoint.from_phasors(V, 0j)
            spec = DeviceSpec(problem.device.arch, problem.device.params, 1.0, 0.0, abs(V))
            model = build_admittance(spec, op, net.omega0)
            self.unit[b] = freqresp(model, grid.omega)
        self.count = 0

    def kappa(self, assignment):
        self.count += 1
        Y = self.Yfull.copy()
        for b, c in assignment.items():
            if c > 0:
                Y[:, 2 * b:2 * b + 2, 2 * b:2 * b + 2] += c * self.unit[b]
        net = self.net
        Yg = capacity_scale(kron_reduce(Y, range(net.n, net.n_buses)), net.capacities)
        return float(np.min(sigma_min(Yg + self.Ydev)))


def _bus_voltage(system, bus):
    V = system.voltages[bus]
    return V.real, V.imag


def _better(a, b):
    """Is candidate ``a = (achieved, total, buses)`` preferred over ``b``?"""
    if b is None:
        return True
    if a[0] > b[0] + TIE_TOL:
        return True
    if a[0] < b[0] - TIE_TOL:
        return False
    return (a[1], a[2]) < (b[1], b[2])


def _lattice_size(n_cand, sizes, budget, cap=MAX_LATTICE + 1):
    """Number of feasible assignments, counting stops once ``cap`` is reached."""
    levels = (0.0,) + tuple(sizes)
    count = 0

    def rec(k, used):
        nonlocal count
        if count >= cap:
            return
        if k == n_cand:
            count += 1
            return
        for s in levels:
            if used + s <= budget + 1e-12:
                rec(k + 1, used + s)

    if (len(levels)) ** n_cand <= cap:
        for combo in itertools.product(levels, repeat=n_cand):
            if sum(combo) <= budget + 1e-12:
                count += 1
        return count
    rec(0, 0.0)
    return count


def place_exhaustive(problem, grid=None):
    """Best feasible assignment by enumeration."""
    grid = grid or FrequencyGrid.default()
    cands = problem.candidates
    if _lattice_size(len(cands), problem.sizes, problem.budget) > MAX_LATTICE:
        raise SearchSpaceTooLarge("more than 1e5 feasible assignments; use the greedy search")
    ev = _Evaluator(problem, grid)
    levels = (0.0,) + problem.sizes
    baseline = ev.kappa({})
    best, best_assign = (baseline, 0.0, ()), {}
    for combo in itertools.product(levels, repeat=len(cands)):
        total = sum(combo)
        if total > problem.budget + 1e-12 or total == 0:
            continue
        assign = {b: c for b, c in zip(cands, combo) if c > 0}
        key = (ev.kappa(assign), total, tuple(sorted(assign)))
        if _better(key, best):
            best, best_assign = key, assign
    return PlacementResult(best_assign, best[0], baseline, ev.count, "exhaustive")


def place_greedy(problem, grid=None):
    """Raise one bus to its next size level at a time, taking the best gain."""
    grid = grid or FrequencyGrid.default()
    ev = _Evaluator(problem, grid)
    levels = (0.0,) + problem.sizes
    baseline = ev.kappa({})
    assign, current, trace = {}, baseline, []
    while True:
        used = sum(assign.values())
        best = None
        for b in problem.candidates:
            lvl = levels.index(assign.get(b, 0.0))
            if lvl + 1 >= len(levels):
                continue
            new = dict(assign)
            new[b] = levels[lvl + 1]
            total = used - assign.get(b, 0.0) + new[b]
            if total > problem.budget + 1e-12:
                continue
            key = (ev.kappa(new), total, tuple(sorted(new)))
            if _better(key, best):
                best, best_assign = key, new
        if best is None or best[0] <= current + IMPROVE_TOL:
            break
        assign, current = best_assign, best[0]
        trace.append((dict(assign), current))
    return PlacementResult(assign, current, baseline, ev.count, "greedy", tuple(trace))


def candidate_bus_strength(system, candidates, grid=None):
    """Minimum over the grid of the bus strength of each interior candidate.

    Each candidate is kept as a port with no device and unit capacity.
    """
    grid = grid or FrequencyGrid.default()
    out = {}
    for b in candidates:
        net, _ = promote_bus(system.net, b, 1.0)
        zero = build_admittance(DeviceSpec("NONE"))
        ext = PowerSystem(net, tuple(system.specs) + (DeviceSpec("NONE"),),
                          ops=tuple(system.ops) + (OperatingPoint.no_load(),),
                          models=tuple(system.models) + (zero,))
        _, _, Ycl = ext.closed_loop(grid)
        curves = bus_strength(np.linalg.inv(Ycl), grid)
        out[b] = float(curves[-1].values.min())
    return out


def weakest_candidate(system, candidates, grid=None):
    ks = candidate_bus_strength(system, candidates, grid)
    return min(sorted(ks), key=lambda b: ks[b])
