"""System, grid and bus strength, the added-device block formulas and bound checks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .converters import (I2, JROT, OMEGA0, LineParams, build_admittance,
                         device_operating_point, gamma_at)
from .device_metrics import StrengthCurve, sensitivity
from .errors import (NoBracket, NoEquilibrium, NumericalError, SingularBlock,
                     SingularBMatrix)
from .lti import (COND_LIMIT, FrequencyGrid, eval_at, freqresp, is_stable, sigma_max,
                  sigma_min)
from .network import (PowerSystem, assemble_dynamic_y, capacity_scale, device_response,
                      kron_reduce, promote_bus, static_b_matrix, static_grid_matrix)

VERY_WEAK, WEAK = 0.5, 1.0
# kappa falls to zero above the band as line reactance grows, so the worst
# frequency and the classification are taken inside a band
STRENGTH_BAND_HZ = (5.0, 200.0)
BOUND_TOL = 1e-10


def classify_strength(kappa_min, very_weak=VERY_WEAK, weak=WEAK):
    if kappa_min < very_weak:
        return "very_weak"
    if kappa_min < weak:
        return "weak"
    return "strong"


@dataclass(frozen=True)
class BoundCheck:
    omega: float
    lhs: float
    rhs: float
    holds: bool = field(init=False)
    slack: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "slack", float(self.lhs - self.rhs))
        object.__setattr__(self, "holds", bool(self.lhs >= self.rhs - BOUND_TOL))


def _checks(grid, lhs, rhs):
    return [BoundCheck(float(w), float(a), float(b)) for w, a, b in zip(grid.omega, lhs, rhs)]


def _stack(Y_cl, grid):
    if callable(Y_cl):
        return np.array([Y_cl(w) for w in grid.omega])
    return np.asarray(Y_cl)


def _check_cond(Y, exc, what):
    cond = np.linalg.cond(Y)
    if np.any(~np.isfinite(cond) | (cond > COND_LIMIT)):
        raise exc(f"{what} has cond = {np.max(cond):.3g}")


# -- strength curves -----------------------------------------------------------------

def system_strength(Y_cl, grid):
    """``kappa = sigma_min(Y_cl) = 1 / sigma_max(Z_cl)`` on ``grid``.

    ``Y_cl`` is a ``(K, 2n, 2n)`` stack or a callable of omega.
    """
    Y = _stack(Y_cl, grid)
    _check_cond(Y, NumericalError, "closed-loop admittance")
    k1 = sigma_min(Y)
    k2 = 1.0 / sigma_max(np.linalg.inv(Y))
    if np.any(np.abs(k1 - k2) > 1e-9 * np.maximum(1.0, k1)):
        raise NumericalError("system strength cross-check failed")
    return StrengthCurve.from_values(grid, k1, "kappa")


def grid_strength(netop, grid=None):
    """``alpha = sigma_min(Y_grid^N (I (x) gamma0^-1))``; constant for uniform tau."""
    grid = grid or netop.grid
    if netop.uniform:
        a = sigma_min(netop.b_grid.astype(complex))
        return StrengthCurve.from_values(grid, np.full(len(grid), a), "alpha")
    Yg = netop.stack()
    n = netop.n
    vals = np.empty(len(grid))
    for k, w in enumerate(grid.omega):
        ginv = (1j * w / netop.omega0 + netop.tau0) * I2 + JROT
        vals[k] = sigma_min(Yg[k] @ np.kron(np.eye(n), ginv))
    return StrengthCurve.from_values(grid, vals, "alpha")


def block_norms(Z):
    """``sigma_max`` of every 2x2 block, shape ``(..., n, n)``."""
    Z = np.asarray(Z)
    n = Z.shape[-1] // 2
    blocks = Z.reshape(Z.shape[:-2] + (n, 2, n, 2)).swapaxes(-3, -2)
    return sigma_max(blocks)


def column_block_sum(Zcol):
    """Sum of ``sigma_max`` over the 2x2 blocks of a ``2k x 2`` block column."""
    k = Zcol.shape[0] // 2
    return float(sigma_max(Zcol.reshape(k, 2, 2)).sum())


def bus_strength(Z_cl, grid):
    """Per-bus ``kappa_i = 1 / max(row block-norm sum, column block-norm sum)``."""
    N = block_norms(_stack(Z_cl, grid))
    rows, cols = N.sum(axis=-1), N.sum(axis=-2)
    k = 1.0 / np.maximum(rows, cols)
    return [StrengthCurve.from_values(grid, k[:, i], "bus") for i in range(k.shape[1])]


def passivity_margin(Y_cl, grid):
    """Smallest eigenvalue of the Hermitian part of ``Y_cl``."""
    Y = _stack(Y_cl, grid)
    H = 0.5 * (Y + np.conj(np.swapaxes(Y, -1, -2)))
    return StrengthCurve.from_values(grid, np.linalg.eigvalsh(H)[..., 0], "passivity")


def reduced_b_matrix(net):
    """Static Kron-reduced matrix over device buses (system base)."""
    return kron_reduce(static_b_matrix(net), range(net.n, net.n_buses), block=1)


def escr(net):
    """``1 / sum_j S_j |Z_ij|`` with ``Z = B_N^-1``."""
    B = reduced_b_matrix(net)
    _check_cond(B, SingularBMatrix, "reduced susceptance matrix")
    Z = np.linalg.inv(B)
    return list(1.0 / (np.abs(Z) @ net.capacities))


def gscr(net):
    """Smallest eigenvalue of ``S^-1 B_N`` via the congruent ``S^-1/2 B_N S^-1/2``."""
    return float(np.linalg.eigvalsh(static_grid_matrix(net))[0])


# -- report -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StrengthReport:
    kappa: StrengthCurve
    alpha: StrengthCurve
    bus: list
    worst_omega: float
    classification: str
    escr: list
    gscr: float
    passivity: StrengthCurve
    kappa_min: float = math.nan
    self_check: dict = field(default_factory=dict)

    def to_dict(self):
        def curve(c):
            return {"omega_rad_s": c.grid.omega.tolist(), "value": c.values.tolist(),
                    "peak": list(c.peak), "dc": c.dc}
        return {
            "classification": self.classification,
            "kappa_min": self.kappa_min,
            "worst_omega_rad_s": self.worst_omega,
            "worst_f_hz": self.worst_omega / (2 * math.pi),
            "ranking": weak_bus_ranking(self),
            "escr": list(map(float, self.escr)),
            "gscr": self.gscr,
            "self_check": self.self_check,
            "kappa": curve(self.kappa),
            "alpha": curve(self.alpha),
            "passivity": curve(self.passivity),
            "bus": [curve(c) for c in self.bus],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def closed_loop_at(system, omega, shunts=None):
    """``Y_cl^N(j omega)`` at an arbitrary frequency (general path)."""
    net = system.net
    Y = assemble_dynamic_y(net, omega)
    for bus, model in (shunts or {}).items():
        Y[2 * bus:2 * bus + 2, 2 * bus:2 * bus + 2] += eval_at(model, 1j * omega)
    Yg = capacity_scale(kron_reduce(Y, range(net.n, net.n_buses)), net.capacities)
    return Yg + device_response(system.models, omega)[0]


def _refine_min(f, lo, hi, tol=1e-8, maxiter=100):
    g = (math.sqrt(5) - 1) / 2
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if hi - lo < tol:
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def worst_frequency(system, kappa, shunts=None, band=None):
    """Argmin of kappa within ``band`` (Hz), refined by golden section in log-frequency.

    With no band, or a band holding no grid point, the whole grid is searched.
    """
    w = kappa.grid.omega
    idx = np.arange(w.size)
    if band is not None:
        sel = idx[kappa.grid.band_mask(*band)]
        if sel.size:
            idx = sel
    k = int(idx[np.argmin(kappa.values[idx])])
    best_w, best = float(w[k]), float(kappa.values[k])
    lo, hi = math.log(w[max(k - 1, idx[0])]), math.log(w[min(k + 1, idx[-1])])
    if hi > lo:
        def f(lw):
            return float(sigma_min(closed_loop_at(system, math.exp(lw), shunts)))
        lw, val = _refine_min(f, lo, hi)
        if val < best:
            best_w, best = math.exp(lw), val
    return best_w, best


def strength_report(system, grid=None, shunts=None, very_weak=VERY_WEAK, weak=WEAK,
                    band=STRENGTH_BAND_HZ):
    """Every strength metric for a :class:`PowerSystem` on ``grid``.

    ``worst_omega`` and the classification use the band ``band`` (Hz);
    pass ``None`` to search the whole grid.
    """
    grid = grid or FrequencyGrid.default()
    sh = None
    if shunts:
        sh = {b: freqresp(m, grid.omega) for b, m in shunts.items()}
    netop, Yg, Ycl = system.closed_loop(grid, sh)
    kappa = system_strength(Ycl, grid)
    Z = np.linalg.inv(Ycl)
    alpha = grid_strength(netop, grid)
    bus = bus_strength(Z, grid)
    pas = passivity_margin(Ycl, grid)
    w_worst, k_min = worst_frequency(system, kappa, shunts, band)
    checks = {}
    if _homogeneous(system) and netop.uniform:
        ref = homogeneous_strength(system.models[0], netop.b_grid, netop.tau, grid, netop.omega0)
        checks["homogeneous_max_abs_diff"] = float(np.max(np.abs(ref - kappa.values)))
    return StrengthReport(kappa, alpha, bus, w_worst, classify_strength(k_min, very_weak, weak),
                          escr(system.net), gscr(system.net), pas, k_min, checks)


def _homogeneous(system, rtol=1e-9):
    """Do all devices share one realization (up to power-flow round-off)?"""
    m0 = system.models[0]

    def close(a, b):
        atol = rtol * max(1.0, np.abs(b).max(initial=0.0))
        return a.shape == b.shape and np.allclose(a, b, rtol=rtol, atol=atol)
    return all(m.n_states == m0.n_states and close(m.A, m0.A) and close(m.B, m0.B) and
               close(m.C, m0.C) and close(m.D, m0.D) for m in system.models)


def homogeneous_strength(model, b_grid, tau, grid, omega0):
    """``min_i sigma_min(Y_de + lambda_i gamma)`` for identical devices, uniform tau."""
    lam = np.linalg.eigvalsh(b_grid)
    Y = freqresp(model, grid.omega)
    out = np.full(len(grid), np.inf)
    for k, w in enumerate(grid.omega):
        g = gamma_at(tau, 1j * w, omega0)
        for l in lam:
            out[k] = min(out[k], sigma_min(Y[k] + l * g))
    return out


def weak_bus_ranking(report, omega=None):
    """Bus indices sorted by ascending ``kappa_i`` at ``omega`` (default worst)."""
    omega = report.worst_omega if omega is None else omega
    k = int(np.argmin(np.abs(np.log(report.kappa.grid.omega) - math.log(omega))))
    vals = [c.values[k] for c in report.bus]
    return sorted(range(len(vals)), key=lambda i: (vals[i], i))


# -- strength lower bound ----------------------------------------------------------------------

def check_strength_bound(kappa, alpha, device_models, grid, tau0, omega0=None):
    """``kappa >= sigma_min(gamma0) alpha - sigma_max(Y_de^N)`` at every grid point."""
    omega0 = omega0 or OMEGA0
    Yd = device_response(device_models, grid.omega)
    sg = np.array([sigma_min(gamma_at(tau0, 1j * w, omega0)) for w in grid.omega])
    rhs = sg * alpha.values - sigma_max(Yd)
    return _checks(grid, kappa.values, rhs)


# -- added device -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AddedDeviceResult:
    grid: FrequencyGrid
    kappa: StrengthCurve
    alpha: StrengthCurve
    kappa_new: StrengthCurve
    kappa_direct: np.ndarray
    alpha_direct: np.ndarray
    kappa_new_direct: np.ndarray
    alpha_before: float
    fi: np.ndarray
    parts: dict
    system: PowerSystem

    @property
    def max_error(self):
        return float(max(np.max(np.abs(self.kappa.values - self.kappa_direct)),
                         np.max(np.abs(self.alpha.values - self.alpha_direct)),
                         np.max(np.abs(self.kappa_new.values - self.kappa_new_direct))))


def extended_system(base, bus, extra):
    """Base system with ``extra`` attached at interior ``bus`` (the new last device)."""
    net, _ = promote_bus(base.net, bus, extra.capacity)
    return PowerSystem(net, tuple(base.specs) + (extra,))


def added_device_strength(base, bus, extra, grid=None):
    """Strength after connecting ``extra`` at interior ``bus`` via the block formulas.

    Needs uniform branch tau.  The same quantities from direct assembly of the
    extended closed loop are returned alongside for comparison.
    """
    grid = grid or FrequencyGrid.default()
    tau = base.net.uniform_tau
    if tau is None:
        raise ValueError("block formulas need a uniform branch tau")
    system = extended_system(base, bus, extra)
    net = system.net
    n = base.net.n
    om0 = net.omega0
    B1 = static_grid_matrix(net)
    BN, BN1, Bn1 = B1[:n, :n], B1[:n, n], B1[n, n]
    K = np.outer(BN1, BN1) / Bn1
    Bt = BN - K
    Lg = 1.0 / Bn1
    Yd_all = device_response(system.models, grid.omega)
    Ydn = Yd_all[:, :2 * n, :2 * n]
    Yx = Yd_all[:, 2 * n:, 2 * n:]
    In = np.eye(n)
    kap, alp, kn, fi = (np.empty(len(grid)) for _ in range(4))
    kap_d, alp_d, kn_d = (np.empty(len(grid)) for _ in range(3))
    parts = {k: [] for k in ("S_v", "S_v_prime", "T2", "Y_new", "A1invA2", "gamma")}
    for k, w in enumerate(grid.omega):
        g = gamma_at(tau, 1j * w, om0)
        gi = np.linalg.inv(g)
        Sv = np.linalg.inv(I2 + Lg * gi @ Yx[k])
        Svp = g @ Sv @ gi
        Ygrid = np.kron(BN, g) - np.kron(K, g @ Sv)
        Ycl = Ydn[k] + Ygrid
        A1 = Ydn[k] + np.kron(BN, g)
        A2 = np.kron(BN1.reshape(n, 1), g)
        A3 = np.kron(BN1.reshape(1, n), g)
        _check_cond(A1, SingularBlock, "device-side block")
        A1iA2 = np.linalg.solve(A1, A2)
        T2 = A3 @ A1iA2
        Ynew = Bn1 * g @ np.linalg.inv(Sv) - T2
        _check_cond(Ynew, SingularBlock, "added-bus block")
        Zn1 = -A1iA2 @ np.linalg.inv(Ynew)
        kap[k] = sigma_min(Ycl)
        alp[k] = sigma_min(np.kron(BN, I2) - np.kron(K, Svp))
        kn[k] = 1.0 / (column_block_sum(Zn1) + 1.0 / sigma_min(Ynew))
        fi[k] = sigma_max(Sv)
        for key, val in (("S_v", Sv), ("S_v_prime", Svp), ("T2", T2), ("Y_new", Ynew),
                         ("A1invA2", A1iA2), ("gamma", g)):
            parts[key].append(val)
        # direct assembly of the extended closed loop
        Yfull = np.kron(B1, g) + Yd_all[k]
        Z = np.linalg.inv(Yfull)
        kap_d[k] = 1.0 / sigma_max(Z[:2 * n, :2 * n])
        kn_d[k] = 1.0 / column_block_sum(Z[:, 2 * n:])
        Yg_full = np.kron(B1, g)
        Yg_full[2 * n:, 2 * n:] += Yx[k]
        alp_d[k] = sigma_min(kron_reduce(Yg_full, [n]) @ np.kron(In, gi))
    parts = {k: np.array(v) for k, v in parts.items()}
    parts.update(B=B1, K=K, B_tilde=Bt)
    return AddedDeviceResult(
        grid, StrengthCurve.from_values(grid, kap, "kappa"),
        StrengthCurve.from_values(grid, alp, "alpha"),
        StrengthCurve.from_values(grid, kn, "bus"),
        kap_d, alp_d, kn_d, float(sigma_min(Bt.astype(complex))), fi, parts, system)


@dataclass(frozen=True, eq=False)
class AddedDeviceBounds:
    alpha_hermitian: list
    alpha_final: list
    bus_sigma: list
    bus_kappa: list
    bus_kappa_final: list
    enhanced: np.ndarray
    fi: np.ndarray
    alpha_before: float

    def all_hold(self):
        return all(c.holds for group in (self.alpha_hermitian, self.alpha_final, self.bus_sigma,
                                         self.bus_kappa, self.bus_kappa_final) for c in group)


def check_added_device_bounds(result):
    """Both sides of the grid-strength and bus-strength lower-bound chains.

    ``enhanced[k]`` reports ``alpha > sigma_min(B_tilde)`` at each frequency;
    ``fi`` is the added device's forming index there.
    """
    grid = result.grid
    p = result.parts
    Bt, K = p["B_tilde"], p["K"]
    n = Bt.shape[0]
    lamK = np.linalg.eigvalsh(K)
    Bn1 = p["B"][n, n]
    a_herm, a_final, b_sig_rhs, b_kap_rhs, b_kap_final = ([] for _ in range(5))
    sig_new = []
    for k in range(len(grid)):
        Svp = p["S_v_prime"][k]
        X = I2 - Svp
        M = np.kron(Bt, I2) + np.kron(K, X)
        H = 0.5 * (M + M.conj().T)
        a_herm.append(np.linalg.eigvalsh(H)[0])
        lamX = np.linalg.eigvalsh(0.5 * (X + X.conj().T))
        a_final.append(np.linalg.eigvalsh(Bt)[0] + min(l * x for l in lamK for x in lamX))
        sv_min = sigma_min(Bn1 * p["gamma"][k]) / sigma_max(p["S_v"][k]) - sigma_max(p["T2"][k])
        b_sig_rhs.append(sv_min)
        s_new = sigma_min(p["Y_new"][k])
        sig_new.append(s_new)
        denom = column_block_sum(p["A1invA2"][k]) + 1.0
        b_kap_rhs.append(s_new / denom)
        b_kap_final.append(sv_min / denom)
    a_herm, sig_new = np.array(a_herm), np.array(sig_new)
    return AddedDeviceBounds(
        _checks(grid, result.alpha.values, a_herm),
        _checks(grid, a_herm, a_final),
        _checks(grid, sig_new, b_sig_rhs),
        _checks(grid, result.kappa_new.values, b_kap_rhs),
        _checks(grid, result.kappa_new.values, b_kap_final),
        result.alpha.values > result.alpha_before, result.fi, result.alpha_before)


# -- critical SCR -----------------------------------------------------------------------

@dataclass(frozen=True)
class CscrResult:
    value: float | None
    found: bool
    stable_everywhere: bool = False
    unstable_everywhere: bool = False
    iterations: int = 0

    def margin(self, gscr_value):
        """``(gSCR - CSCR) / CSCR``."""
        if not self.found:
            raise NoBracket("no stability boundary inside the bracket")
        return (gscr_value - self.value) / self.value


def single_device_stable(spec, scr, tau, omega0=None):
    line = LineParams(1.0 / scr, tau, omega0 or OMEGA0)
    try:
        op = device_operating_point(spec, line)
    except NoEquilibrium:
        return False
    try:
        return is_stable(sensitivity(build_admittance(spec, op, line.omega0), line))
    except NumericalError:
        return False


def compute_cscr(spec, tau=0.1, omega0=None, lo=0.1, hi=10.0, tol=1e-4, strict=False):
    """Smallest SCR for which the single-device loop is stable, by bisection."""
    st_hi = single_device_stable(spec, hi, tau, omega0)
    st_lo = single_device_stable(spec, lo, tau, omega0)
    if not st_hi or st_lo:
        res = CscrResult(None, False, stable_everywhere=st_lo and st_hi,
                         unstable_everywhere=not st_hi)
        if strict:
            raise NoBracket("stability does not change across the SCR bracket")
        return res
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if single_device_stable(spec, mid, tau, omega0):
            hi = mid
        else:
            lo = mid
        it += 1
    return CscrResult(hi, True, iterations=it)
