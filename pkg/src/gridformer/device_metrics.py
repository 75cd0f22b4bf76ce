"""Single-device metrics: sensitivity, Forming Index and comparison curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .converters import I2, JROT, rot
from .errors import BandOutsideGrid, IllPosedLoop, SingularAdmittance
from .lti import (COND_LIMIT, FrequencyGrid, StateSpaceModel, eval_at, feedback,
                  freqresp, hinf_norm, inverse, parallel, polynomial_premultiply, scale,
                  series, sigma_max)

CURVE_KINDS = ("FI", "IN", "FS", "kappa", "alpha", "bus", "passivity")
GFM_BAND_HZ = (5.0, 200.0)


@dataclass(frozen=True, eq=False)
class StrengthCurve:
    grid: FrequencyGrid
    values: np.ndarray
    kind: str
    peak: tuple
    dc: float

    def __post_init__(self):
        v = np.array(self.values, float).ravel()
        if v.size != len(self.grid):
            raise ValueError("curve length does not match its grid")
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve values must be finite")
        if self.kind != "passivity" and np.any(v < 0):
            raise ValueError("curve values must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, grid, values, kind, peak=None):
        values = np.asarray(values, float)
        if peak is None:
            k = int(np.argmax(values))
            peak = (float(grid.omega[k]), float(values[k]))
        return cls(grid, values, kind, peak, float(values[0]))

    @property
    def hz(self):
        return self.grid.hz

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            write_curve_csv(fh, self)

    @classmethod
    def from_csv(cls, path, kind):
        w, v = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                w.append(float(row["omega_rad_s"]))
                v.append(float(row["value"]))
        return cls.from_values(FrequencyGrid(w), v, kind)


def write_curve_csv(fh, curve):
    wr = csv.writer(fh)
    wr.writerow(["omega_rad_s", "f_hz", "value"])
    for w, f, v in zip(curve.grid.omega, curve.grid.hz, curve.values):
        wr.writerow([repr(float(w)), repr(float(f)), repr(float(v))])


def sensitivity(Y_de, line):
    """``S_v = [I + L_g gamma^-1(s) Y_de(s)]^-1`` as a closed feedback loop.

    The loop gain ``L_g gamma^-1 Y_de`` is realized without inverting the
    line model: ``gamma^-1`` is the first-order polynomial
    ``(tau I + J) + s I / omega0``, which a strictly proper ``Y_de`` absorbs.
    """
    if Y_de.shape != (2, 2):
        raise ValueError("device admittance must be 2x2")
    P0 = line.L_g * (line.tau * I2 + JROT)
    P1 = line.L_g * I2 / line.omega0
    D = Y_de.D
    if np.max(np.abs(D), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(Y_de.C), initial=0.0)):
        Y_sp = StateSpaceModel(Y_de.A, Y_de.B, Y_de.C, np.zeros((2, 2)))
        loop = polynomial_premultiply(Y_sp, P0, P1)
        return feedback(StateSpaceModel.gain(I2), loop).relabel(("ud_g", "uq_g"), ("ud", "uq"))
    if np.linalg.cond(D) > COND_LIMIT:
        raise IllPosedLoop("device feedthrough is singular but nonzero")
    # invertible feedthrough: S_v = (gamma + L_g Y_de)^-1 gamma
    gam = StateSpaceModel(-line.omega0 * (line.tau * I2 + JROT), line.omega0 * I2, I2,
                          np.zeros((2, 2)))
    W = parallel(gam, scale(Y_de, line.L_g * I2))
    Winv, _ = inverse(W)
    return series(gam, Winv).relabel(("ud_g", "uq_g"), ("ud", "uq"))


def forming_index(S_v, grid=None):
    """``FI(j omega) = sigma_max(S_v(j omega))`` on ``grid`` with a refined peak."""
    grid = grid or FrequencyGrid.default()
    vals = sigma_max(freqresp(S_v, grid.omega))
    peak = None
    try:
        pv, pw = hinf_norm(S_v, grid)
        if pv >= vals.max():
            peak = (pw, pv)
    except Exception:
        peak = None
    return StrengthCurve.from_values(grid, vals, "FI", peak)


@dataclass(frozen=True)
class GfmVerdict:
    verdict: str
    band_hz: tuple
    max_fi: float
    margin: float
    violations_hz: tuple

    @property
    def is_gfm(self):
        return self.verdict == "GFM"


def classify_gfm(curve, band=GFM_BAND_HZ):
    """GFM iff ``FI < 1`` at every grid point inside ``band`` (Hz)."""
    if curve.kind != "FI":
        raise ValueError("classification needs an FI curve")
    lo, hi = band
    f = curve.hz
    if lo >= hi or lo < f[0] * (1 - 1e-9) or hi > f[-1] * (1 + 1e-9):
        raise BandOutsideGrid(f"band [{lo}, {hi}] Hz not inside grid [{f[0]:.4g}, {f[-1]:.4g}] Hz")
    mask = curve.grid.band_mask(lo, hi)
    vals = curve.values[mask]
    bad = f[mask][vals >= 1.0]
    return GfmVerdict("GFL" if bad.size else "GFM", (lo, hi), float(vals.max()),
                      float(np.min(np.abs(1.0 - vals))), tuple(float(x) for x in bad))


def impedance_norm(Y_de, grid=None):
    """``sigma_max(Y_de(j omega)^-1)``."""
    grid = grid or FrequencyGrid.default()
    Y = freqresp(Y_de, grid.omega)
    cond = np.linalg.cond(Y)
    if np.any(~np.isfinite(cond) | (cond > COND_LIMIT)):
        raise SingularAdmittance("device admittance is singular on the grid")
    return StrengthCurve.from_values(grid, sigma_max(np.linalg.inv(Y)), "IN")


def frequency_smoothing(S_v, op, grid=None, theta_g=0.0):
    """``|[U^-1 R(theta_u - theta_g) S_v(j omega)]_{qq}|`` with ``U = |U_dq0|``."""
    grid = grid or FrequencyGrid.default()
    U = op.u_mag
    if not U > 0:
        raise ValueError("operating-point voltage must be nonzero")
    R = rot(op.u_angle - theta_g)
    S = freqresp(S_v, grid.omega)
    vals = np.abs((R @ S)[:, 1, 1]) / U
    return StrengthCurve.from_values(grid, vals, "FS")


def gain_bound_check(S_v, omega, vectors):
    """Ratios ``|S_v u| / |u|`` for each column of ``vectors`` at ``omega``."""
    S = eval_at(S_v, 1j * omega)
    V = np.asarray(vectors, complex)
    return np.linalg.norm(S @ V, axis=0) / np.linalg.norm(V, axis=0)
