"""Small-signal dq admittance models of grid-connected converters.

Conventions
-----------
* Global dq frame rotates at the nominal ``omega0``; the grid source sits at
  angle zero.  A 2-vector ``x`` maps to the phasor ``x[0] + 1j*x[1]``.
* Device quantities are per unit on the device rating.
* ``Y_de`` maps terminal-voltage deviations to the current flowing INTO the
  converter.  Control laws use the converter OUTPUT current
  ``I_out = -I`` and output power

      dP = U_d0 dIout_d + U_q0 dIout_q + Iout_d0 dU_d + Iout_q0 dU_q
      dQ = U_q0 dIout_d - U_d0 dIout_q + Iout_d0 dU_q - Iout_q0 dU_d
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonpositiveTau, UnsupportedArchitecture
from .lti import StateSpaceModel, interconnect
from .powerflow import solve_power_flow

OMEGA0 = 2 * math.pi * 50.0
JROT = np.array([[0.0, -1.0], [1.0, 0.0]])
I2 = np.eye(2)


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


ARCHS = ("PLL-PQ", "PLL-PV", "VSG", "DROOP", "VOC", "PLL-GFM", "NONE", "STIFF")

DEFAULT_PARAMS = {
    "PLL-PQ": dict(omega_pll_hz=30.0, zeta=0.707, kp_p=0.02, ki_p=2.0,
                   kp_q=0.02, ki_q=2.0, tau_i=1e-3),
    "PLL-PV": dict(omega_pll_hz=30.0, zeta=0.707, kp_p=0.02, ki_p=2.0,
                   kp_v=0.05, ki_v=5.0, tau_i=1e-3),
    "VSG": dict(J=2.0, D=50.0, L_v=0.15, tau_v=0.1),
    "DROOP": dict(D=50.0, L_v=0.15, tau_v=0.1),
    "VOC": dict(eta=0.02, lambda_a=2 * math.pi * 1.0, K_Q=0.2, L_v=0.15, tau_v=0.1),
    "PLL-GFM": dict(Y_v=6.0, tau_v=0.1, omega_pll_hz=2.0, zeta=0.707,
                    kp_phi=0.0, ki_phi=5.0, tau_i=1e-3),
    "NONE": dict(),
    "STIFF": dict(g=1e6, tau_s=0.1),
}

_ALIASES = {a.replace("-", "").lower(): a for a in ARCHS}


def canonical_arch(name):
    key = str(name).replace("-", "").replace("_", "").lower()
    try:
        return _ALIASES[key]
    except KeyError:
        raise UnsupportedArchitecture(f"unknown architecture {name!r}") from None


@dataclass(frozen=True)
class LineParams:
    L_g: float
    tau: float = 0.1
    omega0: float = OMEGA0

    def __post_init__(self):
        if not self.L_g > 0:
            raise ValueError("L_g must be positive")
        if not self.tau >= 0:
            raise ValueError("tau must be nonnegative")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")

    @property
    def scr(self):
        return 1.0 / self.L_g


@dataclass(frozen=True)
class OperatingPoint:
    U_dq0: np.ndarray
    I_dq0: np.ndarray
    theta0: float
    P0: float
    Q0: float

    def __post_init__(self):
        U = np.array(self.U_dq0, float).reshape(2)
        I = np.array(self.I_dq0, float).reshape(2)
        object.__setattr__(self, "U_dq0", U)
        object.__setattr__(self, "I_dq0", I)
        Io = -I
        P = U @ Io
        Q = U[1] * Io[0] - U[0] * Io[1]
        if abs(P - self.P0) > 1e-9 or abs(Q - self.Q0) > 1e-9:
            raise ValueError("P0/Q0 inconsistent with U_dq0 and I_dq0")
        if not 0.5 < np.hypot(*U) < 1.5:
            raise ValueError("terminal voltage outside (0.5, 1.5) pu")

    @classmethod
    def from_phasors(cls, U, I_out):
        """Build from complex terminal voltage and complex OUTPUT current."""
        S = U * np.conj(I_out)
        return cls([U.real, U.imag], [-I_out.real, -I_out.imag],
                   float(np.angle(U)), float(S.real), float(S.imag))

    @classmethod
    def no_load(cls, u=1.0):
        return cls([u, 0.0], [0.0, 0.0], 0.0, 0.0, 0.0)

    @property
    def I_out(self):
        return -self.I_dq0

    @property
    def u_mag(self):
        return float(np.hypot(*self.U_dq0))

    @property
    def u_angle(self):
        return float(math.atan2(self.U_dq0[1], self.U_dq0[0]))

    def rotated(self, delta):
        """Same equilibrium seen from a frame rotated by ``-delta``."""
        R = rot(delta)
        return OperatingPoint(R @ self.U_dq0, R @ self.I_dq0, self.theta0 + delta,
                              self.P0, self.Q0)


@dataclass(frozen=True)
class DeviceSpec:
    """Control architecture, parameters and dispatch of one device.

    ``q0_or_v0`` is the reactive power for PQ-type devices (PLL-PQ, NONE)
    and the terminal voltage magnitude otherwise.
    """

    arch: str
    params: dict = field(default_factory=dict)
    capacity: float = 1.0
    p0: float = 0.5
    q0_or_v0: float | None = None

    def __post_init__(self):
        arch = canonical_arch(self.arch)
        object.__setattr__(self, "arch", arch)
        unknown = set(self.params) - set(DEFAULT_PARAMS[arch])
        if arch == "DROOP" and "K_P" in unknown:
            unknown.discard("K_P")
        if unknown:
            raise ValueError(f"unknown parameters for {arch}: {sorted(unknown)}")
        if not self.capacity > 0:
            raise ValueError("capacity must be positive")
        if self.q0_or_v0 is None:
            object.__setattr__(self, "q0_or_v0", 0.0 if self.mode == "pq" else 1.0)
        if arch == "NONE" and self.p0 != 0:
            object.__setattr__(self, "p0", 0.0)
        p = self.resolved
        for k, val in p.items():
            if k.startswith("tau") or k in ("L_v", "omega_pll_hz", "zeta", "Y_v", "g",
                                            "lambda_a", "eta", "D"):
                if not val > 0:
                    raise ValueError(f"{arch} parameter {k} must be positive")
        if p.get("J", 0.0) < 0:
            raise ValueError("J must be nonnegative")

    @property
    def resolved(self):
        p = dict(DEFAULT_PARAMS[self.arch])
        p.update(self.params)
        if self.arch == "DROOP" and "K_P" in p:
            p["D"] = 1.0 / p.pop("K_P")
        return p

    @property
    def mode(self):
        if self.arch in ("PLL-PQ", "NONE"):
            return "pq"
        if self.arch == "STIFF":
            return "slack"
        return "pv"

    def with_params(self, **kw):
        p = dict(self.params)
        p.update(kw)
        return DeviceSpec(self.arch, p, self.capacity, self.p0, self.q0_or_v0)


# -- line and sub-blocks ---------------------------------------------------------

def line_gamma(tau, omega0=OMEGA0):
    """``[[s/w0 + tau, -1], [1, s/w0 + tau]]^-1`` as a 2-state model."""
    if not tau > 0:
        raise NonpositiveTau("tau must be positive; tau = 0 puts poles on the imaginary axis")
    return StateSpaceModel(-omega0 * (tau * I2 + JROT), omega0 * I2, I2, np.zeros((2, 2)))


def gamma_inverse_coeffs(tau, omega0=OMEGA0):
    """``(P0, P1)`` with ``gamma^-1(s) = P0 + s P1``."""
    return tau * I2 + JROT, I2 / omega0


def gamma_at(tau, s, omega0=OMEGA0):
    return np.linalg.inv((s / omega0 + tau) * I2 + JROT)


def solve_operating_point(p_ref, q_or_v_ref, line, u_grid=1.0, mode="pq"):
    """Equilibrium of one device behind ``line`` from a grid source ``u_grid``.

    ``mode='pq'`` fixes the output reactive power, ``'pv'`` the terminal
    voltage magnitude.
    """
    y = 1.0 / (line.L_g * complex(line.tau, 1.0))
    Y = np.array([[y, -y], [-y, y]])
    kinds = [mode, "slack"]
    V = solve_power_flow(Y, kinds, [p_ref, 0.0], [q_or_v_ref if mode == "pq" else 0.0, 0.0],
                         [q_or_v_ref if mode == "pv" else 1.0, u_grid])
    U = V[0]
    I_out = np.conj((p_ref + 1j * (U * np.conj(Y[0] @ V)).imag) / U)
    return OperatingPoint.from_phasors(U, I_out)


def pll_block(omega_pll_hz, zeta=0.707, U0=1.0, input="ulq", output="theta"):
    """Linearized SRF-PLL with its own angle feedback closed.

    Input is the q-axis voltage in the frozen equilibrium frame (``U0`` times
    the voltage angle deviation); output is the PLL angle deviation.  PI gains
    are ``2 zeta w / U0`` and ``w^2 / U0`` with ``w = 2 pi omega_pll_hz``, so
    ``U0 * G(s)`` is the tracking transfer with unity DC gain.
    """
    if not omega_pll_hz > 0:
        raise ValueError("omega_pll_hz must be positive")
    w = 2 * math.pi * omega_pll_hz
    A = np.array([[0.0, 1.0], [-w * w, -2 * zeta * w]])
    C = np.array([[w * w / U0, 2 * zeta * w / U0]])
    return StateSpaceModel(A, [[0.0], [1.0]], C, [[0.0]], (input,), (output,))


def _gain(D, inputs, outputs):
    return StateSpaceModel.gain(D, inputs, outputs)


def _pi(kp, ki, input, output):
    return StateSpaceModel([[0.0]], [[1.0]], [[ki]], [[kp]], (input,), (output,))


def _power_block(op):
    """Static linearization: (ud, uq, iod, ioq) -> (p, q, vm)."""
    Ud, Uq = op.U_dq0
    Iod, Ioq = op.I_out
    U = op.u_mag
    D = np.array([[Iod, Ioq, Ud, Uq],
                  [-Ioq, Iod, Uq, -Ud],
                  [Ud / U, Uq / U, 0.0, 0.0]])
    return _gain(D, ("ud", "uq", "iod", "ioq"), ("p", "q", "vm"))


def _virtual_impedance(L_v, tau_v, omega0, e=("ed", "eq"), out=("iod", "ioq")):
    """``I_out = gamma_v(s) (E - U) / L_v``."""
    B = (omega0 / L_v) * np.hstack([I2, -I2])
    return StateSpaceModel(-omega0 * (tau_v * I2 + JROT), B, I2, np.zeros((2, 4)),
                           e + ("ud", "uq"), out)


def _frozen_local_voltage(theta0):
    """q-axis (and d-axis) voltage in the equilibrium local frame."""
    return _gain(rot(-theta0), ("ud", "uq"), ("uld_f", "ulq_f"))


def _current_loop(theta0, I_out0, tau_i, ref=("irefd", "irefq")):
    """Output current tracking the local-frame reference seen in the global frame.

    ``dI_out = (dIref_glob) / (tau_i s + 1)`` with
    ``dIref_glob = R(theta0) dIref_l + J I_out0 dtheta``; the physical current
    cannot follow a frame jump instantly, so the rotation term is lagged too.
    """
    B = np.hstack([rot(theta0), (JROT @ I_out0).reshape(2, 1)]) / tau_i
    return StateSpaceModel(-I2 / tau_i, B, I2, np.zeros((2, 3)),
                           ref + ("theta",), ("iod", "ioq"))


def _negate_current():
    return _gain(-I2, ("iod_", "ioq_"), ("id", "iq"))


def _finish(parts, conns):
    parts = list(parts) + [_negate_current()]
    conns = list(conns) + [("iod_", "iod"), ("ioq_", "ioq")]
    return interconnect(parts, conns, ("ud", "uq"), ("id", "iq"))


# -- architectures -----------------------------------------------------------------

def _emf_state(op, L_v, tau_v):
    """EMF phasor behind ``Z_v(0) = L_v (tau_v I + J)`` at the equilibrium."""
    return op.U_dq0 + L_v * (tau_v * I2 + JROT) @ op.I_out


def _emf_block(E0):
    """(theta, em) -> (ed, eq): ``dE = J E0 dtheta + E0/|E0| dem``."""
    D = np.column_stack([JROT @ E0, E0 / np.hypot(*E0)])
    return _gain(D, ("theta", "em"), ("ed", "eq"))


def _build_vsg(p, op, omega0):
    J, D = p["J"], p["D"]
    E0 = _emf_state(op, p["L_v"], p["tau_v"])
    if J > 0:
        swing = StateSpaceModel.from_tf([-omega0], [J, D, 0.0], "p", "theta")
    else:
        swing = StateSpaceModel.from_tf([-omega0 / D], [1.0, 0.0], "p", "theta")
    parts = [_power_block(op), _virtual_impedance(p["L_v"], p["tau_v"], omega0),
             _emf_block(E0), swing, _gain(np.zeros((1, 1)), ("q",), ("em",))]
    return _finish(parts, [])


def _build_voc(p, op, omega0):
    E0 = _emf_state(op, p["L_v"], p["tau_v"])
    U0 = op.u_mag
    phase = StateSpaceModel.from_tf([-omega0 * p["eta"] / U0 ** 2], [1.0, 0.0], "p", "theta")
    lam = p["lambda_a"]
    amp = StateSpaceModel.from_tf([-lam * p["K_Q"]], [1.0, lam], "q", "em")
    parts = [_power_block(op), _virtual_impedance(p["L_v"], p["tau_v"], omega0),
             _emf_block(E0), phase, amp]
    return _finish(parts, [])


def _build_pll_gfl(p, op, omega0, voltage_mode):
    theta0 = op.u_angle
    pll = pll_block(p["omega_pll_hz"], p["zeta"], op.u_mag, "ulq_f", "theta")
    pi_p = _pi(p["kp_p"], p["ki_p"], "ep", "irefd")
    if voltage_mode:
        pi_q = _pi(p["kp_v"], p["ki_v"], "vm", "irefq")
    else:
        pi_q = _pi(p["kp_q"], p["ki_q"], "q", "irefq")
    parts = [_power_block(op), _frozen_local_voltage(theta0), pll,
             pi_p, pi_q,
             _current_loop(theta0, op.I_out, p["tau_i"])]
    # P loop acts on the power error (P_ref - P); Q/V loops enter with the
    # sign that makes dIq_local restore the reference.
    conns = [("ep", "p", -1.0)]
    return _finish(parts, conns)


def _build_pll_gfm(p, op, omega0):
    theta0 = op.u_angle
    U0 = op.u_mag
    Yv, tau_v = p["Y_v"], p["tau_v"]
    I_l0 = rot(-theta0) @ op.I_out
    U_l0 = np.array([U0, 0.0])
    E_l0 = U_l0 + (tau_v * I2 + JROT) @ I_l0 / Yv
    pll = pll_block(p["omega_pll_hz"], p["zeta"], U0, "ulq_f", "theta")
    phi = _pi(p["kp_phi"], p["ki_phi"], "ep", "phi")
    # local voltage dU_l = R(-theta0) dU - J U_l0 dtheta
    loc = _gain(np.hstack([rot(-theta0), -(JROT @ U_l0).reshape(2, 1)]),
                ("ud", "uq", "theta"), ("uld", "ulq"))
    # E_l - U_l with dE_l = J E_l0 dphi
    diff = _gain(np.hstack([(JROT @ E_l0).reshape(2, 1), -I2]),
                 ("phi", "uld_in", "ulq_in"), ("dvd", "dvq"))
    adm = StateSpaceModel(-omega0 * (tau_v * I2 + JROT), omega0 * Yv * I2, I2,
                          np.zeros((2, 2)), ("dvd_in", "dvq_in"), ("irefd", "irefq"))
    parts = [_power_block(op), _frozen_local_voltage(theta0), pll, phi, loc, diff, adm,
             _current_loop(theta0, op.I_out, p["tau_i"], ("irefd_in", "irefq_in"))]
    conns = [("ep", "p", -1.0), ("uld_in", "uld"), ("ulq_in", "ulq"),
             ("dvd_in", "dvd"), ("dvq_in", "dvq"),
             ("irefd_in", "irefd"), ("irefq_in", "irefq")]
    return _finish(parts, conns)


def _build_stiff(p, omega0):
    g, tau = p["g"], p["tau_s"]
    return StateSpaceModel(-omega0 * (tau * I2 + JROT), omega0 * g * I2, I2,
                           np.zeros((2, 2)), ("ud", "uq"), ("id", "iq"))


def build_admittance(spec, op=None, omega0=OMEGA0):
    """``Y_de(s)``: terminal voltage deviation (ud, uq) -> current into device (id, iq)."""
    arch = spec.arch
    p = spec.resolved
    if arch == "NONE":
        return StateSpaceModel.gain(np.zeros((2, 2)), ("ud", "uq"), ("id", "iq"))
    if arch == "STIFF":
        return _build_stiff(p, omega0)
    if op is None:
        op = OperatingPoint.no_load()
    if arch == "VSG":
        return _build_vsg(p, op, omega0)
    if arch == "DROOP":
        return _build_vsg(dict(p, J=0.0), op, omega0)
    if arch == "VOC":
        return _build_voc(p, op, omega0)
    if arch == "PLL-PQ":
        return _build_pll_gfl(p, op, omega0, voltage_mode=False)
    if arch == "PLL-PV":
        return _build_pll_gfl(p, op, omega0, voltage_mode=True)
    if arch == "PLL-GFM":
        return _build_pll_gfm(p, op, omega0)
    raise UnsupportedArchitecture(arch)


def device_operating_point(spec, line, u_grid=1.0):
    """Single-device equilibrium for ``spec`` behind ``line``."""
    if spec.arch in ("NONE", "STIFF"):
        return OperatingPoint.no_load(u_grid)
    return solve_operating_point(spec.p0, spec.q0_or_v0, line, u_grid, spec.mode)
