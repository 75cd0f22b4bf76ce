"""Real-coefficient LTI kernel.

Every transfer matrix in the package is held as a :class:`StateSpaceModel`
``G(s) = C (sI - A)^-1 B + D``.  Signals may carry string labels, which
:func:`interconnect` uses to wire blocks together by name.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import IllPosedLoop, NearSingularResolvent, UnstableModel

COND_LIMIT = 1e12
STAB_EPS = 1e-9


def _as2d(x):
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    return a


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    inputs: tuple = ()
    outputs: tuple = ()

    def __post_init__(self):
        D = _as2d(self.D)
        ny, nu = D.shape
        A = np.array(self.A, dtype=float)
        A = np.zeros((0, 0)) if A.size == 0 else np.atleast_2d(A)
        nx = A.shape[0]
        B = np.array(self.B, dtype=float).reshape(nx, nu)
        C = np.array(self.C, dtype=float).reshape(ny, nx)
        if A.shape != (nx, nx):
            raise ValueError("A must be square")
        inputs = tuple(self.inputs) or tuple(f"u{i}" for i in range(nu))
        outputs = tuple(self.outputs) or tuple(f"y{i}" for i in range(ny))
        if len(inputs) != nu or len(outputs) != ny:
            raise ValueError("label count does not match model dimensions")
        if len(set(outputs)) != ny:
            raise ValueError("output labels must be unique")
        for name, arr in zip("ABCD", (A, B, C, D)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.D.shape[1]

    @property
    def n_outputs(self):
        return self.D.shape[0]

    @property
    def shape(self):
        return self.D.shape

    @classmethod
    def gain(cls, D, inputs=(), outputs=()):
        D = _as2d(D)
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                   np.zeros((D.shape[0], 0)), D, inputs, outputs)

    @classmethod
    def from_tf(cls, num, den, input="u0", output="y0"):
        """SISO model from polynomial coefficients (highest power first)."""
        A, B, C, D = scipy.signal.tf2ss(num, den)
        return cls(A, B, C, D, (input,), (output,))

    def relabel(self, inputs=None, outputs=None):
        return StateSpaceModel(self.A, self.B, self.C, self.D,
                               inputs or self.inputs, outputs or self.outputs)

    def poles(self):
        return np.linalg.eigvals(self.A) if self.n_states else np.zeros(0, complex)

    def __call__(self, s):
        return eval_at(self, s)

    def __repr__(self):
        return (f"StateSpaceModel(n_x={self.n_states}, n_u={self.n_inputs}, "
                f"n_y={self.n_outputs})")


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing angular frequencies in rad/s."""

    omega: np.ndarray = field()

    def __post_init__(self):
        w = np.array(self.omega, dtype=float).ravel()
        if w.size == 0:
            raise ValueError("frequency grid is empty")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("frequencies must be finite and positive")
        if np.any(np.diff(w) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    @classmethod
    def log(cls, f_min_hz=0.05, f_max_hz=2000.0, points=500):
        return cls(2 * np.pi * np.geomspace(f_min_hz, f_max_hz, int(points)))

    @classmethod
    def default(cls):
        return cls.log()

    @property
    def hz(self):
        return self.omega / (2 * np.pi)

    def __len__(self):
        return self.omega.size

    def refine(self, factor):
        """Log-spaced grid over the same span with ``factor`` times the points."""
        return FrequencyGrid(np.geomspace(self.omega[0], self.omega[-1],
                                          int(factor * len(self))))

    def band_mask(self, f_lo_hz, f_hi_hz):
        f = self.hz
        return (f >= f_lo_hz * (1 - 1e-12)) & (f <= f_hi_hz * (1 + 1e-12))


@dataclass(frozen=True)
class FreqResponseSample:
    omega: float
    value: np.ndarray


# -- evaluation ---------------------------------------------------------------

def eval_at(model, s):
    """Transfer matrix ``C (sI - A)^-1 B + D`` at the complex point ``s``."""
    D = model.D.astype(complex)
    if model.n_states == 0:
        return D
    M = s * np.eye(model.n_states) - model.A
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NearSingularResolvent(f"cond(sI - A) = {cond:.3g} at s = {s}")
    return model.C @ np.linalg.solve(M, model.B) + D


def freqresp(model, omega, check=True):
    """Stack of ``G(j omega_k)``, shape ``(K, n_y, n_u)``."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    D = np.broadcast_to(model.D.astype(complex), (w.size,) + model.shape)
    if model.n_states == 0:
        return D.copy()
    n = model.n_states
    M = 1j * w[:, None, None] * np.eye(n) - model.A
    if check:
        cond = np.linalg.cond(M)
        bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise NearSingularResolvent(
                f"cond(sI - A) = {cond[k]:.3g} at omega = {w[k]:.6g} rad/s")
    X = np.linalg.solve(M, np.broadcast_to(model.B, (w.size,) + model.B.shape))
    return model.C @ X + D


def singular_values(M):
    """Descending singular values of a complex matrix (or a stack of them).

    Computed from the real 2m x 2n embedding ``[[Re, -Im], [Im, Re]]`` whose
    singular values are those of ``M``, each repeated twice.
    """
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    re, im = M.real, M.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    emb = np.concatenate([top, bot], axis=-2)
    sv = np.linalg.svd(emb, compute_uv=False)
    return sv[..., ::2]


def sigma_max(M):
    return singular_values(M)[..., 0]


def sigma_min(M):
    return singular_values(M)[..., -1]


def is_stable(model, eps=STAB_EPS):
    if model.n_states == 0:
        return True
    return bool(np.max(np.linalg.eigvals(model.A).real) < -eps)


def _golden_max(f, a, b, tol=1e-10, maxiter=200):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if abs(b - a) < tol * max(1.0, abs(a)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc > fd else (d, fd)


def hinf_norm(model, grid=None):
    """Peak of the largest singular value over ``grid``, refined locally.

    Returns ``(value, peak_omega)``.
    """
    if not is_stable(model):
        raise UnstableModel("H-infinity norm requested for an unstable model")
    grid = grid or FrequencyGrid.default()
    w = grid.omega
    sv = sigma_max(freqresp(model, w))
    k = int(np.argmax(sv))
    lo = math.log(w[max(k - 1, 0)])
    hi = math.log(w[min(k + 1, w.size - 1)])
    best_w, best = w[k], sv[k]
    if hi > lo:
        def f(lw):
            return float(sigma_max(eval_at(model, 1j * math.exp(lw))))
        lw, val = _golden_max(f, lo, hi)
        if val > best:
            best_w, best = math.exp(lw), val
    return float(best), float(best_w)


def step_response(model, u0, t_end, dt):
    """Response to ``u0 * 1(t >= 0)`` from rest, exact zero-order-hold stepping.

    Returns ``(t, y)`` with ``y`` of shape ``(len(t), n_y)``.
    """
    if not is_stable(model):
        raise UnstableModel("step response requested for an unstable model")
    u0 = np.asarray(u0, dtype=float).reshape(model.n_inputs)
    nsteps = int(round(t_end / dt))
    t = np.arange(nsteps + 1) * dt
    if model.n_states == 0:
        return t, np.tile(model.D @ u0, (t.size, 1))
    lam = np.max(np.abs(np.linalg.eigvals(model.A)))
    if lam > 0 and dt >= 0.1 / lam:
        raise ValueError(f"dt={dt:g} too large; need dt < {0.1 / lam:.3g}")
    n, m = model.n_states, model.n_inputs
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = model.A
    aug[:n, n:] = model.B
    E = scipy.linalg.expm(aug * dt)
    Ad, Bd = E[:n, :n], E[:n, n:]
    bu = Bd @ u0
    x = np.zeros(n)
    X = np.empty((t.size, n))
    X[0] = x
    for k in range(1, t.size):
        x = Ad @ x + bu
        X[k] = x
    return t, X @ model.C.T + model.D @ u0


# -- interconnection ----------------------------------------------------------

def append(*parts):
    """Block-diagonal stacking; labels are concatenated."""
    A = scipy.linalg.block_diag(*[p.A for p in parts]) if parts else np.zeros((0, 0))
    nx = sum(p.n_states for p in parts)
    A = np.asarray(A).reshape(nx, nx)
    B = np.zeros((nx, sum(p.n_inputs for p in parts)))
    C = np.zeros((sum(p.n_outputs for p in parts), nx))
    D = np.zeros((C.shape[0], B.shape[1]))
    i = j = k = 0
    for p in parts:
        B[i:i + p.n_states, j:j + p.n_inputs] = p.B
        C[k:k + p.n_outputs, i:i + p.n_states] = p.C
        D[k:k + p.n_outputs, j:j + p.n_inputs] = p.D
        i, j, k = i + p.n_states, j + p.n_inputs, k + p.n_outputs
    ins = sum((p.inputs for p in parts), ())
    outs = sum((p.outputs for p in parts), ())
    if len(set(outs)) != len(outs):
        outs = ()
    return StateSpaceModel(A, B, C, D, ins, outs)


def _close(A, B, C, D, K, E, F):
    """Internal inputs ``u = K y + E r``; outputs ``z = F y``."""
    q = D.shape[0]
    L = np.eye(q) - D @ K
    cond = np.linalg.cond(L) if q else 1.0
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllPosedLoop(f"algebraic loop matrix has cond = {cond:.3g}")
    M = np.linalg.solve(L, np.hstack([C, D @ E])) if q else np.zeros((0, A.shape[0] + E.shape[1]))
    MC, MDE = M[:, :A.shape[0]], M[:, A.shape[0]:]
    Acl = A + B @ K @ MC
    Bcl = B @ (K @ MDE + E)
    return Acl, Bcl, F @ MC, F @ MDE


def interconnect(parts, connections=(), inputs=(), outputs=()):
    """Wire labelled blocks into one model.

    ``connections`` holds ``(dest, src)`` or ``(dest, src, gain)`` entries: the
    part input(s) labelled ``dest`` receive ``gain * src``, where ``src`` is a
    part output label or an external input label.  Part inputs sharing a label
    with an entry of ``inputs`` are driven by that external input.  ``outputs``
    lists part output labels; an entry may also be ``(name, [(src, gain), ...])``
    to emit a weighted sum of part outputs.  Any part input still undriven is
    fed from the part output carrying the same label.
    """
    big = append(*parts)
    in_labels = sum((p.inputs for p in parts), ())
    out_labels = sum((p.outputs for p in parts), ())
    if len(set(out_labels)) != len(out_labels):
        raise ValueError("part output labels must be unique")
    yidx = {name: i for i, name in enumerate(out_labels)}
    ridx = {name: i for i, name in enumerate(inputs)}
    p, q, nr = len(in_labels), len(out_labels), len(inputs)
    K = np.zeros((p, q))
    E = np.zeros((p, nr))
    driven = np.zeros(p, bool)
    for i, lab in enumerate(in_labels):
        if lab in ridx:
            E[i, ridx[lab]] = 1.0
            driven[i] = True
    for conn in connections:
        dest, src = conn[0], conn[1]
        g = conn[2] if len(conn) > 2 else 1.0
        rows = [i for i, lab in enumerate(in_labels) if lab == dest]
        if not rows:
            raise ValueError(f"no part input labelled {dest!r}")
        for i in rows:
            if src in yidx:
                K[i, yidx[src]] += g
            elif src in ridx:
                E[i, ridx[src]] += g
            else:
                raise ValueError(f"unknown signal {src!r}")
            driven[i] = True
    for i, lab in enumerate(in_labels):
        if not driven[i] and lab in yidx:
            K[i, yidx[lab]] = 1.0
            driven[i] = True
    if not np.all(driven):
        missing = sorted({in_labels[i] for i in np.flatnonzero(~driven)})
        raise ValueError(f"undriven part inputs: {missing}")
    F = np.zeros((len(outputs), q))
    names = []
    for k, o in enumerate(outputs):
        if isinstance(o, str):
            F[k, yidx[o]] = 1.0
            names.append(o)
        else:
            name, terms = o
            for src, g in terms:
                F[k, yidx[src]] += g
            names.append(name)
    A, B, C, D = _close(big.A, big.B, big.C, big.D, K, E, F)
    return StateSpaceModel(A, B, C, D, tuple(inputs), tuple(names))


def series(first, second):
    """``second(s) @ first(s)``: the output of ``first`` feeds ``second``."""
    if first.n_outputs != second.n_inputs:
        raise ValueError("series dimension mismatch")
    a = first.relabel([f"r{i}" for i in range(first.n_inputs)],
                      [f"a{i}" for i in range(first.n_outputs)])
    b = second.relabel([f"b_in{i}" for i in range(second.n_inputs)],
                       [f"z{i}" for i in range(second.n_outputs)])
    conns = [(f"b_in{i}", f"a{i}") for i in range(first.n_outputs)]
    m = interconnect([a, b], conns, a.inputs, b.outputs)
    return m.relabel(first.inputs, second.outputs)


def parallel(*parts):
    """Sum of transfer matrices sharing input and output dimensions."""
    ny, nu = parts[0].shape
    if any(p.shape != (ny, nu) for p in parts):
        raise ValueError("parallel dimension mismatch")
    big = append(*[p.relabel(None, None) for p in parts])
    E = np.vstack([np.eye(nu)] * len(parts))
    F = np.hstack([np.eye(ny)] * len(parts))
    K = np.zeros((E.shape[0], F.shape[1]))
    A, B, C, D = _close(big.A, big.B, big.C, big.D, K, E, F)
    return StateSpaceModel(A, B, C, D, parts[0].inputs, parts[0].outputs)


def feedback(forward, back=None, sign=-1.0):
    """Closed loop ``y = forward (r + sign * back y)``; unity feedback if ``back`` is None."""
    ny, nu = forward.shape
    if back is None:
        back = StateSpaceModel.gain(np.eye(ny))
    if back.shape != (nu, ny):
        raise ValueError("feedback dimension mismatch")
    big = append(forward.relabel(None, None), back.relabel(None, None))
    p = nu + ny
    q = ny + nu
    K = np.zeros((p, q))
    K[:nu, ny:] = sign * np.eye(nu)
    K[nu:, :ny] = np.eye(ny)
    E = np.zeros((p, nu))
    E[:nu] = np.eye(nu)
    F = np.zeros((ny, q))
    F[:, :ny] = np.eye(ny)
    A, B, C, D = _close(big.A, big.B, big.C, big.D, K, E, F)
    return StateSpaceModel(A, B, C, D, forward.inputs, forward.outputs)


def scale(model, left=None, right=None):
    """``left @ G(s) @ right`` for constant matrices."""
    L = np.eye(model.n_outputs) if left is None else np.asarray(left, float)
    R = np.eye(model.n_inputs) if right is None else np.asarray(right, float)
    return StateSpaceModel(model.A, model.B @ R, L @ model.C, L @ model.D @ R)


def polynomial_premultiply(model, P0, P1):
    """Proper realization of ``(P0 + s P1) G(s)`` for a strictly proper ``G``.

    Uses ``s C (sI - A)^-1 B = C B + C A (sI - A)^-1 B``.
    """
    P0 = np.asarray(P0, float)
    P1 = np.asarray(P1, float)
    if np.any(model.D != 0) and np.any(P1 != 0):
        raise IllPosedLoop("polynomial premultiplication of a model with feedthrough is improper")
    C = P0 @ model.C + P1 @ model.C @ model.A
    D = P0 @ model.D + P1 @ model.C @ model.B
    return StateSpaceModel(model.A, model.B, C, D)


def inverse(model):
    """Inverse of a square model as ``G^-1(s) = proper(s) + s * deriv``.

    A model with invertible feedthrough has a proper inverse (``deriv = 0``).
    A strictly proper model of relative degree one (``CB`` invertible) has an
    inverse with a derivative term; its proper part is restricted to
    ``ker C``, which removes the uncontrollable zero modes of the construction.
    """
    ny, nu = model.shape
    if ny != nu:
        raise ValueError("inverse needs a square model")
    A, B, C, D = model.A, model.B, model.C, model.D
    condD = np.linalg.cond(D) if nu else 1.0
    if np.isfinite(condD) and condD < COND_LIMIT:
        Di = np.linalg.inv(D)
        prop = StateSpaceModel(A - B @ Di @ C, B @ Di, -Di @ C, Di)
        return prop, np.zeros((nu, nu))
    if np.any(D != 0):
        raise IllPosedLoop("feedthrough is singular but nonzero; "
                           "inverse is not of relative degree one")
    CB = C @ B
    condCB = np.linalg.cond(CB)
    if not np.isfinite(condCB) or condCB > COND_LIMIT:
        raise IllPosedLoop(f"CB has cond = {condCB:.3g}; relative degree exceeds one")
    M = np.linalg.inv(CB)
    Abar = A - B @ M @ C @ A
    Bz = Abar @ B @ M
    Cz = -M @ C @ A
    Dz = -M @ C @ A @ B @ M
    V = scipy.linalg.null_space(C)
    prop = StateSpaceModel(V.T @ Abar @ V, V.T @ Bz, Cz @ V, Dz)
    return prop, M
