"""Static AC power flow in rectangular coordinates.

Kept deliberately small: a damped Newton iteration with an analytic
Jacobian, enough for desk-scale cases and single-device equilibria.
"""
import numpy as np

from .errors import NoEquilibrium

V_MIN, V_MAX = 0.5, 1.5


def solve_power_flow(Y, kinds, p, q, v, max_iter=50, tol=1e-10):
    """Bus voltages for a network with admittance matrix ``Y`` (complex, N x N).

    ``kinds[i]`` is ``"pq"``, ``"pv"`` or ``"slack"``.  ``p``/``q`` are the
    powers injected into the network; ``v`` holds the voltage magnitude for
    PV buses and the complex voltage for slack buses.  Raises
    :class:`NoEquilibrium` when Newton fails or lands outside
    ``(0.5, 1.5)`` pu.
    """
    Y = np.asarray(Y, complex)
    N = Y.shape[0]
    kinds = list(kinds)
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    v = np.asarray(v, complex)
    free = np.array([k != "slack" for k in kinds])
    V = np.where(free, 1.0 + 0j, v)
    # flat start follows the slack angle so PV/PQ buses start near the solution
    if np.any(~free):
        V[free] = np.abs(V[free]) * np.exp(1j * np.angle(v[~free][0]))
    idx = np.flatnonzero(free)
    pv = np.array([kinds[i] == "pv" for i in idx])

    def residual(V):
        S = V * np.conj(Y @ V)
        r1 = S.real[idx] - p[idx]
        r2 = np.where(pv, np.abs(V[idx]) ** 2 - np.abs(v[idx]) ** 2, S.imag[idx] - q[idx])
        return np.concatenate([r1, r2])

    def jacobian(V):
        I = Y @ V
        # dS_i/de_k and dS_i/df_k
        dSe = np.diag(np.conj(I)) + V[:, None] * np.conj(Y)
        dSf = 1j * np.diag(np.conj(I)) - 1j * V[:, None] * np.conj(Y)
        dSe, dSf = dSe[np.ix_(idx, idx)], dSf[np.ix_(idx, idx)]
        Vi = V[idx]
        dVe = np.diag(2 * Vi.real)
        dVf = np.diag(2 * Vi.imag)
        top = np.hstack([dSe.real, dSf.real])
        bot_q = np.hstack([dSe.imag, dSf.imag])
        bot_v = np.hstack([dVe, dVf])
        bot = np.where(pv[:, None], bot_v, bot_q)
        return np.vstack([top, bot])

    if idx.size == 0:
        return V
    r = residual(V)
    nrm = np.max(np.abs(r))
    for _ in range(max_iter):
        if nrm < tol:
            break
        try:
            dx = np.linalg.solve(jacobian(V), -r)
        except np.linalg.LinAlgError:
            raise NoEquilibrium("singular power-flow Jacobian") from None
        step = 1.0
        while step > 1e-4:
            Vn = V.copy()
            Vn[idx] += step * (dx[:idx.size] + 1j * dx[idx.size:])
            rn = residual(Vn)
            nn = np.max(np.abs(rn))
            if nn < nrm or nn < tol:
                break
            step *= 0.5
        V, r, nrm = Vn, rn, nn
    if not nrm < tol:
        raise NoEquilibrium(f"power flow did not converge (residual {nrm:.3g})")
    mag = np.abs(V[idx])
    if np.any(mag <= V_MIN) or np.any(mag >= V_MAX):
        raise NoEquilibrium("power-flow solution outside the accepted voltage range")
    return V
