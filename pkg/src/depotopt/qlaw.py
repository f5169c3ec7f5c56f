"""
Lyapunov feedback guidance for low-thrust orbit transfers.

The controller steers the five slow equinoctial elements (a, f, g, h, k)
toward a target set by picking, at every step, the in-plane/out-of-plane
thrust angles that minimize the time derivative of a proximity quotient Q.
Propagation is RK4 on the Gauss variational equations with zero-order-hold
control angles and thrust always on; the period-fraction step tapers
deterministically on final approach so the convergence crossing is clean.

Hot paths are numba-compiled; all kernels are pure and deterministic
(no fastmath, fixed summation order), so repeated runs are bit-identical.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .elements import (G0, SEC_PER_DAY, KeplerianElements, MeeAState,
                       UnitSystem, kep_to_mee)

__all__ = [
    "QlawParams", "Spacecraft", "TransferResult", "QlawStateError",
    "vop_matrices", "max_rates", "lyapunov_q", "q_partials",
    "control_angles", "propagate_transfer",
]

# packed parameter vector layout for the numba kernels
_QP_LEN = 11  # [w_a, w_f, w_g, w_h, w_k, w_p, k_rp, r_p_min, sigma, nu, zeta]

_STATUS_CONVERGED = 1
_STATUS_MAX_TOF = 0
_STATUS_BAD_STATE = -1
_STATUS_MASS_FLOOR = -2

_MASS_FLOOR_KG = 1e-6


class QlawStateError(RuntimeError):
    """Raised when propagation drives the state outside its validity domain."""


@dataclass(frozen=True)
class QlawParams:
    """Controller weights, scaling coefficients, and integration settings.

    Args:
        r_p_min: minimum periapsis radius (DU) for the exponential barrier
        w_oe: weights on the five slow elements (a, f, g, h, k)
        w_p: weight on the periapsis penalty term
        sigma, nu, zeta: semimajor-axis scaling coefficients
        k_rp: barrier gradient constant
        tol: convergence tolerances (relative on a, absolute on f, g, h, k)
        max_tof_days: give-up horizon for a single transfer
        dt_frac: integration step as a fraction of the osculating period
    """
    r_p_min: float
    w_oe: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    w_p: float = 1.0
    sigma: float = 3.0
    nu: float = 4.0
    zeta: float = 2.0
    k_rp: float = 1.0
    tol: tuple = (1e-3, 1e-3, 1e-3, 1e-3, 1e-3)
    max_tof_days: float = 300.0
    dt_frac: float = 0.01

    def __post_init__(self):
        if len(self.w_oe) != 5 or any(w < 0.0 for w in self.w_oe):
            raise ValueError("w_oe must be five nonnegative weights")
        if self.w_p < 0.0 or self.k_rp < 0.0:
            raise ValueError("w_p and k_rp must be nonnegative")
        if self.r_p_min <= 0.0:
            raise ValueError("r_p_min must be positive")
        if self.nu < 1.0 or self.zeta <= 0.0 or self.sigma <= 0.0:
            raise ValueError("invalid (sigma, nu, zeta) scaling coefficients")
        if len(self.tol) != 5 or any(t <= 0.0 for t in self.tol):
            raise ValueError("tol must be five positive tolerances")
        if self.max_tof_days <= 0.0:
            raise ValueError("max_tof_days must be positive")
        if not 0.0 < self.dt_frac <= 0.05:
            raise ValueError("dt_frac must be in (0, 0.05]")

    def packed(self) -> np.ndarray:
        """Flat float64 vector consumed by the numba kernels."""
        return np.array([*self.w_oe, self.w_p, self.k_rp, self.r_p_min,
                         self.sigma, self.nu, self.zeta])

    def tol_array(self) -> np.ndarray:
        return np.asarray(self.tol, dtype=np.float64)


@dataclass(frozen=True)
class Spacecraft:
    """Thruster and mass state of the vehicle flying a transfer."""
    thrust_n: float
    isp_s: float
    mass_kg: float

    def __post_init__(self):
        if self.thrust_n <= 0.0 or self.isp_s <= 0.0 or self.mass_kg <= 0.0:
            raise ValueError("thrust, isp, and mass must be positive")

    @property
    def mdot_kg_s(self) -> float:
        """Propellant mass flow rate, T / (g0 Isp)."""
        return self.thrust_n / (G0 * self.isp_s)


@dataclass
class TransferResult:
    """Outcome of one element-targeting transfer."""
    tof_days: float
    dm_kg: float
    converged: bool
    q_start: float
    q_end: float
    n_steps: int
    qdot_positive_updates: int
    q_history: np.ndarray
    trace: Optional[np.ndarray] = None  # rows: t_days, a, f, g, h, k, L, mass_kg, Q


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _vop_b(x, mu, B):
    """Fill the 6x3 rate matrix (columns: radial, tangential, normal)."""
    a, f, g, h, k, L = x[0], x[1], x[2], x[3], x[4], x[5]
    sl = math.sin(L)
    cl = math.cos(L)
    p = a * (1.0 - f * f - g * g)
    w = 1.0 + f * cl + g * sl
    s2 = 1.0 + h * h + k * k
    ham = math.sqrt(mu * p)
    sq = math.sqrt(p / mu)
    hk = h * sl - k * cl

    B[0, 0] = (2.0 * a * a / ham) * (f * sl - g * cl)  # e sin(ta)
    B[0, 1] = (2.0 * a * a / ham) * w
    B[0, 2] = 0.0
    B[1, 0] = sq * sl
    B[1, 1] = sq * ((w + 1.0) * cl + f) / w
    B[1, 2] = -sq * g * hk / w
    B[2, 0] = -sq * cl
    B[2, 1] = sq * ((w + 1.0) * sl + g) / w
    B[2, 2] = sq * f * hk / w
    B[3, 0] = 0.0
    B[3, 1] = 0.0
    B[3, 2] = sq * s2 * cl / (2.0 * w)
    B[4, 0] = 0.0
    B[4, 1] = 0.0
    B[4, 2] = sq * s2 * sl / (2.0 * w)
    B[5, 0] = 0.0
    B[5, 1] = 0.0
    B[5, 2] = sq * hk / w
    return w


@njit(cache=True, nogil=True)
def _dl_kepler(x, mu):
    """Unforced true-longitude rate sqrt(mu p) (w/p)^2."""
    a, f, g = x[0], x[1], x[2]
    p = a * (1.0 - f * f - g * g)
    w = 1.0 + f * math.cos(x[5]) + g * math.sin(x[5])
    return math.sqrt(mu * p) * (w / p) ** 2


@njit(cache=True, nogil=True)
def _max_rates_kernel(x, accel, mu, rates):
    """Best-case rates of change of (a, f, g, h, k) over thrust direction
    and position along the osculating orbit."""
    a, f, g, h, k = x[0], x[1], x[2], x[3], x[4]
    e = math.sqrt(f * f + g * g)
    p = a * (1.0 - e * e)
    s2 = 1.0 + h * h + k * k
    sq = math.sqrt(p / mu)
    dh = math.sqrt(1.0 - g * g) + f
    dk = math.sqrt(1.0 - f * f) + g
    if dh <= 0.0 or dk <= 0.0:
        return False
    rates[0] = 2.0 * accel * a * math.sqrt(a / mu) * math.sqrt((1.0 + e) / (1.0 - e))
    rates[1] = 2.0 * accel * sq
    rates[2] = 2.0 * accel * sq
    rates[3] = 0.5 * accel * sq * s2 / dh
    rates[4] = 0.5 * accel * sq * s2 / dk
    return True


@njit(cache=True, nogil=True)
def _rate_partials(x, accel, mu, rates, dr):
    """Rates plus the 5x5 Jacobian d(rate_i)/d(oe_j), oe = (a, f, g, h, k)."""
    ok = _max_rates_kernel(x, accel, mu, rates)
    if not ok:
        return False
    a, f, g, h, k = x[0], x[1], x[2], x[3], x[4]
    e2 = f * f + g * g
    e = math.sqrt(e2)
    p = a * (1.0 - e2)
    s2 = 1.0 + h * h + k * k
    dh = math.sqrt(1.0 - g * g) + f
    dk = math.sqrt(1.0 - f * f) + g
    # d e / d(f, g); the eccentricity norm has a kink at e = 0
    if e > 1e-14:
        de_df = f / e
        de_dg = g / e
    else:
        de_df = 0.0
        de_dg = 0.0

    for i in range(5):
        for j in range(5):
            dr[i, j] = 0.0

    # a-rate: log-derivatives 3/(2a) in a and 1/(1-e^2) in e
    dr[0, 0] = rates[0] * 1.5 / a
    dr[0, 1] = rates[0] / (1.0 - e2) * de_df
    dr[0, 2] = rates[0] / (1.0 - e2) * de_dg
    # f- and g-rates: depend on p only
    for i in range(1, 3):
        dr[i, 0] = rates[i] * 0.5 / a
        dr[i, 1] = -rates[i] * a * f / p
        dr[i, 2] = -rates[i] * a * g / p
    # h-rate
    dr[3, 0] = rates[3] * 0.5 / a
    dr[3, 1] = rates[3] * (-a * f / p - 1.0 / dh)
    dr[3, 2] = rates[3] * (-a * g / p + g / (math.sqrt(1.0 - g * g) * dh))
    dr[3, 3] = rates[3] * 2.0 * h / s2
    dr[3, 4] = rates[3] * 2.0 * k / s2
    # k-rate
    dr[4, 0] = rates[4] * 0.5 / a
    dr[4, 1] = rates[4] * (-a * f / p + f / (math.sqrt(1.0 - f * f) * dk))
    dr[4, 2] = rates[4] * (-a * g / p - 1.0 / dk)
    dr[4, 3] = rates[4] * 2.0 * h / s2
    dr[4, 4] = rates[4] * 2.0 * k / s2
    return True


@njit(cache=True, nogil=True)
def _q_value(x, target, accel, mu, qp):
    """Proximity quotient Q = (1 + W_p P) sum S W ((oe - oe_T)/rate_max)^2."""
    w_a, w_f, w_g, w_h, w_k = qp[0], qp[1], qp[2], qp[3], qp[4]
    w_p, k_rp, r_p_min = qp[5], qp[6], qp[7]
    sigma, nu, zeta = qp[8], qp[9], qp[10]
    a, f, g = x[0], x[1], x[2]
    e = math.sqrt(f * f + g * g)

    rates = np.empty(5)
    ok = _max_rates_kernel(x, accel, mu, rates)
    if not ok:
        return np.nan

    rp = a * (1.0 - e)
    pen = math.exp(k_rp * (1.0 - rp / r_p_min))
    u = abs(a - target[0]) / (sigma * target[0])
    s_a = (1.0 + u ** nu) ** (1.0 / zeta)

    acc = 0.0
    ws = (w_a, w_f, w_g, w_h, w_k)
    for i in range(5):
        d = (x[i] - target[i]) / rates[i]
        s = s_a if i == 0 else 1.0
        acc += s * ws[i] * d * d
    return (1.0 + w_p * pen) * acc


@njit(cache=True, nogil=True)
def _q_gradient(x, target, accel, mu, qp, dq):
    """Analytic dQ/d(oe) for oe = (a, f, g, h, k). Returns Q."""
    w_a, w_f, w_g, w_h, w_k = qp[0], qp[1], qp[2], qp[3], qp[4]
    w_p, k_rp, r_p_min = qp[5], qp[6], qp[7]
    sigma, nu, zeta = qp[8], qp[9], qp[10]
    a, f, g = x[0], x[1], x[2]
    e2 = f * f + g * g
    e = math.sqrt(e2)

    rates = np.empty(5)
    dr = np.empty((5, 5))
    ok = _rate_partials(x, accel, mu, rates, dr)
    if not ok:
        for j in range(5):
            dq[j] = np.nan
        return np.nan

    rp = a * (1.0 - e)
    pen = math.exp(k_rp * (1.0 - rp / r_p_min))
    if e > 1e-14:
        de_df = f / e
        de_dg = g / e
    else:
        de_df = 0.0
        de_dg = 0.0
    # d(rp)/d(oe)
    drp = (1.0 - e, -a * de_df, -a * de_dg, 0.0, 0.0)

    u = abs(a - target[0]) / (sigma * target[0])
    s_a = (1.0 + u ** nu) ** (1.0 / zeta)
    # dS_a/da; u^(nu-1) -> 0 at u = 0 since nu > 1
    sgn = 1.0 if a >= target[0] else -1.0
    dsa_da = ((nu / zeta) * (1.0 + u ** nu) ** (1.0 / zeta - 1.0)
              * u ** (nu - 1.0) * sgn / (sigma * target[0]))

    ws = (w_a, w_f, w_g, w_h, w_k)
    d = np.empty(5)
    big_g = 0.0
    for i in range(5):
        d[i] = (x[i] - target[i]) / rates[i]
        s = s_a if i == 0 else 1.0
        big_g += s * ws[i] * d[i] * d[i]

    for j in range(5):
        acc = 0.0
        for i in range(5):
            delta = 1.0 if i == j else 0.0
            dd = (delta - d[i] * dr[i, j]) / rates[i]
            s = s_a if i == 0 else 1.0
            acc += s * ws[i] * 2.0 * d[i] * dd
        if j == 0:
            acc += dsa_da * w_a * d[0] * d[0]
        dpen = -pen * k_rp / r_p_min * drp[j]
        dq[j] = w_p * dpen * big_g + (1.0 + w_p * pen) * acc
    return (1.0 + w_p * pen) * big_g


@njit(cache=True, nogil=True)
def _control_kernel(x, target, accel, mu, qp):
    """Optimal thrust angles and the Q rate they achieve.

    Returns (alpha, beta, qdot, d1, d2, d3) where d1/d2/d3 contract dQ/d(oe)
    with the tangential/radial/normal columns of the rate matrix.
    """
    dq = np.empty(5)
    _q_gradient(x, target, accel, mu, qp, dq)
    B = np.empty((6, 3))
    _vop_b(x, mu, B)
    d1 = 0.0
    d2 = 0.0
    d3 = 0.0
    for i in range(5):
        d2 += dq[i] * B[i, 0]
        d1 += dq[i] * B[i, 1]
        d3 += dq[i] * B[i, 2]
    rho = math.sqrt(d1 * d1 + d2 * d2)
    if rho == 0.0 and d3 == 0.0:
        return 0.0, 0.0, 0.0, d1, d2, d3
    alpha = math.atan2(-d2, -d1)
    beta = math.atan2(-d3, rho)
    qdot = (d1 * math.cos(beta) * math.cos(alpha)
            + d2 * math.cos(beta) * math.sin(alpha)
            + d3 * math.sin(beta))
    return alpha, beta, qdot, d1, d2, d3


@njit(cache=True, nogil=True)
def _rhs(x, m, alpha, beta, thrust_can, mu, B, out):
    """Element and mass rates under thrust direction (alpha, beta)."""
    w = _vop_b(x, mu, B)
    accel = thrust_can / m
    fr = accel * math.cos(beta) * math.sin(alpha)
    ft = accel * math.cos(beta) * math.cos(alpha)
    fn = accel * math.sin(beta)
    for i in range(6):
        out[i] = B[i, 0] * fr + B[i, 1] * ft + B[i, 2] * fn
    out[5] += _dl_kepler(x, mu)
    return w


@njit(cache=True, nogil=True)
def _state_valid(x):
    if not (x[0] > 1e-12):
        return False
    if x[1] * x[1] + x[2] * x[2] >= 1.0 - 1e-12:
        return False
    return True


@njit(cache=True, nogil=True)
def _tolerance_margin(err, target_a, tol, qp):
    """Largest element error as a multiple of its tolerance (<= 1 means
    converged); relative on a, absolute otherwise. Zero-weight elements are
    not targeted."""
    worst = 0.0
    if qp[0] > 0.0:
        worst = abs(err[0]) / target_a / tol[0]
    for i in range(1, 5):
        if qp[i] > 0.0:
            m = abs(err[i]) / tol[i]
            if m > worst:
                worst = m
    return worst


@njit(cache=True, nogil=True)
def _propagate_kernel(x0, m0, target, qp, tol, mu, thrust_can, mdot_tu,
                      dt_frac, t_max, rec, rec_stride):
    """RK4 with zero-order-hold control angles and a tapered terminal step.

    rec: preallocated (n, 9) buffer recording t, elements, mass, Q every
    rec_stride steps (stride <= 0 disables). Returns
    (status, t, m, q_start, q_end, steps, qdot_violations, n_rec).
    """
    x = x0.copy()
    m = m0
    t = 0.0
    steps = 0
    qdot_pos = 0
    n_rec = 0
    q_start = np.nan
    q = np.nan

    B = np.empty((6, 3))
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    xt = np.empty(6)

    # Thrust is always on, so the osculating elements carry a forced
    # oscillation that never settles; convergence is judged on the mean
    # orbit instead, tracked as an exponential average of the element
    # errors with a one-revolution time constant. The average crosses the
    # tolerance box transversally, which keeps the transfer time a smooth
    # function of the start mass.
    err_avg = np.empty(5)
    for i in range(5):
        err_avg[i] = x[i] - target[i]

    while True:
        if not _state_valid(x):
            return _STATUS_BAD_STATE, t, m, q_start, q, steps, qdot_pos, n_rec
        q = _q_value(x, target, thrust_can / m, mu, qp)
        if math.isnan(q):
            return _STATUS_BAD_STATE, t, m, q_start, q, steps, qdot_pos, n_rec
        if steps == 0:
            q_start = q
        if rec_stride > 0 and steps % rec_stride == 0:
            if n_rec < rec.shape[0]:
                rec[n_rec, 0] = t
                for i in range(6):
                    rec[n_rec, 1 + i] = x[i]
                rec[n_rec, 7] = m
                rec[n_rec, 8] = q
                n_rec += 1
        margin = _tolerance_margin(err_avg, target[0], tol, qp)
        done = _STATUS_CONVERGED if margin <= 1.0 else -9
        if done == -9 and t >= t_max * (1.0 - 1e-15):
            done = _STATUS_MAX_TOF
        if done != -9:
            # make sure the terminal state is in the trace
            if (rec_stride > 0 and steps % rec_stride != 0
                    and n_rec < rec.shape[0]):
                rec[n_rec, 0] = t
                for i in range(6):
                    rec[n_rec, 1 + i] = x[i]
                rec[n_rec, 7] = m
                rec[n_rec, 8] = q
                n_rec += 1
            return done, t, m, q_start, q, steps, qdot_pos, n_rec

        alpha, beta, qdot, d1, d2, d3 = _control_kernel(
            x, target, thrust_can / m, mu, qp)
        if qdot > 1e-13:
            qdot_pos += 1

        dt = dt_frac * 2.0 * math.pi * math.sqrt(x[0] ** 3 / mu)
        # taper the step on final approach so the per-step element change
        # is well below the tolerance box: the crossing time then varies
        # smoothly with the start mass, which the round-trip cost solver
        # relies on
        if margin < 8.0:
            scale = margin / 8.0
            if scale < 0.0625:
                scale = 0.0625
            dt *= scale
        if t + dt > t_max:
            dt = t_max - t

        # RK4 on the 6 elements; mass depletes linearly so the substage
        # masses are exact
        _rhs(x, m, alpha, beta, thrust_can, mu, B, k1)
        mh = m - 0.5 * dt * mdot_tu
        for i in range(6):
            xt[i] = x[i] + 0.5 * dt * k1[i]
        _rhs(xt, mh, alpha, beta, thrust_can, mu, B, k2)
        for i in range(6):
            xt[i] = x[i] + 0.5 * dt * k2[i]
        _rhs(xt, mh, alpha, beta, thrust_can, mu, B, k3)
        mf = m - dt * mdot_tu
        for i in range(6):
            xt[i] = x[i] + dt * k3[i]
        _rhs(xt, mf, alpha, beta, thrust_can, mu, B, k4)
        for i in range(6):
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        m = mf
        t += dt
        steps += 1
        tau = 2.0 * math.pi * math.sqrt(x[0] ** 3 / mu)
        blend = dt / tau
        if blend > 1.0:
            blend = 1.0
        for i in range(5):
            err_avg[i] += blend * ((x[i] - target[i]) - err_avg[i])
        if m <= _MASS_FLOOR_KG:
            return _STATUS_MASS_FLOOR, t, m, q_start, q, steps, qdot_pos, n_rec


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def vop_matrices(mee: MeeAState, mu: float = 1.0):
    """Gauss variational-equation matrices for the equinoctial-with-a set.

    Returns:
        (B, D): B is 6x3 with columns ordered (radial, tangential, normal);
        D is the unforced drift, nonzero only in the true-longitude row.
    """
    x = mee.as_array()
    B = np.empty((6, 3))
    w = _vop_b(x, mu, B)
    if w <= 0.0:
        raise QlawStateError(f"singular state, w = {w}")
    D = np.zeros(6)
    D[5] = _dl_kepler(x, mu)
    return B, D


def max_rates(mee: MeeAState, accel: float, mu: float = 1.0) -> np.ndarray:
    """Maximum achievable rates of (a, f, g, h, k) at acceleration `accel`."""
    if accel <= 0.0:
        raise ValueError("accel must be positive")
    rates = np.empty(5)
    ok = _max_rates_kernel(mee.as_array(), accel, mu, rates)
    if not ok:
        raise ValueError("state outside rate-expression validity domain")
    return rates


def lyapunov_q(mee: MeeAState, target: np.ndarray, params: QlawParams,
               accel: float, mu: float = 1.0) -> float:
    """Evaluate the proximity quotient Q against a 5-element target."""
    q = _q_value(mee.as_array(), np.asarray(target, dtype=np.float64),
                 accel, mu, params.packed())
    if math.isnan(q):
        raise ValueError("state outside rate-expression validity domain")
    return q


def q_partials(mee: MeeAState, target: np.ndarray, params: QlawParams,
               accel: float, mu: float = 1.0) -> np.ndarray:
    """Analytic dQ/d(oe) for the five slow elements."""
    dq = np.empty(5)
    _q_gradient(mee.as_array(), np.asarray(target, dtype=np.float64),
                accel, mu, params.packed(), dq)
    if np.any(np.isnan(dq)):
        raise ValueError("state outside rate-expression validity domain")
    return dq


def control_angles(mee: MeeAState, target: np.ndarray, params: QlawParams,
                   sc: Spacecraft, units: UnitSystem, mu: float = 1.0):
    """Optimal thrust angles (alpha in-plane, beta out-of-plane) and qdot.

    qdot is the directional derivative of Q along the commanded thrust
    direction per unit acceleration; it is <= 0 by construction and zero
    only at a stationary point (where alpha = beta = 0 is returned).
    """
    accel = units.accel_to_canonical(sc.thrust_n / sc.mass_kg)
    alpha, beta, qdot, _, _, _ = _control_kernel(
        mee.as_array(), np.asarray(target, dtype=np.float64),
        accel, mu, params.packed())
    return alpha, beta, qdot


def propagate_transfer(start: KeplerianElements, target: KeplerianElements,
                       sc: Spacecraft, params: QlawParams, units: UnitSystem,
                       record: bool = False) -> TransferResult:
    """Fly a transfer from `start` to `target` elements under Q-law guidance.

    Thrust is always on; the run ends either converged (all weighted element
    errors within params.tol) or unconverged at params.max_tof_days. Identical
    inputs produce bit-identical results.

    Args:
        record: keep a full sampled trace (t_days, elements, mass, Q) in
            the result for export/plotting.

    Raises:
        QlawStateError: the propagated state left its validity domain
            (eccentricity >= 1, nonpositive a, or mass depleted).
    """
    x0 = kep_to_mee(start).as_array()
    tgt = kep_to_mee(target).as_array()[:5]
    mu = 1.0

    thrust_can = units.accel_to_canonical(sc.thrust_n)  # per kg of mass
    mdot = sc.mdot_kg_s
    mdot_tu = mdot * units.tu_s
    t_max = units.days_to_tu(params.max_tof_days)

    # worst-case step count from the smaller of the two semimajor axes,
    # halved again for transient dips below both
    a_min = 0.5 * min(start.a, target.a)
    dt_min = params.dt_frac * 2.0 * math.pi * math.sqrt(a_min ** 3 / mu)
    est_steps = int(t_max / dt_min) + 2
    if record:
        stride = max(1, est_steps // 20000 + 1)
        rec = np.empty((est_steps // stride + 4, 9))
    else:
        stride = max(1, est_steps // 2000 + 1)
        rec = np.empty((est_steps // stride + 4, 9))

    status, t, m, q_start, q_end, steps, qdot_pos, n_rec = _propagate_kernel(
        x0, sc.mass_kg, tgt, params.packed(), params.tol_array(), mu,
        thrust_can, mdot_tu, params.dt_frac, t_max, rec, stride)

    if status == _STATUS_BAD_STATE:
        raise QlawStateError(
            f"state left validity domain after {units.tu_to_days(t):.3f} days "
            f"({steps} steps, mass {m:.1f} kg)")
    if status == _STATUS_MASS_FLOOR:
        raise QlawStateError(
            f"mass depleted after {units.tu_to_days(t):.3f} days "
            f"({steps} steps)")

    rec = rec[:n_rec]
    trace = None
    if record:
        trace = rec.copy()
        trace[:, 0] = trace[:, 0] * units.tu_s / SEC_PER_DAY
    return TransferResult(
        tof_days=units.tu_to_days(t),
        dm_kg=sc.mass_kg - m,
        converged=(status == _STATUS_CONVERGED),
        q_start=q_start,
        q_end=q_end,
        n_steps=steps,
        qdot_positive_updates=qdot_pos,
        q_history=rec[:, 8].copy(),
        trace=trace,
    )


def write_trace_csv(path, trace: np.ndarray):
    """Write a propagation trace as t_days,a,f,g,h,k,L,mass_kg,Q."""
    header = "t_days,a,f,g,h,k,L,mass_kg,Q"
    np.savetxt(path, trace, delimiter=",", header=header, comments="",
               fmt="%.17g")
