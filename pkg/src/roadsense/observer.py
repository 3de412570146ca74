"""Per-vehicle closed loop: baseline PID, Q-filter disturbance observer and
learning-signal injection, plus the loop transfer functions used for
learning-filter design.

Signal conventions (all SI):

* ``e = -z_s`` is the regulation error, ``u_c = C{e}`` the PID command;
* ``w = u_c - d_hat' - d_f`` is the actuator force F_a;
* the road enters as the equivalent input disturbance ``d = delta{z_r}``;
* the observer estimate is ``d_hat' = M{z_s} - Q{w}`` with ``M = Q / P1_nominal``.

The loop is simulated as one continuous LTI system whose external inputs
(road, road velocity, learning signal) are interpolated linearly between
samples. With a strictly proper Q and plant there is no algebraic loop.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from roadsense.errors import DimensionMismatch, ImproperComposition, UnstableLoop
from roadsense.lti import (
    Polynomial,
    SignalTrace,
    TransferFunction,
    as_tf,
    balance,
    discretize,
    lsim,
    realize,
)
from roadsense.vehicle import (
    PidGains,
    VehicleParams,
    characteristic_poly,
    delta,
    plant_p1,
    quarter_car_ss,
    road_velocity,
    unsprung_poly,
)

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class QFilterSpec:
    """Unity-DC low-pass ``1/(s/cutoff + 1)**order``."""

    cutoff: float = 7.5
    order: int = 2

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("Q cutoff must be positive")
        if int(self.order) != self.order or self.order < 2:
            raise ValueError("Q order must be an integer >= 2 (plant relative degree)")


def make_q(spec):
    wc = float(spec.cutoff)
    factor = Polynomial([wc, 1.0])
    den = [factor] * int(spec.order)
    gain = float(np.prod([wc] * int(spec.order)))
    return TransferFunction.from_factors(gain, [], den)


def make_m(nominal_p1, q):
    """Approximate plant inverse ``Q * P1^-1``; must be proper."""
    m = as_tf(q) * as_tf(nominal_p1).inv()
    if not m.is_proper:
        raise ImproperComposition(
            f"Q * P^-1 has relative degree {m.relative_degree}; raise the Q order"
        )
    return m


def pid_tf(gains, deriv_pole):
    """``kp + ki/s + kd*s*p/(s+p)`` with derivative low-pass pole ``p``."""
    p = float(deriv_pole)
    num = Polynomial([gains.ki * p, gains.kp * p + gains.ki, gains.kp + gains.kd * p])
    return TransferFunction.from_factors(1.0, [num], [Polynomial([0.0, 1.0]), Polynomial([p, 1.0])])


@dataclass(frozen=True)
class AgentLoop:
    """One vehicle: true plant, design-time nominal plant, controller and DOB.

    ``deriv_pole`` defaults to ten times the Q cutoff.
    """

    actual: VehicleParams
    nominal: VehicleParams
    pid: PidGains
    q: QFilterSpec = QFilterSpec()
    dt: float = 1e-3
    deriv_pole: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.deriv_pole is None:
            object.__setattr__(self, "deriv_pole", 10.0 * self.q.cutoff)
        poles = np.linalg.eigvals(_closed_loop_matrices(self, True)[0])
        if poles.size and not np.all(poles.real < 0):
            raise UnstableLoop(
                f"closed loop has a pole at {poles[np.argmax(poles.real)]:.4g}"
            )

    @property
    def exact_model(self):
        return self.actual == self.nominal

    def controller(self):
        return pid_tf(self.pid, self.deriv_pole)


# ---------------------------------------------------------------------------
# Loop transfer functions
# ---------------------------------------------------------------------------


def _pieces(loop, use_nominal):
    plant = loop.nominal if use_nominal else loop.actual
    return plant_p1(plant), plant_p1(loop.nominal), make_q(loop.q), loop.controller()


def _structured(loop, use_nominal):
    """Common-denominator polynomials of the loop (see module docs).

    With ``P = n_p/d_p``, ``P_hat = n_h/d_h``, ``Q = g/q`` and ``C = n_c/d_c``
    the closure ``[1 - Q + P(M + C)] * q*n_h*d_p*d_c`` is the characteristic
    polynomial ``phi``.
    """
    plant = loop.nominal if use_nominal else loop.actual
    n_p, d_p = unsprung_poly(plant), characteristic_poly(plant)
    n_h, d_h = unsprung_poly(loop.nominal), characteristic_poly(loop.nominal)
    Q = make_q(loop.q)
    q_factors = list(Q.den_factors)
    q = Q.den
    g = Q.gain
    C = loop.controller()
    n_c = Polynomial([C.gain]) * _prod(C.num_factors)
    dc_factors = list(C.den_factors)
    d_c = _prod(dc_factors)
    q_minus_g = q - Polynomial([g])
    exact = use_nominal or loop.exact_model
    if exact:
        # phi = q * n_h * (d_h d_c + n_h n_c) when the plant equals the model
        phi = q_factors + [n_h, d_h * d_c + n_h * n_c]
    else:
        phi = [q_minus_g * n_h * d_p * d_c + Polynomial([g]) * n_p * d_h * d_c + n_p * n_c * q * n_h]
    return dict(
        n_p=n_p, d_p=d_p, n_h=n_h, d_h=d_h, g=g, q_factors=q_factors,
        q_minus_g=q_minus_g, n_c=n_c, dc_factors=dc_factors, d_c=d_c, phi=phi,
    )


def _prod(factors):
    p = Polynomial([1.0])
    for f in factors:
        p = p * f
    return p


def _closure(P, M, Q, C):
    one = TransferFunction.constant(1.0)
    return one - Q + P * (M + C)


def synth_gd(loop, use_nominal=False, reduce=True):
    """Disturbance to sprung-mass displacement."""
    if not reduce:
        P, Ph, Q, C = _pieces(loop, use_nominal)
        M = make_m(Ph, Q)
        return _closure(P, M, Q, C).inv() * P * (1 - Q)
    k = _structured(loop, use_nominal)
    num = [k["n_p"], k["q_minus_g"], k["n_h"]] + k["dc_factors"]
    return TransferFunction.from_factors(1.0, num, k["phi"])


def synth_gf(loop, use_nominal=False, reduce=True):
    """Learning signal to sprung-mass displacement."""
    if not reduce:
        P, Ph, Q, C = _pieces(loop, use_nominal)
        M = make_m(Ph, Q)
        return _closure(P, M, Q, C).inv() * (-P)
    k = _structured(loop, use_nominal)
    num = [k["n_p"], k["n_h"]] + k["q_factors"] + k["dc_factors"]
    return TransferFunction.from_factors(-1.0, num, k["phi"])


def synth_omega(loop, use_nominal=False, reduce=True):
    """Disturbance to observer estimate d_hat'."""
    if not reduce:
        P, Ph, Q, C = _pieces(loop, use_nominal)
        M = make_m(Ph, Q)
        return _closure(P, M, Q, C).inv() * (M + Q * C) * P
    k = _structured(loop, use_nominal)
    num = [k["n_p"], k["d_h"] * k["d_c"] + k["n_h"] * k["n_c"]]
    return TransferFunction.from_factors(k["g"], num, k["phi"])


def synth_one_minus_omega(loop, use_nominal=False):
    """``1 - Omega`` with its factor ``q - g`` (zero at DC) kept explicit."""
    k = _structured(loop, use_nominal)
    num = [k["q_minus_g"], k["n_h"], k["d_p"] * k["d_c"] + k["n_p"] * k["n_c"]]
    return TransferFunction.from_factors(1.0, num, k["phi"])


def sensitivity(loop, use_nominal=False):
    """``1 / (1 + C P1)``, the reference-to-error map of the baseline loop."""
    P = plant_p1(loop.nominal if use_nominal else loop.actual)
    return (1 + loop.controller() * P).inv()


# ---------------------------------------------------------------------------
# Time-domain simulation
# ---------------------------------------------------------------------------


def _closed_loop_matrices(loop, use_dob):
    """Continuous closed loop with inputs (z_r, dz_r, d_f) and outputs
    (z_s, d, d_hat', w, z_us)."""
    plant = balance(quarter_car_ss(loop.actual))
    ctrl = balance(realize(loop.controller()))
    Q = make_q(loop.q)
    mblk = balance(realize(make_m(plant_p1(loop.nominal), Q)))
    qblk = balance(realize(Q))
    dblk = balance(realize(delta(loop.actual)))
    sizes = [plant.n_states, ctrl.n_states, mblk.n_states, qblk.n_states, dblk.n_states]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    n = int(offs[-1])
    nu = 3

    def sl(i):
        return slice(offs[i], offs[i + 1])

    def sig():
        return np.zeros(n), np.zeros(nu)

    zs_x, zs_u = sig()
    zs_x[sl(0)] = plant.C[0]
    zus_x, zus_u = sig()
    zus_x[sl(0)] = plant.C[1]
    # u_c = C{-z_s}
    uc_x, uc_u = sig()
    uc_x[sl(1)] = ctrl.C[0]
    uc_x -= ctrl.D[0, 0] * zs_x
    # M{z_s}
    m_x, m_u = sig()
    m_x[sl(2)] = mblk.C[0]
    m_x += mblk.D[0, 0] * zs_x
    qw_x, qw_u = sig()
    qw_x[sl(3)] = qblk.C[0]
    if use_dob:
        dh_x, dh_u = m_x - qw_x, m_u - qw_u
    else:
        dh_x, dh_u = sig()
    w_x = uc_x - dh_x
    w_u = uc_u - dh_u
    w_u[2] -= 1.0
    d_x, d_u = sig()
    d_x[sl(4)] = dblk.C[0]
    d_u[0] = dblk.D[0, 0]

    A = np.zeros((n, n))
    B = np.zeros((n, nu))
    # plant: inputs (F_a, z_r, dz_r)
    A[sl(0), sl(0)] += plant.A
    A[sl(0)] += np.outer(plant.B[:, 0], w_x)
    B[sl(0)] += np.outer(plant.B[:, 0], w_u)
    B[sl(0), 0] += plant.B[:, 1]
    B[sl(0), 1] += plant.B[:, 2]
    A[sl(1), sl(1)] += ctrl.A
    A[sl(1)] -= np.outer(ctrl.B[:, 0], zs_x)
    A[sl(2), sl(2)] += mblk.A
    A[sl(2)] += np.outer(mblk.B[:, 0], zs_x)
    A[sl(3), sl(3)] += qblk.A
    A[sl(3)] += np.outer(qblk.B[:, 0], w_x)
    B[sl(3)] += np.outer(qblk.B[:, 0], w_u)
    A[sl(4), sl(4)] += dblk.A
    B[sl(4), 0] += dblk.B[:, 0]

    C = np.vstack([zs_x, d_x, dh_x, w_x, zus_x])
    D = np.vstack([zs_u, d_u, dh_u, w_u, zus_u])
    return A, B, C, D


@functools.lru_cache(maxsize=512)
def _discrete_loop(loop, use_dob):
    from roadsense.lti import StateSpace

    A, B, C, D = _closed_loop_matrices(loop, use_dob)
    return discretize(StateSpace(A, B, C, D), loop.dt, "foh")


@dataclass(frozen=True)
class AgentLog:
    """Sampled traces of one closed-loop run."""

    z_r: SignalTrace
    z_s: SignalTrace
    d: SignalTrace
    d_hat_prime: SignalTrace
    d_f: SignalTrace
    d_hat: SignalTrace
    z_r_hat: SignalTrace
    F_a: SignalTrace

    @property
    def dt(self):
        return self.z_r.dt

    @property
    def e(self):
        return (-self.z_s).relabel("e")

    @property
    def e_d(self):
        return (self.d - self.d_hat).relabel("e_d")

    COLUMNS = ("t", "z_r", "z_s", "d", "d_hat_prime", "d_f", "d_hat", "z_r_hat", "F_a")

    def to_csv(self, path):
        cols = [self.z_r.t] + [getattr(self, c).samples for c in self.COLUMNS[1:]]
        np.savetxt(
            path, np.column_stack(cols), delimiter=",",
            header=",".join(self.COLUMNS), comments="", fmt="%.17g",
        )

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        dt = float(data[1, 0] - data[0, 0])
        traces = {
            name: SignalTrace(dt, data[:, i], name)
            for i, name in enumerate(cls.COLUMNS) if i
        }
        return cls(**traces)


def run_agent(loop, road, learning_signal=None, use_dob=True):
    """Simulate one vehicle over ``road`` with an optional learning signal."""
    if not np.isclose(road.dt, loop.dt, rtol=1e-12, atol=0.0):
        raise DimensionMismatch(f"road dt {road.dt} differs from loop dt {loop.dt}")
    n = len(road)
    if learning_signal is None:
        learning_signal = SignalTrace.zeros(road.dt, n, "d_f")
    if len(learning_signal) != n or not np.isclose(learning_signal.dt, road.dt, rtol=1e-12):
        raise DimensionMismatch("learning signal must match the road trace")
    ss = _discrete_loop(loop, use_dob)
    U = np.column_stack([road.samples, road_velocity(road).samples, learning_signal.samples])
    Y = lsim(ss, U)
    if not np.all(np.isfinite(Y)) or np.max(np.abs(Y), initial=0.0) > DIVERGENCE_LIMIT:
        raise UnstableLoop("closed-loop trace diverged")
    dt = road.dt
    z_s = SignalTrace(dt, Y[:, 0], "z_s")
    d = SignalTrace(dt, Y[:, 1], "d")
    dhp = SignalTrace(dt, Y[:, 2], "d_hat_prime")
    d_f = learning_signal.relabel("d_f")
    d_hat = (dhp + d_f).relabel("d_hat")
    return AgentLog(
        z_r=road.relabel("z_r"),
        z_s=z_s,
        d=d,
        d_hat_prime=dhp,
        d_f=d_f,
        d_hat=d_hat,
        z_r_hat=reconstruct_road(d_hat, loop.nominal),
        F_a=SignalTrace(dt, Y[:, 3], "F_a"),
    )


@functools.lru_cache(maxsize=512)
def _inverse_delta(nominal, dt):
    return discretize(balance(realize(delta(nominal).inv())), dt, "foh")


def reconstruct_road(d_hat, nominal):
    """Map a disturbance estimate back to road elevation through ``delta^-1``."""
    ss = _inverse_delta(nominal, d_hat.dt)
    y = lsim(ss, d_hat.samples)
    return SignalTrace(d_hat.dt, y[:, 0], "z_r_hat")
