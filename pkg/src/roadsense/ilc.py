"""Cascaded learning across vehicles: filter synthesis, offline application
and contraction diagnostics.

Vehicle ``j`` receives the predecessor's error trace ``e_{j-1}`` and learning
signal ``d_{f,j-1}`` and forms

    d_{f,j} = L1{e_{j-1}} + L2{d_{f,j-1}}

with

    L1 = Gd_{j-1}^-1 [alpha (1 - Omega_{j-1}) - eta (1 - Omega_j)]
    L2 = alpha + L1 Gf_{j-1}

where every loop quantity is built from nominal models only and
``eta = k_s,j / k_s,j-1`` is the static approximation of ``delta_j/delta_{j-1}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from roadsense.errors import DimensionMismatch, PoleOnAxis, UnstableInverse
from roadsense.lti import (
    Polynomial,
    SignalTrace,
    TransferFunction,
    as_tf,
    dc_gain,
    degree_cap,
    filter_trace,
)
from roadsense.observer import (
    AgentLoop,
    QFilterSpec,
    synth_gd,
    synth_gf,
    synth_one_minus_omega,
)
from roadsense.vehicle import PidGains, VehicleParams, delta

DIAGNOSTIC_BAND = (0.1, 20.0)
DEFAULT_ROLLOFF_ORDER = 8


@dataclass(frozen=True)
class LearningFilters:
    l1: TransferFunction
    l2: TransferFunction
    alpha: float
    eta: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")

    def to_json(self):
        """Coefficient lists in ascending powers of s."""

        def coeffs(tf):
            return {"num": tf.num.coeffs.tolist(), "den": tf.den.coeffs.tolist()}

        return json.dumps(
            {"alpha": self.alpha, "eta": self.eta, "l1": coeffs(self.l1), "l2": coeffs(self.l2)},
            indent=2,
        )


@dataclass(frozen=True)
class SharedRecord:
    """What a vehicle publishes for its successor."""

    agent_index: int
    e_trace: SignalTrace
    df_trace: SignalTrace
    nominal: VehicleParams
    pid: PidGains
    q: QFilterSpec = field(default_factory=QFilterSpec)
    deriv_pole: float | None = None

    def __post_init__(self):
        if len(self.e_trace) != len(self.df_trace) or not np.isclose(
            self.e_trace.dt, self.df_trace.dt, rtol=1e-12, atol=0.0
        ):
            raise DimensionMismatch("error and learning traces must share dt and length")

    @property
    def dt(self):
        return self.e_trace.dt

    def nominal_loop(self):
        return nominal_loop(self.nominal, self.pid, self.q, self.dt, self.deriv_pole)


def nominal_loop(nominal, pid, q=QFilterSpec(), dt=1e-3, deriv_pole=None):
    """Design-time loop in which the plant equals the nominal model."""
    return AgentLoop(nominal, nominal, pid, q, dt, deriv_pole)


def _as_nominal_loop(loop):
    if loop.exact_model:
        return loop
    return nominal_loop(loop.nominal, loop.pid, loop.q, loop.dt, loop.deriv_pole)


def compute_eta(nominal_j, nominal_prev):
    """Static-gain approximation of ``delta_j / delta_{j-1}``."""
    return dc_gain(delta(nominal_j)) / dc_gain(delta(nominal_prev))


def synth_l1(prev, current, alpha, eta=None):
    """Error filter. ``current`` contributes its nominal model only."""
    prev_loop = prev.nominal_loop()
    cur_loop = _as_nominal_loop(current)
    if eta is None:
        eta = compute_eta(cur_loop.nominal, prev_loop.nominal)
    bracket = alpha * synth_one_minus_omega(prev_loop, True) - eta * synth_one_minus_omega(cur_loop, True)
    if bracket.num.is_zero:
        return TransferFunction.constant(0.0)
    return synth_gd(prev_loop, True).inv() * bracket


def synth_l2(l1, prev, alpha):
    """Learning-signal filter ``alpha + L1 * Gf_{j-1}``."""
    return as_tf(alpha) + as_tf(l1) * synth_gf(prev.nominal_loop(), True)


def design_filters(prev, current, alpha):
    cur_loop = _as_nominal_loop(current)
    eta = compute_eta(cur_loop.nominal, prev.nominal)
    l1 = synth_l1(prev, cur_loop, alpha, eta)
    return LearningFilters(l1, synth_l2(l1, prev, alpha), alpha, eta)


def rolloff(omega, cutoff, order=DEFAULT_ROLLOFF_ORDER):
    """Zero-phase Butterworth magnitude used to tame improper filters."""
    return 1.0 / np.sqrt(1.0 + (np.asarray(omega, dtype=float) / cutoff) ** (2 * order))


def split_improper(f):
    """Write ``f = poly(s) + r(s)`` with ``r`` strictly proper."""
    f = as_tf(f)
    if f.is_zero:
        return Polynomial(), f
    quo, rem = f.num.divmod(f.den)
    remainder = (
        TransferFunction.from_factors(1.0, [rem], f.den_factors)
        if not rem.is_zero
        else TransferFunction.constant(0.0)
    )
    return quo, remainder


def apply_filter_offline(f, x, cutoff=None, order=DEFAULT_ROLLOFF_ORDER):
    """Apply ``f`` to a recorded trace, rolled off above ``cutoff``.

    ``f`` is split into a polynomial part and a strictly proper remainder.
    The remainder is simulated causally from rest, which keeps integrators
    consistent with how the closed loop produced the trace. The polynomial
    part is applied on the FFT grid of the zero-padded trace (power-of-two
    length, at least twice the trace), and the sum is multiplied by the
    zero-phase rolloff before transforming back. With ``cutoff=None`` no
    rolloff is applied. The result is linear in ``x``.
    """
    f = as_tf(f)
    if not np.all(np.isfinite(x.samples)):
        raise ValueError("trace must be finite")
    poles = f.poles()
    if poles.size:
        if np.any(poles.real > 1e-12 * np.maximum(np.abs(poles), 1.0)):
            raise UnstableInverse("filter has right-half-plane poles")
        p = poles[np.abs(poles) > 1e-12]
        if np.any(np.abs(p.real) <= 1e-9 * np.abs(p)):
            raise PoleOnAxis("filter has poles on the imaginary axis")

    poly, remainder = split_improper(f)
    tail = None if remainder.is_zero else filter_trace(remainder, x).samples
    if poly.degree <= 0 and cutoff is None:
        y = (poly.coeffs[0] if not poly.is_zero else 0.0) * x.samples
        return SignalTrace(x.dt, y if tail is None else y + tail, x.label)

    n = len(x)
    nfft = 1 << int(np.ceil(np.log2(max(2 * n, 2))))
    omega = 2.0 * np.pi * np.fft.rfftfreq(nfft, x.dt)
    Y = np.fft.rfft(x.samples, nfft) * poly(1j * omega) if not poly.is_zero else 0.0
    if tail is not None:
        Y = Y + np.fft.rfft(tail, nfft)
    if cutoff is not None:
        Y = Y * rolloff(omega, cutoff, order)
    y = np.fft.irfft(Y, nfft)[:n]
    return SignalTrace(x.dt, y, x.label)


def make_learning_signal(filters, prev, like=None, cutoff=None, order=DEFAULT_ROLLOFF_ORDER):
    """``L1{e_{j-1}} + L2{d_{f,j-1}}``; zero for the first vehicle.

    ``like`` supplies dt and length when there is no predecessor.
    """
    if prev is None:
        if like is None:
            raise ValueError("first vehicle needs a template trace for dt and length")
        return SignalTrace.zeros(like.dt, len(like), "d_f")
    if cutoff is None:
        cutoff = prev.q.cutoff
    a = apply_filter_offline(filters.l1, prev.e_trace, cutoff, order)
    b = apply_filter_offline(filters.l2, prev.df_trace, cutoff, order)
    return (a + b).relabel("d_f")


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContractionReport:
    """Band sweep of the recursion operators (complex responses)."""

    omega: np.ndarray
    te1: np.ndarray
    te2: np.ndarray
    alpha: float

    @property
    def te1_dev(self):
        return np.abs(self.te1 - self.alpha)

    @property
    def max_te1_dev(self):
        return float(np.max(self.te1_dev))

    @property
    def max_te1(self):
        return float(np.max(np.abs(self.te1)))

    @property
    def max_te2(self):
        return float(np.max(np.abs(self.te2)))

    def to_csv(self, path):
        np.savetxt(
            path,
            np.column_stack([self.omega, self.te1_dev, np.abs(self.te2)]),
            delimiter=",",
            header="omega,abs_te1_minus_alpha,abs_te2",
            comments="",
            fmt="%.17g",
        )


def _loop_operators(loop, use_actual):
    nominal = not use_actual
    return dict(
        gd=synth_gd(loop, nominal),
        gf=synth_gf(loop, nominal),
        one_minus_omega=synth_one_minus_omega(loop, nominal),
        delta=delta(loop.actual if use_actual else loop.nominal),
    )


def contraction_diagnostics(prev_loop, cur_loop, filters, use_actual=False, omega=None):
    """Error-recursion operators ``T_e1`` (on ``e_{d,j-1}``) and ``T_e2`` (on
    ``d_{f,j-1}``) and their deviation from the ideal ``(alpha, 0)`` on a band.

    ``use_actual`` selects the true plants for the unhatted loop quantities;
    the learning filters always come from nominal models.
    """
    if omega is None:
        omega = np.logspace(np.log10(DIAGNOSTIC_BAND[0]), np.log10(DIAGNOSTIC_BAND[1]), 200)
    omega = np.asarray(omega, dtype=float)
    a = _loop_operators(prev_loop, use_actual)
    b = _loop_operators(cur_loop, use_actual)
    s = 1j * omega
    resp = {}
    for tag, ops in (("prev", a), ("cur", b)):
        for name, tf in ops.items():
            resp[tag, name] = tf(s)
    l1 = filters.l1(s)
    l2 = filters.l2(s)
    te1 = (
        resp["cur", "one_minus_omega"] / resp["prev", "one_minus_omega"]
        * resp["cur", "delta"] / resp["prev", "delta"]
        + l1 * resp["prev", "gd"] / resp["prev", "one_minus_omega"]
    )
    te2 = te1 - l2 + l1 * resp["prev", "gf"]
    report = ContractionReport(omega, te1, te2, filters.alpha)
    with degree_cap(200):
        Te1 = b["one_minus_omega"] / a["one_minus_omega"] * b["delta"] / a["delta"] + (
            filters.l1 * a["gd"] / a["one_minus_omega"]
        )
        Te2 = Te1 - filters.l2 + filters.l1 * a["gf"]
    return Te1, Te2, report
