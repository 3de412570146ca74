"""Rational transfer-function algebra and sampled LTI simulation.

Polynomials use ascending powers of ``s``: ``Polynomial([a0, a1, a2])`` is
``a0 + a1*s + a2*s**2``. A :class:`TransferFunction` is kept as a gain times a
product of monic numerator factors over a product of monic denominator
factors. Keeping the factors apart lets block-diagram closures cancel exact
common factors (for example the plant in ``Q * P^-1 * P``) without relying on
root finding of large expanded polynomials.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field

import numpy as np
import numpy.polynomial.polynomial as npoly
import scipy.linalg

from roadsense import kernels
from roadsense.errors import (
    DegreeOverflow,
    DimensionMismatch,
    ImproperTransferFunction,
    PoleAtOrigin,
    PoleOnAxis,
    ZeroDenominator,
    ZeroNumerator,
)

MAX_DEGREE = 30
CANCEL_TOL = 1e-9
# coefficients that cancel below this fraction of their addends become exact zeros
_SUM_CANCEL_RTOL = 1e-12

_degree_cap = contextvars.ContextVar("degree_cap", default=MAX_DEGREE)


@contextlib.contextmanager
def degree_cap(limit):
    """Temporarily change the polynomial degree limit in this context."""
    token = _degree_cap.set(int(limit))
    try:
        yield
    finally:
        _degree_cap.reset(token)


# ---------------------------------------------------------------------------
# Polynomial
# ---------------------------------------------------------------------------


class Polynomial:
    """Immutable real polynomial in ``s`` with ascending coefficients."""

    __slots__ = ("_c",)

    def __init__(self, coeffs=()):
        c = np.atleast_1d(np.array(coeffs, dtype=float))
        if c.ndim != 1:
            raise ValueError("coefficients must be one-dimensional")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1].copy() if nz.size else np.zeros(0)
        if c.size - 1 > _degree_cap.get():
            raise DegreeOverflow(
                f"polynomial degree {c.size - 1} exceeds the cap of {_degree_cap.get()}"
            )
        c.setflags(write=False)
        self._c = c

    @property
    def coeffs(self):
        return self._c

    @property
    def degree(self):
        """Index of the last nonzero coefficient; ``-inf`` for the zero polynomial."""
        return self._c.size - 1 if self._c.size else -math.inf

    @property
    def is_zero(self):
        return self._c.size == 0

    @property
    def lead(self):
        return float(self._c[-1]) if self._c.size else 0.0

    def __call__(self, x):
        if self.is_zero:
            return np.zeros_like(np.asarray(x, dtype=complex))
        return npoly.polyval(x, self._c)

    def __mul__(self, other):
        other = _as_poly(other)
        if self.is_zero or other.is_zero:
            return Polynomial()
        return Polynomial(np.convolve(self._c, other._c))

    __rmul__ = __mul__

    def __add__(self, other):
        return poly_add(self, _as_poly(other))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self._c)

    def __sub__(self, other):
        return poly_add(self, -_as_poly(other))

    def __rsub__(self, other):
        return poly_add(_as_poly(other), -self)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._c.shape == other._c.shape and bool(np.all(self._c == other._c))

    def __hash__(self):
        return hash(self._c.tobytes())

    def __repr__(self):
        return f"Polynomial({self._c.tolist()})"

    def roots(self):
        if self.degree < 1:
            return np.zeros(0, dtype=complex)
        return np.asarray(npoly.polyroots(self._c), dtype=complex)

    def monic(self):
        """Return ``(lead, p / lead)``."""
        if self.is_zero:
            raise ZeroDivisionError("zero polynomial has no leading coefficient")
        return self.lead, Polynomial(self._c / self.lead)

    def divmod(self, other):
        q, r = npoly.polydiv(self._c, other._c)
        return Polynomial(q), Polynomial(r)

    def split_origin(self):
        """Return ``(k, rest)`` with ``self = s**k * rest`` and ``rest(0) != 0``."""
        if self.is_zero:
            return 0, self
        k = int(np.flatnonzero(self._c)[0])
        return k, Polynomial(self._c[k:])

    def is_close(self, other, tol=CANCEL_TOL):
        """Coefficient-wise relative comparison of two polynomials."""
        if self._c.size != other._c.size:
            return False
        a, b = self._c, other._c
        scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
        floor = 1e-14 * scale
        diff = np.abs(a - b)
        bound = tol * np.maximum(np.abs(a), np.abs(b))
        return bool(np.all((diff <= bound) | ((np.abs(a) <= floor) & (np.abs(b) <= floor))))


def _as_poly(p):
    if isinstance(p, Polynomial):
        return p
    return Polynomial(p)


def poly_mul(a, b):
    """Product of two polynomials (coefficient convolution)."""
    return _as_poly(a) * _as_poly(b)


def poly_add(a, b):
    """Sum with cancellation cleanup: terms that cancel to round-off become 0."""
    a, b = _as_poly(a), _as_poly(b)
    n = max(a.coeffs.size, b.coeffs.size)
    ca = np.zeros(n)
    cb = np.zeros(n)
    ca[: a.coeffs.size] = a.coeffs
    cb[: b.coeffs.size] = b.coeffs
    c = ca + cb
    c[np.abs(c) <= _SUM_CANCEL_RTOL * (np.abs(ca) + np.abs(cb))] = 0.0
    return Polynomial(c)


S = Polynomial([0.0, 1.0])


# ---------------------------------------------------------------------------
# Transfer functions
# ---------------------------------------------------------------------------


def _normalize_factors(factors):
    """Split factors into monic pieces, pulling ``s`` powers out separately."""
    gain = 1.0
    out = []
    for f in factors:
        f = _as_poly(f)
        if f.is_zero:
            return 0.0, []
        k, rest = f.split_origin()
        out.extend([S] * k)
        if rest.degree >= 1:
            lead, monic = rest.monic()
            gain *= lead
            out.append(monic)
        else:
            gain *= rest.lead
    return gain, out


def _cancel(nf, df, tol):
    nf = list(nf)
    keep_den = []
    for d in df:
        for i, n in enumerate(nf):
            if n.is_close(d, tol):
                del nf[i]
                break
        else:
            keep_den.append(d)
    return nf, keep_den


class TransferFunction:
    """Rational function ``gain * prod(num_factors) / prod(den_factors)``.

    All factors are monic, so the expanded denominator is monic and the gain is
    the leading coefficient of the expanded numerator.
    """

    __slots__ = ("gain", "num_factors", "den_factors")

    def __init__(self, num=1.0, den=1.0):
        num, den = _as_poly(num), _as_poly(den)
        if den.is_zero:
            raise ZeroDenominator("denominator is the zero polynomial")
        g_num, nf = _normalize_factors([num]) if not num.is_zero else (0.0, [])
        g_den, df = _normalize_factors([den])
        self._set(g_num / g_den, nf, df, CANCEL_TOL)

    @classmethod
    def from_factors(cls, gain, num_factors=(), den_factors=(), tol=CANCEL_TOL):
        self = cls.__new__(cls)
        g_num, nf = _normalize_factors(num_factors)
        g_den, df = _normalize_factors(den_factors)
        if g_den == 0.0:
            raise ZeroDenominator("denominator factor is the zero polynomial")
        self._set(gain * g_num / g_den, nf, df, tol)
        return self

    @classmethod
    def constant(cls, k):
        return cls.from_factors(float(k))

    def _set(self, gain, nf, df, tol):
        if gain == 0.0:
            nf, df = [], []
        else:
            nf, df = _cancel(nf, df, tol)
        self.gain = float(gain)
        self.num_factors = tuple(nf)
        self.den_factors = tuple(df)

    # -- expanded views -----------------------------------------------------

    @property
    def num(self):
        if self.gain == 0.0:
            return Polynomial()
        p = Polynomial([self.gain])
        for f in self.num_factors:
            p = p * f
        return p

    @property
    def den(self):
        p = Polynomial([1.0])
        for f in self.den_factors:
            p = p * f
        return p

    @property
    def is_zero(self):
        return self.gain == 0.0

    @property
    def num_degree(self):
        return sum(f.degree for f in self.num_factors) if not self.is_zero else -math.inf

    @property
    def den_degree(self):
        return sum(f.degree for f in self.den_factors)

    @property
    def relative_degree(self):
        if self.is_zero:
            return math.inf
        return self.den_degree - self.num_degree

    @property
    def is_proper(self):
        return self.relative_degree >= 0

    def zeros(self):
        if not self.num_factors:
            return np.zeros(0, dtype=complex)
        return np.concatenate([f.roots() for f in self.num_factors])

    def poles(self):
        if not self.den_factors:
            return np.zeros(0, dtype=complex)
        return np.concatenate([f.roots() for f in self.den_factors])

    # -- evaluation -----------------------------------------------------------

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        out = np.full(s.shape, self.gain, dtype=complex)
        for f in self.num_factors:
            out = out * f(s)
        for f in self.den_factors:
            out = out / f(s)
        return out

    def den_value(self, s):
        s = np.asarray(s, dtype=complex)
        out = np.ones(s.shape, dtype=complex)
        for f in self.den_factors:
            out = out * f(s)
        return out

    # -- algebra --------------------------------------------------------------

    def __mul__(self, other):
        other = as_tf(other)
        return TransferFunction.from_factors(
            self.gain * other.gain,
            self.num_factors + other.num_factors,
            self.den_factors + other.den_factors,
        )

    __rmul__ = __mul__

    def inv(self):
        if self.is_zero:
            raise ZeroNumerator("cannot invert a zero transfer function")
        return TransferFunction.from_factors(
            1.0 / self.gain, self.den_factors, self.num_factors
        )

    def __truediv__(self, other):
        return self * as_tf(other).inv()

    def __rtruediv__(self, other):
        return as_tf(other) * self.inv()

    def __neg__(self):
        return TransferFunction.from_factors(-self.gain, self.num_factors, self.den_factors)

    def __add__(self, other):
        return _tf_add(self, as_tf(other), CANCEL_TOL)

    __radd__ = __add__

    def __sub__(self, other):
        return _tf_add(self, -as_tf(other), CANCEL_TOL)

    def __rsub__(self, other):
        return _tf_add(as_tf(other), -self, CANCEL_TOL)

    def __repr__(self):
        return f"TransferFunction(num={self.num.coeffs.tolist()}, den={self.den.coeffs.tolist()})"

    def minreal(self, tol=CANCEL_TOL, max_factor_degree=12):
        """Cancel numerator/denominator roots closer than ``tol`` (relative)."""
        if self.is_zero:
            return self
        nf = [(f, f.roots()) for f in self.num_factors]
        df = [(f, f.roots()) for f in self.den_factors]
        changed = False
        for i, (_, zr) in enumerate(nf):
            if zr.size > max_factor_degree:
                continue
            zr = list(zr)
            for j, (_, pr) in enumerate(df):
                if pr.size > max_factor_degree or not zr:
                    continue
                pr = list(pr)
                for z in list(zr):
                    for k, p in enumerate(pr):
                        if abs(z - p) <= tol * max(abs(p), abs(z), 1e-300):
                            zr.remove(z)
                            del pr[k]
                            changed = True
                            break
                df[j] = (df[j][0], np.asarray(pr, dtype=complex))
            nf[i] = (nf[i][0], np.asarray(zr, dtype=complex))
        if not changed:
            return self
        num = [_from_roots(r) for _, r in nf]
        den = [_from_roots(r) for _, r in df]
        return TransferFunction.from_factors(self.gain, num, den)

    def allclose(self, other, omega, rtol=1e-8):
        a = self(1j * np.asarray(omega))
        b = as_tf(other)(1j * np.asarray(omega))
        return bool(np.all(np.abs(a - b) <= rtol * np.maximum(np.abs(a), np.abs(b)) + 1e-300))


def _from_roots(r):
    if len(r) == 0:
        return Polynomial([1.0])
    return Polynomial(np.real(npoly.polyfromroots(r)))


def as_tf(x):
    if isinstance(x, TransferFunction):
        return x
    if isinstance(x, Polynomial):
        return TransferFunction(x, 1.0)
    return TransferFunction.constant(float(x))


def _match_multiset(a, b, tol):
    """Split lists a, b into (common, only_a, only_b) by structural equality."""
    only_b = list(b)
    common, only_a = [], []
    for f in a:
        for i, g in enumerate(only_b):
            if f.is_close(g, tol):
                common.append(f)
                del only_b[i]
                break
        else:
            only_a.append(f)
    return common, only_a, only_b


def _expand(gain, factors):
    p = Polynomial([gain])
    for f in factors:
        p = p * f
    return p


def _tf_add(a, b, tol):
    if a.is_zero:
        return b
    if b.is_zero:
        return a
    common_den, only_a, only_b = _match_multiset(a.den_factors, b.den_factors, tol)
    lcm = common_den + only_a + only_b
    na = list(a.num_factors) + only_b
    nb = list(b.num_factors) + only_a
    common_num, ra, rb = _match_multiset(na, nb, tol)
    total = poly_add(_expand(a.gain, ra), _expand(b.gain, rb))
    if total.is_zero:
        return TransferFunction.constant(0.0)
    return TransferFunction.from_factors(1.0, common_num + [total], lcm, tol)


def tf_combine(a, b, mode, tol=CANCEL_TOL):
    """Block-diagram closure of two transfer functions.

    ``series`` is ``a*b``, ``parallel`` is ``a+b`` and ``feedback`` is
    ``a/(1+a*b)`` (negative feedback through ``b``). The result is reduced by
    exact factor cancellation followed by root cancellation within ``tol``.
    """
    a, b = as_tf(a), as_tf(b)
    if mode == "series":
        out = a * b
    elif mode == "parallel":
        out = _tf_add(a, b, tol)
    elif mode == "feedback":
        closure = _tf_add(TransferFunction.constant(1.0), a * b, tol)
        if closure.is_zero:
            raise ZeroDenominator("feedback closure 1 + a*b is identically zero")
        out = a / closure
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out.minreal(tol)


def tf_inverse(a):
    return as_tf(a).inv()


def dc_gain(a):
    a = as_tf(a)
    den0 = complex(a.den_value(0.0))
    if den0 == 0:
        raise PoleAtOrigin("transfer function has a pole at s = 0")
    return float(np.real(a(0.0)))


def freq_response(a, omega, tol=1e-12):
    """Complex response ``a(i*omega)``; raises PoleOnAxis near imaginary-axis poles."""
    a = as_tf(a)
    omega = np.asarray(omega, dtype=float)
    s = 1j * omega
    den = a.den_value(s)
    scale = np.ones(omega.shape)
    for f in a.den_factors:
        scale = scale * npoly.polyval(np.abs(omega), np.abs(f.coeffs))
    if np.any(np.abs(den) <= tol * scale):
        raise PoleOnAxis("pole on the imaginary axis at a requested frequency")
    out = a(s)
    return out if out.ndim else complex(out)


def bode_data(a, omega):
    """Return (omega, magnitude_db, phase_deg) arrays."""
    h = np.atleast_1d(freq_response(a, omega))
    mag = 20.0 * np.log10(np.abs(h))
    phase = np.degrees(np.unwrap(np.angle(h)))
    return np.asarray(omega, dtype=float), mag, phase


def write_bode_csv(a, omega, path):
    w, mag, ph = bode_data(a, omega)
    np.savetxt(
        path,
        np.column_stack([w, mag, ph]),
        delimiter=",",
        header="omega_rad_s,magnitude_db,phase_deg",
        comments="",
        fmt="%.17g",
    )


# ---------------------------------------------------------------------------
# State space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateSpace:
    """``x' = A x + B u, y = C x + D u`` (continuous when ``dt`` is None).

    Discrete systems produced by first-order-hold discretization carry
    ``input_shift`` E: their state is ``x - E u``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float | None = None
    input_shift: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n)
        B = np.asarray(self.B, dtype=float).reshape(n, -1) if n else np.asarray(self.B, dtype=float)
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        p, m = D.shape
        B = B.reshape(n, m)
        C = np.asarray(self.C, dtype=float).reshape(p, n)
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.D.shape[1]

    @property
    def n_outputs(self):
        return self.D.shape[0]

    def frequency_response(self, omega):
        """SISO continuous response C (sI - A)^-1 B + D at ``i*omega``."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        n = self.n_states
        out = np.empty(omega.shape, dtype=complex)
        for k, w in enumerate(omega):
            if n:
                x = np.linalg.solve(1j * w * np.eye(n) - self.A, self.B[:, 0])
                out[k] = self.C[0] @ x + self.D[0, 0]
            else:
                out[k] = self.D[0, 0]
        return out


def realize(a):
    """Controllable-canonical realization of a proper transfer function."""
    a = as_tf(a)
    if not a.is_proper:
        raise ImproperTransferFunction(
            f"relative degree {a.relative_degree} < 0 cannot be realized"
        )
    den = a.den.coeffs
    n = den.size - 1
    b = np.zeros(n + 1)
    num = a.num.coeffs
    b[: num.size] = num
    d = b[n]
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d]])
    r = b[:n] - d * den[:n]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[:n]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    return StateSpace(A, B, r.reshape(1, n), [[d]])


def balance(ss):
    """Diagonal similarity transform that equilibrates A (outputs unchanged)."""
    if ss.n_states == 0:
        return ss
    _, (scale, perm) = scipy.linalg.matrix_balance(ss.A, permute=False, separate=True)
    T = np.diag(scale)
    Ti = np.diag(1.0 / scale)
    return StateSpace(Ti @ ss.A @ T, Ti @ ss.B, ss.C @ T, ss.D, ss.dt)


def discretize(ss, dt, method="zoh"):
    """Sampled-data equivalent of a continuous system.

    ``zoh`` holds inputs between samples, ``foh`` interpolates them linearly
    (triangle hold) and ``tustin`` applies the bilinear map.
    """
    if ss.dt is not None:
        raise ValueError("system is already discrete")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n, m = ss.n_states, ss.n_inputs
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    if n == 0:
        return StateSpace(A, B, C, D, dt)
    if method == "zoh":
        M = np.zeros((n + m, n + m))
        M[:n, :n] = A * dt
        M[:n, n:] = B * dt
        E = scipy.linalg.expm(M)
        return StateSpace(E[:n, :n], E[:n, n:], C, D, dt)
    if method == "foh":
        M = np.zeros((n + 2 * m, n + 2 * m))
        M[:n, :n] = A * dt
        M[:n, n : n + m] = B * dt
        M[n : n + m, n + m :] = np.eye(m)
        E = scipy.linalg.expm(M)
        Phi = E[:n, :n]
        G1 = E[:n, n : n + m]
        G2 = E[:n, n + m :]
        Bd = G1 + Phi @ G2 - G2
        return StateSpace(Phi, Bd, C, D + C @ G2, dt, input_shift=G2)
    if method == "tustin":
        I = np.eye(n)
        Minv = np.linalg.inv(I - A * dt / 2.0)
        Ad = Minv @ (I + A * dt / 2.0)
        Bd = Minv @ B * dt
        Cd = C @ Minv
        Dd = D + C @ Minv @ B * dt / 2.0
        return StateSpace(Ad, Bd, Cd, Dd, dt)
    raise ValueError(f"unknown discretization method {method!r}")


def lsim(ss, U, x0=None, backend=None):
    """Simulate a discrete system on an input array of shape (N, m)."""
    if ss.dt is None:
        raise ValueError("lsim needs a discrete system")
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[1] != ss.n_inputs:
        raise DimensionMismatch(f"expected {ss.n_inputs} inputs, got {U.shape[1]}")
    n = ss.n_states
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    if ss.input_shift is not None and U.shape[0]:
        x0 = x0 - ss.input_shift @ U[0]
    X = kernels.state_recursion(ss.A, U @ ss.B.T, x0, backend=backend)
    return X @ ss.C.T + U @ ss.D.T


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalTrace:
    """Uniformly sampled real signal."""

    dt: float
    samples: np.ndarray
    label: str = ""

    def __post_init__(self):
        x = np.array(self.samples, dtype=float).reshape(-1)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"trace {self.label!r} has non-finite samples")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self):
        return self.samples.size

    @property
    def t(self):
        return np.arange(self.samples.size) * self.dt

    @property
    def duration(self):
        return self.samples.size * self.dt

    def relabel(self, label):
        return SignalTrace(self.dt, self.samples, label)

    def _check(self, other):
        if not np.isclose(self.dt, other.dt, rtol=1e-12, atol=0.0) or len(self) != len(other):
            raise DimensionMismatch("traces differ in dt or length")

    def __add__(self, other):
        if isinstance(other, SignalTrace):
            self._check(other)
            return SignalTrace(self.dt, self.samples + other.samples, self.label)
        return SignalTrace(self.dt, self.samples + other, self.label)

    def __sub__(self, other):
        if isinstance(other, SignalTrace):
            self._check(other)
            return SignalTrace(self.dt, self.samples - other.samples, self.label)
        return SignalTrace(self.dt, self.samples - other, self.label)

    def __mul__(self, k):
        return SignalTrace(self.dt, self.samples * float(k), self.label)

    __rmul__ = __mul__

    def __neg__(self):
        return SignalTrace(self.dt, -self.samples, self.label)

    @classmethod
    def zeros(cls, dt, n, label=""):
        return cls(dt, np.zeros(n), label)


def simulate_lti(ss, u, x0=None):
    """Drive a discrete SISO system with a trace; returns a trace of equal length."""
    if ss.dt is None:
        raise ValueError("simulate_lti needs a discrete system")
    if not np.isclose(u.dt, ss.dt, rtol=1e-12, atol=0.0):
        raise DimensionMismatch(f"input dt {u.dt} differs from system dt {ss.dt}")
    if ss.n_inputs != 1 or ss.n_outputs != 1:
        raise DimensionMismatch("simulate_lti handles SISO systems")
    y = lsim(ss, u.samples, x0)
    return SignalTrace(u.dt, y[:, 0], u.label)


def filter_trace(tf, u, method="foh"):
    """Causal response of a proper transfer function to a trace, from rest."""
    ss = discretize(balance(realize(tf)), u.dt, method)
    return simulate_lti(ss, u)
