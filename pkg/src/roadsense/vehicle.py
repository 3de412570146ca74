"""Linear quarter-car model: plant transfer functions and ODE simulation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from roadsense.errors import DimensionMismatch
from roadsense.lti import (
    Polynomial,
    SignalTrace,
    StateSpace,
    TransferFunction,
    balance,
    discretize,
    lsim,
)


@dataclass(frozen=True)
class VehicleParams:
    """Quarter-car constants in SI units (kg, N/m, N*s/m)."""

    m_s: float
    m_us: float
    k_s: float
    k_us: float
    c_s: float
    c_us: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")
        roots = characteristic_poly(self).roots()
        if not np.all(roots.real < 0):
            raise ValueError("quarter-car characteristic polynomial is not Hurwitz")

    def scaled(self, factors):
        """Parameter-wise product with a mapping or sequence of six factors."""
        if isinstance(factors, dict):
            return VehicleParams(**{k: v * factors[k] for k, v in asdict(self).items()})
        return VehicleParams(*(v * f for v, f in zip(asdict(self).values(), factors)))

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        gains = (self.kp, self.ki, self.kd)
        if any(g < 0 for g in gains) or not any(g > 0 for g in gains):
            raise ValueError("PID gains must be non-negative with at least one positive")

    def as_dict(self):
        return asdict(self)


def characteristic_poly(p):
    """Quartic shared by the denominators of both plant transfer functions."""
    return Polynomial(
        [
            p.k_s * p.k_us,
            p.c_s * p.k_us + p.c_us * p.k_s,
            p.k_s * p.m_s + p.k_s * p.m_us + p.k_us * p.m_s + p.c_s * p.c_us,
            p.c_s * p.m_s + p.c_s * p.m_us + p.c_us * p.m_s,
            p.m_s * p.m_us,
        ]
    )


def unsprung_poly(p):
    return Polynomial([p.k_us, p.c_us, p.m_us])


def road_coupling_polys(p):
    return Polynomial([p.k_s, p.c_s]), Polynomial([p.k_us, p.c_us])


def plant_p1(p):
    """Actuator force to sprung-mass displacement, z_s / F_a."""
    return TransferFunction.from_factors(1.0, [unsprung_poly(p)], [characteristic_poly(p)])


def plant_p2(p):
    """Road velocity to sprung-mass displacement, z_s / (dz_r/dt)."""
    a, b = road_coupling_polys(p)
    return TransferFunction.from_factors(1.0, [a, b], [Polynomial([0.0, 1.0]), characteristic_poly(p)])


def delta(p):
    """Road-to-equivalent-input-disturbance map in closed form.

    Equals ``s * P1^-1 * P2``; the quartic and the integrator cancel, leaving
    a biproper filter with DC gain ``k_s``.
    """
    a, b = road_coupling_polys(p)
    return TransferFunction.from_factors(1.0, [a, b], [unsprung_poly(p)])


def delta_literal(p):
    """``s * P1^-1 * P2`` composed without using the closed form."""
    s = TransferFunction([0.0, 1.0], [1.0])
    return s * plant_p1(p).inv() * plant_p2(p)


def quarter_car_ss(p):
    """Continuous model with states (z_s, z_s', z_us, z_us').

    Inputs are (F_a, z_r, z_r'); outputs are (z_s, z_us).
    """
    m_s, m_us, k_s, k_us, c_s, c_us = p.m_s, p.m_us, p.k_s, p.k_us, p.c_s, p.c_us
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [-k_s / m_s, -c_s / m_s, k_s / m_s, c_s / m_s],
            [0.0, 0.0, 0.0, 1.0],
            [k_s / m_us, c_s / m_us, -(k_s + k_us) / m_us, -(c_s + c_us) / m_us],
        ]
    )
    B = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0 / m_s, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [-1.0 / m_us, k_us / m_us, c_us / m_us],
        ]
    )
    C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    return StateSpace(A, B, C, np.zeros((2, 3)))


def road_velocity(road):
    """Central difference of a sampled road (one-sided at the two ends)."""
    if len(road) < 2:
        raise DimensionMismatch("need at least two samples to differentiate")
    return SignalTrace(road.dt, np.gradient(road.samples, road.dt), "dz_r")


def simulate_plant(p, force, road, method="foh"):
    """Integrate the quarter car from rest; returns (z_s, z_us) traces."""
    if len(force) != len(road) or not np.isclose(force.dt, road.dt, rtol=1e-12, atol=0.0):
        raise DimensionMismatch("force and road traces must share dt and length")
    ss = discretize(balance(quarter_car_ss(p)), road.dt, method)
    U = np.column_stack([force.samples, road.samples, road_velocity(road).samples])
    Y = lsim(ss, U)
    return SignalTrace(road.dt, Y[:, 0], "z_s"), SignalTrace(road.dt, Y[:, 1], "z_us")


def fastest_pole(p):
    return float(np.max(np.abs(characteristic_poly(p).roots())))
