"""Road elevation profiles: sinusoid, ISO 8608 class C, and CSV files."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from roadsense.errors import ConfigError, MalformedFile, NonuniformSampling
from roadsense.lti import SignalTrace

ROAD_KINDS = ("sinusoid", "iso_class_c", "from_file")


@dataclass(frozen=True)
class RoadSpec:
    """Road description.

    ``roughness`` is G(n0) in m^3 at reference spatial frequency ``n0``
    (cycles/m); ``band`` bounds the synthesized spatial frequencies.
    """

    kind: str = "sinusoid"
    amplitude: float = 0.015
    frequency: float = 5.0
    seed: int = 0
    velocity: float = 10.0
    duration: float = 10.0
    dt: float = 1e-3
    path: str | None = None
    roughness: float = 256e-6
    n0: float = 0.1
    band: tuple = (0.01, 10.0)

    def __post_init__(self):
        if self.kind not in ROAD_KINDS:
            raise ConfigError(f"unknown road kind {self.kind!r}; expected one of {ROAD_KINDS}")
        if not self.duration > 0 or not self.dt > 0:
            raise ConfigError("duration and dt must be positive")
        if self.amplitude < 0:
            raise ConfigError("amplitude must be non-negative")
        if self.kind == "iso_class_c" and not self.velocity > 0:
            raise ConfigError("velocity must be positive")
        if self.kind == "from_file" and not self.path:
            raise ConfigError("from_file road needs a path")
        object.__setattr__(self, "band", tuple(float(b) for b in self.band))

    @property
    def n_samples(self):
        return int(round(self.duration / self.dt))


def gen_sinusoid(spec):
    t = np.arange(spec.n_samples) * spec.dt
    return SignalTrace(spec.dt, spec.amplitude * np.sin(spec.frequency * t), "z_r")


def iso_psd(n, roughness=256e-6, n0=0.1, waviness=2.0):
    """Displacement PSD G(n) = G(n0) (n / n0)^-w in m^3."""
    return roughness * (np.asarray(n, dtype=float) / n0) ** (-waviness)


def gen_iso_class_c(spec):
    """Random-phase sinusoid superposition on an FFT grid.

    Each spatial frequency ``n_k = k dn`` inside the band gets amplitude
    ``sqrt(2 G(n_k) dn)`` and a phase drawn uniformly from ``[0, 2 pi)``;
    the sum is evaluated with one inverse real FFT and mapped to time through
    the constant velocity.
    """
    n = spec.n_samples
    dx = spec.velocity * spec.dt
    m = 1 << max(1, math.ceil(math.log2(n)))
    dn = 1.0 / (m * dx)
    k = np.arange(m // 2 + 1)
    freqs = k * dn
    rng = np.random.default_rng(spec.seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=k.size)
    lo, hi = spec.band
    inside = (freqs >= lo) & (freqs <= hi) & (k > 0) & (k < m // 2)
    amp = np.zeros(k.size)
    amp[inside] = np.sqrt(2.0 * iso_psd(freqs[inside], spec.roughness, spec.n0) * dn)
    spectrum = amp * np.exp(1j * phases) * (m / 2.0)
    z = np.fft.irfft(spectrum, m)[:n]
    z = z - z[0]
    return SignalTrace(spec.dt, z, "z_r")


def load_road(path):
    """Read a ``t,z_r`` CSV with uniform time spacing."""
    try:
        with open(path) as fh:
            header = fh.readline().strip().replace(" ", "")
            if header != "t,z_r":
                raise MalformedFile(f"{path}: expected header 't,z_r', got {header!r}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except ValueError as exc:
        if isinstance(exc, MalformedFile):
            raise
        raise MalformedFile(f"{path}: {exc}") from exc
    if data.shape[1] != 2:
        raise MalformedFile(f"{path}: expected two columns")
    if data.shape[0] < 2:
        raise MalformedFile(f"{path}: need at least two rows to infer dt")
    if not np.all(np.isfinite(data)):
        raise MalformedFile(f"{path}: non-finite values")
    t = data[:, 0]
    steps = np.diff(t)
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if not dt > 0:
        raise MalformedFile(f"{path}: time must increase")
    if np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise NonuniformSampling(f"{path}: sample spacing varies beyond 1e-6 of dt")
    return SignalTrace(dt, data[:, 1], "z_r")


def save_road(trace, path):
    np.savetxt(
        path, np.column_stack([trace.t, trace.samples]), delimiter=",",
        header="t,z_r", comments="", fmt="%.17g",
    )


def generate(spec):
    if spec.kind == "sinusoid":
        return gen_sinusoid(spec)
    if spec.kind == "iso_class_c":
        return gen_iso_class_c(spec)
    return load_road(spec.path)
