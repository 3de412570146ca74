"""Heterogeneous fleet construction, cascaded learning runs and the shared
record store."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from roadsense import ilc
from roadsense.errors import ConfigError, CorruptRecord, MissingRecord, UnstableLoop
from roadsense.lti import SignalTrace
from roadsense.observer import AgentLoop, QFilterSpec, run_agent
from roadsense.report import rmse
from roadsense.vehicle import PidGains, VehicleParams, fastest_pole

PARAM_NAMES = ("m_s", "m_us", "k_s", "k_us", "c_s", "c_us")


@dataclass(frozen=True)
class FleetConfig:
    """Experiment settings.

    ``rolloff_cutoff`` defaults to twice the Q cutoff. ``literal_cus`` reads
    the nominal tire damping as ``5 + 7*beta*j`` instead of ``5 + beta*j``.
    """

    n_agents: int = 90
    beta: float = 1.0 / 15.0
    uncertainty_bound: float = 0.10
    alpha: float = 0.5
    q_spec: QFilterSpec = field(default_factory=QFilterSpec)
    dt: float = 1e-3
    order_seed: int = 0
    uncertainty_seed: int = 0
    learning_enabled: bool = True
    use_dob: bool = True
    shuffle: bool = True
    duration: float = 10.0
    rmse_skip: float = 0.5
    rolloff_cutoff: float | None = None
    rolloff_order: int = 4
    literal_cus: bool = False

    def __post_init__(self):
        if int(self.n_agents) != self.n_agents or self.n_agents < 1:
            raise ConfigError("n_agents must be a positive integer")
        if not 0.0 <= self.uncertainty_bound < 1.0:
            raise ConfigError("uncertainty_bound must lie in [0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.dt > 0 or not self.duration > 0:
            raise ConfigError("dt and duration must be positive")
        if not 0 <= self.rmse_skip < self.duration:
            raise ConfigError("rmse_skip must be shorter than the run")
        if isinstance(self.q_spec, dict):
            object.__setattr__(self, "q_spec", QFilterSpec(**self.q_spec))

    @property
    def effective_rolloff(self):
        return self.rolloff_cutoff if self.rolloff_cutoff is not None else 2.0 * self.q_spec.cutoff

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["q_spec"] = dataclasses.asdict(self.q_spec)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown fleet config keys: {sorted(unknown)}")
        data = dict(data)
        if "q_spec" in data:
            q = data["q_spec"]
            if not isinstance(q, QFilterSpec):
                extra = set(q) - {"cutoff", "order"}
                if extra:
                    raise ConfigError(f"unknown q_spec keys: {sorted(extra)}")
                data["q_spec"] = QFilterSpec(**q)
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class AgentSpec:
    position: int
    j: int
    actual: VehicleParams
    nominal: VehicleParams
    pid: PidGains
    factors: tuple = ()


def table_row(j, beta=1.0 / 15.0):
    """Actual parameters and PID gains for index multiplier ``j``."""
    b = beta * j
    params = VehicleParams(
        m_s=2.45 + b, m_us=1.0 + b, k_s=950.0 + 100.0 * b,
        k_us=1250.0 + 100.0 * b, c_s=7.5 + b, c_us=5.0 + b,
    )
    return params, PidGains(kp=1500.0 + 30.0 * b, ki=200.0 + b, kd=500.0 + 15.0 * b)


def build_fleet(cfg):
    """Shuffled index multipliers, actual rows and perturbed nominal models."""
    js = np.arange(1, cfg.n_agents + 1)
    if cfg.shuffle:
        js = np.random.default_rng(cfg.order_seed).permutation(js)
    b = cfg.uncertainty_bound
    draws = np.random.default_rng(cfg.uncertainty_seed).uniform(1.0 - b, 1.0 + b, size=(cfg.n_agents, 6))
    if b == 0.0:
        draws = np.ones_like(draws)
    fleet = []
    for pos, (j, f) in enumerate(zip(js, draws), start=1):
        actual, pid = table_row(int(j), cfg.beta)
        nominal = actual.scaled(f)
        if cfg.literal_cus:
            nominal = dataclasses.replace(nominal, c_us=(5.0 + 7.0 * cfg.beta * j) * f[5])
        rate = fastest_pole(actual) / (2.0 * np.pi)
        if 1.0 / cfg.dt < 100.0 * rate:
            raise ConfigError(
                f"dt={cfg.dt} is too coarse for agent j={j}: fastest mode {rate:.3g} Hz"
            )
        fleet.append(AgentSpec(pos, int(j), actual, nominal, pid, tuple(float(x) for x in f)))
    return fleet


# ---------------------------------------------------------------------------
# Record store
# ---------------------------------------------------------------------------


def _record_payload(rec):
    return {
        "agent_index": int(rec.agent_index),
        "dt": rec.e_trace.dt,
        "e": rec.e_trace.samples.tolist(),
        "d_f": rec.df_trace.samples.tolist(),
        "nominal": rec.nominal.as_dict(),
        "pid": rec.pid.as_dict(),
        "q": dataclasses.asdict(rec.q),
        "deriv_pole": rec.deriv_pole,
    }


def _checksum(payload):
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _record_from_payload(p):
    return ilc.SharedRecord(
        agent_index=p["agent_index"],
        e_trace=SignalTrace(p["dt"], np.asarray(p["e"], dtype=float), "e"),
        df_trace=SignalTrace(p["dt"], np.asarray(p["d_f"], dtype=float), "d_f"),
        nominal=VehicleParams(**p["nominal"]),
        pid=PidGains(**p["pid"]),
        q=QFilterSpec(**p["q"]),
        deriv_pole=p["deriv_pole"],
    )


class RecordStore:
    """Shared records, one JSON file per cascade position.

    With ``root=None`` records live in memory only.
    """

    def __init__(self, root=None, run_id="run"):
        self.run_id = run_id
        self.dir = None if root is None else Path(root) / run_id
        self._mem = {}
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, position):
        return self.dir / f"agent_{position}.json"

    def put(self, position, record):
        payload = _record_payload(record)
        doc = {"position": position, "payload": payload, "checksum": _checksum(payload)}
        if self.dir is None:
            if position in self._mem:
                raise FileExistsError(f"record {position} already written")
            self._mem[position] = doc
            return
        path = self._path(position)
        if path.exists():
            raise FileExistsError(f"record {path} already written")
        path.write_text(json.dumps(doc))

    def _load(self, position):
        if self.dir is None:
            if position not in self._mem:
                raise MissingRecord(f"no record for position {position}")
            return self._mem[position]
        path = self._path(position)
        if not path.exists():
            raise MissingRecord(f"no record for position {position} in {self.dir}")
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"{path}: {exc}") from exc

    def get(self, position):
        doc = self._load(position)
        try:
            payload = doc["payload"]
            ok = _checksum(payload) == doc["checksum"]
        except (KeyError, TypeError) as exc:
            raise CorruptRecord(f"record {position} is malformed") from exc
        if not ok:
            raise CorruptRecord(f"checksum mismatch for record {position}")
        return _record_from_payload(payload)

    def predecessor(self, position):
        """Record of ``position - 1``; None for the first vehicle."""
        if position <= 1:
            return None
        return self.get(position - 1)

    def list(self):
        if self.dir is None:
            positions = sorted(self._mem)
        else:
            positions = sorted(int(p.stem.split("_")[1]) for p in self.dir.glob("agent_*.json"))
        return [self.get(p) for p in positions]


# ---------------------------------------------------------------------------
# Cascade
# ---------------------------------------------------------------------------


@dataclass
class FleetResults:
    config: FleetConfig
    fleet: list
    logs: list
    rmse_mm: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def learning_signals(self):
        return [log.d_f for log in self.logs]

    @property
    def error_norms(self):
        """L2 norm of the disturbance-estimation error per agent."""
        return np.array([np.linalg.norm(log.e_d.samples) for log in self.logs])

    def summary_rows(self):
        return [
            (spec.position, spec.j, float(r), bool(self.config.learning_enabled))
            for spec, r in zip(self.fleet, self.rmse_mm)
        ]

    def write_summary(self, path):
        lines = ["position,j,rmse_mm,learning_enabled"]
        for pos, j, r, learn in self.summary_rows():
            lines.append(f"{pos},{j},{r!r},{str(learn).lower()}")
        Path(path).write_text("\n".join(lines) + "\n")


def run_cascade(cfg, fleet, road, store=None, on_agent=None):
    """Run vehicles in order, each learning from its predecessor's record."""
    if not fleet:
        raise ValueError("fleet is empty")
    store = store if store is not None else RecordStore()
    started = time.perf_counter()
    logs, errors = [], []
    for spec in fleet:
        try:
            loop = AgentLoop(spec.actual, spec.nominal, spec.pid, cfg.q_spec, cfg.dt)
            prev = store.predecessor(spec.position)
            if cfg.learning_enabled and prev is not None:
                design_loop = ilc.nominal_loop(spec.nominal, spec.pid, cfg.q_spec, cfg.dt)
                filters = ilc.design_filters(prev, design_loop, cfg.alpha)
                d_f = ilc.make_learning_signal(
                    filters, prev, cutoff=cfg.effective_rolloff, order=cfg.rolloff_order
                )
            else:
                d_f = SignalTrace.zeros(road.dt, len(road), "d_f")
            log = run_agent(loop, road, d_f, use_dob=cfg.use_dob)
        except UnstableLoop as exc:
            raise UnstableLoop(f"agent at position {spec.position}: {exc}", spec.position) from exc
        store.put(
            spec.position,
            ilc.SharedRecord(spec.position, log.e, log.d_f, spec.nominal, spec.pid, cfg.q_spec, loop.deriv_pole),
        )
        logs.append(log)
        errors.append(rmse(log.z_r_hat, log.z_r, cfg.rmse_skip))
        if on_agent is not None:
            on_agent(spec, log)
    meta = {
        "config": cfg.to_dict(),
        "order_seed": cfg.order_seed,
        "uncertainty_seed": cfg.uncertainty_seed,
        "wall_time_s": time.perf_counter() - started,
    }
    return FleetResults(cfg, list(fleet), logs, np.asarray(errors), meta)
