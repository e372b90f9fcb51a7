"""Memory strength, retention decay, lifecycle states, and the batch decay pass.

Strength aggregates rehearsal and salience in hours:

    S = max(S_min, alpha*log(1 + accesses) + beta*importance
                 + gamma*confirmations + delta*emotion)

Retention after t hours since last access is R = exp(-t / S); a stored
trust score tau for the writing agent scales the decay rate by
(1 + kappa_trust * (1 - tau)), so an untrusted source at kappa 2 fades
three times faster. Retention maps onto discrete lifecycle states, each
pinned to an embedding bit width; the decay pass recomputes all of this
in one sweep and demotes embedding precision as memories cool.

Also here: a reduced one-dimensional Langevin simulator (identity metric,
Euler-Maruyama) whose stationary law is checked against the closed-form
density exp(-(U + lambda*Phi_F)/T), numerically normalized on a grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np


class Lifecycle(str, Enum):
    ACTIVE = "active"
    WARM = "warm"
    COLD = "cold"
    ARCHIVE = "archive"
    FORGOTTEN = "forgotten"


#: Embedding bit width per state. Forgotten memories keep no embedding.
PRECISION_BY_STATE = {
    Lifecycle.ACTIVE: 32,
    Lifecycle.WARM: 8,
    Lifecycle.COLD: 4,
    Lifecycle.ARCHIVE: 2,
    Lifecycle.FORGOTTEN: 0,
}


class ForgettingError(Exception):
    pass


class SimulationDivergedError(ForgettingError):
    """The Langevin integrator blew up; dt is too large for the stiffness."""


@dataclass(frozen=True)
class ForgettingParams:
    alpha_access: float = 2.0
    beta_importance: float = 1.0
    gamma_confirmation: float = 1.0
    delta_emotion: float = 1.0
    s_min_hours: float = 0.1
    kappa_trust: float = 2.0
    thresholds: tuple[float, float, float, float] = (0.8, 0.5, 0.2, 0.05)

    def __post_init__(self):
        for name in ("alpha_access", "beta_importance", "gamma_confirmation", "delta_emotion"):
            if getattr(self, name) < 0:
                raise ForgettingError(f"{name} must be non-negative")
        if self.s_min_hours <= 0:
            raise ForgettingError("s_min_hours must be positive")
        t = self.thresholds
        if not (1 > t[0] > t[1] > t[2] > t[3] > 0):
            raise ForgettingError("thresholds must be strictly decreasing within (0,1)")


def strength(record, params: ForgettingParams) -> float:
    """Strength in hours; strictly increasing in every salience factor."""
    raw = (params.alpha_access * math.log1p(record.access_count)
           + params.beta_importance * record.importance
           + params.gamma_confirmation * record.confirmations
           + params.delta_emotion * record.emotional_salience)
    return max(params.s_min_hours, raw)


def retention(strength_hours: float, t_hours: float) -> float:
    if strength_hours <= 0:
        raise ForgettingError("strength must be positive")
    if t_hours < 0:
        raise ForgettingError("elapsed time must be non-negative")
    return math.exp(-t_hours / strength_hours)


def half_life(strength_hours: float) -> float:
    return strength_hours * math.log(2.0)


def classify(r: float, thresholds=(0.8, 0.5, 0.2, 0.05)) -> Lifecycle:
    t_active, t_warm, t_cold, t_archive = thresholds
    if r > t_active:
        return Lifecycle.ACTIVE
    if r > t_warm:
        return Lifecycle.WARM
    if r > t_cold:
        return Lifecycle.COLD
    if r > t_archive:
        return Lifecycle.ARCHIVE
    return Lifecycle.FORGOTTEN


def precision_for(state: Lifecycle) -> int:
    return PRECISION_BY_STATE[state]


def effective_rate(lam: float, tau: float, kappa_trust: float = 2.0) -> float:
    """Decay rate scaled by source distrust: lam * (1 + kappa * (1 - tau))."""
    if not 0.0 <= tau <= 1.0:
        raise ForgettingError(f"trust must lie in [0,1], got {tau}")
    return lam * (1.0 + kappa_trust * (1.0 - tau))


@dataclass
class DecayEntry:
    memory_id: str
    old_retention: float
    new_retention: float
    old_state: str
    new_state: str
    old_bits: int
    new_bits: int
    lambda_eff: float


@dataclass
class DecayReport:
    pass_time: float
    entries: list[DecayEntry] = field(default_factory=list)
    transition_counts: dict[str, int] = field(default_factory=dict)
    purged_ids: list[str] = field(default_factory=list)

    def count(self, old_state: str, new_state: str) -> int:
        return self.transition_counts.get(f"{old_state}->{new_state}", 0)

    def to_json_lines(self):
        head = {"kind": "decay_pass", "pass_time": self.pass_time,
                "purged": sorted(self.purged_ids),
                "transitions": dict(sorted(self.transition_counts.items()))}
        yield json.dumps(head, sort_keys=True)
        for e in self.entries:
            yield json.dumps({"kind": "decay_entry", **asdict(e)}, sort_keys=True)


def decay_pass(store, now: float, params: ForgettingParams, quantizer) -> DecayReport:
    """One batch decay sweep at wall (or simulated) time `now` (unix seconds).

    Purges records tombstoned by an earlier pass, then recomputes strength,
    trust-modulated retention, and lifecycle for every live memory,
    demoting embedding precision where the state dropped. Precision only
    ever demotes; re-running at the same `now` is a no-op.
    """
    report = DecayReport(pass_time=now)

    # garbage collection: text of a forgotten memory survives exactly one cycle
    for rec in store.scan(lifecycles={Lifecycle.FORGOTTEN}):
        if rec.forgotten_at is not None and rec.forgotten_at < now:
            store.delete_memory(rec.id)
            report.purged_ids.append(rec.id)

    live = [r for r in store.scan() if r.lifecycle != Lifecycle.FORGOTTEN]
    for rec in live:
        s_hours = strength(rec, params)
        lam_eff = effective_rate(1.0 / s_hours, store.get_trust(rec.source_agent),
                                 params.kappa_trust)
        t_hours = max(0.0, (now - rec.last_access_time) / 3600.0)
        r_new = math.exp(-t_hours * lam_eff)
        new_state = classify(r_new, params.thresholds)

        emb = store.get_embedding(rec.id)
        old_bits = emb.bits if emb is not None else 0
        if new_state is Lifecycle.FORGOTTEN:
            new_bits = 0
            store.delete_embedding(rec.id)
            store.apply_decay_result(rec.id, s_hours, r_new, new_state, forgotten_at=now)
        else:
            target = precision_for(new_state)
            new_bits = min(old_bits, target) if old_bits else target
            if old_bits and new_bits < old_bits:
                store.demote_embedding(rec.id, new_bits, quantizer)
            store.apply_decay_result(rec.id, s_hours, r_new, new_state)

        entry = DecayEntry(memory_id=rec.id, old_retention=rec.retention,
                           new_retention=r_new, old_state=rec.lifecycle.value,
                           new_state=new_state.value, old_bits=old_bits,
                           new_bits=new_bits, lambda_eff=lam_eff)
        report.entries.append(entry)
        key = f"{entry.old_state}->{entry.new_state}"
        report.transition_counts[key] = report.transition_counts.get(key, 0) + 1
    return report


# ---------------------------------------------------------------------------
# Reduced Langevin simulator: dx = -(U' + lambda Phi') dt + sqrt(2 T dt) dW
# with quadratic confining wells U and Phi_F, identity metric, 1-D state.

@dataclass(frozen=True)
class LangevinConfig:
    well_stiffness: float = 1.0
    well_center: float = 0.0
    drift_stiffness: float = 1.0
    drift_center: float = 1.0
    forgetting_rate: float = 0.0
    temperature: float = 1.0
    dt: float = 0.005
    steps: int = 1000
    burn_in: int = 0
    n_chains: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ForgettingError("dt must be positive")
        if self.temperature <= 0:
            raise ForgettingError("temperature must be positive")
        if self.well_stiffness <= 0 or self.drift_stiffness <= 0:
            raise ForgettingError("potentials must be confining (positive stiffness)")
        if self.forgetting_rate < 0:
            raise ForgettingError("forgetting rate must be non-negative")


def langevin_sim(config: LangevinConfig) -> np.ndarray:
    """Euler-Maruyama trace, shape (steps, n_chains); deterministic in seed."""
    rng = np.random.default_rng(config.seed)
    x = np.zeros(config.n_chains)
    out = np.empty((config.steps, config.n_chains))
    noise_scale = math.sqrt(2.0 * config.temperature * config.dt)
    for i in range(config.burn_in + config.steps):
        drift = -(config.well_stiffness * (x - config.well_center)
                  + config.forgetting_rate * config.drift_stiffness * (x - config.drift_center))
        x = x + drift * config.dt + noise_scale * rng.standard_normal(config.n_chains)
        if float(np.max(np.abs(x))) > 1e6:
            raise SimulationDivergedError(
                f"state exceeded 1e6 at step {i}; reduce dt={config.dt}")
        if i >= config.burn_in:
            out[i - config.burn_in] = x
    return out


def stationary_log_density(config: LangevinConfig, x: np.ndarray) -> np.ndarray:
    """Unnormalized log of the stationary law exp(-(U + lambda Phi_F)/T)."""
    x = np.asarray(x, dtype=np.float64)
    u = 0.5 * config.well_stiffness * (x - config.well_center) ** 2
    phi = 0.5 * config.drift_stiffness * (x - config.drift_center) ** 2
    return -(u + config.forgetting_rate * phi) / config.temperature


def ks_statistic(samples: np.ndarray, log_density, lo: float, hi: float,
                 grid_points: int = 20001) -> float:
    """Two-sided KS distance between samples and a grid-normalized density."""
    grid = np.linspace(lo, hi, grid_points)
    ld = np.asarray(log_density(grid), dtype=np.float64)
    p = np.exp(ld - ld.max())
    cdf = np.concatenate([[0.0], np.cumsum((p[1:] + p[:-1]) * 0.5 * np.diff(grid))])
    cdf /= cdf[-1]
    s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    theoretical = np.interp(s, grid, cdf)
    n = len(s)
    above = np.max(np.arange(1, n + 1) / n - theoretical)
    below = np.max(theoretical - np.arange(0, n) / n)
    return float(max(above, below))
