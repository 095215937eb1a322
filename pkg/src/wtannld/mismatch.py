"""Frozen multiplicative device mismatch and the degradation experiment."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError

FACTORS = ("I0", "tau_s", "cb", "Vthr", "cc")
TRUNCATE_AT = 0.1


@dataclass(frozen=True)
class MismatchSpec:
    """Relative spread (sigma/mu) of each nonideality, and which ones are switched on."""

    cv_I0: float = 0.13
    cv_tau_s: float = 0.101
    cv_cb: float = 0.18
    cv_Vthr: float = 0.125
    cv_cc: float = 0.18
    enabled: frozenset = field(default_factory=lambda: frozenset(FACTORS))

    def __post_init__(self):
        object.__setattr__(self, "enabled", frozenset(self.enabled))
        unknown = self.enabled - set(FACTORS)
        if unknown:
            raise ParameterError(f"unknown nonideality {sorted(unknown)}; expected a subset of {FACTORS}")
        for name in FACTORS:
            if getattr(self, "cv_" + name) < 0:
                raise ParameterError(f"cv_{name} must be >= 0")

    def cv(self, name: str) -> float:
        return getattr(self, "cv_" + name) if name in self.enabled else 0.0

    def only(self, *names) -> "MismatchSpec":
        return MismatchSpec(self.cv_I0, self.cv_tau_s, self.cv_cb, self.cv_Vthr, self.cv_cc, frozenset(names))

    def to_dict(self) -> dict:
        d = {"cv_" + n: getattr(self, "cv_" + n) for n in FACTORS}
        d["enabled"] = sorted(self.enabled)
        return d


@dataclass
class MismatchInstance:
    """Sampled factors: ``I0``/``tau_s`` per synapse slot ``(N, m, k)``, ``cb``/``cc`` per branch ``(N, m)``,
    ``V_thr`` per neuron ``(N,)``."""

    I0: np.ndarray
    tau_s: np.ndarray
    cb: np.ndarray
    V_thr: np.ndarray
    cc: np.ndarray

    @property
    def varies_synapses(self) -> bool:
        return bool(np.any(self.I0 != 1.0) or np.any(self.tau_s != 1.0))


def _draw(rng: np.random.Generator, cv: float, shape) -> np.ndarray:
    # draws are taken even at cv=0 so enabling one factor never shifts another's stream
    z = rng.standard_normal(shape)
    if cv == 0:
        return np.ones(shape)
    return np.maximum(1.0 + cv * z, TRUNCATE_AT)


def sample_mismatch(spec: MismatchSpec, geometry, rng: np.random.Generator) -> MismatchInstance:
    """Draw every factor once as ``max(N(1, cv^2), 0.1)``; ``geometry`` is ``(N, m, k, d)``."""
    N, m, k, _ = geometry
    return MismatchInstance(
        I0=_draw(rng, spec.cv("I0"), (N, m, k)),
        tau_s=_draw(rng, spec.cv("tau_s"), (N, m, k)),
        cb=_draw(rng, spec.cv("cb"), (N, m)),
        V_thr=_draw(rng, spec.cv("Vthr"), (N,)),
        cc=_draw(rng, spec.cv("cc"), (N, m)),
    )


@dataclass
class DegradationRow:
    config_label: str
    success_pct: float
    ideal_pct: float

    @property
    def drop(self) -> float:
        return self.ideal_pct - self.success_pct


def degradation_configs(spec: MismatchSpec) -> list[tuple[str, MismatchSpec]]:
    """One configuration per enabled nonideality, then all of them together."""
    singles = [(name, spec.only(name)) for name in FACTORS if name in spec.enabled]
    return singles + [("all", spec)]


def degradation_experiment(base_cfg, spec: MismatchSpec, trials: int, jobs: int = 1) -> list[DegradationRow]:
    """Success% with each single nonideality and with all of them, against ideal runs on the same seeds.

    Every configuration reuses the same trial seeds, so templates, wiring
    and epoch order are paired with the ideal batch.
    """
    from .harness import run_trials, trial_seed

    if trials < 1:
        raise ParameterError("trials must be >= 1")
    seeds = [trial_seed(base_cfg.seed, "mismatch", t) for t in range(trials)]

    def pct(mm):
        res = run_trials([base_cfg.replace(seed=s, mismatch=mm) for s in seeds], jobs)
        return 100.0 * sum(r.success for r in res) / len(res)

    ideal = pct(None)
    return [DegradationRow(label, pct(s), ideal) for label, s in degradation_configs(spec)]


def write_degradation_csv(path, rows: Sequence[DegradationRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_label", "success_pct", "ideal_pct"])
        for r in rows:
            w.writerow([r.config_label, f"{r.success_pct:.2f}", f"{r.ideal_pct:.2f}"])
