"""Experiment configuration: YAML sections over defaults, then command-line overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .autotune import DEFAULT_CAL_TRIALS, DEFAULT_EP_INI, DEFAULT_INH_RATIO
from .dynamics import DEFAULT_DT, DEFAULT_TAU_M
from .errors import ParameterError
from .harness import SWEEP_AXES, TrialConfig
from .mismatch import FACTORS, MismatchSpec


@dataclass
class Stimulus:
    d: int = 100
    rate: float = 20.0
    T_p: float = 0.5
    C: int = 2
    active_fraction: float = 1.0
    sigma_jitter: float = 0.0
    # sigma_jitter / tau_s; takes precedence over sigma_jitter when set
    jitter_ratio: float | None = None


@dataclass
class Network:
    n_sub: int = 1
    N: int | None = None
    m: int | None = None
    tau_s: float | None = None
    tau_m: float = DEFAULT_TAU_M
    x_thr: float | None = None
    V_thr: float | None = None
    I0_inh: float | None = None
    inh_ratio: float = DEFAULT_INH_RATIO


@dataclass
class Training:
    max_epochs: int = 500
    window: int = 20
    tolerance: float = 0.01
    n_R: int | None = None
    ep_ini: int = DEFAULT_EP_INI
    cal_trials: int = DEFAULT_CAL_TRIALS
    trials: int = 1
    test_count: int = 1
    n_probes: int = 50
    audit: bool = False


@dataclass
class Sweep:
    axis: str = "N_over_C"
    grid: list = field(default_factory=lambda: [1, 3, 5, 7, 9, 11, 13])
    trials_per_point: int = 50


@dataclass
class Mismatch:
    cv_I0: float = 0.13
    cv_tau_s: float = 0.101
    cv_cb: float = 0.18
    cv_Vthr: float = 0.125
    cv_cc: float = 0.18
    enabled: list = field(default_factory=lambda: list(FACTORS))
    trials: int = 50

    def spec(self) -> MismatchSpec:
        return MismatchSpec(self.cv_I0, self.cv_tau_s, self.cv_cb, self.cv_Vthr, self.cv_cc, frozenset(self.enabled))


def _numeric(value):
    # YAML 1.1 reads "1e-4" (no dot) as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


SECTIONS = {"stimulus": Stimulus, "network": Network, "training": Training, "sweep": Sweep, "mismatch": Mismatch}


@dataclass
class ExperimentConfig:
    seed: int = 0
    dt: float = DEFAULT_DT
    jobs: int = 1
    out: str = "out"
    stimulus: Stimulus = field(default_factory=Stimulus)
    network: Network = field(default_factory=Network)
    training: Training = field(default_factory=Training)
    sweep: Sweep = field(default_factory=Sweep)
    mismatch: Mismatch = field(default_factory=Mismatch)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        cfg = cls()
        for key, value in (data or {}).items():
            cfg.set(key, value)
        cfg.validate()
        return cfg

    def set(self, key: str, value: Any) -> None:
        """Set ``key`` (``seed``, ``training.n_R``, or a whole section as a mapping)."""
        head, _, rest = key.partition(".")
        if key != "out":
            value = _numeric(value)
        if head in SECTIONS:
            section = getattr(self, head)
            if not rest:
                if not isinstance(value, dict):
                    raise ParameterError(f"section {head!r} must be a mapping")
                for k, v in value.items():
                    self.set(f"{head}.{k}", v)
                return
            names = {f.name for f in dataclasses.fields(section)}
            if rest not in names:
                raise ParameterError(f"unknown key {key!r}")
            setattr(section, rest, value)
            return
        if rest or head not in {"seed", "dt", "jobs", "out"}:
            raise ParameterError(f"unknown key {key!r}")
        setattr(self, head, value)

    def validate(self) -> None:
        s = self.stimulus
        if int(s.C) < 1:
            raise ParameterError(f"stimulus.C must be >= 1, got {s.C}")
        if int(s.d) < 1:
            raise ParameterError(f"stimulus.d must be >= 1, got {s.d}")
        if not s.T_p > 0 or s.rate < 0 or not 0 < s.active_fraction <= 1:
            raise ParameterError("stimulus needs T_p > 0, rate >= 0 and 0 < active_fraction <= 1")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if int(self.seed) < 0:
            raise ParameterError("seed must be a non-negative integer")
        if self.sweep.axis not in SWEEP_AXES:
            raise ParameterError(f"sweep.axis must be one of {SWEEP_AXES}, got {self.sweep.axis!r}")
        self.mismatch.spec()

    def trial_config(self, seed: int | None = None) -> TrialConfig:
        s, n, t = self.stimulus, self.network, self.training
        return TrialConfig(
            C=int(s.C), n_sub=int(n.n_sub), N=n.N, d=int(s.d), rate=float(s.rate), T_p=float(s.T_p),
            active_fraction=float(s.active_fraction), sigma_jitter=float(s.sigma_jitter), jitter_ratio=s.jitter_ratio,
            max_epochs=int(t.max_epochs), window=int(t.window), tolerance=float(t.tolerance), n_R=t.n_R,
            ep_ini=int(t.ep_ini), cal_trials=int(t.cal_trials), inh_ratio=float(n.inh_ratio), I0_inh=n.I0_inh,
            dt=float(self.dt), tau_m=float(n.tau_m), tau_s=n.tau_s, x_thr=n.x_thr, V_thr=n.V_thr, m=n.m,
            test_count=int(t.test_count), n_probes=int(t.n_probes), seed=int(self.seed if seed is None else seed),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ParameterError(f"{path}: not valid YAML ({exc})") from exc
    if data is not None and not isinstance(data, dict):
        raise ParameterError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(data)


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value parsed as YAML (so ``3``, ``0.1``, ``null`` and ``[1, 2]`` work)."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ParameterError(f"override {text!r} is not key=value")
    return key.strip(), yaml.safe_load(raw)


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
