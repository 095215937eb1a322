"""Training trials, outcome classification, false-positive probes and parameter sweeps."""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .autotune import (
    DEFAULT_CAL_TRIALS,
    DEFAULT_EP_INI,
    DEFAULT_INH_RATIO,
    TuneResult,
    convergence_measure,
    l_mean,
    tune_inhibition,
    tune_neuron,
)
from .dynamics import DEFAULT_DT, DEFAULT_TAU_M, EventLog, Wiring, simulate_pattern
from .errors import ParameterError
from .plasticity import new_fitness, reset_fitness, rewire_after_pattern
from .spikes import JitterSpec, PatternTemplate, apply_jitter, gen_poisson_template, make_epoch

log = logging.getLogger(__name__)

SUCCESS = "success"
F1, F2, F3 = "F1", "F2", "F3"
SWEEP_AXES = ("N_over_C", "sigma_jitter", "n_sub")


@dataclass
class TrialConfig:
    C: int = 2
    n_sub: int = 1
    N: int | None = None
    d: int = 100
    rate: float = 20.0
    T_p: float = 0.5
    active_fraction: float = 1.0
    sigma_jitter: float = 0.0
    # when set, sigma_jitter = jitter_ratio * tau_s (tau_s is only known after tuning)
    jitter_ratio: float | None = None
    max_epochs: int = 500
    window: int = 20
    tolerance: float = 0.01
    n_R: int | None = None
    ep_ini: int = DEFAULT_EP_INI
    cal_trials: int = DEFAULT_CAL_TRIALS
    inh_ratio: float = DEFAULT_INH_RATIO
    I0_inh: float | None = None
    dt: float = DEFAULT_DT
    tau_m: float = DEFAULT_TAU_M
    tau_s: float | None = None
    x_thr: float | None = None
    V_thr: float | None = None
    m: int | None = None
    test_count: int = 1
    n_probes: int = 50
    seed: int = 0
    mismatch: object | None = None

    def __post_init__(self):
        if self.C < 1:
            raise ParameterError(f"C must be >= 1, got {self.C}")
        if self.n_sub < 1:
            raise ParameterError(f"n_sub must be >= 1, got {self.n_sub}")
        if self.N is not None and self.N < 1:
            raise ParameterError(f"N must be >= 1, got {self.N}")
        if self.max_epochs < 1 or self.window < 1:
            raise ParameterError("max_epochs and window must be >= 1")
        if self.test_count < 1:
            raise ParameterError("test_count must be >= 1")
        if self.sigma_jitter < 0 or (self.jitter_ratio is not None and self.jitter_ratio < 0):
            raise ParameterError("jitter must be >= 0")

    @property
    def neurons(self) -> int:
        if self.N is not None:
            return self.N
        return 11 * self.C if self.n_sub == 1 else self.C * self.n_sub

    @property
    def replacement_size(self) -> int:
        return self.n_R if self.n_R is not None else max(1, self.d // 20)

    def replace(self, **kw) -> "TrialConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class TrialResult:
    success: bool
    failure_mode: str | None
    ep_sat: int
    saturated: bool
    cm_trace: list
    l_mean_trace: list
    learned: dict
    tested: dict
    fp_rate: float
    tune: TuneResult
    sigma_jitter: float
    wiring: Wiring = field(repr=False)
    latencies: list = field(default_factory=list, repr=False)

    @property
    def final_cm(self) -> float | None:
        vals = [c for c in self.cm_trace if c is not None]
        return vals[-1] if vals else None


def extract_representation(log: EventLog, n_sub: int):
    """First firing neuron as a 1-tuple (``n_sub == 1``) or the full firing sequence; ``None`` if silent."""
    if log.n_post == 0:
        return None
    if n_sub == 1:
        return (int(log.post_neurons[0]),)
    return tuple(int(n) for n in log.post_neurons)


def classify_outcome(learned: dict, tested: dict) -> str:
    """``success`` or the first failing condition among F1, F2, F3.

    ``learned`` maps class label -> representation; ``tested`` maps label
    -> a list of representations from test presentations.
    """
    reps = list(learned.values())
    if any(r is None for r in reps) or len(set(reps)) != len(reps):
        return F1
    for label, tests in tested.items():
        for r in tests:
            if r != learned[label] and any(r == learned[o] for o in learned if o != label):
                return F2
    for label, tests in tested.items():
        for r in tests:
            if r != learned[label] and r not in reps:
                return F3
    return SUCCESS


def saturation_epoch(cm_trace: Sequence, window: int, tolerance: float) -> int | None:
    """First epoch count ``e >= 2*window`` at which two consecutive ``window``-epoch means of CM
    differ by less than ``tolerance`` (relative)."""
    cm = np.array([np.nan if c is None else c for c in cm_trace], dtype=float)
    for e in range(2 * window, cm.size + 1):
        if _saturated(cm[:e], window, tolerance):
            return e
    return None


def _saturated(cm: np.ndarray, window: int, tolerance: float) -> bool:
    if cm.size < 2 * window:
        return False
    prev = cm[-2 * window:-window]
    cur = cm[-window:]
    if np.all(np.isnan(prev)) or np.all(np.isnan(cur)):
        return False
    a, b = np.nanmean(prev), np.nanmean(cur)
    scale = max(abs(a), abs(b))
    return scale == 0 or abs(b - a) / scale < tolerance


def make_templates(cfg: TrialConfig, rng: np.random.Generator) -> list[PatternTemplate]:
    return [gen_poisson_template(cfg.d, cfg.rate, cfg.T_p, cfg.active_fraction, c + 1, rng) for c in range(cfg.C)]


class Network:
    """A tuned network instance: wiring, parameters and (optional) frozen mismatch."""

    def __init__(self, wiring: Wiring, tune: TuneResult, mismatch=None, dt: float = DEFAULT_DT):
        self.wiring = wiring
        self.tune = tune
        self.mismatch = mismatch
        self.dt = dt

    def run(self, pattern: PatternTemplate, fitness=None) -> EventLog:
        t = self.tune
        log, _ = simulate_pattern(
            self.wiring, t.neuron, t.kernels, t.inhibition, pattern, self.dt, fitness=fitness, mismatch=self.mismatch
        )
        return log

    def representation(self, pattern: PatternTemplate):
        return extract_representation(self.run(pattern), self.tune.n_sub)


def false_positive_probe(net: Network, learned: dict, cfg: TrialConfig, n_probes: int, rng: np.random.Generator) -> float:
    """Fraction of fresh random patterns whose representation equals a learned one."""
    targets = {r for r in learned.values() if r is not None}
    if n_probes <= 0:
        return 0.0
    if not targets:
        return 0.0
    hits = 0
    for _ in range(n_probes):
        probe = gen_poisson_template(cfg.d, cfg.rate, cfg.T_p, cfg.active_fraction, 0, rng)
        if net.representation(probe) in targets:
            hits += 1
    return hits / n_probes


def prepare_network(cfg: TrialConfig, templates=None):
    """Tune parameters and build the initial network for ``cfg``; returns ``(net, templates, sigma)``."""
    seed = cfg.seed
    if templates is None:
        templates = make_templates(cfg, rngmod.stream(seed, "templates"))
    tune_rng = rngmod.stream(seed, "tune")
    tune = tune_neuron(
        templates, cfg.rate, cfg.n_sub, tune_rng, active_fraction=cfg.active_fraction, trials=cfg.cal_trials,
        dt=cfg.dt, tau_m=cfg.tau_m, tau_s=cfg.tau_s, x_thr=cfg.x_thr, V_thr=cfg.V_thr, m=cfg.m,
    )
    sigma = cfg.jitter_ratio * tune.tau_s if cfg.jitter_ratio is not None else cfg.sigma_jitter
    jitter = JitterSpec(sigma)
    wiring = Wiring.random(cfg.neurons, tune.m, tune.k, tune.d, rngmod.stream(seed, "wiring"))
    mismatch = None
    if cfg.mismatch is not None:
        from .mismatch import sample_mismatch

        mismatch = sample_mismatch(cfg.mismatch, (cfg.neurons, tune.m, tune.k, tune.d), rngmod.stream(seed, "mismatch"))
    cal_rng = rngmod.stream(seed, "inhibition")
    epochs = [make_epoch(templates, jitter, cal_rng) for _ in range(cfg.ep_ini)]
    tune_inhibition(tune, wiring, epochs, I0_inh=cfg.I0_inh, ratio=cfg.inh_ratio, dt=cfg.dt, mismatch=mismatch)
    return Network(wiring, tune, mismatch, cfg.dt), templates, sigma


def run_trial(
    cfg: TrialConfig, on_epoch: Callable | None = None, audit: Callable | None = None,
    templates: Sequence[PatternTemplate] | None = None,
) -> TrialResult:
    """Tune, train until CM saturates (or ``max_epochs``), then test and probe.

    ``on_epoch(epoch, l_mean, cm)`` is called after every epoch;
    ``audit(epoch, position, label, report)`` after every rewiring.
    ``templates`` replaces the ones generated from the trial seed.
    """
    net, templates, sigma = prepare_network(cfg, templates)
    tune = net.tune
    jitter = JitterSpec(sigma)
    N, m, d = net.wiring.N, tune.m, tune.d
    n_R = cfg.replacement_size
    ep_rng = rngmod.stream(cfg.seed, "epochs")
    rw_rng = rngmod.stream(cfg.seed, "rewire")
    c = new_fitness(N, m, d)
    cm_trace, lm_trace, latencies = [], [], []
    last_logs: dict = {}
    ep_sat = None
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        logs = []
        last_logs = {}
        for pos, pattern in enumerate(make_epoch(templates, jitter, ep_rng)):
            reset_fitness(c)
            lg = net.run(pattern, fitness=c)
            report = rewire_after_pattern(net.wiring, c, lg, n_R, rw_rng)
            if audit is not None:
                audit(epoch, pos, pattern.class_label, report)
            logs.append(lg)
            last_logs[pattern.class_label] = lg
            latencies.append([float(x) for x in lg.post_times])
        lm = l_mean(logs)
        cm = convergence_measure(lm, tune.n_sub, tune.T_sub)
        lm_trace.append(lm)
        cm_trace.append(cm)
        if on_epoch is not None:
            on_epoch(epoch, lm, cm)
        cm_arr = np.array([np.nan if x is None else x for x in cm_trace])
        if _saturated(cm_arr, cfg.window, cfg.tolerance):
            ep_sat = epoch
            break
    reset_fitness(c)
    learned = {label: extract_representation(last_logs[label], tune.n_sub) for label in sorted(last_logs)}
    test_rng = rngmod.stream(cfg.seed, "test")
    tested = {
        t.class_label: [net.representation(apply_jitter(t, jitter, test_rng)) for _ in range(cfg.test_count)]
        for t in templates
    }
    outcome = classify_outcome(learned, tested)
    fp = false_positive_probe(net, learned, cfg, cfg.n_probes, rngmod.stream(cfg.seed, "probe"))
    return TrialResult(
        success=outcome == SUCCESS,
        failure_mode=None if outcome == SUCCESS else outcome,
        ep_sat=ep_sat if ep_sat is not None else epoch,
        saturated=ep_sat is not None,
        cm_trace=cm_trace,
        l_mean_trace=lm_trace,
        learned=learned,
        tested=tested,
        fp_rate=fp,
        tune=tune,
        sigma_jitter=sigma,
        wiring=net.wiring,
        latencies=latencies,
    )


def trial_seed(master_seed: int, label: str, index: int) -> int:
    return rngmod.derive_seed(master_seed, label, index)


def _run(cfg):
    return run_trial(cfg)


def run_trials(cfgs: Sequence[TrialConfig], jobs: int = 1) -> list[TrialResult]:
    """Run independent trials, in order, optionally across processes."""
    if jobs <= 1 or len(cfgs) <= 1:
        return [run_trial(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run, cfgs))


def point_config(axis: str, value, cfg: TrialConfig) -> TrialConfig:
    if axis == "N_over_C":
        return cfg.replace(N=int(round(value * cfg.C)))
    if axis == "sigma_jitter":
        return cfg.replace(jitter_ratio=float(value))
    if axis == "n_sub":
        return cfg.replace(n_sub=int(value), N=None)
    raise ParameterError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


@dataclass
class SweepPoint:
    point: float
    success_pct: float
    ep_sat_avg: float
    cm_final_avg: float
    failures: dict
    fp_avg: float
    results: list = field(repr=False, default_factory=list)


def summarize(point, results: Sequence[TrialResult]) -> SweepPoint:
    n = len(results)
    cms = [r.final_cm for r in results if r.final_cm is not None]
    fails = {f: sum(r.failure_mode == f for r in results) for f in (F1, F2, F3)}
    return SweepPoint(
        point=point,
        success_pct=100.0 * sum(r.success for r in results) / n if n else math.nan,
        ep_sat_avg=float(np.mean([r.ep_sat for r in results])) if n else math.nan,
        cm_final_avg=float(np.mean(cms)) if cms else math.nan,
        failures=fails,
        fp_avg=float(np.mean([r.fp_rate for r in results])) if n else math.nan,
        results=list(results),
    )


def sweep(axis: str, grid: Sequence, trials_per_point: int, cfg: TrialConfig, jobs: int = 1) -> list[SweepPoint]:
    """Independent trials at every grid point; trial seeds depend on (master seed, axis, value, index)."""
    if not grid:
        raise ParameterError("sweep grid is empty")
    if trials_per_point < 1:
        raise ParameterError("trials_per_point must be >= 1")
    out = []
    for value in grid:
        base = point_config(axis, value, cfg)
        cfgs = [base.replace(seed=trial_seed(cfg.seed, f"sweep/{axis}={value!r}", t)) for t in range(trials_per_point)]
        out.append(summarize(value, run_trials(cfgs, jobs)))
    return out
