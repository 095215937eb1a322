"""Parameter guidelines: branch count, kernel constants, thresholds, inhibition and convergence."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dynamics import (
    DEFAULT_DT,
    DEFAULT_TAU_M,
    I0_UNIT_PEAK,
    EventLog,
    InhibitionParams,
    KernelParams,
    NeuronConfig,
    Wiring,
    simulate_pattern,
)
from .errors import CalibrationError, ParameterError
from .spikes import PatternTemplate

log = logging.getLogger(__name__)

TAU_S_FLOOR = 0.5e-3
DEFAULT_CAL_TRIALS = 200
DEFAULT_EP_INI = 5
DEFAULT_INH_RATIO = 10.0


def _log_comb(n: float, r: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(r + 1) - math.lgamma(n - r + 1)


def capacity(d: int, k: int, m: int) -> float:
    """Memorization capacity in bits, ``log2 C(C(k+d-1, k) + m - 1, m)``.

    The inner count can be astronomically large, so the outer binomial is
    expanded as ``sum_{i<m} log(n + i) - log m!`` with ``log(n + i)``
    written as ``log n + log1p(i / n)``.
    """
    for name, v in (("d", d), ("k", k), ("m", m)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v}")
    log_n = _log_comb(k + d - 1, k)
    n = math.exp(log_n) if log_n < 700 else math.inf
    total = m * log_n + sum(math.log1p(i / n) for i in range(1, m)) - math.lgamma(m + 1)
    return total / math.log(2)


def divisors(s: int) -> list[int]:
    return [m for m in range(1, s + 1) if s % m == 0]


def choose_m(d: int) -> tuple[int, int]:
    """Branch count maximising capacity with ``m*k = d`` synapses; returns ``(m, k)``."""
    if d < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    best = max(divisors(d), key=lambda m: (capacity(d, d // m, m), -m))
    return best, d // best


def tau_s_opt(d: float, mean_rate: float) -> float:
    """Optimal slow PSC constant in seconds from the mean ISI across all ``d`` inputs.

    Both the ISI and the result of the affine fit are in milliseconds.
    """
    if not d * mean_rate > 0:
        raise ParameterError("d * mean_rate must be positive")
    isi_ms = 1000.0 / (d * mean_rate)
    tau_ms = 52.83 * isi_ms - 3.1
    if tau_ms < TAU_S_FLOOR * 1000.0:
        log.warning("tau_s_opt = %.4g ms for ISI %.4g ms; flooring at %.1f ms", tau_ms, isi_ms, TAU_S_FLOOR * 1000)
        return TAU_S_FLOOR
    return tau_ms / 1000.0


def _check_patterns(patterns):
    if not patterns:
        raise ParameterError("need at least one sample pattern")


def calibrate_x_thr(
    m: int, k: int, d: int, kernels: KernelParams, patterns: Sequence[PatternTemplate],
    trials: int = DEFAULT_CAL_TRIALS, rng: np.random.Generator | None = None, dt: float = DEFAULT_DT,
) -> float:
    """Mean dendritic input ``I_b,in`` over random wirings, branches, steps and patterns."""
    _check_patterns(patterns)
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    wiring = Wiring.random(trials, m, k, d, rng)
    cfg = NeuronConfig(m, k, 1.0, 1.0)
    means = [simulate_pattern(wiring, cfg, kernels, None, p, dt, threshold=False)[1].mean_branch_input for p in patterns]
    x = float(np.mean(means))
    if not x > 0:
        raise CalibrationError("sample patterns produce no dendritic input; x_thr would be 0")
    return x


def calibrate_V_thr(
    m: int, k: int, d: int, kernels: KernelParams, x_thr: float, patterns: Sequence[PatternTemplate],
    trials: int = DEFAULT_CAL_TRIALS, rng: np.random.Generator | None = None, dt: float = DEFAULT_DT,
    tau_m: float = DEFAULT_TAU_M,
) -> float:
    """Mean over random wirings and patterns of the peak membrane voltage of a lone, non-firing neuron."""
    _check_patterns(patterns)
    if not x_thr > 0:
        raise ParameterError("x_thr must be positive")
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    wiring = Wiring.random(trials, m, k, d, rng)
    cfg = NeuronConfig(m, k, x_thr, 1.0, tau_m=tau_m)
    peaks = [simulate_pattern(wiring, cfg, kernels, None, p, dt, threshold=False)[1].max_V for p in patterns]
    v = float(np.mean(peaks))
    if not v > 0:
        raise CalibrationError("sample patterns never depolarise the membrane; V_thr would be 0")
    return v


def inhibition_tau(T_sub: float, I0_inh: float, I_e_av: float) -> float:
    """Slow constant making ``I0_inh * exp(-T_sub / tau)`` fall to ``I_e_av`` at ``T_sub``."""
    if not I0_inh > I_e_av > 0:
        raise CalibrationError(
            f"I0_inh={I0_inh:.6g} must exceed the mean excitatory current I_e_av={I_e_av:.6g}; raise I0_inh"
        )
    return T_sub / math.log(I0_inh / I_e_av)


def mean_excitatory_current(
    wiring: Wiring, config: NeuronConfig, kernels: KernelParams,
    epochs: Sequence[Sequence[PatternTemplate]], dt: float = DEFAULT_DT, mismatch=None,
) -> float:
    """Time- and neuron-averaged ``sum_j b(I_b,in^j)`` over the given epochs, inhibition and learning off."""
    vals = [
        simulate_pattern(wiring, config, kernels, None, p, dt, threshold=False, mismatch=mismatch)[1].mean_input.mean()
        for ep in epochs for p in ep
    ]
    if not vals:
        raise ParameterError("need at least one calibration epoch")
    return float(np.mean(vals))


def calibrate_inhibition(
    wiring: Wiring, config: NeuronConfig, kernels: KernelParams,
    epochs: Sequence[Sequence[PatternTemplate]], T_sub: float, I0_inh: float | None = None,
    ratio: float = DEFAULT_INH_RATIO, dt: float = DEFAULT_DT, mismatch=None,
) -> tuple[InhibitionParams, float]:
    """Inhibitory kernel for subpattern length ``T_sub``; returns ``(params, I_e_av)``.

    ``I0_inh`` defaults to ``ratio * I_e_av``.
    """
    I_e_av = mean_excitatory_current(wiring, config, kernels, epochs, dt, mismatch)
    if I0_inh is None:
        I0_inh = ratio * I_e_av
    tau = inhibition_tau(T_sub, I0_inh, I_e_av)
    return InhibitionParams.from_tau_s(I0_inh, tau), I_e_av


def l_mean(logs: Sequence[EventLog]) -> float | None:
    """Per-pattern sum of post-spike latencies, averaged over the patterns that spiked.

    ``None`` when no pattern in the epoch produced a spike.
    """
    sums = [float(lg.post_times.sum()) for lg in logs if lg.n_post]
    return float(np.mean(sums)) if sums else None


def convergence_measure(l_mean_s: float | None, n_sub: int, T_sub: float) -> float | None:
    """``l_mean / n_sub - (n_sub - 1) * T_sub / 2``, i.e. mean latency within each subpattern.

    May be negative. ``None`` propagates an epoch without spikes.
    """
    if n_sub < 1:
        raise ParameterError(f"n_sub must be >= 1, got {n_sub}")
    if l_mean_s is None:
        return None
    return l_mean_s / n_sub - (n_sub - 1) * T_sub / 2.0


@dataclass
class TuneResult:
    d: int
    m: int
    k: int
    tau_s: float
    tau_f: float
    I0: float
    x_thr: float
    V_thr: float
    tau_m: float
    T_p: float
    n_sub: int
    T_sub: float
    I_e_av: float | None = None
    I0_inh: float | None = None
    tau_s_inh: float | None = None
    tau_f_inh: float | None = None

    @property
    def kernels(self) -> KernelParams:
        return KernelParams(self.I0, self.tau_s, self.tau_f)

    @property
    def neuron(self) -> NeuronConfig:
        return NeuronConfig(self.m, self.k, self.x_thr, self.V_thr, tau_m=self.tau_m)

    @property
    def inhibition(self) -> InhibitionParams | None:
        if self.I0_inh is None:
            return None
        return InhibitionParams(self.I0_inh, self.tau_s_inh, self.tau_f_inh)

    def to_dict(self) -> dict:
        return asdict(self)


def tune_neuron(
    templates: Sequence[PatternTemplate], rate: float, n_sub: int, rng: np.random.Generator,
    active_fraction: float = 1.0, trials: int = DEFAULT_CAL_TRIALS, dt: float = DEFAULT_DT,
    tau_m: float = DEFAULT_TAU_M, tau_s: float | None = None, x_thr: float | None = None,
    V_thr: float | None = None, m: int | None = None,
) -> TuneResult:
    """Everything except the inhibitory kernel, which needs a concrete network.

    Any keyword left as ``None`` is derived from the guidelines; a value
    overrides it.
    """
    _check_patterns(templates)
    if n_sub < 1:
        raise ParameterError(f"n_sub must be >= 1, got {n_sub}")
    d = templates[0].d
    T_p = templates[0].duration
    if m is None:
        m, k = choose_m(d)
    else:
        if d % m:
            raise ParameterError(f"m={m} does not divide d={d}")
        k = d // m
    if tau_s is None:
        tau_s = tau_s_opt(d * active_fraction, rate)
    kernels = KernelParams.from_tau_s(tau_s, I0_UNIT_PEAK)
    if x_thr is None:
        x_thr = calibrate_x_thr(m, k, d, kernels, templates, trials, rng, dt)
    if V_thr is None:
        V_thr = calibrate_V_thr(m, k, d, kernels, x_thr, templates, trials, rng, dt, tau_m)
    return TuneResult(
        d=d, m=m, k=k, tau_s=tau_s, tau_f=kernels.tau_f, I0=kernels.I0, x_thr=x_thr, V_thr=V_thr,
        tau_m=tau_m, T_p=T_p, n_sub=n_sub, T_sub=T_p / n_sub,
    )


def tune_inhibition(
    tune: TuneResult, wiring: Wiring, epochs: Sequence[Sequence[PatternTemplate]],
    I0_inh: float | None = None, ratio: float = DEFAULT_INH_RATIO, dt: float = DEFAULT_DT, mismatch=None,
) -> TuneResult:
    """Fill the inhibition fields of ``tune`` (in place) from pre-training epochs; returns it."""
    params, I_e_av = calibrate_inhibition(
        wiring, tune.neuron, tune.kernels, epochs, tune.T_sub, I0_inh, ratio, dt, mismatch
    )
    tune.I_e_av = I_e_av
    tune.I0_inh = params.I0_inh
    tune.tau_s_inh = params.tau_s_inh
    tune.tau_f_inh = params.tau_f_inh
    return tune
