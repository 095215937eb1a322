"""Clock-driven simulation of a winner-take-all network of neurons with nonlinear dendrites.

Each neuron has ``m`` dendritic branches with ``k`` binary synapses each.
A branch sums the double-exponential PSCs of its input lines, squares the
sum (``b(z) = z**2 / x_thr``) and feeds the result to a leaky integrate-and-fire
soma.  A post-spike anywhere in the network restarts a global inhibitory
current seen by every neuron, the firing one included.

Units: time in seconds, currents dimensionless, ``R = 1`` so the membrane
voltage is expressed in current units and ``tau_m = R*C``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import _kernels
from .errors import IntegrityError, ParameterError, SimulationError
from .spikes import PatternTemplate

# Amplitude that makes the PSC peak exactly 1 when tau_f = tau_s / 10.
I0_UNIT_PEAK = 1.4351
DEFAULT_DT = 1e-4
DEFAULT_TAU_M = 0.02


@dataclass(frozen=True)
class KernelParams:
    I0: float
    tau_s: float
    tau_f: float

    def __post_init__(self):
        if not (self.tau_s > self.tau_f > 0):
            raise ParameterError(f"need tau_s > tau_f > 0, got tau_s={self.tau_s}, tau_f={self.tau_f}")
        if not self.I0 > 0:
            raise ParameterError(f"I0 must be positive, got {self.I0}")

    @classmethod
    def from_tau_s(cls, tau_s: float, I0: float = I0_UNIT_PEAK) -> "KernelParams":
        return cls(I0, tau_s, tau_s / 10.0)


@dataclass(frozen=True)
class InhibitionParams:
    I0_inh: float
    tau_s_inh: float
    tau_f_inh: float

    def __post_init__(self):
        if not (self.tau_s_inh > self.tau_f_inh > 0):
            raise ParameterError("need tau_s_inh > tau_f_inh > 0")
        if not self.I0_inh > 0:
            raise ParameterError(f"I0_inh must be positive, got {self.I0_inh}")

    @classmethod
    def from_tau_s(cls, I0_inh: float, tau_s_inh: float) -> "InhibitionParams":
        return cls(I0_inh, tau_s_inh, tau_s_inh / 10.0)


@dataclass(frozen=True)
class NeuronConfig:
    m: int
    k: int
    x_thr: float
    V_thr: float
    tau_m: float = DEFAULT_TAU_M
    R: float = 1.0

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ParameterError(f"m and k must be >= 1, got m={self.m}, k={self.k}")
        if not self.x_thr > 0:
            raise ParameterError(f"x_thr must be positive, got {self.x_thr}")
        if not self.V_thr > 0:
            raise ParameterError(f"V_thr must be positive, got {self.V_thr}")
        if not self.tau_m > 0:
            raise ParameterError(f"tau_m must be positive, got {self.tau_m}")


def kernel_value(params: KernelParams, t):
    """``I0 * (exp(-t/tau_s) - exp(-t/tau_f))`` for ``t >= 0``, zero before."""
    t = np.asarray(t, dtype=np.float64)
    tp = np.maximum(t, 0.0)
    v = params.I0 * (np.exp(-tp / params.tau_s) - np.exp(-tp / params.tau_f))
    v = np.where(t >= 0, v, 0.0)
    return float(v) if v.ndim == 0 else v


def kernel_peak_time(tau_s: float, tau_f: float) -> float:
    return tau_s * tau_f * math.log(tau_s / tau_f) / (tau_s - tau_f)


def branch_nonlinearity(z, x_thr: float):
    return np.square(z) / x_thr


def branch_nonlinearity_derivative(z, x_thr: float):
    return 2.0 * np.asarray(z) / x_thr


class Wiring:
    """Synapse slots of every neuron: ``lines[n, j, p]`` is the input line on slot ``p`` of branch ``j``.

    ``w[n, j, i]`` counts how many slots of branch ``j`` carry line ``i``;
    every branch row sums to ``k``.  Slots are physical sites (mismatch
    factors attach to them), so a swap rewires one slot in place.
    """

    def __init__(self, lines, d: int):
        lines = np.array(lines, dtype=np.int64)
        if lines.ndim != 3:
            raise ParameterError("lines must have shape (N, m, k)")
        if lines.size and (lines.min() < 0 or lines.max() >= d):
            raise IntegrityError(f"input line index outside [0, {d})")
        self.lines = lines
        self.d = int(d)
        self.w = np.zeros(lines.shape[:2] + (d,), dtype=np.int64)
        N, m, k = lines.shape
        np.add.at(self.w, (np.arange(N)[:, None, None], np.arange(m)[None, :, None], lines), 1)

    @classmethod
    def random(cls, N: int, m: int, k: int, d: int, rng: np.random.Generator) -> "Wiring":
        """Each branch draws ``k`` lines uniformly with replacement."""
        return cls(rng.integers(0, d, size=(N, m, k)), d)

    @classmethod
    def from_matrix(cls, w) -> "Wiring":
        w = np.asarray(w, dtype=np.int64)
        if w.ndim != 3:
            raise ParameterError("w must have shape (N, m, d)")
        if np.any(w < 0):
            raise IntegrityError("negative connection count")
        sums = w.sum(axis=2)
        k = int(sums.flat[0]) if sums.size else 0
        if np.any(sums != k):
            raise IntegrityError("branch rows do not share one row sum k")
        N, m, d = w.shape
        lines = np.empty((N, m, k), dtype=np.int64)
        for n in range(N):
            for j in range(m):
                lines[n, j] = np.repeat(np.arange(d), w[n, j])
        return cls(lines, d)

    @property
    def N(self) -> int:
        return self.lines.shape[0]

    @property
    def m(self) -> int:
        return self.lines.shape[1]

    @property
    def k(self) -> int:
        return self.lines.shape[2]

    def copy(self) -> "Wiring":
        out = Wiring.__new__(Wiring)
        out.lines = self.lines.copy()
        out.d = self.d
        out.w = self.w.copy()
        return out

    def check(self) -> None:
        """Raise :class:`IntegrityError` unless every row sums to ``k`` and matches the slots."""
        if np.any(self.w < 0) or np.any(self.w > self.k):
            raise IntegrityError("connection count outside [0, k]")
        if np.any(self.w.sum(axis=2) != self.k):
            raise IntegrityError("a branch row does not sum to k")
        rebuilt = Wiring(self.lines, self.d).w
        if not np.array_equal(rebuilt, self.w):
            raise IntegrityError("connection matrix out of sync with synapse slots")

    def swap(self, n: int, j: int, old: int, new: int) -> int:
        """Move the first slot of branch ``(n, j)`` carrying ``old`` onto ``new``; returns the slot."""
        slots = np.flatnonzero(self.lines[n, j] == old)
        if slots.size == 0:
            raise IntegrityError(f"neuron {n} branch {j} has no synapse on line {old}")
        p = int(slots[0])
        self.lines[n, j, p] = new
        self.w[n, j, old] -= 1
        self.w[n, j, new] += 1
        return p

    def __eq__(self, other):
        return isinstance(other, Wiring) and self.d == other.d and np.array_equal(self.w, other.w)

    def to_dict(self) -> dict:
        return {"d": self.d, "N": self.N, "m": self.m, "k": self.k, "w": self.w.tolist()}


@dataclass
class EventLog:
    """Spikes of one pattern presentation. Post-spike times are step times; latency = time."""

    dt: float
    pre_times: np.ndarray
    pre_lines: np.ndarray
    pre_steps: np.ndarray
    post_steps: np.ndarray
    post_neurons: np.ndarray

    @property
    def post_times(self) -> np.ndarray:
        return self.post_steps * self.dt

    latencies = post_times

    @property
    def n_post(self) -> int:
        return int(self.post_steps.size)

    def fired(self) -> np.ndarray:
        return np.unique(self.post_neurons)

    def same_as(self, other: "EventLog") -> bool:
        return (
            np.array_equal(self.post_steps, other.post_steps)
            and np.array_equal(self.post_neurons, other.post_neurons)
            and np.array_equal(self.pre_lines, other.pre_lines)
            and np.array_equal(self.pre_times, other.pre_times)
        )


@dataclass
class NetworkState:
    V: np.ndarray
    branch_slow: np.ndarray
    branch_fast: np.ndarray
    pre_slow: np.ndarray
    pre_fast: np.ndarray
    post_slow: np.ndarray
    post_fast: np.ndarray
    inh_slow: float
    inh_fast: float
    t_last: float | None
    branch_current: np.ndarray
    max_V: np.ndarray = field(repr=False)
    mean_input: np.ndarray = field(repr=False)
    mean_branch_input: float = 0.0
    trace: np.ndarray | None = field(default=None, repr=False)


class PlasticityHooks(Protocol):
    def on_pre(self, t: float, line: int, bprime: np.ndarray, fbar: np.ndarray) -> None: ...

    def on_post(self, t: float, neuron: int, bprime: np.ndarray, ebar: np.ndarray) -> None: ...


def n_steps(duration: float, dt: float) -> int:
    return int(round(duration / dt)) + 1


def bin_events(pattern: PatternTemplate, dt: float, nsteps: int):
    """Spike times, lines and the step that processes each spike (``(t_{k-1}, t_k]``)."""
    times, lines = pattern.events()
    steps = np.ceil(times / dt - 1e-9).astype(np.int64)
    np.clip(steps, 0, nsteps - 1, out=steps)
    return times, lines, steps


class _Units:
    """Filter units feeding the branches, plus the line -> unit injection table."""

    def __init__(self, wiring: Wiring, kernels: KernelParams, dt: float, mismatch=None):
        N, m, k, d = wiring.N, wiring.m, wiring.k, wiring.d
        per_synapse = mismatch is not None and mismatch.varies_synapses
        if per_synapse:
            # one filter pair per slot; tau_f tracks the mismatched tau_s
            self.upb = k
            tau_s = kernels.tau_s * mismatch.tau_s.reshape(-1)
            tau_f = tau_s * (kernels.tau_f / kernels.tau_s)
            amp = kernels.I0 * mismatch.I0.reshape(-1)
            unit_line = wiring.lines.reshape(-1)
            order = np.argsort(unit_line, kind="stable")
            counts = np.bincount(unit_line, minlength=d)
            self.line_unit = order.astype(np.int64)
            self.line_amp = amp[order]
            self.uniform = False
        else:
            self.upb = 1
            tau_s = np.full(N * m, kernels.tau_s)
            tau_f = np.full(N * m, kernels.tau_f)
            wt = wiring.w.reshape(N * m, d).T  # (d, branches)
            li, bi = np.nonzero(wt)
            counts = np.bincount(li, minlength=d)
            self.line_unit = bi.astype(np.int64)
            self.line_amp = kernels.I0 * wt[li, bi].astype(np.float64)
            self.uniform = True
        self.line_ptr = np.zeros(d + 1, dtype=np.int64)
        np.cumsum(counts, out=self.line_ptr[1:])
        self.tau_s = np.ascontiguousarray(tau_s)
        self.tau_f = np.ascontiguousarray(tau_f)
        self.ds = np.exp(-dt / self.tau_s)
        self.df = np.exp(-dt / self.tau_f)
        self.n = self.tau_s.size


def _factors(mismatch, N, m):
    if mismatch is None:
        return np.ones(N * m), np.ones(N), np.ones(N * m)
    return (
        np.ascontiguousarray(mismatch.cb, dtype=np.float64).reshape(-1),
        np.ascontiguousarray(mismatch.V_thr, dtype=np.float64).reshape(-1),
        np.ascontiguousarray(mismatch.cc, dtype=np.float64).reshape(-1),
    )


def simulate_pattern(
    wiring: Wiring,
    config: NeuronConfig,
    kernels: KernelParams,
    inhibition: InhibitionParams | None,
    pattern: PatternTemplate,
    dt: float = DEFAULT_DT,
    hooks: PlasticityHooks | None = None,
    fitness: np.ndarray | None = None,
    mismatch=None,
    threshold: bool = True,
    record: bool = False,
    engine: str | None = None,
) -> tuple[EventLog, NetworkState]:
    """Run one pattern from a zero state.

    ``fitness`` (shape ``(N, m, d)``) is updated in place by the compiled
    loop.  ``hooks`` instead routes every pre/post event through Python
    callbacks and uses the numpy reference engine, which is much slower.
    ``inhibition=None`` disables the global inhibition, ``threshold=False``
    disables firing altogether (calibration runs).

    ``engine`` picks the compiled loop: ``"shared"`` (all filters share one
    time constant, O(N) per step) or ``"dense"`` (one filter pair per
    branch or per synapse; required for per-synapse mismatch).  By default
    the cheapest valid one is used.
    """
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if wiring.m != config.m or wiring.k != config.k:
        raise IntegrityError(f"wiring geometry (m={wiring.m}, k={wiring.k}) != config (m={config.m}, k={config.k})")
    if wiring.d != pattern.d:
        raise IntegrityError(f"wiring expects d={wiring.d} inputs, pattern has {pattern.d}")
    if hooks is not None and fitness is not None:
        raise ParameterError("pass either hooks or fitness, not both")
    if hooks is not None:
        return _simulate_reference(wiring, config, kernels, inhibition, pattern, dt, hooks, mismatch, threshold, record)

    N, m, d = wiring.N, wiring.m, wiring.d
    nsteps = n_steps(pattern.duration, dt)
    times, lines, steps = bin_events(pattern, dt, nsteps)
    units = _Units(wiring, kernels, dt, mismatch)
    cb, vthr_f, cc = _factors(mismatch, N, m)
    vthr = config.V_thr * vthr_f
    plastic = fitness is not None
    if plastic:
        if fitness.shape != (N, m, d) or fitness.dtype != np.float64 or not fitness.flags.c_contiguous:
            raise ParameterError(f"fitness must be a C-contiguous float64 array of shape {(N, m, d)}")
        c = fitness
    else:
        c = np.zeros((1, 1, 1))
    if inhibition is not None:
        inh_on, I0_inh = True, inhibition.I0_inh
        inh_ds = math.exp(-dt / inhibition.tau_s_inh)
        inh_df = math.exp(-dt / inhibition.tau_f_inh)
    else:
        inh_on, I0_inh, inh_ds, inh_df = False, 0.0, 1.0, 1.0

    post_step = np.empty(nsteps, dtype=np.int64)
    post_neuron = np.empty(nsteps, dtype=np.int64)
    max_v = np.full(N, -np.inf)
    sum_iin = np.zeros(N)
    sum_ib = np.zeros(1)
    trace = np.zeros((nsteps, N + 1)) if record else np.zeros((1, 1))
    V = np.zeros(N)
    inh = np.zeros(2)
    ebar = np.zeros(d)
    dm = math.exp(-dt / config.tau_m)
    if engine is None:
        engine = "dense" if units.upb > 1 else "shared"
    if engine == "shared":
        if units.upb > 1:
            raise ParameterError("per-synapse time constants need the dense engine")
        S, F = np.zeros(N * m), np.zeros(N * m)
        A, B, D = np.zeros(N), np.zeros(N), np.zeros(N)
        Ps, Pf, Qs, Qf = np.zeros(d), np.zeros(d), np.zeros(N), np.zeros(N)
        n_post, bad_step, bad_neuron, k_ref = _kernels.run_shared(
            nsteps, dt,
            steps, lines, times,
            units.line_ptr, units.line_unit, units.line_amp,
            N, m,
            config.x_thr, cb, vthr, dm, threshold,
            inh_on, I0_inh, inh_ds, inh_df,
            kernels.I0, kernels.tau_s, kernels.tau_f,
            plastic, c, cc,
            S, F, A, B, D, Ps, Pf, Qs, Qf, V, inh, ebar,
            post_step, post_neuron,
            max_v, sum_iin, sum_ib,
            record, trace,
        )
        el = (nsteps - 1 - k_ref) * dt
        al, be = math.exp(-el / kernels.tau_s), math.exp(-el / kernels.tau_f)
        us_b, uf_b = S * al, F * be
        tr_s, tr_f, ps, pf = Ps * al, Pf * be, Qs * al, Qf * be
    elif engine == "dense":
        us, uf = np.zeros(units.n), np.zeros(units.n)
        tr_s, tr_f = np.zeros(d), np.zeros(d)
        ps, pf = np.zeros(N), np.zeros(N)
        Ib, Iin = np.zeros(N * m), np.zeros(N)
        n_post, bad_step, bad_neuron = _kernels.run_dense(
            nsteps, dt,
            steps, lines, times,
            units.line_ptr, units.line_unit, units.line_amp,
            units.ds, units.df, units.tau_s, units.tau_f, units.uniform,
            N, m, units.upb,
            config.x_thr, cb, vthr, dm, threshold,
            inh_on, I0_inh, inh_ds, inh_df,
            kernels.I0, math.exp(-dt / kernels.tau_s), math.exp(-dt / kernels.tau_f), kernels.tau_s, kernels.tau_f,
            plastic, c, cc,
            us, uf, tr_s, tr_f, ps, pf, V, inh,
            Ib, Iin, ebar,
            post_step, post_neuron,
            max_v, sum_iin, sum_ib,
            record, trace,
        )
        if units.upb > 1:
            us_b = us.reshape(N * m, units.upb).sum(axis=1)
            uf_b = uf.reshape(N * m, units.upb).sum(axis=1)
        else:
            us_b, uf_b = us, uf
    else:
        raise ParameterError(f"unknown engine {engine!r}")
    if bad_step >= 0:
        raise SimulationError(f"non-finite membrane voltage at step {bad_step} (t={bad_step * dt:.6f} s), neuron {bad_neuron}")
    log = EventLog(dt, times, lines, steps, post_step[:n_post].copy(), post_neuron[:n_post].copy())
    t_last = float(post_step[n_post - 1] * dt) if n_post else None
    state = NetworkState(
        V=V, branch_slow=us_b.reshape(N, m), branch_fast=uf_b.reshape(N, m),
        pre_slow=tr_s, pre_fast=tr_f, post_slow=ps, post_fast=pf,
        inh_slow=float(inh[0]), inh_fast=float(inh[1]), t_last=t_last,
        branch_current=(us_b - uf_b).reshape(N, m), max_V=max_v, mean_input=sum_iin / nsteps,
        mean_branch_input=float(sum_ib[0]) / (nsteps * N * m),
        trace=trace if record else None,
    )
    return log, state


def _simulate_reference(wiring, config, kernels, inhibition, pattern, dt, hooks, mismatch, threshold, record):
    """Step-by-step numpy engine with Python callbacks; same ordering as the compiled loop."""
    N, m, k, d = wiring.N, wiring.m, wiring.k, wiring.d
    nsteps = n_steps(pattern.duration, dt)
    times, lines, steps = bin_events(pattern, dt, nsteps)
    cb, vthr_f, _ = _factors(mismatch, N, m)
    cb = cb.reshape(N, m)
    vthr = config.V_thr * vthr_f
    per_synapse = mismatch is not None and mismatch.varies_synapses
    if per_synapse:
        tau_s = kernels.tau_s * mismatch.tau_s
        tau_f = tau_s * (kernels.tau_f / kernels.tau_s)
        amp = kernels.I0 * mismatch.I0
        syn_s = np.zeros((N, m, k))
        syn_f = np.zeros((N, m, k))
        ds_syn, df_syn = np.exp(-dt / tau_s), np.exp(-dt / tau_f)
    else:
        wf = wiring.w.astype(np.float64)
        br_s = np.zeros((N, m))
        br_f = np.zeros((N, m))
    ds, df = math.exp(-dt / kernels.tau_s), math.exp(-dt / kernels.tau_f)
    dm = math.exp(-dt / config.tau_m)
    tr_s, tr_f = np.zeros(d), np.zeros(d)
    ps, pf = np.zeros(N), np.zeros(N)
    V = np.zeros(N)
    inh_s = inh_f = 0.0
    if inhibition is not None:
        ids, idf = math.exp(-dt / inhibition.tau_s_inh), math.exp(-dt / inhibition.tau_f_inh)
    post_steps, post_neurons = [], []
    max_v = np.full(N, -np.inf)
    sum_iin = np.zeros(N)
    sum_ib = 0.0
    trace = np.zeros((nsteps, N + 1)) if record else None
    ev = 0
    for step in range(nsteps):
        t = step * dt
        if per_synapse:
            syn_s *= ds_syn
            syn_f *= df_syn
        else:
            br_s *= ds
            br_f *= df
        tr_s *= ds
        tr_f *= df
        ps *= ds
        pf *= df
        if inhibition is not None:
            inh_s *= ids
            inh_f *= idf
        first = ev
        while ev < len(steps) and steps[ev] == step:
            i = lines[ev]
            lag = max(t - times[ev], 0.0)
            tr_s[i] += kernels.I0 * math.exp(-lag / kernels.tau_s)
            tr_f[i] += kernels.I0 * math.exp(-lag / kernels.tau_f)
            if per_synapse:
                hit = wiring.lines == i
                syn_s[hit] += amp[hit] * np.exp(-lag / tau_s[hit])
                syn_f[hit] += amp[hit] * np.exp(-lag / tau_f[hit])
            else:
                br_s += kernels.I0 * math.exp(-lag / kernels.tau_s) * wf[:, :, i]
                br_f += kernels.I0 * math.exp(-lag / kernels.tau_f) * wf[:, :, i]
            ev += 1
        Ib = (syn_s - syn_f).sum(axis=2) if per_synapse else br_s - br_f
        sum_ib += Ib.sum()
        bprime = branch_nonlinearity_derivative(Ib, config.x_thr)
        fbar = ps - pf
        for e in range(first, ev):
            hooks.on_pre(times[e], int(lines[e]), bprime, fbar)
        i_inh = inh_s - inh_f if inhibition is not None else 0.0
        Iin = (cb * branch_nonlinearity(Ib, config.x_thr)).sum(axis=1)
        sum_iin += Iin
        V = V * dm + (1.0 - dm) * (Iin - i_inh)
        if not np.all(np.isfinite(V)):
            bad = int(np.flatnonzero(~np.isfinite(V))[0])
            raise SimulationError(f"non-finite membrane voltage at step {step} (t={t:.6f} s), neuron {bad}")
        max_v = np.maximum(max_v, V)
        if record:
            trace[step, :N] = V
            trace[step, N] = i_inh
        if threshold:
            over = V - vthr
            if np.any(over >= 0):
                winner = int(np.argmax(np.where(over >= 0, over, -np.inf)))
                post_steps.append(step)
                post_neurons.append(winner)
                V[winner] = 0.0
                if record:
                    trace[step, winner] = 0.0
                hooks.on_post(t, winner, bprime, tr_s - tr_f)
                if inhibition is not None:
                    inh_s = inh_f = inhibition.I0_inh
                ps[winner] += kernels.I0
                pf[winner] += kernels.I0
    log = EventLog(dt, times, lines, steps, np.array(post_steps, dtype=np.int64), np.array(post_neurons, dtype=np.int64))
    if per_synapse:
        b_s, b_f = syn_s.sum(axis=2), syn_f.sum(axis=2)
    else:
        b_s, b_f = br_s, br_f
    state = NetworkState(
        V=V, branch_slow=b_s, branch_fast=b_f, pre_slow=tr_s, pre_fast=tr_f, post_slow=ps, post_fast=pf,
        inh_slow=inh_s, inh_fast=inh_f, t_last=post_steps[-1] * dt if post_steps else None,
        branch_current=Ib, max_V=max_v, mean_input=sum_iin / nsteps,
        mean_branch_input=sum_ib / (nsteps * N * m), trace=trace,
    )
    return log, state


def dump_trace(path, state: NetworkState, dt: float) -> None:
    """Per-step CSV ``t,V_0..V_{N-1},I_inh`` from a run made with ``record=True``."""
    if state.trace is None:
        raise ParameterError("state has no recorded trace; simulate with record=True")
    nsteps, cols = state.trace.shape
    header = ["t"] + [f"V_{n}" for n in range(cols - 1)] + ["I_inh"]
    data = np.column_stack([np.arange(nsteps) * dt, state.trace])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.9g")
