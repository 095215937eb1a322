"""Spike-timing fitness accumulation and post-pattern synapse swaps.

The fitness table is a plain float64 array ``c[n, j, i]``: one accumulator
per (neuron, branch, input line).  Every synapse on branch ``j`` driven by
line ``i`` shares that value, and a silent candidate on the same branch
would too, so candidate fitness after the pattern is a lookup.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import EventLog, Wiring
from .errors import IntegrityError, ParameterError


def new_fitness(N: int, m: int, d: int) -> np.ndarray:
    return np.zeros((N, m, d))


def reset_fitness(c: np.ndarray) -> np.ndarray:
    c.fill(0.0)
    return c


def depress(c, line, bprime, fbar, cc=None):
    """Pre-spike on ``line``: ``c[n, j, line] -= b'_j * fbar_n`` for every neuron and branch."""
    delta = bprime * np.asarray(fbar)[:, None]
    if cc is not None:
        delta = delta * cc
    c[:, :, line] -= delta
    return c


def potentiate(c, neuron, bprime, ebar, cc=None):
    """Post-spike of ``neuron``: ``c[neuron, j, i] += b'_j * ebar_i`` over all branches and lines."""
    g = bprime[neuron] if cc is None else bprime[neuron] * cc[neuron]
    c[neuron] += np.outer(g, ebar)
    return c


class FitnessHooks:
    """Callbacks for the reference engine that apply :func:`depress` / :func:`potentiate`."""

    def __init__(self, c, cc=None):
        self.c = c
        self.cc = cc

    def on_pre(self, t, line, bprime, fbar):
        depress(self.c, line, bprime, fbar, self.cc)

    def on_post(self, t, neuron, bprime, ebar):
        potentiate(self.c, neuron, bprime, ebar, self.cc)


@dataclass
class RewireRecord:
    neuron: int
    branch: int
    line_min: int
    fitness_min: float
    candidates: list
    candidate_fitness: list
    line_max: int
    fitness_max: float
    slot: int
    swapped: bool


@dataclass
class RewireReport:
    records: list = field(default_factory=list)

    @property
    def neurons(self) -> list:
        return [r.neuron for r in self.records]

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, "records": [asdict(r) for r in self.records]})


def rewire_after_pattern(
    wiring: Wiring, c: np.ndarray, log: EventLog, n_R: int, rng: np.random.Generator
) -> RewireReport:
    """Swap the worst synapse of every neuron that spiked for the best of ``n_R`` random lines.

    For neuron ``q``: the actual synapse with the lowest fitness (ties to
    lowest branch, then lowest line) is replaced on its branch by the
    candidate line with the highest fitness on that branch (ties to lowest
    line).  Candidate draws happen in ascending neuron order.  ``wiring`` is
    modified in place.
    """
    d = wiring.d
    if not 1 <= n_R <= d:
        raise ParameterError(f"n_R must be in [1, {d}], got {n_R}")
    sums = wiring.w.sum(axis=2)
    if np.any(sums != wiring.k) or np.any(wiring.w < 0):
        raise IntegrityError("wiring row sums differ from k before rewiring")
    report = RewireReport()
    for q in np.unique(log.post_neurons):
        q = int(q)
        cq = np.where(wiring.w[q] > 0, c[q], np.inf)
        flat = int(np.argmin(cq))  # row-major: lowest branch, then lowest line
        j, i_min = divmod(flat, d)
        cand = np.sort(rng.choice(d, size=n_R, replace=False))
        cf = c[q, j, cand]
        r = int(cand[int(np.argmax(cf))])
        slot = wiring.swap(q, j, i_min, r)
        report.records.append(RewireRecord(
            neuron=q, branch=j, line_min=i_min, fitness_min=float(c[q, j, i_min]),
            candidates=cand.tolist(), candidate_fitness=cf.tolist(),
            line_max=r, fitness_max=float(c[q, j, r]), slot=slot, swapped=r != i_min,
        ))
    return report
