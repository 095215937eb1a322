"""Poisson pattern templates, jitter, epochs and the text spike-file format."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ParameterError

log = logging.getLogger(__name__)

_TIME_FMT = "{:.9f}"
_HEADER = "class_label,afferent_index,time_seconds"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PatternTemplate:
    """One class's array of ``d`` spike trains over ``[0, duration]``.

    ``afferents[i]`` is a sorted, read-only float64 array of spike times.
    Afferents whose ``active_mask`` entry is False never carry spikes.
    """

    class_label: int
    afferents: tuple
    duration: float
    active_mask: tuple

    def __post_init__(self):
        if not self.afferents:
            raise ParameterError("pattern needs at least one afferent")
        if not self.duration > 0:
            raise ParameterError(f"duration must be positive, got {self.duration}")
        if len(self.active_mask) != len(self.afferents):
            raise ParameterError("active_mask length differs from afferent count")
        trains = tuple(_frozen(a) for a in self.afferents)
        for i, a in enumerate(trains):
            if a.size and (a[0] < 0 or a[-1] > self.duration):
                raise ParameterError(f"afferent {i} has spikes outside [0, {self.duration}]")
            if a.size > 1 and np.any(np.diff(a) < 0):
                raise ParameterError(f"afferent {i} spike times are not sorted")
            if a.size and not self.active_mask[i]:
                raise ParameterError(f"afferent {i} is masked inactive but has spikes")
        object.__setattr__(self, "afferents", trains)
        object.__setattr__(self, "active_mask", tuple(bool(x) for x in self.active_mask))

    @property
    def d(self) -> int:
        return len(self.afferents)

    @property
    def spike_count(self) -> int:
        return sum(a.size for a in self.afferents)

    def events(self) -> tuple[np.ndarray, np.ndarray]:
        """All spikes as ``(times, lines)`` sorted by time, then line."""
        lines = np.concatenate([np.full(a.size, i, dtype=np.int64) for i, a in enumerate(self.afferents)])
        times = np.concatenate(self.afferents) if lines.size else np.zeros(0)
        order = np.lexsort((lines, times))
        return times[order], lines[order]

    def same_spikes(self, other: "PatternTemplate", atol: float = 0.0) -> bool:
        if self.d != other.d or self.class_label != other.class_label:
            return False
        if self.active_mask != other.active_mask or not math.isclose(self.duration, other.duration):
            return False
        return all(
            a.shape == b.shape and np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in zip(self.afferents, other.afferents)
        )


@dataclass(frozen=True)
class JitterSpec:
    sigma_jitter: float = 0.0

    def __post_init__(self):
        if not self.sigma_jitter >= 0:
            raise ParameterError(f"sigma_jitter must be >= 0, got {self.sigma_jitter}")


def _poisson_train(rate: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    if rate == 0:
        return np.zeros(0)
    expected = rate * duration
    chunk = int(expected + 6 * math.sqrt(expected) + 10)
    times = np.cumsum(rng.exponential(1.0 / rate, size=chunk))
    while times[-1] <= duration:
        more = np.cumsum(rng.exponential(1.0 / rate, size=chunk)) + times[-1]
        times = np.concatenate([times, more])
    return times[times <= duration]


def gen_poisson_template(
    d: int,
    rate: float,
    duration: float,
    active_fraction: float = 1.0,
    class_label: int = 1,
    rng: np.random.Generator | None = None,
) -> PatternTemplate:
    """Homogeneous Poisson trains on ``d`` afferents.

    ``floor(d * (1 - active_fraction))`` afferents, chosen uniformly, are left
    empty for the whole lifetime of the template.
    """
    if d < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    if rate < 0:
        raise ParameterError(f"rate must be >= 0, got {rate}")
    if not duration > 0:
        raise ParameterError(f"duration must be > 0, got {duration}")
    if not 0 < active_fraction <= 1:
        raise ParameterError(f"active_fraction must be in (0, 1], got {active_fraction}")
    rng = np.random.default_rng() if rng is None else rng
    n_empty = int(math.floor(d * (1.0 - active_fraction) + 1e-12))
    mask = np.ones(d, dtype=bool)
    if n_empty:
        mask[rng.choice(d, size=n_empty, replace=False)] = False
    trains = [_poisson_train(rate, duration, rng) if mask[i] else np.zeros(0) for i in range(d)]
    return PatternTemplate(class_label, tuple(trains), float(duration), tuple(mask))


def apply_jitter(template: PatternTemplate, spec: JitterSpec, rng: np.random.Generator) -> PatternTemplate:
    """Shift every spike by an independent N(0, sigma^2) draw, clamp to [0, T_p], re-sort."""
    T = template.duration
    counts = [a.size for a in template.afferents]
    shifts = rng.normal(0.0, spec.sigma_jitter, size=sum(counts))
    out = []
    pos = 0
    for a, n in zip(template.afferents, counts):
        if spec.sigma_jitter == 0:
            out.append(a)
        else:
            out.append(np.sort(np.clip(a + shifts[pos:pos + n], 0.0, T)))
        pos += n
    return PatternTemplate(template.class_label, tuple(out), T, template.active_mask)


def make_epoch(
    templates: Sequence[PatternTemplate], jitter: JitterSpec, rng: np.random.Generator
) -> list[PatternTemplate]:
    """One fresh jittered instance per class, in uniformly random order."""
    labels = [t.class_label for t in templates]
    if len(set(labels)) != len(labels):
        raise ParameterError(f"duplicate class labels in {labels}")
    order = rng.permutation(len(templates))
    return [apply_jitter(templates[i], jitter, rng) for i in order]


def save_patterns(path, templates: Sequence[PatternTemplate], meta: dict | None = None) -> None:
    """Write ``class_label,afferent_index,time_seconds`` records with a ``#`` metadata block."""
    templates = list(templates)
    if not templates:
        raise ParameterError("nothing to save")
    d = templates[0].d
    T = templates[0].duration
    for t in templates:
        if t.d != d or not math.isclose(t.duration, T):
            raise ParameterError("all templates in one file must share d and duration")
    header = {"d": d, "T_p": repr(float(T)), "C": len(templates)}
    header.update(meta or {})
    lines = [f"# {k}={v}" for k, v in header.items()]
    for t in templates:
        off = [str(i) for i, on in enumerate(t.active_mask) if not on]
        lines.append(f"# inactive.{t.class_label}={';'.join(off)}")
    lines.append(_HEADER)
    for t in templates:
        for i, a in enumerate(t.afferents):
            lines.extend(f"{t.class_label},{i},{_TIME_FMT.format(x)}" for x in a)
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict[str, str]:
    meta = {}
    with open(path) as fh:
        for raw in fh:
            if not raw.startswith("#"):
                break
            key, _, val = raw[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
    return meta


def load_patterns(path) -> list[PatternTemplate]:
    """Inverse of :func:`save_patterns`. Unsorted trains are accepted and re-sorted."""
    meta: dict[str, str] = {}
    inactive: dict[int, set[int]] = {}
    spikes: dict[int, dict[int, list[float]]] = {}
    seen_header = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s:
                continue
            if s.startswith("#"):
                key, sep, val = s[1:].partition("=")
                if not sep:
                    raise FormatError(f"metadata record without '=': {s!r}", lineno)
                key, val = key.strip(), val.strip()
                if key.startswith("inactive."):
                    try:
                        inactive[int(key.split(".", 1)[1])] = {int(x) for x in val.split(";") if x}
                    except ValueError:
                        raise FormatError(f"bad inactive list {s!r}", lineno) from None
                else:
                    meta[key] = val
                continue
            if not seen_header:
                if s != _HEADER:
                    raise FormatError(f"expected header {_HEADER!r}, got {s!r}", lineno)
                seen_header = True
                continue
            parts = s.split(",")
            if len(parts) != 3:
                raise FormatError(f"expected 3 fields, got {len(parts)}", lineno)
            try:
                label, idx, t = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise FormatError(f"unparseable record {s!r}", lineno) from None
            spikes.setdefault(label, {}).setdefault(idx, []).append(t)
    try:
        d = int(meta["d"])
        T = float(meta["T_p"])
    except (KeyError, ValueError):
        raise FormatError("missing or invalid 'd'/'T_p' metadata") from None
    if d < 1:
        raise FormatError("empty afferent list (d < 1)")
    labels = sorted(set(spikes) | set(inactive))
    if "C" in meta and int(meta["C"]) != len(labels):
        # classes whose every afferent is silent leave no records and no inactive entry
        labels = sorted(set(labels) | set(range(1, int(meta["C"]) + 1)))
    out = []
    for label in labels:
        trains = []
        unsorted = False
        for i in range(d):
            a = np.asarray(spikes.get(label, {}).pop(i, []), dtype=np.float64)
            if a.size > 1 and np.any(np.diff(a) < 0):
                unsorted = True
                a = np.sort(a)
            if a.size and (a[0] < 0 or a[-1] > T):
                raise FormatError(f"class {label} afferent {i}: spike outside [0, {T}]")
            trains.append(a)
        if spikes.get(label):
            raise FormatError(f"class {label}: afferent index outside [0, {d})")
        if unsorted:
            log.warning("%s: class %d has unsorted spike times; re-sorted on load", path, label)
        off = inactive.get(label, set())
        mask = tuple(i not in off for i in range(d))
        try:
            out.append(PatternTemplate(label, tuple(trains), T, mask))
        except ParameterError as exc:
            raise FormatError(f"class {label}: {exc}") from None
    return out


def empirical_rate(templates: Iterable[PatternTemplate]) -> float:
    spikes = 0
    span = 0.0
    for t in templates:
        spikes += t.spike_count
        span += t.duration * sum(t.active_mask)
    return spikes / span if span else 0.0
