"""CSV families, wiring snapshots and the rewiring audit log."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .autotune import TuneResult
from .dynamics import Wiring
from .errors import FormatError, IntegrityError

SNAPSHOT_VERSION = 1


def _sec(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def _pct(x) -> str:
    return "" if x is None or math.isnan(x) else f"{x:.2f}"


def write_epoch_csv(path, rows: Sequence[tuple]) -> None:
    """Rows of ``(trial_id, epoch, l_mean_s, CM_s)``; epochs without spikes leave both values empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "epoch", "l_mean_s", "CM_s"])
        for tid, ep, lm, cm in rows:
            w.writerow([tid, ep, _sec(lm), _sec(cm)])


def epoch_rows(trial_id: int, result) -> list[tuple]:
    return [(trial_id, e + 1, lm, cm) for e, (lm, cm) in enumerate(zip(result.l_mean_trace, result.cm_trace))]


def write_trial_csv(path, results: Sequence, ids: Sequence[int] | None = None) -> None:
    ids = range(len(results)) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "success", "failure_mode", "ep_sat", "fp_rate"])
        for tid, r in zip(ids, results):
            w.writerow([tid, int(r.success), r.failure_mode or "none", r.ep_sat, f"{r.fp_rate:.6f}"])


def write_sweep_csv(path, points: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "success_pct", "ep_sat_avg", "cm_final_avg"])
        for p in points:
            w.writerow([p.point, _pct(p.success_pct), f"{p.ep_sat_avg:.2f}", _sec(p.cm_final_avg)])


def save_snapshot(path, wiring: Wiring, tune: TuneResult | None = None, **extra) -> None:
    doc = {"version": SNAPSHOT_VERSION, **wiring.to_dict(), "lines": wiring.lines.tolist()}
    if tune is not None:
        doc["tune"] = tune.to_dict()
    doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_snapshot(path, expect: tuple | None = None) -> tuple[Wiring, TuneResult | None, dict]:
    """Read a snapshot; ``expect=(N, m, k, d)`` checks the geometry header. Returns ``(wiring, tune, doc)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not JSON ({exc.msg})", exc.lineno) from exc
    for key in ("d", "N", "m", "k", "w"):
        if key not in doc:
            raise FormatError(f"{path}: missing field {key!r}")
    w = np.asarray(doc["w"], dtype=np.int64)
    header = (doc["N"], doc["m"], doc["k"], doc["d"])
    if w.shape != header[:2] + (header[3],):
        raise IntegrityError(f"{path}: matrix shape {w.shape} disagrees with header N, m, d = {header[0]}, {header[1]}, {header[3]}")
    if expect is not None and tuple(expect) != header:
        raise IntegrityError(f"{path}: snapshot geometry (N, m, k, d) = {header}, configuration expects {tuple(expect)}")
    if "lines" in doc:
        wiring = Wiring(doc["lines"], doc["d"])
        if not np.array_equal(wiring.w, w):
            raise IntegrityError(f"{path}: slot list and connection matrix disagree")
    else:
        wiring = Wiring.from_matrix(w)
    if wiring.k != doc["k"]:
        raise IntegrityError(f"{path}: rows sum to {wiring.k}, header says k = {doc['k']}")
    wiring.check()
    tune = TuneResult(**doc["tune"]) if "tune" in doc else None
    return wiring, tune, doc


class AuditLog:
    """JSON-lines sink for rewiring reports, one line per pattern."""

    def __init__(self, path, trial_id: int = 0):
        self.fh = open(path, "a")
        self.trial_id = trial_id

    def __call__(self, epoch, position, label, report):
        self.fh.write(report.to_json(trial=self.trial_id, epoch=epoch, position=position, class_label=label) + "\n")

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
