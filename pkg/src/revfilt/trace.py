"""Per-iteration trace records, the shared iteration runner, and CSV I/O.

The CSV schema is fixed: ``k,psnr_db,residual,filter_calls,elapsed_ms,
omega_or_lambda,flags`` with a header row. Missing values (no ground
truth, timing disabled, the final row's residual) render as empty fields.
Floats are written with shortest round-trip repr so reruns are bitwise
comparable.

Residual semantics: the residual recorded at row k is the Frobenius norm
of the filter residual harvested while the iteration consumed iterate k
(its first residual evaluation; for lookahead schemes that is the
lookahead point). Evaluating the final iterate's residual would cost one
extra filter call and break the per-iteration cost accounting, so the
last row's residual is left empty.
"""

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .image import frobenius_norm, psnr

#: a trace is flagged diverged when its final PSNR drops this far below
#: the starting PSNR (or when an iterate goes non-finite)
DIVERGENCE_MARGIN_DB = 0.5

NONFINITE_FLAG = "nonfinite-abort"

CSV_HEADER = ["k", "psnr_db", "residual", "filter_calls", "elapsed_ms",
              "omega_or_lambda", "flags"]


@dataclass
class TraceRecord:
    k: int
    psnr_db: Optional[float]
    residual: Optional[float]
    filter_calls: int
    elapsed_ms: Optional[float]
    coeff: Optional[float] = None
    flags: tuple = ()


@dataclass
class IterationTrace:
    """Everything recorded about one reversal run."""

    records: list
    method: str
    accel: str
    filter_label: str = ""
    image_id: str = ""
    diverged: bool = False
    flags: list = field(default_factory=list)

    @property
    def psnr_series(self):
        return [r.psnr_db for r in self.records]

    @property
    def final_psnr(self):
        vals = [r.psnr_db for r in self.records if r.psnr_db is not None]
        return vals[-1] if vals else None

    @property
    def start_psnr(self):
        return self.records[0].psnr_db if self.records else None


class RunOutcome(NamedTuple):
    trace: IterationTrace
    best: np.ndarray


def run_iteration_loop(
    prob,
    stepper: Callable,
    x0=None,
    budget: int = 100,
    ground_truth=None,
    *,
    method_label: str,
    accel_label: str,
    filter_label: str = "",
    image_id: str = "",
    early_stop: bool = False,
    early_stop_rtol: float = 1e-6,
    record_time: bool = True,
) -> RunOutcome:
    """Drive ``stepper`` for ``budget`` iterations, recording a trace.

    ``stepper(k, x)`` returns ``(x_next, coeff, flags)``. Rows run from
    k=0 (the initial iterate) to the last iterate reached; filter calls
    are counted relative to the loop start. A non-finite iterate stops
    the loop and flags the trace as diverged; the trace built so far is
    preserved. The best-PSNR iterate (final iterate when no ground truth
    is given) is returned alongside the trace.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    x = prob.b if x0 is None else x0
    calls0 = prob.g.call_count
    t0 = time.perf_counter()

    def now_ms():
        return (time.perf_counter() - t0) * 1000.0 if record_time else None

    def psnr_of(img):
        return psnr(ground_truth, img) if ground_truth is not None else None

    records = [TraceRecord(0, psnr_of(x), None, 0, now_ms())]
    best_psnr, best_x = records[0].psnr_db, x
    diverged = False
    trace_flags: list[str] = []
    b_norm = frobenius_norm(prob.b)

    for k in range(budget):
        prob.begin_step()
        x_next, coeff, step_flags = stepper(k, x)
        records[k].residual = prob.step_residual_norm
        flags = tuple(step_flags) + tuple(prob.step_flags)
        trace_flags.extend(flags)

        if not np.all(np.isfinite(x_next)):
            flags = flags + (NONFINITE_FLAG,)
            trace_flags.append(NONFINITE_FLAG)
            records.append(TraceRecord(
                k + 1, None, None, prob.g.call_count - calls0, now_ms(),
                coeff, flags))
            diverged = True
            break

        x = x_next
        p = psnr_of(x)
        if p is not None and (best_psnr is None or p > best_psnr):
            best_psnr, best_x = p, x
        records.append(TraceRecord(
            k + 1, p, None, prob.g.call_count - calls0, now_ms(), coeff, flags))

        if (early_stop and records[k].residual is not None and b_norm > 0
                and records[k].residual / b_norm < early_stop_rtol):
            break

    start, final = records[0].psnr_db, records[-1].psnr_db
    if start is not None and final is not None:
        diverged = diverged or final < start - DIVERGENCE_MARGIN_DB

    trace = IterationTrace(
        records=records, method=method_label, accel=accel_label,
        filter_label=filter_label, image_id=image_id,
        diverged=diverged, flags=trace_flags)
    if ground_truth is None:
        best_x = x
    return RunOutcome(trace, best_x)


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(trace: IterationTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in trace.records:
            writer.writerow([
                r.k, _fmt(r.psnr_db), _fmt(r.residual), r.filter_calls,
                _fmt(r.elapsed_ms), _fmt(r.coeff), "|".join(r.flags),
            ])


def read_trace_csv(path) -> IterationTrace:
    """Read back a trace CSV (labels are not stored in the file)."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected trace CSV header in {path}")
        for row in reader:
            records.append(TraceRecord(
                k=int(row[0]),
                psnr_db=float(row[1]) if row[1] else None,
                residual=float(row[2]) if row[2] else None,
                filter_calls=int(row[3]),
                elapsed_ms=float(row[4]) if row[4] else None,
                coeff=float(row[5]) if row[5] else None,
                flags=tuple(row[6].split("|")) if row[6] else (),
            ))
    trace = IterationTrace(records=records, method="", accel="")
    start, final = trace.start_psnr, trace.final_psnr
    if start is not None and final is not None:
        trace.diverged = final < start - DIVERGENCE_MARGIN_DB
    if any(NONFINITE_FLAG in r.flags for r in records):
        trace.diverged = True
    return trace
