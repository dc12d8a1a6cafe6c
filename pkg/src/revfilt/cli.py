"""Command-line interface.

Subcommands:

* ``run``    - reverse one filtered image and write a trace / restored image
* ``bench``  - run a dataset sweep from a config file
* ``doctor`` - verify that a filter behaves like a proper black box
* ``plot``   - dump PSNR-vs-iteration columns from trace CSVs
"""

import argparse
import sys

import numpy as np

from .filters import FilterError, parse_filter_spec
from .harness import (load_config, make_method, parse_accel_spec,
                      parse_method_tag, run_cell, run_experiment)
from .image import load_image, save_image
from .methods import BoundProblem
from .trace import read_trace_csv, write_trace_csv


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="revfilt",
        description="Reverse black-box image filters by accelerated iteration.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="reverse a single filtered image")
    run_p.add_argument("--image", required=True,
                       help="input image; ground truth unless --truth is given, "
                            "in which case it is the observation")
    run_p.add_argument("--truth", default=None,
                       help="ground-truth image; when omitted the observation is "
                            "synthesized by filtering --image")
    run_p.add_argument("--filter", required=True, dest="filter_spec",
                       help="filter spec, e.g. guided_self:window=5,eps=0.1")
    run_p.add_argument("--method", required=True,
                       help="reverse method: t|r|tda|P|p (P and p differ)")
    run_p.add_argument("--accel", default="none",
                       help="acceleration spec, e.g. anderson:m=5 or adam:lambda=0.01")
    run_p.add_argument("--iters", type=int, default=100, help="iteration budget")
    run_p.add_argument("--trace", default=None, help="write the trace CSV here")
    run_p.add_argument("--out", default=None, help="write the restored image here")
    run_p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="method step weight override")
    run_p.add_argument("--alpha", type=float, default=None,
                       help="R-method damping coefficient override")
    run_p.add_argument("--early-stop", action="store_true",
                       help="stop once the relative residual drops below 1e-6")

    bench_p = sub.add_parser("bench", help="dataset sweep from a config file")
    bench_p.add_argument("--config", required=True, help="benchmark config file")
    bench_p.add_argument("--out", default=None, help="output directory override")
    bench_p.add_argument("--jobs", type=int, default=None,
                         help="worker threads (REVFILT_JOBS env overrides)")

    doc_p = sub.add_parser("doctor", help="check a filter's black-box contract")
    doc_p.add_argument("--filter", required=True, dest="filter_spec",
                       help="filter spec to check (typically extern:cmd=...)")
    doc_p.add_argument("--size", type=int, default=64,
                       help="probe image side length")

    plot_p = sub.add_parser("plot", help="emit two-column PSNR data from traces")
    plot_p.add_argument("--trace", required=True, nargs="+",
                        help="trace CSV file(s)")
    plot_p.add_argument("--suffix", default=".dat",
                        help="output suffix replacing .csv")
    return parser


def _cmd_run(args) -> int:
    fspec = parse_filter_spec(args.filter_spec)
    accel = parse_accel_spec(args.accel)
    tag = parse_method_tag(args.method)
    overrides = {}
    if args.lam is not None:
        overrides["lam"] = args.lam
    if args.alpha is not None:
        overrides["alpha"] = args.alpha

    g = fspec.build()
    if args.truth is None:
        truth = load_image(args.image)
        b = g.apply(truth)
    else:
        truth = load_image(args.truth)
        b = load_image(args.image)
        if b.shape != truth.shape:
            raise ValueError(
                f"observation {b.shape} and truth {truth.shape} dimensions differ")

    prob = BoundProblem(g, b, make_method(tag, overrides))
    outcome = run_cell(prob, accel, budget=args.iters, ground_truth=truth,
                       early_stop=args.early_stop, record_time=True,
                       image_id=args.image)
    trace = outcome.trace
    trace.filter_label = fspec.label

    if args.trace:
        write_trace_csv(trace, args.trace)
    if args.out:
        save_image(outcome.best, args.out)

    status = "DIVERGED" if trace.diverged else "ok"
    print(f"method={tag} accel={accel.label} filter={fspec.label} "
          f"iters={len(trace.records) - 1} "
          f"psnr {trace.start_psnr:.2f} -> {trace.final_psnr:.2f} dB "
          f"(best {max(p for p in trace.psnr_series if p is not None):.2f}) "
          f"calls={trace.records[-1].filter_calls} [{status}]")
    return 0


def _cmd_bench(args) -> int:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.jobs is not None:
        cfg.jobs = args.jobs
    traces, summaries = run_experiment(cfg)
    print(f"ran {len(traces)} cells -> {cfg.out_dir}")
    for key in sorted(summaries):
        s = summaries[key]
        print(f"  {key[0]} {key[1]}+{key[2]}: p_max={s.cell_text}")
    return 0


def _probe_image(size: int) -> np.ndarray:
    # deterministic mix of gradient, disc and stripes; exercises smooth
    # regions, an edge and texture
    y, x = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = 0.25 + 0.5 * x
    img += 0.2 * ((x - 0.5) ** 2 + (y - 0.5) ** 2 < 0.1)
    img += 0.05 * np.sin(14.0 * np.pi * y)
    return np.clip(img, 0.0, 1.0)


def _cmd_doctor(args) -> int:
    fspec = parse_filter_spec(args.filter_spec)
    g = fspec.build()
    probe = _probe_image(args.size)
    failures = []

    try:
        first = g.apply(probe)
    except Exception as exc:  # noqa: BLE001 - report, don't crash
        print(f"doctor: FAIL apply: {exc}")
        return 1
    print(f"doctor: apply ok ({args.size}x{args.size} probe)")

    if first.shape != probe.shape:
        failures.append(f"dimension preservation: {probe.shape} -> {first.shape}")
    else:
        print("doctor: dimension preservation ok")

    if not np.all(np.isfinite(first)):
        failures.append("output contains non-finite pixels")
    else:
        print("doctor: finite output ok")

    try:
        second = g.apply(probe)
    except Exception as exc:  # noqa: BLE001 - report, don't crash
        print(f"doctor: FAIL second apply: {exc}")
        return 1
    if first.shape == second.shape and np.array_equal(first, second):
        print("doctor: determinism ok (two applies bitwise equal)")
    else:
        failures.append("determinism: two applies on equal input differ")

    if g.call_count != 2:
        failures.append(f"call counter expected 2, got {g.call_count}")
    else:
        print("doctor: call counting ok")

    for msg in failures:
        print(f"doctor: FAIL {msg}")
    print(f"doctor: {'FAILED' if failures else 'PASSED'} for {fspec.label}")
    return 1 if failures else 0


def _cmd_plot(args) -> int:
    for path in args.trace:
        trace = read_trace_csv(path)
        out_path = path[:-4] + args.suffix if path.endswith(".csv") else path + args.suffix
        with open(out_path, "w") as fh:
            for r in trace.records:
                if r.psnr_db is not None:
                    fh.write(f"{r.k} {r.psnr_db!r}\n")
        print(f"wrote {out_path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler = {"run": _cmd_run, "bench": _cmd_bench,
               "doctor": _cmd_doctor, "plot": _cmd_plot}[args.command]
    try:
        return handler(args)
    except (ValueError, OSError, FilterError) as exc:
        print(f"revfilt {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
