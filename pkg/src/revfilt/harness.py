"""Dataset runner: config parsing, the (image, filter, method, accel)
sweep, improvement metrics and summary tables.

The benchmark protocol: for every cell the harness builds a fresh filter,
synthesizes the observation b = g(x_true) from the ground-truth image,
reverses it starting from x0 = b, writes one trace CSV per cell, and
aggregates the per-image maximum PSNR-improvement percentages into one
summary table per method (rows = filters, columns = accelerations) plus a
best-of table. Non-convergent cells (at least half of their runs flagged
diverged) are marked with a trailing ``*``.

Config files are flat INI text (``[section]`` headers, ``key = value``
lines); see the README for the grammar.
"""

import concurrent.futures
import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .filters import parse_filter_spec
from .fixed_point import AndersonState, ChebyshevSchedule, run_fixed_point
from .gradient import AgdState, SgdrSchedule, run_gradient_descent
from .image import load_image
from .methods import BoundProblem, MethodKind
from .trace import IterationTrace, write_trace_csv

FP_ACCELS = ("none", "mann", "chb", "anderson", "irons", "epsilon")
GD_ACCELS = ("gd", "mgd", "nag", "rmsprop", "adadelta", "adam", "sgdr")

#: per-method default (lambda_min, lambda_max) for the sgdr schedule
_SGDR_RANGES = {"T": (1.0, 2.0), "R": (1.0, 2.0), "TDA": (0.0, 3.0),
                "P": (0.0, 1.0), "p": (0.0, 3.0)}

#: default step size for the magnitude-normalizing rules, whose update is
#: O(lam) per pixel regardless of the residual scale
_NORMALIZED_STEP_DEFAULT = 0.01

_METHOD_ALIASES = {"t": "T", "T": "T", "r": "R", "R": "R",
                   "tda": "TDA", "TDA": "TDA", "Tda": "TDA",
                   "P": "P", "p": "p"}


def parse_method_tag(token: str) -> str:
    """Normalize a CLI/config method token; ``P`` and ``p`` stay distinct."""
    tag = _METHOD_ALIASES.get(token.strip())
    if tag is None:
        raise ValueError(f"unknown method '{token}' (expected one of t|r|tda|P|p)")
    return tag


@dataclass(frozen=True)
class AccelSpec:
    """An acceleration scheme name with optional parameter overrides."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in FP_ACCELS + GD_ACCELS:
            raise ValueError(
                f"unknown acceleration '{self.name}' "
                f"(known: {', '.join(FP_ACCELS + GD_ACCELS)})")

    @property
    def family(self) -> str:
        return "fp" if self.name in FP_ACCELS else "gd"

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        parts = [f"{k}{self.params[k]}" for k in sorted(self.params)]
        return self.name + "-" + "-".join(parts)


def parse_accel_spec(text: str) -> AccelSpec:
    """Parse ``name`` or ``name:key=val,key=val``."""
    name, sep, rest = text.partition(":")
    params = {}
    if sep and rest.strip():
        for pair in rest.split(","):
            key, eq, val = pair.partition("=")
            if not eq:
                raise ValueError(f"bad acceleration parameter '{pair}'")
            params[key.strip()] = val.strip()
    return AccelSpec(name.strip(), params)


def _fget(params, key, default):
    return float(params[key]) if key in params else default


def _iget(params, key, default):
    return int(params[key]) if key in params else default


def run_cell(
    prob: BoundProblem,
    accel: AccelSpec,
    x0=None,
    budget: int = 100,
    ground_truth=None,
    *,
    early_stop: bool = False,
    record_time: bool = True,
    image_id: str = "",
):
    """Run one (problem, acceleration) cell and return its RunOutcome.

    Acceleration parameters not given in ``accel.params`` fall back to
    the per-method defaults (Chebyshev clip 1 for the P method, 3
    otherwise; per-method sgdr ranges; momentum step 1, beta 0.9; Adam
    and RMSProp step 0.01).
    """
    tag = prob.method.tag
    p = accel.params
    common = dict(x0=x0, budget=budget, ground_truth=ground_truth,
                  early_stop=early_stop, record_time=record_time,
                  image_id=image_id, accel_label=accel.label)

    if accel.family == "fp":
        if accel.name == "none":
            return run_fixed_point(prob, "picard", **common)
        if accel.name == "mann":
            return run_fixed_point(prob, "mann", omega=_fget(p, "omega", 1.0), **common)
        if accel.name == "chb":
            sched = ChebyshevSchedule(
                period_T=_iget(p, "T", 32),
                clip_alpha=_fget(p, "alpha", 1.0 if tag == "P" else 3.0),
                lambda1=_fget(p, "l1", 0.0),
                lambda2=_fget(p, "l2", 1.0))
            return run_fixed_point(prob, "chebyshev", schedule=sched, **common)
        if accel.name == "anderson":
            state = AndersonState(window_m=_iget(p, "m", 5),
                                  ridge=_fget(p, "ridge", 1e-10))
            return run_fixed_point(prob, "anderson", anderson=state, **common)
        return run_fixed_point(prob, accel.name,
                               guard_eps=_fget(p, "guard", 1e-12), **common)

    if accel.name == "sgdr":
        lo, hi = _SGDR_RANGES[tag]
        sched = SgdrSchedule(period_T=_iget(p, "T", 5),
                             lambda_min=_fget(p, "min", lo),
                             lambda_max=_fget(p, "max", hi))
        state = AgdState("sgdr", sgdr=sched)
    elif accel.name == "adam":
        state = AgdState("adam",
                         lam=_fget(p, "lambda", _NORMALIZED_STEP_DEFAULT),
                         beta=_fget(p, "beta1", 0.9),
                         beta2=_fget(p, "beta2", 0.999),
                         eps=_fget(p, "eps", 1e-8),
                         adam_bias=p.get("bias", "power"))
    elif accel.name == "rmsprop":
        state = AgdState("rmsprop",
                         lam=_fget(p, "lambda", _NORMALIZED_STEP_DEFAULT),
                         beta=_fget(p, "beta", 0.9),
                         eps=_fget(p, "eps", 1e-8))
    elif accel.name == "adadelta":
        state = AgdState("adadelta", beta=_fget(p, "beta", 0.9),
                         eps=_fget(p, "eps", 1e-8))
    else:  # gd, mgd, nag
        state = AgdState(accel.name, lam=_fget(p, "lambda", 1.0),
                         beta=_fget(p, "beta", 0.9))
    return run_gradient_descent(prob, state, **common)


# ---------------------------------------------------------------------------
# Improvement metrics
# ---------------------------------------------------------------------------

def improvement_series(trace: IterationTrace) -> list[float]:
    """PSNR improvement percentages (p_k - p_0) / p_0 * 100 per iteration.

    Rows without a PSNR value (no ground truth, non-finite abort) are
    skipped. Requires a positive starting PSNR.
    """
    series = [r.psnr_db for r in trace.records if r.psnr_db is not None]
    if not series:
        raise ValueError("trace has no PSNR records (was ground truth supplied?)")
    p0 = series[0]
    if p0 <= 0:
        raise ValueError(f"starting PSNR must be positive, got {p0}")
    return [(pk - p0) / p0 * 100.0 for pk in series]


@dataclass
class ImprovementSummary:
    """Mean over images of the maximum per-iteration improvement."""

    filter_label: str
    method: str
    accel: str
    image_count: int
    per_image: list  # (image_id, max improvement %) pairs
    p_max: float
    diverged_count: int

    @property
    def non_convergent(self) -> bool:
        # majority rule, mirroring the per-cell divergence marking
        return 2 * self.diverged_count >= self.image_count

    @property
    def cell_text(self) -> str:
        return f"{self.p_max:.1f}" + ("*" if self.non_convergent else "")


def aggregate_pmax(traces: list[IterationTrace]) -> ImprovementSummary:
    """Aggregate same-cell traces from several images."""
    if not traces:
        raise ValueError("need at least one trace")
    key = (traces[0].filter_label, traces[0].method, traces[0].accel)
    for t in traces[1:]:
        if (t.filter_label, t.method, t.accel) != key:
            raise ValueError("traces mix different (filter, method, accel) cells")
    per_image = [(t.image_id, max(improvement_series(t))) for t in traces]
    p_max = sum(v for _, v in per_image) / len(per_image)
    return ImprovementSummary(
        filter_label=key[0], method=key[1], accel=key[2],
        image_count=len(traces), per_image=per_image, p_max=p_max,
        diverged_count=sum(t.diverged for t in traces))


# ---------------------------------------------------------------------------
# Sweep configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    image_paths: list
    filters: list
    methods: list
    accels: list
    budget: int = 100
    out_dir: str = "results"
    jobs: int = 1
    timing: bool = False
    early_stop: bool = False
    method_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not self.image_paths:
            raise ValueError("no input images configured")
        if not self.filters:
            raise ValueError("no filters configured")
        if not self.methods or not self.accels:
            raise ValueError("empty method/acceleration grid")


def _split_list(value, sep=","):
    return [tok.strip() for tok in value.split(sep) if tok.strip()]


def load_config(path) -> RunConfig:
    """Parse a benchmark config file into a RunConfig."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ValueError(f"cannot read config file: {path}")

    if not cp.has_section("images"):
        raise ValueError("config needs an [images] section")
    paths = []
    if cp.has_option("images", "paths"):
        paths.extend(_split_list(cp.get("images", "paths")))
    if cp.has_option("images", "dir"):
        directory = Path(cp.get("images", "dir"))
        found = sorted(
            str(f) for f in directory.iterdir()
            if f.suffix.lower() in (".png", ".pgm", ".pnm"))
        paths.extend(found)

    if not cp.has_section("filters") or not cp.has_option("filters", "specs"):
        raise ValueError("config needs [filters] specs = ...")
    filters = [parse_filter_spec(tok)
               for tok in _split_list(cp.get("filters", "specs"), ";")]

    if not cp.has_section("grid"):
        raise ValueError("config needs a [grid] section")
    methods = [parse_method_tag(tok)
               for tok in _split_list(cp.get("grid", "methods", fallback=""))]
    accels = [parse_accel_spec(tok)
              for tok in _split_list(cp.get("grid", "accels", fallback=""), ";")]

    budget = cp.getint("run", "budget", fallback=100)
    out_dir = cp.get("run", "out", fallback="results")
    jobs = cp.getint("run", "jobs", fallback=1)
    timing = cp.getboolean("run", "timing", fallback=False)
    early_stop = cp.getboolean("run", "early_stop", fallback=False)

    method_params = {}
    for section in cp.sections():
        if section.startswith("method."):
            tag = parse_method_tag(section.split(".", 1)[1])
            entry = {}
            if cp.has_option(section, "lambda"):
                entry["lam"] = cp.getfloat(section, "lambda")
            if cp.has_option(section, "alpha"):
                entry["alpha"] = cp.getfloat(section, "alpha")
            method_params[tag] = entry

    return RunConfig(
        image_paths=paths, filters=filters, methods=methods, accels=accels,
        budget=budget, out_dir=out_dir, jobs=jobs, timing=timing,
        early_stop=early_stop, method_params=method_params)


def make_method(tag: str, overrides: dict | None = None) -> MethodKind:
    kw = dict(overrides or {})
    return MethodKind(tag, **kw)


# ---------------------------------------------------------------------------
# The sweep
# ---------------------------------------------------------------------------

def _effective_jobs(jobs: int) -> int:
    env = os.environ.get("REVFILT_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"REVFILT_JOBS must be an integer, got '{env}'") from None
    return max(1, jobs)


def _run_one(args):
    image_id, x_true, fspec, tag, accel, cfg = args
    g = fspec.build()
    b = g.apply(x_true)
    prob = BoundProblem(g, b, make_method(tag, cfg.method_params.get(tag)))
    outcome = run_cell(
        prob, accel, budget=cfg.budget, ground_truth=x_true,
        early_stop=cfg.early_stop, record_time=cfg.timing, image_id=image_id)
    trace = outcome.trace
    trace.filter_label = fspec.label
    return (image_id, fspec.label, tag, accel.label), trace


def run_experiment(cfg: RunConfig):
    """Run the full sweep; returns (traces, summaries).

    ``traces`` maps (image_id, filter_label, method, accel_label) to the
    IterationTrace; ``summaries`` maps (filter_label, method, accel_label)
    to an ImprovementSummary. Trace CSVs land in ``<out>/traces``,
    summary tables in ``<out>``. Failures of individual cells are
    recorded and skipped, never aborting the sweep.
    """
    out = Path(cfg.out_dir)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)

    images = []
    for path in cfg.image_paths:
        stem = Path(path).stem
        image_id = stem
        n = 2
        while any(image_id == existing for existing, _ in images):
            image_id = f"{stem}-{n}"
            n += 1
        images.append((image_id, load_image(path)))

    cells = [
        (image_id, x_true, fspec, tag, accel, cfg)
        for fspec in cfg.filters
        for tag in cfg.methods
        for accel in cfg.accels
        for image_id, x_true in images
    ]

    traces = {}
    errors = {}
    jobs = _effective_jobs(cfg.jobs)
    if jobs == 1:
        for cell in cells:
            try:
                key, trace = _run_one(cell)
            except Exception as exc:  # noqa: BLE001 - record and continue
                errors[_cell_key(cell)] = str(exc)
            else:
                traces[key] = trace
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_one, cell): cell for cell in cells}
            for fut in concurrent.futures.as_completed(futures):
                cell = futures[fut]
                try:
                    key, trace = fut.result()
                except Exception as exc:  # noqa: BLE001 - record and continue
                    errors[_cell_key(cell)] = str(exc)
                else:
                    traces[key] = trace

    for key in sorted(traces):
        write_trace_csv(traces[key], trace_dir / ("__".join(key) + ".csv"))

    summaries = _summarize(cfg, traces)
    _write_summaries(cfg, out, summaries, errors)
    return traces, summaries


def _cell_key(cell):
    image_id, _, fspec, tag, accel, _ = cell
    return (image_id, fspec.label, tag, accel.label)


def _summarize(cfg, traces):
    summaries = {}
    for fspec in cfg.filters:
        for tag in cfg.methods:
            for accel in cfg.accels:
                group = [traces[key] for key in sorted(traces)
                         if key[1:] == (fspec.label, tag, accel.label)]
                if group:
                    summaries[(fspec.label, tag, accel.label)] = aggregate_pmax(group)
    return summaries


def _write_summaries(cfg, out: Path, summaries, errors):
    accel_labels = [a.label for a in cfg.accels]
    filter_labels = [f.label for f in cfg.filters]

    lines = ["Peak PSNR improvement (%), mean over images; '*' = non-convergent", ""]
    for tag in cfg.methods:
        rows = []
        for flabel in filter_labels:
            cells = []
            for alabel in accel_labels:
                s = summaries.get((flabel, tag, alabel))
                cells.append(s.cell_text if s else "err")
            rows.append((flabel, cells))
        with open(out / f"summary_{tag}.csv", "w") as fh:
            fh.write("filter," + ",".join(accel_labels) + "\n")
            for flabel, cells in rows:
                fh.write(flabel + "," + ",".join(cells) + "\n")
        width = max((len(r[0]) for r in rows), default=8) + 2
        lines.append(f"method {tag}")
        lines.append(" " * width + "  ".join(f"{a:>12}" for a in accel_labels))
        for flabel, cells in rows:
            lines.append(f"{flabel:<{width}}" + "  ".join(f"{c:>12}" for c in cells))
        lines.append("")

    # best accel per (filter, method)
    with open(out / "summary_best.csv", "w") as fh:
        fh.write("filter," + ",".join(f"{t},{t}_accel" for t in cfg.methods) + "\n")
        for flabel in filter_labels:
            cells = []
            for tag in cfg.methods:
                best = None
                for alabel in accel_labels:
                    s = summaries.get((flabel, tag, alabel))
                    if s and (best is None or s.p_max > best.p_max):
                        best = s
                cells.append(f"{best.cell_text},{best.accel}" if best else "err,")
            fh.write(flabel + "," + ",".join(cells) + "\n")

    if errors:
        lines.append("failed cells:")
        for key in sorted(errors):
            lines.append(f"  {'__'.join(key)}: {errors[key]}")
    with open(out / "summary.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")
