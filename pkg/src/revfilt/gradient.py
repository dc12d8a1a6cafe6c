"""Gradient-descent drivers over the methods' gradient surrogates.

The surrogate d(x) already carries the descent sign (it approximates
-grad c), so every textbook "- lambda * grad" below becomes
"+ lambda * d". Update rules:

gd        x + lam * d
mgd       v = beta v + lam d;                    x + v
nag       v = beta v + lam d(x + beta v);        x + v
rmsprop   v = beta v + (1-beta) d^2;             x + lam / sqrt(v + eps) * d
adadelta  v = beta v + (1-beta) d^2
          s = sqrt(u + eps) / sqrt(v + eps) * d; x + s
          u = beta u + (1-beta) s^2
adam      m = b1 m + (1-b1) d;  v = b2 v + (1-b2) d^2
          x + lam * mhat / (sqrt(vhat) + eps)
sgdr      x + lam_k * d with a cosine step-size schedule and warm restarts

Adadelta takes its scale from the accumulator ratio and has no base step
size; ``lam`` is ignored for it. Adam's bias corrections default to the
step-dependent form (1 - beta^k); ``adam_bias="printed"`` selects the
constant form (1 - beta).
"""

import math
from dataclasses import dataclass

import numpy as np

from .methods import BoundProblem
from .trace import RunOutcome, run_iteration_loop

AGD_KINDS = ("gd", "mgd", "nag", "rmsprop", "adadelta", "adam", "sgdr")


@dataclass
class SgdrSchedule:
    """Cosine-annealed step size with warm restarts.

    lambda(t) = lam_min + (lam_max - lam_min)/2 * (1 + cos(pi t / T))
    for t = t_cur in [0, T]; t_cur resets to 0 after reaching T, so the
    schedule walks lam_max ... lam_min and restarts (period T + 1 steps).
    """

    period_T: int = 5
    lambda_min: float = 0.0
    lambda_max: float = 1.0
    t_cur: int = 0

    def __post_init__(self):
        if self.period_T < 1:
            raise ValueError("period_T must be >= 1")
        if self.lambda_min > self.lambda_max:
            raise ValueError("need lambda_min <= lambda_max")
        if not 0 <= self.t_cur <= self.period_T:
            raise ValueError("t_cur must lie in [0, period_T]")

    def advance(self):
        self.t_cur = 0 if self.t_cur >= self.period_T else self.t_cur + 1


def sgdr_lambda(sched: SgdrSchedule) -> float:
    """Step size for the schedule's current position."""
    cos_term = math.cos(math.pi * sched.t_cur / sched.period_T)
    return sched.lambda_min + 0.5 * (sched.lambda_max - sched.lambda_min) * (1.0 + cos_term)


@dataclass
class AgdState:
    """Mutable per-run state of one accelerated-gradient rule."""

    kind: str
    lam: float = 1.0
    beta: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    adam_bias: str = "power"
    sgdr: SgdrSchedule | None = None

    def __post_init__(self):
        if self.kind not in AGD_KINDS:
            raise ValueError(f"unknown AGD kind '{self.kind}' (known: {AGD_KINDS})")
        if not (0.0 <= self.beta < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.adam_bias not in ("power", "printed"):
            raise ValueError("adam_bias must be 'power' or 'printed'")
        if self.kind == "sgdr" and self.sgdr is None:
            self.sgdr = SgdrSchedule()
        self.velocity = None
        self.second_moment = None
        self.delta_accum = None
        self.step_count = 0
        self.last_coeff = None

    def _ensure_accumulators(self, x):
        if self.velocity is None:
            self.velocity = np.zeros_like(x)
            self.second_moment = np.zeros_like(x)
            self.delta_accum = np.zeros_like(x)


def agd_step(state: AgdState, prob: BoundProblem, x):
    """One update of the chosen rule; accumulators advance in place."""
    state._ensure_accumulators(x)
    if state.kind == "nag":
        lookahead = x + state.beta * state.velocity
        d = prob.grad_surrogate(lookahead)
    else:
        d = prob.grad_surrogate(x)
    state.step_count += 1
    state.last_coeff = state.lam

    if state.kind == "gd":
        return x + state.lam * d

    if state.kind in ("mgd", "nag"):
        state.velocity = state.beta * state.velocity + state.lam * d
        return x + state.velocity

    if state.kind == "rmsprop":
        state.second_moment = state.beta * state.second_moment + (1.0 - state.beta) * d * d
        return x + state.lam / np.sqrt(state.second_moment + state.eps) * d

    if state.kind == "adadelta":
        state.last_coeff = None
        state.second_moment = state.beta * state.second_moment + (1.0 - state.beta) * d * d
        step = (np.sqrt(state.delta_accum + state.eps)
                / np.sqrt(state.second_moment + state.eps)) * d
        state.delta_accum = state.beta * state.delta_accum + (1.0 - state.beta) * step * step
        return x + step

    if state.kind == "adam":
        state.velocity = state.beta * state.velocity + (1.0 - state.beta) * d
        state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * d * d
        if state.adam_bias == "power":
            c1 = 1.0 - state.beta ** state.step_count
            c2 = 1.0 - state.beta2 ** state.step_count
        else:
            c1 = 1.0 - state.beta
            c2 = 1.0 - state.beta2
        m_hat = state.velocity / c1
        v_hat = state.second_moment / c2
        return x + state.lam * m_hat / (np.sqrt(v_hat) + state.eps)

    # sgdr
    lam_k = sgdr_lambda(state.sgdr)
    state.sgdr.advance()
    state.last_coeff = lam_k
    return x + lam_k * d


def run_gradient_descent(
    prob: BoundProblem,
    state: AgdState,
    x0=None,
    budget: int = 100,
    ground_truth=None,
    *,
    early_stop: bool = False,
    early_stop_rtol: float = 1e-6,
    record_time: bool = True,
    image_id: str = "",
    accel_label: str | None = None,
) -> RunOutcome:
    """Iterate the surrogate-driven update rule; mirrors run_fixed_point."""
    stepper = lambda k, x: (agd_step(state, prob, x), state.last_coeff, ())
    return run_iteration_loop(
        prob, stepper, x0=x0, budget=budget, ground_truth=ground_truth,
        method_label=prob.method.tag, accel_label=accel_label or state.kind,
        filter_label=getattr(prob.g, "label", ""), image_id=image_id,
        early_stop=early_stop, early_stop_rtol=early_stop_rtol,
        record_time=record_time)
