"""Drivers for the fixed-point view: Picard, relaxed (Mann) iteration with
an optional clipped Chebyshev schedule, Anderson mixing, and the two
Aitken-family one-step extrapolations (Irons and the epsilon algorithm).

All drivers are generic over a map f: Image -> Image. Images are treated
as flattened vectors wherever an inner product or norm is needed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .methods import BoundProblem
from .trace import RunOutcome, run_iteration_loop

FP_DRIVERS = ("picard", "mann", "chebyshev", "anderson", "irons", "epsilon")

ANDERSON_FALLBACK_FLAG = "anderson-ls-fallback"
EXTRAPOLATION_FALLBACK_FLAG = "extrapolation-guard-fallback"


# ---------------------------------------------------------------------------
# Relaxation schedules
# ---------------------------------------------------------------------------

@dataclass
class ChebyshevSchedule:
    """Periodic over-relaxation coefficients from Chebyshev nodes.

    The raw sequence is
    ``1 / ((l2 + l1)/2 + (l2 - l1)/2 * cos((2k + 1) pi / (2 T)))`` with
    period ``period_T``, clipped from above at ``clip_alpha``. The
    defaults (l1=0, l2=1, T=32, clip 3) give the clipped schedule
    2/(1 + cos(.)), increasing from about 1 at the period start.
    """

    period_T: int = 32
    clip_alpha: float = 3.0
    lambda1: float = 0.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.period_T < 1:
            raise ValueError("period_T must be >= 1")
        if not self.clip_alpha > 0:
            raise ValueError("clip_alpha must be positive")
        if self.lambda2 <= self.lambda1 or self.lambda1 < 0:
            raise ValueError("need 0 <= lambda1 < lambda2")


def chebyshev_omega(k: int, sched: ChebyshevSchedule) -> float:
    """Coefficient for iteration k (periodic in k, clipped at alpha)."""
    kk = k % sched.period_T
    mid = 0.5 * (sched.lambda2 + sched.lambda1)
    amp = 0.5 * (sched.lambda2 - sched.lambda1)
    raw = 1.0 / (mid + amp * math.cos((2 * kk + 1) * math.pi / (2 * sched.period_T)))
    return min(sched.clip_alpha, raw)


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

def picard_step(f, x):
    """x_{k+1} = f(x_k)."""
    return f(x)


def mann_step(f, x, omega: float):
    """Relaxed update x + omega * (f(x) - x); omega = 1 is exactly Picard.

    The omega = 1 case returns f(x) directly so that the reduction to
    Picard holds bitwise, not merely to rounding.
    """
    if not math.isfinite(omega):
        raise ValueError("omega must be finite")
    fx = f(x)
    if omega == 1.0:
        return fx
    return x + omega * (fx - x)


@dataclass
class AndersonState:
    """Sliding window of iterates and residuals for Anderson mixing.

    Keeps the last ``window_m + 1`` pairs (x, F(x)) with F(x) = f(x) - x.
    Each step solves the ridge-regularized least-squares problem
    ``min_theta || F_k - sum_j theta_j (F_{j+1} - F_j) ||^2`` over the
    stored window and combines the corresponding f-values:
    ``x_{k+1} = f(x_k) - sum_j theta_j (f_{j+1} - f_j)``. With an empty
    window (or window_m = 0) the step is plain Picard.
    """

    window_m: int = 5
    ridge: float = 1e-10
    history_x: list = field(default_factory=list)
    history_F: list = field(default_factory=list)

    def __post_init__(self):
        if self.window_m < 0:
            raise ValueError("window_m must be >= 0")
        self._history_fx = []
        self.last_theta = None
        self.last_flags = ()

    def step(self, f, x):
        self.last_flags = ()
        fx = f(x)
        residual = fx - x
        self.history_x.append(x)
        self.history_F.append(residual)
        self._history_fx.append(fx)
        if len(self.history_x) > self.window_m + 1:
            del self.history_x[0], self.history_F[0], self._history_fx[0]

        m = len(self.history_x) - 1
        if m == 0:
            self.last_theta = None
            return fx

        flat = [F.ravel() for F in self.history_F]
        d_mat = np.stack([flat[j + 1] - flat[j] for j in range(m)], axis=1)
        rhs = flat[-1]
        gram = d_mat.T @ d_mat
        trace_scale = float(np.trace(gram)) / m
        lam = self.ridge * (trace_scale if trace_scale > 0 else 1.0)
        try:
            theta = np.linalg.solve(gram + lam * np.eye(m), d_mat.T @ rhs)
        except np.linalg.LinAlgError:
            self.last_flags = (ANDERSON_FALLBACK_FLAG,)
            self.last_theta = None
            return fx
        self.last_theta = theta

        x_next = fx.copy()
        for j in range(m):
            x_next -= theta[j] * (self._history_fx[j + 1] - self._history_fx[j])
        return x_next


def anderson_step(state: AndersonState, f, x):
    """One Anderson-mixing update (state is advanced in place)."""
    return state.step(f, x)


def _second_differences(f, x):
    # two f evaluations shared by the Irons and epsilon steps
    fx = f(x)
    ffx = f(fx)
    dx = fx - x
    df = ffx - fx
    d2 = df - dx
    return fx, dx, df, d2


def _irons(f, x, guard_eps):
    fx, dx, _, d2 = _second_differences(f, x)
    denom = float(np.sum(d2 * d2))
    if denom < guard_eps:
        return fx, (EXTRAPOLATION_FALLBACK_FLAG,)
    coef = float(np.sum(dx * d2)) / denom
    return x - coef * dx, ()


def _epsilon(f, x, guard_eps):
    fx, dx, df, d2 = _second_differences(f, x)
    denom = float(np.sum(d2 * d2))
    if denom < guard_eps:
        return fx, (EXTRAPOLATION_FALLBACK_FLAG,)
    num = float(np.sum(dx * dx)) * df - float(np.sum(df * df)) * dx
    return fx + num / denom, ()


def irons_step(f, x, guard_eps: float = 1e-12):
    """Vector Aitken extrapolation using the Samelson inverse.

    x_{k+1} = x - (<dx, d2x> / ||d2x||^2) dx with dx = f(x) - x,
    d2x = f(f(x)) - 2 f(x) + x (two f evaluations). Falls back to the
    Picard value f(x) when ||d2x||^2 drops below ``guard_eps``.
    """
    return _irons(f, x, guard_eps)[0]


def epsilon_step(f, x, guard_eps: float = 1e-12):
    """One-step epsilon-algorithm extrapolation.

    x_{k+1} = f(x) + (||dx||^2 df - ||df||^2 dx) / ||d2x||^2, with the
    same deltas and guard as :func:`irons_step`.
    """
    return _epsilon(f, x, guard_eps)[0]


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def run_fixed_point(
    prob: BoundProblem,
    driver: str,
    x0=None,
    budget: int = 100,
    ground_truth=None,
    *,
    omega: float = 1.0,
    schedule: ChebyshevSchedule | None = None,
    anderson: AndersonState | None = None,
    guard_eps: float = 1e-12,
    early_stop: bool = False,
    early_stop_rtol: float = 1e-6,
    record_time: bool = True,
    image_id: str = "",
    accel_label: str | None = None,
) -> RunOutcome:
    """Iterate the method's fixed-point map under the chosen driver.

    ``driver`` is one of picard, mann, chebyshev, anderson, irons,
    epsilon ("none" is accepted as an alias for picard). Starts from the
    observation when ``x0`` is omitted.
    """
    name = {"none": "picard", "chb": "chebyshev"}.get(driver, driver)
    if name not in FP_DRIVERS:
        raise ValueError(f"unknown fixed-point driver '{driver}' (known: {FP_DRIVERS})")
    f = prob.fixed_point_map

    if name == "picard":
        stepper = lambda k, x: (f(x), None, ())
    elif name == "mann":
        stepper = lambda k, x: (mann_step(f, x, omega), omega, ())
    elif name == "chebyshev":
        sched = schedule or ChebyshevSchedule()

        def stepper(k, x):
            w = chebyshev_omega(k, sched)
            return mann_step(f, x, w), w, ()
    elif name == "anderson":
        state = anderson or AndersonState()

        def stepper(k, x):
            x_next = state.step(f, x)
            return x_next, None, state.last_flags
    else:
        extrapolate = _irons if name == "irons" else _epsilon

        def stepper(k, x):
            x_next, flags = extrapolate(f, x, guard_eps)
            return x_next, None, flags

    return run_iteration_loop(
        prob, stepper, x0=x0, budget=budget, ground_truth=ground_truth,
        method_label=prob.method.tag, accel_label=accel_label or name,
        filter_label=getattr(prob.g, "label", ""), image_id=image_id,
        early_stop=early_stop, early_stop_rtol=early_stop_rtol,
        record_time=record_time)
