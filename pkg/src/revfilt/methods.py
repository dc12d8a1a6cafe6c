"""The five reverse-filtering methods bound to a (filter, observation) pair.

Each method is a fixed-point map f(x) and, equivalently, a gradient
surrogate d(x) with f(x) = x + step(d(x)); the iteration drivers in
:mod:`revfilt.fixed_point` and :mod:`revfilt.gradient` consume both views.

Method tags (case-sensitive: ``P`` and ``p`` are distinct methods):

========  =============================  =================
tag       fixed-point map f(x)           surrogate d(x)
========  =============================  =================
``T``     x + lam * e(x)                 e(x)
``R``     alpha * x + lam * e(x)         e(x)
``TDA``   x + lam * t(x)                 t(x)
``P``     x + lam * (|e|/(2|p|)) * p(x)  0.5 * p(x)
``p``     x + lam * 0.5 * p(x)           0.5 * p(x)
========  =============================  =================

with e(x) = b - g(x), t(x) = g(x + e) - g(x), p(x) = g(x + e) - g(x - e),
and |.| the spectral norm. Filter-call cost per map evaluation: T/R 1,
TDA 2, P/p 3; evaluations of e, t, p on the same iterate share a cache so
the counts are exact.
"""

from dataclasses import dataclass

import numpy as np

from .image import frobenius_norm, spectral_norm

METHOD_TAGS = ("T", "R", "TDA", "P", "p")

#: filter calls needed per fixed-point-map / surrogate evaluation
CALLS_PER_EVAL = {"T": 1, "R": 1, "TDA": 2, "P": 3, "p": 3}

DEGENERATE_STEP_FLAG = "degenerate-P-step"

_P_NORM_GUARD = 1e-12


@dataclass
class MethodKind:
    """Which reverse method to use, with its step weight.

    ``alpha`` applies to the R method only (its identity-damping
    coefficient, in (0, 1]).
    """

    tag: str
    lam: float = 1.0
    alpha: float = 0.99

    def __post_init__(self):
        if self.tag not in METHOD_TAGS:
            raise ValueError(f"unknown method tag '{self.tag}' (known: {METHOD_TAGS})")
        if not np.isfinite(self.lam):
            raise ValueError("lam must be finite")
        if self.tag == "R" and not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1] for the R method")

    @property
    def calls_per_eval(self) -> int:
        return CALLS_PER_EVAL[self.tag]


class BoundProblem:
    """A reverse-filtering problem: recover x with g(x) = b.

    Holds the black-box filter, the observation and the method. The
    residual/step evaluations keep a one-iterate cache keyed on array
    identity so that one outer iteration never pays for the same filter
    evaluation twice. A problem instance is meant to drive one iteration
    loop at a time (its filter call counter is not shared).
    """

    def __init__(self, g, b: np.ndarray, method: MethodKind):
        self.g = g
        self.b = b
        self.method = method
        self._cache_x = None
        self._cache = {}
        self.step_flags: list[str] = []
        self.step_residual_norm: float | None = None

    # -- per-iteration bookkeeping ---------------------------------------

    def begin_step(self):
        """Reset per-iteration flags and the harvested residual norm."""
        self.step_flags = []
        self.step_residual_norm = None

    def _slot(self, x):
        if self._cache_x is not x:
            self._cache_x = x
            self._cache = {}
        return self._cache

    # -- residual and probe steps ----------------------------------------

    def residual(self, x: np.ndarray) -> np.ndarray:
        """e(x) = b - g(x); exactly one filter call per fresh iterate."""
        if x.shape != self.b.shape:
            raise ValueError(f"iterate shape {x.shape} != observation {self.b.shape}")
        slot = self._slot(x)
        if "e" not in slot:
            slot["gx"] = self.g.apply(x)
            slot["e"] = self.b - slot["gx"]
        if self.step_residual_norm is None:
            self.step_residual_norm = frobenius_norm(slot["e"])
        return slot["e"]

    def step_t(self, x: np.ndarray) -> np.ndarray:
        """t(x) = g(x + e) - g(x); two filter calls total."""
        e = self.residual(x)
        slot = self._slot(x)
        if "t" not in slot:
            if "g_xpe" not in slot:
                slot["g_xpe"] = self.g.apply(x + e)
            slot["t"] = slot["g_xpe"] - slot["gx"]
        return slot["t"]

    def step_p(self, x: np.ndarray) -> np.ndarray:
        """p(x) = g(x + e) - g(x - e); three filter calls total."""
        e = self.residual(x)
        slot = self._slot(x)
        if "p" not in slot:
            if "g_xpe" not in slot:
                slot["g_xpe"] = self.g.apply(x + e)
            slot["g_xme"] = self.g.apply(x - e)
            slot["p"] = slot["g_xpe"] - slot["g_xme"]
        return slot["p"]

    # -- the two method views ---------------------------------------------

    def fixed_point_map(self, x: np.ndarray) -> np.ndarray:
        """One application of the method's fixed-point map f(x).

        A P step whose probe ``p(x)`` has spectral norm below 1e-12
        cannot be scaled meaningfully; it returns x unchanged and appends
        a degenerate-step flag for the trace.
        """
        m = self.method
        if m.tag == "T":
            return x + m.lam * self.residual(x)
        if m.tag == "R":
            return m.alpha * x + m.lam * self.residual(x)
        if m.tag == "TDA":
            return x + m.lam * self.step_t(x)
        if m.tag == "p":
            return x + m.lam * (0.5 * self.step_p(x))
        # P method
        p = self.step_p(x)
        norm_p = spectral_norm(p)
        if norm_p < _P_NORM_GUARD:
            self.step_flags.append(DEGENERATE_STEP_FLAG)
            return x
        norm_e = spectral_norm(self.residual(x))
        return x + m.lam * (norm_e / (2.0 * norm_p)) * p

    def grad_surrogate(self, x: np.ndarray) -> np.ndarray:
        """The method's gradient surrogate d(x) (approximates -grad c)."""
        tag = self.method.tag
        if tag in ("T", "R"):
            return self.residual(x)
        if tag == "TDA":
            return self.step_t(x)
        return 0.5 * self.step_p(x)  # P and p

    def consistency_check(self, x: np.ndarray) -> float:
        """Agreement between the two views: d(x) vs f(x) - x.

        For T (lam=1), R (alpha=1, lam=1), TDA (lam=1) and p (lam=1) the
        identity is exact, and the max abs pixel difference is returned.
        For P only the direction matches, so 1 - cosine similarity is
        returned instead.
        """
        d = self.grad_surrogate(x)
        step = self.fixed_point_map(x) - x
        if self.method.tag == "P":
            denom = frobenius_norm(d) * frobenius_norm(step)
            if denom == 0.0:
                return 0.0
            return 1.0 - float(np.sum(d * step)) / denom
        return float(np.max(np.abs(d - step)))
