"""Strong-Wolfe line search by bracketing and safeguarded cubic interpolation."""

from dataclasses import dataclass
import math

from .errors import NotADescentDirection


@dataclass(frozen=True)
class LineSearchParams:
    c1: float = 1e-4
    c2: float = 0.9
    max_steps: int = 20

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


@dataclass
class LineSearchResult:
    step: float
    value: float
    slope: float
    success: bool
    evaluations: int


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    if a == b:
        return None
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    return t if math.isfinite(t) else None


def line_search_cubic(phi, dphi, params=LineSearchParams(), step0=1.0, phi0=None, dphi0=None):
    """Find ``t > 0`` satisfying the strong Wolfe conditions for ``phi``.

    ``phi`` and ``dphi`` are the function and derivative along the search ray.
    If no Wolfe point is found within ``params.max_steps`` evaluations, the
    best sufficient-decrease point seen (or the lowest point if none) is
    returned with ``success=False``.
    """
    f0 = phi(0.0) if phi0 is None else phi0
    g0 = dphi(0.0) if dphi0 is None else dphi0
    if not g0 < 0:
        raise NotADescentDirection(f"phi'(0) = {g0} is not negative")
    c1, c2 = params.c1, params.c2
    evals = 0
    best = (0.0, f0, g0)

    def armijo(t, f):
        return f <= f0 + c1 * t * g0

    def curvature(g):
        return abs(g) <= -c2 * g0

    def evaluate(t):
        nonlocal evals, best
        evals += 1
        f, g = phi(t), dphi(t)
        if math.isfinite(f) and f < best[1] and armijo(t, f):
            best = (t, f, g)
        return f, g

    def zoom(lo, f_lo, g_lo, hi, f_hi, g_hi):
        while evals < params.max_steps:
            width = hi - lo
            t = _cubic_min(lo, f_lo, g_lo, hi, f_hi, g_hi) if math.isfinite(f_hi) else None
            lo_edge, hi_edge = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if t is None or not lo_edge <= t <= hi_edge:
                t = lo + 0.5 * width
            f, g = evaluate(t)
            if not math.isfinite(f) or not armijo(t, f) or f >= f_lo:
                hi, f_hi, g_hi = t, f, g
            else:
                if curvature(g):
                    return LineSearchResult(t, f, g, True, evals)
                if g * (hi - lo) >= 0:
                    hi, f_hi, g_hi = lo, f_lo, g_lo
                lo, f_lo, g_lo = t, f, g
        return None

    t_prev, f_prev, g_prev = 0.0, f0, g0
    t = step0
    while evals < params.max_steps:
        f, g = evaluate(t)
        if not math.isfinite(f) or not armijo(t, f) or (evals > 1 and f >= f_prev):
            res = zoom(t_prev, f_prev, g_prev, t, f, g)
            break
        if curvature(g):
            return LineSearchResult(t, f, g, True, evals)
        if g >= 0:
            res = zoom(t, f, g, t_prev, f_prev, g_prev)
            break
        nxt = _cubic_min(t_prev, f_prev, g_prev, t, f, g)
        lo_edge, hi_edge = t + 1.1 * (t - t_prev), t + 4.0 * (t - t_prev)
        if nxt is None or not lo_edge <= nxt <= hi_edge:
            nxt = hi_edge if nxt is not None and nxt > hi_edge else lo_edge
        t_prev, f_prev, g_prev = t, f, g
        t = nxt
    else:
        res = None
    if res is not None:
        return res
    t, f, g = best
    if t == 0.0:
        return LineSearchResult(0.0, f0, g0, False, evals)
    return LineSearchResult(t, f, g, False, evals)
