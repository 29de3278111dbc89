"""Acceleration of fixed-point iterations ``x_{k+1} = q(x_k)``.

Nonstationary methods (AA, NGMRES, Nesterov with restart) solve a small
least-squares problem or compute a momentum weight per step; stationary
methods (sAA, sNGMRES, sNGMRES-R) reuse fixed coefficients. All drivers
record a :class:`Trace`.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import qr

from .errors import DivergenceError, InsufficientDataError, NotADescentDirection
from .linesearch import LineSearchParams, line_search_cubic

NONSTATIONARY = ("fixed_point", "aa", "ngmres", "nesterov")
STATIONARY = ("saa", "sngmres", "sngmresr")


@dataclass(frozen=True)
class MethodSpec:
    """Method description.

    ``window`` is the history length ``m``; ``None`` means unbounded. Stationary
    kinds carry ``betas``: ``m`` values for ``saa`` and ``sngmresr``, ``m + 1``
    values (``beta_0 .. beta_m``) for ``sngmres``.
    """

    kind: str
    window: int = None
    betas: tuple = ()
    globalize: bool = False

    def __post_init__(self):
        kind = self.kind.lower().replace("-", "").replace("_", "")
        kind = {"fixedpoint": "fixed_point", "fp": "fixed_point"}.get(kind, kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if kind not in NONSTATIONARY + STATIONARY:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.window is not None and self.window < 0:
            raise ValueError("window must be nonnegative or None")
        if kind in STATIONARY:
            if self.window is None:
                raise ValueError("stationary methods need a finite window")
            need = self.window + 1 if kind == "sngmres" else self.window
            if len(self.betas) != need:
                raise ValueError(
                    f"{kind}({self.window}) needs {need} coefficients, got {len(self.betas)}")
        elif self.betas:
            raise ValueError(f"{kind} takes no fixed coefficients")

    @property
    def stationary(self):
        return self.kind in STATIONARY


@dataclass
class Trace:
    """Per-iteration records of a run; entry ``i`` describes ``x_i``.

    ``lsnorm[i]`` is the optimal mixing least-squares residual norm of the step
    that produced ``x_{i+1}`` (nan where no least-squares problem was solved).
    """

    k: list = field(default_factory=list)
    f: list = field(default_factory=list)
    gnorm: list = field(default_factory=list)
    rnorm: list = field(default_factory=list)
    fgap: list = field(default_factory=list)
    lsnorm: list = field(default_factory=list)
    restarted: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    status: str = "running"
    x: np.ndarray = None

    def __len__(self):
        return len(self.k)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def csv_text(self):
        lines = ["k,f,gnorm,rnorm,fgap"]
        for row in zip(self.k, self.f, self.gnorm, self.rnorm, self.fgap):
            lines.append(f"{row[0]}," + ",".join(f"{v:.17g}" for v in row[1:]))
        return "\n".join(lines) + "\n"


def solve_mixing(anchor, history):
    """Minimize ``||anchor + sum_i beta_i (anchor - history_i)||``.

    Returns ``(beta, objective)`` with ``objective`` the squared minimal norm.
    Columns ``anchor - history_i`` that are numerically dependent (pivoted
    QR diagonal below 1e-10 of the largest) get a zero coefficient.
    """
    anchor = np.asarray(anchor, dtype=float)
    if len(history) == 0:
        return np.zeros(0), float(anchor @ anchor)
    D = anchor[:, None] - np.column_stack(history)
    beta = np.zeros(D.shape[1])
    Q, R, piv = qr(D, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size and diag[0] > 0:
        keep = int(np.sum(diag >= 1e-10 * diag[0]))
        coef = np.linalg.solve(np.triu(R[:keep, :keep]), -(Q[:, :keep].T @ anchor))
        beta[piv[:keep]] = coef
    res = anchor + D @ beta
    return beta, float(res @ res)


class _Runner:
    def __init__(self, q, spec, x0, f, grad, max_iter, f_tol, g_tol, f_star, gap,
                 keep_iterates, line_search):
        if spec.kind in ("ngmres", "nesterov") and grad is None:
            raise ValueError(f"{spec.kind} needs a gradient map")
        if spec.globalize and (f is None or grad is None):
            raise ValueError("globalization needs both f and grad")
        if max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        self.q, self.spec, self.f, self.grad = q, spec, f, grad
        self.max_iter, self.f_tol, self.g_tol = max_iter, f_tol, g_tol
        self.keep = keep_iterates
        self.ls = line_search
        if gap is None and f_star is not None and f is not None:
            gap = lambda x, fx: fx - f_star  # noqa: E731
        elif gap is not None:
            user_gap = gap
            gap = lambda x, fx: user_gap(x)  # noqa: E731
        self.gap = gap
        self.trace = Trace()
        self.x0 = np.array(x0, dtype=float, copy=True).ravel()

    def _fail(self, msg):
        self.trace.status = "diverged"
        raise DivergenceError(msg, trace=self.trace)

    def record(self, k, x, qx, fx, gx, restarted=False):
        t = self.trace
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(qx))):
            self._fail(f"non-finite iterate at k={k}")
        if fx is not None and not math.isfinite(fx):
            self._fail(f"non-finite objective at k={k}")
        t.k.append(k)
        t.f.append(float("nan") if fx is None else float(fx))
        t.gnorm.append(float("nan") if gx is None else float(np.linalg.norm(gx)))
        t.rnorm.append(float(np.linalg.norm(x - qx)))
        t.fgap.append(float("nan") if self.gap is None or fx is None
                      else float(self.gap(x, fx)))
        t.restarted.append(bool(restarted))
        t.lsnorm.append(float("nan"))
        if self.keep:
            t.iterates.append(x.copy())

    def done(self):
        t = self.trace
        if self.f_tol is not None and t.fgap and t.fgap[-1] <= self.f_tol:
            return True
        if self.g_tol is not None and t.gnorm and t.gnorm[-1] <= self.g_tol:
            return True
        return False

    def globalize(self, qx, fqx, x_acc):
        """Safeguard an accelerated candidate against increase of ``f``."""
        f_acc = self.f(x_acc)
        if math.isfinite(f_acc) and f_acc <= fqx:
            return x_acc
        d = x_acc - qx
        slope0 = float(self.grad(qx) @ d)
        try:
            res = line_search_cubic(lambda t: self.f(qx + t * d),
                                    lambda t: float(self.grad(qx + t * d) @ d),
                                    self.ls, phi0=fqx, dphi0=slope0)
        except NotADescentDirection:
            return qx
        if res.step > 0 and math.isfinite(res.value) and res.value < fqx:
            return qx + res.step * d
        return qx

    def run(self):
        spec, q = self.spec, self.q
        f = self.f
        grad = self.grad
        need_g = grad is not None
        x = self.x0
        qx = q(x)
        fx = f(x) if f is not None else None
        gx = grad(x) if need_g else None
        self.record(0, x, qx, fx, gx)
        xs, qs, gs = [x], [qx], [gx]   # newest last
        m = spec.window
        for k in range(self.max_iter):
            if self.done():
                self.trace.status = "converged"
                break
            restarted = False
            lsnorm = float("nan")
            kind = spec.kind
            w = k if m is None else min(k, m)
            if kind == "fixed_point":
                x_new = qx
            elif kind == "aa":
                r_hist = [xs[-1 - i] - qs[-1 - i] for i in range(1, w + 1)]
                beta, obj = solve_mixing(x - qx, r_hist)
                lsnorm = math.sqrt(obj)
                x_new = qx + sum((b * (qx - qs[-1 - i]) for i, b in enumerate(beta, 1)),
                                 np.zeros_like(qx))
            elif kind == "ngmres":
                gq = grad(qx)
                beta, obj = solve_mixing(gq, [gs[-1 - i] for i in range(w + 1)])
                lsnorm = math.sqrt(obj)
                x_new = qx + sum((b * (qx - xs[-1 - i]) for i, b in enumerate(beta)),
                                 np.zeros_like(qx))
            elif kind == "nesterov":
                if len(qs) < 2:
                    x_new = qx
                else:
                    gprev = np.linalg.norm(gs[-2])
                    wgt = 1.0 if gprev == 0 else min(1.0, np.linalg.norm(gx) / gprev)
                    x_new = qx + wgt * (qx - qs[-2])
                    if f is not None and f(x_new) > fx:
                        x_new = qx
                        restarted = True
            else:
                x_new = self._stationary_step(k, qx, xs, qs)
            if spec.globalize and kind != "fixed_point" and x_new is not qx:
                x_new = self.globalize(qx, f(qx), x_new)
            self.trace.lsnorm[-1] = lsnorm
            x = np.asarray(x_new, dtype=float)
            if not np.all(np.isfinite(x)):
                self._fail(f"non-finite iterate at k={k + 1}")
            qx = q(x)
            fx = f(x) if f is not None else None
            gx = grad(x) if need_g else None
            self.record(k + 1, x, qx, fx, gx, restarted)
            if restarted:
                # momentum history is discarded; the next step is a plain step
                xs, qs, gs = [], [], []
            xs.append(x)
            qs.append(qx)
            gs.append(gx)
            keep = (m if m is not None else len(xs)) + 2
            if len(xs) > keep:
                del xs[:-keep], qs[:-keep], gs[:-keep]
        else:
            self.trace.status = "converged" if self.done() else "max_iter"
        self.trace.x = x
        return self.trace

    def _stationary_step(self, k, qx, xs, qs):
        spec = self.spec
        m = spec.window
        if k < m:
            return qx
        b = spec.betas
        if spec.kind == "saa":
            return qx + sum((b[i - 1] * (qx - qs[-1 - i]) for i in range(1, m + 1)),
                            np.zeros_like(qx))
        if spec.kind == "sngmres":
            return qx + sum((b[i] * (qx - xs[-1 - i]) for i in range(m + 1)),
                            np.zeros_like(qx))
        return qx + sum((b[i - 1] * (qx - xs[-1 - i]) for i in range(1, m + 1)),
                        np.zeros_like(qx))


def run_accelerated(q, spec, x0, *, f=None, grad=None, max_iter=100, f_tol=None, g_tol=None,
                    f_star=None, gap=None, keep_iterates=False,
                    line_search=LineSearchParams()):
    """Run a fixed-point, AA, NGMRES or Nesterov-restart iteration.

    Parameters
    ----------
    q : callable
        Fixed-point map on flat vectors.
    spec : MethodSpec
        One of the nonstationary kinds.
    f, grad : callable, optional
        Objective and gradient. ``grad`` is required for NGMRES, Nesterov and
        globalization; ``f`` for restarts and globalization.
    f_tol : float, optional
        Stop once the objective gap drops to ``f_tol``. The gap is ``gap(x)``
        if given, else ``f(x) - f_star``.
    g_tol : float, optional
        Stop once ``||grad(x)|| <= g_tol``.

    Returns
    -------
    Trace
    """
    if spec.stationary:
        raise ValueError("use run_stationary for stationary methods")
    return _Runner(q, spec, x0, f, grad, max_iter, f_tol, g_tol, f_star, gap,
                   keep_iterates, line_search).run()


def run_stationary(q, spec, x0, *, f=None, grad=None, max_iter=100, f_tol=None, g_tol=None,
                   f_star=None, gap=None, keep_iterates=False,
                   line_search=LineSearchParams()):
    """Run sAA(m), sNGMRES(m) or sNGMRES-R(m) with the fixed coefficients of ``spec``.

    The first ``m`` steps are plain fixed-point steps. Arguments as in
    :func:`run_accelerated`.
    """
    if not spec.stationary:
        raise ValueError("run_stationary needs a stationary method spec")
    return _Runner(q, spec, x0, f, grad, max_iter, f_tol, g_tol, f_star, gap,
                   keep_iterates, line_search).run()


def estimate_convergence_factor(trace, f_star=None, window=10, floor=1e-26):
    """Root-convergence factor from the tail of the objective gaps.

    Gaps contract like ``rho**2``, so ``rho = exp(mean(log ratio) / 2)`` over
    the last ``window`` ratios of consecutive gaps that both exceed ``floor``.
    The gaps come from ``trace.f - f_star`` or, if ``f_star`` is None, from
    ``trace.fgap``.
    """
    if f_star is None:
        gaps = np.asarray(trace.fgap, dtype=float)
    else:
        gaps = np.asarray(trace.f, dtype=float) - f_star
    ok = np.isfinite(gaps) & (gaps > floor)
    usable = ok[1:] & ok[:-1]
    idx = np.nonzero(usable)[0]
    if idx.size < 5:
        raise InsufficientDataError(
            f"only {idx.size} usable gap ratios above floor {floor:g}; need 5")
    idx = idx[-window:]
    logs = np.log(gaps[idx + 1]) - np.log(gaps[idx])
    return float(np.exp(0.5 * np.mean(logs)))
