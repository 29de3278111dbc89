"""Canonical (CP) tensor decomposition as a smooth optimization problem.

The objective is ``f(x) = 0.5 * ||Z - [[A1, ..., AN]]||_F^2`` where ``x`` is the
flat vector holding ``vec(A1), ..., vec(AN)`` (each column-major). That block
order is also the ALS sweep order and the order used to split the Hessian
into its lower block triangular part, so ``q_als'(x*) = I - M^{-1} H`` holds
with ``M = block_lower(H)``.
"""

from dataclasses import dataclass
import string
import warnings

import numpy as np
from scipy import linalg

from .errors import (DegenerateSpectrumError, NonConvergenceError, NumericalError,
                     PreconditionError)
from .tensor import kruskal_full, mttkrp


@dataclass
class FactorPoint:
    """Ordered factor matrices with the canonical flattening."""

    factors: list

    @property
    def dims(self):
        return tuple(a.shape[0] for a in self.factors)

    @property
    def rank(self):
        return self.factors[0].shape[1]

    def flatten(self):
        return np.concatenate([np.asarray(a, dtype=float).ravel(order="F")
                               for a in self.factors])

    @classmethod
    def from_flat(cls, x, dims, rank):
        x = np.asarray(x, dtype=float)
        if x.size != rank * sum(dims):
            raise ValueError(f"flat vector has {x.size} entries, expected {rank * sum(dims)}")
        factors, start = [], 0
        for n in dims:
            factors.append(x[start:start + n * rank].reshape((n, rank), order="F"))
            start += n * rank
        return cls(factors)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"modes {len(self.factors)}\n")
            fh.write(f"rank {self.rank}\n")
            fh.write("dims " + " ".join(str(d) for d in self.dims) + "\n")
            for v in self.flatten():
                fh.write(f"{v:.17g}\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = [fh.readline().split() for _ in range(3)]
            if [h[0] if h else "" for h in header] != ["modes", "rank", "dims"]:
                raise ValueError(f"{path}: malformed factor header")
            rank = int(header[1][1])
            dims = tuple(int(d) for d in header[2][1:])
            if len(dims) != int(header[0][1]):
                raise ValueError(f"{path}: 'modes' disagrees with 'dims'")
            values = np.loadtxt(fh, dtype=float, ndmin=1)
        return cls.from_flat(values, dims, rank)


@dataclass
class CpdProblem:
    data: np.ndarray
    rank: int

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=float)
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.data.size == 0:
            raise ValueError("data tensor is empty")

    @property
    def dims(self):
        return self.data.shape

    @property
    def order(self):
        return self.data.ndim

    @property
    def size(self):
        return self.rank * sum(self.dims)

    @property
    def block_sizes(self):
        return [n * self.rank for n in self.dims]

    @property
    def num_degenerate(self):
        """Number of Hessian null directions caused by the scaling indeterminacy."""
        return (self.order - 1) * self.rank

    def factors(self, x):
        if isinstance(x, FactorPoint):
            x = x.flatten()
        return FactorPoint.from_flat(x, self.dims, self.rank).factors

    def random_point(self, rng):
        """Uniform entries in [0, 1), as used for initial guesses."""
        return rng.random(self.size)


def _flat(x):
    return x.flatten() if isinstance(x, FactorPoint) else np.asarray(x, dtype=float)


def _grams(factors):
    return [a.T @ a for a in factors]


def _hadamard_except(grams, skip):
    out = np.ones_like(grams[0])
    for m, g in enumerate(grams):
        if m not in skip:
            out = out * g
    return out


def objective(problem, x):
    """``0.5 * ||Z - [[x]]||_F^2``."""
    resid = problem.data - kruskal_full(problem.factors(x))
    return 0.5 * float(np.vdot(resid, resid))


def _align_scaling(factors, reference):
    """Rescale the columns of ``factors`` within their scaling orbit so that the
    first N-1 modes match ``reference`` in norm and sign."""
    out = [a.copy() for a in factors]
    comp = np.ones(out[0].shape[1])
    for n in range(len(out) - 1):
        na = np.linalg.norm(out[n], axis=0)
        nr = np.linalg.norm(reference[n], axis=0)
        sign = np.where(np.sum(out[n] * reference[n], axis=0) < 0, -1.0, 1.0)
        s = np.where(na > 0, sign * nr / np.where(na > 0, na, 1), 1.0)
        out[n] *= s
        comp *= s
    out[-1] /= comp
    return out


def tensor_difference(problem, x, xstar):
    """``[[x]] - [[xstar]]`` accurate to the size of the difference.

    ``x`` is first moved along its scaling orbit towards ``xstar``; the
    difference is then the telescoping sum of rank-r terms with one factor
    replaced by a factor difference.
    """
    ref = problem.factors(xstar)
    a = _align_scaling(problem.factors(x), ref)
    diff = np.zeros(problem.dims)
    for n in range(len(a)):
        diff += kruskal_full(ref[:n] + [a[n] - ref[n]] + a[n + 1:])
    return diff


def objective_gap(problem, x, xstar):
    """``f(x) - f(xstar)`` evaluated without cancellation.

    Uses ``f(x) - f(x*) = 0.5 ||X - X*||^2 - <Z - X*, X - X*>`` with the
    difference from :func:`tensor_difference`, so small gaps keep their
    relative accuracy.
    """
    xs = kruskal_full(problem.factors(xstar))
    diff = tensor_difference(problem, x, xstar)
    return 0.5 * float(np.vdot(diff, diff)) - float(np.vdot(problem.data - xs, diff))


def gradient(problem, x):
    """Flat gradient; block n is ``A_n Gamma_n - Z_(n) KR_n``."""
    factors = problem.factors(x)
    grams = _grams(factors)
    blocks = []
    for n, a in enumerate(factors):
        g = a @ _hadamard_except(grams, {n}) - mttkrp(problem.data, factors, n)
        blocks.append(g.ravel(order="F"))
    return np.concatenate(blocks)


def _contract_except(tensor, factors, keep):
    """Contract every mode not in ``keep`` with the matching factor column.

    Returns an array indexed by the kept modes (in order) and the column index.
    """
    letters = string.ascii_lowercase
    col = "z"
    src = letters[:tensor.ndim]
    operands, subs = [tensor], [src]
    for m, a in enumerate(factors):
        if m not in keep:
            operands.append(a)
            subs.append(src[m] + col)
    out = "".join(src[m] for m in keep) + col
    return np.einsum(",".join(subs) + "->" + out, *operands, optimize=True)


def _hessian_analytic(problem, x):
    factors = problem.factors(x)
    grams = _grams(factors)
    r = problem.rank
    offsets = np.concatenate([[0], np.cumsum(problem.block_sizes)])
    H = np.zeros((problem.size, problem.size))
    eye_r = np.eye(r)
    for n, an in enumerate(factors):
        nn = an.shape[0]
        sl_n = slice(offsets[n], offsets[n + 1])
        H[sl_n, sl_n] = np.kron(_hadamard_except(grams, {n}), np.eye(nn))
        for m in range(n + 1, problem.order):
            am = factors[m]
            nm = am.shape[0]
            p = _hadamard_except(grams, {n, m})
            w = _contract_except(problem.data, factors, (n, m))         # (nn, nm, r)
            c = np.einsum("ik,lk,ks->ils", an, am, p)
            # index order (j, i, s, l) flattens to the column-major block layout
            blk = np.einsum("is,lj,sj->jisl", an, am, p)
            blk += np.einsum("js,ils->jisl", eye_r, c - w)
            blk = blk.reshape(r * nn, r * nm)
            sl_m = slice(offsets[m], offsets[m + 1])
            H[sl_n, sl_m] = blk
            H[sl_m, sl_n] = blk.T
    return H


def _fd_step(x, rel=1e-5):
    return rel * np.maximum(1.0, np.abs(x))


def hessian(problem, x, mode="finite_difference"):
    """Symmetric Hessian, by central differences of the gradient or in closed form."""
    x = _flat(x)
    if mode == "analytic":
        H = _hessian_analytic(problem, x)
    elif mode == "finite_difference":
        H = np.empty((x.size, x.size))
        steps = _fd_step(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = steps[i]
            H[:, i] = (gradient(problem, x + e) - gradient(problem, x - e)) / (2 * steps[i])
    else:
        raise ValueError(f"unknown Hessian mode {mode!r}")
    return 0.5 * (H + H.T)


def q_sd(problem, x, alpha):
    """One steepest-descent step with fixed step length ``alpha``."""
    x = _flat(x)
    return x - alpha * gradient(problem, x)


def _solve_gram(gamma, rhs):
    """Solve ``A @ gamma = rhs`` for ``A`` with a ridge when ``gamma`` is near singular."""
    r = gamma.shape[0]
    evals = np.linalg.eigvalsh(gamma)
    if evals[0] <= 1e-12 * max(evals[-1], 0.0):
        gamma = gamma + 1e-12 * np.trace(gamma) / r * np.eye(r)
    try:
        cf = linalg.cho_factor(gamma)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            f"Gram matrix not positive definite after ridge; eigenvalues {evals}") from exc
    return linalg.cho_solve(cf, rhs.T).T


def q_als(problem, x):
    """One ALS sweep, updating A1 through AN in order."""
    factors = [a.copy() for a in problem.factors(x)]
    grams = _grams(factors)
    for n in range(problem.order):
        gamma = _hadamard_except(grams, {n})
        factors[n] = _solve_gram(gamma, mttkrp(problem.data, factors, n))
        grams[n] = factors[n].T @ factors[n]
    return FactorPoint(factors).flatten()


def block_lower(H, block_sizes):
    """Lower block triangular part of ``H`` (block diagonal included)."""
    offsets = np.concatenate([[0], np.cumsum(block_sizes)])
    M = np.zeros_like(H)
    for i in range(len(block_sizes)):
        rows = slice(offsets[i], offsets[i + 1])
        M[rows, :offsets[i + 1]] = H[rows, :offsets[i + 1]]
    return M


def als_jacobian_from_hessian(H, block_sizes):
    """``I - M^{-1} H`` with ``M`` the lower block triangular part of ``H``."""
    M = block_lower(H, block_sizes)
    try:
        lu = linalg.lu_factor(M, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("lower block triangular part of H is singular") from exc
    if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * np.abs(np.diag(lu[0])).max()):
        raise NumericalError("lower block triangular part of H is singular")
    return np.eye(H.shape[0]) - linalg.lu_solve(lu, H)


def fd_jacobian(fmap, x, rel=1e-5):
    """Central-difference Jacobian of a vector map."""
    x = np.asarray(x, dtype=float)
    steps = _fd_step(x, rel)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = steps[i]
        cols.append((fmap(x + e) - fmap(x - e)) / (2 * steps[i]))
    return np.column_stack(cols)


def default_gradient_tol(problem):
    return 1e-6 * max(1.0, float(np.linalg.norm(problem.data)))


def jacobian_fixed_point(problem, xstar, method="als", alpha=None, mode="analytic",
                         hessian_mode="analytic", gtol=None):
    """Jacobian of ``q_sd`` (``method="sd"``) or ``q_als`` at a fixed point.

    ``mode="analytic"`` uses ``I - alpha H`` or ``I - M^{-1} H``; ``mode="finite_difference"``
    differentiates the map itself.
    """
    xstar = _flat(xstar)
    gtol = default_gradient_tol(problem) if gtol is None else gtol
    gnorm = np.linalg.norm(gradient(problem, xstar))
    if gnorm > gtol:
        raise PreconditionError(f"not a fixed point: ||g|| = {gnorm:.3e} > {gtol:.3e}")
    if method == "sd" and alpha is None:
        raise ValueError("SD Jacobian needs a step length alpha")
    if mode == "finite_difference":
        if method == "sd":
            return fd_jacobian(lambda v: q_sd(problem, v, alpha), xstar)
        if method == "als":
            return fd_jacobian(lambda v: q_als(problem, v), xstar)
        raise ValueError(f"unknown fixed-point method {method!r}")
    if mode != "analytic":
        raise ValueError(f"unknown Jacobian mode {mode!r}")
    H = hessian(problem, xstar, mode=hessian_mode)
    if method == "sd":
        return np.eye(xstar.size) - alpha * H
    if method == "als":
        return als_jacobian_from_hessian(H, problem.block_sizes)
    raise ValueError(f"unknown fixed-point method {method!r}")


def balance(problem, x):
    """Rescale each rank-one component so its factor columns share one norm.

    The reconstruction is unchanged, so a critical point stays critical.
    """
    factors = [a.copy() for a in problem.factors(x)]
    norms = np.array([np.linalg.norm(a, axis=0) for a in factors])   # (N, r)
    if np.any(norms == 0):
        return FactorPoint(factors).flatten()
    target = np.exp(np.mean(np.log(norms), axis=0))
    for a, nrm in zip(factors, norms):
        a *= target / nrm
    return FactorPoint(factors).flatten()


def refine_fixed_point(problem, x0, method="als", alpha=None, max_iter=10_000, tol=1e-13,
                       balanced=True, polish=True):
    """Iterate ``q_als`` (or ``q_sd``) until ``||g|| <= tol * (1 + ||g(x0)||)``.

    With ``polish`` the sweeps continue past the target while the gradient
    norm keeps improving (stopping after 10 sweeps without a new best), so
    ``x*`` sits at the round-off floor. With ``balanced`` the result is
    rescaled by :func:`balance`.
    """
    x = _flat(x0).copy()
    if method == "sd" and alpha is None:
        raise ValueError("SD refinement needs a step length alpha")

    def step(v):
        return q_als(problem, v) if method == "als" else q_sd(problem, v, alpha)

    g0 = np.linalg.norm(gradient(problem, x))
    target = tol * (1.0 + g0)
    best, best_g = x, g0
    gnorm = g0
    it = 0
    while gnorm > target:
        if it == max_iter:
            raise NonConvergenceError(
                f"no fixed point after {max_iter} iterations (||g|| = {best_g:.3e})",
                best=best, gnorm=best_g)
        x = step(x)
        it += 1
        gnorm = np.linalg.norm(gradient(problem, x))
        if not np.isfinite(gnorm):
            raise NonConvergenceError("refinement diverged", best=best, gnorm=best_g)
        if gnorm < best_g:
            best, best_g = x, gnorm
    if polish and it > 0:
        stall = 0
        for _ in range(500):
            x = step(x)
            gnorm = np.linalg.norm(gradient(problem, x))
            if gnorm < best_g:
                best, best_g, stall = x, gnorm, 0
            else:
                stall += 1
                if stall >= 10:
                    break
    return balance(problem, best) if balanced else best


def modified_condition_number(H, num_zero):
    """``(kappa_bar, L, ell)`` after dropping the ``num_zero`` smallest-magnitude eigenvalues."""
    evals = np.linalg.eigvalsh(0.5 * (H + np.transpose(H)))
    if num_zero >= evals.size:
        raise ValueError("num_zero must be smaller than the matrix dimension")
    kept = np.sort(evals[np.argsort(np.abs(evals))[num_zero:]])
    if kept[0] <= 0:
        raise DegenerateSpectrumError(
            f"non-positive eigenvalues remain after excluding {num_zero}: {kept[kept <= 0]}",
            eigenvalues=kept[kept <= 0])
    dropped = evals[np.argsort(np.abs(evals))[:num_zero]]
    if dropped.size and np.max(np.abs(dropped)) > 1e-6 * kept[-1]:
        warnings.warn(f"excluded eigenvalues are not negligible: {dropped}", stacklevel=2)
    L, ell = float(kept[-1]), float(kept[0])
    return L / ell, L, ell
