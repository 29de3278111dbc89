"""GMRES on linearized fixed-point systems, degeneracy projection and
field-of-values bounds."""

from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy.linalg import eigh, qr

from .errors import NumericalError, ZeroInFovError


class LinearFixedPointMap:
    """``q(x) = (I - P A) x + P b`` with exact Jacobian ``I - P A``."""

    def __init__(self, P, A, b):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        n = A.shape[0]
        if A.shape != (n, n) or P.shape != (n, n) or b.shape != (n,):
            raise ValueError(f"dimension mismatch: P{P.shape}, A{A.shape}, b{b.shape}")
        self.P, self.A, self.b = P, A, b
        self.jacobian = np.eye(n) - P @ A
        self.offset = P @ b

    def __call__(self, x):
        return self.jacobian @ np.asarray(x, dtype=float) + self.offset

    def residual(self, x):
        """``x - q(x) = P (A x - b)``."""
        x = np.asarray(x, dtype=float)
        return x - self(x)


def linear_fixed_point_map(P, A, b):
    return LinearFixedPointMap(P, A, b)


@dataclass
class GmresHistory:
    residuals: list
    x: np.ndarray
    converged: bool

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("k,rnorm\n")
            for k, r in enumerate(self.residuals):
                fh.write(f"{k},{r:.17g}\n")


def gmres(A, b, x0=None, max_iter=None, tol=1e-12):
    """Unrestarted GMRES with modified Gram-Schmidt (one reorthogonalization
    pass) and Givens rotations.

    ``residuals[k]`` is ``||b - A x_k||`` for the k-th iterate, starting with
    the initial residual. Iteration stops once it drops to ``tol * ||r_0||``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError("A must be square and match b")
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    max_iter = n if max_iter is None else int(max_iter)
    r0 = b - A @ x0
    beta = np.linalg.norm(r0)
    hist = [float(beta)]
    if beta == 0:
        return GmresHistory(hist, x0, True)
    V = np.zeros((n, max_iter + 1))
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = beta
    V[:, 0] = r0 / beta
    k_done = 0
    converged = False
    for j in range(max_iter):
        w = A @ V[:, j]
        for _ in range(2):
            for i in range(j + 1):
                h = V[:, i] @ w
                H[i, j] += h
                w -= h * V[:, i]
        H[j + 1, j] = np.linalg.norm(w)
        breakdown = H[j + 1, j] <= 1e-14 * np.linalg.norm(H[:j + 2, j])
        if not breakdown:
            V[:, j + 1] = w / H[j + 1, j]
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = math.hypot(H[j, j], H[j + 1, j])
        if denom == 0:
            raise NumericalError(f"GMRES: singular Hessenberg column at step {j}")
        cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
        H[j, j] = denom
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k_done = j + 1
        hist.append(float(abs(g[j + 1])))
        if abs(g[j + 1]) <= tol * beta:
            converged = True
            break
        if breakdown:
            # invariant subspace reached: the least-squares residual is final
            converged = abs(g[j + 1]) <= max(tol, 1e-10) * beta
            if not converged:
                raise NumericalError("GMRES breakdown with nonzero residual")
            break
    y = np.linalg.solve(np.triu(H[:k_done, :k_done]), g[:k_done]) if k_done else np.zeros(0)
    x = x0 + V[:, :k_done] @ y
    return GmresHistory(hist, x, converged)


def project_nonsingular(Asing, num_zero):
    """Restrict ``Asing`` to the span of its eigenvectors for the nonzero eigenvalues.

    Returns ``(B, Q)`` with ``B = Q.T @ Asing @ Q`` and ``Q`` an orthonormal
    basis (thin QR of the real eigenvector basis, conjugate pairs split into
    real and imaginary parts) of the retained invariant subspace.
    """
    A = np.asarray(Asing, dtype=float)
    n = A.shape[0]
    if not 0 <= num_zero < n:
        raise ValueError("num_zero must lie in [0, n)")
    try:
        lam, V = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    keep = np.sort(np.argsort(np.abs(lam), kind="stable")[num_zero:])
    cols = []
    taken = set()
    for i in keep:
        if i in taken:
            continue
        v = V[:, i]
        if abs(lam[i].imag) > 0:
            cols.extend([v.real, v.imag])
            # the conjugate partner spans the same real plane
            dist = np.abs(lam - np.conj(lam[i]))
            dist[i] = np.inf
            partner = np.argmin(dist)
            taken.add(int(partner))
        else:
            cols.append(v.real)
        taken.add(int(i))
    W = np.column_stack(cols)
    cond = np.linalg.cond(W)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"eigenvector basis is ill-conditioned (cond = {cond:.3e})")
    Q, _ = qr(W, mode="economic")
    return Q.T @ A @ Q, Q


def fov_bounding_rect(B):
    """``((xmin, xmax), ymax)``: the field of values lies in
    ``[xmin, xmax] x [-ymax, ymax] i``."""
    B = np.asarray(B, dtype=float)
    Bs = 0.5 * (B + B.T)
    Ba = 0.5 * (B - B.T)
    ev = np.linalg.eigvalsh(Bs)
    ymax = float(np.max(np.abs(np.linalg.eigvals(Ba)))) if B.size else 0.0
    return (float(ev[0]), float(ev[-1])), ymax


def fov_numeric(B, n_angles=512):
    """Boundary support points of the field of values, one per rotation angle.

    For angle ``theta`` the top eigenvector ``v`` of the Hermitian part of
    ``exp(i theta) B`` gives the boundary point ``v^H B v``.
    """
    if n_angles < 8:
        raise ValueError("n_angles must be at least 8")
    B = np.asarray(B, dtype=complex)
    pts = np.empty(n_angles, dtype=complex)
    support = np.empty(n_angles)
    thetas = 2 * np.pi * np.arange(n_angles) / n_angles
    for i, th in enumerate(thetas):
        R = np.exp(1j * th) * B
        Hm = 0.5 * (R + R.conj().T)
        try:
            w, v = eigh(Hm, subset_by_index=[B.shape[0] - 1, B.shape[0] - 1])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver failed at angle {th}: {exc}") from exc
        v = v[:, 0]
        pts[i] = v.conj() @ B @ v
        support[i] = w[0]
    return pts, thetas, support


def _point_in_polygon(poly, z=0j):
    """Winding test for a closed polygon given by its vertices (any orientation)."""
    x, y = poly.real - z.real, poly.imag - z.imag
    inside = False
    n = len(poly)
    for i in range(n):
        j = i - 1
        if (y[i] > 0) != (y[j] > 0):
            xc = x[j] + (0 - y[j]) * (x[i] - x[j]) / (y[i] - y[j])
            if xc > 0:
                inside = not inside
    return inside


def _distance_to_polygon(poly, z=0j):
    a = poly
    b = np.roll(poly, -1)
    d = b - a
    dd = np.abs(d) ** 2
    t = np.where(dd > 0, np.real((z - a) * np.conj(d)) / np.where(dd > 0, dd, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return float(np.min(np.abs(a + t * d - z)))


def beckermann_factor(nu, r):
    """``(rho_beta, c_beta)`` with ``cos(beta) = nu / r``."""
    nu, r = float(nu), float(r)
    if nu <= 0:
        raise ZeroInFovError(f"distance of the field of values to 0 is {nu} <= 0")
    if r <= 0 or nu > r * (1 + 1e-12):
        raise ValueError(f"need 0 < nu <= r, got nu={nu}, r={r}")
    beta = math.acos(min(1.0, nu / r))
    rho = 2 * math.sin(beta / (4 - 2 * beta / math.pi))
    return rho, (2 + 2 / math.sqrt(3)) * (2 + rho)


@dataclass
class FovReport:
    boundary: np.ndarray
    rect: tuple
    nu: float
    r: float
    zero_in_fov: bool
    angle: float = None
    rho_beta: float = None
    c_beta: float = None
    support: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {
            "boundary_re": [float(v) for v in self.boundary.real],
            "boundary_im": [float(v) for v in self.boundary.imag],
            "rect": [self.rect[0][0], self.rect[0][1], self.rect[1]],
            "nu": self.nu, "r": self.r,
            "rho_beta": self.rho_beta, "c_beta": self.c_beta,
            "zero_in_fov": bool(self.zero_in_fov),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def fov_report(B, n_angles=512, use_rect=False):
    """Field-of-values summary and Beckermann factors for ``B``.

    ``zero_in_fov`` is False only when 0 is outside the boundary polygon and
    some support line separates it from the field. ``nu`` is the largest
    separation over the sampled support lines, which never exceeds the true
    distance, so the resulting ``rho_beta`` is conservative. With ``use_rect``
    the bounding rectangle replaces the numerical field for ``nu`` and ``r``.
    """
    pts, thetas, support = fov_numeric(B, n_angles)
    rect = fov_bounding_rect(np.real(B))
    if use_rect:
        (x0, x1), y = rect
        corners = np.array([x0 - 1j * y, x1 - 1j * y, x1 + 1j * y, x0 + 1j * y])
        poly = corners
        zero_in = x0 <= 0 <= x1
        r = float(np.max(np.abs(corners)))
    else:
        poly = pts
        zero_in = _point_in_polygon(pts) or not np.min(support) < 0
        r = float(np.max(support))   # numerical radius = max support value over angles
        r = max(r, float(np.max(np.abs(pts))))
    if zero_in:
        nu = 0.0
    elif use_rect:
        nu = _distance_to_polygon(poly)
    else:
        nu = float(-np.min(support))
    rep = FovReport(pts, rect, nu, r, bool(zero_in), support=support)
    if not zero_in and nu > 0:
        rep.rho_beta, rep.c_beta = beckermann_factor(nu, r)
        rep.angle = math.acos(min(1.0, nu / r))
    return rep
