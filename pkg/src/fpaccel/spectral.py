"""Companion matrices of stationary accelerators, modified spectral radii and
closed-form optimal coefficients and convergence bounds."""

from dataclasses import dataclass, field
import itertools
import json
import warnings

import numpy as np

from .errors import BoundUnavailableError, NumericalError

VARIANTS = ("saa", "sngmres", "sngmresr")


def _variant(name):
    v = name.lower().replace("-", "").replace("_", "")
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return v


def _n_betas(variant, m):
    return m + 1 if variant == "sngmres" else m


@dataclass
class CompanionMatrix:
    matrix: np.ndarray
    variant: str
    m: int
    betas: tuple
    qprime: np.ndarray = field(repr=False, default=None)


def build_companion(qprime, variant, betas):
    """Block companion matrix of a stationary method linearized at ``x*``.

    The first block row is

    * sAA(m):       ``[(1+S) q', -b_1 q', ..., -b_m q']``
    * sNGMRES(m):   ``[(1+S) q' - b_0 I, -b_1 I, ..., -b_m I]``
    * sNGMRES-R(m): ``[(1+S) q', -b_1 I, ..., -b_m I]``

    with ``S`` the sum of all coefficients; identity blocks sit on the
    subdiagonal. ``len(betas)`` fixes ``m`` (``m + 1`` coefficients for sNGMRES).
    """
    variant = _variant(variant)
    qp = np.atleast_2d(np.asarray(qprime, dtype=float))
    if qp.shape[0] != qp.shape[1]:
        raise ValueError("qprime must be square")
    betas = tuple(float(b) for b in np.atleast_1d(betas))
    m = len(betas) - 1 if variant == "sngmres" else len(betas)
    if m < 0 or (variant != "sngmres" and m == 0 and betas):
        raise ValueError(f"{variant} needs at least one coefficient")
    n = qp.shape[0]
    eye = np.eye(n)
    T = np.zeros(((m + 1) * n, (m + 1) * n))
    total = sum(betas)
    if variant == "saa":
        T[:n, :n] = (1 + total) * qp
        for i, b in enumerate(betas, 1):
            T[:n, i * n:(i + 1) * n] = -b * qp
    elif variant == "sngmres":
        T[:n, :n] = (1 + total) * qp - betas[0] * eye
        for i, b in enumerate(betas[1:], 1):
            T[:n, i * n:(i + 1) * n] = -b * eye
    else:
        T[:n, :n] = (1 + total) * qp
        for i, b in enumerate(betas, 1):
            T[:n, i * n:(i + 1) * n] = -b * eye
    for i in range(1, m + 1):
        T[i * n:(i + 1) * n, (i - 1) * n:i * n] = eye
    return CompanionMatrix(T, variant, m, betas, qp)


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    num_excluded: int
    rho: float
    dominant: complex
    excluded: np.ndarray
    kappa_bar: float = None
    L: float = None
    ell: float = None

    @property
    def dominant_imag(self):
        return float(np.imag(self.dominant))

    def to_dict(self):
        return {
            "eigs_re": [float(v) for v in np.real(self.eigenvalues)],
            "eigs_im": [float(v) for v in np.imag(self.eigenvalues)],
            "excluded": int(self.num_excluded),
            "rho": float(self.rho),
            "kappa_bar": self.kappa_bar,
            "L": self.L,
            "ell": self.ell,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def modified_spectral_radius(M, num_excluded=0, target=1.0):
    """Largest eigenvalue modulus after dropping the ``num_excluded`` eigenvalues
    nearest ``target``. Accepts a matrix or a precomputed eigenvalue array."""
    M = np.asarray(M)
    try:
        eigs = np.linalg.eigvals(M) if M.ndim == 2 else M.astype(complex)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    if not 0 <= num_excluded < eigs.size:
        raise ValueError("num_excluded must lie in [0, dimension)")
    order = np.argsort(np.abs(eigs - target), kind="stable")
    excluded = eigs[order[:num_excluded]]
    kept = eigs[order[num_excluded:]]
    if excluded.size and np.max(np.abs(excluded - target)) > 1e-6:
        warnings.warn(
            f"excluded eigenvalue {excluded[np.argmax(np.abs(excluded - target))]:.3g} "
            f"is farther than 1e-6 from {target}", stacklevel=2)
    top = kept[np.argmax(np.abs(kept))]
    return SpectralReport(eigs, num_excluded, float(np.abs(top)), complex(top), excluded)


def optimal_beta_step1_real(mu, variant):
    """Optimal ``(beta, rho)`` of sAA(1) or sNGMRES-R(1) for a real scalar Jacobian ``mu``."""
    variant = _variant(variant)
    mu = float(mu)
    if variant == "saa":
        if mu == 0:
            raise ValueError("mu = 0 is degenerate for sAA (factor is trivially 0)")
        if mu >= 1:
            return -1.0, float(np.sqrt(mu))
        s = np.sqrt(1 - mu)
        beta = (1 - s) / (1 + s)
        rho = 1 - s if mu > 0 else s - 1
        return float(beta), float(rho)
    if variant == "sngmresr":
        if abs(mu) >= 1:
            return -1.0, 1.0
        s = np.sqrt(1 - mu * mu)
        return float((1 - s) / (1 + s)), float(abs(mu) / (1 + s))
    raise ValueError("closed form available for 'saa' and 'sngmresr' only")


SD_VARIANTS = ("sd", "saa_alpha_1_over_l", "saa_optimal", "sngmresr_optimal")


def optimal_sd_params(L, ell, variant):
    """``(alpha, beta, rho)`` for SD-based stationary methods on spectrum ``[ell, L]``.

    ``variant`` is ``sd`` (optimal plain step, ``beta = 0``),
    ``saa_alpha_1_over_L``, ``saa_optimal`` or ``sngmresr_optimal``.
    """
    L, ell = float(L), float(ell)
    if not 0 < ell < L:
        raise ValueError(f"need 0 < ell < L, got ell={ell}, L={L}")
    v = variant.lower()
    kappa = L / ell
    if v == "sd":
        return 2 / (L + ell), 0.0, (kappa - 1) / (kappa + 1)
    if v == "saa_alpha_1_over_l":
        s = np.sqrt(ell / L)
        return 1 / L, float((1 - s) / (1 + s)), float(1 - s)
    if v == "saa_optimal":
        s = np.sqrt(3 * kappa + 1)
        return 4 / (3 * L + ell), float((s - 2) / (s + 2)), float((s - 2) / s)
    if v == "sngmresr_optimal":
        s = np.sqrt(kappa)
        rho = (s - 1) / (s + 1)
        return 2 / (L + ell), float(rho * rho), float(rho)
    raise ValueError(f"unknown variant {variant!r}; expected one of {SD_VARIANTS}")


def complex_lower_bound(rho_qprime, variant):
    """Lower bound ``(rho_lower, beta)`` on the optimal one-step factor when the
    Jacobian spectrum has modulus ``rho_qprime``.

    ``variant`` ``saa`` gives ``1 - sqrt(1 - rho)``; ``sngmresr`` gives
    ``rho / (1 + sqrt(1 - rho**2))``. For the weaker sAA bound pass the
    largest nonnegative real eigenvalue as ``rho_qprime``
    (:func:`weaker_saa_lower_bound`).
    """
    rho = float(rho_qprime)
    if not 0 < rho < 1:
        raise ValueError(f"rho_qprime must lie in (0, 1), got {rho}")
    v = _variant(variant)
    if v == "saa":
        s = np.sqrt(1 - rho)
        return float(1 - s), float((1 - s) / (1 + s))
    if v == "sngmresr":
        s = np.sqrt(1 - rho * rho)
        return float(rho / (1 + s)), float((1 - s) / (1 + s))
    raise ValueError("bound available for 'saa' and 'sngmresr' only")


def weaker_saa_lower_bound(eigenvalues, num_excluded=0, target=1.0):
    """sAA(1) lower bound from the largest nonnegative real eigenvalue of ``q'``."""
    eigs = np.asarray(eigenvalues, dtype=complex)
    order = np.argsort(np.abs(eigs - target), kind="stable")
    kept = eigs[order[num_excluded:]]
    real = kept[(np.abs(kept.imag) <= 1e-10 * max(1.0, np.max(np.abs(kept)))) & (kept.real >= 0)]
    if real.size == 0:
        raise BoundUnavailableError("no nonnegative real eigenvalue remains")
    return complex_lower_bound(float(np.max(real.real)), "saa")


def _delta2(a, r1, r2):
    b = a * r2 / np.sqrt(a * a - r1 * r1)
    tau0 = 2 / (1 + np.sqrt(1 - a * a + b * b + 0j))
    tau1 = 1 - tau0
    if r1 > r2:
        d = 2 * tau1 / (-a * tau0 + np.sqrt((a * tau0) ** 2 + 4 * tau1))
    else:
        d = 2 * tau1 / (b * tau0 - np.sqrt((b * tau0) ** 2 - 4 * tau1))
    return d


def rect_bounds_sngmres_r1(r1, r2, a_grid=None, n_grid=400):
    """Lower/upper estimates ``(delta1, delta2, a_star)`` for sNGMRES-R(1) when
    the Jacobian spectrum lies in the box ``[-r1, r1] x [-r2, r2] i``.

    ``delta2`` is minimized over ``a_grid`` (default: ``n_grid`` log-spaced
    points in ``(max(r1, r2) + 1e-6, 1 - 1e-6)``); if ``r1 == r2`` it is None.
    Raises :class:`BoundUnavailableError` (carrying ``delta1``) when no grid
    point yields a real admissible value.
    """
    r1, r2 = float(r1), float(r2)
    if not (0 <= r1 < 1 and 0 <= r2 < 1) or (r1 == 0 and r2 == 0):
        raise ValueError("need 0 <= r1, r2 < 1, not both zero")
    if r1 == r2:
        return float(r1 / (1 + np.sqrt(1 - r1 * r1))), None, None
    eta0 = 2 / (1 + np.sqrt(1 - r1 * r1 + r2 * r2))
    eta1 = 1 - eta0
    if eta1 == 0:
        delta1 = 0.0
    else:
        delta1 = float(2 * eta1 / (r2 * eta0 - np.sqrt((r2 * eta0) ** 2 - 4 * eta1)))
    lo = max(r1, r2) + 1e-6
    if a_grid is None:
        if lo >= 1 - 1e-6:
            raise BoundUnavailableError("empty admissible range for a", delta1=delta1)
        a_grid = np.geomspace(lo, 1 - 1e-6, n_grid)
    best, a_star = np.inf, None
    with np.errstate(all="ignore"):
        for a in np.asarray(a_grid, dtype=float):
            if not lo - 1e-6 < a < 1:
                continue
            d = complex(_delta2(a, r1, r2))
            if not np.isfinite(d) or abs(d.imag) > 1e-12 * max(1.0, abs(d.real)) or d.real <= 0:
                continue
            if d.real < best:
                best, a_star = d.real, float(a)
    if a_star is None:
        raise BoundUnavailableError("no admissible a on the grid", delta1=delta1)
    return delta1, float(best), a_star


def _scalar_radii(mu, variant, B, excluded=None):
    """Modified companion spectral radius for every coefficient row of ``B``.

    ``B`` has shape (G, nb). The companion blocks are polynomials in ``q'``,
    so its spectrum is the union over eigenvalues ``mu`` of ``q'`` of the roots
    of a scalar polynomial. For entries flagged in ``excluded`` the single
    root nearest 1 is discarded.
    """
    G, nb = B.shape
    mu = np.asarray(mu, dtype=complex)
    S = B.sum(axis=1)
    m = nb - 1 if variant == "sngmres" else nb
    # companion of the monic polynomial lambda^{m+1} + c_1 lambda^m + ... + c_{m+1}
    coeffs = np.zeros((G, mu.size, m + 1), dtype=complex)
    one_plus = (1 + S)[:, None] * mu[None, :]
    if variant == "saa":
        coeffs[:, :, 0] = -one_plus
        for i in range(1, m + 1):
            coeffs[:, :, i] = B[:, i - 1][:, None] * mu[None, :]
    elif variant == "sngmres":
        coeffs[:, :, 0] = -(one_plus - B[:, 0][:, None])
        for i in range(1, m + 1):
            coeffs[:, :, i] = B[:, i][:, None]
    else:
        coeffs[:, :, 0] = -one_plus
        for i in range(1, m + 1):
            coeffs[:, :, i] = B[:, i - 1][:, None]
    if m == 0:
        roots = -coeffs[:, :, :1]
    else:
        C = np.zeros((G, mu.size, m + 1, m + 1), dtype=complex)
        C[:, :, 0, :] = -coeffs
        for i in range(1, m + 1):
            C[:, :, i, i - 1] = 1
        roots = np.linalg.eigvals(C)
    mods = np.abs(roots)
    if excluded is not None and np.any(excluded):
        sub = roots[:, excluded, :]
        drop = np.argmin(np.abs(sub - 1), axis=2)
        sub_mods = mods[:, excluded, :]
        np.put_along_axis(sub_mods, drop[:, :, None], 0.0, axis=2)
        mods[:, excluded, :] = sub_mods
    return np.max(mods, axis=(1, 2))


def _pruned_radii(mu, variant, cells, excluded, chunk):
    """Exact modified radii for the cells that can attain the minimum; inf elsewhere.

    A few extreme eigenvalues give a lower bound for every cell; the full
    spectrum is then evaluated in order of increasing bound until the bound
    exceeds the best exact value found.
    """
    def evaluate(sel_mu, sel_excl, rows):
        return np.concatenate([_scalar_radii(sel_mu, variant, rows[s:s + chunk], sel_excl)
                               for s in range(0, len(rows), chunk)])

    if mu.size <= 24:
        return evaluate(mu, excluded, cells)
    kept = np.nonzero(~excluded)[0]
    picks = set(kept[np.argsort(-np.abs(mu[kept]), kind="stable")[:12]])
    picks |= {kept[np.argmin(mu[kept].real)], kept[np.argmax(mu[kept].real)],
              kept[np.argmax(np.abs(mu[kept].imag))]}
    picks = np.array(sorted(picks))
    lower = evaluate(mu[picks], None, cells)
    order = np.argsort(lower, kind="stable")
    radii = np.full(len(cells), np.inf)
    best = np.inf
    pos = 0
    while pos < len(order) and lower[order[pos]] <= best:
        batch = order[pos:pos + 256]
        batch = batch[lower[batch] <= best]
        radii[batch] = evaluate(mu, excluded, cells[batch])
        best = min(best, float(np.min(radii[batch])))
        pos += 256
    return radii


def brute_force_beta(qprime, variant, m, grid=(-1.0, 1.0, 0.05), num_excluded=0,
                     method="scalar", chunk=20000):
    """Exhaustive search of the coefficient grid minimizing the modified spectral radius.

    Parameters
    ----------
    qprime : array
        Jacobian ``q'(x*)`` (matrix) or, with ``method="scalar"``, may also be
        given as its eigenvalues (1-D array).
    grid : (start, stop, step) or 1-D array
        Per-coefficient grid; stop is inclusive.
    num_excluded : int
        Eigenvalues of ``q'`` nearest 1 that are discarded before the search.
    method : {"scalar", "companion"}
        ``scalar`` factors the companion spectrum per eigenvalue of ``q'``;
        ``companion`` builds and eigen-solves the full block matrix.

    Returns
    -------
    betas : ndarray
        Lexicographically smallest minimizer on the grid.
    rho : float
    """
    variant = _variant(variant)
    if m not in (1, 2):
        raise ValueError("m must be 1 or 2")
    if isinstance(grid, tuple) and len(grid) == 3:
        start, stop, step = grid
        values = start + step * np.arange(int(np.floor((stop - start) / step + 1e-9)) + 1)
    else:
        values = np.asarray(grid, dtype=float)
    if values.size == 0:
        raise ValueError("empty grid")
    nb = _n_betas(variant, m)
    cells = np.array(list(itertools.product(values, repeat=nb)))   # lexicographic order
    qp = np.asarray(qprime)
    if method == "scalar":
        mu = np.linalg.eigvals(qp) if qp.ndim == 2 else qp.astype(complex)
        excluded = np.zeros(mu.size, dtype=bool)
        excluded[np.argsort(np.abs(mu - 1), kind="stable")[:num_excluded]] = True
        radii = _pruned_radii(mu, variant, cells, excluded, chunk)
    elif method == "companion":
        excl = num_excluded
        radii = np.empty(len(cells))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for i, b in enumerate(cells):
                T = build_companion(qp, variant, b).matrix
                radii[i] = modified_spectral_radius(T, excl, 1.0).rho
    else:
        raise ValueError(f"unknown method {method!r}")
    best = int(np.argmin(radii))   # first minimum = lexicographically smallest
    return cells[best].copy(), float(radii[best])
