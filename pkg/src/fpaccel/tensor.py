"""Dense tensor primitives and the synthetic CP test-problem generator.

Tensors are plain ``numpy.ndarray`` objects. Wherever a tensor is linearized
(serialization, unfoldings) the first index runs fastest, and the mode-n
unfolding orders its columns so that

    unfold(kruskal_full(A), n) == A[n] @ khatri_rao(A[N-1], ..., A[n+1], A[n-1], ..., A[0]).T

Modes are 0-based.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np


def khatri_rao(*matrices):
    """Column-wise Kronecker product.

    ``khatri_rao(A, B)[:, j] == np.kron(A[:, j], B[:, j])``, so the row index of
    the last matrix runs fastest. More than two matrices are combined left to
    right.
    """
    if len(matrices) == 1 and not isinstance(matrices[0], np.ndarray):
        matrices = tuple(matrices[0])
    if not matrices:
        raise ValueError("khatri_rao needs at least one matrix")
    mats = [np.asarray(m, dtype=float) for m in matrices]
    ncol = mats[0].shape[1]
    for m in mats:
        if m.ndim != 2 or m.shape[1] != ncol:
            raise ValueError(
                f"khatri_rao: column counts differ ({[x.shape for x in mats]})")

    def pair(a, b):
        return (a[:, None, :] * b[None, :, :]).reshape(-1, ncol)

    return reduce(pair, mats)


def unfold(tensor, mode):
    """Mode-``mode`` matricization, shape ``(n_mode, prod of the other extents)``."""
    tensor = np.asarray(tensor)
    if not 0 <= mode < tensor.ndim:
        raise ValueError(f"mode {mode} out of range for a {tensor.ndim}-way tensor")
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1, order="F")


def refold(matrix, mode, shape):
    """Inverse of :func:`unfold`."""
    shape = tuple(shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for a {len(shape)}-way tensor")
    moved = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    return np.moveaxis(np.reshape(matrix, moved, order="F"), 0, mode)


def kruskal_full(factors):
    """Dense tensor ``sum_j a1_j o a2_j o ... o aN_j`` from factor matrices."""
    factors = [np.asarray(a, dtype=float) for a in factors]
    rank = factors[0].shape[1]
    if any(a.ndim != 2 or a.shape[1] != rank for a in factors):
        raise ValueError("kruskal_full: factor matrices must share their column count")
    shape = tuple(a.shape[0] for a in factors)
    # mode-0 unfolding times the Khatri-Rao product of the rest, then refold
    rest = khatri_rao(*factors[:0:-1]) if len(factors) > 1 else np.ones((1, rank))
    return refold(factors[0] @ rest.T, 0, shape)


def mttkrp(tensor, factors, mode):
    """``unfold(tensor, mode) @ khatri_rao(others in reverse order)``."""
    others = [factors[m] for m in reversed(range(len(factors))) if m != mode]
    return unfold(tensor, mode) @ khatri_rao(*others)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a random CP test tensor.

    ``noise_homo`` and ``noise_hetero`` are the percentage noise ratios
    (``l1``, ``l2``); 0 disables the corresponding stage.
    """

    dims: tuple = (50, 50, 50)
    rank: int = 3
    collinearity: float = 0.5
    noise_homo: float = 1.0
    noise_hetero: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.rank < 1:
            raise ValueError("rank must be positive")
        if any(d < 1 for d in self.dims):
            raise ValueError("dims must be positive")
        if self.rank > min(self.dims):
            raise ValueError(f"rank {self.rank} exceeds the smallest extent {min(self.dims)}")
        if not 0 <= self.collinearity < 1:
            raise ValueError("collinearity must lie in [0, 1)")
        for name in ("noise_homo", "noise_hetero"):
            val = getattr(self, name)
            if not 0 <= val < 100:
                raise ValueError(f"{name} must lie in [0, 100), got {val}")


def collinear_factors(rng, n, rank, collinearity):
    """An ``n x rank`` matrix with unit columns and pairwise inner products ``collinearity``."""
    gram = np.full((rank, rank), collinearity) + (1 - collinearity) * np.eye(rank)
    upper = np.linalg.cholesky(gram).T          # gram == upper.T @ upper
    q, _ = np.linalg.qr(rng.random((n, rank)))
    return q @ upper


def _noise_scale(ratio):
    return (100.0 / ratio - 1.0) ** -0.5


def generate_synthetic(spec):
    """Draw a noisy rank-``r`` tensor with prescribed factor collinearity.

    Returns ``(Z, truth)``. The generator is ``numpy.random.default_rng(spec.seed)``
    (PCG64); all draws come from it in a fixed order, so identical specs give
    bit-identical output.
    """
    rng = np.random.default_rng(spec.seed)
    truth = [collinear_factors(rng, n, spec.rank, spec.collinearity) for n in spec.dims]
    low_rank = kruskal_full(truth)
    noise1 = rng.standard_normal(spec.dims)
    noise2 = rng.standard_normal(spec.dims)

    z_hat = low_rank
    if spec.noise_homo > 0:
        z_hat = low_rank + (_noise_scale(spec.noise_homo) * np.linalg.norm(low_rank)
                            * noise1 / np.linalg.norm(noise1))
    z = z_hat
    if spec.noise_hetero > 0:
        mixed = noise2 * z_hat
        z = z_hat + (_noise_scale(spec.noise_hetero) * np.linalg.norm(z_hat)
                     * mixed / np.linalg.norm(mixed))
    return z, truth


def save_tensor(path, tensor, rank=None):
    """Write ``dims ...`` / ``rank r`` header lines then values, first index fastest."""
    tensor = np.asarray(tensor, dtype=float)
    with open(path, "w") as fh:
        fh.write("dims " + " ".join(str(d) for d in tensor.shape) + "\n")
        fh.write(f"rank {0 if rank is None else int(rank)}\n")
        for v in tensor.ravel(order="F"):
            fh.write(f"{v:.17g}\n")


def load_tensor(path):
    """Read a file written by :func:`save_tensor`. Returns ``(tensor, rank)``."""
    with open(path) as fh:
        head = fh.readline().split()
        if not head or head[0] != "dims":
            raise ValueError(f"{path}: expected a 'dims' header line")
        dims = tuple(int(d) for d in head[1:])
        rank_line = fh.readline().split()
        if len(rank_line) != 2 or rank_line[0] != "rank":
            raise ValueError(f"{path}: expected a 'rank' header line")
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    if values.size != int(np.prod(dims)):
        raise ValueError(f"{path}: {values.size} values for dims {dims}")
    return values.reshape(dims, order="F"), int(rank_line[1])
