"""Symmetric linear algebra and seeded Gaussian sampling.

Dense eigendecompositions are delegated to LAPACK through numpy; the top-k
matrix-free path is a hand-written Lanczos iteration with full
reorthogonalization, which at the dimensions used here costs little and
avoids ghost eigenvalues entirely.

Randomness runs through :class:`RngStream`, a value type wrapping a
counter-based Philox generator keyed by (seed, stream). Every operation that
takes an RngStream derives a fresh generator from it, so calling the same
operation twice with the same stream reproduces the same draws, and distinct
stream ids give independent streams regardless of scheduling.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CapacityError, ConvergenceError, ValidationError

# Dense eigensolver size cutoff. Full spectra at the scales used by the
# experiments (d up to ~2000) run in seconds; anything larger must go through
# the matrix-free path.
DENSE_LIMIT = 2048

# Eigenvalues of nominally-PSD operators in [-PSD_CLAMP, 0) are rounding
# debris and are clamped to zero; anything below -PSD_CLAMP means the input
# was not PSD and is rejected.
PSD_CLAMP = 1e-10

SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream; (seed, stream) determines every draw."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % (1 << 64), self.stream % (1 << 64)],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, offset: int) -> "RngStream":
        return RngStream(self.seed, self.stream + offset)


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream or an already-built Generator.

    Loops that must thread stateful draws across many internal steps build
    the generator once per call and pass it down; public entry points take
    RngStream values.
    """
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ValidationError(f"expected RngStream or numpy Generator, got {type(rng)!r}")


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free symmetric operator on R^dim."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.dim <= 0:
            raise ValidationError("operator dimension must be positive")


def matrix_operator(A: np.ndarray) -> LinearOperator:
    A = np.asarray(A, dtype=float)
    check_symmetric(A)
    return LinearOperator(dim=A.shape[0], apply=lambda v: A @ v)


def diagonal_operator(diag: np.ndarray) -> LinearOperator:
    diag = np.asarray(diag, dtype=float)
    return LinearOperator(dim=diag.size, apply=lambda v: diag * v)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues in descending order with matching orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # shape (dim, k), column j pairs with eigenvalue j

    @property
    def k(self) -> int:
        return int(self.eigenvalues.size)


def check_symmetric(A: np.ndarray, rtol: float = SYMMETRY_RTOL) -> None:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    if scale == 0.0:
        return
    if float(np.max(np.abs(A - A.T))) > rtol * scale:
        raise ValidationError("matrix is not symmetric within tolerance")


def _clamp_psd(eigenvalues: np.ndarray) -> np.ndarray:
    if np.min(eigenvalues, initial=0.0) < -PSD_CLAMP:
        raise ValidationError(
            f"operator is not PSD: smallest eigenvalue {np.min(eigenvalues):g}")
    return np.where((eigenvalues < 0.0), 0.0, eigenvalues)


def sym_eig_dense(A: np.ndarray, psd: bool = True) -> SpectralDecomposition:
    """Full eigendecomposition of a symmetric matrix.

    With psd=True (the default; the operators here are Gram-type),
    eigenvalues in [-1e-10, 0) are clamped to zero and anything below that
    raises.
    """
    A = np.asarray(A, dtype=float)
    check_symmetric(A)
    d = A.shape[0]
    if d > DENSE_LIMIT:
        raise CapacityError(f"dimension {d} exceeds dense limit {DENSE_LIMIT}")
    w, V = np.linalg.eigh(A)
    w = w[::-1].copy()
    V = V[:, ::-1].copy()
    if psd:
        w = _clamp_psd(w)
    return SpectralDecomposition(eigenvalues=w, eigenvectors=V)


def lanczos_topk(op, k: int, max_iters: int | None = None, tol: float = 1e-8,
                 rng: RngStream | None = None) -> SpectralDecomposition:
    """Top-k eigenpairs of a symmetric PSD operator by Lanczos iteration.

    Uses full reorthogonalization (twice per step). Convergence is declared
    when every returned Ritz pair satisfies ||op(u) - lambda u|| <= tol *
    lambda_1, verified with actual operator applications before returning.

    Parameters
    ----------
    op : LinearOperator or dense symmetric array
    k : number of eigenpairs wanted, 1 <= k < dim
    max_iters : Krylov dimension budget (default min(dim, max(10k, 100)))
    tol : relative residual tolerance
    rng : seed for the start vector (default RngStream(0, 0))
    """
    if isinstance(op, np.ndarray):
        op = matrix_operator(op)
    dim = op.dim
    if not 1 <= k < dim:
        raise ValidationError(f"need 1 <= k < dim, got k={k}, dim={dim}")
    if max_iters is None:
        max_iters = min(dim, max(10 * k, 100))
    max_iters = min(max_iters, dim)
    if max_iters < k:
        raise ValidationError("max_iters smaller than k")
    gen = as_generator(rng if rng is not None else RngStream(0, 0))

    V = np.zeros((dim, max_iters))
    alphas = np.zeros(max_iters)
    betas = np.zeros(max_iters)  # betas[j] couples basis vectors j and j+1

    q = gen.standard_normal(dim)
    q /= np.linalg.norm(q)
    V[:, 0] = q

    def ritz(m):
        T = np.diag(alphas[:m])
        if m > 1:
            off = betas[:m - 1]
            T += np.diag(off, 1) + np.diag(off, -1)
        theta, S = np.linalg.eigh(T)
        order = np.argsort(theta)[::-1][:min(k, m)]
        return theta[order], S[:, order]

    m = 0
    restarted_scale = None
    while m < max_iters:
        q = V[:, m]
        w = np.asarray(op.apply(q), dtype=float)
        if w.shape != (dim,):
            raise ValidationError("operator returned wrong shape")
        alphas[m] = float(q @ w)
        # full reorthogonalization, applied twice for float safety
        basis = V[:, :m + 1]
        w = w - basis @ (basis.T @ w)
        w = w - basis @ (basis.T @ w)
        beta = float(np.linalg.norm(w))
        if restarted_scale is None:
            restarted_scale = max(abs(alphas[0]), 1e-30)

        m += 1
        if m >= k:
            theta, S = ritz(m)
            # residual of each Ritz pair is |beta * (last row of S)|
            res = np.abs(beta * S[-1, :])
            lam1 = max(abs(float(theta[0])), 1e-30)
            if np.all(res <= tol * lam1) or m == dim:
                break
        if m == max_iters:
            break
        if beta <= 1e-13 * restarted_scale:
            # invariant subspace found; restart with a fresh direction
            fresh = gen.standard_normal(dim)
            basis = V[:, :m]
            fresh -= basis @ (basis.T @ fresh)
            fresh -= basis @ (basis.T @ fresh)
            norm = np.linalg.norm(fresh)
            if norm <= 1e-13:
                break
            betas[m - 1] = 0.0
            V[:, m] = fresh / norm
        else:
            betas[m - 1] = beta
            V[:, m] = w / beta

    theta, S = ritz(m)
    U = V[:, :m] @ S
    U /= np.linalg.norm(U, axis=0, keepdims=True)

    lam1 = max(abs(float(theta[0])), 1e-30)
    residuals = np.array([
        float(np.linalg.norm(np.asarray(op.apply(U[:, j])) - theta[j] * U[:, j]))
        for j in range(U.shape[1])
    ])
    if np.any(residuals > tol * lam1):
        raise ConvergenceError(
            f"Lanczos did not converge in {m} iterations "
            f"(worst residual {residuals.max():.3e} vs tol {tol * lam1:.3e})",
            residuals=residuals)

    eigenvalues = _clamp_psd(np.asarray(theta, dtype=float))
    return SpectralDecomposition(eigenvalues=eigenvalues, eigenvectors=U)


def gaussian_vector(mean: np.ndarray, cov_sqrt_apply: LinearOperator,
                    rng) -> np.ndarray:
    """Draw mean + S^(1/2) z with z standard normal from the stream."""
    mean = np.asarray(mean, dtype=float)
    if mean.ndim != 1 or mean.size != cov_sqrt_apply.dim:
        raise ValidationError(
            f"mean has dim {mean.shape}, operator expects {cov_sqrt_apply.dim}")
    gen = as_generator(rng)
    z = gen.standard_normal(cov_sqrt_apply.dim)
    return mean + np.asarray(cov_sqrt_apply.apply(z), dtype=float)
