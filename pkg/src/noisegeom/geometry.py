"""Loss, Fisher matrix, gradient-noise covariances, and alignment metrics.

Conventions used throughout:

- residuals u_i = f(x_i; theta) - y_i, per-sample loss l_i = u_i^2 / 2,
  empirical loss L = mean(l_i), gradient grad L = mean(u_i grad f_i)
- Fisher matrix G = mean of grad f_i outer products
- sigma1 = mean(u_i^2 outer(grad f_i, grad f_i)), the uncentered second
  moment of per-sample gradients; sigma2 = outer(grad L, grad L);
  sigma0 = sigma1 - sigma2, the covariance of single-sample gradient noise
- loss alignment mu = tr(sigma1 G) / (2 L ||G||_F^2)
- directional alignment g(v) = v^T sigma1 v / (2 L v^T G v)

Both ratios use the 0/0 -> 1 convention: when numerator and denominator both
fall below ZERO_TOL the ratio is reported as exactly 1. Quadratic forms are
accumulated with compensated summation (math.fsum over per-chunk partials) so
the documented 1e-10 cross-check tolerances stay honest at n = 1e5.

Large quantities never require p x p storage: everything is computed from
per-sample gradient inner products, streamed in row blocks.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import models
from .datagen import CovarianceSpec, Dataset, cov_matrix
from .errors import CapacityError, NumericalError, ValidationError
from .linalg import (DENSE_LIMIT, LinearOperator, RngStream, as_generator,
                     lanczos_topk, sym_eig_dense)

# absolute floor below which a quadratic form counts as zero for the 0/0
# convention; well under any attainable nonzero value at double precision
ZERO_TOL = 1e-14

# the O(n^2) pairwise trace formula is used while n^2 stays below this
PAIRWISE_LIMIT = 10 ** 8

HUTCHINSON_PROBES = 64

# stream id for internally generated probe vectors; far above the harness
# assignment (data=0, theta=1, optimizer=2+rep) so it never collides
PROBE_STREAM = 1 << 32

_CHUNK_ELEMS = 1 << 22


def _row_chunk(n: int, p: int) -> int:
    return max(1, min(n, _CHUNK_ELEMS // max(p, 1)))


def _grad_blocks(model: models.Model, dataset: Dataset, theta: np.ndarray,
                 idx: np.ndarray | None = None):
    """Yield (slice_start, grad_block, row_index_block) in fixed order."""
    X = dataset.inputs if idx is None else dataset.inputs[idx]
    n = X.shape[0]
    rows = _row_chunk(n, model.param_dim)
    for s in range(0, n, rows):
        block = models.grad_matrix(model, theta, X[s:s + rows])
        yield s, block


# ---------------------------------------------------------------------------
# loss state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossState:
    theta: np.ndarray
    residuals: np.ndarray
    loss: float
    grad: np.ndarray


def loss_state(model: models.Model, dataset: Dataset, theta) -> LossState:
    """Residuals, empirical loss, and full-batch gradient at theta."""
    theta = np.asarray(theta, dtype=float)
    preds = models.predict_batch(model, theta, dataset.inputs)
    u = preds - dataset.targets
    n = dataset.n
    loss = math.fsum(float(v) for v in u * u) / (2.0 * n)
    grad = np.zeros(model.param_dim)
    for s, block in _grad_blocks(model, dataset, theta):
        grad += block.T @ u[s:s + block.shape[0]]
    return LossState(theta=theta, residuals=u, loss=loss, grad=grad / n)


# ---------------------------------------------------------------------------
# dense second-moment matrices
# ---------------------------------------------------------------------------

def fisher_matrix(model: models.Model, dataset: Dataset, theta) -> np.ndarray:
    """G = mean of per-sample gradient outer products, shape (p, p)."""
    p = model.param_dim
    if p > DENSE_LIMIT:
        raise CapacityError(
            f"param dim {p} exceeds dense limit {DENSE_LIMIT}; use fisher_apply")
    theta = np.asarray(theta, dtype=float)
    G = np.zeros((p, p))
    for _, block in _grad_blocks(model, dataset, theta):
        G += block.T @ block
    G /= dataset.n
    return (G + G.T) / 2.0


def noise_covariance(model: models.Model, dataset: Dataset, theta,
                     which: str = "sigma0") -> np.ndarray:
    """sigma1 (uncentered) or sigma0 (centered) noise second moment."""
    if which not in ("sigma0", "sigma1"):
        raise ValidationError(f"which must be sigma0 or sigma1, got {which!r}")
    p = model.param_dim
    if p > DENSE_LIMIT:
        raise CapacityError(
            f"param dim {p} exceeds dense limit {DENSE_LIMIT}; use sigma1_apply")
    state = loss_state(model, dataset, theta)
    u2 = state.residuals ** 2
    S = np.zeros((p, p))
    for s, block in _grad_blocks(model, dataset, theta):
        S += block.T @ (u2[s:s + block.shape[0], None] * block)
    S /= dataset.n
    S = (S + S.T) / 2.0
    if which == "sigma0":
        S = S - np.outer(state.grad, state.grad)
    return S


# ---------------------------------------------------------------------------
# matrix-free applications
# ---------------------------------------------------------------------------

def _apply_over_rows(model, dataset, theta, v, idx, weights=None) -> np.ndarray:
    """mean over the given rows of (grad_i^T v) [w_i] grad_i.

    Shared by the exact and Monte-Carlo paths so that exhaustive subsampling
    reproduces the exact result bit for bit.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (model.param_dim,):
        raise ValidationError(f"v has shape {v.shape}, expected ({model.param_dim},)")
    out = np.zeros(model.param_dim)
    count = dataset.n if idx is None else len(idx)
    for s, block in _grad_blocks(model, dataset, theta, idx=idx):
        t = block @ v
        if weights is not None:
            t = t * weights[s:s + block.shape[0]]
        out += block.T @ t
    return out / count


def fisher_apply(model: models.Model, dataset: Dataset, theta, v) -> np.ndarray:
    """G v without forming G; O(n p) time."""
    return _apply_over_rows(model, dataset, np.asarray(theta, dtype=float), v, None)


def sigma1_apply(model: models.Model, dataset: Dataset, theta, v) -> np.ndarray:
    """sigma1 v without forming sigma1; O(n p) time."""
    theta = np.asarray(theta, dtype=float)
    state = loss_state(model, dataset, theta)
    return _apply_over_rows(model, dataset, theta, v, None,
                            weights=state.residuals ** 2)


def fisher_operator(model: models.Model, dataset: Dataset, theta) -> LinearOperator:
    theta = np.asarray(theta, dtype=float)
    return LinearOperator(
        dim=model.param_dim,
        apply=lambda v: _apply_over_rows(model, dataset, theta, v, None))


def mc_apply(model: models.Model, dataset: Dataset, theta, v, b: int, rng,
             which: str = "fisher", with_replacement: bool = True) -> np.ndarray:
    """Monte-Carlo estimate of G v (or sigma1 v) from b sampled rows.

    The estimator is unbiased under with-replacement sampling. With
    with_replacement=False and b = n (exhaustive mode) the full dataset is
    used in its stored order, so the result equals fisher_apply exactly.
    Because rng is a pure stream, the same (rng, b) always selects the same
    rows; use distinct streams for independent draws.
    """
    if which not in ("fisher", "sigma1"):
        raise ValidationError(f"which must be fisher or sigma1, got {which!r}")
    n = dataset.n
    if not 1 <= b <= n:
        raise ValidationError(f"need 1 <= b <= n, got b={b}, n={n}")
    theta = np.asarray(theta, dtype=float)
    gen = as_generator(rng)
    if with_replacement:
        idx = gen.integers(0, n, size=b)
    elif b == n:
        idx = None  # canonical order makes exhaustive mode bitwise exact
    else:
        idx = np.sort(gen.choice(n, size=b, replace=False))
    weights = None
    if which == "sigma1":
        preds_idx = idx if idx is not None else slice(None)
        sub = dataset.inputs[preds_idx]
        preds = models.predict_batch(model, theta, sub)
        weights = (preds - dataset.targets[preds_idx]) ** 2
    return _apply_over_rows(model, dataset, theta, v, idx, weights=weights)


def mc_operator(model: models.Model, dataset: Dataset, theta, b: int, rng,
                which: str = "fisher") -> LinearOperator:
    """A fixed subsampled operator: rows are drawn once at construction.

    This is the reading of per-sample subsampling that keeps the operator
    symmetric and deterministic, as an eigensolver requires.
    """
    n = dataset.n
    if not 1 <= b <= n:
        raise ValidationError(f"need 1 <= b <= n, got b={b}, n={n}")
    theta = np.asarray(theta, dtype=float)
    gen = as_generator(rng)
    idx = gen.integers(0, n, size=b)
    weights = None
    if which == "sigma1":
        sub = dataset.inputs[idx]
        preds = models.predict_batch(model, theta, sub)
        weights = (preds - dataset.targets[idx]) ** 2
    return LinearOperator(
        dim=model.param_dim,
        apply=lambda v: _apply_over_rows(model, dataset, theta, v, idx,
                                         weights=weights))


# ---------------------------------------------------------------------------
# alignment metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignmentReport:
    mu: float
    gamma1: float
    gamma1_bar: float
    loss: float
    fisher_fro_norm: float
    estimator: str  # "pairwise" or "hutchinson"

    def to_json(self) -> dict:
        return {
            "mu": self.mu,
            "gamma1": self.gamma1,
            "gamma1_bar": self.gamma1_bar,
            "loss": self.loss,
            "fisher_fro_norm": self.fisher_fro_norm,
            "estimator": self.estimator,
        }


def _ratio_with_convention(num: float, den: float, what: str) -> float:
    if den < ZERO_TOL:
        if num < ZERO_TOL:
            return 1.0
        raise NumericalError(
            f"{what}: denominator {den:g} below zero tolerance but numerator "
            f"{num:g} is not; inconsistent state")
    return num / den


def loss_alignment_mu(model: models.Model, dataset: Dataset, theta,
                      rng: RngStream | None = None) -> AlignmentReport:
    """Loss alignment mu = tr(sigma1 G) / (2 L ||G||_F^2).

    Computed from pairwise gradient inner products while n^2 <= 1e8;
    beyond that an unbiased Hutchinson estimate with 64 Rademacher probes is
    used and flagged in the report. The probe stream defaults to
    RngStream(dataset.seed, PROBE_STREAM).
    """
    theta = np.asarray(theta, dtype=float)
    state = loss_state(model, dataset, theta)
    u2 = state.residuals ** 2
    n = dataset.n

    if n * n <= PAIRWISE_LIMIT:
        gamma1, fro2 = _pairwise_trace_terms(model, dataset, theta, u2)
        estimator = "pairwise"
    else:
        gamma1, fro2 = _hutchinson_trace_terms(model, dataset, theta, rng)
        estimator = "hutchinson"

    gamma1_bar = 2.0 * state.loss * fro2
    mu = _ratio_with_convention(gamma1, gamma1_bar, "loss alignment")
    return AlignmentReport(mu=mu, gamma1=gamma1, gamma1_bar=gamma1_bar,
                           loss=state.loss, fisher_fro_norm=math.sqrt(fro2),
                           estimator=estimator)


def _pairwise_trace_terms(model, dataset, theta, u2):
    """tr(sigma1 G) and ||G||_F^2 via the gradient Gram matrix."""
    n, p = dataset.n, model.param_dim
    if n * p <= (1 << 26):
        Df = models.grad_matrix(model, theta, dataset.inputs)
    else:
        raise CapacityError(
            f"gradient matrix n*p = {n * p} too large for the pairwise path")
    rows = max(1, _CHUNK_ELEMS // n)
    g1_parts = []
    fro_parts = []
    for s in range(0, n, rows):
        gram = Df[s:s + rows] @ Df.T
        sq = gram * gram
        row_sums = sq.sum(axis=1)
        g1_parts.append(float(u2[s:s + rows] @ row_sums))
        fro_parts.append(float(row_sums.sum()))
    scale = float(n) * float(n)
    return math.fsum(g1_parts) / scale, math.fsum(fro_parts) / scale


def _hutchinson_trace_terms(model, dataset, theta, rng):
    if rng is None:
        rng = RngStream(dataset.seed, PROBE_STREAM)
    gen = as_generator(rng)
    p = model.param_dim
    state = loss_state(model, dataset, theta)
    u2 = state.residuals ** 2
    g1_parts = []
    fro_parts = []
    for _ in range(HUTCHINSON_PROBES):
        z = gen.integers(0, 2, size=p) * 2.0 - 1.0
        t = _apply_over_rows(model, dataset, theta, z, None)           # G z
        s1t = _apply_over_rows(model, dataset, theta, t, None, weights=u2)
        g1_parts.append(float(z @ s1t))
        fro_parts.append(float(t @ t))
    return (math.fsum(g1_parts) / HUTCHINSON_PROBES,
            math.fsum(fro_parts) / HUTCHINSON_PROBES)


@dataclass(frozen=True)
class DirectionalReport:
    v: np.ndarray  # unit direction
    g: float
    numerator: float    # v^T sigma1 v
    denominator: float  # 2 L v^T G v

    def to_json(self) -> dict:
        return {"g": self.g, "numerator": self.numerator,
                "denominator": self.denominator}


def directional_alignment_g(model: models.Model, dataset: Dataset, theta,
                            v) -> DirectionalReport:
    """Directional alignment g(v) = v^T sigma1 v / (2 L v^T G v)."""
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValidationError("direction v must be nonzero")
    v = v / norm
    theta = np.asarray(theta, dtype=float)
    state = loss_state(model, dataset, theta)
    u2 = state.residuals ** 2
    num_parts = []
    den_parts = []
    for s, block in _grad_blocks(model, dataset, theta):
        t2 = (block @ v) ** 2
        num_parts.append(float(u2[s:s + block.shape[0]] @ t2))
        den_parts.append(float(t2.sum()))
    n = dataset.n
    num = math.fsum(num_parts) / n
    den = 2.0 * state.loss * (math.fsum(den_parts) / n)
    g = _ratio_with_convention(num, den, "directional alignment")
    return DirectionalReport(v=v, g=g, numerator=num, denominator=den)


@dataclass(frozen=True)
class EigenAlignment:
    eigenvalues: np.ndarray  # descending curvatures lambda_k
    alpha: np.ndarray        # noise energy along u_k over 2L
    ratio: np.ndarray        # alpha_k / lambda_k
    noise: str               # which covariance was used
    loss: float

    def to_json(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "alpha": [float(v) for v in self.alpha],
            "ratio": [float(v) for v in self.ratio],
            "noise": self.noise,
            "loss": self.loss,
        }


def eigen_alignment(model: models.Model, dataset: Dataset, theta, k: int,
                    noise: str = "sigma0", rng: RngStream | None = None,
                    max_iters: int | None = None,
                    tol: float = 1e-8) -> EigenAlignment:
    """Curvatures lambda_k of G and noise energies alpha_k along the top-k
    eigen-directions, with their ratios.

    alpha_k = u_k^T Sigma u_k / (2 L). The default noise covariance is
    sigma0; sigma1 is selectable. Directions where both the noise energy and
    2 L lambda_k vanish report ratio 1 by the 0/0 convention.
    """
    if noise not in ("sigma0", "sigma1"):
        raise ValidationError(f"noise must be sigma0 or sigma1, got {noise!r}")
    p = model.param_dim
    if not 1 <= k <= p:
        raise ValidationError(f"need 1 <= k <= p, got k={k}, p={p}")
    theta = np.asarray(theta, dtype=float)

    if p <= DENSE_LIMIT:
        dec = sym_eig_dense(fisher_matrix(model, dataset, theta))
        lam = dec.eigenvalues[:k]
        U = dec.eigenvectors[:, :k]
    else:
        if k >= p:
            raise ValidationError("matrix-free path needs k < param dim")
        if rng is None:
            rng = RngStream(dataset.seed, PROBE_STREAM + 1)
        dec = lanczos_topk(fisher_operator(model, dataset, theta), k,
                           max_iters=max_iters, tol=tol, rng=rng)
        lam = dec.eigenvalues
        U = dec.eigenvectors

    state = loss_state(model, dataset, theta)
    u2 = state.residuals ** 2
    n = dataset.n
    qforms = np.zeros(k)
    for s, block in _grad_blocks(model, dataset, theta):
        T = block @ U
        qforms += u2[s:s + block.shape[0]] @ (T * T)
    qforms /= n
    if noise == "sigma0":
        qforms = qforms - (state.grad @ U) ** 2
    if np.min(qforms, initial=0.0) < -1e-10:
        raise NumericalError(
            f"noise quadratic form fell below -1e-10: {np.min(qforms):g}")
    qforms = np.maximum(qforms, 0.0)

    two_l = 2.0 * state.loss
    alpha = np.zeros(k)
    ratio = np.zeros(k)
    for j in range(k):
        if qforms[j] < ZERO_TOL and two_l * lam[j] < ZERO_TOL:
            alpha[j] = 0.0
            ratio[j] = 1.0
        elif two_l * lam[j] < ZERO_TOL:
            raise NumericalError(
                "noise energy present along a direction with no curvature")
        else:
            alpha[j] = qforms[j] / two_l
            ratio[j] = alpha[j] / lam[j]
    return EigenAlignment(eigenvalues=lam.copy(), alpha=alpha, ratio=ratio,
                          noise=noise, loss=state.loss)


# ---------------------------------------------------------------------------
# one-step loss decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OneStepLoss:
    exact: float      # E over sample choice of L(theta - eta grad l_i)
    gd_part: float    # L(theta - eta grad L)
    noise_part: float  # exact - gd_part

    def to_json(self) -> dict:
        return {"exact": self.exact, "gd_part": self.gd_part,
                "noise_part": self.noise_part}


def expected_one_step_loss(model: models.Model, dataset: Dataset, theta,
                           eta: float) -> OneStepLoss:
    """Exact expected loss after one batch-size-1 step, by full enumeration.

    Every one of the n possible sample choices is stepped and evaluated, so
    the result is the exact expectation, not an estimate. Cost is O(n^2 p).
    """
    theta = np.asarray(theta, dtype=float)
    state = loss_state(model, dataset, theta)
    losses = []
    for s, block in _grad_blocks(model, dataset, theta):
        for j in range(block.shape[0]):
            stepped = theta - eta * state.residuals[s + j] * block[j]
            losses.append(loss_state(model, dataset, stepped).loss)
    exact = math.fsum(losses) / dataset.n
    gd_part = loss_state(model, dataset, theta - eta * state.grad).loss
    return OneStepLoss(exact=exact, gd_part=gd_part,
                       noise_part=exact - gd_part)


# ---------------------------------------------------------------------------
# population identity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PopulationCheck:
    relative_residual: float
    n_mc: int

    def to_json(self) -> dict:
        return {"relative_residual": self.relative_residual, "n_mc": self.n_mc}


def population_identity_check(model: models.Model, spec: CovarianceSpec,
                              theta, theta_star, n_mc: int,
                              rng) -> PopulationCheck:
    """Monte-Carlo check of the population noise covariance identity
    sigma0_pop = 2 L_pop G_pop + grad L_pop grad L_pop^T for
    reparameterized-linear models on Gaussian inputs. The centered
    covariance is the side that satisfies the identity: the uncentered
    second moment carries the outer product twice, as the d=1 case
    E[x^4] = 3 already shows.

    Returns the relative Frobenius residual between the sampled left side
    and the analytic right side.
    """
    if n_mc < 1000:
        raise ValidationError("need n_mc >= 1000 for a meaningful check")
    theta = np.asarray(theta, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    F = models.olm_feature_map(model, theta)
    F_star = models.olm_feature_map(model, theta_star)
    J = models.olm_jacobian(model, theta)
    S = cov_matrix(spec)
    r = F - F_star
    SJ = S @ J
    G_pop = J.T @ SJ
    L_pop = 0.5 * float(r @ (S @ r))
    g_pop = SJ.T @ r
    rhs = 2.0 * L_pop * G_pop + np.outer(g_pop, g_pop)

    gen = as_generator(rng)
    p = model.param_dim
    half = None
    if spec.kind == "explicit":
        dec = sym_eig_dense(spec.matrix)
        half = dec.eigenvectors * np.sqrt(dec.eigenvalues)
    lhs = np.zeros((p, p))
    mean_grad = np.zeros(p)
    rows = _row_chunk(n_mc, max(p, spec.dim))
    done = 0
    while done < n_mc:
        take = min(rows, n_mc - done)
        Z = gen.standard_normal((take, spec.dim))
        if spec.kind == "isotropic":
            X = Z
        elif spec.kind == "diagonal":
            X = Z * np.sqrt(spec.spectrum)
        else:
            X = Z @ half.T
        u = X @ r
        Df = X @ J
        lhs += Df.T @ (u[:, None] ** 2 * Df)
        mean_grad += u @ Df
        done += take
    lhs /= n_mc
    mean_grad /= n_mc
    lhs -= np.outer(mean_grad, mean_grad)

    den = float(np.linalg.norm(rhs))
    num = float(np.linalg.norm(lhs - rhs))
    if den < ZERO_TOL:
        residual = 0.0 if num < ZERO_TOL else math.inf
    else:
        residual = num / den
    return PopulationCheck(relative_residual=residual, n_mc=n_mc)
