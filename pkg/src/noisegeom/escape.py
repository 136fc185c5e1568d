"""Escape from sharp minima: linearized SGD simulation, analytic GD decay,
alignment-constant estimation, and sharp/flat subspace tracking.

The linearized dynamics replace the model by its first-order expansion at an
interpolating point theta*, so the offset w = theta - theta* evolves as
w <- w - eta (grad f_i^T w) grad f_i with i resampled uniformly each step.
For the linear family this is exact SGD. Traces report, per step,

  X_t = sum_{i<=k} lambda_i E[w_i^2]   (loss energy along sharp directions)
  Y_t = sum_{i>k}  lambda_i E[w_i^2]   (along flat directions)
  D_t = Y_t / X_t
  P_t = sum_{i>k} E[w_i^2] / sum_{i<=k} E[w_i^2]

in the eigenbasis of the Fisher matrix at theta*, averaged over repetitions.
X + Y equals twice the mean linearized loss. When X_t underflows past 1e-300
the ratio is reported as +inf rather than NaN.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import models
from .datagen import Dataset
from .dynamics import OptimizerConfig, run, with_record_params
from .errors import NumericalError, ValidationError
from .geometry import _grad_blocks, fisher_matrix, fisher_operator, loss_state
from .linalg import DENSE_LIMIT, RngStream, as_generator, lanczos_topk, sym_eig_dense

INTERPOLATION_TOL = 1e-12
RATIO_FLOOR = 1e-300
ZERO_RATIO = 1e-14

# parameter excursion past this truncates the trace with the divergence flag
_OVERFLOW_LIMIT = 1e140


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumSpec:
    lam: np.ndarray  # descending, nonnegative, lam[0] > 0

    @property
    def dim(self) -> int:
        return len(self.lam)

    @property
    def fro_norm(self) -> float:
        return math.sqrt(math.fsum(float(v * v) for v in self.lam))

    @property
    def srk2(self) -> float:
        """Stable rank of G^2: sum(lam^2) / lam_1^2."""
        return math.fsum(float(v * v) for v in self.lam) / float(self.lam[0]) ** 2


def spectrum_spec(values) -> SpectrumSpec:
    lam = np.asarray(values, dtype=float)
    if lam.ndim != 1 or len(lam) == 0:
        raise ValidationError("spectrum must be a nonempty 1-d array")
    if np.any(lam < 0):
        raise ValidationError("spectrum entries must be nonnegative")
    if np.any(np.diff(lam) > 0):
        raise ValidationError("spectrum must be non-increasing")
    if not lam[0] > 0:
        raise ValidationError("leading eigenvalue must be positive")
    return SpectrumSpec(lam=lam.copy())


def flat_tail_spectrum(d: int, srk2: float) -> SpectrumSpec:
    """lam = (1, c, ..., c) with c chosen so sum(lam^2)/lam_1^2 = srk2."""
    if d < 2:
        raise ValidationError(f"need d >= 2, got {d}")
    if not 1.0 <= srk2 <= d:
        raise ValidationError(f"need 1 <= srk2 <= d, got {srk2}")
    c = math.sqrt((srk2 - 1.0) / (d - 1.0))
    lam = np.full(d, c)
    lam[0] = 1.0
    return SpectrumSpec(lam=lam)


def _as_spectrum(spectrum) -> SpectrumSpec:
    if isinstance(spectrum, SpectrumSpec):
        return spectrum
    return spectrum_spec(spectrum)


def sgd_escape_lr(beta: float, spectrum) -> float:
    """eta = beta / ||G||_F, the escape-scale learning rate."""
    if not beta > 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    return beta / _as_spectrum(spectrum).fro_norm


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

@dataclass
class EscapeTrace:
    steps: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    D: np.ndarray
    P: np.ndarray
    k: int
    reps: int
    eta: float
    diverged: bool = False
    infinite_ratio: bool = False

    @property
    def loss_energy(self) -> np.ndarray:
        """X + Y, equal to twice the mean linearized loss."""
        return self.X + self.Y

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "X", "Y", "D", "P"])
            for i in range(len(self.steps)):
                writer.writerow([int(self.steps[i]), repr(float(self.X[i])),
                                 repr(float(self.Y[i])), repr(float(self.D[i])),
                                 repr(float(self.P[i]))])


@dataclass
class SubspaceTrace:
    steps: np.ndarray
    p: np.ndarray
    r: np.ndarray
    k: int
    loss_at_star: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "p", "r"])
            for i in range(len(self.steps)):
                writer.writerow([int(self.steps[i]), repr(float(self.p[i])),
                                 repr(float(self.r[i]))])


def _ratio_rows(head_energy, tail_energy, head_var, tail_var):
    """Build D and P arrays with the +inf sentinel for crushed denominators."""
    T = len(head_energy)
    D = np.empty(T)
    P = np.empty(T)
    saw_inf = False
    for t in range(T):
        if head_energy[t] < RATIO_FLOOR:
            D[t] = math.inf
            saw_inf = True
        else:
            D[t] = tail_energy[t] / head_energy[t]
        if head_var[t] < RATIO_FLOOR:
            P[t] = math.inf
            saw_inf = True
        else:
            P[t] = tail_var[t] / head_var[t]
    return D, P, saw_inf


# ---------------------------------------------------------------------------
# linearized escape simulation
# ---------------------------------------------------------------------------

def _topk_basis(model, dataset, theta_star, k, rng):
    p = model.param_dim
    if p <= DENSE_LIMIT:
        dec = sym_eig_dense(fisher_matrix(model, dataset, theta_star))
        return dec.eigenvalues, dec.eigenvectors, True
    if rng is None:
        rng = RngStream(dataset.seed, (1 << 32) + 2)
    dec = lanczos_topk(fisher_operator(model, dataset, theta_star), k, rng=rng)
    return dec.eigenvalues, dec.eigenvectors, False


def linearized_sgd_escape(model: models.Model, dataset: Dataset, theta_star,
                          w0, eta: float, T: int, k: int, reps: int = 50,
                          rng=None, zero_noise: bool = False) -> EscapeTrace:
    """Simulate reps runs of single-sample SGD on the model linearized at an
    interpolating theta*, tracking sharp/flat loss energy in the eigenbasis
    of the Fisher matrix there.

    zero_noise=True replaces the sampled gradient with the full-batch one,
    which is GD on the quadratic; rng is then unused. Otherwise each
    repetition r draws its indices from rng.substream(r) when rng is an
    RngStream, so the trace is reproducible rep by rep.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    p = model.param_dim
    if w0.shape != (p,):
        raise ValidationError(f"w0 has shape {w0.shape}, expected ({p},)")
    if T < 0:
        raise ValidationError(f"T must be >= 0, got {T}")
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    if not 1 <= k < p:
        raise ValidationError(f"need 1 <= k < p, got k={k}, p={p}")
    star_loss = loss_state(model, dataset, theta_star).loss
    if not star_loss < INTERPOLATION_TOL:
        raise ValidationError(
            f"theta_star does not interpolate: loss {star_loss:g} >= 1e-12")
    if not zero_noise and rng is None:
        raise ValidationError("sgd mode needs an rng for index sampling")

    n = dataset.n
    A = models.grad_matrix(model, theta_star, dataset.inputs)  # (n, p)
    lam, U, full_basis = _topk_basis(model, dataset, theta_star, k, rng)

    if not zero_noise:
        if isinstance(rng, RngStream):
            idx = np.empty((T, reps), dtype=np.int64)
            for r in range(reps):
                idx[:, r] = as_generator(rng.substream(r)).integers(0, n, size=T)
        else:
            idx = as_generator(rng).integers(0, n, size=(T, reps))

    W = np.tile(w0[:, None], (1, reps)).astype(float)
    head_e, tail_e, head_v, tail_v, steps = [], [], [], [], []
    diverged = False

    def record(t):
        steps.append(t)
        if full_basis:
            M = np.mean((U.T @ W) ** 2, axis=1)
            head_e.append(float(lam[:k] @ M[:k]))
            tail_e.append(float(lam[k:] @ M[k:]))
            head_v.append(float(M[:k].sum()))
            tail_v.append(float(M[k:].sum()))
        else:
            Mk = np.mean((U.T @ W) ** 2, axis=1)
            total_var = float(np.mean(np.sum(W * W, axis=0)))
            quad = float(np.mean(np.einsum("pr,pr->r", W, (A.T @ (A @ W)) / n)))
            he = float(lam @ Mk)
            hv = float(Mk.sum())
            head_e.append(he)
            tail_e.append(max(quad - he, 0.0))
            head_v.append(hv)
            tail_v.append(max(total_var - hv, 0.0))

    for t in range(T):
        record(t)
        if zero_noise:
            W = W - eta * (A.T @ (A @ W)) / n
        else:
            rows = A[idx[t]]                      # (reps, p)
            c = np.einsum("rp,pr->r", rows, W)    # per-rep sample residual
            W = W - eta * rows.T * c[None, :]
        if float(np.max(np.abs(W))) > _OVERFLOW_LIMIT:
            diverged = True
            break
    if not diverged:
        record(T)

    D, P, saw_inf = _ratio_rows(head_e, tail_e, head_v, tail_v)
    return EscapeTrace(steps=np.array(steps, dtype=int),
                       X=np.array(head_e), Y=np.array(tail_e), D=D, P=P,
                       k=k, reps=reps, eta=eta, diverged=diverged,
                       infinite_ratio=saw_inf)


def surrogate_sgd_escape(spectrum, w0, eta: float, T: int, k: int,
                         reps: int = 50, rng=None,
                         noise_scale: float = 2.0) -> EscapeTrace:
    """Spectrum-only escape with Gaussian surrogate noise.

    Runs directly in the eigenbasis: w_{t+1,i} = (1 - eta lam_i) w_{t,i}
    - eta xi_i with xi_i ~ N(0, noise_scale * L_t * lam_i) per repetition,
    where L_t is that repetition's current quadratic loss. For studies where
    only a spectrum is specified; w0 is given in eigen coordinates.
    """
    spec = _as_spectrum(spectrum)
    lam = spec.lam
    d = spec.dim
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != (d,):
        raise ValidationError(f"w0 has shape {w0.shape}, expected ({d},)")
    if not 1 <= k < d:
        raise ValidationError(f"need 1 <= k < d, got k={k}, d={d}")
    if T < 0:
        raise ValidationError(f"T must be >= 0, got {T}")
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    if noise_scale < 0:
        raise ValidationError(f"noise_scale must be >= 0, got {noise_scale}")
    if rng is None:
        raise ValidationError("surrogate mode needs an rng")
    gen = as_generator(rng)

    W = np.tile(w0[:, None], (1, reps))
    decay = 1.0 - eta * lam
    head_e, tail_e, head_v, tail_v, steps = [], [], [], [], []
    diverged = False

    def record(t):
        steps.append(t)
        M = np.mean(W * W, axis=1)
        head_e.append(float(lam[:k] @ M[:k]))
        tail_e.append(float(lam[k:] @ M[k:]))
        head_v.append(float(M[:k].sum()))
        tail_v.append(float(M[k:].sum()))

    for t in range(T):
        record(t)
        losses = 0.5 * (lam @ (W * W))            # (reps,)
        std = np.sqrt(noise_scale * np.outer(lam, losses))
        W = decay[:, None] * W - eta * std * gen.standard_normal((d, reps))
        if float(np.max(np.abs(W))) > _OVERFLOW_LIMIT:
            diverged = True
            break
    if not diverged:
        record(T)

    D, P, saw_inf = _ratio_rows(head_e, tail_e, head_v, tail_v)
    return EscapeTrace(steps=np.array(steps, dtype=int),
                       X=np.array(head_e), Y=np.array(tail_e), D=D, P=P,
                       k=k, reps=reps, eta=eta, diverged=diverged,
                       infinite_ratio=saw_inf)


# ---------------------------------------------------------------------------
# analytic GD decay
# ---------------------------------------------------------------------------

def gd_escape_analytic(spectrum, w0, eta: float, T: int) -> np.ndarray:
    """D_{t,1} for GD on the quadratic with the given spectrum, t = 0..T.

    D_{t,1} = sum_{i>=2} lam_i (1-eta lam_i)^{2t} w0_i^2
            / (lam_1 (1-eta lam_1)^{2t} w0_1^2),
    evaluated in log space since the decay powers overflow quickly.
    """
    spec = _as_spectrum(spectrum)
    lam = spec.lam
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != (spec.dim,):
        raise ValidationError(f"w0 has shape {w0.shape}, expected ({spec.dim},)")
    if w0[0] == 0.0:
        raise ValidationError("w0[0] must be nonzero: the sharp component "
                              "is the denominator")
    if T < 0:
        raise ValidationError(f"T must be >= 0, got {T}")

    with np.errstate(divide="ignore"):
        base = np.log(lam) + 2.0 * np.log(np.abs(w0))   # log(lam_i w0_i^2)
        ldecay = np.log(np.abs(1.0 - eta * lam))
    out = np.empty(T + 1)
    for t in range(T + 1):
        if t == 0:
            terms = base
        else:
            terms = base + (2.0 * t) * ldecay
        den = terms[0]
        num = logsumexp(terms[1:]) if spec.dim > 1 else -math.inf
        if den == -math.inf:
            out[t] = math.inf if num > -math.inf else math.nan
        else:
            out[t] = math.exp(num - den)
    return out


# ---------------------------------------------------------------------------
# alignment constants (noise-to-curvature ratios along eigen-directions)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignmentConstants:
    A1: float
    A2: float
    samples: int
    directions: int
    skipped: int = 0
    degenerate: bool = False


def estimate_alignment_constants(model: models.Model, dataset: Dataset,
                                 thetas, k: int, noise: str = "sigma0",
                                 theta_star=None,
                                 rng=None) -> AlignmentConstants:
    """Estimate A1 = min, A2 = max of u_i^T Sigma0(theta) u_i / (L(theta)
    lambda_i) over the supplied points and the top-k eigen-directions of the
    Fisher matrix at theta_star (defaults to the first supplied point).

    Eigenvalues below 1e-12 * lambda_1 are skipped and counted. If every
    ratio vanishes (single-sample data has zero gradient noise) the result
    carries the degenerate flag instead of violating A1 > 0.
    """
    if noise != "sigma0":
        raise ValidationError(f"only sigma0 is supported, got {noise!r}")
    thetas = [np.asarray(th, dtype=float) for th in thetas]
    if not thetas:
        raise ValidationError("need at least one theta sample")
    p = model.param_dim
    if not 1 <= k <= p:
        raise ValidationError(f"need 1 <= k <= p, got k={k}, p={p}")
    base = np.asarray(theta_star, dtype=float) if theta_star is not None \
        else thetas[0]
    lam, U, _ = _topk_basis(model, dataset, base, k, rng)
    lam = lam[:k]
    U = U[:, :k]

    keep = lam > 1e-12 * lam[0]
    skipped = int(k - keep.sum())
    lam_kept = lam[keep]
    U_kept = U[:, keep]

    ratios = []
    for theta in thetas:
        state = loss_state(model, dataset, theta)
        if not state.loss > INTERPOLATION_TOL:
            raise ValidationError(
                f"theta sample has loss {state.loss:g} <= 1e-12; alignment "
                "ratios are undefined at interpolation")
        u2 = state.residuals ** 2
        q1 = np.zeros(U_kept.shape[1])
        for s, block in _grad_blocks(model, dataset, theta):
            Tb = block @ U_kept
            q1 += u2[s:s + block.shape[0]] @ (Tb * Tb)
        q1 /= dataset.n
        q0 = np.maximum(q1 - (state.grad @ U_kept) ** 2, 0.0)
        ratios.extend(q0 / (state.loss * lam_kept))

    ratios = np.array(ratios)
    if ratios.size == 0 or float(ratios.max()) < ZERO_RATIO:
        return AlignmentConstants(A1=0.0, A2=0.0, samples=len(thetas),
                                  directions=int(keep.sum()), skipped=skipped,
                                  degenerate=True)
    return AlignmentConstants(A1=float(ratios.min()), A2=float(ratios.max()),
                              samples=len(thetas),
                              directions=int(keep.sum()), skipped=skipped)


# ---------------------------------------------------------------------------
# Theorem-style escape bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EscapeBound:
    ratio: float      # sum_{i>k} lam_i^2 / sum_{i<=k} lam_i^2
    burn_in: float    # steps before the bound applies
    eta: float
    beta: float
    c2: float


def theorem51_bound(spectrum, k: int, beta: float = 1.2,
                    c2: float = 1.0) -> EscapeBound:
    """Asymptotic flat/sharp energy ratio for SGD escape at eta = beta /
    ||G||_F, plus the burn-in step count.

    The burn-in is max(1, log(c2 / (eta * sqrt(sum_{i<=k} lam_i^2))) /
    log beta); c2 is a free constant, default 1. beta <= 1 gives no growth,
    so the burn-in is reported as +inf in that case.
    """
    spec = _as_spectrum(spectrum)
    lam = spec.lam
    if not 1 <= k < spec.dim:
        raise ValidationError(f"need 1 <= k < d, got k={k}, d={spec.dim}")
    if not beta > 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    if not c2 > 0:
        raise ValidationError(f"c2 must be positive, got {c2}")
    head = math.fsum(float(v * v) for v in lam[:k])
    tail = math.fsum(float(v * v) for v in lam[k:])
    ratio = tail / head
    eta = beta / spec.fro_norm
    if beta <= 1.0:
        burn_in = math.inf
    else:
        burn_in = max(1.0, math.log(c2 / (eta * math.sqrt(head))) / math.log(beta))
    return EscapeBound(ratio=ratio, burn_in=burn_in, eta=eta, beta=beta, c2=c2)


# ---------------------------------------------------------------------------
# component dynamics inequalities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComponentDynamicsReport:
    steps_checked: int
    x_violations: int
    y_violations: int
    slack: float
    t_start: int


def component_dynamics_check(trace: EscapeTrace, constants: AlignmentConstants,
                             spectrum, k: int, eta: float,
                             slack: float = 1.5,
                             t_start: int = 0) -> ComponentDynamicsReport:
    """Check the one-step energy inequalities on an averaged trace:

      X_{t+1} <= alpha_k X_t + A2 eta^2 (sum_{i<=k} lam_i^2)(X_t + Y_t)
      Y_{t+1} >= A1 eta^2 (sum_{i>k} lam_i^2)(X_t + Y_t)/2

    with alpha_k = max_{i<=k} (1 - eta lam_i)^2. The constants bracket the
    per-direction noise power as A1 lam_i L <= E|u_i^T xi|^2 <= A2 lam_i L
    with loss energy L_t = (X_t + Y_t)/2, so the tail floor carries that
    factor exactly; the head bound keeps the looser 2L form since a
    k-direction rep average is heavy-tailed and would false-alarm against a
    tight ceiling. A multiplicative slack absorbs Monte-Carlo error in the
    rep average; violations are counted, not raised.
    """
    if slack < 1.0:
        raise ValidationError(f"slack must be >= 1, got {slack}")
    spec = _as_spectrum(spectrum)
    lam = spec.lam
    if not 1 <= k < spec.dim:
        raise ValidationError(f"need 1 <= k < d, got k={k}, d={spec.dim}")
    head2 = math.fsum(float(v * v) for v in lam[:k])
    tail2 = math.fsum(float(v * v) for v in lam[k:])
    alpha_k = float(np.max((1.0 - eta * lam[:k]) ** 2))

    x_bad = 0
    y_bad = 0
    checked = 0
    X, Y = trace.X, trace.Y
    for t in range(max(t_start, 0), len(X) - 1):
        if not (np.isfinite(X[t]) and np.isfinite(Y[t])
                and np.isfinite(X[t + 1]) and np.isfinite(Y[t + 1])):
            continue
        checked += 1
        energy = X[t] + Y[t]
        x_rhs = alpha_k * X[t] + constants.A2 * eta * eta * head2 * energy
        if X[t + 1] > slack * x_rhs:
            x_bad += 1
        y_rhs = constants.A1 * eta * eta * tail2 * energy / 2.0
        if Y[t + 1] * slack < y_rhs:
            y_bad += 1
    return ComponentDynamicsReport(steps_checked=checked, x_violations=x_bad,
                                   y_violations=y_bad, slack=slack,
                                   t_start=max(t_start, 0))


# ---------------------------------------------------------------------------
# nonlinear sharp/flat subspace tracking
# ---------------------------------------------------------------------------

def nonlinear_escape_track(model: models.Model, dataset: Dataset, theta_star,
                           config: OptimizerConfig, k: int, theta0=None,
                           basis_rng=None) -> SubspaceTrace:
    """Run the configured optimizer from theta0 (default theta_star) and
    track the offset's component inside the top-k eigenspace of the Fisher
    matrix at theta_star (p) versus the orthogonal remainder (r).

    The basis is computed once at theta_star and frozen. For k = 1 the
    component p is the signed inner product with the top eigenvector;
    otherwise it is the norm of the projection. p^2 + r^2 recovers
    ||theta_t - theta_star||^2 by construction.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    p_dim = model.param_dim
    if not 1 <= k <= p_dim:
        raise ValidationError(f"need 1 <= k <= p, got k={k}, p={p_dim}")
    star_loss = loss_state(model, dataset, theta_star).loss

    if p_dim <= DENSE_LIMIT:
        dec = sym_eig_dense(fisher_matrix(model, dataset, theta_star))
        U = dec.eigenvectors[:, :k]
    else:
        if basis_rng is None:
            basis_rng = RngStream(dataset.seed, (1 << 32) + 3)
        dec = lanczos_topk(fisher_operator(model, dataset, theta_star), k,
                           rng=basis_rng)
        U = dec.eigenvectors

    start = theta_star if theta0 is None else np.asarray(theta0, dtype=float)
    traj = run(model, dataset, start, with_record_params(config))

    deltas = traj.params - theta_star[None, :]
    proj = deltas @ U                                   # (records, k)
    if k == 1:
        p_vals = proj[:, 0]
        p_sq = p_vals ** 2
    else:
        p_sq = np.sum(proj * proj, axis=1)
        p_vals = np.sqrt(p_sq)
    norms_sq = np.sum(deltas * deltas, axis=1)
    rad = norms_sq - p_sq
    floor = -1e-12 * np.maximum(norms_sq, 1.0)
    if np.any(rad < floor):
        worst = float(np.min(rad / np.maximum(norms_sq, 1e-300)))
        raise NumericalError(
            f"flat-component radicand fell below tolerance: relative {worst:g}")
    r_vals = np.sqrt(np.maximum(rad, 0.0))
    return SubspaceTrace(steps=traj.steps, p=p_vals, r=r_vals, k=k,
                         loss_at_star=star_loss)
