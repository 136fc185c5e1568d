"""Input covariance specs, Gaussian dataset sampling, effective ranks.

Datasets are Gaussian inputs x_i ~ N(0, S) with realizable targets produced
by a teacher: the zero teacher (y = 0), a linear teacher y = w*^T x, or any
model from the model zoo evaluated at fixed parameters. The teacher is
recorded inside the dataset so targets are reproducible from (teacher,
inputs) alone.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import models
from .errors import CapacityError, ValidationError
from .linalg import LinearOperator, RngStream, check_symmetric, sym_eig_dense

POWER_LAW_DIM_CAP = 10 ** 7


@dataclass(frozen=True)
class CovarianceSpec:
    """Input covariance S, given as an isotropic/diagonal/explicit form."""

    kind: str                     # isotropic | diagonal | explicit
    dim: int
    spectrum: np.ndarray | None = None
    matrix: np.ndarray | None = None
    note: str = ""

    def __post_init__(self):
        if self.kind not in ("isotropic", "diagonal", "explicit"):
            raise ValidationError(f"unknown covariance kind {self.kind!r}")
        if self.dim < 1:
            raise ValidationError("covariance dimension must be positive")


def isotropic_spec(d: int) -> CovarianceSpec:
    return CovarianceSpec(kind="isotropic", dim=d)


def diagonal_spec(spectrum) -> CovarianceSpec:
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.ndim != 1 or spectrum.size == 0:
        raise ValidationError("spectrum must be a nonempty 1-d array")
    if np.any(spectrum < 0.0) or not np.any(spectrum > 0.0):
        raise ValidationError("spectrum entries must be >= 0 with at least one > 0")
    return CovarianceSpec(kind="diagonal", dim=spectrum.size, spectrum=spectrum)


def explicit_spec(matrix) -> CovarianceSpec:
    matrix = np.asarray(matrix, dtype=float)
    check_symmetric(matrix)
    if not np.any(matrix):
        raise ValidationError("covariance matrix is zero")
    return CovarianceSpec(kind="explicit", dim=matrix.shape[0], matrix=matrix)


def spec_eigenvalues(spec: CovarianceSpec) -> np.ndarray:
    """Eigenvalues of S in descending order."""
    if spec.kind == "isotropic":
        return np.ones(spec.dim)
    if spec.kind == "diagonal":
        return np.sort(spec.spectrum)[::-1].copy()
    return sym_eig_dense(spec.matrix).eigenvalues


def cov_matrix(spec: CovarianceSpec) -> np.ndarray:
    if spec.kind == "isotropic":
        return np.eye(spec.dim)
    if spec.kind == "diagonal":
        return np.diag(spec.spectrum)
    return spec.matrix.copy()


def cov_sqrt_operator(spec: CovarianceSpec) -> LinearOperator:
    """A square root of S as an operator (any A with A A^T = S works)."""
    if spec.kind == "isotropic":
        return LinearOperator(dim=spec.dim, apply=lambda v: np.asarray(v, dtype=float).copy())
    if spec.kind == "diagonal":
        root = np.sqrt(spec.spectrum)
        return LinearOperator(dim=spec.dim, apply=lambda v: root * v)
    dec = sym_eig_dense(spec.matrix)
    root = np.sqrt(dec.eigenvalues)
    V = dec.eigenvectors
    return LinearOperator(dim=spec.dim, apply=lambda v: V @ (root * (V.T @ v)))


def effective_rank(spec: CovarianceSpec) -> float:
    """tr(S) / ||S||_2."""
    lam = spec_eigenvalues(spec)
    top = float(lam[0])
    if top <= 0.0:
        raise ValidationError("covariance is zero")
    return float(math.fsum(lam) / top)


def effective_input_dim(spec: CovarianceSpec) -> float:
    """min of the effective ranks of S and S^2."""
    lam = spec_eigenvalues(spec)
    top = float(lam[0])
    if top <= 0.0:
        raise ValidationError("covariance is zero")
    srk1 = math.fsum(lam) / top
    srk2 = math.fsum(v * v for v in lam) / (top * top)
    return float(min(srk1, srk2))


def power_law_spec(target_srk: float) -> CovarianceSpec:
    """Diagonal spectrum lambda_k = 1/sqrt(k) with the smallest D reaching
    effective rank target_srk.

    The effective rank of S is matched (not the effective input dimension:
    for this decay srk(S^2) grows only logarithmically in D, so matching the
    combined quantity is unattainable; the note field records this).
    """
    if not target_srk > 1.0:
        raise ValidationError("target effective rank must exceed 1")
    # lambda_1 = 1 is the top eigenvalue, so srk = running sum of lambda_k
    total = 0.0
    d = None
    chunk = 1 << 16
    for start in range(1, POWER_LAW_DIM_CAP + 1, chunk):
        ks = np.arange(start, min(start + chunk, POWER_LAW_DIM_CAP + 1), dtype=float)
        partial = np.cumsum(1.0 / np.sqrt(ks)) + total
        hit = np.nonzero(partial >= target_srk)[0]
        if hit.size:
            d = start + int(hit[0])
            break
        total = float(partial[-1])
    if d is None:
        raise CapacityError(
            f"effective rank {target_srk} unreachable within D <= {POWER_LAW_DIM_CAP}")
    spectrum = 1.0 / np.sqrt(np.arange(1, d + 1, dtype=float))
    return CovarianceSpec(
        kind="diagonal", dim=d, spectrum=spectrum,
        note=(f"matched srk(S)={target_srk:g} at D={d}; srk(S^2) grows only "
              "logarithmically for this decay, so min(srk(S), srk(S^2)) "
              "cannot reach the target"))


# ---------------------------------------------------------------------------
# teachers and datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Teacher:
    """Target generator. kind 'linear' with w=None draws w* ~ N(0, I_d)."""

    kind: str                          # zero | linear | model
    w: np.ndarray | None = None        # linear teacher weights
    model: models.Model | None = None  # model teacher
    theta: np.ndarray | None = None    # model teacher parameters

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "model"):
            raise ValidationError(f"unknown teacher kind {self.kind!r}")
        if self.kind == "model" and (self.model is None or self.theta is None):
            raise ValidationError("model teacher needs both model and theta")


def zero_teacher() -> Teacher:
    return Teacher(kind="zero")


def linear_teacher(w=None) -> Teacher:
    if w is not None:
        w = np.asarray(w, dtype=float)
    return Teacher(kind="linear", w=w)


def model_teacher(model: models.Model, theta) -> Teacher:
    theta = np.asarray(theta, dtype=float)
    return Teacher(kind="model", model=model, theta=theta)


def teacher_targets(teacher: Teacher, X: np.ndarray) -> np.ndarray:
    if teacher.kind == "zero":
        return np.zeros(X.shape[0])
    if teacher.kind == "linear":
        if teacher.w is None or teacher.w.size != X.shape[1]:
            raise ValidationError("linear teacher weights missing or wrong size")
        return X @ teacher.w
    return models.predict_batch(teacher.model, teacher.theta, X)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray    # (n, d)
    targets: np.ndarray   # (n,)
    teacher: Teacher
    seed: int
    stream: int = 0

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


def sample_dataset(spec: CovarianceSpec, n: int, teacher: Teacher,
                   rng: RngStream) -> Dataset:
    """Draw n inputs i.i.d. N(0, S) and attach teacher targets.

    Draw order is fixed: inputs first, then (if needed) the linear teacher's
    w* ~ N(0, I_d), both from the same stream.
    """
    if n < 1:
        raise ValidationError("need n >= 1")
    if not isinstance(rng, RngStream):
        raise ValidationError("sample_dataset requires an RngStream for reproducibility")
    gen = rng.generator()
    Z = gen.standard_normal((n, spec.dim))
    if spec.kind == "isotropic":
        X = Z
    elif spec.kind == "diagonal":
        X = Z * np.sqrt(spec.spectrum)
    else:
        dec = sym_eig_dense(spec.matrix)
        half = dec.eigenvectors * np.sqrt(dec.eigenvalues)
        X = Z @ half.T
    if teacher.kind == "linear" and teacher.w is None:
        teacher = replace(teacher, w=gen.standard_normal(spec.dim))
    y = teacher_targets(teacher, X)
    return Dataset(inputs=X, targets=y, teacher=teacher,
                   seed=rng.seed, stream=rng.stream)


# ---------------------------------------------------------------------------
# columnar text serialization
# ---------------------------------------------------------------------------

def teacher_token(teacher: Teacher) -> str:
    if teacher.kind == "zero":
        return "zero"
    if teacher.kind == "linear":
        if teacher.w is None:
            raise ValidationError("cannot serialize an unresolved linear teacher")
        return "linear:" + ",".join(repr(float(v)) for v in teacher.w)
    token = models.model_token(teacher.model)
    params = ",".join(repr(float(v)) for v in teacher.theta)
    return f"model:{token}:{params}"


def _teacher_from_token(token: str) -> Teacher:
    if token == "zero":
        return zero_teacher()
    if token.startswith("linear:"):
        w = np.array([float(v) for v in token[len("linear:"):].split(",")])
        return linear_teacher(w)
    if token.startswith("model:"):
        _, model_tok, params = token.split(":", 2)
        model = models.model_from_token(model_tok)
        theta = np.array([float(v) for v in params.split(",")])
        return model_teacher(model, theta)
    raise ValidationError(f"unknown teacher token {token!r}")


def save_dataset(dataset: Dataset, path) -> None:
    """Whitespace-separated text: one header line, then x_1 .. x_d y rows.

    Floats are written with repr, which round-trips exactly.
    """
    with open(path, "w") as fh:
        fh.write(f"{dataset.d} {dataset.n} {teacher_token(dataset.teacher)} "
                 f"{dataset.seed} {dataset.stream}\n")
        for i in range(dataset.n):
            row = " ".join(repr(float(v)) for v in dataset.inputs[i])
            fh.write(f"{row} {repr(float(dataset.targets[i]))}\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().split()
        d, n = int(header[0]), int(header[1])
        teacher = _teacher_from_token(header[2])
        seed, stream = int(header[3]), int(header[4])
        X = np.empty((n, d))
        y = np.empty(n)
        for i in range(n):
            vals = fh.readline().split()
            if len(vals) != d + 1:
                raise ValidationError(f"row {i} has {len(vals)} fields, expected {d + 1}")
            X[i] = [float(v) for v in vals[:d]]
            y[i] = float(vals[d])
    return Dataset(inputs=X, targets=y, teacher=teacher, seed=seed, stream=stream)
