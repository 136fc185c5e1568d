"""Differentiable scalar-output model families.

Each family defines f(x; theta) together with its exact analytic gradient in
theta; there is no autodiff engine here. The reparameterized-linear families
(everything except two_layer) additionally expose the feature map F with
f(x; theta) = F(theta)^T x and its Jacobian.

Parameter packing conventions (all row-major / C order):

- linear:          theta = w, length d
- diag_linear_net: theta = [alpha (d), beta (d)], F_k = alpha_k^2 - beta_k^2
- deep_linear_net: theta = concat(vec(W_1), ..., vec(W_L)) with
                   W_l of shape (widths[l-1], widths[l]); widths[0] = d,
                   widths[-1] = 1; f = x^T W_1 ... W_L
- two_layer:       theta = vec(B) with B of shape (m, d), row k holding b_k;
                   f = sum_k a_k phi(b_k^T x) with leaky-ReLU phi; if the
                   head is trainable, theta = [vec(B), a (m)]
- clr_toy:         theta = (w1, w2), d = 1, f = (w2 / sqrt(w1^2 + 1)) x
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedFamilyError, ValidationError

FAMILIES = ("linear", "diag_linear_net", "deep_linear_net", "two_layer", "clr_toy")
OLM_FAMILIES = ("linear", "diag_linear_net", "deep_linear_net", "clr_toy")


@dataclass(frozen=True)
class Model:
    family: str
    d: int
    widths: tuple = ()         # deep_linear_net only, includes d and final 1
    m: int = 0                 # two_layer hidden width
    head_signs: tuple = ()     # two_layer fixed head, entries +-1
    slope: float = 0.1         # two_layer leaky-ReLU slope
    train_head: bool = False   # two_layer: optimize the head too

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        if self.d < 1:
            raise ValidationError("input dimension must be positive")

    @property
    def param_dim(self) -> int:
        if self.family == "linear":
            return self.d
        if self.family == "diag_linear_net":
            return 2 * self.d
        if self.family == "deep_linear_net":
            return sum(self.widths[i] * self.widths[i + 1]
                       for i in range(len(self.widths) - 1))
        if self.family == "two_layer":
            return self.m * self.d + (self.m if self.train_head else 0)
        return 2  # clr_toy

    @property
    def is_olm(self) -> bool:
        return self.family in OLM_FAMILIES


def linear_model(d: int) -> Model:
    return Model(family="linear", d=d)


def diag_linear_model(d: int) -> Model:
    return Model(family="diag_linear_net", d=d)


def deep_linear_model(widths) -> Model:
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValidationError("need at least two widths (input and output)")
    if widths[-1] != 1:
        raise ValidationError("output width must be 1 for scalar models")
    if any(w < 1 for w in widths):
        raise ValidationError("widths must be positive")
    return Model(family="deep_linear_net", d=widths[0], widths=widths)


def two_layer_model(d: int, m: int, slope: float = 0.1, head_signs=None,
                    train_head: bool = False) -> Model:
    if m < 1:
        raise ValidationError("hidden width must be positive")
    if not 0.0 <= slope <= 1.0:
        raise ValidationError("activation slope must lie in [0, 1]")
    if head_signs is None:
        # balanced head: first half +1, second half -1
        head_signs = tuple(1.0 if k < (m + 1) // 2 else -1.0 for k in range(m))
    else:
        head_signs = tuple(float(a) for a in head_signs)
        if len(head_signs) != m or any(a not in (-1.0, 1.0) for a in head_signs):
            raise ValidationError("head signs must be m values in {-1, +1}")
    return Model(family="two_layer", d=d, m=m, head_signs=head_signs,
                 slope=slope, train_head=train_head)


def clr_toy_model() -> Model:
    return Model(family="clr_toy", d=1)


# ---------------------------------------------------------------------------
# parameter helpers
# ---------------------------------------------------------------------------

def _check_theta(model: Model, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.param_dim,):
        raise ValidationError(
            f"theta has shape {theta.shape}, expected ({model.param_dim},)")
    return theta


def _check_x(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.d,):
        raise ValidationError(f"x has shape {x.shape}, expected ({model.d},)")
    return x


def _unpack_deep(model: Model, theta: np.ndarray):
    mats = []
    pos = 0
    for i in range(len(model.widths) - 1):
        rows, cols = model.widths[i], model.widths[i + 1]
        mats.append(theta[pos:pos + rows * cols].reshape(rows, cols))
        pos += rows * cols
    return mats


def _two_layer_parts(model: Model, theta: np.ndarray):
    B = theta[:model.m * model.d].reshape(model.m, model.d)
    if model.train_head:
        a = theta[model.m * model.d:]
    else:
        a = np.asarray(model.head_signs, dtype=float)
    return B, a


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def predict(model: Model, theta, x) -> float:
    theta = _check_theta(model, theta)
    x = _check_x(model, x)
    return float(predict_batch(model, theta, x[None, :])[0])


def predict_batch(model: Model, theta, X) -> np.ndarray:
    """f(x_i; theta) for every row of X, shape (n,)."""
    theta = _check_theta(model, theta)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ValidationError(f"X has shape {X.shape}, expected (n, {model.d})")
    if model.family == "two_layer":
        B, a = _two_layer_parts(model, theta)
        Z = X @ B.T
        phi = np.where(Z >= 0.0, Z, model.slope * Z)
        return phi @ a
    return X @ olm_feature_map(model, theta)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def per_sample_grad(model: Model, theta, x) -> np.ndarray:
    """Exact gradient of predict(model, theta, x) in theta, shape (p,)."""
    theta = _check_theta(model, theta)
    x = _check_x(model, x)
    return grad_matrix(model, theta, x[None, :])[0]


def grad_matrix(model: Model, theta, X) -> np.ndarray:
    """Per-sample gradients stacked as rows, shape (n, p).

    For the linear family this is X itself (returned as a view, not a copy).
    """
    theta = _check_theta(model, theta)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ValidationError(f"X has shape {X.shape}, expected (n, {model.d})")
    n = X.shape[0]

    if model.family == "linear":
        return X

    if model.family == "diag_linear_net":
        d = model.d
        alpha, beta = theta[:d], theta[d:]
        out = np.empty((n, 2 * d))
        out[:, :d] = 2.0 * alpha * X
        out[:, d:] = -2.0 * beta * X
        return out

    if model.family == "deep_linear_net":
        mats = _unpack_deep(model, theta)
        L = len(mats)
        # activations[l] = X W_1 ... W_l, shape (n, widths[l])
        activations = [X]
        for W in mats:
            activations.append(activations[-1] @ W)
        # suffixes[l] = W_{l+1} ... W_L, shape (widths[l], 1)
        suffixes = [None] * (L + 1)
        suffixes[L] = np.ones((1, 1))
        for l in range(L - 1, 0, -1):
            suffixes[l] = mats[l] @ suffixes[l + 1]
        out = np.empty((n, model.param_dim))
        pos = 0
        for l in range(L):
            rows, cols = mats[l].shape
            block = activations[l][:, :, None] * suffixes[l + 1][None, :, 0][:, None, :]
            out[:, pos:pos + rows * cols] = block.reshape(n, rows * cols)
            pos += rows * cols
        return out

    if model.family == "two_layer":
        B, a = _two_layer_parts(model, theta)
        Z = X @ B.T                                  # (n, m)
        dphi = np.where(Z > 0.0, 1.0, model.slope)   # slope at z = 0
        coeff = a * dphi                             # (n, m)
        out = np.empty((n, model.param_dim))
        out[:, :model.m * model.d] = (coeff[:, :, None] * X[:, None, :]).reshape(n, -1)
        if model.train_head:
            out[:, model.m * model.d:] = np.where(Z >= 0.0, Z, model.slope * Z)
        return out

    # clr_toy
    w1, w2 = theta
    c = w1 * w1 + 1.0
    J = np.array([-w1 * w2 * c ** -1.5, c ** -0.5])
    return X[:, 0:1] * J[None, :]


# ---------------------------------------------------------------------------
# reparameterized-linear structure
# ---------------------------------------------------------------------------

def olm_feature_map(model: Model, theta) -> np.ndarray:
    """F(theta) with predict(x) = F(theta)^T x, shape (d,)."""
    theta = _check_theta(model, theta)
    if not model.is_olm:
        raise UnsupportedFamilyError(
            f"family {model.family!r} is not a reparameterized linear model")
    if model.family == "linear":
        return theta.copy()
    if model.family == "diag_linear_net":
        d = model.d
        return theta[:d] ** 2 - theta[d:] ** 2
    if model.family == "deep_linear_net":
        mats = _unpack_deep(model, theta)
        prod = mats[0]
        for W in mats[1:]:
            prod = prod @ W
        return prod[:, 0]
    w1, w2 = theta
    return np.array([w2 / math.sqrt(w1 * w1 + 1.0)])


def olm_jacobian(model: Model, theta) -> np.ndarray:
    """Jacobian of the feature map, shape (d, p)."""
    theta = _check_theta(model, theta)
    if not model.is_olm:
        raise UnsupportedFamilyError(
            f"family {model.family!r} is not a reparameterized linear model")
    d, p = model.d, model.param_dim

    if model.family == "linear":
        return np.eye(d)

    if model.family == "diag_linear_net":
        alpha, beta = theta[:d], theta[d:]
        J = np.zeros((d, p))
        J[np.arange(d), np.arange(d)] = 2.0 * alpha
        J[np.arange(d), d + np.arange(d)] = -2.0 * beta
        return J

    if model.family == "deep_linear_net":
        mats = _unpack_deep(model, theta)
        L = len(mats)
        # prefixes[l] = W_1 ... W_l, shape (d, widths[l]); prefixes[0] = I_d
        prefixes = [np.eye(d)]
        for W in mats:
            prefixes.append(prefixes[-1] @ W)
        suffixes = [None] * (L + 1)
        suffixes[L] = np.ones((1, 1))
        for l in range(L - 1, 0, -1):
            suffixes[l] = mats[l] @ suffixes[l + 1]
        J = np.empty((d, p))
        pos = 0
        for l in range(L):
            rows, cols = mats[l].shape
            block = np.einsum("da,b->dab", prefixes[l], suffixes[l + 1][:, 0])
            J[:, pos:pos + rows * cols] = block.reshape(d, rows * cols)
            pos += rows * cols
        return J

    w1, w2 = theta
    c = w1 * w1 + 1.0
    return np.array([[-w1 * w2 * c ** -1.5, c ** -0.5]])


def clr_population_grad(theta) -> np.ndarray:
    """Gradient of the online landscape w2^2 / (2 (w1^2 + 1)) of clr_toy."""
    w1, w2 = np.asarray(theta, dtype=float)
    c = w1 * w1 + 1.0
    return np.array([-w1 * w2 * w2 / (c * c), w2 / c])


# ---------------------------------------------------------------------------
# serialization: family header line, then flat parameters
# ---------------------------------------------------------------------------

def model_token(model: Model) -> str:
    """Single whitespace-free token describing the model."""
    if model.family == "linear":
        return f"linear;d={model.d}"
    if model.family == "diag_linear_net":
        return f"diag_linear_net;d={model.d}"
    if model.family == "deep_linear_net":
        widths = ",".join(str(w) for w in model.widths)
        return f"deep_linear_net;widths={widths}"
    if model.family == "two_layer":
        signs = ",".join("+" if a > 0 else "-" for a in model.head_signs)
        return (f"two_layer;d={model.d};m={model.m};slope={model.slope!r};"
                f"signs={signs};train_head={int(model.train_head)}")
    return "clr_toy"


def model_from_token(token: str) -> Model:
    parts = token.split(";")
    family = parts[0]
    kv = {}
    for part in parts[1:]:
        key, _, value = part.partition("=")
        kv[key] = value
    if family == "linear":
        return linear_model(int(kv["d"]))
    if family == "diag_linear_net":
        return diag_linear_model(int(kv["d"]))
    if family == "deep_linear_net":
        return deep_linear_model(int(w) for w in kv["widths"].split(","))
    if family == "two_layer":
        signs = tuple(1.0 if ch == "+" else -1.0 for ch in kv["signs"].split(","))
        return two_layer_model(int(kv["d"]), int(kv["m"]), slope=float(kv["slope"]),
                               head_signs=signs, train_head=bool(int(kv["train_head"])))
    if family == "clr_toy":
        return clr_toy_model()
    raise ValidationError(f"unknown family token {token!r}")


def save_params(model: Model, theta, path) -> None:
    theta = _check_theta(model, theta)
    with open(path, "w") as fh:
        fh.write(model_token(model) + "\n")
        fh.write(" ".join(repr(float(v)) for v in theta) + "\n")


def load_params(path):
    with open(path) as fh:
        model = model_from_token(fh.readline().strip())
        theta = np.array([float(tok) for tok in fh.readline().split()])
    return model, _check_theta(model, theta)
