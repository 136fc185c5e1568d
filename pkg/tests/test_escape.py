import math

import numpy as np
import pytest

from noisegeom.datagen import isotropic_spec, linear_teacher, sample_dataset
from noisegeom.dynamics import OptimizerConfig, constant_schedule
from noisegeom.errors import ValidationError
from noisegeom.escape import (
    component_dynamics_check,
    estimate_alignment_constants,
    flat_tail_spectrum,
    gd_escape_analytic,
    linearized_sgd_escape,
    nonlinear_escape_track,
    sgd_escape_lr,
    spectrum_spec,
    surrogate_sgd_escape,
    theorem51_bound,
)
from noisegeom.linalg import RngStream, as_generator
from noisegeom.models import linear_model

from oracles import gd_escape_ratio_naive


def _interpolating_problem(seed=0, d=8, n=30):
    ds = sample_dataset(isotropic_spec(d), n, linear_teacher(),
                        RngStream(seed, 0))
    return linear_model(d), ds, ds.teacher.w


def test_spectrum_spec_validation():
    spec = spectrum_spec([3.0, 2.0, 2.0, 0.0])
    assert spec.dim == 4
    assert spec.fro_norm == pytest.approx(math.sqrt(17.0))
    assert spec.srk2 == pytest.approx(17.0 / 9.0)
    with pytest.raises(ValidationError):
        spectrum_spec([])
    with pytest.raises(ValidationError):
        spectrum_spec([1.0, 2.0])
    with pytest.raises(ValidationError):
        spectrum_spec([1.0, -0.1])
    with pytest.raises(ValidationError):
        spectrum_spec([0.0, 0.0])


def test_flat_tail_spectrum_hits_target():
    spec = flat_tail_spectrum(1000, 5.0)
    assert spec.lam[0] == 1.0
    assert spec.srk2 == pytest.approx(5.0, rel=1e-12)
    assert spec.lam[1] == pytest.approx(math.sqrt(4.0 / 999.0))
    with pytest.raises(ValidationError):
        flat_tail_spectrum(10, 11.0)


def test_sgd_escape_lr_value():
    # ||G||_F = 5 for eigenvalues (3, 4) in any order of squares
    assert sgd_escape_lr(1.0, [4.0, 3.0]) == pytest.approx(0.2)
    assert sgd_escape_lr(2.5, [4.0, 3.0]) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        sgd_escape_lr(0.0, [1.0])


def test_gd_escape_analytic_hand_value():
    # one step at eta=4 on (1, 0.5): head 9, tail 0.5
    out = gd_escape_analytic([1.0, 0.5], [1.0, 1.0], eta=4.0, T=1)
    assert out[0] == pytest.approx(0.5)
    assert out[1] == pytest.approx(1.0 / 18.0)


def test_gd_escape_analytic_matches_naive_recursion():
    lam = np.array([2.0, 1.3, 0.7, 0.2])
    w0 = np.array([0.9, -1.1, 0.4, 2.0])
    eta = 1.1
    ref = gd_escape_ratio_naive(lam, w0, eta, T=12)
    out = gd_escape_analytic(lam, w0, eta, T=12)
    assert np.allclose(out, ref, rtol=1e-10)


def test_gd_escape_analytic_survives_large_t():
    # naive powers overflow long before t=5000; log-space must not
    out = gd_escape_analytic([1.0, 0.5], [1.0, 1.0], eta=4.0, T=5000)
    assert np.all(np.isfinite(out))


def test_linearized_zero_noise_matches_analytic():
    model, ds, theta_star = _interpolating_problem(seed=1)
    G = ds.inputs.T @ ds.inputs / ds.n
    lam, V = np.linalg.eigh(G)
    lam, V = lam[::-1], V[:, ::-1]
    w0_eig = np.ones(model.param_dim)
    w0 = V @ w0_eig
    eta = sgd_escape_lr(1.0, lam)
    trace = linearized_sgd_escape(model, ds, theta_star, w0, eta, T=15, k=1,
                                  reps=1, zero_noise=True)
    ref = gd_escape_analytic(lam, w0_eig, eta, T=15)
    assert np.allclose(trace.D, ref, rtol=1e-8, atol=1e-12)
    assert not trace.diverged


def test_linearized_escape_requires_interpolation():
    model, ds, theta_star = _interpolating_problem(seed=2)
    with pytest.raises(ValidationError):
        linearized_sgd_escape(model, ds, theta_star + 0.5, np.ones(8),
                              0.1, T=5, k=1, rng=RngStream(0, 0))


def test_linearized_escape_reproducible_per_rep():
    model, ds, theta_star = _interpolating_problem(seed=3)
    w0 = as_generator(RngStream(3, 1)).standard_normal(8)
    eta = 0.05
    a = linearized_sgd_escape(model, ds, theta_star, w0, eta, T=10, k=2,
                              reps=4, rng=RngStream(3, 2))
    b = linearized_sgd_escape(model, ds, theta_star, w0, eta, T=10, k=2,
                              reps=4, rng=RngStream(3, 2))
    c = linearized_sgd_escape(model, ds, theta_star, w0, eta, T=10, k=2,
                              reps=4, rng=RngStream(4, 2))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert not np.array_equal(a.X, c.X)


def test_linearized_escape_energy_identity():
    """X_t + Y_t is twice the mean quadratic loss. For the zero-noise run
    the iterate is known in closed form, which pins every recorded step."""
    model, ds, theta_star = _interpolating_problem(seed=4)
    G = ds.inputs.T @ ds.inputs / ds.n
    w0 = as_generator(RngStream(4, 1)).standard_normal(8)
    eta = 0.04
    trace = linearized_sgd_escape(model, ds, theta_star, w0, eta, T=12, k=3,
                                  reps=1, zero_noise=True)
    for i, t in enumerate(trace.steps):
        w_t = np.linalg.matrix_power(np.eye(8) - eta * G, int(t)) @ w0
        assert trace.X[i] + trace.Y[i] == pytest.approx(
            float(w_t @ G @ w_t), rel=1e-8)


def test_linearized_escape_ratio_floor():
    # P >= D * lam_k / lam_{k+1} pointwise: energy weights flat directions
    # by at most lam_{k+1} and sharp ones by at least lam_k
    model, ds, theta_star = _interpolating_problem(seed=5, d=6, n=40)
    G = ds.inputs.T @ ds.inputs / ds.n
    lam = np.sort(np.linalg.eigvalsh(G))[::-1]
    w0 = as_generator(RngStream(5, 1)).standard_normal(6)
    k = 2
    trace = linearized_sgd_escape(model, ds, theta_star, w0, 0.08, T=20, k=k,
                                  reps=8, rng=RngStream(5, 2))
    for i in range(len(trace.steps)):
        if math.isfinite(trace.D[i]) and math.isfinite(trace.P[i]):
            assert trace.P[i] >= trace.D[i] * lam[k - 1] / lam[k] * (1 - 1e-9)


def test_surrogate_escape_matches_bound_shape():
    spec = flat_tail_spectrum(400, 5.0)
    eta = sgd_escape_lr(1.2, spec)
    w0 = np.zeros(400)
    w0[0] = 1.0
    trace = surrogate_sgd_escape(spec, w0, eta, T=60, k=1, reps=40,
                                 rng=RngStream(0, 3))
    bound = theorem51_bound(spec, k=1, beta=1.2)
    assert not trace.diverged
    late = trace.D[trace.steps >= 40]
    # the surrogate concentrates near srk2 - 1 once the burn-in is past
    assert np.all(late > 0.25 * bound.ratio)
    assert np.all(late < 4.0 * bound.ratio)


def test_surrogate_zero_scale_is_deterministic_decay():
    spec = spectrum_spec([1.0, 0.5])
    trace = surrogate_sgd_escape(spec, np.ones(2), 0.1, T=5, k=1, reps=3,
                                 rng=RngStream(0, 0), noise_scale=0.0)
    ref = gd_escape_analytic(spec, np.ones(2), 0.1, T=5)
    assert np.allclose(trace.D, ref, rtol=1e-12)


def test_theorem51_bound_values():
    b = theorem51_bound([1.0, 1.0], k=1, beta=1.2)
    assert b.ratio == pytest.approx(1.0)
    spec = flat_tail_spectrum(1000, 5.0)
    b2 = theorem51_bound(spec, k=1, beta=1.2)
    assert b2.ratio == pytest.approx(4.0, rel=1e-12)
    assert b2.eta == pytest.approx(1.2 / spec.fro_norm)
    # burn-in formula: log(c2 / (eta sqrt(head))) / log(beta), floored at 1
    want = math.log(1.0 / (b2.eta * 1.0)) / math.log(1.2)
    assert b2.burn_in == pytest.approx(max(1.0, want))
    assert theorem51_bound([1.0, 1.0], k=1, beta=1.0).burn_in == math.inf


def test_theorem51_bound_validation():
    with pytest.raises(ValidationError):
        theorem51_bound([1.0, 0.5], k=2)
    with pytest.raises(ValidationError):
        theorem51_bound([1.0, 0.5], k=1, beta=-1.0)


def test_alignment_constants_on_isotropic_regression():
    """Random displacements on well-sampled isotropic data put every
    noise-to-curvature ratio near 2; the extremes stay inside wide brackets."""
    d, n = 20, 400
    ds = sample_dataset(isotropic_spec(d), n, linear_teacher(),
                        RngStream(6, 0))
    model = linear_model(d)
    gen = as_generator(RngStream(6, 1))
    thetas = [ds.teacher.w + gen.standard_normal(d) for _ in range(8)]
    const = estimate_alignment_constants(model, ds, thetas, k=10,
                                         theta_star=ds.teacher.w)
    assert 0.5 < const.A1 < 2.0
    assert 2.0 < const.A2 < 5.0
    assert const.samples == 8
    assert const.directions == 10
    assert not const.degenerate


def test_alignment_constants_reject_interpolating_sample():
    model, ds, theta_star = _interpolating_problem(seed=7)
    with pytest.raises(ValidationError):
        estimate_alignment_constants(model, ds, [theta_star], k=2)


def test_alignment_constants_degenerate_single_row():
    # one sample has rank-one gradient structure and zero centered noise
    ds = sample_dataset(isotropic_spec(3), 1, linear_teacher(),
                        RngStream(8, 0))
    model = linear_model(3)
    theta = ds.teacher.w + np.array([1.0, 0.0, 0.0])
    const = estimate_alignment_constants(model, ds, [theta], k=1)
    assert const.degenerate
    assert const.A1 == 0.0 and const.A2 == 0.0


def test_component_dynamics_check_zero_noise_trace():
    model, ds, theta_star = _interpolating_problem(seed=9)
    G = ds.inputs.T @ ds.inputs / ds.n
    lam = np.sort(np.linalg.eigvalsh(G))[::-1]
    w0 = as_generator(RngStream(9, 1)).standard_normal(8)
    eta = 0.5 / lam[0]
    trace = linearized_sgd_escape(model, ds, theta_star, w0, eta, T=15, k=2,
                                  reps=1, zero_noise=True)
    # A1 = A2 = 0 reduces the check to pure contraction, which GD satisfies
    from noisegeom.escape import AlignmentConstants
    const = AlignmentConstants(A1=0.0, A2=0.0, samples=0, directions=0,
                               degenerate=True)
    rep = component_dynamics_check(trace, const, lam, k=2, eta=eta)
    assert rep.steps_checked == 15
    assert rep.x_violations == 0
    assert rep.y_violations == 0


def test_component_dynamics_check_counts_violations():
    from noisegeom.escape import AlignmentConstants, EscapeTrace
    # crafted trace: X doubles despite a contraction factor below one
    trace = EscapeTrace(steps=np.arange(3), X=np.array([1.0, 2.0, 4.0]),
                        Y=np.array([0.0, 0.0, 0.0]),
                        D=np.zeros(3), P=np.zeros(3), k=1, reps=1, eta=0.1)
    const = AlignmentConstants(A1=1.0, A2=1.0, samples=1, directions=1)
    rep = component_dynamics_check(trace, const, [1.0, 0.5], k=1, eta=0.1,
                                   slack=1.0)
    assert rep.x_violations == 2
    assert rep.y_violations == 2  # Y stays at zero against a positive floor
    with pytest.raises(ValidationError):
        component_dynamics_check(trace, const, [1.0, 0.5], k=1, eta=0.1,
                                 slack=0.5)


def test_component_dynamics_check_respects_t_start():
    from noisegeom.escape import AlignmentConstants, EscapeTrace
    trace = EscapeTrace(steps=np.arange(4), X=np.array([1.0, 9.0, 1.0, 1.0]),
                        Y=np.ones(4), D=np.ones(4), P=np.ones(4),
                        k=1, reps=1, eta=0.1)
    const = AlignmentConstants(A1=0.0, A2=0.0, samples=1, directions=1,
                               degenerate=True)
    early = component_dynamics_check(trace, const, [1.0, 0.5], k=1, eta=0.1)
    late = component_dynamics_check(trace, const, [1.0, 0.5], k=1, eta=0.1,
                                    t_start=1)
    assert early.x_violations == 1
    assert late.x_violations == 0
    assert late.steps_checked == 2


def test_nonlinear_track_pythagoras():
    model, ds, theta_star = _interpolating_problem(seed=10, d=6, n=25)
    theta0 = theta_star + 0.01 * as_generator(RngStream(10, 1)).standard_normal(6)
    cfg = OptimizerConfig(kind="sgd", schedule=constant_schedule(0.05),
                          steps=15, rng=RngStream(10, 2))
    track = nonlinear_escape_track(model, ds, theta_star, cfg, k=2,
                                   theta0=theta0)
    assert track.loss_at_star < 1e-20
    cfg_p = OptimizerConfig(kind="sgd", schedule=constant_schedule(0.05),
                            steps=15, rng=RngStream(10, 2),
                            record_params=True)
    from noisegeom.dynamics import run
    traj = run(model, ds, theta0, cfg_p)
    for i in range(len(track.steps)):
        delta = traj.params[i] - theta_star
        assert track.p[i] ** 2 + track.r[i] ** 2 == pytest.approx(
            float(delta @ delta), rel=1e-10)


def test_nonlinear_track_along_top_direction():
    model, ds, theta_star = _interpolating_problem(seed=11, d=6, n=25)
    G = ds.inputs.T @ ds.inputs / ds.n
    lam, V = np.linalg.eigh(G)
    u1 = V[:, -1]
    cfg = OptimizerConfig(kind="gd", schedule=constant_schedule(1e-9),
                          steps=0)
    track = nonlinear_escape_track(model, ds, theta_star, cfg, k=1,
                                   theta0=theta_star + 0.5 * u1)
    # the offset sits entirely inside the sharp subspace; sign-sensitive p
    assert abs(track.p[0]) == pytest.approx(0.5, rel=1e-9)
    assert track.r[0] == pytest.approx(0.0, abs=1e-9)
