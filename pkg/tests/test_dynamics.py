import numpy as np
import pytest

from noisegeom.datagen import isotropic_spec, linear_teacher, sample_dataset
from noisegeom.dynamics import (
    OptimizerConfig,
    clr_toy_run,
    constant_schedule,
    cyclical_schedule,
    gd_step,
    lr_at,
    run,
    sgd_step,
    with_record_params,
)
from noisegeom.errors import ValidationError
from noisegeom.linalg import RngStream, as_generator
from noisegeom.models import clr_population_grad, linear_model


def _regression(seed=0, d=4, n=10):
    ds = sample_dataset(isotropic_spec(d), n, linear_teacher(),
                        RngStream(seed, 0))
    model = linear_model(d)
    theta0 = as_generator(RngStream(seed, 1)).standard_normal(d)
    return model, ds, theta0


def test_constant_schedule():
    sched = constant_schedule(0.3)
    assert lr_at(sched, 0) == 0.3
    assert lr_at(sched, 999) == 0.3
    with pytest.raises(ValidationError):
        constant_schedule(0.0)


def test_cyclical_schedule_triangle():
    sched = cyclical_schedule(0.5, 8.0, 100)
    assert lr_at(sched, 0) == pytest.approx(0.5)
    assert lr_at(sched, 50) == pytest.approx(8.0)
    assert lr_at(sched, 100) == pytest.approx(0.5)
    # linear ramp: quarter period sits at the midpoint
    assert lr_at(sched, 25) == pytest.approx(0.5 + (8.0 - 0.5) / 2.0)
    assert lr_at(sched, 75) == pytest.approx(0.5 + (8.0 - 0.5) / 2.0)
    for t in range(130):
        assert lr_at(sched, t) == lr_at(sched, t + 100)


def test_cyclical_schedule_validation():
    with pytest.raises(ValidationError):
        cyclical_schedule(2.0, 1.0, 10)
    with pytest.raises(ValidationError):
        cyclical_schedule(0.0, 1.0, 10)
    with pytest.raises(ValidationError):
        cyclical_schedule(0.1, 1.0, 1)
    with pytest.raises(ValidationError):
        lr_at(constant_schedule(1.0), -1)


def test_gd_step_value():
    model, ds, theta0 = _regression()
    u = ds.inputs @ theta0 - ds.targets
    grad = ds.inputs.T @ u / ds.n
    assert np.allclose(gd_step(model, ds, theta0, 0.1), theta0 - 0.1 * grad)


def test_full_batch_sgd_step_equals_gd_step():
    model, ds, theta0 = _regression(seed=2)
    a = sgd_step(model, ds, theta0, 0.05, b=ds.n, rng=RngStream(0, 0),
                 with_replacement=False)
    b = gd_step(model, ds, theta0, 0.05)
    assert np.array_equal(a, b)


def test_sgd_step_batch_bounds():
    model, ds, theta0 = _regression()
    with pytest.raises(ValidationError):
        sgd_step(model, ds, theta0, 0.1, b=0, rng=RngStream(0, 0))
    with pytest.raises(ValidationError):
        sgd_step(model, ds, theta0, 0.1, b=ds.n + 1, rng=RngStream(0, 0))


def test_exhaustive_sgd_run_matches_gd_run_exactly():
    """batch_size=n without replacement must reproduce full-batch GD bit for
    bit, including the recorded losses."""
    model, ds, theta0 = _regression(seed=3)
    sched = constant_schedule(0.1)
    sgd_cfg = OptimizerConfig(kind="sgd", schedule=sched, steps=25,
                              batch_size=ds.n, with_replacement=False,
                              rng=RngStream(3, 2))
    gd_cfg = OptimizerConfig(kind="gd", schedule=sched, steps=25)
    t_sgd = run(model, ds, theta0, sgd_cfg)
    t_gd = run(model, ds, theta0, gd_cfg)
    assert np.array_equal(t_sgd.theta_final, t_gd.theta_final)
    assert np.array_equal(t_sgd.losses, t_gd.losses)


def test_run_is_reproducible_and_logs_stride():
    model, ds, theta0 = _regression(seed=4)
    cfg = OptimizerConfig(kind="sgd", schedule=constant_schedule(0.05),
                          steps=40, batch_size=2, rng=RngStream(4, 2),
                          record_stride=10)
    t1 = run(model, ds, theta0, cfg)
    t2 = run(model, ds, theta0, cfg)
    assert np.array_equal(t1.theta_final, t2.theta_final)
    assert list(t1.steps) == [0, 10, 20, 30, 40]
    assert len(t1.losses) == 5
    assert np.array_equal(t1.lrs, np.full(5, 0.05))
    assert not t1.diverged


def test_gd_on_convex_problem_descends():
    model, ds, theta0 = _regression(seed=5)
    cfg = OptimizerConfig(kind="gd", schedule=constant_schedule(0.1),
                          steps=100)
    traj = run(model, ds, theta0, cfg)
    assert traj.losses[-1] < traj.losses[0] * 1e-3
    assert np.all(np.diff(traj.losses) <= 1e-15)


def test_divergence_is_flagged():
    model, ds, theta0 = _regression(seed=6)
    cfg = OptimizerConfig(kind="gd", schedule=constant_schedule(50.0),
                          steps=400)
    traj = run(model, ds, theta0, cfg)
    assert traj.diverged
    assert len(traj.steps) < 401


def test_run_validates_config():
    model, ds, theta0 = _regression()
    with pytest.raises(ValidationError):
        run(model, ds, theta0, OptimizerConfig(
            kind="sgd", schedule=constant_schedule(0.1), steps=5))
    with pytest.raises(ValidationError):
        run(model, ds, theta0, OptimizerConfig(
            kind="adam", schedule=constant_schedule(0.1), steps=5))
    with pytest.raises(ValidationError):
        run(model, ds, np.zeros(3), OptimizerConfig(
            kind="gd", schedule=constant_schedule(0.1), steps=5))


def test_observers_and_param_recording():
    model, ds, theta0 = _regression(seed=7)
    cfg = with_record_params(OptimizerConfig(
        kind="gd", schedule=constant_schedule(0.1), steps=6,
        record_stride=2))
    obs = {"theta_norm": lambda m, d_, th, t: float(np.linalg.norm(th))}
    traj = run(model, ds, theta0, cfg, observers=obs)
    assert traj.params is not None
    assert traj.params.shape == (4, model.param_dim)
    for i in range(4):
        assert traj.observables["theta_norm"][i] == pytest.approx(
            float(np.linalg.norm(traj.params[i])))


def test_trajectory_to_csv_roundtrips_floats(tmp_path):
    model, ds, theta0 = _regression(seed=8)
    cfg = OptimizerConfig(kind="gd", schedule=constant_schedule(0.1), steps=4)
    traj = run(model, ds, theta0, cfg)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "t,loss,lr"
    vals = [float(line.split(",")[1]) for line in rows[1:]]
    assert vals == [float(x) for x in traj.losses]


def test_clr_toy_gd_follows_population_gradient():
    sched = cyclical_schedule(0.5, 8.0, 100)
    trace = clr_toy_run([1.0, 1.0], sched, 3, mode="gd")
    w = np.array([1.0, 1.0])
    for t in range(3):
        w = w - lr_at(sched, t) * clr_population_grad(w)
    assert trace.w1[-1] == pytest.approx(w[0], rel=1e-12)
    assert trace.w2[-1] == pytest.approx(w[1], rel=1e-12)


def test_clr_toy_sgd_reproducible_and_distinct_from_gd():
    sched = cyclical_schedule(0.5, 8.0, 100)
    a = clr_toy_run([1.0, 1.0], sched, 50, mode="sgd", rng=RngStream(0, 2))
    b = clr_toy_run([1.0, 1.0], sched, 50, mode="sgd", rng=RngStream(0, 2))
    g = clr_toy_run([1.0, 1.0], sched, 50, mode="gd")
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
    assert not np.array_equal(a.w1, g.w1)


def test_clr_toy_requires_rng_for_sgd():
    with pytest.raises(ValidationError):
        clr_toy_run([1.0, 1.0], constant_schedule(0.1), 5, mode="sgd")


def test_clr_toy_record_stride():
    trace = clr_toy_run([1.0, 1.0], constant_schedule(0.1), 20, mode="gd",
                        record_stride=5)
    assert list(trace.steps) == [0, 5, 10, 15, 20]
