"""Command-line harness.

Every run writes three files under <outdir>/<run-id>/: config.json (the full
effective configuration, from which the run id is derived as the first 12
hex digits of its SHA-256), results.csv (the main table, shortest round-trip
float format), and report.json (summary numbers). Reruns with the same
config are byte-identical. Exit codes: 0 success, 1 validation or usage
error, 2 numerical failure (including a failed verification).

All randomness derives from one master seed through fixed stream ids:
data = 0, theta samples and initial offsets = 1, optimizer and per-rep
noise = 2 + rep. Runs that need several datasets or variants shift each
variant's streams by variant_index * 2^16. NOISEGEOM_THREADS caps the
worker count used to fan independent computations; results do not depend
on it.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, models
from .datagen import (diagonal_spec, effective_input_dim, effective_rank,
                      isotropic_spec, linear_teacher, model_teacher,
                      power_law_spec, sample_dataset, save_dataset,
                      spec_eigenvalues, teacher_token, zero_teacher)
from .dynamics import (OptimizerConfig, clr_toy_run, constant_schedule,
                       cyclical_schedule)
from .errors import (CapacityError, ConvergenceError, NumericalError,
                     UnsupportedFamilyError, ValidationError)
from .escape import (component_dynamics_check, estimate_alignment_constants,
                     flat_tail_spectrum, linearized_sgd_escape,
                     nonlinear_escape_track, sgd_escape_lr, theorem51_bound)
from .geometry import (directional_alignment_g, eigen_alignment,
                       expected_one_step_loss, fisher_matrix,
                       loss_alignment_mu, noise_covariance)
from .linalg import RngStream, as_generator, sym_eig_dense
from .presets import PRESET_NAMES, preset as load_preset
from .verify import THEOREM_IDS, verify_theorem

VARIANT_STRIDE = 1 << 16


def _threads() -> int:
    raw = os.environ.get("NOISEGEOM_THREADS", "")
    try:
        return max(int(raw), 0)
    except ValueError:
        return 0


def _parallel_map(fn, items):
    items = list(items)
    workers = _threads()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _run_config(subcommand: str, seed: int, params: dict,
                preset_name=None, deviations=None) -> dict:
    return _jsonify({
        "tool": "noisegeom",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "preset": preset_name,
        "params": params,
        "deviations": deviations or [],
    })


def _emit(outdir: str, config: dict, header, rows, report: dict) -> Path:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    run_id = hashlib.sha256(blob.encode()).hexdigest()[:12]
    run_dir = Path(outdir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)

    cfg_path = run_dir / "config.json"
    cfg_path.write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")
    print(f"wrote {cfg_path} (run {run_id})")

    csv_path = run_dir / "results.csv"
    import csv as _csv
    with open(csv_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {csv_path} ({len(rows)} rows)")

    rep_path = run_dir / "report.json"
    rep_path.write_text(json.dumps(_jsonify(report), sort_keys=True,
                                   indent=2) + "\n")
    print(f"wrote {rep_path}")
    return run_dir


def _fmt(value) -> str:
    return repr(float(value))


def _build_family(family: str, d: int, width: int = 32, slope: float = 0.1):
    if family == "linear":
        return models.linear_model(d)
    if family == "diag_linear_net":
        return models.diag_linear_model(d)
    if family == "deep_linear_net":
        return models.deep_linear_model((d, width, 1))
    if family == "two_layer":
        return models.two_layer_model(d, width, slope=slope)
    raise UnsupportedFamilyError(f"unknown model family {family!r}")


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_gen_data(args) -> int:
    d = args.d if args.d is not None else 50
    n = args.n if args.n is not None else 200
    cov = args.cov or "isotropic"
    teacher_kind = args.teacher or "linear"
    if cov == "isotropic":
        spec = isotropic_spec(d)
    elif cov == "power-law":
        if args.srk is None:
            raise ValidationError("--cov power-law requires --srk")
        spec = power_law_spec(args.srk)
    elif cov == "flat-tail":
        if args.srk2 is None:
            raise ValidationError("--cov flat-tail requires --srk2")
        spec = diagonal_spec(flat_tail_spectrum(d, args.srk2[0]).lam / d)
    else:
        raise ValidationError(f"unknown covariance kind {cov!r}")
    teacher = linear_teacher() if teacher_kind == "linear" else zero_teacher()

    dataset = sample_dataset(spec, n, teacher, RngStream(args.seed, 0))
    lam = spec_eigenvalues(spec)
    er = effective_rank(spec)
    ed = effective_input_dim(spec)

    config = _run_config("gen-data", args.seed, {
        "d": dataset.d, "n": n, "cov": cov, "teacher": teacher_kind,
        "srk": args.srk, "srk2": args.srk2})
    header = ["d", "n", "seed", "effective_rank", "effective_input_dim"]
    rows = [[dataset.d, n, args.seed, _fmt(er), _fmt(ed)]]
    report = {"d": dataset.d, "n": n,
              "teacher": teacher_token(dataset.teacher),
              "effective_rank": er, "effective_input_dim": ed,
              "lambda_max": float(lam[0])}
    run_dir = _emit(args.outdir, config, header, rows, report)
    data_path = run_dir / "dataset.txt"
    save_dataset(dataset, data_path)
    print(f"wrote {data_path} ({n} rows, d={dataset.d})")
    return 0


def _alignment_dataset(preset_name: str | None, d: int, n: int, seed: int):
    if preset_name == "fig1-aniso":
        spec = power_law_spec(50)
    else:
        spec = isotropic_spec(d)
    return sample_dataset(spec, n, linear_teacher(), RngStream(seed, 0))


def _cmd_loss_align(args) -> int:
    preset_name = args.preset
    deviations = []
    if preset_name is not None:
        cfg = load_preset(preset_name, args.seed, args.outdir, args.reps)
        if cfg.blocks.get("metric") != "mu":
            raise ValidationError(
                f"preset {preset_name!r} is not a loss-alignment preset")
        blocks = cfg.blocks
        deviations = cfg.deviations
        d = blocks["data"]["d_eff"]
        n = blocks["data"]["n"]
        families = blocks["models"]
        n_thetas = blocks["thetas"]
        width = blocks["two_layer_width"]
    else:
        d = args.d if args.d is not None else 50
        n = args.n if args.n is not None else 200
        families = [args.model or "linear"]
        n_thetas = args.thetas if args.thetas is not None else 20
        width = 32

    dataset = _alignment_dataset(preset_name, d, n, args.seed)
    data_d = dataset.d

    tasks = []
    for fi, family in enumerate(families):
        model = _build_family(family, data_d, width=width)
        gen = as_generator(RngStream(args.seed, 1).substream(fi * VARIANT_STRIDE))
        for ti in range(n_thetas):
            theta = gen.standard_normal(model.param_dim)
            tasks.append((family, model, ti, theta))

    def work(task):
        family, model, ti, theta = task
        rep = loss_alignment_mu(model, dataset, theta)
        return (family, ti, rep)

    results = _parallel_map(work, tasks)
    header = ["family", "theta", "mu", "gamma1", "gamma1_bar", "loss",
              "estimator"]
    rows = []
    per_family = {}
    for family, ti, rep in results:
        rows.append([family, ti, _fmt(rep.mu), _fmt(rep.gamma1),
                     _fmt(rep.gamma1_bar), _fmt(rep.loss), rep.estimator])
        per_family.setdefault(family, []).append(rep.mu)

    report = {
        "d": data_d, "n": n, "thetas": n_thetas,
        "per_family": {
            fam: {"mean_mu": float(np.mean(vals)),
                  "min_mu": float(min(vals)), "max_mu": float(max(vals))}
            for fam, vals in per_family.items()},
    }
    config = _run_config("loss-align", args.seed, {
        "d": data_d, "n": n, "families": families, "thetas": n_thetas,
        "width": width}, preset_name, deviations)
    _emit(args.outdir, config, header, rows, report)
    for fam, summary in report["per_family"].items():
        print(f"{fam}: mean mu = {summary['mean_mu']:.4f} "
              f"[{summary['min_mu']:.4f}, {summary['max_mu']:.4f}]")
    return 0


def _cmd_dir_align(args) -> int:
    d = args.d if args.d is not None else 30
    n = args.n if args.n is not None else 200
    family = args.model or "linear"
    n_thetas = args.thetas if args.thetas is not None else 5
    n_dirs = args.dirs if args.dirs is not None else 10

    dataset = sample_dataset(isotropic_spec(d), n, linear_teacher(),
                             RngStream(args.seed, 0))
    model = _build_family(family, d)
    p = model.param_dim
    gen = as_generator(RngStream(args.seed, 1))
    thetas = [gen.standard_normal(p) for _ in range(n_thetas)]

    def work(item):
        ti, theta = item
        out = []
        for di in range(n_dirs):
            v = as_generator(RngStream(args.seed, 1)
                             .substream((ti + 1) * VARIANT_STRIDE + di)) \
                .standard_normal(p)
            rep = directional_alignment_g(model, dataset, theta, v)
            out.append((ti, di, "random", rep))
        if p <= 2048:
            dec = sym_eig_dense(fisher_matrix(model, dataset, theta))
            for j in range(min(n_dirs, p)):
                rep = directional_alignment_g(model, dataset, theta,
                                              dec.eigenvectors[:, j])
                out.append((ti, j, "eigen", rep))
        return out

    results = _parallel_map(work, list(enumerate(thetas)))
    header = ["theta", "direction", "kind", "g", "numerator", "denominator"]
    rows = []
    values = []
    for group in results:
        for ti, di, kind, rep in group:
            rows.append([ti, di, kind, _fmt(rep.g), _fmt(rep.numerator),
                         _fmt(rep.denominator)])
            values.append(rep.g)

    report = {"d": d, "n": n, "family": family, "thetas": n_thetas,
              "dirs": n_dirs, "min_g": float(min(values)),
              "max_g": float(max(values))}
    config = _run_config("dir-align", args.seed, {
        "d": d, "n": n, "family": family, "thetas": n_thetas,
        "dirs": n_dirs})
    _emit(args.outdir, config, header, rows, report)
    print(f"g in [{report['min_g']:.4f}, {report['max_g']:.4f}] "
          f"over {len(values)} directions")
    return 0


def _cmd_eigspec(args) -> int:
    preset_name = args.preset
    deviations = []
    if preset_name is not None:
        cfg = load_preset(preset_name, args.seed, args.outdir, args.reps)
        if cfg.blocks.get("kind") != "eigspec":
            raise ValidationError(
                f"preset {preset_name!r} is not an eigenspectrum preset")
        blocks = cfg.blocks
        deviations = cfg.deviations
        d = blocks["data"]["d"]
        regimes = [("n_linear", blocks["regimes"]["n_linear"]),
                   ("n_log", blocks["regimes"]["n_log"])]
        k = blocks["k"]
        noise = blocks["noise"]
        n_thetas = blocks["thetas"]
    else:
        d = args.d if args.d is not None else 200
        regimes = [("n", args.n if args.n is not None else max(d // 8, 30))]
        k = args.k if args.k is not None else 10
        noise = args.noise or "sigma0"
        n_thetas = args.thetas if args.thetas is not None else 1

    def work(item):
        ri, (label, n) = item
        dataset = sample_dataset(isotropic_spec(d), n, linear_teacher(),
                                 RngStream(args.seed, 0)
                                 .substream(ri * VARIANT_STRIDE))
        gen = as_generator(RngStream(args.seed, 1)
                           .substream(ri * VARIANT_STRIDE))
        out = []
        for ti in range(n_thetas):
            theta = gen.standard_normal(d)
            ea = eigen_alignment(models.linear_model(d), dataset, theta, k,
                                 noise=noise)
            out.append((label, n, ti, ea))
        return out

    results = _parallel_map(work, list(enumerate(regimes)))
    header = ["regime", "n", "theta", "k", "lambda", "alpha", "ratio"]
    rows = []
    summary = {}
    for group in results:
        for label, n, ti, ea in group:
            for j in range(len(ea.eigenvalues)):
                rows.append([label, n, ti, j + 1, _fmt(ea.eigenvalues[j]),
                             _fmt(ea.alpha[j]), _fmt(ea.ratio[j])])
            entry = summary.setdefault(label, {"n": n, "ratios": []})
            entry["ratios"].extend(float(r) for r in ea.ratio)

    report = {"d": d, "k": k, "noise": noise, "regimes": {
        label: {"n": entry["n"], "min_ratio": min(entry["ratios"]),
                "max_ratio": max(entry["ratios"])}
        for label, entry in summary.items()}}
    config = _run_config("eigspec", args.seed, {
        "d": d, "k": k, "noise": noise, "thetas": n_thetas,
        "regimes": {label: n for label, n in regimes}},
        preset_name, deviations)
    _emit(args.outdir, config, header, rows, report)
    for label, entry in report["regimes"].items():
        print(f"{label} (n={entry['n']}): ratio in "
              f"[{entry['min_ratio']:.4f}, {entry['max_ratio']:.4f}]")
    return 0


def _linearized_escape_variant(args, d, n, srk2, beta, T, k, reps, vi):
    spec = flat_tail_spectrum(d, srk2)
    cov = diagonal_spec(spec.lam / d)
    dataset = sample_dataset(cov, n, linear_teacher(),
                             RngStream(args.seed, 0)
                             .substream(vi * VARIANT_STRIDE))
    model = models.linear_model(d)
    theta_star = dataset.teacher.w
    dec = sym_eig_dense(fisher_matrix(model, dataset, theta_star))
    lam_emp = dec.eigenvalues
    eta = sgd_escape_lr(beta, lam_emp)
    gen = as_generator(RngStream(args.seed, 1).substream(vi * VARIANT_STRIDE))
    w0 = gen.standard_normal(d) * math.exp(-5.0) / math.sqrt(d)
    trace = linearized_sgd_escape(
        model, dataset, theta_star, w0, eta, T, k, reps=reps,
        rng=RngStream(args.seed, 2).substream(vi * VARIANT_STRIDE))
    bound = theorem51_bound(lam_emp, k, beta=beta)
    # Constants need a sample whose displacement from theta* lies along the
    # top eigen-direction: the trace spends its late window there, where the
    # head noise ratio rises to the fourth-moment level instead of the
    # generic-position 2.
    cgen = as_generator(RngStream(args.seed, 1)
                        .substream(vi * VARIANT_STRIDE + 7))
    thetas = [theta_star + dec.eigenvectors[:, 0]]
    thetas += [theta_star + cgen.standard_normal(d) for _ in range(10)]
    const = estimate_alignment_constants(model, dataset, thetas,
                                         k=min(20, d - 1),
                                         theta_star=theta_star)
    t0 = min(max(1, math.ceil(bound.burn_in)), max(T - 1, 1))
    check = component_dynamics_check(trace, const, lam_emp, k, eta,
                                     t_start=t0)
    return srk2, eta, trace, bound, const, check, t0


def _cmd_escape(args) -> int:
    preset_name = args.preset
    if preset_name == "fig5-nonlinear-escape":
        return _nonlinear_escape(args)

    deviations = []
    if preset_name is not None:
        cfg = load_preset(preset_name, args.seed, args.outdir, args.reps)
        if cfg.blocks.get("kind") != "escape":
            raise ValidationError(
                f"preset {preset_name!r} is not an escape preset")
        blocks = cfg.blocks
        deviations = cfg.deviations
        d = blocks["data"]["d"]
        n = blocks["data"]["n"]
        srk2_values = blocks["srk2_values"]
        beta = blocks["beta"]
        T = blocks["T"]
        k = blocks["k"]
        reps = blocks["reps"]
    else:
        d = args.d if args.d is not None else 200
        n = args.n if args.n is not None else 2000
        srk2_values = [float(s) for s in (args.srk2 or [5.0])]
        beta = args.beta if args.beta is not None else 1.2
        T = args.T if args.T is not None else 50
        k = args.k if args.k is not None else 1
        reps = args.reps if args.reps is not None else 50

    def work(item):
        vi, srk2 = item
        return _linearized_escape_variant(args, d, n, srk2, beta, T, k,
                                          reps, vi)

    results = _parallel_map(work, list(enumerate(srk2_values)))
    header = ["srk2", "t", "X", "Y", "D", "P"]
    rows = []
    variants = []
    for srk2, eta, trace, bound, const, check, t0 in results:
        for i in range(len(trace.steps)):
            rows.append([_fmt(srk2), int(trace.steps[i]), _fmt(trace.X[i]),
                         _fmt(trace.Y[i]), _fmt(trace.D[i]),
                         _fmt(trace.P[i])])
        window = [trace.D[i] for i in range(len(trace.steps))
                  if trace.steps[i] >= t0 and math.isfinite(trace.D[i])]
        energy = trace.loss_energy
        variants.append({
            "srk2": srk2, "eta": eta, "k": k, "reps": reps, "beta": beta,
            "bound_ratio": bound.ratio, "burn_in": bound.burn_in,
            "final_D": float(trace.D[-1]),
            "min_D_after_burn_in": float(min(window)) if window else None,
            "energy_growth": float(energy[-1] / energy[0]),
            "diverged": trace.diverged,
            "A1": const.A1, "A2": const.A2,
            "x_violations": check.x_violations,
            "y_violations": check.y_violations,
            "steps_checked": check.steps_checked,
        })

    report = {"d": d, "n": n, "T": T, "variants": variants}
    config = _run_config("escape", args.seed, {
        "d": d, "n": n, "srk2_values": srk2_values, "beta": beta, "T": T,
        "k": k, "reps": reps}, preset_name, deviations)
    _emit(args.outdir, config, header, rows, report)
    for v in variants:
        print(f"srk2={v['srk2']}: final D={v['final_D']:.3f}, "
              f"bound={v['bound_ratio']:.3f}, x{v['energy_growth']:.1f} energy")
    return 0


def _nonlinear_escape(args) -> int:
    cfg = load_preset("fig5-nonlinear-escape", args.seed, args.outdir,
                      args.reps)
    blocks = cfg.blocks
    d = blocks["data"]["d"]
    n = blocks["data"]["n"]
    width = blocks["width"]
    slope = blocks["slope"]
    k = blocks["escape"]["k"]
    beta = blocks["escape"]["beta"]
    T = blocks["escape"]["T"]

    teacher_model = models.two_layer_model(d, width, slope=slope)
    teacher_gen = as_generator(RngStream(args.seed, 1))
    teacher_theta = teacher_gen.standard_normal(teacher_model.param_dim)
    dataset = sample_dataset(isotropic_spec(d), n,
                             model_teacher(teacher_model, teacher_theta),
                             RngStream(args.seed, 0))

    model = models.two_layer_model(d, width, slope=slope)
    theta0 = blocks["init_scale"] * teacher_gen.standard_normal(model.param_dim)
    lam1 = sym_eig_dense(fisher_matrix(model, dataset,
                                       theta0)).eigenvalues[0]
    train_cfg = OptimizerConfig(
        kind="gd",
        schedule=constant_schedule(blocks["train"]["lr_scale"] / lam1),
        steps=blocks["train"]["steps"], record_stride=blocks["train"]["steps"])
    from .dynamics import run as run_loop
    traj = run_loop(model, dataset, theta0, train_cfg)
    theta_star = traj.theta_final
    star_loss = float(traj.losses[-1])

    lam1_star = sym_eig_dense(fisher_matrix(model, dataset,
                                            theta_star)).eigenvalues[0]
    eta = beta / lam1_star
    perturb_scale = blocks["escape"]["perturb_scale"]
    perturb = perturb_scale * teacher_gen.standard_normal(model.param_dim)
    start = theta_star + perturb / math.sqrt(model.param_dim)
    schedule = constant_schedule(eta)
    gd_cfg = OptimizerConfig(kind="gd", schedule=schedule, steps=T)
    sgd_cfg = OptimizerConfig(kind="sgd", schedule=schedule, steps=T,
                              batch_size=1, rng=RngStream(args.seed, 2))
    gd_trace = nonlinear_escape_track(model, dataset, theta_star, gd_cfg, k,
                                      theta0=start)
    sgd_trace = nonlinear_escape_track(model, dataset, theta_star, sgd_cfg, k,
                                       theta0=start)

    header = ["mode", "t", "p", "r"]
    rows = []
    for mode, trace in (("gd", gd_trace), ("sgd", sgd_trace)):
        for i in range(len(trace.steps)):
            rows.append([mode, int(trace.steps[i]), _fmt(trace.p[i]),
                         _fmt(trace.r[i])])

    def _summary(trace):
        pf = float(abs(trace.p[-1]))
        rf = float(trace.r[-1])
        return {"p_final": pf, "r_final": rf,
                "flat_to_sharp": rf / pf if pf > 0 else math.inf}

    gd_summary = _summary(gd_trace)
    sgd_summary = _summary(sgd_trace)
    factor = (sgd_summary["flat_to_sharp"] / gd_summary["flat_to_sharp"]
              if gd_summary["flat_to_sharp"] > 0 else math.inf)
    report = {"d": d, "n": n, "width": width, "k": k, "eta": eta,
              "loss_at_star": star_loss, "train_diverged": traj.diverged,
              "gd": gd_summary, "sgd": sgd_summary,
              "flat_factor_sgd_over_gd": factor}
    config = _run_config("escape", args.seed, {
        "d": d, "n": n, "width": width, "slope": slope, "k": k,
        "beta": beta, "T": T, "perturb_scale": perturb_scale,
        "train": blocks["train"],
        "init_scale": blocks["init_scale"]},
        "fig5-nonlinear-escape", cfg.deviations)
    _emit(args.outdir, config, header, rows, report)
    print(f"loss at theta* = {star_loss:.3e}; "
          f"r/p: sgd={sgd_summary['flat_to_sharp']:.3f} "
          f"gd={gd_summary['flat_to_sharp']:.3f} (factor {factor:.1f})")
    return 0


def _cmd_clr_toy(args) -> int:
    preset_name = args.preset
    deviations = []
    if preset_name is not None:
        cfg = load_preset(preset_name, args.seed, args.outdir, args.reps)
        if cfg.blocks.get("kind") != "clr":
            raise ValidationError(
                f"preset {preset_name!r} is not a cyclical-LR preset")
        blocks = cfg.blocks
        deviations = cfg.deviations
    else:
        blocks = {"w0": [1.0, 1.0],
                  "min_lr": args.min_lr if args.min_lr is not None else 0.5,
                  "max_lr": args.max_lr if args.max_lr is not None else 8.0,
                  "period": args.period if args.period is not None else 100,
                  "steps": args.steps if args.steps is not None else 1000,
                  "seeds": args.reps if args.reps is not None else 20,
                  "record_stride": 10}

    schedule = cyclical_schedule(blocks["min_lr"], blocks["max_lr"],
                                 blocks["period"])
    w0 = blocks["w0"]
    stride = blocks["record_stride"]
    steps = blocks["steps"]
    n_seeds = blocks["seeds"]

    gd_trace = clr_toy_run(w0, schedule, steps, mode="gd",
                           record_stride=stride)

    def work(rep):
        return clr_toy_run(w0, schedule, steps, mode="sgd",
                           rng=RngStream(args.seed, 2 + rep),
                           record_stride=stride)

    sgd_traces = _parallel_map(work, range(n_seeds))

    header = ["mode", "rep", "t", "lr", "w1", "w2"]
    rows = []
    for i in range(len(gd_trace.steps)):
        rows.append(["gd", 0, int(gd_trace.steps[i]), _fmt(gd_trace.lrs[i]),
                     _fmt(gd_trace.w1[i]), _fmt(gd_trace.w2[i])])
    for rep, trace in enumerate(sgd_traces):
        for i in range(len(trace.steps)):
            rows.append(["sgd", rep, int(trace.steps[i]), _fmt(trace.lrs[i]),
                         _fmt(trace.w1[i]), _fmt(trace.w2[i])])

    init_w1sq = float(w0[0]) ** 2
    sgd_final = [float(t.w1[-1]) ** 2 for t in sgd_traces]
    sgd_growth = float(np.mean(sgd_final)) - init_w1sq
    gd_growth = float(gd_trace.w1[-1]) ** 2 - init_w1sq
    report = {
        "initial_w1sq": init_w1sq,
        "sgd_mean_final_w1sq": float(np.mean(sgd_final)),
        "sgd_growth": sgd_growth,
        "gd_final_w1sq": float(gd_trace.w1[-1]) ** 2,
        "gd_growth": gd_growth,
        "gd_to_sgd_growth": gd_growth / sgd_growth if sgd_growth != 0 else None,
        "seeds": n_seeds,
        "diverged": {"gd": gd_trace.diverged,
                     "sgd_any": any(t.diverged for t in sgd_traces)},
    }
    config = _run_config("clr-toy", args.seed, dict(blocks), preset_name,
                         deviations)
    _emit(args.outdir, config, header, rows, report)
    print(f"w1^2: sgd mean final {report['sgd_mean_final_w1sq']:.3f} vs "
          f"gd final {report['gd_final_w1sq']:.3f} (init {init_w1sq:.3f})")
    return 0


def _cmd_one_step(args) -> int:
    d = args.d if args.d is not None else 10
    n = args.n if args.n is not None else 50
    pairs = args.pairs if args.pairs is not None else 20
    family = args.model or "linear"

    dataset = sample_dataset(isotropic_spec(d), n, linear_teacher(),
                             RngStream(args.seed, 0))
    model = _build_family(family, d)
    gen = as_generator(RngStream(args.seed, 1))

    header = ["pair", "eta", "exact", "gd_part", "noise_part", "quad_pred",
              "rel_err"]
    rows = []
    max_err = 0.0
    for i in range(pairs):
        theta = gen.standard_normal(model.param_dim)
        eta = float(gen.uniform(0.05, 0.5))
        res = expected_one_step_loss(model, dataset, theta, eta)
        if family == "linear":
            G = fisher_matrix(model, dataset, theta)
            S0 = noise_covariance(model, dataset, theta, which="sigma0")
            quad = res.gd_part + 0.5 * eta * eta * float(np.sum(S0 * G))
            err = abs(res.exact - quad) / abs(res.exact)
            max_err = max(max_err, err)
            rows.append([i, _fmt(eta), _fmt(res.exact), _fmt(res.gd_part),
                         _fmt(res.noise_part), _fmt(quad), _fmt(err)])
        else:
            rows.append([i, _fmt(eta), _fmt(res.exact), _fmt(res.gd_part),
                         _fmt(res.noise_part), "", ""])

    report = {"d": d, "n": n, "family": family, "pairs": pairs}
    if family == "linear":
        report["max_rel_err"] = max_err
    config = _run_config("one-step", args.seed, {
        "d": d, "n": n, "family": family, "pairs": pairs})
    _emit(args.outdir, config, header, rows, report)
    if family == "linear":
        print(f"max relative error vs quadratic closed form: {max_err:.3e}")
    return 0


def _cmd_verify(args) -> int:
    kwargs = {}
    for name in ("d", "n", "eps", "k", "srk2", "beta", "T", "reps"):
        val = getattr(args, name, None)
        if val is not None:
            kwargs[name] = val[0] if name == "srk2" else val
    if args.thetas is not None:
        kwargs["n_thetas"] = args.thetas
    rep = verify_theorem(args.theorem, seed=args.seed, **kwargs)

    header = ["index", "value"]
    values = rep.details.get("values", [])
    rows = [[i, _fmt(v)] for i, v in enumerate(values)]
    report = {"tool": "noisegeom", "version": __version__, **rep.to_json()}
    config = _run_config("verify", args.seed, {
        "theorem": args.theorem, **{k: _jsonify(v)
                                    for k, v in kwargs.items()}})
    _emit(args.outdir, config, header, rows, report)
    verdict = "PASS" if rep.passed else "FAIL"
    print(f"theorem {rep.theorem}: {verdict} "
          f"(observed [{rep.observed_min:.4g}, {rep.observed_max:.4g}], "
          f"bounds [{rep.bound_low}, {rep.bound_high}])")
    return 0 if rep.passed else 2


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--seed", type=int, default=None,
                     help="master seed (required)")
    sub.add_argument("--outdir", type=str, default=None,
                     help="output directory (default runs)")
    sub.add_argument("--config", type=str, default=None,
                     help="JSON file with flag values; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisegeom",
        description="SGD noise geometry: alignment metrics, spectra, and "
                    "escape experiments")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate and save a dataset")
    _add_common(p)
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--cov", choices=["isotropic", "power-law", "flat-tail"])
    p.add_argument("--srk", type=float, help="target effective rank")
    p.add_argument("--srk2", type=float, nargs="+")
    p.add_argument("--teacher", choices=["linear", "zero"])

    p = sub.add_parser("loss-align", help="loss alignment mu over random "
                                          "parameters")
    _add_common(p)
    p.add_argument("--preset", choices=["fig1-iso", "fig1-aniso"])
    p.add_argument("--model", choices=list(models.FAMILIES))
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--thetas", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("dir-align", help="directional alignment g")
    _add_common(p)
    p.add_argument("--model", choices=list(models.FAMILIES))
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--thetas", type=int)
    p.add_argument("--dirs", type=int)

    p = sub.add_parser("eigspec", help="eigen-direction alignment spectrum")
    _add_common(p)
    p.add_argument("--preset", choices=["fig2-linear-limited"])
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--noise", choices=["sigma0", "sigma1"])
    p.add_argument("--thetas", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("escape", help="SGD/GD escape simulations")
    _add_common(p)
    p.add_argument("--preset",
                   choices=["fig3-escape", "fig5-nonlinear-escape"])
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--srk2", type=float, nargs="+")
    p.add_argument("--beta", type=float)
    p.add_argument("--T", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("clr-toy", help="cyclical-LR two-parameter toy")
    _add_common(p)
    p.add_argument("--preset", choices=["fig4-clr"])
    p.add_argument("--min-lr", dest="min_lr", type=float)
    p.add_argument("--max-lr", dest="max_lr", type=float)
    p.add_argument("--period", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("verify", help="empirical theorem checks")
    _add_common(p)
    p.add_argument("--theorem", required=True, choices=list(THEOREM_IDS))
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--thetas", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--srk2", type=float, nargs="+")
    p.add_argument("--beta", type=float)
    p.add_argument("--T", dest="T", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("one-step", help="exact one-step loss decomposition")
    _add_common(p)
    p.add_argument("--model", choices=list(models.FAMILIES))
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--pairs", type=int)

    return parser


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "loss-align": _cmd_loss_align,
    "dir-align": _cmd_dir_align,
    "eigspec": _cmd_eigspec,
    "escape": _cmd_escape,
    "clr-toy": _cmd_clr_toy,
    "verify": _cmd_verify,
    "one-step": _cmd_one_step,
}


def _apply_config_file(args) -> None:
    if getattr(args, "config", None) is None:
        return
    path = Path(args.config)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        loaded = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file is not valid JSON: {exc}")
    if not isinstance(loaded, dict):
        raise ValidationError("config file must hold a JSON object")
    for key, value in loaded.items():
        dest = key.replace("-", "_")
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.command is None:
        parser.print_help()
        return 1
    try:
        _apply_config_file(args)
        if args.seed is None:
            raise ValidationError("--seed is required")
        if args.outdir is None:
            args.outdir = "runs"
        return _HANDLERS[args.command](args)
    except (ValidationError, UnsupportedFamilyError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
