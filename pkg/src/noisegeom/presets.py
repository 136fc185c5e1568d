"""Experiment configurations for the bundled figure-style studies.

A config either names a preset or carries explicit blocks, never both.
Resolution returns plain JSON-serializable dicts so configs can be hashed
into run ids and echoed verbatim into output metadata. Every place a preset
departs from the reference scale of the study it imitates (smaller n or d
for desk runtime, hyperparameters the source never stated) is recorded in
the config's deviations list.
"""

import math
from dataclasses import dataclass, field

from .errors import ValidationError

PRESET_NAMES = ("fig1-iso", "fig1-aniso", "fig2-linear-limited",
                "fig3-escape", "fig4-clr", "fig5-nonlinear-escape")


@dataclass
class ExperimentConfig:
    seed: int
    outdir: str = "runs"
    preset: str | None = None
    blocks: dict | None = None
    reps: int | None = None
    deviations: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "outdir": self.outdir,
            "preset": self.preset,
            "blocks": self.blocks,
            "reps": self.reps,
            "deviations": list(self.deviations),
        }


def validate_config(config: ExperimentConfig) -> None:
    """Exactly one source of truth: a preset name, or explicit blocks.

    A resolved preset config carries both, which is accepted only when the
    blocks are exactly what the preset resolves to.
    """
    if config.seed is None:
        raise ValidationError("a master seed is required")
    has_preset = config.preset is not None
    has_blocks = config.blocks is not None
    if not has_preset and not has_blocks:
        raise ValidationError(
            "exactly one of preset and explicit blocks must be given")
    if has_preset:
        if config.preset not in PRESET_NAMES:
            raise ValidationError(
                f"unknown preset {config.preset!r}; available: {PRESET_NAMES}")
        if has_blocks:
            expected = preset(config.preset, config.seed, config.outdir,
                              config.reps).blocks
            if config.blocks != expected:
                raise ValidationError(
                    "explicit blocks conflict with the named preset; "
                    "supply one or the other")


def _fig1_blocks(kind: str) -> tuple[dict, list]:
    d_eff = 50
    n = math.ceil(5 * math.log(d_eff))
    blocks = {
        "kind": "alignment",
        "metric": "mu",
        "data": {"cov": kind, "d_eff": d_eff, "n": n, "teacher": "linear"},
        "models": ["linear", "diag_linear_net", "deep_linear_net",
                   "two_layer"],
        "deep_widths": [0, 32, 1],   # 0 means the data dimension
        "two_layer_width": 32,
        "thetas": 20,
        "theta_law": "gaussian",
    }
    deviations = [
        "n = ceil(5 ln 50) = 20: the stated sample-size rule is not an "
        "integer and is rounded up",
        "theta samples drawn from N(0, I_p); the randomly-chosen-theta law "
        "is only stated for the larger study and is assumed here",
        "deep and two-layer widths (32) are desk-scale choices; the source "
        "does not fix them",
    ]
    if kind == "power_law":
        deviations.append(
            "anisotropic spectrum lambda_i = i^(-1/2) truncated so the "
            "covariance effective rank reaches 50; the ambient dimension "
            "is whatever that truncation requires")
    return blocks, deviations


def _fig2_blocks() -> tuple[dict, list]:
    d = 2000
    blocks = {
        "kind": "eigspec",
        "data": {"cov": "isotropic", "d": d, "teacher": "linear"},
        "model": "linear",
        "regimes": {"n_linear": d // 8, "n_log": math.ceil(8 * math.log(d))},
        "k": 20,
        "noise": "sigma0",
        "thetas": 1,
        "theta_law": "gaussian",
    }
    deviations = [
        "d = 2000 in place of 10^4 so the Fisher matrix stays inside the "
        "dense-eigensolver limit; both sample-size regimes (n = d/8 and "
        "n = ceil(8 ln d)) are preserved proportionally",
        "noise covariance for the ratios defaults to sigma0; the source "
        "figure does not say which of sigma0/sigma1 it used",
    ]
    return blocks, deviations


def _fig3_blocks() -> tuple[dict, list]:
    blocks = {
        "kind": "escape",
        "data": {"cov": "flat_tail_over_d", "d": 1000, "n": 10_000,
                 "teacher": "linear"},
        "model": "linear",
        "srk2_values": [2.0, 5.0, 10.0],
        "beta": 1.2,
        "T": 50,
        "k": 1,
        "reps": 50,
        "w0_variance": math.exp(-10.0),
    }
    deviations = [
        "n = 10^4 in place of 10^5 for desk runtime; the escape statistics "
        "concentrate well below that sample count",
    ]
    return blocks, deviations


def _fig4_blocks() -> tuple[dict, list]:
    blocks = {
        "kind": "clr",
        "model": "clr_toy",
        "w0": [1.0, 1.0],
        "min_lr": 0.5,
        "max_lr": 8.0,
        "period": 100,
        "steps": 1000,
        "seeds": 20,
        "record_stride": 10,
    }
    deviations = [
        "CLR hyperparameters (min 0.5, max 8.0, period 100, 1000 steps, "
        "w0 = (1,1)) are not stated by the source; these values reproduce "
        "the qualitative SGD-vs-GD gap and are recorded as non-reference "
        "choices",
    ]
    return blocks, deviations


def _fig5_blocks() -> tuple[dict, list]:
    blocks = {
        "kind": "nonlinear_escape",
        "data": {"cov": "isotropic", "d": 20, "n": 100,
                 "teacher": "two_layer"},
        "model": "two_layer",
        "width": 32,
        "slope": 0.1,
        "train": {"steps": 3000, "lr_scale": 0.5},
        "escape": {"beta": 2.5, "T": 20, "k": 5, "perturb_scale": 1e-4},
        "init_scale": 0.5,
    }
    deviations = [
        "entire setup is a desk-scale analogue (d=20, width 32, n=100) of "
        "a study the source ran on an image-classification network; only "
        "the qualitative sharp/flat split is comparable",
        "escape step size beta=2.5 over the top curvature and the training "
        "recipe are desk-scale choices",
        "both escape runs start from theta* plus a shared random offset of "
        "norm ~1e-4: gradient descent needs a seed component in the sharp "
        "directions to amplify, and the window T=20 ends while its sharp "
        "component still dominates the frozen eigenframe",
    ]
    return blocks, deviations


_BUILDERS = {
    "fig1-iso": lambda: _fig1_blocks("isotropic"),
    "fig1-aniso": lambda: _fig1_blocks("power_law"),
    "fig2-linear-limited": _fig2_blocks,
    "fig3-escape": _fig3_blocks,
    "fig4-clr": _fig4_blocks,
    "fig5-nonlinear-escape": _fig5_blocks,
}


def preset(name: str, seed: int, outdir: str = "runs",
           reps: int | None = None) -> ExperimentConfig:
    """Fully populated config for a named preset."""
    if name not in PRESET_NAMES:
        raise ValidationError(
            f"unknown preset {name!r}; available: {PRESET_NAMES}")
    blocks, deviations = _BUILDERS[name]()
    if reps is not None:
        if reps < 1:
            raise ValidationError(f"reps must be >= 1, got {reps}")
        for key in ("reps", "seeds", "thetas"):
            if key in blocks:
                blocks[key] = reps
                break
    cfg = ExperimentConfig(seed=seed, outdir=outdir, preset=name,
                           blocks=blocks, reps=reps, deviations=deviations)
    return cfg


def resolve_blocks(config: ExperimentConfig) -> dict:
    """The effective blocks for a config from either source."""
    if config.preset is not None and config.blocks is None:
        resolved = preset(config.preset, config.seed, config.outdir,
                          config.reps)
        config.blocks = resolved.blocks
        config.deviations = resolved.deviations
    if config.blocks is None:
        raise ValidationError("config has neither preset nor blocks")
    return config.blocks
