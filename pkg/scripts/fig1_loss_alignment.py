"""Loss alignment mu across model families, isotropic vs anisotropic inputs.

Runs the fig1-iso and fig1-aniso presets and renders a per-family strip plot
of mu with the single-sample reference line mu = 1. Output lands in
<outdir>/fig1_loss_alignment.png next to the two run directories.
"""

import argparse
import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from noisegeom.cli import main as cli_main


def run_preset(preset: str, seed: int, outdir: Path) -> Path:
    target = outdir / preset
    target.mkdir(parents=True, exist_ok=True)
    rc = cli_main(["loss-align", "--preset", preset, "--seed", str(seed),
                   "--outdir", str(target)])
    if rc != 0:
        raise SystemExit(f"{preset} failed with exit code {rc}")
    (run_dir,) = [p for p in target.iterdir() if p.is_dir()]
    return run_dir


def load_mu(run_dir: Path) -> dict[str, np.ndarray]:
    by_family: dict[str, list[float]] = {}
    with open(run_dir / "results.csv") as fh:
        for row in csv.DictReader(fh):
            by_family.setdefault(row["family"], []).append(float(row["mu"]))
    return {fam: np.asarray(vals) for fam, vals in by_family.items()}


def strip_panel(ax, data: dict[str, np.ndarray], title: str, rng) -> None:
    families = sorted(data)
    for i, fam in enumerate(families):
        vals = data[fam]
        x = i + rng.uniform(-0.18, 0.18, size=vals.size)
        ax.plot(x, vals, "o", ms=4, alpha=0.6)
        ax.plot([i - 0.3, i + 0.3], [vals.mean()] * 2, "k-", lw=2)
    ax.axhline(1.0, color="gray", ls="--", lw=1)
    ax.set_xticks(range(len(families)))
    ax.set_xticklabels(families, rotation=20, ha="right")
    ax.set_ylabel("mu")
    ax.set_title(title)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outdir", type=Path, default=Path("runs/fig1"))
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, preset in zip(axes, ("fig1-iso", "fig1-aniso")):
        run_dir = run_preset(preset, args.seed, args.outdir)
        report = json.loads((run_dir / "report.json").read_text())
        strip_panel(ax, load_mu(run_dir), preset, rng)
        for fam, stats in sorted(report["per_family"].items()):
            print(f"{preset} {fam}: mean mu = {stats['mean_mu']:.4f} "
                  f"[{stats['min_mu']:.4f}, {stats['max_mu']:.4f}]")

    fig.tight_layout()
    out = args.outdir / "fig1_loss_alignment.png"
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
