"""Eigen-direction alignment spectrum in the linear regression limit.

Runs the fig2-linear-limited preset and plots alpha_k / lambda_k for the
top eigendirections in both sample-size regimes. The shaded band marks the
[0.3, 3] corridor the ratios are expected to stay inside.
"""

import argparse
import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from noisegeom.cli import main as cli_main


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outdir", type=Path, default=Path("runs/fig2"))
    args = ap.parse_args()

    args.outdir.mkdir(parents=True, exist_ok=True)
    rc = cli_main(["eigspec", "--preset", "fig2-linear-limited",
                   "--seed", str(args.seed), "--outdir", str(args.outdir)])
    if rc != 0:
        raise SystemExit(rc)
    (run_dir,) = [p for p in args.outdir.iterdir() if p.is_dir()]
    report = json.loads((run_dir / "report.json").read_text())

    # ratio traces per (regime, theta); k is 1-based in the CSV
    traces = defaultdict(dict)
    with open(run_dir / "results.csv") as fh:
        for row in csv.DictReader(fh):
            key = (row["regime"], int(row["theta"]))
            traces[key][int(row["k"])] = float(row["ratio"])

    regimes = sorted({key[0] for key in traces})
    fig, axes = plt.subplots(1, len(regimes), figsize=(5 * len(regimes), 4),
                             sharey=True)
    for ax, regime in zip(axes, regimes):
        ax.axhspan(0.3, 3.0, color="tab:green", alpha=0.12)
        for (reg, _theta), vals in sorted(traces.items()):
            if reg != regime:
                continue
            ks = sorted(vals)
            ax.plot(ks, [vals[k] for k in ks], "o-", ms=3, alpha=0.7)
        ax.axhline(1.0, color="gray", ls="--", lw=1)
        ax.set_yscale("log")
        ax.set_xlabel("eigenvalue index k")
        n = report["regimes"][regime]["n"]
        ax.set_title(f"{regime} (n={n})")
    axes[0].set_ylabel("alpha_k / lambda_k")

    fig.tight_layout()
    out = args.outdir / "fig2_eigen_alignment.png"
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    for regime, stats in sorted(report["regimes"].items()):
        print(f"{regime}: ratio in [{stats['min_ratio']:.4f}, "
              f"{stats['max_ratio']:.4f}]")


if __name__ == "__main__":
    main()
