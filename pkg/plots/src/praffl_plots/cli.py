"""Render figures from run artifacts.

    plots --pareto sweep1.csv[,sweep2.csv] --hv hv.csv --prefmap sweep.csv --out DIR

Inputs are the documented run artifacts:
  sweep.csv   client_id,lambda_perf,lambda_fair,error_rate,dp_disparity
  hv.csv      round,client_id,hv (client_id may be blank -> pooled curve)

Emitted files: pareto.png, hv.png, prefmap.png (one per requested input).
Exit status 0 on success, 1 on malformed input.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SWEEP_HEADER = ["client_id", "lambda_perf", "lambda_fair", "error_rate", "dp_disparity"]
HV_HEADER = ["round", "client_id", "hv"]


class InputError(ValueError):
    pass


def _read_rows(path: Path, expected_header: list[str]) -> list[list[str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            missing = [c for c in expected_header if header is None or c not in header]
            raise InputError(
                f"{path}: expected header {','.join(expected_header)}"
                + (f" (missing column {missing[0]!r})" if missing else "")
            )
        return [row for row in reader if row]


def read_sweep(path) -> np.ndarray:
    """Rows as (lambda_perf, lambda_fair, error_rate, dp_disparity)."""
    rows = _read_rows(Path(path), SWEEP_HEADER)
    try:
        return np.array([[float(r) for r in row[1:]] for row in rows])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric sweep cell ({exc})") from None


def nondominated_mask(points: np.ndarray) -> np.ndarray:
    """Local recomputation of the dominance rule: a point is kept unless
    some other point is at least as small in both coordinates and strictly
    smaller in one."""
    n = points.shape[0]
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        better_equal = (points <= points[i]).all(axis=1)
        strictly = (points < points[i]).any(axis=1)
        if np.any(better_equal & strictly):
            keep[i] = False
    return keep


def plot_pareto(sweep_paths: list[str], out_path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    markers = ["o", "s", "^", "D", "v"]
    for idx, path in enumerate(sweep_paths):
        data = read_sweep(path)
        objectives = data[:, 2:4]
        front = nondominated_mask(objectives)
        label = Path(path).stem
        marker = markers[idx % len(markers)]
        ax.scatter(
            objectives[~front, 0], objectives[~front, 1],
            s=12, alpha=0.35, marker=marker, label=f"{label} (dominated)",
        )
        ax.scatter(
            objectives[front, 0], objectives[front, 1],
            s=30, marker=marker, edgecolors="black", linewidths=0.6,
            label=f"{label} (non-dominated)",
        )
    ax.set_xlabel("error rate")
    ax.set_ylabel("DP disparity")
    ax.set_title("Solution sets")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_hv(hv_path: str, out_path: Path) -> None:
    rows = _read_rows(Path(hv_path), HV_HEADER)
    fig, ax = plt.subplots(figsize=(6, 4))
    pooled = any(row[1].strip() == "" for row in rows)
    if pooled:
        series: dict[int, list[float]] = {}
        for row in rows:
            series.setdefault(int(row[0]), []).append(float(row[2]))
        rounds = sorted(series)
        ax.plot(rounds, [float(np.mean(series[r])) for r in rounds], marker="o", label="pooled")
    else:
        per_client: dict[str, dict[int, float]] = {}
        for row in rows:
            per_client.setdefault(row[1], {})[int(row[0])] = float(row[2])
        for client, values in sorted(per_client.items()):
            rounds = sorted(values)
            ax.plot(rounds, [values[r] for r in rounds], marker="o", label=f"client {client}")
    ax.set_xlabel("round")
    ax.set_ylabel("hypervolume")
    ax.set_title("Hypervolume per round")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_pref_map(sweep_path: str, out_path: Path) -> None:
    data = read_sweep(sweep_path)
    fig, ax = plt.subplots(figsize=(6, 5))
    scatter = ax.scatter(data[:, 2], data[:, 3], c=data[:, 1], cmap="viridis", s=14)
    fig.colorbar(scatter, ax=ax, label="fairness weight")
    ax.set_xlabel("error rate")
    ax.set_ylabel("DP disparity")
    ax.set_title("Preference-to-objective mapping")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plots", description=__doc__.splitlines()[0])
    parser.add_argument("--pareto", help="comma-separated sweep.csv files to overlay")
    parser.add_argument("--hv", help="hv.csv with per-round hypervolume")
    parser.add_argument("--prefmap", help="sweep.csv for the preference-colored scatter")
    parser.add_argument("--out", required=True, help="output directory for images")
    args = parser.parse_args(argv)
    if not (args.pareto or args.hv or args.prefmap):
        parser.error("nothing to plot: pass --pareto, --hv, or --prefmap")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.pareto:
            plot_pareto([p for p in args.pareto.split(",") if p], out / "pareto.png")
        if args.hv:
            plot_hv(args.hv, out / "hv.png")
        if args.prefmap:
            plot_pref_map(args.prefmap, out / "prefmap.png")
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
