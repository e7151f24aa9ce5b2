#!/usr/bin/env python3
"""Plot a solved mean path with covariance ellipses, sample paths and obstacles.

    python scripts/plot_trajectories.py --scenario scenarios/unicycle_fig1.json \
        --trajectory out/trajectory.csv --samples eval/samples.csv -o plot.png
"""

import argparse
import json

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.patches import Circle, Ellipse


def read_csv(path):
    return pd.read_csv(path, comment="#")


def ellipse(mean, cov, scale, **kw):
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    angle = np.degrees(np.arctan2(vecs[1, 1], vecs[0, 1]))
    w, h = 2 * scale * np.sqrt(vals[::-1])
    return Ellipse(mean, w, h, angle=angle, **kw)


def draw_obstacles(ax, scenario, coords):
    for obs in scenario.get("obstacles", []):
        oc = obs.get("coords", [0, 1])
        if obs["kind"] in ("circle", "sphere"):
            if list(oc[:2]) != list(coords):
                continue
            ax.add_patch(Circle(obs["center"][:2], obs["radius"], color="0.6", alpha=0.6))
        elif obs["kind"] == "halfspace" and len(oc) == 1:
            # a wall on one coordinate: forbidden where normal·x > offset
            n, b = obs["normal"][0], obs["offset"]
            level = b / n
            if oc[0] == coords[1]:
                ax.axhline(level, color="0.4", lw=2)
            elif oc[0] == coords[0]:
                ax.axvline(level, color="0.4", lw=2)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--samples")
    p.add_argument("--coords", type=int, nargs=2, default=[0, 1])
    p.add_argument("--sigmas", type=float, default=3.0, help="ellipse size in standard deviations")
    p.add_argument("--every", type=int, default=5, help="draw an ellipse every N steps")
    p.add_argument("-o", "--output", default="trajectory.png")
    args = p.parse_args()

    with open(args.scenario) as f:
        scenario = json.load(f)
    i, j = args.coords
    traj = read_csv(args.trajectory)

    fig, ax = plt.subplots(figsize=(6, 6))
    draw_obstacles(ax, scenario, args.coords)
    if args.samples:
        samples = read_csv(args.samples)
        for _, path in samples.groupby("trial"):
            ax.plot(path[f"x_{i}"], path[f"x_{j}"], color="tab:blue", lw=0.5, alpha=0.4)
    ax.plot(traj[f"mu_{i}"], traj[f"mu_{j}"], color="k", lw=1.5, label="mean")
    for t in range(0, len(traj), args.every):
        row = traj.iloc[t]
        cov = np.array([[row[f"sigma_{a}_{b}"] for b in (i, j)] for a in (i, j)])
        ax.add_patch(ellipse((row[f"mu_{i}"], row[f"mu_{j}"]), cov, args.sigmas, fill=False, color="tab:red", lw=0.8))
    ax.set_aspect("equal")
    ax.set_xlabel(f"x_{i}")
    ax.set_ylabel(f"x_{j}")
    ax.set_title(scenario.get("name") or args.scenario)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
