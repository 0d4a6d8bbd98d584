#!/usr/bin/env python3
"""Render accuracy curves and the task-similarity matrix from the CSVs
written by `waveop evaluate`. Self-contained; needs matplotlib."""
import csv
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

metrics = sys.argv[1] if len(sys.argv) > 1 else "metrics.csv"
similarity = sys.argv[2] if len(sys.argv) > 2 else "similarity.csv"

curves = defaultdict(lambda: ([], [], [], []))
with open(metrics) as fh:
    for row in csv.DictReader(fh):
        c = curves[row["task"]]
        c[0].append(int(row["step"]))
        c[1].append(float(row["mean_acc"]))
        c[2].append(float(row["ci95_low"]))
        c[3].append(float(row["ci95_high"]))

fig, ax = plt.subplots(figsize=(7, 4))
for task, (steps, mean, lo, hi) in sorted(curves.items()):
    ax.plot(steps, mean, label=f"task {task}")
    ax.fill_between(steps, lo, hi, alpha=0.2)
ax.set_xlabel("forecast step")
ax.set_ylabel("accuracy")
ax.set_ylim(0, 1.05)
ax.legend()
fig.tight_layout()
fig.savefig("accuracy_curves.png", dpi=150)

rows = list(csv.reader(open(similarity)))
labels = rows[0][1:]
mat = [[float(v) for v in r[1:]] for r in rows[1:]]
fig, ax = plt.subplots(figsize=(4.5, 4))
im = ax.imshow(mat, vmin=0, vmax=1, cmap="viridis")
ax.set_xticks(range(len(labels)), labels)
ax.set_yticks(range(len(labels)), labels)
for i in range(len(labels)):
    for j in range(len(labels)):
        ax.text(j, i, f"{mat[i][j]:.2f}", ha="center", va="center", color="w")
fig.colorbar(im)
fig.tight_layout()
fig.savefig("similarity_matrix.png", dpi=150)
print("wrote accuracy_curves.png and similarity_matrix.png")
