"""Regenerates ap_reference.json using scikit-learn's AffinityPropagation.

Each instance holds seeded blob points and the labels the reference
implementation assigns with median preference, damping 0.5,
max_iter 200 and convergence_iter 15.
"""
import json

import numpy as np
from sklearn.cluster import AffinityPropagation


def blobs(seed, n_blobs, per_blob, spread):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-20.0, 20.0, size=(n_blobs, 2))
    # keep blob centers apart so the ground truth is unambiguous
    while min(
        np.linalg.norm(centers[i] - centers[j])
        for i in range(n_blobs)
        for j in range(i + 1, n_blobs)
    ) < 12.0:
        centers = rng.uniform(-20.0, 20.0, size=(n_blobs, 2))
    pts = np.concatenate(
        [c + rng.normal(0.0, spread, size=(per_blob, 2)) for c in centers]
    )
    return pts


def reference_labels(points):
    ap = AffinityPropagation(
        damping=0.5, max_iter=200, convergence_iter=15, random_state=0
    ).fit(points)
    return [int(x) for x in ap.labels_], bool(ap.n_iter_ < 200)


instances = []
for i in range(20):
    n_blobs = 2 if i < 10 else 3
    seed = 1000 + i
    pts = blobs(seed, n_blobs, per_blob=10, spread=1.0)
    labels, converged = reference_labels(pts)
    instances.append(
        {
            "name": f"blobs{n_blobs}_seed{seed}",
            "blobs": n_blobs,
            "points": pts.tolist(),
            "labels": labels,
            "converged": converged,
        }
    )

# two tight groups at (0,0) and (100,100)
rng = np.random.default_rng(3)
tight = np.concatenate(
    [rng.normal(0.0, 0.01, size=(4, 2)), 100.0 + rng.normal(0.0, 0.01, size=(4, 2))]
)
labels, converged = reference_labels(tight)
instances.append(
    {"name": "tight_pair", "blobs": 2, "points": tight.tolist(), "labels": labels, "converged": converged}
)

# 30 points in 3 gaussian blobs, seed 7
pts = blobs(7, 3, per_blob=10, spread=1.0)
labels, converged = reference_labels(pts)
instances.append(
    {"name": "blobs3_seed7_n30", "blobs": 3, "points": pts.tolist(), "labels": labels, "converged": converged}
)

with open("ap_reference.json", "w") as f:
    json.dump({"instances": instances}, f, indent=1)

for inst in instances:
    print(inst["name"], len(set(inst["labels"])), inst["converged"])
