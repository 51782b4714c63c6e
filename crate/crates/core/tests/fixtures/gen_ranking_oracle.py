"""Standalone oracle values for the entropy-weight and TOPSIS frozen tests."""
import math

import numpy as np


def entropy_weights(v):
    n, m = len(v), len(v[0])
    raw = []
    for d in range(m):
        col = [v[i][d] for i in range(n)]
        total = sum(col)
        s = [x / total for x in col]
        h = -sum(p * math.log(p) for p in s if p > 0) / math.log(n)
        raw.append(1.0 - h)
    z = sum(raw)
    return [r / z for r in raw]


def topsis(v, w):
    out = []
    for row in v:
        near = math.sqrt(sum(wd * (x - 1.0) ** 2 for wd, x in zip(w, row)))
        far = math.sqrt(sum(wd * x * x for wd, x in zip(w, row)))
        out.append(far / (near + far))
    return out


v = [[1.0, 0.2], [0.5, 0.2], [0.0, 0.8]]
print("entropy 3x2:", [repr(x) for x in entropy_weights(v)])

rng = np.random.default_rng(42)
m5 = rng.uniform(0.0, 1.0, size=(5, 3)).tolist()
w5 = rng.dirichlet([1.0, 1.0, 1.0]).tolist()
print("matrix 5x3:", [[repr(x) for x in r] for r in m5])
print("weights:", [repr(x) for x in w5])
print("topsis:", [repr(x) for x in topsis(m5, w5)])
print("entropy on 5x3:", [repr(x) for x in entropy_weights(m5)])
