"""Independent reference computations used by the tests.

Nothing here imports the code under test's internals: the finite-difference
and brute-force helpers only see scalar loss functions or plain data.
"""

import itertools
import math

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at vector ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def ref_softmax(z):
    m = max(z)
    ex = [math.exp(v - m) for v in z]
    s = math.fsum(ex)
    return [v / s for v in ex]


def ref_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def brute_spans(n, max_width):
    return [(b, e) for b in range(1, n + 1) for e in range(1, n + 1) if b <= e and e - b + 1 <= max_width]


def brute_score(gold, preds):
    """tp/fp/fn by explicit double loops over (sentence, b, e, type) tuples."""
    g = []
    for sid, ents in enumerate(gold):
        for ent in ents:
            t = (sid, *ent)
            if t not in g:
                g.append(t)
    p = []
    for t in preds:
        if t not in p:
            p.append(t)
    tp = sum(1 for x in p for y in g if x == y)
    return tp, len(p) - tp, len(g) - tp


def all_pairs(n):
    return list(itertools.product(range(1, n + 1), repeat=2))
