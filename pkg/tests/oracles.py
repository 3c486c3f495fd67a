"""Straight-line reference evaluations used as independent oracles.

Everything here works on plain floats / numpy arrays with explicit loops, so
it shares no code path with the torch implementations under test.
"""
import math

import numpy as np


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def conv1x1(x, w, b):
    """x [C, H, W], w [O, C], b [O] -> [O, H, W]."""
    c, h, wd = x.shape
    out = np.zeros((w.shape[0], h, wd))
    for o in range(w.shape[0]):
        for i in range(h):
            for j in range(wd):
                s = b[o]
                for k in range(c):
                    s += w[o, k] * x[k, i, j]
                out[o, i, j] = s
    return out


def relu(x):
    return np.where(x > 0, x, 0.0)


def channel_attention(x, j1w, j1b, j2w, j2b):
    """x + g(x) * sigmoid(g(mean-pooled x)), g = j2 . relu . j1."""
    c, h, w = x.shape
    pooled = np.zeros((c, 1, 1))
    for k in range(c):
        pooled[k, 0, 0] = sum(x[k, i, j] for i in range(h) for j in range(w)) / (h * w)
    g_full = conv1x1(relu(conv1x1(x, j1w, j1b)), j2w, j2b)
    g_pool = conv1x1(relu(conv1x1(pooled, j1w, j1b)), j2w, j2b)
    out = np.zeros_like(x)
    for k in range(c):
        gate = sigmoid(g_pool[k, 0, 0])
        for i in range(h):
            for j in range(w):
                out[k, i, j] = x[k, i, j] + g_full[k, i, j] * gate
    return out


def fuse(xa, xm, w1, b1, w2, b2):
    """xa * sigmoid(conv2(relu(conv1(concat(xa, xm)))))."""
    cat = np.concatenate([xa, xm], axis=0)
    z = conv1x1(relu(conv1x1(cat, w1, b1)), w2, b2)
    out = np.zeros_like(xa)
    att = np.zeros_like(xa)
    for idx in np.ndindex(*xa.shape):
        att[idx] = sigmoid(z[idx])
        out[idx] = xa[idx] * att[idx]
    return out, att


def norm(v):
    return math.sqrt(sum(float(a) * float(a) for a in v))


def cosine(a, b, eps=1e-12):
    return sum(float(x) * float(y) for x, y in zip(a, b)) / max(norm(a) * norm(b), eps)


def softmax(vals):
    m = max(vals)
    e = [math.exp(v - m) for v in vals]
    s = sum(e)
    return [x / s for x in e]


def memory_read(queries, items):
    """queries [K, C], items [N, C] -> (reads [K, C], weights [K, N])."""
    reads, weights = [], []
    for q in queries:
        w = softmax([cosine(q, p) for p in items])
        weights.append(w)
        reads.append([sum(w[i] * items[i][c] for i in range(len(items))) for c in range(len(q))])
    return np.array(reads), np.array(weights)


def memory_update(items, queries):
    out = []
    for p in items:
        v = softmax([cosine(p, q) for q in queries])
        raw = [p[c] + sum(v[k] * queries[k][c] for k in range(len(queries))) for c in range(len(p))]
        n = norm(raw)
        out.append([r / n for r in raw] if n > 1e-12 else list(p))
    return np.array(out)


def entropy_mean(weights):
    total = 0.0
    for row in weights:
        total += -sum(w * math.log(w) for w in row if w > 0)
    return total / len(weights)


def compactness(queries, reads, delta):
    total = 0.0
    for q, r in zip(queries, reads):
        total += max(abs(cosine(q, r)) - delta, 0.0)
    return total / len(queries)


def mse(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)) / len(a)


def psnr(pred, target, ceiling=100.0):
    m = mse((np.asarray(pred) + 1) / 2, (np.asarray(target) + 1) / 2)
    if m == 0:
        return ceiling
    return min(10 * math.log10(1.0 / m), ceiling)


def memory_distance(queries, items):
    total = 0.0
    for q in queries:
        best = math.inf
        for p in items:
            best = min(best, math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(q, p))))
        total += best
    return total / len(queries)


def minmax(xs):
    lo, hi = min(xs), max(xs)
    if hi == lo:
        return [0.0] * len(xs)
    return [(x - lo) / (hi - lo) for x in xs]


def regularity(psnrs, dists, tau):
    fp, fd = minmax(list(psnrs)), minmax(list(dists))
    return [min(max(1 - tau * (1 - a) - (1 - tau) * b, 0.0), 1.0) for a, b in zip(fp, fd)]


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    correct = ties = 0
    for p in pos:
        for n in neg:
            if p > n:
                correct += 1
            elif p == n:
                ties += 1
    return (correct + 0.5 * ties) / (len(pos) * len(neg))
