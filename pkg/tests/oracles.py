"""Independent reference implementations used by the tests.

Everything here is deliberately naive (explicit loops, no shared code with
the package) so that agreement is meaningful.
"""
import math

import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (x is restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def conv2d_loops(x, w, b, stride=1, pad=0):
    """Direct cross-correlation, NCHW."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for a in range(n):
        for o in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = b[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[a, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[a, o, i, j] = acc
    return out


def maxpool_loops(x, k):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // k, w // k))
    for a in range(n):
        for ch in range(c):
            for i in range(h // k):
                for j in range(w // k):
                    out[a, ch, i, j] = max(x[a, ch, i * k + u, j * k + v] for u in range(k) for v in range(k))
    return out


def topk_binary_loops(hn, k):
    """Top-k% mask by counting, per the m-th-largest rule with zero exclusion."""
    vals = sorted((float(v) for v in np.ravel(hn)), reverse=True)
    m = max(1, min(len(vals), math.ceil(k * len(vals) / 100 - 1e-9)))
    theta = vals[m - 1]
    out = np.zeros_like(hn, dtype=np.float64)
    for idx in np.ndindex(hn.shape):
        if hn[idx] >= theta and hn[idx] > 0:
            out[idx] = 1.0
    return out, theta


def top_precision_loops(binary, mask):
    inside = total = 0.0
    for i in range(binary.shape[0]):
        for j in range(binary.shape[1]):
            total += binary[i, j]
            if mask[i, j]:
                inside += binary[i, j]
    return None if total == 0 else inside / total


def all_precision_loops(hn, mask):
    inside = total = 0.0
    for i in range(hn.shape[0]):
        for j in range(hn.shape[1]):
            total += hn[i, j]
            if mask[i, j]:
                inside += hn[i, j]
    return None if total == 0 else inside / total


def coverage_loops(binary, boxes, tau):
    covered = 0
    for (x0, y0, x1, y1) in boxes:
        hits = cells = 0
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                cells += 1
                hits += binary[y, x] > 0
        covered += hits / cells >= tau
    return covered, len(boxes)


def gradcam_fd(score_of_A, A, h=1e-6):
    """Grad-CAM weights and heatmap from finite differences of a score callable."""
    g = central_diff(lambda: score_of_A(A), A, h)
    w = g.mean(axis=(-2, -1))
    H = np.maximum((w[..., None, None] * A).sum(axis=-3), 0.0)
    return w, H
