"""Independent reference implementations used as test oracles."""
import numpy as np


def numeric_grad(f, x, eps=1e-6, idx=None):
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (modified in place and restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    positions = range(flat.size) if idx is None else idx
    for i in positions:
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        g.reshape(-1)[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def same_pads(n, k, s):
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2


def brute_conv2d(x, k, stride=(1, 1), padding="same"):
    """Nested-loop NHWC cross-correlation with TF-style padding."""
    n, h, w, c = x.shape
    kh, kw, cin, cout = k.shape
    sh, sw = stride
    if padding == "same":
        oh, pt = same_pads(h, kh, sh)
        ow, pl = same_pads(w, kw, sw)
    else:
        oh, ow, pt, pl = (h - kh) // sh + 1, (w - kw) // sw + 1, 0, 0
    out = np.zeros((n, oh, ow, cout))
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for o in range(cout):
                    acc = 0.0
                    for u in range(kh):
                        for v in range(kw):
                            r, q = i * sh + u - pt, j * sw + v - pl
                            if 0 <= r < h and 0 <= q < w:
                                for ci in range(cin):
                                    acc += x[b, r, q, ci] * k[u, v, ci, o]
                    out[b, i, j, o] = acc
    return out


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = sum(a[i, t] * b[t, j] for t in range(a.shape[1]))
    return out


def mann_whitney_auc(scores, truth):
    """P(random positive outscores random negative), ties counted as one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(truth).astype(bool)
    pos, neg = s[y], s[~y]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def spreadsheet_metrics(tp, tn, fp, fn):
    """Plain-float recomputation of the four confusion metrics (None when undefined)."""
    total = tp + tn + fp + fn
    acc = None if total == 0 else (tp + tn) / total
    sens = None if tp + fn == 0 else tp / (tp + fn)
    spec = None if tn + fp == 0 else tn / (tn + fp)
    f1_den = 2 * tp + fp + fn
    f1 = None if f1_den == 0 else 2 * tp / f1_den
    return acc, sens, spec, f1


def conv_param_count(kh, kw, cin, cout):
    return kh * kw * cin * cout + cout


def dense_param_count(din, dout):
    return din * dout + dout
