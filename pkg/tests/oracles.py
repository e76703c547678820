"""Independent reference implementations shared by the test modules.

Everything here is written the slow, obvious way on purpose: nested loops
and scalar arithmetic, no shared code with the package under test.
"""

import math

import numpy as np


def conv2d_oracle(x, w, bias=None, stride=1, padding=0, groups=1):
    """Direct nested-loop cross-correlation with zero padding."""
    b, cin, h, wdt = x.shape
    cout, cin_g, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wdt + 2 * padding - kw) // stride + 1
    xp = np.zeros((b, cin, h + 2 * padding, wdt + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wdt] = x
    out = np.zeros((b, cout, oh, ow))
    cpg_out = cout // groups
    for bi in range(b):
        for co in range(cout):
            g = co // cpg_out
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(cin_g):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (xp[bi, g * cin_g + ci, oi * stride + u, oj * stride + v]
                                        * w[co, ci, u, v])
                    out[bi, co, oi, oj] = acc
            if bias is not None:
                out[bi, co] += bias[co]
    return out


def bilinear_oracle_point(x2d, oi, oj, out_h, out_w):
    """Scalar half-pixel bilinear sample of one output coordinate."""
    h, w = x2d.shape
    sy = (oi + 0.5) * h / out_h - 0.5
    sx = (oj + 0.5) * w / out_w - 0.5
    y0, x0 = math.floor(sy), math.floor(sx)
    fy, fx = sy - y0, sx - x0

    def at(i, j):
        return x2d[min(max(i, 0), h - 1), min(max(j, 0), w - 1)]

    top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx
    bot = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def metrics_pixel_loop_oracle(pairs, num_classes, include_background=True):
    """Per-class IoU/Acc/F from raw pixel loops; never builds a matrix.

    Returns (iou, acc, fscore) arrays with nan for skipped/undefined values,
    and the (miou, macc, mfscore) nan-skipping means.
    """
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    for pred, gt in pairs:
        for i in range(pred.shape[0]):
            for j in range(pred.shape[1]):
                p, g = int(pred[i, j]), int(gt[i, j])
                if p == g:
                    tp[g] += 1
                else:
                    fp[p] += 1
                    fn[g] += 1
    start = 0 if include_background else 1
    iou, acc, fsc = [], [], []
    for c in range(start, num_classes):
        if tp[c] + fp[c] + fn[c] == 0:
            iou.append(math.nan)
            acc.append(math.nan)
            fsc.append(math.nan)
            continue
        iou.append(tp[c] / (tp[c] + fp[c] + fn[c]))
        acc.append(tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else math.nan)
        fsc.append(2 * tp[c] / (2 * tp[c] + fp[c] + fn[c]))

    def nanmean(vals):
        kept = [v for v in vals if not math.isnan(v)]
        return sum(kept) / len(kept) if kept else math.nan

    return (np.array(iou), np.array(acc), np.array(fsc),
            nanmean(iou), nanmean(acc), nanmean(fsc))
