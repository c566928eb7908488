"""Pure numpy implementation of the histogram kernel.

Used when the compiled ``_kernels`` extension is unavailable.  Produces
bit-identical counts: the same products and additions are performed in the
same order, only vectorized over the image interior.
"""
import numpy as np


def code_histogram(img, offsets, weights, border, rotated, counts):
    img = np.ascontiguousarray(img, dtype=np.float64)
    height, width = img.shape
    P = offsets.shape[0]
    ys = slice(border, height - border)
    xs = slice(border, width - border)
    center = img[ys, xs]

    def shifted(dy, dx):
        return img[border + dy : height - border + dy, border + dx : width - border + dx]

    bits = np.empty((P,) + center.shape, dtype=bool)
    best = np.full(center.shape, -1.0)
    dominant = np.zeros(center.shape, dtype=np.int64)
    code = np.zeros(center.shape, dtype=np.int64)
    for p in range(P):
        ny, fy, nx, fx = (int(v) for v in offsets[p])
        w_nn, w_ff, w_nf, w_fn = (float(v) for v in weights[p])
        g = (w_nn * shifted(ny, nx) + w_ff * shifted(fy, fx)) + (w_nf * shifted(fy, nx) + w_fn * shifted(ny, fx))
        bits[p] = g >= center
        if rotated:
            mag = np.abs(g - center)
            upd = mag > best
            best[upd] = mag[upd]
            dominant[upd] = p
        else:
            code |= bits[p].astype(np.int64) << p
    if rotated:
        for p in range(P):
            code |= bits[p].astype(np.int64) << ((p - dominant) % P)
    counts += np.bincount(code.ravel(), minlength=counts.shape[0]).astype(counts.dtype)
