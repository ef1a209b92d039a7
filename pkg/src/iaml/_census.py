"""Compiled inner loop for batched Monte Carlo payoff sampling.

Offsets are built from raw 64-bit generator output, two 32-bit uniforms per
word, so every draw is reproducible from the calling ``numpy`` Generator.
"""
import numpy as np
from numba import njit

_SCALE = 1.0 / 4294967296.0
_LOW = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

OK = -1
OUT_OF_BITS = -2


@njit(cache=True)
def census_draws(ref, eps, n, weights, bits, choice_u, max_attempts, out, start):
    """Fill ``out[start:]``; return ``(status, next_draw)``.

    ``status`` is ``OK`` when all draws are done, ``OUT_OF_BITS`` when
    ``bits`` ran out (the unfinished draw is restarted by the caller), or the
    index of a draw that exceeded ``max_attempts``.
    """
    n_bins = weights.shape[0]
    pool = np.empty((n, 4))
    idx = np.empty(n, np.int64)
    counts = np.zeros(n_bins, np.int64)
    ref_area = (ref[2] - ref[0]) * (ref[3] - ref[1])
    p = 0
    n_words = bits.shape[0]
    for d in range(start, out.shape[0]):
        counts[:] = 0
        k = 0
        attempts = 0
        while k < n:
            if attempts >= max_attempts:
                return d, d
            if p + 2 > n_words:
                return OUT_OF_BITS, d
            w0 = bits[p]
            w1 = bits[p + 1]
            p += 2
            attempts += 1
            x0 = ref[0] + eps * (2.0 * ((w0 >> _SHIFT) * _SCALE) - 1.0)
            y0 = ref[1] + eps * (2.0 * ((w0 & _LOW) * _SCALE) - 1.0)
            x1 = ref[2] + eps * (2.0 * ((w1 >> _SHIFT) * _SCALE) - 1.0)
            y1 = ref[3] + eps * (2.0 * ((w1 & _LOW) * _SCALE) - 1.0)
            x0 = min(1.0, max(0.0, x0))
            y0 = min(1.0, max(0.0, y0))
            x1 = min(1.0, max(0.0, x1))
            y1 = min(1.0, max(0.0, y1))
            if not (x1 > x0 and y1 > y0):
                continue
            iw = min(x1, ref[2]) - max(x0, ref[0])
            ih = min(y1, ref[3]) - max(y0, ref[1])
            inter = 0.0
            if iw > 0.0 and ih > 0.0:
                inter = iw * ih
            v = min(1.0, inter / ((x1 - x0) * (y1 - y0) + ref_area - inter))
            r = n_bins - 1 - int(np.floor(n_bins * v))
            if r < 0:
                r = 0
            pool[k, 0] = x0
            pool[k, 1] = y0
            pool[k, 2] = x1
            pool[k, 3] = y1
            idx[k] = r
            counts[r] += 1
            k += 1
        total = 0.0
        for i in range(n_bins):
            total += counts[i] * weights[i]
        u = choice_u[d, 0] * total
        acc = 0.0
        chosen = 0
        for i in range(n_bins):
            if counts[i] > 0:
                chosen = i
                acc += counts[i] * weights[i]
                if acc > u:
                    break
        member = min(int(np.floor(choice_u[d, 1] * counts[chosen])), counts[chosen] - 1)
        seen = 0
        for j in range(n):
            if idx[j] == chosen:
                if seen == member:
                    out[d, 0] = pool[j, 0]
                    out[d, 1] = pool[j, 1]
                    out[d, 2] = pool[j, 2]
                    out[d, 3] = pool[j, 3]
                    break
                seen += 1
    return OK, out.shape[0]
