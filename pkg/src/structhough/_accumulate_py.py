"""Pure-numpy accumulator, used when the compiled kernel is unavailable."""
import numpy as np

# bound on the (angles, voters, offsets) temporary, in elements
_CHUNK_ELEMS = 1 << 21


def accumulate(voters, sin_t, cos_t, r0, dr, nr, sigma):
    nt = len(sin_t)
    out = np.zeros((nt, nr), dtype=np.float64)
    n = len(voters)
    if nt == 0 or nr == 0 or n == 0:
        return out
    x, y, w = voters[:, 0], voters[:, 1], voters[:, 2]
    rs = r0 + np.arange(nr) * dr
    k = 1.0 / (2.0 * sigma * sigma)
    step = max(1, _CHUNK_ELEMS // (n * nr))
    for t0 in range(0, nt, step):
        t1 = min(nt, t0 + step)
        p = sin_t[t0:t1, None] * y[None, :] + cos_t[t0:t1, None] * x[None, :]
        d = p[:, :, None] - rs[None, None, :]
        np.multiply(d, d, out=d)
        np.multiply(d, -k, out=d)
        np.exp(d, out=d)
        np.multiply(d, w[None, :, None], out=d)
        # reduction over the voter axis is sequential, i.e. in voter order
        out[t0:t1] = d.sum(axis=1)
    return out
