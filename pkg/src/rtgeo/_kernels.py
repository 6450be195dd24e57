"""Hot numeric kernels: numba-jitted versions with pure-numpy fallbacks.

Set RTGEO_DISABLE_NUMBA=1 to force the numpy path (used by the benchmark
and by CI environments without a working JIT). Selection happens once at
import; the dispatching wrappers at the bottom are the public surface.
"""

import os

import numpy as np

_DISABLED = os.environ.get("RTGEO_DISABLE_NUMBA", "").strip() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by RTGEO_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco


# ---------------------------------------------------------------------------
# pairwise Hölder quotient: max over node pairs with |u-v| >= floor of
# |f(u)-f(v)|_2 / |u-v|^alpha.  O(N^2) over grid nodes; the one kernel where
# the JIT genuinely matters (138M pairs at 129^2).
# ---------------------------------------------------------------------------


@njit(cache=True)
def _holder_pair_max_jit(coords, vals, alpha, floor):
    npts = coords.shape[0]
    ndim = coords.shape[1]
    ncmp = vals.shape[1]
    best = 0.0
    f2 = floor * floor
    for i in range(npts):
        for j in range(i + 1, npts):
            d2 = 0.0
            for k in range(ndim):
                t = coords[i, k] - coords[j, k]
                d2 += t * t
            if d2 < f2:
                continue
            v2 = 0.0
            for c in range(ncmp):
                t = vals[i, c] - vals[j, c]
                v2 += t * t
            q = np.sqrt(v2) / d2 ** (0.5 * alpha)
            if q > best:
                best = q
    return best


def _holder_pair_max_numpy(coords, vals, alpha, floor, chunk=512):
    npts = coords.shape[0]
    best = 0.0
    f2 = floor * floor
    for s in range(0, npts, chunk):
        cs = coords[s : s + chunk]
        vs = vals[s : s + chunk]
        # pairs (s..s+chunk) x (s..end); upper triangle covered across chunks
        d2 = ((cs[:, None, :] - coords[None, s:, :]) ** 2).sum(-1)
        dv = np.sqrt(((vs[:, None, :] - vals[None, s:, :]) ** 2).sum(-1))
        mask = d2 >= f2
        if not mask.any():
            continue
        q = np.where(mask, dv / np.maximum(d2, f2) ** (0.5 * alpha), 0.0)
        m = q.max()
        if m > best:
            best = m
    return float(best)


# ---------------------------------------------------------------------------
# bilinear interpolation batch, n == 2 fast path.  values: (r0, r1, C),
# pts already mapped to fractional index space.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _interp2_jit(values, ti, tj, fi, fj):
    npts = ti.shape[0]
    ncmp = values.shape[2]
    out = np.empty((npts, ncmp))
    for p in range(npts):
        i = ti[p]
        j = tj[p]
        a = fi[p]
        b = fj[p]
        for c in range(ncmp):
            out[p, c] = (
                (1 - a) * (1 - b) * values[i, j, c]
                + a * (1 - b) * values[i + 1, j, c]
                + (1 - a) * b * values[i, j + 1, c]
                + a * b * values[i + 1, j + 1, c]
            )
    return out


def _interp2_numpy(values, ti, tj, fi, fj):
    a = fi[:, None]
    b = fj[:, None]
    return (
        (1 - a) * (1 - b) * values[ti, tj]
        + a * (1 - b) * values[ti + 1, tj]
        + (1 - a) * b * values[ti, tj + 1]
        + a * b * values[ti + 1, tj + 1]
    )


# ---------------------------------------------------------------------------
# compact-support bump convolution with boundary-truncated renormalization,
# n == 2.  Equivalent to normalized convolution with zero-fill outside.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _mollify2_jit(field, kern):
    r0, r1, ncmp = field.shape
    k0, k1 = kern.shape
    c0 = k0 // 2
    c1 = k1 // 2
    out = np.empty_like(field)
    for i in range(r0):
        for j in range(r1):
            wsum = 0.0
            acc = np.zeros(ncmp)
            for a in range(k0):
                ii = i + a - c0
                if ii < 0 or ii >= r0:
                    continue
                for b in range(k1):
                    jj = j + b - c1
                    if jj < 0 or jj >= r1:
                        continue
                    w = kern[a, b]
                    if w == 0.0:
                        continue
                    wsum += w
                    for c in range(ncmp):
                        acc[c] += w * field[ii, jj, c]
            for c in range(ncmp):
                out[i, j, c] = acc[c] / wsum
    return out


def _mollify2_numpy(field, kern):
    from scipy import ndimage

    out = np.empty_like(field)
    den = ndimage.convolve(np.ones(field.shape[:2]), kern, mode="constant", cval=0.0)
    for c in range(field.shape[2]):
        out[..., c] = ndimage.convolve(field[..., c], kern, mode="constant", cval=0.0) / den
    return out


# ---------------------------------------------------------------------------
# dispatchers
# ---------------------------------------------------------------------------


def holder_pair_max(coords, vals, alpha, floor):
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    if HAVE_NUMBA:
        return float(_holder_pair_max_jit(coords, vals, float(alpha), float(floor)))
    return _holder_pair_max_numpy(coords, vals, float(alpha), float(floor))


def interp2_batch(values, ti, tj, fi, fj):
    if HAVE_NUMBA:
        return _interp2_jit(values, ti, tj, fi, fj)
    return _interp2_numpy(values, ti, tj, fi, fj)


def mollify2(field, kern):
    if HAVE_NUMBA:
        return _mollify2_jit(np.ascontiguousarray(field), np.ascontiguousarray(kern))
    return _mollify2_numpy(field, kern)
