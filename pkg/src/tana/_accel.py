"""Hot numeric kernels: TDOA grid search and the freefall/impact scan.

Each kernel has a numba version and a numpy/plain-Python twin that computes
bit-identical results.  The compiled path is used when numba imports and
``TANA_DISABLE_NUMBA`` is unset (or ``0``).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda func: func


USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("TANA_DISABLE_NUMBA", "0") in ("", "0")


# =============================================================================
# TDOA grid search
# =============================================================================

def _grid_search_py(mics, offsets_us, c, x0, y0, z0, res, nx, ny, nz):
    """Reference loop body shared by the compiled kernel.

    Visits cells z-major, then x, then y, keeping the first strict minimum, so
    ties resolve to the lowest z, then x, then y.  Returns
    ``(iz, ix, iy, sse)`` with ``sse`` in µs².
    """
    n = mics.shape[0]
    best = np.inf
    bz = bx = by = -1
    for iz in range(nz):
        z = z0 + (iz + 0.5) * res
        for ix in range(nx):
            x = x0 + (ix + 0.5) * res
            for iy in range(ny):
                y = y0 + (iy + 0.5) * res
                dx = mics[0, 0] - x
                dy = mics[0, 1] - y
                dz = mics[0, 2] - z
                d0 = np.sqrt(dx * dx + dy * dy + dz * dz)
                sse = 0.0
                for i in range(1, n):
                    dx = mics[i, 0] - x
                    dy = mics[i, 1] - y
                    dz = mics[i, 2] - z
                    di = np.sqrt(dx * dx + dy * dy + dz * dz)
                    r = offsets_us[i] - (di - d0) / c * 1e6
                    sse += r * r
                if sse < best:
                    best = sse
                    bz = iz
                    bx = ix
                    by = iy
    return bz, bx, by, best


_grid_search_jit = njit(cache=True)(_grid_search_py)


def grid_search_numba(mics, offsets_us, c, lo, res, shape):
    mics = np.ascontiguousarray(mics, dtype=np.float64)
    offsets_us = np.ascontiguousarray(offsets_us, dtype=np.float64)
    nx, ny, nz = shape
    return _grid_search_jit(mics, offsets_us, float(c), float(lo[0]), float(lo[1]),
                            float(lo[2]), float(res), int(nx), int(ny), int(nz))


def grid_search_numpy(mics, offsets_us, c, lo, res, shape):
    """Vectorised twin of :func:`grid_search_numba`, one z-slice at a time."""
    mics = np.asarray(mics, dtype=np.float64)
    offsets_us = np.asarray(offsets_us, dtype=np.float64)
    nx, ny, nz = shape
    xs = lo[0] + (np.arange(nx) + 0.5) * res
    ys = lo[1] + (np.arange(ny) + 0.5) * res
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    best = np.inf
    out = (-1, -1, -1)
    n = mics.shape[0]
    for iz in range(nz):
        z = lo[2] + (iz + 0.5) * res
        dx = mics[0, 0] - X
        dy = mics[0, 1] - Y
        dz = mics[0, 2] - z
        d0 = np.sqrt(dx * dx + dy * dy + dz * dz)
        sse = np.zeros_like(d0)
        for i in range(1, n):
            dx = mics[i, 0] - X
            dy = mics[i, 1] - Y
            dz = mics[i, 2] - z
            di = np.sqrt(dx * dx + dy * dy + dz * dz)
            r = offsets_us[i] - (di - d0) / c * 1e6
            sse += r * r
        k = int(np.argmin(sse))
        if sse.flat[k] < best:
            best = float(sse.flat[k])
            out = (iz, k // ny, k % ny)
    return out[0], out[1], out[2], best


# =============================================================================
# freefall -> impact scan
# =============================================================================

def _scan_impacts_py(t, mag, theta_ff, d_ff, theta_imp, max_gap):
    """Indices of impact peaks.

    A freefall episode is a maximal run of samples with ``mag < theta_ff``;
    its duration runs from its first sample to the first sample after it.
    A long-enough episode followed, within ``max_gap`` of its end, by a sample
    above ``theta_imp`` yields one peak: the maximum of that above-threshold
    run.
    """
    n = mag.shape[0]
    out = np.empty(n, dtype=np.int64)
    count = 0
    i = 0
    while i < n:
        if mag[i] >= theta_ff:
            i += 1
            continue
        start = i
        j = i
        while j < n and mag[j] < theta_ff:
            j += 1
        if j >= n:
            break
        if t[j] - t[start] >= d_ff:
            k = j
            found = -1
            while k < n and t[k] - t[j] <= max_gap:
                if mag[k] > theta_imp:
                    found = k
                    break
                k += 1
            if found >= 0:
                peak = found
                m = found
                while m < n and mag[m] > theta_imp:
                    if mag[m] > mag[peak]:
                        peak = m
                    m += 1
                out[count] = peak
                count += 1
                i = m
                continue
        i = j
    return out[:count]


_scan_impacts_jit = njit(cache=True)(_scan_impacts_py)


def scan_impacts_numba(t, mag, theta_ff, d_ff, theta_imp, max_gap):
    return _scan_impacts_jit(np.ascontiguousarray(t, dtype=np.float64),
                             np.ascontiguousarray(mag, dtype=np.float64),
                             float(theta_ff), float(d_ff), float(theta_imp), float(max_gap))


def scan_impacts_python(t, mag, theta_ff, d_ff, theta_imp, max_gap):
    return _scan_impacts_py(np.asarray(t, dtype=np.float64), np.asarray(mag, dtype=np.float64),
                            theta_ff, d_ff, theta_imp, max_gap)


if USE_NUMBA:
    grid_search = grid_search_numba
    scan_impacts = scan_impacts_numba
else:
    grid_search = grid_search_numpy
    scan_impacts = scan_impacts_python
