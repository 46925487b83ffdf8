"""Batched closed forms for small Hermitian matrices.

numpy's batched LAPACK wrappers carry a large per-matrix overhead for 2x2 and
3x3 blocks, which dominates a flow step on a six dimensional grid.
"""

import numpy as np


def det(a):
    """Real determinant of Hermitian matrices ``a[..., n, n]``."""
    a = np.asarray(a)
    n = a.shape[-1]
    if n == 1:
        return a[..., 0, 0].real.copy()
    if n == 2:
        return (a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]).real
    if n == 3:
        c0 = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
        c1 = a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0]
        c2 = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
        return (a[..., 0, 0] * c0 - a[..., 0, 1] * c1 + a[..., 0, 2] * c2).real
    return np.linalg.det(a).real


def leading_minors(a):
    """Leading principal minors ``[..., k]`` for k = 1..n."""
    n = a.shape[-1]
    return np.stack([det(a[..., :k, :k]) for k in range(1, n + 1)], axis=-1)


def is_positive(a):
    """Pointwise positive definiteness by Sylvester's criterion."""
    return np.all(leading_minors(a) > 0, axis=-1)


def eig_extremes(a):
    """Smallest and largest eigenvalue of Hermitian ``a[..., n, n]``."""
    a = np.asarray(a)
    n = a.shape[-1]
    if n == 1:
        v = a[..., 0, 0].real
        return v, v
    if n == 2:
        m = 0.5 * (a[..., 0, 0] + a[..., 1, 1]).real
        r = np.sqrt(0.25 * (a[..., 0, 0] - a[..., 1, 1]).real ** 2 + np.abs(a[..., 0, 1]) ** 2)
        return m - r, m + r
    if n == 3:
        # trigonometric solution of the characteristic cubic
        q = np.trace(a, axis1=-2, axis2=-1).real / 3
        off = np.abs(a[..., 0, 1]) ** 2 + np.abs(a[..., 0, 2]) ** 2 + np.abs(a[..., 1, 2]) ** 2
        d = np.stack([a[..., i, i].real - q for i in range(3)], axis=-1)
        p = np.sqrt((np.sum(d**2, axis=-1) + 2 * off) / 6)
        safe = np.where(p > 0, p, 1.0)
        b = (a - q[..., None, None] * np.eye(3)) / safe[..., None, None]
        r = np.clip(det(b) / 2, -1.0, 1.0)
        phi = np.arccos(r) / 3
        hi = q + 2 * p * np.cos(phi)
        lo = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
        return lo, hi
    w = np.linalg.eigvalsh(a)
    return w[..., 0], w[..., -1]


def det_parts(re, im):
    """Determinant of a Hermitian matrix field given as nested lists of real and imaginary parts."""
    n = len(re)
    if n == 1:
        return re[0][0]
    if n == 2:
        return re[0][0] * re[1][1] - re[0][1] ** 2 - im[0][1] ** 2
    if n == 3:
        a, b, c = re[0][0], re[1][1], re[2][2]
        xr, xi, yr, yi, zr, zi = re[0][1], im[0][1], re[0][2], im[0][2], re[1][2], im[1][2]
        # 2 Re(a01 a12 conj(a02))
        pr, pi = xr * zr - xi * zi, xr * zi + xi * zr
        return (a * b * c + 2 * (pr * yr + pi * yi)
                - a * (zr**2 + zi**2) - b * (yr**2 + yi**2) - c * (xr**2 + xi**2))
    return det(assemble(re, im))


def assemble(re, im):
    n = len(re)
    out = np.empty(np.shape(re[0][0]) + (n, n), complex)
    for k in range(n):
        for j in range(n):
            out[..., k, j] = re[k][j] if im[k][j] is None else re[k][j] + 1j * im[k][j]
    return out


def is_positive_parts(re, im):
    ok = re[0][0] > 0
    for k in range(2, len(re) + 1):
        ok &= det_parts([r[:k] for r in re[:k]], [i[:k] for i in im[:k]]) > 0
    return ok
