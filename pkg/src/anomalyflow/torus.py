"""Fields on the flat complex torus C^n / Z^{2n} with spectral derivatives.

Grid axes are ordered (x1, y1, ..., xn, yn) with z^j = x^j + i y^j. A field is
a numpy array whose leading 2n axes are the grid axes; any trailing axes hold
components (a metric field has shape ``grid.shape + (n, n)``).
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from . import linalg
from .forms import PQForm, wedge

MAGIC = b"BFLW"
VERSION = 1
FLAG_SHAPE = 1
FLAG_PERIODS = 2


class NonFiniteError(ValueError):
    """A field handed to a derivative contains NaN or inf."""


def _workers():
    v = os.environ.get("BFLW_THREADS")
    return int(v) if v else None


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on the torus.

    ``shape`` overrides the per-axis sample counts, which allows fields that
    depend on only some coordinates (an axis of length 1 is constant along it).
    """

    n: int
    m: int = 8
    periods: tuple = None
    shape: tuple = None
    dealias: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.shape is None:
            if self.m < 4 or self.m % 2:
                raise ValueError("m must be even and at least 4")
            object.__setattr__(self, "shape", (self.m,) * (2 * self.n))
        else:
            shape = tuple(int(s) for s in self.shape)
            if len(shape) != 2 * self.n:
                raise ValueError("shape needs one entry per real axis")
            if any(s != 1 and (s < 4 or s % 2) for s in shape):
                raise ValueError("axis sizes must be 1 or even and at least 4")
            object.__setattr__(self, "shape", shape)
        if self.periods is None:
            object.__setattr__(self, "periods", (1.0,) * (2 * self.n))
        else:
            p = tuple(float(x) for x in np.broadcast_to(self.periods, (2 * self.n,)))
            object.__setattr__(self, "periods", p)

    @property
    def axes(self):
        return tuple(range(2 * self.n))

    @property
    def size(self):
        return math.prod(self.shape)

    @property
    def volume(self):
        return math.prod(self.periods)

    @property
    def spacing(self):
        return tuple(L / s for L, s in zip(self.periods, self.shape))

    @property
    def h_min(self):
        return min(h for h, s in zip(self.spacing, self.shape) if s > 1)

    @property
    def isotropic(self):
        return all(s == self.m for s in self.shape)

    def coords(self):
        """Coordinate arrays ``(x1, y1, ..., xn, yn)`` broadcastable to the grid."""
        out = []
        for a, (L, s) in enumerate(zip(self.periods, self.shape)):
            shp = [1] * (2 * self.n)
            shp[a] = s
            out.append((np.arange(s) * (L / s)).reshape(shp))
        return out

    def _wavenumbers(self, a, first):
        s, L = self.shape[a], self.periods[a]
        k = 2 * np.pi * sfft.fftfreq(s, d=L / s)
        if first and s % 2 == 0:
            k[s // 2] = 0.0
        shp = [1] * (2 * self.n)
        shp[a] = s
        return k.reshape(shp)

    @cached_property
    def _symbols(self):
        hol, ahol = [], []
        for j in range(self.n):
            kx = self._wavenumbers(2 * j, True)
            ky = self._wavenumbers(2 * j + 1, True)
            hol.append(0.5 * (1j * kx + ky))
            ahol.append(0.5 * (1j * kx - ky))
        return hol, ahol

    def symbol(self, j, bar=False):
        """Fourier multiplier of ``d/dz^j`` (or ``d/dzbar^j``), grid-broadcastable."""
        hol, ahol = self._symbols
        return ahol[j] if bar else hol[j]

    @cached_property
    def dealias_mask(self):
        mask = np.ones(self.shape, bool)
        for a, s in enumerate(self.shape):
            shp = [1] * (2 * self.n)
            shp[a] = s
            mask &= (np.abs(sfft.fftfreq(s)) * s <= s / 3).reshape(shp)
        return mask

    # transforms ---------------------------------------------------------

    def _check(self, u):
        u = np.asarray(u)
        lead = u.shape[: 2 * self.n]
        if len(lead) < 2 * self.n or any(a not in (1, b) for a, b in zip(lead, self.shape)):
            raise ValueError(f"field shape {u.shape} does not start with grid shape {self.shape}")
        if lead != self.shape:
            u = np.broadcast_to(u, self.shape + u.shape[2 * self.n:])
        if not np.all(np.isfinite(u)):
            raise NonFiniteError("field contains non-finite values")
        return u

    def fft(self, u):
        return sfft.fftn(self._check(u), axes=self.axes, workers=_workers())

    def ifft(self, uhat):
        return sfft.ifftn(uhat, axes=self.axes, workers=_workers())

    def _bcast(self, sym, ndim):
        return sym.reshape(sym.shape + (1,) * (ndim - 2 * self.n))

    def apply_symbol(self, uhat, sym):
        if self.dealias:
            sym = sym * self.dealias_mask
        return self.ifft(uhat * self._bcast(sym, uhat.ndim))

    # derivatives ---------------------------------------------------------

    def d_holo(self, u, j):
        """``d u / dz^j`` with ``d/dz = (d/dx - i d/dy)/2``."""
        return self.apply_symbol(self.fft(u), self.symbol(j))

    def d_antiholo(self, u, j):
        """``d u / dzbar^j`` with ``d/dzbar = (d/dx + i d/dy)/2``."""
        return self.apply_symbol(self.fft(u), self.symbol(j, bar=True))

    def ddbar(self, u, j, k):
        """``d/dz^j d/dzbar^k u``."""
        return self.apply_symbol(self.fft(u), self.symbol(j) * self.symbol(k, bar=True))

    @cached_property
    def _real_wavenumbers(self):
        # wavenumbers on the rfftn layout (last axis halved), Nyquist removed
        out = []
        last = 2 * self.n - 1
        for a, (s, L) in enumerate(zip(self.shape, self.periods)):
            k = 2 * np.pi * (sfft.rfftfreq(s, d=L / s) if a == last else sfft.fftfreq(s, d=L / s))
            if s % 2 == 0:
                k[s // 2] = 0.0
            shp = [1] * (2 * self.n)
            shp[a] = k.size
            out.append(k.reshape(shp))
        return out

    def hessian_parts(self, u):
        """Real and imaginary parts of ``u_{kbar j} = d_j d_kbar u`` for real ``u``.

        Returns nested lists ``re[k][j]``, ``im[k][j]`` of real arrays (``im`` is
        ``None`` on the diagonal). Uses real transforms only.
        """
        n = self.n
        u = self._check(u)
        w = _workers()
        uhat = sfft.rfftn(u, axes=self.axes, workers=w)
        k = self._real_wavenumbers
        re = [[None] * n for _ in range(n)]
        im = [[None] * n for _ in range(n)]

        def back(sym):
            return sfft.irfftn(uhat * sym, s=self.shape, axes=self.axes, workers=w)

        for j in range(n):
            kx, ky = k[2 * j], k[2 * j + 1]
            re[j][j] = back(-0.25 * (kx * kx + ky * ky))
            for kk in range(j + 1, n):
                cx, cy = k[2 * kk], k[2 * kk + 1]
                # entry [kk, j]: d_j d_kkbar
                r = back(-0.25 * (kx * cx + ky * cy))
                i = back(0.25 * (ky * cx - kx * cy))
                re[kk][j] = re[j][kk] = r
                im[kk][j], im[j][kk] = i, -i
        return re, im

    def i_ddbar_scalar(self, u, uhat=None):
        """Hermitian matrix field ``u_{kbar j} = d_j d_kbar u`` of a real function, shape ``grid + (n, n)``."""
        n = self.n
        if uhat is None and not np.iscomplexobj(u):
            return linalg.assemble(*self.hessian_parts(u))
        if uhat is None:
            uhat = self.fft(u)
        out = np.empty(self.shape + (n, n), complex)
        for j in range(n):
            for k in range(j, n):
                v = self.apply_symbol(uhat, self.symbol(j) * self.symbol(k, bar=True))
                out[..., k, j] = v
                if k != j:
                    out[..., j, k] = np.conj(v)
                else:
                    out[..., k, j] = v.real
        return out

    def gradient(self, u):
        """``[..., j] = d_j u``."""
        uhat = self.fft(u)
        return np.stack([self.apply_symbol(uhat, self.symbol(j)) for j in range(self.n)], axis=-1)

    def laplacian(self, u, ginv):
        """``g^{j kbar} d_j d_kbar u`` for a pointwise inverse metric ``ginv[..., j, k]``."""
        return np.einsum("...jk,...kj->...", ginv, self.i_ddbar_scalar(u))

    # quadrature ----------------------------------------------------------

    def mean(self, u):
        return np.mean(np.asarray(u), axis=self.axes)

    def integrate(self, u, weight=None):
        """Trapezoidal integral against Lebesgue measure, exact for trigonometric polynomials."""
        u = np.asarray(u)
        if weight is not None:
            u = u * np.asarray(weight)
        return self.mean(u) * self.volume

    def smooth_random(self, rng, modes=2, amplitude=1.0):
        """Random real trigonometric polynomial with frequencies up to ``modes`` per axis."""
        mask = np.ones(self.shape, bool)
        for a, s in enumerate(self.shape):
            shp = [1] * (2 * self.n)
            shp[a] = s
            mask &= (np.abs(sfft.fftfreq(s) * s) <= modes).reshape(shp)
        uhat = np.where(mask, rng.standard_normal(self.shape) + 1j * rng.standard_normal(self.shape), 0)
        u = self.ifft(uhat).real
        return amplitude * u / max(np.max(np.abs(u)), 1e-300)


def zero_mean(u, grid: TorusGrid):
    return u - grid.mean(u)


# form fields ---------------------------------------------------------------

def _dz(n, j, bar=False):
    c = np.zeros((n, 1) if bar else (1, n), complex)
    if bar:
        c[j, 0] = 1.0
        return PQForm(0, 1, n, c)
    c[0, j] = 1.0
    return PQForm(1, 0, n, c)


def d_form(grid: TorusGrid, form: PQForm, bar=False) -> PQForm:
    """``del form = sum_j dz^j ^ d_j form`` (or the dbar analogue) on a form field."""
    n = grid.n
    chat = grid.fft(form.coeffs)
    out = None
    for j in range(n):
        if grid.shape[2 * j] == 1 and grid.shape[2 * j + 1] == 1:
            continue
        deriv = PQForm(form.p, form.q, n, grid.apply_symbol(chat, grid.symbol(j, bar)))
        term = wedge(_dz(n, j, bar), deriv)
        out = term if out is None else out + term
    if out is None:
        out = PQForm.zeros(form.p + (not bar), form.q + bar, n, grid.shape)
    return out


def i_ddbar_form(grid: TorusGrid, form: PQForm) -> PQForm:
    """``i del dbar form`` on a form field."""
    return d_form(grid, d_form(grid, form, bar=True)) * 1j


# snapshots -----------------------------------------------------------------

def write_snapshot(path, grid: TorusGrid, fields: dict):
    """Write named fields in the BFLW binary format.

    Header: magic, version, n, m, field count, flags as little-endian u32 then
    padding to 32 bytes. Flag 1 appends the 2n axis sizes, flag 2 the 2n
    periods (f64). Each record is a length-prefixed UTF-8 name, a u32 real
    flag, a u32 component rank with that many u32 sizes, then complex128
    values (real/imag interleaved), row-major over the grid then components.
    """
    flags = 0
    if not grid.isotropic:
        flags |= FLAG_SHAPE
    if any(p != 1.0 for p in grid.periods):
        flags |= FLAG_PERIODS
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<5I", VERSION, grid.n, grid.m, len(fields), flags) + bytes(8))
        if flags & FLAG_SHAPE:
            fh.write(struct.pack(f"<{2 * grid.n}I", *grid.shape))
        if flags & FLAG_PERIODS:
            fh.write(struct.pack(f"<{2 * grid.n}d", *grid.periods))
        for name, arr in fields.items():
            arr = np.asarray(arr)
            if arr.shape[: 2 * grid.n] != grid.shape:
                raise ValueError(f"field {name!r} does not match the grid")
            comp = arr.shape[2 * grid.n:]
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<II", int(not np.iscomplexobj(arr)), len(comp)))
            if comp:
                fh.write(struct.pack(f"<{len(comp)}I", *comp))
            fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(grid, fields)``."""
    with open(path, "rb") as fh:
        head = fh.read(32)
        if head[:4] != MAGIC:
            raise ValueError("not a BFLW snapshot")
        version, n, m, count, flags = struct.unpack("<5I", head[4:24])
        if version != VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        shape = periods = None
        if flags & FLAG_SHAPE:
            shape = struct.unpack(f"<{2 * n}I", fh.read(8 * n))
        if flags & FLAG_PERIODS:
            periods = struct.unpack(f"<{2 * n}d", fh.read(16 * n))
        grid = TorusGrid(n, m, periods=periods, shape=shape)
        fields = {}
        for _ in range(count):
            (ln,) = struct.unpack("<I", fh.read(4))
            name = fh.read(ln).decode()
            is_real, rank = struct.unpack("<II", fh.read(8))
            comp = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            full = grid.shape + tuple(comp)
            data = np.frombuffer(fh.read(16 * math.prod(full)), dtype="<c16").reshape(full)
            fields[name] = data.real.copy() if is_real else data.astype(complex)
        return grid, fields
