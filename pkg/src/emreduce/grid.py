"""Periodic 3D lattice, discrete operators, elliptic solver, norms, snapshots.

Conventions (metric diag(+1,-1,-1,-1), x-raising X^0 = X_0, X^i = -X_i):
every index raising in the package routes through these two constants so the
sign bookkeeping lives in exactly one place.

All stencils are second order: central first differences and the compact
7-point Laplacian, with periodic wraparound via np.roll.  First differences
commute with each other and with the Laplacian exactly (they are circulant),
which several reduction identities rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import LatticeMismatch, NonConvergence, NullSpace, NonFinite

# metric diag(+1,-1,-1,-1): raising a temporal index is +1, a spatial one -1
RAISE_TIME = 1.0
RAISE_SPACE = -1.0

EPS_FLOOR = 1e-300


@dataclass(frozen=True)
class Lattice:
    """Uniform periodic lattice; axis i has n[i] points spaced h[i]."""

    n1: int
    n2: int
    n3: int
    h1: float
    h2: float
    h3: float

    def __post_init__(self):
        for n in (self.n1, self.n2, self.n3):
            if n < 4:
                raise ValueError(f"lattice needs >= 4 points per axis, got {n}")
        for h in (self.h1, self.h2, self.h3):
            if h <= 0:
                raise ValueError(f"lattice spacing must be positive, got {h}")

    @property
    def shape(self) -> tuple:
        return (self.n1, self.n2, self.n3)

    @property
    def nsites(self) -> int:
        return self.n1 * self.n2 * self.n3

    @property
    def spacings(self) -> tuple:
        return (self.h1, self.h2, self.h3)

    @property
    def cell_volume(self) -> float:
        return self.h1 * self.h2 * self.h3

    def axes(self):
        """Coordinate arrays x1, x2, x3 broadcastable over the grid."""
        x1 = (np.arange(self.n1) * self.h1)[:, None, None]
        x2 = (np.arange(self.n2) * self.h2)[None, :, None]
        x3 = (np.arange(self.n3) * self.h3)[None, None, :]
        return x1, x2, x3

    def wavenumbers(self):
        """Angular wavenumber arrays along each axis, fft order."""
        k1 = 2 * np.pi * np.fft.fftfreq(self.n1, d=self.h1)
        k2 = 2 * np.pi * np.fft.fftfreq(self.n2, d=self.h2)
        k3 = 2 * np.pi * np.fft.fftfreq(self.n3, d=self.h3)
        return np.meshgrid(k1, k2, k3, indexing="ij")

    def laplacian_symbol(self):
        """Eigenvalues lam(k) >= 0 of -laplacian for the compact stencil."""
        k1, k2, k3 = self.wavenumbers()
        lam = (
            2.0 * (1.0 - np.cos(k1 * self.h1)) / self.h1**2
            + 2.0 * (1.0 - np.cos(k2 * self.h2)) / self.h2**2
            + 2.0 * (1.0 - np.cos(k3 * self.h3)) / self.h3**2
        )
        return lam

    def derivative_symbol(self, axis: int):
        """Fourier symbol i*sin(k h)/h of the central first difference."""
        ks = self.wavenumbers()[axis - 1]
        h = self.spacings[axis - 1]
        return 1j * np.sin(ks * h) / h


@dataclass
class GridField:
    """Complex scalar field sampled on a Lattice.

    Real physical fields keep is_real=True; the flag is a contract checked by
    require_real, not a storage optimization.
    """

    lattice: Lattice
    values: np.ndarray
    label: str = ""
    is_real: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.lattice.shape:
            raise ValueError(
                f"field shape {self.values.shape} != lattice shape {self.lattice.shape}"
            )

    def copy(self) -> "GridField":
        return GridField(self.lattice, self.values.copy(), self.label, self.is_real)

    def require_finite(self):
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise NonFinite(f"non-finite value in field '{self.label}'", site=bad.tolist())

    def require_real(self, tol: float = 1e-12):
        imax = float(np.max(np.abs(self.values.imag))) if self.values.size else 0.0
        if self.is_real and imax > tol:
            raise NonFinite(
                f"field '{self.label}' flagged real has imaginary part {imax:.3e}"
            )


def constant_field(lat: Lattice, value: complex, label: str = "") -> GridField:
    arr = np.full(lat.shape, value, dtype=np.complex128)
    return GridField(lat, arr, label, is_real=(np.imag(value) == 0.0))


# ---------------------------------------------------------------------------
# raw-array operators (hot path used by the engines)
# ---------------------------------------------------------------------------

def d_axis(values: np.ndarray, lat: Lattice, axis: int) -> np.ndarray:
    """Central first difference along axis in {1,2,3}, periodic."""
    ax = axis - 1
    h = lat.spacings[ax]
    return (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2.0 * h)


def lap(values: np.ndarray, lat: Lattice) -> np.ndarray:
    """Compact 7-point Laplacian, periodic."""
    out = np.zeros_like(values)
    for ax in range(3):
        h2 = lat.spacings[ax] ** 2
        out += (
            np.roll(values, -1, axis=ax) - 2.0 * values + np.roll(values, 1, axis=ax)
        ) / h2
    return out


def div(vec3, lat: Lattice) -> np.ndarray:
    """Divergence of a 3-component (upper-index) vector of arrays."""
    return d_axis(vec3[0], lat, 1) + d_axis(vec3[1], lat, 2) + d_axis(vec3[2], lat, 3)


def grad(values: np.ndarray, lat: Lattice):
    return [d_axis(values, lat, 1), d_axis(values, lat, 2), d_axis(values, lat, 3)]


def mean(values: np.ndarray) -> complex:
    return complex(np.mean(values))


# ---------------------------------------------------------------------------
# public GridField operations
# ---------------------------------------------------------------------------

def partial(f: GridField, axis: int) -> GridField:
    """Second-order central difference d/dx^axis with periodic wraparound."""
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    out = GridField(f.lattice, d_axis(f.values, f.lattice, axis), f"d{axis}({f.label})", f.is_real)
    return out


def laplacian(f: GridField) -> GridField:
    return GridField(f.lattice, lap(f.values, f.lattice), f"lap({f.label})", f.is_real)


def _check_same_lattice(f: GridField, g: GridField):
    if f.lattice != g.lattice:
        raise LatticeMismatch(
            "fields live on different lattices",
            a=f.lattice.shape, b=g.lattice.shape,
        )


def norms(f: GridField) -> dict:
    """Volume-weighted l2 norm and pointwise sup norm."""
    w = f.lattice.cell_volume
    a = np.abs(f.values)
    return {"l2": float(np.sqrt(w * np.sum(a**2))), "linf": float(np.max(a))}


def rel_diff(f: GridField, g: GridField) -> float:
    """||f-g||_2 / max(||g||_2, floor)."""
    _check_same_lattice(f, g)
    w = f.lattice.cell_volume
    num = np.sqrt(w * np.sum(np.abs(f.values - g.values) ** 2))
    den = np.sqrt(w * np.sum(np.abs(g.values) ** 2))
    return float(num / max(den, EPS_FLOOR))


def rel_diff_arrays(a: np.ndarray, b: np.ndarray, cell_volume: float = 1.0) -> float:
    num = np.sqrt(cell_volume * np.sum(np.abs(a - b) ** 2))
    den = np.sqrt(cell_volume * np.sum(np.abs(b) ** 2))
    return float(num / max(den, EPS_FLOOR))


# ---------------------------------------------------------------------------
# elliptic constraint solver: (-lap + V) u = rhs
# ---------------------------------------------------------------------------

def _fft_solve_uniform(lat: Lattice, v0: float, rhs: np.ndarray, mean_tol: float) -> np.ndarray:
    lam = lat.laplacian_symbol() + v0
    rhat = np.fft.fftn(rhs)
    if abs(v0) < 1e-14:
        # pure Neumann problem: solvable only for zero-mean rhs
        m = abs(rhat.flat[0]) / rhs.size
        scale = float(np.max(np.abs(rhs))) if rhs.size else 0.0
        if m > mean_tol * max(scale, 1.0):
            raise NullSpace(
                "V == 0 and rhs has nonzero lattice mean", rhs_mean=float(m)
            )
        lam = lam.copy()
        lam.flat[0] = 1.0
        uhat = rhat / lam
        uhat.flat[0] = 0.0
    else:
        uhat = rhat / lam
    return np.fft.ifftn(uhat)


def solve_helmholtz_arrays(
    V: np.ndarray,
    rhs: np.ndarray,
    lat: Lattice,
    tol: float = 1e-10,
    mean_tol: float = 1e-8,
) -> np.ndarray:
    """Solve (-laplacian + V) u = rhs on the periodic lattice.

    Uniform V is solved directly in Fourier space; non-uniform V falls back to
    conjugate gradients preconditioned with the Fourier-diagonal operator
    (-lap + mean(V))^-1.  Iteration cap is 10 * nsites.
    """
    V = np.asarray(V)
    vmin, vmax = float(np.min(V.real)), float(np.max(V.real))
    if np.max(np.abs(V.imag)) > 1e-12:
        raise ValueError("helmholtz potential V must be real")
    if vmin < 0:
        raise ValueError(f"helmholtz potential must be >= 0, min={vmin:.3e}")

    if vmax - vmin < 1e-13 * max(vmax, 1.0):
        return _fft_solve_uniform(lat, 0.5 * (vmin + vmax), rhs, mean_tol)

    vr = V.real
    lam_pc = lat.laplacian_symbol() + float(np.mean(vr))

    def apply_A(u):
        return -lap(u, lat) + vr * u

    def apply_M(r):
        return np.fft.ifftn(np.fft.fftn(r) / lam_pc)

    b = np.asarray(rhs, dtype=np.complex128)
    bnorm = np.sqrt(np.vdot(b, b).real)
    if bnorm == 0.0:
        return np.zeros_like(b)
    u = np.zeros_like(b)
    r = b.copy()
    z = apply_M(r)
    p = z.copy()
    rz = np.vdot(r, z)
    cap = 10 * lat.nsites
    for _ in range(cap):
        Ap = apply_A(p)
        alpha = rz / np.vdot(p, Ap)
        u += alpha * p
        r -= alpha * Ap
        rnorm = np.sqrt(np.vdot(r, r).real)
        if rnorm <= tol * bnorm:
            return u
        z = apply_M(r)
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergence(
        "helmholtz solve hit the iteration cap",
        residual=float(rnorm / bnorm), cap=cap,
    )


def solve_helmholtz(V: GridField, rhs: GridField, tol: float = 1e-10) -> GridField:
    _check_same_lattice(V, rhs)
    u = solve_helmholtz_arrays(V.values, rhs.values, V.lattice, tol=tol)
    return GridField(V.lattice, u, f"helmholtz({rhs.label})", rhs.is_real and V.is_real)


def solve_poisson_zero_mean(rhs: np.ndarray, lat: Lattice, mean_tol: float = 1e-8) -> np.ndarray:
    """-laplacian u = rhs with <u> = 0; rhs must have (near-)zero mean."""
    return _fft_solve_uniform(lat, 0.0, rhs, mean_tol)


def project_transverse(vec3, lat: Lattice):
    """Remove the discrete-gradient part of a 3-vector field (k=0 mode kept).

    Exact for the central-difference gradient: its Fourier symbol is
    i sin(k h)/h, so gradients are eliminated to machine precision.
    """
    s = [lat.derivative_symbol(1), lat.derivative_symbol(2), lat.derivative_symbol(3)]
    vhat = [np.fft.fftn(v) for v in vec3]
    s2 = sum(np.abs(si) ** 2 for si in s)
    s2safe = np.where(s2 == 0.0, 1.0, s2)
    proj = sum(np.conj(s[i]) * vhat[i] for i in range(3)) / s2safe
    out = []
    for i in range(3):
        keep = vhat[i] - s[i] * proj
        out.append(np.fft.ifftn(np.where(s2 == 0.0, vhat[i], keep)))
    return out


# ---------------------------------------------------------------------------
# snapshot format (.fld): JSON header line, then little-endian f64 (re, im)
# pairs in x-fastest order, one component after another
# ---------------------------------------------------------------------------

def write_fld(path, fields):
    """Write one or more same-lattice GridFields to a .fld snapshot."""
    fields = list(fields)
    lat = fields[0].lattice
    for f in fields:
        _check_same_lattice(f, fields[0])
    header = {
        "dims": [lat.n1, lat.n2, lat.n3],
        "spacings": [lat.h1, lat.h2, lat.h3],
        "label": fields[0].label,
        "components": len(fields),
        "component_labels": [f.label for f in fields],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for f in fields:
            flat = f.values.flatten(order="F")  # axis-1 (x) fastest
            pairs = np.empty((flat.size, 2), dtype="<f8")
            pairs[:, 0] = flat.real
            pairs[:, 1] = flat.imag
            fh.write(pairs.tobytes())


def read_fld(path):
    """Read a .fld snapshot back into a list of GridFields."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        n1, n2, n3 = header["dims"]
        h1, h2, h3 = header["spacings"]
        lat = Lattice(n1, n2, n3, h1, h2, h3)
        ncomp = header["components"]
        labels = header.get("component_labels", [""] * ncomp)
        out = []
        for c in range(ncomp):
            raw = np.frombuffer(fh.read(lat.nsites * 16), dtype="<f8")
            vals = (raw[0::2] + 1j * raw[1::2]).reshape(lat.shape, order="F")
            out.append(GridField(lat, vals.copy(), labels[c]))
    return out
