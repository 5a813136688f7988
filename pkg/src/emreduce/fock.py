"""Carleman embedding of polynomial mode dynamics into a truncated Fock space.

A k-mode polynomial system dxi/dt = F(xi) is mapped to the linear evolution
d|s>/dt = M|s> with M = sum_i adag_i F_i(a) on the total-occupation-truncated
bosonic Fock space.  Coherent states carry trajectories in; the ratio of
one-particle to vacuum amplitudes reads them back out.  The evolution is not
unitary, so the norm is monitored rather than renormalized, and operator
entries that would raise the total occupation past the cutoff are dropped
into an explicit leak operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb, factorial

import numpy as np
import scipy.sparse as sparse

from .errors import (
    DegreeVsCutoff,
    Instability,
    TruncationTooSevere,
    VacuumDepleted,
)


@dataclass(frozen=True)
class ModeSystem:
    """Polynomial vector field: terms[i] lists (coeff, exponents) for F_i."""

    k: int
    terms: tuple  # tuple over components; each a tuple of (complex, tuple[int])

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one mode")
        if len(self.terms) != self.k:
            raise ValueError("one term list per mode required")
        for comp in self.terms:
            for coeff, expo in comp:
                if len(expo) != self.k or any(e < 0 for e in expo):
                    raise ValueError(f"bad monomial exponent vector {expo}")

    @property
    def degree(self) -> int:
        degs = [sum(expo) for comp in self.terms for _, expo in comp]
        return max(degs, default=0)

    def apply(self, xi: np.ndarray) -> np.ndarray:
        """Evaluate F(xi) directly (the classical vector field)."""
        out = np.zeros(self.k, dtype=np.complex128)
        for i, comp in enumerate(self.terms):
            for coeff, expo in comp:
                out[i] += coeff * np.prod(xi**np.array(expo))
        return out


@dataclass(frozen=True)
class FockSpace:
    """All occupation vectors with total occupation <= cutoff, graded-lex order."""

    k: int
    cutoff: int

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")

    @property
    def dim(self) -> int:
        return comb(self.cutoff + self.k, self.k)

    def basis(self) -> np.ndarray:
        states = []
        for total in range(self.cutoff + 1):
            level = []
            for bars in combinations_with_replacement(range(self.k), total):
                n = [0] * self.k
                for b in bars:
                    n[b] += 1
                level.append(tuple(n))
            states.extend(sorted(level, reverse=True))
        return np.array(states, dtype=np.int64).reshape(len(states), self.k)

    def index(self) -> dict:
        return {tuple(n): i for i, n in enumerate(self.basis())}


@dataclass
class FockState:
    space: FockSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (self.space.dim,):
            raise ValueError("amplitude vector does not match basis dimension")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self):
        return FockState(self.space, self.amplitudes.copy())


@dataclass
class CarlemanOperator:
    space: FockSpace
    matrix: sparse.csr_matrix        # truncated generator M
    leak: sparse.csr_matrix          # amplitude flow into dropped states
    dropped_weight: float            # Frobenius weight of dropped entries

    def apply(self, s: FockState) -> FockState:
        return FockState(s.space, self.matrix @ s.amplitudes)

    def leak_rate(self, s: FockState) -> float:
        """Norm of the amplitude current into states above the cutoff."""
        return float(np.linalg.norm(self.leak @ s.amplitudes))

    def norm_estimate(self, iters: int = 30, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        v = rng.normal(size=self.space.dim) + 1j * rng.normal(size=self.space.dim)
        v /= np.linalg.norm(v)
        a = self.matrix
        ah = a.conjugate().transpose()
        est = 0.0
        for _ in range(iters):
            w = ah @ (a @ v)
            est = np.sqrt(np.linalg.norm(w))
            nv = np.linalg.norm(w)
            if nv == 0:
                return 0.0
            v = w / nv
        return float(est)


# ---------------------------------------------------------------------------
# ladder operators
# ---------------------------------------------------------------------------

def apply_annihilate(i: int, s: FockState) -> FockState:
    basis = s.space.basis()
    idx = s.space.index()
    out = np.zeros_like(s.amplitudes)
    for row, n in enumerate(basis):
        if n[i] >= 1:
            m = n.copy()
            m[i] -= 1
            out[idx[tuple(m)]] += np.sqrt(n[i]) * s.amplitudes[row]
    return FockState(s.space, out)


def apply_create(i: int, s: FockState) -> FockState:
    basis = s.space.basis()
    idx = s.space.index()
    out = np.zeros_like(s.amplitudes)
    for row, n in enumerate(basis):
        if int(np.sum(n)) + 1 <= s.space.cutoff:
            m = n.copy()
            m[i] += 1
            out[idx[tuple(m)]] += np.sqrt(n[i] + 1) * s.amplitudes[row]
    return FockState(s.space, out)


# ---------------------------------------------------------------------------
# coherent states and readout
# ---------------------------------------------------------------------------

def coherent_tail(xi, cutoff: int) -> float:
    """Occupation weight beyond the cutoff: P[Poisson(|xi|^2) > N]."""
    r = float(np.sum(np.abs(np.asarray(xi)) ** 2))
    acc = 0.0
    term = np.exp(-r)
    for m in range(cutoff + 1):
        acc += term
        term *= r / (m + 1)
    return max(0.0, 1.0 - acc)


def coherent_state(xi, fs: FockSpace, tail_tol: float = 1e-12) -> FockState:
    """Truncated coherent state exp(-|xi|^2/2) prod xi^n / sqrt(n!)."""
    xi = np.asarray(xi, dtype=np.complex128)
    if xi.shape != (fs.k,):
        raise ValueError(f"need {fs.k} mode amplitudes")
    tail = coherent_tail(xi, fs.cutoff)
    if tail > tail_tol:
        need = fs.cutoff
        while coherent_tail(xi, need) > tail_tol and need < 10_000:
            need += 1
        raise TruncationTooSevere(
            f"coherent tail {tail:.3e} exceeds tolerance {tail_tol:.1e}",
            required_cutoff=need,
        )
    basis = fs.basis()
    pref = np.exp(-0.5 * np.sum(np.abs(xi) ** 2))
    amps = np.empty(fs.dim, dtype=np.complex128)
    for row, n in enumerate(basis):
        term = pref
        for j in range(fs.k):
            term = term * xi[j] ** n[j] / np.sqrt(factorial(int(n[j])))
        amps[row] = term
    return FockState(fs, amps)


def readout(s: FockState, eps_vac: float = 1e-12) -> np.ndarray:
    """Mode amplitudes from one-particle/vacuum amplitude ratios."""
    idx = s.space.index()
    vac = s.amplitudes[idx[tuple([0] * s.space.k)]]
    if abs(vac) < eps_vac:
        raise VacuumDepleted(f"vacuum amplitude {abs(vac):.3e} below {eps_vac:.1e}")
    out = np.empty(s.space.k, dtype=np.complex128)
    for j in range(s.space.k):
        e = [0] * s.space.k
        e[j] = 1
        out[j] = s.amplitudes[idx[tuple(e)]] / vac
    return out


# ---------------------------------------------------------------------------
# generator construction and evolution
# ---------------------------------------------------------------------------

def carleman_hamiltonian(ms: ModeSystem, fs: FockSpace) -> CarlemanOperator:
    """M = sum_i adag_i F_i(a) on the truncated basis.

    Monomials substitute annihilators for mode variables literally; entries
    whose target exceeds the cutoff go into the leak operator instead of M.
    """
    if ms.k != fs.k:
        raise ValueError("mode count mismatch")
    if ms.degree + 1 > fs.cutoff:
        raise DegreeVsCutoff(
            f"cutoff {fs.cutoff} too small for polynomial degree {ms.degree}",
            required=ms.degree + 1,
        )
    basis = fs.basis()
    idx = fs.index()
    rows, cols, vals = [], [], []
    lrows, lcols, lvals = [], [], []
    leak_index = {}
    for col, n in enumerate(basis):
        for i, comp in enumerate(ms.terms):
            for coeff, expo in comp:
                # annihilators: need n_j >= expo_j
                if any(n[j] < expo[j] for j in range(fs.k)):
                    continue
                amp = complex(coeff)
                m = n.copy()
                for j in range(fs.k):
                    for _ in range(expo[j]):
                        amp *= np.sqrt(m[j])
                        m[j] -= 1
                amp *= np.sqrt(m[i] + 1)
                m[i] += 1
                key = tuple(m)
                if int(np.sum(m)) <= fs.cutoff:
                    rows.append(idx[key])
                    cols.append(col)
                    vals.append(amp)
                else:
                    lrow = leak_index.setdefault(key, len(leak_index))
                    lrows.append(lrow)
                    lcols.append(col)
                    lvals.append(amp)
    mat = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(fs.dim, fs.dim), dtype=np.complex128
    )
    leak = sparse.csr_matrix(
        (lvals, (lrows, lcols)), shape=(max(len(leak_index), 1), fs.dim),
        dtype=np.complex128,
    )
    dropped = float(np.sqrt(np.sum(np.abs(np.asarray(lvals)) ** 2))) if lvals else 0.0
    return CarlemanOperator(fs, mat, leak, dropped)


@dataclass
class FockTrajectory:
    times: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    leaks: list = field(default_factory=list)
    readouts: list = field(default_factory=list)   # None where vacuum depleted
    eigen_errors: list = field(default_factory=list)  # ||(a_i - xi_i)|s>|| / ||s||
    final: FockState = None


def evolve_fock(
    s: FockState,
    M: CarlemanOperator,
    dt: float,
    steps: int,
    cadence: int = 1,
    norm_growth_bound: float = 100.0,
    stability_check: bool = True,
) -> FockTrajectory:
    """RK4 integration of d|s>/dt = M|s> with norm and leak diagnostics."""
    if stability_check:
        mnorm = M.norm_estimate()
        if dt * mnorm > 2.5:
            raise Instability(
                f"dt * ||M|| = {dt * mnorm:.2f} outside the RK4 stability region",
                norm_estimate=mnorm,
            )
    traj = FockTrajectory()
    y = s.amplitudes.copy()
    n0 = max(np.linalg.norm(y), 1e-300)
    mat = M.matrix

    def sample(t):
        st = FockState(s.space, y)
        traj.times.append(t)
        traj.norms.append(float(np.linalg.norm(y)))
        traj.leaks.append(M.leak_rate(st))
        try:
            xi = readout(st)
            traj.readouts.append(xi)
            nrm = max(float(np.linalg.norm(y)), 1e-300)
            err = max(
                float(np.linalg.norm(
                    apply_annihilate(i, st).amplitudes - xi[i] * st.amplitudes
                )) / nrm
                for i in range(s.space.k)
            )
            traj.eigen_errors.append(err)
        except VacuumDepleted:
            traj.readouts.append(None)
            traj.eigen_errors.append(float("nan"))

    sample(0.0)
    for step in range(1, steps + 1):
        k1 = mat @ y
        k2 = mat @ (y + 0.5 * dt * k1)
        k3 = mat @ (y + 0.5 * dt * k2)
        k4 = mat @ (y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > norm_growth_bound * n0:
            raise Instability(
                "state norm grew beyond the configured bound",
                step=step, norm=float(np.linalg.norm(y)),
            )
        if step % cadence == 0 or step == steps:
            sample(step * dt)
    traj.final = FockState(s.space, y)
    return traj


def weak_superposition(xi, psi, a: complex, b: complex, fs: FockSpace,
                       tail_tol: float = 1e-12) -> dict:
    """Embedded combination a*xi + b*psi versus the Fock-space combination.

    linear_combo subtracts (a+b-1) vacuum embeddings so both sides agree at
    zeroth order in the field amplitudes; the deviation is the honest
    superposition defect, quadratic in weak fields.
    """
    xi = np.asarray(xi, dtype=np.complex128)
    psi = np.asarray(psi, dtype=np.complex128)
    embedded = coherent_state(a * xi + b * psi, fs, tail_tol)
    vac = coherent_state(np.zeros(fs.k), fs, tail_tol)
    combo = (
        a * coherent_state(xi, fs, tail_tol).amplitudes
        + b * coherent_state(psi, fs, tail_tol).amplitudes
        - (a + b - 1.0) * vac.amplitudes
    )
    dev = float(np.linalg.norm(embedded.amplitudes - combo))
    return {
        "embedded": embedded,
        "linear_combo": FockState(fs, combo),
        "deviation": dev,
    }
