"""Scalar electrodynamics in unitary gauge on the periodic lattice.

Two engines share one discretization:

* the coupled oracle evolves (phi, phi_dot, B^i, Bdot^i) with B^0 re-solved
  from the Gauss constraint at every evaluation and Bdot^0 obtained from
  current conservation;
* the field-only engine evolves (B^mu, Bdot^mu) alone, reconstructing the
  matter density Phi = phi^2 and its time derivatives from B-data and closing
  with algebraic formulas for Bddot^mu.

Storage is contravariant (upper-index) components; lowering flips the sign of
spatial components only.

Periodic boxes force total charge to vanish, so the mu=0 Maxwell equation
carries a uniform compensating background charge density rho_bg (a conserved
scenario constant, zero on an infinite domain).  It enters the constraint
solve and the Phi reconstruction and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid
from .errors import PreconditionViolated, SingularB0, SingularPhi
from .grid import Lattice, d_axis, div, lap
from .integrate import EvolutionProblem, evolve


@dataclass(frozen=True)
class ScalarParams:
    e: float = 1.0
    m: float = 1.0
    rho_bg: float = 0.0
    eps_b0: float = 1e-6
    eps_phi: float = 1e-6

    def __post_init__(self):
        if self.e == 0.0:
            raise ValueError("charge e must be nonzero (Phi reconstruction divides by e^2)")
        if self.m < 0.0:
            raise ValueError("mass m must be >= 0")


@dataclass
class ScalarCoupledState:
    lattice: Lattice
    phi: np.ndarray        # real
    phi_dot: np.ndarray
    b_sp: np.ndarray       # (3, n1, n2, n3) upper-index B^i
    b_sp_dot: np.ndarray

    def copy(self):
        return ScalarCoupledState(
            self.lattice, self.phi.copy(), self.phi_dot.copy(),
            self.b_sp.copy(), self.b_sp_dot.copy(),
        )


@dataclass
class ScalarFieldOnlyState:
    lattice: Lattice
    b: np.ndarray      # (4, n1, n2, n3) upper-index B^mu
    b_dot: np.ndarray

    def copy(self):
        return ScalarFieldOnlyState(self.lattice, self.b.copy(), self.b_dot.copy())


# ---------------------------------------------------------------------------
# guards
# ---------------------------------------------------------------------------

def _check_b0(b0: np.ndarray, eps: float):
    a = np.abs(b0)
    imin = np.unravel_index(np.argmin(a), a.shape)
    if a[imin] < eps:
        raise SingularB0(
            f"|B0| = {a[imin]:.3e} below guard {eps:.1e}",
            site=[int(i) for i in imin], value=float(np.real(b0[imin])),
        )


def _check_phi(phi: np.ndarray, eps: float):
    p = np.real(phi)
    imin = np.unravel_index(np.argmin(p), p.shape)
    if p[imin] < eps:
        raise SingularPhi(
            f"reconstructed Phi = {p[imin]:.3e} below guard {eps:.1e}",
            site=[int(i) for i in imin], value=float(p[imin]),
        )


# ---------------------------------------------------------------------------
# coupled oracle
# ---------------------------------------------------------------------------

def solve_constraint_b0(phi, b_sp_dot, lat: Lattice, p: ScalarParams, tol=1e-12):
    """Gauss constraint: (-lap + 2 e^2 phi^2) B^0 = div(Bdot) + rho_bg."""
    V = 2.0 * p.e**2 * phi**2
    rhs = div(b_sp_dot, lat) + p.rho_bg
    return np.real(grid.solve_helmholtz_arrays(V, rhs, lat, tol=tol))


def b0_dot_from_current(phi, phi_dot, b_sp, b0, lat: Lattice, p: ScalarParams):
    """Current conservation (B^mu phi^2)_{,mu} = 0 solved for Bdot^0."""
    phi2 = phi**2
    if float(np.max(phi2)) < p.eps_phi:
        # matter vacuum: no current anywhere, nothing to conserve
        return np.zeros_like(phi)
    _check_phi(phi2, p.eps_phi)
    num = (
        2.0 * b0 * phi * phi_dot
        + div(b_sp, lat) * phi2
        + sum(b_sp[i] * d_axis(phi2, lat, i + 1) for i in range(3))
    )
    return -num / phi2


def scalar_coupled_rhs(s: ScalarCoupledState, p: ScalarParams, solver_tol=1e-12):
    """Time derivative of the oracle state; returns (d_state, b0, b0_dot)."""
    lat = s.lattice
    b0 = solve_constraint_b0(s.phi, s.b_sp_dot, lat, p, tol=solver_tol)
    b0_dot = b0_dot_from_current(s.phi, s.phi_dot, s.b_sp, b0, lat, p)

    bmu_bmu = b0**2 - sum(s.b_sp[i] ** 2 for i in range(3))
    phi_ddot = lap(s.phi, lat) + (p.e**2 * bmu_bmu - p.m**2) * s.phi

    div_b = div(s.b_sp, lat)
    phi2 = s.phi**2
    b_sp_ddot = np.empty_like(s.b_sp)
    for i in range(3):
        b_sp_ddot[i] = (
            lap(s.b_sp[i], lat)
            - d_axis(b0_dot + div_b, lat, i + 1)
            - 2.0 * p.e**2 * s.b_sp[i] * phi2
        )
    ds = ScalarCoupledState(lat, s.phi_dot.copy(), phi_ddot, s.b_sp_dot.copy(), b_sp_ddot)
    return ds, b0, b0_dot


def gauss_residual(s: ScalarCoupledState, b0, lat: Lattice, p: ScalarParams):
    """Pointwise residual of the mu=0 Maxwell equation (should sit at solver tol)."""
    return -lap(b0, lat) - div(s.b_sp_dot, lat) + 2.0 * p.e**2 * b0 * s.phi**2 - p.rho_bg


# ---------------------------------------------------------------------------
# field-only closure
# ---------------------------------------------------------------------------

def _gauss_numerator(b, b_dot, lat: Lattice, p: ScalarParams):
    """B_0^{,i}_{,i} - B^i_{,i0} - rho_bg = -lap(B^0) - div(Bdot) - rho_bg."""
    return -lap(b[0], lat) - div(b_dot[1:], lat) - p.rho_bg


def phi_from_gauss(s: ScalarFieldOnlyState, p: ScalarParams):
    """Reconstruct Phi = phi^2 from the mu=0 Maxwell equation."""
    lat = s.lattice
    _check_b0(s.b[0], p.eps_b0)
    phi_rec = _gauss_numerator(s.b, s.b_dot, lat, p) / (-2.0 * p.e**2 * s.b[0])
    return phi_rec


def b_ddot_spatial(s: ScalarFieldOnlyState, p: ScalarParams, _flip_sign=False):
    """Bddot^i from the spatial Maxwell equations with Phi eliminated.

    _flip_sign is the mutation fixture: it flips the sign of the spatial
    second-derivative term and exists only so the verification suite can
    prove the oracle comparison is sensitive to sign errors.
    """
    lat = s.lattice
    _check_b0(s.b[0], p.eps_b0)
    num = _gauss_numerator(s.b, s.b_dot, lat, p)
    div_b = div(s.b[1:], lat)
    sign = -1.0 if _flip_sign else 1.0
    out = np.empty_like(s.b[1:])
    for i in range(3):
        grad_term = d_axis(s.b_dot[0] + div_b, lat, i + 1)
        out[i] = sign * lap(s.b[i + 1], lat) - grad_term + (s.b[i + 1] / s.b[0]) * num
    return out


def phi_dot_from_current(s: ScalarFieldOnlyState, phi_rec, p: ScalarParams):
    """Phidot from current conservation, expanded form."""
    lat = s.lattice
    _check_b0(s.b[0], p.eps_b0)
    bmu_div = s.b_dot[0] + div(s.b[1:], lat)
    adv = sum(s.b[i + 1] * d_axis(phi_rec, lat, i + 1) for i in range(3))
    return -(bmu_div * phi_rec + adv) / s.b[0]


def phi_ddot_from_wave(s: ScalarFieldOnlyState, phi_rec, phi_dot_rec, p: ScalarParams):
    """Phiddot from the wave equation for Phi (the squared-field form)."""
    lat = s.lattice
    _check_phi(phi_rec, p.eps_phi)
    grad_sq = sum(d_axis(phi_rec, lat, i + 1) ** 2 for i in range(3))
    bmu_bmu = s.b[0] ** 2 - sum(s.b[i + 1] ** 2 for i in range(3))
    return (
        lap(phi_rec, lat)
        + 0.5 * (phi_dot_rec**2 - grad_sq) / phi_rec
        + 2.0 * (p.e**2 * bmu_bmu - p.m**2) * phi_rec
    )


def b_ddot_temporal(s: ScalarFieldOnlyState, p: ScalarParams,
                    phi_rec=None, phi_dot_rec=None, phi_ddot_rec=None):
    """Bddot^0 from the differentiated current-conservation relation."""
    lat = s.lattice
    if phi_rec is None:
        phi_rec = phi_from_gauss(s, p)
    _check_phi(phi_rec, p.eps_phi)
    if phi_dot_rec is None:
        phi_dot_rec = phi_dot_from_current(s, phi_rec, p)
    if phi_ddot_rec is None:
        phi_ddot_rec = phi_ddot_from_wave(s, phi_rec, phi_dot_rec, p)
    div_bdot = div(s.b_dot[1:], lat)
    div_b = div(s.b[1:], lat)
    acc = div_bdot * phi_rec
    acc += (s.b_dot[0] + div_b) * phi_dot_rec
    acc += s.b_dot[0] * phi_dot_rec
    acc += sum(s.b_dot[i + 1] * d_axis(phi_rec, lat, i + 1) for i in range(3))
    acc += s.b[0] * phi_ddot_rec
    acc += sum(s.b[i + 1] * d_axis(phi_dot_rec, lat, i + 1) for i in range(3))
    return -acc / phi_rec


def scalar_field_only_rhs(s: ScalarFieldOnlyState, p: ScalarParams, _flip_sign=False):
    """Closed evolution: d/dt (B, Bdot) = (Bdot, Bddot)."""
    phi_rec = phi_from_gauss(s, p)
    phi_dot_rec = phi_dot_from_current(s, phi_rec, p)
    phi_ddot_rec = phi_ddot_from_wave(s, phi_rec, phi_dot_rec, p)
    b_ddot = np.empty_like(s.b)
    b_ddot[0] = b_ddot_temporal(s, p, phi_rec, phi_dot_rec, phi_ddot_rec)
    b_ddot[1:] = b_ddot_spatial(s, p, _flip_sign=_flip_sign)
    return ScalarFieldOnlyState(s.lattice, s.b_dot.copy(), b_ddot)


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarDataSpec:
    lattice: Lattice
    e: float = 1.0
    m: float = 1.0
    seed: int = 0
    phi_offset: float = 1.0
    b0_offset: float = 1.0
    amp_phi: float = 0.01
    amp_phi_dot: float = 0.01
    amp_b: float = 0.01
    amp_b_dot: float = 0.01
    max_mode: int = 1
    eps_b0: float = 1e-6
    eps_phi: float = 1e-6


def random_smooth_field(lat: Lattice, rng, amp: float, max_mode: int) -> np.ndarray:
    """Sum of lattice-commensurate cosine modes with |k|_inf <= max_mode."""
    x1, x2, x3 = lat.axes()
    L1, L2, L3 = lat.n1 * lat.h1, lat.n2 * lat.h2, lat.n3 * lat.h3
    out = np.zeros(lat.shape)
    modes = [
        (k1, k2, k3)
        for k1 in range(-max_mode, max_mode + 1)
        for k2 in range(-max_mode, max_mode + 1)
        for k3 in range(-max_mode, max_mode + 1)
        if (k1, k2, k3) != (0, 0, 0)
    ]
    coeffs = rng.normal(size=len(modes))
    phases = rng.uniform(0.0, 2 * np.pi, size=len(modes))
    for (k1, k2, k3), c, ph in zip(modes, coeffs, phases):
        arg = 2 * np.pi * (k1 * x1 / L1 + k2 * x2 / L2 + k3 * x3 / L3) + ph
        out += c * np.cos(arg)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= amp / peak
    return out


def make_scalar_initial_data(spec: ScalarDataSpec):
    """Constraint-consistent coupled state plus its matched field-only image.

    B^0 is solved jointly with the neutralizing background rho_bg so that
    <B^0> equals the requested offset; Bdot^0 follows from current
    conservation.  Reconstruction preconditions are verified before emitting.
    """
    lat = spec.lattice
    rng = np.random.default_rng(spec.seed)
    phi = spec.phi_offset + random_smooth_field(lat, rng, spec.amp_phi, spec.max_mode)
    phi_dot = random_smooth_field(lat, rng, spec.amp_phi_dot, spec.max_mode)
    b_sp = np.stack([random_smooth_field(lat, rng, spec.amp_b, spec.max_mode) for _ in range(3)])
    b_sp_dot = np.stack(
        [random_smooth_field(lat, rng, spec.amp_b_dot, spec.max_mode) for _ in range(3)]
    )

    phi2 = phi**2
    if np.min(phi2) < spec.eps_phi:
        raise PreconditionViolated(
            "phi^2 fell below eps_phi in the generated data",
            min_phi2=float(np.min(phi2)), guard=spec.eps_phi,
        )

    # joint solve for (B^0, rho_bg): L B0 - rho_bg = div(Bdot), <B0> = b0_offset
    V = 2.0 * spec.e**2 * phi2
    rhs1 = div(b_sp_dot, lat) - V * spec.b0_offset
    u1 = np.real(grid.solve_helmholtz_arrays(V, rhs1, lat, tol=1e-13))
    u2 = np.real(grid.solve_helmholtz_arrays(V, np.ones(lat.shape), lat, tol=1e-13))
    rho_bg = float(-np.mean(u1) / np.mean(u2))
    b0 = spec.b0_offset + u1 + rho_bg * u2

    params = ScalarParams(
        e=spec.e, m=spec.m, rho_bg=rho_bg, eps_b0=spec.eps_b0, eps_phi=spec.eps_phi
    )
    _check_b0(b0, spec.eps_b0)
    b0_dot = b0_dot_from_current(phi, phi_dot, b_sp, b0, lat, params)

    coupled = ScalarCoupledState(lat, phi, phi_dot, b_sp, b_sp_dot)
    b = np.stack([b0, b_sp[0], b_sp[1], b_sp[2]])
    b_dot = np.stack([b0_dot, b_sp_dot[0], b_sp_dot[1], b_sp_dot[2]])
    field_only = ScalarFieldOnlyState(lat, b, b_dot)

    # reconstruction preconditions must hold on the emitted field-only state
    phi_rec = phi_from_gauss(field_only, params)
    _check_phi(phi_rec, spec.eps_phi)
    return coupled, field_only, params


# ---------------------------------------------------------------------------
# trajectory runners (flat-vector packing for the shared integrator)
# ---------------------------------------------------------------------------

def _pack_coupled(s: ScalarCoupledState):
    return np.concatenate(
        [s.phi.ravel(), s.phi_dot.ravel(), s.b_sp.ravel(), s.b_sp_dot.ravel()]
    )


def _unpack_coupled(vec, lat: Lattice):
    ns = lat.nsites
    sh = lat.shape
    phi = vec[:ns].reshape(sh)
    phi_dot = vec[ns:2 * ns].reshape(sh)
    b_sp = vec[2 * ns:5 * ns].reshape((3,) + sh)
    b_sp_dot = vec[5 * ns:8 * ns].reshape((3,) + sh)
    return ScalarCoupledState(lat, phi, phi_dot, b_sp, b_sp_dot)


def _pack_field_only(s: ScalarFieldOnlyState):
    return np.concatenate([s.b.ravel(), s.b_dot.ravel()])


def _unpack_field_only(vec, lat: Lattice):
    ns = lat.nsites
    sh = lat.shape
    b = vec[:4 * ns].reshape((4,) + sh)
    b_dot = vec[4 * ns:8 * ns].reshape((4,) + sh)
    return ScalarFieldOnlyState(lat, b, b_dot)


def run_coupled(s0: ScalarCoupledState, p: ScalarParams, dt, steps, cadence=1):
    """Integrate the oracle; samples carry the full B^mu bundle (B0 re-solved)."""
    lat = s0.lattice
    samples = []

    def rhs(vec):
        ds, _, _ = scalar_coupled_rhs(_unpack_coupled(vec, lat), p)
        return _pack_coupled(ds)

    def on_sample(step, t, vec):
        s = _unpack_coupled(vec, lat)
        b0 = solve_constraint_b0(s.phi, s.b_sp_dot, lat, p)
        b0_dot = b0_dot_from_current(s.phi, s.phi_dot, s.b_sp, b0, lat, p)
        b = np.stack([b0, s.b_sp[0], s.b_sp[1], s.b_sp[2]])
        b_dot = np.stack([b0_dot, s.b_sp_dot[0], s.b_sp_dot[1], s.b_sp_dot[2]])
        res = gauss_residual(s, b0, lat, p)
        samples.append({
            "step": step, "t": t, "b": b, "b_dot": b_dot,
            "phi": s.phi.copy(), "phi_dot": s.phi_dot.copy(),
            "gauss_residual_l2": float(np.sqrt(lat.cell_volume * np.sum(res**2))),
        })

    prob = EvolutionProblem(state=_pack_coupled(s0), rhs=rhs)
    rec = evolve(prob, dt, steps, cadence=cadence, on_sample=on_sample)
    return rec, samples


def run_field_only(s0: ScalarFieldOnlyState, p: ScalarParams, dt, steps, cadence=1,
                   _flip_sign=False):
    lat = s0.lattice
    samples = []

    def rhs(vec):
        ds = scalar_field_only_rhs(_unpack_field_only(vec, lat), p,
                                   _flip_sign=_flip_sign)
        return _pack_field_only(ds)

    def on_sample(step, t, vec):
        s = _unpack_field_only(vec, lat)
        phi_rec = phi_from_gauss(s, p)
        samples.append({
            "step": step, "t": t, "b": s.b.copy(), "b_dot": s.b_dot.copy(),
            "min_phi_rec": float(np.min(np.real(phi_rec))),
            "min_abs_b0": float(np.min(np.abs(s.b[0]))),
        })

    prob = EvolutionProblem(state=_pack_field_only(s0), rhs=rhs)
    rec = evolve(prob, dt, steps, cadence=cadence, on_sample=on_sample)
    return rec, samples
