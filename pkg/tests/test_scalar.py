"""Scalar engine tests.

The closure formulas are checked two independent ways: against a sympy
evaluation of the continuum expressions on analytic trigonometric fields
(order-2 convergence of the stencils), and against the coupled oracle on
constraint-consistent data (where several reconstructions are exact because
oracle and closure share one stencil family).
"""

import numpy as np
import pytest
import sympy as sy

from emreduce import scalar as sc
from emreduce.errors import PreconditionViolated, SingularB0, SingularPhi
from emreduce.grid import Lattice


def cube(n, L=2 * np.pi):
    h = L / n
    return Lattice(n, n, n, h, h, h)


def make_params(**kw):
    kw.setdefault("e", 1.0)
    kw.setdefault("m", 1.0)
    return sc.ScalarParams(**kw)


# ---------------------------------------------------------------------------
# symbolic oracle: evaluate the continuum closure formulas with sympy
# ---------------------------------------------------------------------------

X = sy.symbols("x1 x2 x3", real=True)
E_SYM, M_SYM, RHO_SYM = 1.25, 1.0, 2.0

# analytic, lattice-commensurate, chosen so the reconstructed density is
# positive (uniform parts dominate)
B_SYM = [
    1 + sy.Rational(1, 10) * sy.sin(X[0]) * sy.cos(X[1]),
    sy.Rational(1, 20) * sy.cos(X[1] + X[2]),
    sy.Rational(1, 25) * sy.sin(X[2]),
    sy.Rational(1, 20) * sy.cos(X[0]) * sy.sin(X[1]),
]
BDOT_SYM = [
    sy.Rational(1, 20) * sy.cos(X[2]),
    sy.Rational(1, 10) * sy.sin(X[0] + X[1]),
    sy.Rational(1, 25) * sy.cos(X[0]),
    sy.Rational(1, 20) * sy.sin(X[1]) * sy.sin(X[2]),
]


def _sym_lap(f):
    return sum(sy.diff(f, x, 2) for x in X)


def _sym_div(vec):
    return sum(sy.diff(vec[i], X[i]) for i in range(3))


def _symbolic_closure():
    """Continuum Phi, Phidot, Phiddot, Bddot from the reduction formulas."""
    e2 = E_SYM**2
    num = -_sym_lap(B_SYM[0]) - _sym_div(BDOT_SYM[1:]) - RHO_SYM
    phi = num / (-2 * e2 * B_SYM[0])
    dmu_b = BDOT_SYM[0] + _sym_div(B_SYM[1:])
    phi_dot = -(dmu_b * phi + sum(B_SYM[i + 1] * sy.diff(phi, X[i]) for i in range(3))) / B_SYM[0]
    bb = B_SYM[0] ** 2 - sum(B_SYM[i + 1] ** 2 for i in range(3))
    phi_ddot = (
        _sym_lap(phi)
        + (phi_dot**2 - sum(sy.diff(phi, x) ** 2 for x in X)) / (2 * phi)
        + 2 * (e2 * bb - M_SYM**2) * phi
    )
    b_ddot_sp = [
        _sym_lap(B_SYM[i + 1]) - sy.diff(dmu_b, X[i]) + (B_SYM[i + 1] / B_SYM[0]) * num
        for i in range(3)
    ]
    b_ddot_0 = -(
        _sym_div(BDOT_SYM[1:]) * phi
        + (BDOT_SYM[0] + _sym_div(B_SYM[1:])) * phi_dot
        + BDOT_SYM[0] * phi_dot
        + sum(BDOT_SYM[i + 1] * sy.diff(phi, X[i]) for i in range(3))
        + B_SYM[0] * phi_ddot
        + sum(B_SYM[i + 1] * sy.diff(phi_dot, X[i]) for i in range(3))
    ) / phi
    return phi, phi_dot, phi_ddot, b_ddot_sp, b_ddot_0


def _grids_of(exprs, lat):
    xs = np.meshgrid(*[np.arange(n) * h for n, h in zip(lat.shape, lat.spacings)],
                     indexing="ij")
    out = []
    for ex in exprs:
        fn = sy.lambdify(X, ex, "numpy")
        out.append(np.asarray(fn(*xs), dtype=float) * np.ones(lat.shape))
    return out


def _state_from_symbols(lat):
    b = np.stack(_grids_of(B_SYM, lat))
    b_dot = np.stack(_grids_of(BDOT_SYM, lat))
    return sc.ScalarFieldOnlyState(lat, b, b_dot)


@pytest.fixture(scope="module")
def reference():
    return _symbolic_closure()


class TestSymbolicOracle:
    """Every reduction formula against its sympy continuum evaluation."""

    def _errors(self, n, reference):
        lat = cube(n)
        s = _state_from_symbols(lat)
        p = make_params(e=E_SYM, m=M_SYM, rho_bg=RHO_SYM)
        phi_s, phid_s, phidd_s, bdd_sp_s, bdd0_s = reference
        want_phi, want_phid, want_phidd, want_bdd0 = _grids_of(
            [phi_s, phid_s, phidd_s, bdd0_s], lat
        )
        want_bdd_sp = np.stack(_grids_of(bdd_sp_s, lat))
        phi = sc.phi_from_gauss(s, p)
        phid = sc.phi_dot_from_current(s, phi, p)
        phidd = sc.phi_ddot_from_wave(s, phi, phid, p)
        bdd_sp = sc.b_ddot_spatial(s, p)
        bdd0 = sc.b_ddot_temporal(s, p)
        return {
            "phi": np.max(np.abs(phi - want_phi)),
            "phi_dot": np.max(np.abs(phid - want_phid)),
            "phi_ddot": np.max(np.abs(phidd - want_phidd)),
            "b_ddot_sp": np.max(np.abs(bdd_sp - want_bdd_sp)),
            "b_ddot_0": np.max(np.abs(bdd0 - want_bdd0)),
        }

    def test_second_order_convergence(self, reference):
        e12 = self._errors(12, reference)
        e24 = self._errors(24, reference)
        for key in e12:
            rate = np.log2(e12[key] / e24[key])
            assert 1.7 <= rate <= 2.3, f"{key}: rate {rate:.2f}, errors {e12[key]:.2e}->{e24[key]:.2e}"


class TestPhiFromGauss:
    def test_all_constant_gives_zero(self):
        lat = cube(8)
        b = np.zeros((4,) + lat.shape)
        b[0] = 1.0
        b[1:] = 0.3
        s = sc.ScalarFieldOnlyState(lat, b, np.zeros_like(b))
        phi = sc.phi_from_gauss(s, make_params())
        assert np.max(np.abs(phi)) == 0.0

    def test_sine_case_frozen(self):
        # B^0 == 1, Bdot^1 = sin x1: Phi = (sin h / h) cos(x1) / 2 exactly
        lat = cube(16)
        x1 = lat.axes()[0]
        b = np.zeros((4,) + lat.shape)
        b[0] = 1.0
        b_dot = np.zeros_like(b)
        b_dot[1] = np.sin(x1) * np.ones(lat.shape)
        s = sc.ScalarFieldOnlyState(lat, b, b_dot)
        phi = sc.phi_from_gauss(s, make_params(e=1.0))
        want = np.sin(lat.h1) / lat.h1 * np.cos(x1) / 2.0 * np.ones(lat.shape)
        assert np.max(np.abs(phi - want)) < 1e-14
        # and within O(h^2) of the continuum value cos(x1)/2
        assert np.max(np.abs(phi - np.cos(x1) / 2.0)) < lat.h1**2 / 5

    def test_oracle_reconstruction_exact(self):
        spec = sc.ScalarDataSpec(lattice=cube(12), seed=7, amp_phi=0.02,
                                 amp_phi_dot=0.02, amp_b=0.02, amp_b_dot=0.02)
        coupled, fo, p = sc.make_scalar_initial_data(spec)
        phi = sc.phi_from_gauss(fo, p)
        assert np.max(np.abs(phi - coupled.phi**2)) < 1e-12

    def test_singular_b0_reports_site(self):
        lat = cube(8)
        b = np.zeros((4,) + lat.shape)
        b[0] = 1.0
        b[0][2, 3, 4] = 1e-9
        s = sc.ScalarFieldOnlyState(lat, b, np.zeros_like(b))
        with pytest.raises(SingularB0) as err:
            sc.phi_from_gauss(s, make_params())
        assert err.value.payload["site"] == [2, 3, 4]


class TestPhiDotAndWave:
    def test_static_fields_give_zero(self):
        lat = cube(8)
        b = np.zeros((4,) + lat.shape)
        b[0], b[1] = 2.0, 0.5
        s = sc.ScalarFieldOnlyState(lat, b, np.zeros_like(b))
        phi = np.ones(lat.shape)
        assert np.max(np.abs(sc.phi_dot_from_current(s, phi, make_params()))) == 0.0

    def test_advection_case(self):
        # B^0 == 1, B^1 == c, Phi = sin x1 -> Phidot ~= -c cos x1
        lat = cube(32)
        c = 0.7
        b = np.zeros((4,) + lat.shape)
        b[0], b[1] = 1.0, c
        s = sc.ScalarFieldOnlyState(lat, b, np.zeros_like(b))
        x1 = lat.axes()[0]
        phi = np.sin(x1) * np.ones(lat.shape)
        got = sc.phi_dot_from_current(s, phi, make_params())
        want = -c * np.cos(x1) * np.ones(lat.shape)
        assert np.max(np.abs(got - want)) < c * lat.h1**2 / 5

    def test_constant_density_wave(self):
        # Phi == k, B == 0, m = 1: Phiddot = -2k
        lat = cube(8)
        s = sc.ScalarFieldOnlyState(lat, np.zeros((4,) + lat.shape),
                                    np.zeros((4,) + lat.shape))
        k = 0.8
        phi = k * np.ones(lat.shape)
        got = sc.phi_ddot_from_wave(s, phi, np.zeros(lat.shape), make_params(m=1.0))
        assert np.max(np.abs(got + 2.0 * k)) < 1e-13

    def test_balanced_potential_wave(self):
        # e^2 B^mu B_mu = m^2 uniformly: Phiddot = 0
        lat = cube(8)
        b = np.zeros((4,) + lat.shape)
        b[0] = 1.0
        s = sc.ScalarFieldOnlyState(lat, b, np.zeros_like(b))
        got = sc.phi_ddot_from_wave(s, np.ones(lat.shape), np.zeros(lat.shape),
                                    make_params(e=1.0, m=1.0))
        assert np.max(np.abs(got)) < 1e-13

    def test_singular_phi(self):
        lat = cube(8)
        s = sc.ScalarFieldOnlyState(lat, np.zeros((4,) + lat.shape),
                                    np.zeros((4,) + lat.shape))
        with pytest.raises(SingularPhi):
            sc.phi_ddot_from_wave(s, np.zeros(lat.shape), np.zeros(lat.shape),
                                  make_params())


class TestBddotTemporal:
    def test_static_uniform_is_zero(self):
        # uniform potentials, zero velocities: every term carries a
        # derivative or a reconstructed rate that vanishes
        lat = cube(8)
        b = np.zeros((4,) + lat.shape)
        b[0] = 1.0
        s = sc.ScalarFieldOnlyState(lat, b, np.zeros_like(b))
        p = make_params(e=1.0, m=1.0, rho_bg=2.0)  # Phi reconstructs to 1
        got = sc.b_ddot_temporal(s, p)
        assert np.max(np.abs(got)) < 1e-13


class TestCoupledOracle:
    def test_vacuum_rhs_is_zero(self):
        lat = cube(8)
        z = np.zeros(lat.shape)
        s = sc.ScalarCoupledState(lat, z.copy(), z.copy(),
                                  np.zeros((3,) + lat.shape), np.zeros((3,) + lat.shape))
        ds, b0, b0_dot = sc.scalar_coupled_rhs(s, make_params())
        for arr in (ds.phi, ds.phi_dot, ds.b_sp, ds.b_sp_dot, b0, b0_dot):
            assert np.max(np.abs(arr)) < 1e-12

    def test_free_klein_gordon_mode(self):
        # uniform phi with B == 0: phiddot = -m^2 phi
        lat = cube(8)
        amp = 0.8
        s = sc.ScalarCoupledState(lat, amp * np.ones(lat.shape), np.zeros(lat.shape),
                                  np.zeros((3,) + lat.shape), np.zeros((3,) + lat.shape))
        ds, _, _ = sc.scalar_coupled_rhs(s, make_params(m=1.0))
        assert np.max(np.abs(ds.phi_dot + amp)) < 1e-12

    def test_gauss_residual_at_solver_tolerance(self):
        spec = sc.ScalarDataSpec(lattice=cube(8), seed=1, amp_phi=0.05,
                                 amp_phi_dot=0.05, amp_b=0.05, amp_b_dot=0.05)
        coupled, fo, p = sc.make_scalar_initial_data(spec)
        b0 = sc.solve_constraint_b0(coupled.phi, coupled.b_sp_dot, coupled.lattice, p)
        res = sc.gauss_residual(coupled, b0, coupled.lattice, p)
        assert np.max(np.abs(res)) < 1e-9


class TestInitialData:
    def test_static_offsets(self):
        spec = sc.ScalarDataSpec(lattice=cube(8), seed=0, amp_phi=0.0,
                                 amp_phi_dot=0.0, amp_b=0.0, amp_b_dot=0.0)
        coupled, fo, p = sc.make_scalar_initial_data(spec)
        assert np.max(np.abs(coupled.phi - 1.0)) == 0.0
        assert np.max(np.abs(fo.b[0] - 1.0)) < 1e-12
        assert abs(p.rho_bg - 2.0) < 1e-10
        res = sc.gauss_residual(coupled, fo.b[0], coupled.lattice, p)
        assert np.max(np.abs(res)) < 1e-10
        # static: the field-only evolution rates all vanish
        ds = sc.scalar_field_only_rhs(fo, p)
        assert np.max(np.abs(ds.b_dot)) < 1e-9

    def test_determinism(self):
        spec = sc.ScalarDataSpec(lattice=cube(8), seed=11)
        a1, f1, p1 = sc.make_scalar_initial_data(spec)
        a2, f2, p2 = sc.make_scalar_initial_data(spec)
        assert np.array_equal(a1.phi, a2.phi)
        assert np.array_equal(f1.b, f2.b)
        assert p1.rho_bg == p2.rho_bg

    def test_self_consistency(self):
        spec = sc.ScalarDataSpec(lattice=cube(12), seed=5)
        coupled, fo, p = sc.make_scalar_initial_data(spec)
        phi = sc.phi_from_gauss(fo, p)
        assert np.max(np.abs(phi - coupled.phi**2)) < 1e-11

    def test_guard_violation_fails_loudly(self):
        spec = sc.ScalarDataSpec(lattice=cube(8), seed=2, phi_offset=0.0,
                                 amp_phi=1e-5)
        with pytest.raises((PreconditionViolated, SingularPhi)):
            sc.make_scalar_initial_data(spec)


class TestFieldOnlyEvolution:
    def test_rhs_first_component_echoes_velocity(self):
        spec = sc.ScalarDataSpec(lattice=cube(8), seed=3)
        _, fo, p = sc.make_scalar_initial_data(spec)
        ds = sc.scalar_field_only_rhs(fo, p)
        assert np.array_equal(ds.b, fo.b_dot)

    def test_short_trajectory_tracks_oracle(self):
        spec = sc.ScalarDataSpec(lattice=cube(8), seed=3, amp_phi=0.02,
                                 amp_phi_dot=0.02, amp_b=0.02, amp_b_dot=0.02)
        coupled, fo, p = sc.make_scalar_initial_data(spec)
        _, s1 = sc.run_coupled(coupled, p, 1e-3, 20, cadence=10)
        _, s2 = sc.run_field_only(fo, p, 1e-3, 20, cadence=10)
        for a, b in zip(s1, s2):
            num = np.sum(np.abs(a["b"] - b["b"]) ** 2)
            den = np.sum(np.abs(a["b"]) ** 2)
            assert np.sqrt(num / den) < 2e-4

    def test_forward_backward_returns(self):
        # one RK4 step of f then one of -f differs from the start only at
        # the local error order
        spec = sc.ScalarDataSpec(lattice=cube(8), seed=4)
        _, fo, p = sc.make_scalar_initial_data(spec)
        from emreduce.integrate import EvolutionProblem, rk4_step

        vec0 = sc._pack_field_only(fo)
        lat = fo.lattice

        def rhs(v):
            return sc._pack_field_only(sc.scalar_field_only_rhs(sc._unpack_field_only(v, lat), p))

        dt = 1e-3
        fwd = rk4_step(EvolutionProblem(state=vec0, rhs=rhs), dt)
        back = rk4_step(EvolutionProblem(state=fwd, rhs=lambda v: -rhs(v)), dt)
        rel = np.linalg.norm(back - vec0) / np.linalg.norm(vec0)
        assert rel < 1e-13
