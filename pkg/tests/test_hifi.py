"""High-fidelity solver checks: configuration rules, saddle-point solve
invariants, the equal-order instability, mirror symmetry, and Newton."""

import numpy as np
import pytest

from cavityrb.assembly import StabilizationConfig
from cavityrb.fespace import eval as fe_eval
from cavityrb.fespace import zero_function
from cavityrb.hifi import NEWTON_TOL, FlowSystem, ProblemConfig
from cavityrb.mesh import build_rect_mesh
from cavityrb.util import SingularSystemError


# ---------------------------------------------------------------------------
# configuration


def test_default_parameter_boxes():
    st = ProblemConfig("stokes", "P1P1",
                       StabilizationConfig("BrezziPitkaranta", 0.05))
    assert st.mu1_range == (0.25, 0.75)
    assert st.mu2_range == (1.0, 3.0)
    assert st.viscosity_mode == "direct"
    ns = ProblemConfig("navier_stokes", "P2P2",
                       StabilizationConfig("SUPGFamily", 1.0))
    assert ns.mu1_range == (100.0, 200.0)
    assert ns.mu2_range == (1.5, 3.0)
    assert ns.viscosity_mode == "inverse"
    assert ns.geometry().nu((200.0, 2.0)) == pytest.approx(0.005)


def test_explicit_ranges_survive():
    cfg = ProblemConfig("stokes", "P2P1", StabilizationConfig(),
                        mu1_range=(0.1, 0.2), mu2_range=(2.0, 4.0))
    assert cfg.mu1_range == (0.1, 0.2)
    assert cfg.in_box((0.15, 3.0))
    assert not cfg.in_box((0.3, 3.0))
    assert not cfg.in_box((0.15, 1.0))


@pytest.mark.parametrize("problem,pair,method", [
    ("stokes", "P2P1", "BrezziPitkaranta"),      # stable pair, no stab
    ("stokes", "P1P0", "BrezziPitkaranta"),      # P1P0 only edge jumps
    ("stokes", "P1P1", "EdgeJumpP1P0"),          # edge jumps only on P1P0
    ("stokes", "P2P2", "SUPGFamily"),            # transport stab needs NS
    ("navier_stokes", "P2P2", "BrezziPitkaranta"),
    ("navier_stokes", "P2P2", "ResidualBased"),
    ("navier_stokes", "P1P0", "EdgeJumpP1P0"),
])
def test_rejected_pairings(problem, pair, method):
    with pytest.raises(ValueError):
        ProblemConfig(problem, pair, StabilizationConfig(method, 0.05))


def test_unstabilized_ns_on_stable_pair_is_allowed():
    cfg = ProblemConfig("navier_stokes", "P2P1", StabilizationConfig())
    assert cfg.stabilization.method == "None"


def test_unknown_names_rejected():
    with pytest.raises(ValueError):
        ProblemConfig("euler", "P1P1", StabilizationConfig())
    with pytest.raises(ValueError):
        ProblemConfig("stokes", "P3P2", StabilizationConfig())


# ---------------------------------------------------------------------------
# Stokes saddle solves


@pytest.fixture(scope="module")
def stokes_bp():
    cfg = ProblemConfig("stokes", "P1P1",
                        StabilizationConfig("BrezziPitkaranta", 0.05))
    system = FlowSystem(cfg, 16, 8)
    return system, system.solve((0.6, 2.0))


def test_stokes_diagnostics(stokes_bp):
    _, sol = stokes_bp
    assert sol.diagnostics["type"] == "stokes"
    assert sol.diagnostics["iterations"] == 1
    assert sol.diagnostics["residual"] < 1e-12
    assert sol.mu == (0.6, 2.0)


def test_dirichlet_values_are_exact(stokes_bp):
    system, sol = stokes_bp
    diri = system.velocity_space.dirichlet_dofs()
    assert np.abs(sol.velocity.values[diri]).max() == 0.0
    total = sol.total_velocity
    assert np.abs(total.values[diri]
                  - system.lifting.values[diri]).max() == 0.0
    assert fe_eval(total, (1.0, 1.0))[0] == pytest.approx(1.0, abs=1e-13)


def test_pressure_mean_is_zero(stokes_bp):
    system, sol = stokes_bp
    p = sol.pressure.values
    assert abs(system.mean_vector @ p) <= 1e-10 * np.linalg.norm(p)


def test_multiplier_is_tiny(stokes_bp):
    _, sol = stokes_bp
    assert abs(sol.diagnostics["lambda"]) < 1e-10


def test_algebraic_residual_at_solution(stokes_bp):
    system, sol = stokes_bp
    mu = (0.6, 2.0)
    r = system.residual(mu, sol.velocity.values, sol.pressure.values,
                        sol.diagnostics["lambda"])
    assert np.linalg.norm(r) <= 1e-10 * system.residual_reference(mu)


def test_residual_of_zero_state_matches_reference(stokes_bp):
    system, _ = stokes_bp
    mu = (0.41, 1.7)
    r0 = system.residual(mu, np.zeros(system.velocity_space.dof_count),
                         np.zeros(system.n_pressure))
    assert np.linalg.norm(r0) == pytest.approx(system.residual_reference(mu))


def test_global_mass_conservation_plain_pair():
    cfg = ProblemConfig("stokes", "P2P1", StabilizationConfig())
    system = FlowSystem(cfg, 16, 8)
    sol = system.solve((0.33, 2.4))
    b = system.divergence.evaluate(system.geometry, (0.33, 2.4))
    flux = np.ones(system.n_pressure) @ (b @ sol.total_velocity.values)
    assert abs(flux) < 1e-10


@pytest.mark.parametrize("pair,method,delta", [
    ("P2P2", "ResidualBased", 0.05),
    ("P1P0", "EdgeJumpP1P0", 0.05),
])
def test_other_stabilized_pairs_solve(pair, method, delta):
    cfg = ProblemConfig("stokes", pair, StabilizationConfig(method, delta))
    system = FlowSystem(cfg, 16, 8)
    mu = (0.5, 1.8)
    sol = system.solve(mu)
    p = sol.pressure.values
    assert abs(system.mean_vector @ p) <= 1e-10 * np.linalg.norm(p)
    r = system.residual(mu, sol.velocity.values, p,
                        sol.diagnostics["lambda"])
    assert np.linalg.norm(r) <= 1e-10 * system.residual_reference(mu)


def test_equal_order_without_stabilization_is_singular():
    cfg = ProblemConfig("stokes", "P1P1", StabilizationConfig())
    system = FlowSystem(cfg, 8, 4)
    with pytest.raises(SingularSystemError):
        system.solve((0.5, 2.0))


def test_checkerboard_mode_invisible_to_divergence():
    # the classic equal-order failure: the checkerboard pressure lies in
    # the kernel of B^T on the interior dofs, while the pressure
    # stabilization gives it positive energy
    cfg = ProblemConfig("stokes", "P1P1",
                        StabilizationConfig("BrezziPitkaranta", 0.05))
    system = FlowSystem(cfg, 32, 16)
    verts = system.mesh.vertices
    i = np.rint(verts[:, 0] / (2.0 / 32)).astype(int)
    j = np.rint(verts[:, 1] / (1.0 / 16)).astype(int)
    checker = ((-1.0) ** (i + j)).astype(float)
    for mu in [(0.5, 1.0), (0.6, 2.0)]:
        b = system.divergence.evaluate(system.geometry, mu)
        assert np.abs((b.T @ checker)[system.free]).max() == 0.0
    s = system.stab.spq.terms[0][1]
    assert checker @ (s @ checker) == pytest.approx(1.6, rel=1e-12)


def test_mirror_symmetry_of_horizontal_velocity():
    # reflecting the cavity across its vertical midline maps the problem
    # onto its sign-reversed twin, so u_x must be mirror-even; the lid
    # corners carry the discontinuous-data singularity and the single
    # diagonal direction breaks the discrete symmetry there, so compare
    # away from the corners
    cfg = ProblemConfig("stokes", "P2P1", StabilizationConfig())
    system = FlowSystem(cfg, 32, 16)
    sol = system.solve((0.75, 1.0))
    total = sol.total_velocity
    coords = system.velocity_space.dof_coords
    ux = total.values[0::2]
    worst = 0.0
    for k in range(coords.shape[0]):
        x, y = coords[k]
        corner = min(np.hypot(x, y - 1.0), np.hypot(x - 2.0, y - 1.0))
        if corner <= 0.25:
            continue
        mirrored = fe_eval(total, (2.0 - x, y))[0]
        worst = max(worst, abs(ux[k] - mirrored))
    assert worst < 1e-2


# ---------------------------------------------------------------------------
# Navier-Stokes


@pytest.fixture(scope="module")
def ns_system():
    cfg = ProblemConfig("navier_stokes", "P2P2",
                        StabilizationConfig("SUPGFamily", 1.0))
    return FlowSystem(cfg, 32, 16)


def test_newton_converges_quadratically(ns_system):
    mu = (120.0, 2.0)
    sol = ns_system.solve_navier_stokes(mu)
    diag = sol.diagnostics
    assert diag["type"] == "newton"
    assert diag["iterations"] <= 10
    ref = ns_system.residual_reference(mu)
    hist = np.asarray(diag["residuals"]) / ref
    assert hist[-1] <= NEWTON_TOL
    # quadratic tail, with an absolute floor once the history hits
    # machine precision
    assert hist[-1] <= max(10.0 * hist[-2] ** 2, 1e-13)
    assert np.all(np.diff(hist) < 0)


def test_ns_solution_invariants(ns_system):
    mu = (120.0, 2.0)
    sol = ns_system.solve_navier_stokes(mu)
    diri = ns_system.velocity_space.dirichlet_dofs()
    assert np.abs(sol.velocity.values[diri]).max() == 0.0
    p = sol.pressure.values
    assert abs(ns_system.mean_vector @ p) <= 1e-10 * np.linalg.norm(p)
    r = ns_system.residual(mu, sol.velocity.values, p,
                           sol.diagnostics["lambda"])
    assert np.linalg.norm(r) <= 1e-9 * ns_system.residual_reference(mu)


def test_ns_approaches_stokes_at_high_viscosity():
    # with the transport terms scaled away (nu = 1e4, tiny delta) the
    # nonlinear solution must collapse onto the linear one
    nu = 1e4
    ns_cfg = ProblemConfig("navier_stokes", "P2P2",
                           StabilizationConfig("SUPGFamily", 1e-3),
                           mu1_range=(1.0 / (2 * nu), 2.0 / nu))
    ns_sys = FlowSystem(ns_cfg, 16, 8)
    ns_sol = ns_sys.solve((1.0 / nu, 2.0))
    st_cfg = ProblemConfig("stokes", "P2P2",
                           StabilizationConfig("ResidualBased", 1e-3),
                           mu1_range=(nu / 2, 2 * nu))
    st_sys = FlowSystem(st_cfg, 16, 8)
    st_sol = st_sys.solve((nu, 2.0))
    du = ns_sol.velocity.values - st_sol.velocity.values
    xu = st_sys.gram_velocity
    num = np.sqrt(du @ (xu @ du))
    den = np.sqrt(st_sol.velocity.values @ (xu @ st_sol.velocity.values))
    assert num <= 1e-3 * den


def test_zero_lid_gives_zero_flow():
    cfg = ProblemConfig("navier_stokes", "P2P2",
                        StabilizationConfig("SUPGFamily", 1.0))
    mesh = build_rect_mesh(2.0, 1.0, 8, 4)
    base = FlowSystem(cfg, 8, 4, mesh=mesh)
    system = FlowSystem(cfg, 8, 4,
                        lifting=zero_function(base.velocity_space),
                        mesh=mesh)
    sol = system.solve((150.0, 2.0))
    assert np.abs(sol.velocity.values).max() == 0.0
    assert np.abs(sol.pressure.values).max() == 0.0
    assert sol.diagnostics["iterations"] == 0


def test_continuation_matches_direct_solve():
    cfg = ProblemConfig("navier_stokes", "P2P2",
                        StabilizationConfig("SUPGFamily", 1.0))
    system = FlowSystem(cfg, 16, 8)
    direct = system.solve_navier_stokes((150.0, 2.0))
    continued = system.solve_navier_stokes_continued((150.0, 2.0))
    assert np.array_equal(direct.velocity.values, continued.velocity.values)
    assert np.array_equal(direct.pressure.values, continued.pressure.values)


def test_newton_requires_ns_configuration(stokes_bp):
    system, _ = stokes_bp
    with pytest.raises(ValueError):
        system.solve_navier_stokes((0.5, 2.0))


def test_total_velocity_adds_lifting(stokes_bp):
    system, sol = stokes_bp
    want = sol.velocity.values + system.lifting.values
    assert np.array_equal(sol.total_velocity.values, want)
