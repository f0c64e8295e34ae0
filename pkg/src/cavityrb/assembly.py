"""Affine assembly of the parametrized cavity forms.

Everything is integrated on the fixed reference rectangle; the geometry
parameter enters only through scalar coefficients (the map stretches x
by a(mu2), giving the viscous tensor nu*diag(1/a, a) and the divergence
tensor diag(1, a)).  Each form is returned as an AffineOperator: a list
of (theta-tag, matrix) terms whose weighted sum reproduces the mapped
operator at any parameter.

Stabilization blocks are assembled verbatim on the reference elements
(reference h_K, no pullback): the weight is delta*h_K^2 per element, or
delta*h_sigma per interior edge for the P1/P0 jump variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse

from .fespace import FeFunction, FunctionSpace, bary_coords, shape_dlam, shape_values
from .linalg import CsrPattern
from .quadrature import triangle_rule

THETA_TAGS = ("one", "a", "nu", "nu_over_a", "nu_times_a", "nu_sq")

STAB_METHODS = ("None", "BrezziPitkaranta", "ResidualBased", "SUPGFamily",
                "EdgeJumpP1P0")


class GeometryMap:
    """Geometry/viscosity coefficients for the stretched cavity.

    The physical domain stretches the reference rectangle horizontally
    by a(mu2) = (1+mu2)/(1+mu_bar2); at mu2 = mu_bar2 the map is the
    identity.  ``viscosity`` selects how mu1 enters: "direct" (nu = mu1,
    Stokes) or "inverse" (nu = 1/mu1, mu1 acting as Reynolds number).
    """

    def __init__(self, mu_bar2: float = 1.0, viscosity: str = "direct"):
        if viscosity not in ("direct", "inverse"):
            raise ValueError(f"unknown viscosity rule {viscosity!r}")
        if mu_bar2 <= -1.0:
            raise ValueError("mu_bar2 must exceed -1")
        self.mu_bar2 = float(mu_bar2)
        self.viscosity = viscosity

    def a(self, mu2: float) -> float:
        return (1.0 + mu2) / (1.0 + self.mu_bar2)

    def nu(self, mu) -> float:
        mu1 = mu[0]
        if mu1 <= 0.0:
            raise ValueError("mu1 must be positive")
        return mu1 if self.viscosity == "direct" else 1.0 / mu1

    def kappa(self, mu) -> np.ndarray:
        a = self.a(mu[1])
        return self.nu(mu) * np.diag([1.0 / a, a])

    def chi(self, mu) -> np.ndarray:
        return np.diag([1.0, self.a(mu[1])])

    def theta(self, tag: str, mu) -> float:
        a = self.a(mu[1])
        if tag == "one":
            return 1.0
        if tag == "a":
            return a
        nu = self.nu(mu)
        if tag == "nu":
            return nu
        if tag == "nu_over_a":
            return nu / a
        if tag == "nu_times_a":
            return nu * a
        if tag == "nu_sq":
            return nu * nu
        raise ValueError(f"unknown theta tag {tag!r}")


class AffineOperator:
    """Sum of parameter-separable terms theta_q(mu) * M_q."""

    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("affine operator needs at least one term")
        shapes = {m.shape for _, m in terms}
        if len(shapes) != 1:
            raise ValueError(f"affine terms disagree on shape: {shapes}")
        for tag, _ in terms:
            if tag not in THETA_TAGS:
                raise ValueError(f"unknown theta tag {tag!r}")
        self.terms = terms
        self.shape = terms[0][1].shape

    @property
    def q(self) -> int:
        return len(self.terms)

    def evaluate(self, geometry: GeometryMap, mu):
        out = None
        for tag, m in self.terms:
            piece = geometry.theta(tag, mu) * m
            out = piece if out is None else out + piece
        return out

    def transposed(self) -> "AffineOperator":
        return AffineOperator([(tag, m.T.tocsr() if scipy.sparse.issparse(m)
                                else m.T) for tag, m in self.terms])

    def project(self, left: np.ndarray, right: np.ndarray) -> "AffineOperator":
        """Galerkin projection left^T M_q right of every term (dense)."""
        return AffineOperator([(tag, np.asarray(left.T @ (m @ right)))
                               for tag, m in self.terms])

    def project_vector(self, left: np.ndarray) -> "AffineOperator":
        return AffineOperator([(tag, np.asarray(left.T @ m))
                               for tag, m in self.terms])


def vector_expand(m: scipy.sparse.spmatrix) -> scipy.sparse.csr_matrix:
    """Scalar coupling -> interleaved 2-vector coupling (kron with I2)."""
    return scipy.sparse.kron(m, scipy.sparse.identity(2), format="csr")


def _quad_data(space: FunctionSpace, degree: int):
    """Reference values / physical gradients / weights for one space.

    Returns (vals (nq, nloc), grads (n_t, nq, nloc, 2), wdet (n_t, nq))
    with wdet the physical quadrature weights (reference weights sum to
    the reference area 1/2, so the affine scale is 2*area).
    """
    pts, w = triangle_rule(degree)
    lam = bary_coords(pts)
    vals = shape_values(space.family, lam)
    dlam = shape_dlam(space.family, lam)
    grads = np.einsum("qni,tid->tqnd", dlam, space.mesh.grad_bary)
    wdet = 2.0 * space.mesh.areas[:, None] * w[None, :]
    return vals, grads, wdet


def _cell_pattern(row_dofs: np.ndarray, col_dofs: np.ndarray, shape) -> CsrPattern:
    """CSR pattern for per-cell dense blocks row_dofs x col_dofs."""
    nr = row_dofs.shape[1]
    nc = col_dofs.shape[1]
    rows = np.repeat(row_dofs, nc, axis=1).ravel()
    cols = np.tile(col_dofs, (1, nr)).ravel()
    return CsrPattern(rows, cols, shape)


def _poly_degree(family: str) -> int:
    return {"P0": 0, "P1": 1, "P2": 2}[family]


# ---------------------------------------------------------------------------
# parameter-separated bilinear forms


def assemble_viscous(vel: FunctionSpace, geometry: GeometryMap) -> AffineOperator:
    """Mapped vector Laplacian: (nu/a) * dx-block + (nu*a) * dy-block."""
    if vel.components != 2:
        raise ValueError("viscous form needs a vector velocity space")
    k = _poly_degree(vel.family)
    vals, grads, wdet = _quad_data(vel, max(2 * (k - 1), 0))
    pat = _cell_pattern(vel.cell_dofs, vel.cell_dofs,
                        (vel.n_scalar, vel.n_scalar))
    kxx = pat.assemble(np.einsum("tq,tqid,tqjd->tij", wdet,
                                 grads[..., :1], grads[..., :1]))
    kyy = pat.assemble(np.einsum("tq,tqid,tqjd->tij", wdet,
                                 grads[..., 1:], grads[..., 1:]))
    return AffineOperator([("nu_over_a", vector_expand(kxx)),
                           ("nu_times_a", vector_expand(kyy))])


def assemble_divergence(vel: FunctionSpace, prs: FunctionSpace,
                        geometry: GeometryMap) -> AffineOperator:
    """b(v, q) = -int q (dv_x/dx + a dv_y/dy); rows pressure, cols velocity."""
    if vel.mesh is not prs.mesh:
        raise ValueError("velocity and pressure live on different meshes")
    deg = _poly_degree(prs.family) + max(_poly_degree(vel.family) - 1, 0)
    pts, w = triangle_rule(deg)
    lam = bary_coords(pts)
    pvals = shape_values(prs.family, lam)
    dlam = shape_dlam(vel.family, lam)
    vgrads = np.einsum("qni,tid->tqnd", dlam, vel.mesh.grad_bary)
    wdet = 2.0 * vel.mesh.areas[:, None] * w[None, :]

    shape = (prs.n_scalar, vel.dof_count)
    vec_cols = vel.cell_vector_dofs()
    pat = _cell_pattern(prs.cell_dofs, vec_cols, shape)
    loc = np.zeros((vel.mesh.n_triangles, prs.n_local, vel.n_local, 2))
    terms = []
    for comp, tag in ((0, "one"), (1, "a")):
        loc[:] = 0.0
        loc[..., comp] = -np.einsum("tq,qk,tqnd->tkn", wdet, pvals,
                                    vgrads[..., comp:comp + 1])
        terms.append((tag, pat.assemble(loc)))
    return AffineOperator(terms)


def assemble_gram(space: FunctionSpace, kind: str) -> scipy.sparse.csr_matrix:
    """Parameter-independent inner product matrix.

    kind "l2": mass; "h1semi": stiffness (positive definite on the
    homogeneous-Dirichlet subspace); "h1": their sum.
    """
    k = _poly_degree(space.family)
    vals, grads, wdet = _quad_data(space, 2 * k)
    pat = _cell_pattern(space.cell_dofs, space.cell_dofs,
                        (space.n_scalar, space.n_scalar))
    if kind == "l2":
        out = pat.assemble(np.einsum("tq,qi,qj->tij", wdet, vals, vals))
    elif kind == "h1semi":
        out = pat.assemble(np.einsum("tq,tqid,tqjd->tij", wdet, grads, grads))
    elif kind == "h1":
        out = pat.assemble(np.einsum("tq,qi,qj->tij", wdet, vals, vals)) \
            + pat.assemble(np.einsum("tq,tqid,tqjd->tij", wdet, grads, grads))
    else:
        raise ValueError(f"unknown gram kind {kind!r}")
    return vector_expand(out) if space.components == 2 else out


def assemble_mean_vector(prs: FunctionSpace) -> np.ndarray:
    """m_k = int psi_k, the zero-mean constraint functional."""
    vals, _, wdet = _quad_data(prs, _poly_degree(prs.family))
    out = np.zeros(prs.n_scalar)
    np.add.at(out, prs.cell_dofs.ravel(),
              np.einsum("tq,qk->tk", wdet, vals).ravel())
    return out


def assemble_body_force(vel: FunctionSpace, force, degree: int = 10) -> np.ndarray:
    """(f, v) for a smooth callable force(x, y) -> (fx, fy)."""
    pts, w = triangle_rule(degree)
    lam = bary_coords(pts)
    vals = shape_values(vel.family, lam)
    mesh = vel.mesh
    verts = mesh.vertices[mesh.triangles]            # (t, 3, 2)
    phys = np.einsum("qi,tid->tqd", lam, verts)
    fxy = np.empty_like(phys)
    for t in range(phys.shape[0]):
        for q in range(phys.shape[1]):
            fxy[t, q] = force(phys[t, q, 0], phys[t, q, 1])
    wdet = 2.0 * mesh.areas[:, None] * w[None, :]
    loc = np.einsum("tq,qn,tqd->tnd", wdet, vals, fxy)
    out = np.zeros(vel.dof_count)
    np.add.at(out, vel.cell_vector_dofs().ravel(), loc.ravel())
    return out


def assemble_stab_body_force(prs: FunctionSpace, force, delta: float,
                             degree: int = 10) -> np.ndarray:
    """-delta sum_K h_K^2 (f, grad q): continuity consistency term."""
    pts, w = triangle_rule(degree)
    lam = bary_coords(pts)
    dlam = shape_dlam(prs.family, lam)
    mesh = prs.mesh
    grads = np.einsum("qni,tid->tqnd", dlam, mesh.grad_bary)
    verts = mesh.vertices[mesh.triangles]
    phys = np.einsum("qi,tid->tqd", lam, verts)
    fxy = np.empty_like(phys)
    for t in range(phys.shape[0]):
        for q in range(phys.shape[1]):
            fxy[t, q] = force(phys[t, q, 0], phys[t, q, 1])
    wdet = 2.0 * mesh.areas[:, None] * w[None, :]
    h2 = mesh.element_diameters ** 2
    loc = -delta * np.einsum("t,tq,tqnd,tqd->tn", h2, wdet, grads, fxy)
    out = np.zeros(prs.n_scalar)
    np.add.at(out, prs.cell_dofs.ravel(), loc.ravel())
    return out


# ---------------------------------------------------------------------------
# convective tables and assemblers


class ConvectionAssembler:
    """Trilinear form c(u, v, w) = int (u_x dv/dx + a u_y dv/dy) . w.

    Precomputes the per-cell tables E_e[t,p,q,r] = int N_p d_e N_q N_r,
    from which the transport matrix C(w), the Jacobian block with
    respect to the transporting argument, and lifting couplings all
    follow by contraction with nodal values of w.
    """

    def __init__(self, vel: FunctionSpace):
        if vel.components != 2:
            raise ValueError("convection needs a vector velocity space")
        self.space = vel
        k = _poly_degree(vel.family)
        vals, grads, wdet = _quad_data(vel, 3 * k - 1)
        self.tables = [np.einsum("tq,qp,tqn,qr->tpnr", wdet, vals,
                                 grads[..., e], vals) for e in (0, 1)]
        # tables[e][t, p, n, r] = int N_p d_e N_n N_r

        cd = vel.cell_dofs
        n_t, nloc = cd.shape
        shape = (vel.dof_count, vel.dof_count)
        comp = np.arange(2)
        rows = (2 * cd)[:, :, None, None] + comp[None, None, None, :]
        rows = np.broadcast_to(rows, (n_t, nloc, nloc, 2))
        cols = (2 * cd)[:, None, :, None] + comp[None, None, None, :]
        cols = np.broadcast_to(cols, (n_t, nloc, nloc, 2))
        self._conv_pat = CsrPattern(rows.ravel(), cols.ravel(), shape)
        self._conv_shape = (n_t, nloc, nloc, 2)

        jrows = (2 * cd)[:, :, None, None] + comp[None, None, :, None]
        jrows = np.broadcast_to(jrows, (n_t, nloc, 2, nloc))
        jcols = {e: np.broadcast_to((2 * cd + e)[:, None, None, :],
                                    (n_t, nloc, 2, nloc)) for e in (0, 1)}
        self._jac_pat = {e: CsrPattern(jrows.ravel(), jcols[e].ravel(), shape)
                         for e in (0, 1)}

    def _nodal(self, w: np.ndarray) -> np.ndarray:
        cd = self.space.cell_dofs
        return np.stack([w[2 * cd], w[2 * cd + 1]], axis=-1)   # (t, n, 2)

    def matrix(self, w: np.ndarray) -> AffineOperator:
        """C(w; mu) acting on the transported argument (rows = test)."""
        wn = self._nodal(w)
        terms = []
        for e, tag in ((0, "one"), (1, "a")):
            loc = np.einsum("tpnr,tp->trn", self.tables[e], wn[..., e])
            full = np.broadcast_to(loc[..., None], self._conv_shape)
            terms.append((tag, self._conv_pat.assemble(full.ravel())))
        return AffineOperator(terms)

    def transport_jacobian(self, w: np.ndarray) -> AffineOperator:
        """Derivative of C(u)u with respect to the transporting slot.

        Entry (2g_r+m, 2g_a+e) = c_e(phi_a, w, phi_{r,m}); adding
        matrix(w) gives the full convective Jacobian at w.
        """
        wn = self._nodal(w)
        terms = []
        for e, tag in ((0, "one"), (1, "a")):
            loc = np.einsum("tanr,tnm->trma", self.tables[e], wn)
            terms.append((tag, self._jac_pat[e].assemble(loc.ravel())))
        return AffineOperator(terms)

    def apply(self, w: np.ndarray, v: np.ndarray, geometry: GeometryMap,
              mu) -> np.ndarray:
        return self.matrix(w).evaluate(geometry, mu) @ v


class SupgAssembler:
    """Convective part of the streamline-derivative continuity coupling.

    Handles the nonlinear term delta sum_K h_K^2 ((w . grad) u, grad q):
    ``transport(w)`` assembles its matrix in the transported argument,
    ``jacobian(w)`` the derivative with respect to the transporting
    argument, both from the shared tables
    G_e[t,p,q,r,m] = int N_p d_e N_q d_m psi_r.
    """

    def __init__(self, vel: FunctionSpace, prs: FunctionSpace, delta: float):
        self.vel = vel
        self.prs = prs
        self.delta = float(delta)
        kv = _poly_degree(vel.family)
        kp = _poly_degree(prs.family)
        deg = kv + max(kv - 1, 0) + max(kp - 1, 0)
        pts, w = triangle_rule(deg)
        lam = bary_coords(pts)
        vvals = shape_values(vel.family, lam)
        vgr = np.einsum("qni,tid->tqnd", shape_dlam(vel.family, lam),
                        vel.mesh.grad_bary)
        pgr = np.einsum("qni,tid->tqnd", shape_dlam(prs.family, lam),
                        prs.mesh.grad_bary)
        wdet = 2.0 * vel.mesh.areas[:, None] * w[None, :]
        wh2 = wdet * (vel.mesh.element_diameters ** 2)[:, None] * self.delta
        self.tables = [np.einsum("tq,qp,tqn,tqrm->tpnrm", wh2, vvals,
                                 vgr[..., e], pgr) for e in (0, 1)]

        cd = vel.cell_dofs
        pd = prs.cell_dofs
        n_t, nv = cd.shape
        npl = pd.shape[1]
        shape = (prs.n_scalar, vel.dof_count)
        comp = np.arange(2)
        trows = np.broadcast_to(pd[:, :, None, None], (n_t, npl, nv, 2))
        tcols = (2 * cd)[:, None, :, None] + comp[None, None, None, :]
        tcols = np.broadcast_to(tcols, (n_t, npl, nv, 2))
        self._t_pat = CsrPattern(trows.ravel(), tcols.ravel(), shape)

        jrows = np.broadcast_to(pd[:, :, None, None], (n_t, npl, nv, 2))
        jcols = (2 * cd)[:, None, :, None] + comp[None, None, None, :]
        jcols = np.broadcast_to(jcols, (n_t, npl, nv, 2))
        self._j_pat = CsrPattern(jrows.ravel(), jcols.ravel(), shape)

    def _nodal(self, w: np.ndarray) -> np.ndarray:
        cd = self.vel.cell_dofs
        return np.stack([w[2 * cd], w[2 * cd + 1]], axis=-1)

    def transport(self, w: np.ndarray) -> scipy.sparse.csr_matrix:
        wn = self._nodal(w)
        loc = (np.einsum("tpnrm,tp->trnm", self.tables[0], wn[..., 0])
               + np.einsum("tpnrm,tp->trnm", self.tables[1], wn[..., 1]))
        return self._t_pat.assemble(loc.ravel())

    def jacobian(self, w: np.ndarray) -> scipy.sparse.csr_matrix:
        wn = self._nodal(w)
        loc = np.stack([np.einsum("tpnrm,tnm->trp", self.tables[e], wn)
                        for e in (0, 1)], axis=-1)
        return self._j_pat.assemble(loc.ravel())


# ---------------------------------------------------------------------------
# stabilization


@dataclass
class StabilizationConfig:
    """Which residual terms are added, with what weight, and where.

    method: one of None, BrezziPitkaranta, ResidualBased, SUPGFamily,
    EdgeJumpP1P0 (strings; "None" disables).  rho selects the momentum
    test-function variant of the residual family; the continuity-row
    terms (rho = 0) are the supported default.  apply_online False
    restricts the stabilization to snapshot generation.
    """

    method: str = "None"
    delta: float = 0.0
    rho: float = 0.0
    apply_online: bool = True

    def __post_init__(self):
        if self.method not in STAB_METHODS:
            raise ValueError(f"unknown stabilization method {self.method!r}")
        if self.delta < 0.0:
            raise ValueError("delta must be non-negative")
        if self.method == "SUPGFamily" and self.rho != 0.0:
            raise ValueError("SUPGFamily supports rho = 0 only")
        if self.rho not in (0.0, 1.0, -1.0):
            raise ValueError("rho must be one of 0, 1, -1")

    @property
    def active(self) -> bool:
        return self.method != "None" and self.delta > 0.0


@dataclass
class StabilizationOperators:
    """Assembled stabilization blocks; absent blocks are None.

    The blocks enter the saddle system with minus signs:
    [[A - Suv, B^T - Spv], [B - Suq, -Spq]].
    """

    config: StabilizationConfig
    suq: AffineOperator | None = None     # pressure rows x velocity cols
    spq: AffineOperator | None = None     # pressure rows x pressure cols
    suv: AffineOperator | None = None     # velocity rows x velocity cols
    spv: AffineOperator | None = None     # velocity rows x pressure cols
    supg: SupgAssembler | None = None     # nonlinear continuity coupling


def _pressure_laplacian(prs: FunctionSpace, delta: float) -> scipy.sparse.csr_matrix:
    k = _poly_degree(prs.family)
    _, grads, wdet = _quad_data(prs, max(2 * (k - 1), 0))
    h2 = prs.mesh.element_diameters ** 2
    pat = _cell_pattern(prs.cell_dofs, prs.cell_dofs,
                        (prs.n_scalar, prs.n_scalar))
    loc = delta * np.einsum("t,tq,tqid,tqjd->tij", h2, wdet, grads, grads)
    return pat.assemble(loc)


def _edge_jump(prs: FunctionSpace, delta: float) -> scipy.sparse.csr_matrix:
    mesh = prs.mesh
    edges = mesh.interior_edges
    tris = mesh.edge_tris[edges]                     # (n_e, 2)
    h = mesh.edge_lengths[edges]
    local = np.array([[1.0, -1.0], [-1.0, 1.0]])
    vals = delta * (h ** 2)[:, None, None] * local[None, :, :]
    pat = _cell_pattern(tris, tris, (prs.n_scalar, prs.n_scalar))
    return pat.assemble(vals.ravel())


def _viscous_residual_block(vel: FunctionSpace, prs: FunctionSpace,
                            delta: float) -> scipy.sparse.csr_matrix:
    """delta sum_K h_K^2 (-lap u, grad q): exactly zero for P1 velocity."""
    lap = vel.cell_laplacians()                       # (t, nv) constants
    kp = _poly_degree(prs.family)
    _, pgr, wdet = _quad_data(prs, max(kp - 1, 0))
    int_dpsi = np.einsum("tq,tqrm->trm", wdet, pgr)   # (t, np, 2)
    h2 = vel.mesh.element_diameters ** 2
    loc = -delta * np.einsum("t,tn,trm->trnm", h2, lap, int_dpsi)
    cd = vel.cell_dofs
    pd = prs.cell_dofs
    n_t, nv = cd.shape
    npl = pd.shape[1]
    comp = np.arange(2)
    rows = np.broadcast_to(pd[:, :, None, None], (n_t, npl, nv, 2))
    cols = (2 * cd)[:, None, :, None] + comp[None, None, None, :]
    cols = np.broadcast_to(cols, (n_t, npl, nv, 2))
    pat = CsrPattern(rows.ravel(), cols.ravel(), (prs.n_scalar, vel.dof_count))
    return pat.assemble(loc.ravel())


def _momentum_residual_blocks(vel: FunctionSpace, prs: FunctionSpace,
                              delta: float, rho: float):
    """rho-weighted momentum-row blocks of the residual family.

    suv = rho delta h^2 (nu lap u, nu lap v)  [theta nu_sq],
    spv = -rho delta h^2 (grad p, nu lap v)   [theta nu].
    """
    lap = vel.cell_laplacians()
    h2 = vel.mesh.element_diameters ** 2
    areas = vel.mesh.areas
    cd = vel.cell_dofs
    n_t, nv = cd.shape
    loc = rho * delta * np.einsum("t,t,ti,tj->tij", h2, areas, lap, lap)
    pat = _cell_pattern(cd, cd, (vel.n_scalar, vel.n_scalar))
    suv = vector_expand(pat.assemble(loc))

    kp = _poly_degree(prs.family)
    _, pgr, wdet = _quad_data(prs, max(kp - 1, 0))
    int_dpsi = np.einsum("tq,tqrm->trm", wdet, pgr)
    locpv = -rho * delta * np.einsum("t,ti,trm->timr", h2, lap, int_dpsi)
    pd = prs.cell_dofs
    npl = pd.shape[1]
    comp = np.arange(2)
    rows = (2 * cd)[:, :, None, None] + comp[None, None, :, None]
    rows = np.broadcast_to(rows, (n_t, nv, 2, npl))
    cols = np.broadcast_to(pd[:, None, None, :], (n_t, nv, 2, npl))
    patpv = CsrPattern(rows.ravel(), cols.ravel(),
                       (vel.dof_count, prs.n_scalar))
    spv = patpv.assemble(locpv.ravel())
    return suv, spv


def assemble_stokes_stabilization(vel: FunctionSpace, prs: FunctionSpace,
                                  geometry: GeometryMap,
                                  config: StabilizationConfig
                                  ) -> StabilizationOperators:
    """Residual-based (or edge-jump) blocks for the linear problem."""
    if not config.active:
        raise ValueError("stabilization assembly requires an active method")
    if config.method == "EdgeJumpP1P0":
        if prs.family != "P0":
            raise ValueError("EdgeJumpP1P0 requires a P0 pressure space")
        spq = AffineOperator([("one", _edge_jump(prs, config.delta))])
        return StabilizationOperators(config, spq=spq)

    spq = AffineOperator([("one", _pressure_laplacian(prs, config.delta))])
    suq = AffineOperator([("nu", _viscous_residual_block(vel, prs,
                                                         config.delta))])
    out = StabilizationOperators(config, suq=suq, spq=spq)
    if config.rho != 0.0:
        suv, spv = _momentum_residual_blocks(vel, prs, config.delta,
                                             config.rho)
        out.suv = AffineOperator([("nu_sq", suv)])
        out.spv = AffineOperator([("nu", spv)])
    return out


def assemble_ns_stabilization(vel: FunctionSpace, prs: FunctionSpace,
                              geometry: GeometryMap,
                              config: StabilizationConfig,
                              w: FeFunction | None = None
                              ) -> StabilizationOperators:
    """Streamline-upwind blocks; the convective coupling is nonlinear.

    Returns the linear blocks plus a SupgAssembler for the transport
    term.  When ``w`` is given, suq additionally carries the transport
    matrix frozen at w (useful for direct inspection; the solvers call
    the assembler directly).
    """
    if config.method != "SUPGFamily":
        raise ValueError("Navier-Stokes stabilization uses SUPGFamily")
    out = assemble_stokes_stabilization(vel, prs, geometry,
                                        StabilizationConfig(
                                            "ResidualBased", config.delta,
                                            0.0, config.apply_online))
    out.config = config
    out.supg = SupgAssembler(vel, prs, config.delta)
    if w is not None:
        frozen = out.supg.transport(w.values)
        out.suq = AffineOperator(out.suq.terms + [("one", frozen)])
    return out


# ---------------------------------------------------------------------------
# right-hand sides


def assemble_rhs(vel: FunctionSpace, prs: FunctionSpace, geometry: GeometryMap,
                 lifting: FeFunction, problem: str = "stokes",
                 viscous: AffineOperator | None = None,
                 divergence: AffineOperator | None = None,
                 convection: ConvectionAssembler | None = None,
                 stab: StabilizationOperators | None = None,
                 body_force=None):
    """Lifting right-hand sides (fbar, gbar) as affine vectors.

    fbar = (f, v) - a(l, v) [- c(l, l, v) for Navier-Stokes];
    gbar = -b(l, q) + viscous-residual lifting term + body-force
    consistency term when stabilization is active.  The quadratic
    transport-stabilization lifting couplings are not folded in here;
    the nonlinear solvers and the reduced tensors carry them explicitly.
    """
    if problem not in ("stokes", "navier_stokes"):
        raise ValueError(f"unknown problem {problem!r}")
    lvec = lifting.values
    if viscous is None:
        viscous = assemble_viscous(vel, geometry)
    if divergence is None:
        divergence = assemble_divergence(vel, prs, geometry)

    fterms = [(tag, -(m @ lvec)) for tag, m in viscous.terms]
    if problem == "navier_stokes":
        if convection is None:
            convection = ConvectionAssembler(vel)
        for tag, m in convection.matrix(lvec).terms:
            fterms.append((tag, -(m @ lvec)))
    if body_force is not None:
        fterms.append(("one", assemble_body_force(vel, body_force)))

    gterms = [(tag, -(m @ lvec)) for tag, m in divergence.terms]
    if stab is not None and stab.config.active:
        if stab.suq is not None:
            for tag, m in stab.suq.terms:
                gterms.append((tag, m @ lvec))
        if body_force is not None and stab.config.method != "EdgeJumpP1P0":
            gterms.append(("one", assemble_stab_body_force(
                prs, body_force, stab.config.delta)))
    return AffineOperator(fterms), AffineOperator(gterms)


def dump_affine_operator(op: AffineOperator, directory, name: str) -> list[str]:
    """Write each term as MatrixMarket coordinate/array text."""
    import os

    written = []
    for i, (tag, m) in enumerate(op.terms):
        path = os.path.join(str(directory), f"{name}_q{i}_{tag}.mtx")
        scipy.io.mmwrite(path, scipy.sparse.coo_matrix(m) if
                         scipy.sparse.issparse(m) else np.atleast_2d(m),
                         precision=17)
        written.append(path)
    return written
