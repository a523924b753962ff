"""Discrete forms on the quadratic-velocity / linear-pressure pair.

All matrices are assembled in Cartesian velocity components; the slip
constraint rotates each boundary node's dof pair into its (n, tau) frame
and eliminates the normal dof, which is the discrete counterpart of
working in the space of fields with prescribed normal trace.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import elements, geometry
from .errors import CompatibilityError, DataError, MeshError
from .quadrature import interval_rule, triangle_rule

VOLUME_DEGREE = 6
ERROR_DEGREE = 10
EDGE_POINTS = 8


# -- problem data ----------------------------------------------------------

def as_boundary_scalar(value):
    """Normalize a per-component boundary scalar to callable(t, x) -> array."""
    if callable(value):
        return value
    const = float(value)
    return lambda t, x, c=const: np.full(np.shape(t), c)


@dataclass
class ProblemData:
    """Viscosity, volume force and per-component boundary data.

    beta, a_star, b_tau are sequences with one entry per boundary
    component; each entry is a constant or a callable(t, points).
    f is None, a callable(points) -> (n, 2), or a per-node array.
    """

    nu: float
    beta: tuple
    a_star: tuple
    b_tau: tuple
    f: object = None

    def __post_init__(self):
        if self.nu <= 0:
            raise DataError(f"viscosity must be positive, got {self.nu}")
        self.beta = tuple(self.beta)
        self.a_star = tuple(self.a_star)
        self.b_tau = tuple(self.b_tau)

    def component_count(self):
        return len(self.beta)

    def beta_fn(self, comp):
        return as_boundary_scalar(self.beta[comp])

    def a_fn(self, comp):
        return as_boundary_scalar(self.a_star[comp])

    def b_fn(self, comp):
        return as_boundary_scalar(self.b_tau[comp])

    def check_against(self, domain, flux_rtol=1e-8):
        """Validate data against a domain: component count, beta sign, flux."""
        if self.component_count() != domain.n_components:
            raise DataError(
                f"data has {self.component_count()} components, domain has {domain.n_components}")
        total = 0.0
        scale = 0.0
        perimeter = 0.0
        for comp in range(domain.n_components):
            a = self.a_fn(comp)
            bfun = self.beta_fn(comp)
            curve = domain.curves[comp]
            s, w = interval_rule(8)
            for k in range(16):
                t = (k + s) / 16.0
                pts = curve.point(t)
                speed = np.hypot(*curve.derivative(t).T)
                avals = np.asarray(a(t, pts), float)
                bvals = np.asarray(bfun(t, pts), float)
                if np.any(bvals < -1e-14):
                    raise DataError(f"negative friction coefficient on component {comp}")
                total += np.sum(w * avals * speed) / 16.0
                scale = max(scale, float(np.max(np.abs(avals))))
                perimeter += np.sum(w * speed) / 16.0
        tol = flux_rtol * max(scale, 1e-30) * perimeter
        if abs(total) > max(tol, 1e-14 * perimeter):
            raise CompatibilityError(
                f"total boundary flux {total:.6e} exceeds tolerance {tol:.3e}")
        return total

    def beta_identically_zero(self, domain, samples=65):
        for comp in range(domain.n_components):
            fn = self.beta_fn(comp)
            t = np.linspace(0.0, 1.0, samples)
            vals = np.asarray(fn(t, domain.curves[comp].point(t)), float)
            if np.max(np.abs(vals)) > 0:
                return False
        return True

    def component_fluxes(self, domain):
        """Exact-curve fluxes of a_star through every component."""
        out = []
        for comp in range(domain.n_components):
            a = self.a_fn(comp)
            curve = domain.curves[comp]
            s, w = interval_rule(8)
            total = 0.0
            for k in range(16):
                t = (k + s) / 16.0
                speed = np.hypot(*curve.derivative(t).T)
                total += np.sum(w * np.asarray(a(t, curve.point(t)), float) * speed) / 16.0
            out.append(float(total))
        return out


# -- dof map ---------------------------------------------------------------

class DofMap:
    """Velocity (2 dofs per quadratic node) and vertex pressure dofs."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.n_nodes = mesh.n_p2_nodes
        self.n_velocity = 2 * self.n_nodes
        self.n_pressure = mesh.n_vertices
        self.boundary_nodes = np.nonzero(mesh.node_is_boundary)[0]

    def velocity_dofs(self, nodes):
        nodes = np.asarray(nodes)
        return np.stack([2 * nodes, 2 * nodes + 1], axis=-1)

    def rotation(self):
        """Orthogonal map taking Cartesian dofs to (n, tau) dofs at boundary nodes."""
        mesh = self.mesh
        rows, cols, vals = [], [], []
        interior = np.ones(self.n_nodes, bool)
        interior[self.boundary_nodes] = False
        idx = np.nonzero(interior)[0]
        for k in (0, 1):
            rows.append(2 * idx + k)
            cols.append(2 * idx + k)
            vals.append(np.ones(len(idx)))
        b = self.boundary_nodes
        n = mesh.node_normal[b]
        tau = mesh.node_tangent[b]
        rows.extend([2 * b, 2 * b, 2 * b + 1, 2 * b + 1])
        cols.extend([2 * b, 2 * b + 1, 2 * b, 2 * b + 1])
        vals.extend([n[:, 0], n[:, 1], tau[:, 0], tau[:, 1]])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_velocity, self.n_velocity))

    def normal_dofs(self):
        """Rotated dof ids carrying the normal component at boundary nodes."""
        return 2 * self.boundary_nodes


# -- element batches -------------------------------------------------------

def _volume_batch(mesh, degree=VOLUME_DEGREE):
    pts, w = triangle_rule(degree)
    coords = mesh.triangle_coords()
    grads, det = elements.physical_gradients(coords, pts, elements.p2_grad(pts))
    if det.min() <= 0:
        raise MeshError("nonpositive Jacobian in curved element")
    dv = det * w[None, :]
    return pts, w, coords, grads, dv


def _scatter(rows, cols, vals, shape):
    return sp.csr_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)


def _vector_pattern(dofmap, nodes):
    """Row/col index grids for interleaved 12x12 element blocks."""
    nt = nodes.shape[0]
    dofs = np.empty((nt, 12), np.int64)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    rows = np.repeat(dofs, 12, axis=1)
    cols = np.tile(dofs, (1, 12))
    return dofs, rows, cols


def _interleave(block_iajb):
    """[t, i, a, j, b] element blocks -> [t, 12, 12] interleaved dofs."""
    nt = block_iajb.shape[0]
    return block_iajb.transpose(0, 1, 2, 3, 4).reshape(nt, 12, 12)


def assemble_viscous(mesh, dofmap, nu):
    """Matrix of (nu/2) * integral S(u):S(phi) over curved elements."""
    pts, w, coords, g, dv = _volume_batch(mesh)
    nodes = mesh.triangle_nodes()
    same = np.einsum("tq,tqix,tqjx->tij", dv, g, g, optimize=True)
    cross = np.einsum("tq,tqib,tqja->tiajb", dv, g, g, optimize=True)
    block = nu * (np.einsum("tij,ab->tiajb", same, np.eye(2)) + cross)
    _, rows, cols = _vector_pattern(dofmap, nodes)
    return _scatter(rows, cols, _interleave(block), (dofmap.n_velocity, dofmap.n_velocity))


def assemble_vector_mass(mesh, dofmap):
    """Velocity-space L2 mass matrix."""
    pts, w, coords, g, dv = _volume_batch(mesh)
    N = elements.p2_shape(pts)
    nodes = mesh.triangle_nodes()
    m = np.einsum("tq,qi,qj->tij", dv, N, N, optimize=True)
    block = np.einsum("tij,ab->tiajb", m, np.eye(2))
    _, rows, cols = _vector_pattern(dofmap, nodes)
    return _scatter(rows, cols, _interleave(block), (dofmap.n_velocity, dofmap.n_velocity))


def assemble_vector_gradient(mesh, dofmap):
    """Matrix of integral grad(u):grad(phi) (componentwise H1 seminorm)."""
    pts, w, coords, g, dv = _volume_batch(mesh)
    nodes = mesh.triangle_nodes()
    same = np.einsum("tq,tqix,tqjx->tij", dv, g, g, optimize=True)
    block = np.einsum("tij,ab->tiajb", same, np.eye(2))
    _, rows, cols = _vector_pattern(dofmap, nodes)
    return _scatter(rows, cols, _interleave(block), (dofmap.n_velocity, dofmap.n_velocity))


def assemble_divergence(mesh, dofmap):
    """Matrix B with (B u)_q = integral q div(u); pressure rows."""
    pts, w, coords, g, dv = _volume_batch(mesh)
    P = elements.p1_shape(pts)
    nodes = mesh.triangle_nodes()
    blk = np.einsum("tq,qk,tqjb->tkjb", dv, P, g, optimize=True)  # [t, 3, 6, 2]
    nt = len(nodes)
    vals = blk.reshape(nt, 3, 12)
    prow = np.repeat(mesh.triangles, 12, axis=1)
    dofs = np.empty((nt, 12), np.int64)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    pcol = np.tile(dofs, (1, 3))
    return _scatter(prow, pcol, vals, (dofmap.n_pressure, dofmap.n_velocity))


def assemble_pressure_mean(mesh, dofmap):
    """Vector m with m_q = integral of the pressure basis function q."""
    pts, w, coords, g, dv = _volume_batch(mesh)
    P = elements.p1_shape(pts)
    contrib = np.einsum("tq,qk->tk", dv, P)
    m = np.zeros(dofmap.n_pressure)
    np.add.at(m, mesh.triangles, contrib)
    return m


def velocity_at(mesh, coeffs, pts=None, batch=None):
    """Velocity field values at volume quadrature points, [t, q, 2]."""
    if pts is None:
        pts, _ = triangle_rule(VOLUME_DEGREE)
    N = elements.p2_shape(pts)
    nodal = coeffs.reshape(-1, 2)[mesh.triangle_nodes()]
    return np.einsum("qi,tix->tqx", N, nodal)


def velocity_gradient_at(mesh, coeffs, grads):
    """Velocity gradients du_a/dx_b at quadrature points, [t, q, 2, 2]."""
    nodal = coeffs.reshape(-1, 2)[mesh.triangle_nodes()]
    return np.einsum("tia,tqib->tqab", nodal, grads)


def assemble_convection(mesh, dofmap, w_coeffs, lam=1.0):
    """Matrix C(w) of integral ((w . grad) u) . phi, plus N(w) = C(w) w."""
    pts, wq, coords, g, dv = _volume_batch(mesh)
    N = elements.p2_shape(pts)
    nodes = mesh.triangle_nodes()
    wq_field = velocity_at(mesh, w_coeffs, pts)
    conv = np.einsum("tqx,tqjx->tqj", wq_field, g)          # (w . grad) phi_j
    scal = lam * np.einsum("tq,qi,tqj->tij", dv, N, conv, optimize=True)
    block = np.einsum("tij,ab->tiajb", scal, np.eye(2))
    _, rows, cols = _vector_pattern(dofmap, nodes)
    C = _scatter(rows, cols, _interleave(block), (dofmap.n_velocity, dofmap.n_velocity))
    return C, C @ w_coeffs


def assemble_convection_newton(mesh, dofmap, w_coeffs, lam=1.0):
    """Matrix of integral ((u . grad) w) . phi for the Newton linearization."""
    pts, wq, coords, g, dv = _volume_batch(mesh)
    N = elements.p2_shape(pts)
    nodes = mesh.triangle_nodes()
    gw = velocity_gradient_at(mesh, w_coeffs, g)            # [t, q, a, b]
    block = lam * np.einsum("tq,qi,qj,tqab->tiajb", dv, N, N, gw, optimize=True)
    _, rows, cols = _vector_pattern(dofmap, nodes)
    return _scatter(rows, cols, _interleave(block), (dofmap.n_velocity, dofmap.n_velocity))


def load_volume(mesh, dofmap, f):
    """Load vector of <f, phi> for f callable, per-node array, or None."""
    F = np.zeros(dofmap.n_velocity)
    if f is None:
        return F
    pts, w, coords, g, dv = _volume_batch(mesh)
    N = elements.p2_shape(pts)
    if callable(f):
        x = elements.mapped_points(coords, pts)
        fval = np.asarray(f(x.reshape(-1, 2)), float).reshape(x.shape)
    else:
        fnod = np.asarray(f, float).reshape(-1, 2)[mesh.triangle_nodes()]
        fval = np.einsum("qi,tix->tqx", N, fnod)
    contrib = np.einsum("tq,qi,tqx->tix", dv, N, fval, optimize=True)
    nodes = mesh.triangle_nodes()
    np.add.at(F, 2 * nodes, contrib[:, :, 0])
    np.add.at(F, 2 * nodes + 1, contrib[:, :, 1])
    return F


# -- boundary quadrature ---------------------------------------------------

@dataclass
class BoundaryQuadrature:
    """Per-edge quadrature on the curved quadratic boundary edges."""

    nodes3: np.ndarray     # [nb, 3] P2 node ids (first, second, mid)
    component: np.ndarray  # [nb]
    t: np.ndarray          # [nb, nq] curve parameters
    x: np.ndarray          # [nb, nq, 2] positions (isoparametric map)
    w_ds: np.ndarray       # [nb, nq] quadrature weight times arclength element
    normal: np.ndarray     # [nb, nq, 2]
    tangent: np.ndarray    # [nb, nq, 2]
    kappa: np.ndarray      # [nb, nq]
    shape: np.ndarray      # [nq, 3] edge shape functions
    dshape: np.ndarray     # [nq, 3]
    edge_len: np.ndarray   # [nb] arclength of each edge
    tri: np.ndarray        # [nb] adjacent triangle
    local: np.ndarray      # [nb] local edge in the triangle


def boundary_quadrature(mesh, n_points=EDGE_POINTS):
    s, w = interval_rule(n_points)
    Nq = elements.edge_shape(s)
    dNq = elements.edge_shape_deriv(s)
    rows = mesh.boundary_edges
    nb = len(rows)
    nodes3 = np.zeros((nb, 3), np.int64)
    comp = np.zeros(nb, np.int64)
    tq = np.zeros((nb, n_points))
    tri = np.zeros(nb, np.int64)
    local = np.zeros(nb, np.int64)
    nv = mesh.n_vertices
    coords = mesh.p2_coords()
    for k, row in enumerate(rows):
        e = row["edge"]
        a = mesh.triangles[row["tri"]][row["local"]]
        b = mesh.triangles[row["tri"]][(row["local"] + 1) % 3]
        nodes3[k] = (a, b, nv + e)
        comp[k] = row["component"]
        tq[k] = row["t0"] + s * (row["t1"] - row["t0"])
        tri[k] = row["tri"]
        local[k] = row["local"]
    pts3 = coords[nodes3]                                   # [nb, 3, 2]
    x = np.einsum("qi,kix->kqx", Nq, pts3)
    dx = np.einsum("qi,kix->kqx", dNq, pts3)
    speed = np.hypot(dx[..., 0], dx[..., 1])
    w_ds = speed * w[None, :]
    normal = np.zeros((nb, n_points, 2))
    tangent = np.zeros((nb, n_points, 2))
    kappa = np.zeros((nb, n_points))
    for c in range(mesh.domain.n_components):
        sel = comp == c
        if not sel.any():
            continue
        _, n, tau, kap = geometry.frames_at(mesh.domain, c, tq[sel].ravel())
        normal[sel] = n.reshape(-1, n_points, 2)
        tangent[sel] = tau.reshape(-1, n_points, 2)
        kappa[sel] = kap.reshape(-1, n_points)
    return BoundaryQuadrature(
        nodes3=nodes3, component=comp, t=tq, x=x, w_ds=w_ds,
        normal=normal, tangent=tangent, kappa=kappa, shape=Nq, dshape=dNq,
        edge_len=w_ds.sum(axis=1), tri=tri, local=local)


def _eval_per_component(bq, per_component_fns):
    vals = np.zeros(bq.t.shape)
    for c, fn in enumerate(per_component_fns):
        sel = bq.component == c
        if sel.any():
            vals[sel] = np.asarray(
                fn(bq.t[sel].ravel(), bq.x[sel].reshape(-1, 2)), float
            ).reshape(-1, bq.t.shape[1])
    return vals


def assemble_friction(mesh, dofmap, beta, bq=None):
    """Boundary matrix of integral beta (u . tau)(phi . tau) ds."""
    if bq is None:
        bq = boundary_quadrature(mesh)
    fns = [as_boundary_scalar(b) for b in beta]
    bvals = _eval_per_component(bq, fns)
    if np.any(bvals < -1e-14):
        raise DataError("negative friction coefficient at a boundary quadrature point")
    bvals = np.maximum(bvals, 0.0)
    # basis (N_i e_a) . tau = N_i tau_a
    blk = np.einsum("kq,kq,qi,qj,kqa,kqb->kiajb",
                    bq.w_ds, bvals, bq.shape, bq.shape, bq.tangent, bq.tangent,
                    optimize=True)
    nb = len(bq.nodes3)
    dofs = np.empty((nb, 6), np.int64)
    dofs[:, 0::2] = 2 * bq.nodes3
    dofs[:, 1::2] = 2 * bq.nodes3 + 1
    rows = np.repeat(dofs, 6, axis=1)
    cols = np.tile(dofs, (1, 6))
    vals = blk.reshape(nb, 6, 6)
    return _scatter(rows, cols, vals, (dofmap.n_velocity, dofmap.n_velocity))


def load_boundary_tangential(mesh, dofmap, b_tau, bq=None):
    """Load vector of integral b_tau (phi . tau) ds."""
    F = np.zeros(dofmap.n_velocity)
    if bq is None:
        bq = boundary_quadrature(mesh)
    fns = [as_boundary_scalar(b) for b in b_tau]
    vals = _eval_per_component(bq, fns)
    contrib = np.einsum("kq,kq,qi,kqa->kia", bq.w_ds, vals, bq.shape, bq.tangent,
                        optimize=True)
    np.add.at(F, 2 * bq.nodes3, contrib[:, :, 0])
    np.add.at(F, 2 * bq.nodes3 + 1, contrib[:, :, 1])
    return F


def circulation_functional(mesh, dofmap, component, bq=None):
    """Row vector L with L u = contour integral of u . tau over the component.

    The contour is traversed in the tau = (n2, -n1) direction.
    """
    if bq is None:
        bq = boundary_quadrature(mesh)
    L = np.zeros(dofmap.n_velocity)
    sel = bq.component == component
    contrib = np.einsum("kq,qi,kqa->kia", bq.w_ds[sel], bq.shape, bq.tangent[sel],
                        optimize=True)
    np.add.at(L, 2 * bq.nodes3[sel], contrib[:, :, 0])
    np.add.at(L, 2 * bq.nodes3[sel] + 1, contrib[:, :, 1])
    return L


def boundary_flux(mesh, coeffs, component, bq=None):
    """Contour integral of u . n over one component for a velocity field."""
    if bq is None:
        bq = boundary_quadrature(mesh)
    sel = bq.component == component
    uval = np.einsum("qi,kix->kqx", bq.shape, coeffs.reshape(-1, 2)[bq.nodes3[sel]])
    return float(np.einsum("kq,kqx,kqx->", bq.w_ds[sel], uval, bq.normal[sel]))


# -- slip constraint -------------------------------------------------------

@dataclass
class SlipConstraint:
    """Rotated basis plus elimination data for u . n = a_star at boundary nodes."""

    dofmap: DofMap
    Q: sp.csr_matrix
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray

    def reduce_matrix(self, A):
        """Rotate a velocity-velocity matrix and split (A_ff, A_fc)."""
        Ahat = (self.Q @ A) @ self.Q.T
        return Ahat[self.free][:, self.free], Ahat[self.free][:, self.fixed]

    def reduce_rows(self, B):
        """Rotate the columns of a (pressure x velocity) matrix and split."""
        Bhat = B @ self.Q.T
        return Bhat[:, self.free], Bhat[:, self.fixed]

    def reduce_vector(self, F):
        return (self.Q @ F)[self.free]

    def expand(self, u_free):
        """Rotated free dofs -> full Cartesian velocity coefficients."""
        uhat = np.zeros(self.dofmap.n_velocity)
        uhat[self.free] = u_free
        uhat[self.fixed] = self.fixed_values
        return self.Q.T @ uhat

    def restrict(self, u_full):
        """Cartesian velocity coefficients -> rotated free dofs."""
        return (self.Q @ u_full)[self.free]


def normal_trace_constraint(mesh, dofmap, a_star, flux_rtol=1e-8):
    """Build the slip constraint for prescribed normal trace a_star.

    a_star is a per-component sequence.  The nodal values are
    interpolated on the exact curve parameters of the boundary nodes.
    Raises CompatibilityError when the total flux is out of tolerance.
    """
    total = 0.0
    scale = 0.0
    perimeter = 0.0
    fns = [as_boundary_scalar(a) for a in a_star]
    for comp, curve in enumerate(mesh.domain.curves):
        s, w = interval_rule(8)
        for k in range(16):
            t = (k + s) / 16.0
            pts = curve.point(t)
            speed = np.hypot(*curve.derivative(t).T)
            avals = np.asarray(fns[comp](t, pts), float)
            total += np.sum(w * avals * speed) / 16.0
            scale = max(scale, float(np.max(np.abs(avals))))
            perimeter += np.sum(w * speed) / 16.0
    if abs(total) > max(flux_rtol * scale * perimeter, 1e-14 * perimeter):
        raise CompatibilityError(
            f"nonzero total flux {total:.6e} violates the compatibility condition")

    Q = dofmap.rotation()
    fixed = dofmap.normal_dofs()
    mask = np.ones(dofmap.n_velocity, bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    b = dofmap.boundary_nodes
    values = np.zeros(len(fixed))
    coords = mesh.p2_coords()
    for comp in range(mesh.domain.n_components):
        sel = mesh.node_component[b] == comp
        if sel.any():
            values[sel] = np.asarray(
                fns[comp](mesh.node_param[b[sel]], coords[b[sel]]), float)
    return SlipConstraint(dofmap=dofmap, Q=Q, free=free, fixed=fixed,
                          fixed_values=values)


@dataclass
class StokesSystem:
    """Unconstrained assembled blocks of the viscous slip problem."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    F: np.ndarray
    mean: np.ndarray


@dataclass
class ConstrainedSystem:
    """Stokes blocks reduced to the tangential/interior dof space."""

    constraint: SlipConstraint
    A_ff: sp.csr_matrix
    B_f: sp.csr_matrix
    F_f: np.ndarray
    G_f: np.ndarray
    mean: np.ndarray


def apply_normal_trace(mesh, dofmap, system, a_star):
    """Constrain a StokesSystem to prescribed normal trace a_star."""
    con = normal_trace_constraint(mesh, dofmap, a_star)
    A_ff, A_fc = con.reduce_matrix(system.A)
    B_f, B_c = con.reduce_rows(system.B)
    F_f = con.reduce_vector(system.F) - A_fc @ con.fixed_values
    G_f = -(B_c @ con.fixed_values)
    return ConstrainedSystem(constraint=con, A_ff=A_ff, B_f=B_f,
                             F_f=F_f, G_f=G_f, mean=system.mean)
