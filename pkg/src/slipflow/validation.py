"""Exact solutions, independent residual oracles, manufactured data, and
convergence studies.

Every exact solution ships with analytic derivatives, but the certification
oracle deliberately ignores them: it differentiates the velocity/pressure
callables with high-order centered stencils in extended precision, so a
transcription error in any formula cannot hide.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from . import geometry, norms
from .assembly import ProblemData, as_boundary_scalar
from .errors import DataError

LOG2 = float(np.log(2.0))


@dataclass
class ExactSolution:
    """Analytic velocity/pressure pair with compatible slip data."""

    name: str
    domain: geometry.DomainSpec
    data: ProblemData
    velocity: callable                  # (m, 2) points -> (m, 2)
    pressure: callable                  # (m, 2) points -> (m,)
    velocity_jacobian: callable = None  # -> (m, 2, 2), J[a, b] = du_a/dx_b
    velocity_laplacian: callable = None
    pressure_gradient: callable = None
    model: str = "navier-stokes"        # or "stokes"
    params: dict = field(default_factory=dict)


# -- the explicit annulus family --------------------------------------------

def _annulus_domain(r_in=1.0, r_out=2.0, center=(0.0, 0.0)):
    return geometry.DomainSpec(
        [geometry.Circle(center, r_out), geometry.Circle(center, r_in)],
        labels=["outer", "inner"])


def hamel(k):
    """Radial-plus-swirl family on the annulus 1 < |x| < 2.

    All members share the same boundary data (the non-uniqueness
    exhibit); the swirl strength k sets the circulation 2*pi*k around
    the hole.  The pressure comes from integrating the radial momentum
    balance p'(r) = u_theta^2/r - u_r u_r', normalized to zero mean.
    """
    k = float(k)

    def velocity(x):
        x = np.asarray(x)
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        r = np.sqrt(r2)
        perp = np.stack([-x[:, 1], x[:, 0]], axis=1)
        return -3.0 * x / r2[:, None] + (k * (3.0 * r - 2.0) / (r * r2))[:, None] * perp

    # p(r) = -9/(2 r^2) + k^2 (-9/(2 r^2) + 4/r^3 - 1/r^4) + C, C fixing zero mean
    mean = (-9.0 * np.log(2.0) + k * k * (-9.0 * np.log(2.0) + 13.0 / 4.0)) / 3.0

    def pressure(x):
        x = np.asarray(x)
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        r = np.sqrt(r2)
        return (-4.5 / r2 + k * k * (-4.5 / r2 + 4.0 / r2 / r - 1.0 / r2 ** 2)) - mean

    def velocity_jacobian(x):
        x = np.asarray(x)
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        r = np.sqrt(r2)
        perp = np.stack([-x[:, 1], x[:, 0]], axis=1)
        phi = -3.0 / r2
        dphi = 6.0 / (r2 * r)
        chi = k * (3.0 / r2 - 2.0 / (r2 * r))
        dchi = k * (-6.0 / (r2 * r) + 6.0 / (r2 * r2))
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        J = (dphi / r)[:, None, None] * x[:, :, None] * x[:, None, :]
        J += phi[:, None, None] * np.eye(2)
        J += (dchi / r)[:, None, None] * perp[:, :, None] * x[:, None, :]
        J += chi[:, None, None] * rot
        return J

    def velocity_laplacian(x):
        x = np.asarray(x)
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        r = np.sqrt(r2)
        perp = np.stack([-x[:, 1], x[:, 0]], axis=1)
        return (-6.0 * k / (r2 ** 2 * r))[:, None] * perp

    def pressure_gradient(x):
        x = np.asarray(x)
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        r = np.sqrt(r2)
        dp = 9.0 / (r2 * r) + k * k * (9.0 / (r2 * r) - 12.0 / r2 ** 2 + 4.0 / (r2 ** 2 * r))
        return (dp / r)[:, None] * x

    data = ProblemData(nu=1.0, beta=(0.75, 0.0), a_star=(-1.5, 3.0),
                       b_tau=(0.0, 0.0), f=None)
    return ExactSolution(
        name=f"hamel(k={k:g})", domain=_annulus_domain(), data=data,
        velocity=velocity, pressure=pressure,
        velocity_jacobian=velocity_jacobian,
        velocity_laplacian=velocity_laplacian,
        pressure_gradient=pressure_gradient,
        params={"k": k, "hole_circulation": 2.0 * np.pi * k})


def hamel_velocity_gap(k0, k1):
    """Closed-form L2 distance between two family members' velocities."""
    dk = abs(k1 - k0)
    integral = 2.0 * np.pi * (9.0 * np.log(2.0) - 4.5)
    return dk * np.sqrt(integral)


def rigid_rotation(b, center=(0.0, 0.0), domain=None):
    """Rotation around `center`: a zero-data solution on symmetric domains.

    The pressure |u|^2/2 is kept unshifted so the total head on a circle
    of radius rho around the center is exactly (b * rho)^2.
    """
    center = np.asarray(center, float)
    if domain is None:
        domain = _annulus_domain(center=tuple(center))
    sym = geometry.classify_symmetry(domain)
    if sym.circularly_symmetric is None or \
            np.hypot(*(np.asarray(sym.circularly_symmetric) - center)) > 1e-9 * domain.diameter:
        raise DataError("rigid rotation needs a circularly symmetric domain about its center")
    b = float(b)

    def velocity(x):
        rel = np.asarray(x) - center
        return b * np.stack([-rel[:, 1], rel[:, 0]], axis=1)

    def pressure(x):
        rel = np.asarray(x) - center
        return 0.5 * b * b * (rel[:, 0] ** 2 + rel[:, 1] ** 2)

    def velocity_jacobian(x):
        n = len(np.asarray(x))
        J = np.zeros((n, 2, 2))
        J[:, 0, 1] = -b
        J[:, 1, 0] = b
        return J

    def velocity_laplacian(x):
        return np.zeros_like(np.asarray(x, float))

    def pressure_gradient(x):
        return b * b * (np.asarray(x) - center)

    ncomp = domain.n_components
    data = ProblemData(nu=1.0, beta=(0.0,) * ncomp, a_star=(0.0,) * ncomp,
                       b_tau=(0.0,) * ncomp, f=None)
    return ExactSolution(
        name=f"rigid_rotation(b={b:g})", domain=domain, data=data,
        velocity=velocity, pressure=pressure,
        velocity_jacobian=velocity_jacobian,
        velocity_laplacian=velocity_laplacian,
        pressure_gradient=pressure_gradient,
        params={"b": b, "center": tuple(center)})


def slip_couette(r_in=1.0, r_out=2.0, nu=1.0, beta=(1.0, 1.0), g=(1.0, 2.0)):
    """Azimuthal Stokes flow A r + B/r driven by tangential tractions.

    (A, B) solve the 2x2 system obtained by writing the slip condition
    on each circle with S_{r theta} = -2B/r^2 and tau = (n2, -n1):
    outer:  -beta0*b*A + (2 nu/b^2 - beta0/b) B = g0
    inner:   beta1*a*A + (2 nu/a^2 + beta1/a) B = g1
    """
    a, bb = float(r_in), float(r_out)
    beta0, beta1 = float(beta[0]), float(beta[1])
    g0, g1 = float(g[0]), float(g[1])
    mat = np.array([
        [-beta0 * bb, 2.0 * nu / bb ** 2 - beta0 / bb],
        [beta1 * a, 2.0 * nu / a ** 2 + beta1 / a],
    ])
    if abs(np.linalg.det(mat)) < 1e-14 * max(1.0, abs(mat).max() ** 2):
        raise DataError("slip Couette system is singular (rigid rotation undetermined)")
    A, B = np.linalg.solve(mat, np.array([g0, g1]))

    def velocity(x):
        x = np.asarray(x)
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        perp = np.stack([-x[:, 1], x[:, 0]], axis=1)
        return (A + B / r2)[:, None] * perp

    def pressure(x):
        return np.zeros(len(np.asarray(x)))

    def velocity_jacobian(x):
        x = np.asarray(x)
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        r = np.sqrt(r2)
        perp = np.stack([-x[:, 1], x[:, 0]], axis=1)
        psi = A + B / r2
        dpsi = -2.0 * B / (r2 * r)
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        J = (dpsi / r)[:, None, None] * perp[:, :, None] * x[:, None, :]
        J += psi[:, None, None] * rot
        return J

    def velocity_laplacian(x):
        return np.zeros_like(np.asarray(x, float))

    def pressure_gradient(x):
        return np.zeros_like(np.asarray(x, float))

    data = ProblemData(nu=nu, beta=(beta0, beta1), a_star=(0.0, 0.0),
                       b_tau=(g0, g1), f=None)
    return ExactSolution(
        name="slip_couette", domain=_annulus_domain(a, bb), data=data,
        velocity=velocity, pressure=pressure,
        velocity_jacobian=velocity_jacobian,
        velocity_laplacian=velocity_laplacian,
        pressure_gradient=pressure_gradient,
        model="stokes", params={"A": float(A), "B": float(B)})


# -- independent finite-difference oracles -----------------------------------

def _fd_first(fn, x, h):
    """Fourth-order centered first derivatives of fn: (m, ..., 2) output."""
    out = []
    for axis in range(2):
        e = np.zeros(2, dtype=x.dtype)
        e[axis] = h
        d = (fn(x - 2 * e) - 8 * fn(x - e) + 8 * fn(x + e) - fn(x + 2 * e)) / (12 * h)
        out.append(d)
    return np.stack(out, axis=-1)


def _fd_laplacian(fn, x, h):
    total = None
    for axis in range(2):
        e = np.zeros(2, dtype=x.dtype)
        e[axis] = h
        d2 = (-fn(x + 2 * e) + 16 * fn(x + e) - 30 * fn(x)
              + 16 * fn(x - e) - fn(x - 2 * e)) / (12 * h * h)
        total = d2 if total is None else total + d2
    return total


def sample_interior_points(domain, count, rng, margin=0.02):
    """Uniform rejection sample of interior points away from the boundary."""
    lo = domain.curves[0].point(np.linspace(0, 1, 128)).min(axis=0)
    hi = domain.curves[0].point(np.linspace(0, 1, 128)).max(axis=0)
    pad = margin * domain.diameter
    pts = []
    while len(pts) < count:
        cand = rng.uniform(lo, hi, size=(4 * count, 2))
        keep = domain.contains(cand)
        for curve in domain.curves:
            _, dist = curve.project(cand)
            keep &= dist > pad
        pts.extend(cand[keep][: count - len(pts)])
    return np.asarray(pts)


def momentum_residual(sol, points, step=None):
    """Max norm of the momentum residual via extended-precision stencils."""
    h = np.longdouble(step if step is not None else 1e-5 * sol.domain.diameter)
    x = np.asarray(points, np.longdouble)
    u = np.asarray(sol.velocity(x), np.longdouble)
    J = _fd_first(sol.velocity, x, h)                 # [m, 2, 2]
    lap = _fd_laplacian(sol.velocity, x, h)
    gp = _fd_first(sol.pressure, x, h)                # [m, 2]
    f = np.zeros_like(u)
    if sol.data.f is not None and callable(sol.data.f):
        f = np.asarray(sol.data.f(x), np.longdouble)
    resid = -sol.data.nu * lap + gp - f
    if sol.model == "navier-stokes":
        resid = resid + np.einsum("mab,mb->ma", J, u)
    return float(np.max(np.abs(resid.astype(float))))


def continuity_residual(sol, points, step=None):
    h = np.longdouble(step if step is not None else 1e-5 * sol.domain.diameter)
    x = np.asarray(points, np.longdouble)
    J = _fd_first(sol.velocity, x, h)
    return float(np.max(np.abs((J[:, 0, 0] + J[:, 1, 1]).astype(float))))


def slip_residual(sol, component, n_samples=64, step=None):
    """Max violation of the tangential stress balance on one component."""
    h = np.longdouble(step if step is not None else 1e-6 * sol.domain.diameter)
    t = (np.arange(n_samples) + 0.31) / n_samples
    pts, n, tau, _ = geometry.frames_at(sol.domain, component, t)
    x = np.asarray(pts, np.longdouble)
    J = _fd_first(sol.velocity, x, h)
    S = J + np.swapaxes(J, 1, 2)
    u = np.asarray(sol.velocity(x), np.longdouble)
    beta = np.asarray(as_boundary_scalar(sol.data.beta[component])(t, pts), float)
    b = np.asarray(as_boundary_scalar(sol.data.b_tau[component])(t, pts), float)
    Sn = np.einsum("mab,mb->ma", S.astype(float), n)
    traction_tau = sol.data.nu * np.einsum("ma,ma->m", Sn, tau)
    u_tau = np.einsum("ma,ma->m", u.astype(float), tau)
    resid = traction_tau + beta * u_tau - b
    normal_gap = np.einsum("ma,ma->m", u.astype(float), n) - np.asarray(
        as_boundary_scalar(sol.data.a_star[component])(t, pts), float)
    return float(max(np.max(np.abs(resid)), np.max(np.abs(normal_gap))))


def certify(sol, n_interior=100, seed=0):
    """Run the full oracle battery; returns the observed maxima."""
    rng = np.random.default_rng(seed)
    pts = sample_interior_points(sol.domain, n_interior, rng)
    report = {
        "momentum": momentum_residual(sol, pts),
        "continuity": continuity_residual(sol, pts),
        "slip": max(slip_residual(sol, c) for c in range(sol.domain.n_components)),
    }
    return report


# -- manufactured data --------------------------------------------------------

def mms_generate(u_exact, p_exact, domain, nu, beta, derivatives=None,
                 model="navier-stokes"):
    """Manufacture slip-problem data for a given solenoidal velocity field.

    derivatives: optional dict with keys 'jacobian', 'laplacian',
    'pressure_gradient'; extended-precision stencils fill any missing entry.
    Raises DataError when u_exact is not divergence-free.
    """
    derivatives = dict(derivatives or {})
    h = 1e-5 * domain.diameter

    def jac(x):
        if "jacobian" in derivatives:
            return np.asarray(derivatives["jacobian"](x))
        return _fd_first(u_exact, np.asarray(x, np.longdouble), np.longdouble(h)).astype(float)

    def lap(x):
        if "laplacian" in derivatives:
            return np.asarray(derivatives["laplacian"](x))
        return _fd_laplacian(u_exact, np.asarray(x, np.longdouble), np.longdouble(h)).astype(float)

    def pgrad(x):
        if "pressure_gradient" in derivatives:
            return np.asarray(derivatives["pressure_gradient"](x))
        return _fd_first(p_exact, np.asarray(x, np.longdouble), np.longdouble(h)).astype(float)

    rng = np.random.default_rng(7)
    check = sample_interior_points(domain, 50, rng)
    Jc = jac(check)
    div = np.abs(Jc[:, 0, 0] + Jc[:, 1, 1])
    scale = max(1.0, float(np.max(np.abs(Jc))))
    if np.max(div) > 1e-8 * scale:
        raise DataError(f"manufactured velocity is not solenoidal (max div {np.max(div):.3e})")

    def f(points):
        x = np.asarray(points, float)
        u = np.asarray(u_exact(x), float)
        out = -nu * lap(x) + pgrad(x)
        if model == "navier-stokes":
            out = out + np.einsum("mab,mb->ma", jac(x), u)
        return out

    beta_fns = [as_boundary_scalar(b) for b in beta]

    def make_a(comp):
        def a_fn(t, pts):
            _, n, _, _ = geometry.frames_at(domain, comp, t)
            u = np.asarray(u_exact(np.asarray(pts, float)), float)
            return np.einsum("ma,ma->m", u, n)
        return a_fn

    def make_b(comp):
        def b_fn(t, pts):
            _, n, tau, _ = geometry.frames_at(domain, comp, t)
            x = np.asarray(pts, float)
            J = jac(x)
            S = J + np.swapaxes(J, 1, 2)
            Sn = np.einsum("mab,mb->ma", S, n)
            u = np.asarray(u_exact(x), float)
            return (nu * np.einsum("ma,ma->m", Sn, tau)
                    + beta_fns[comp](t, x) * np.einsum("ma,ma->m", u, tau))
        return b_fn

    ncomp = domain.n_components
    return ProblemData(
        nu=nu, beta=tuple(beta),
        a_star=tuple(make_a(c) for c in range(ncomp)),
        b_tau=tuple(make_b(c) for c in range(ncomp)),
        f=f)


# -- convergence studies ------------------------------------------------------

@dataclass
class ConvergenceRow:
    level: int
    h: float
    eL2_u: float
    order_u: float
    eH1_u: float
    order_h1: float
    eL2_p: float
    order_p: float


@dataclass
class ConvergenceTable:
    rows: list

    def observed_orders(self):
        return {
            "L2_u": [r.order_u for r in self.rows[1:]],
            "H1_u": [r.order_h1 for r in self.rows[1:]],
            "L2_p": [r.order_p for r in self.rows[1:]],
        }

    def to_csv(self, path=None, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            print(f"# {line}", file=buf)
        print("level,h,eL2_u,order,eH1_u,order,eL2_p,order", file=buf)
        for r in self.rows:
            print(f"{r.level},{r.h:.12g},{r.eL2_u:.12g},{r.order_u:.6g},"
                  f"{r.eH1_u:.12g},{r.order_h1:.6g},{r.eL2_p:.12g},{r.order_p:.6g}",
                  file=buf)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def interpolation_solver(exact):
    """A 'solver' that just interpolates the exact fields on the mesh."""
    from .linear_solvers import FlowState

    def solve(mesh, data):
        coords = mesh.p2_coords()
        u = np.asarray(exact.velocity(coords), float).ravel()
        p = np.asarray(exact.pressure(mesh.vertices), float)
        return FlowState(mesh=mesh, nu=data.nu, velocity=u, pressure=p,
                         metadata={"problem": "interpolation"})
    return solve


def convergence_study(exact, solver, meshes):
    """Errors and observed orders of `solver` against an exact solution.

    solver: callable(mesh, ProblemData) -> FlowState.  meshes: a
    refinement sequence (at least 2 levels; 3+ for meaningful orders).
    """
    rows = []
    p_scale = None
    for level, mesh in enumerate(meshes):
        flow = solver(mesh, exact.data)
        h = mesh.max_diameter()
        e_u = norms.velocity_error_l2(mesh, flow.velocity, exact.velocity)
        e_h1 = norms.velocity_error_h1(mesh, flow.velocity, exact.velocity_jacobian)
        if p_scale is None:
            pts_ref = mesh.vertices
            p_scale = float(np.max(np.abs(exact.pressure(pts_ref))))
        relative_p = p_scale > 1e-12
        e_p = norms.pressure_error_l2(mesh, flow.pressure, exact.pressure,
                                      relative=relative_p)
        if rows:
            prev = rows[-1]
            ratio = np.log(prev.h / h) / LOG2

            def order(a, b):
                if not (a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b)):
                    return float("nan")
                return float(np.log(a / b) / LOG2 / ratio)

            rows.append(ConvergenceRow(level, h, e_u, order(prev.eL2_u, e_u),
                                       e_h1, order(prev.eH1_u, e_h1),
                                       e_p, order(prev.eL2_p, e_p)))
        else:
            rows.append(ConvergenceRow(level, h, e_u, float("nan"),
                                       e_h1, float("nan"), e_p, float("nan")))
    return ConvergenceTable(rows=rows)
