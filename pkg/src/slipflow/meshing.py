"""Conforming triangulations with curved quadratic boundary edges.

Velocity nodes are the vertices plus one midside node per edge; midside
nodes of boundary edges are snapped onto the exact domain curve, so
boundary-ring triangles carry a curved quadratic geometry map.  Node ids
run 0..nv-1 for vertices and nv..nv+ne-1 for edge nodes.
"""

import io

import numpy as np
from scipy.spatial import Delaunay

from . import geometry
from .errors import ConfigurationError, MeshError, MeshImportError

FORMAT_VERSION = "slipflow-mesh-1"


class Mesh:
    """Triangulation of a DomainSpec with boundary tags and frames."""

    def __init__(self, domain, vertices, triangles, snapped=True):
        self.domain = domain
        self.vertices = np.asarray(vertices, float)
        self.triangles = np.asarray(triangles, np.int64)
        self.snapped = snapped
        self._orient_ccw()
        self._build_edges()
        # filled by _attach_boundary (arrays indexed by P2 node id)
        self.edge_nodes = None
        self.boundary_edges = None
        self.node_is_boundary = None
        self.node_component = None
        self.node_param = None
        self.node_normal = None
        self.node_tangent = None
        self.node_kappa = None

    # -- construction ----------------------------------------------------

    def _orient_ccw(self):
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        flip = area2 < 0
        if flip.any():
            t[flip, 1], t[flip, 2] = t[flip, 2].copy(), t[flip, 1].copy()
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if (area2 <= 0).any():
            raise MeshError("degenerate triangle with nonpositive area")

    def _build_edges(self):
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(pairs, axis=1)
        uniq, inverse, counts = np.unique(
            key, axis=0, return_inverse=True, return_counts=True)
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: an edge is shared by more than 2 triangles")
        self.edges = uniq
        nt = len(t)
        self.tri_edges = inverse.reshape(3, nt).T
        self._edge_count = counts

    def _attach_boundary(self, bedge_list):
        """bedge_list: rows (edge_id, tri, local, component, t0, t1)."""
        nv, ne = len(self.vertices), len(self.edges)
        midpoints = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        self.edge_nodes = midpoints
        n_nodes = nv + ne
        self.node_is_boundary = np.zeros(n_nodes, bool)
        self.node_component = np.full(n_nodes, -1, np.int64)
        self.node_param = np.zeros(n_nodes)
        self.node_normal = np.zeros((n_nodes, 2))
        self.node_tangent = np.zeros((n_nodes, 2))
        self.node_kappa = np.zeros(n_nodes)

        record = np.zeros(len(bedge_list), dtype=[
            ("edge", np.int64), ("tri", np.int64), ("local", np.int64),
            ("component", np.int64), ("t0", float), ("t1", float)])
        for i, (e, tri, loc, comp, t0, t1) in enumerate(bedge_list):
            record[i] = (e, tri, loc, comp, t0, t1)
        self.boundary_edges = record

        for e, tri, loc, comp, t0, t1 in bedge_list:
            # params (t0, t1) belong to the local edge direction in `tri`
            a, b = self.triangles[tri][loc], self.triangles[tri][(loc + 1) % 3]
            self._set_node(a, comp, t0)
            self._set_node(b, comp, t1)
            self._set_node(nv + e, comp, 0.5 * (t0 + t1))
            if self.snapped:
                self.edge_nodes[e] = self.domain.curves[comp].point(
                    np.array([0.5 * (t0 + t1)]))[0]

        bnodes = np.nonzero(self.node_is_boundary)[0]
        for comp in range(self.domain.n_components):
            sel = bnodes[self.node_component[bnodes] == comp]
            if len(sel) == 0:
                continue
            _, n, tau, kappa = geometry.frames_at(self.domain, comp, self.node_param[sel])
            self.node_normal[sel] = n
            self.node_tangent[sel] = tau
            self.node_kappa[sel] = kappa

    def _set_node(self, node, comp, t):
        self.node_is_boundary[node] = True
        self.node_component[node] = comp
        self.node_param[node] = t % 1.0

    # -- queries ----------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_p2_nodes(self):
        return len(self.vertices) + len(self.edges)

    def p2_coords(self):
        """Coordinates of all P2 nodes, vertices first."""
        return np.vstack([self.vertices, self.edge_nodes])

    def triangle_nodes(self):
        """P2 node ids per triangle, shape [nt, 6] in local order."""
        nv = self.n_vertices
        return np.hstack([self.triangles, nv + self.tri_edges])

    def triangle_coords(self):
        """P2 node coordinates per triangle, shape [nt, 6, 2]."""
        return self.p2_coords()[self.triangle_nodes()]

    def max_diameter(self):
        v = self.vertices[self.triangles]
        e = [np.hypot(*(v[:, i] - v[:, j]).T) for i, j in ((0, 1), (1, 2), (2, 0))]
        return float(np.max(e))

    def min_angle(self):
        v = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = v[:, (i + 1) % 3] - v[:, i]
            b = v[:, (i + 2) % 3] - v[:, i]
            cosang = np.einsum("ij,ij->i", a, b) / (np.hypot(*a.T) * np.hypot(*b.T))
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
        return float(np.min(angles))

    def boundary_loops_ok(self):
        """Boundary edges must form one closed loop per component."""
        for comp in range(self.domain.n_components):
            rows = self.boundary_edges[self.boundary_edges["component"] == comp]
            if len(rows) == 0:
                return False
            degree = {}
            for e in rows["edge"]:
                for vtx in self.edges[e]:
                    degree[vtx] = degree.get(vtx, 0) + 1
            if any(d != 2 for d in degree.values()):
                return False
            # connectivity: walk the loop
            adj = {}
            for e in rows["edge"]:
                va, vb = self.edges[e]
                adj.setdefault(va, []).append(vb)
                adj.setdefault(vb, []).append(va)
            start = next(iter(adj))
            seen = {start}
            stack = [start]
            while stack:
                for nxt in adj[stack.pop()]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            if len(seen) != len(degree):
                return False
        return True

    def validate(self):
        """Check the mesh invariants; raises MeshError on violation."""
        if not self.boundary_loops_ok():
            raise MeshError("boundary edges do not form one closed loop per component")
        interior = np.ones(len(self.edges), bool)
        interior[self.boundary_edges["edge"]] = False
        if not np.all(self._edge_count[interior] == 2):
            raise MeshError("interior edge not shared by exactly two triangles")
        if self.snapped:
            tol = 1e-10 * self.domain.diameter
            coords = self.p2_coords()
            for comp in range(self.domain.n_components):
                sel = np.nonzero(self.node_is_boundary & (self.node_component == comp))[0]
                on_curve = self.domain.curves[comp].point(self.node_param[sel])
                gap = np.hypot(*(coords[sel] - on_curve).T)
                if gap.max() > tol:
                    raise MeshError(
                        f"boundary node off component {comp} by {gap.max():.3e}")
        return self


def _unwrap(t0, t1):
    """Choose the branch of t1 closest to t0 (curve params are periodic)."""
    while t1 - t0 > 0.5:
        t1 -= 1.0
    while t1 - t0 < -0.5:
        t1 += 1.0
    return t0, t1


def mesh_annulus(r_in, r_out, n_radial, n_angular):
    """Structured triangulation of the annulus r_in < |x| < r_out.

    Component 0 is the outer circle, component 1 the inner circle.
    """
    if not (0 < r_in < r_out):
        raise ConfigurationError(f"need 0 < r_in < r_out, got ({r_in}, {r_out})")
    if n_radial < 2 or n_angular < 8:
        raise ConfigurationError("need n_radial >= 2 and n_angular >= 8")
    if n_angular % 2:
        raise ConfigurationError("n_angular must be even (mirror-symmetric grid)")

    domain = geometry.DomainSpec(
        [geometry.Circle((0.0, 0.0), r_out), geometry.Circle((0.0, 0.0), r_in)],
        labels=["outer", "inner"])

    radii = np.linspace(r_in, r_out, n_radial + 1)
    theta = 2.0 * np.pi * np.arange(n_angular) / n_angular
    rr, tt = np.meshgrid(radii, theta, indexing="ij")
    vertices = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])

    def vid(i, j):
        return i * n_angular + (j % n_angular)

    tris = []
    for i in range(n_radial):
        for j in range(n_angular):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            # alternate the quad diagonal across the x1-axis so the
            # triangulation is mirror-symmetric (needed for symmetric solves)
            if j < n_angular // 2:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))
    mesh = Mesh(domain, vertices, np.array(tris), snapped=True)

    # tag boundary edges by walking each ring
    edge_lookup = {tuple(e): k for k, e in enumerate(np.sort(mesh.edges, axis=1).tolist())}
    tri_of_edge = _edge_to_triangles(mesh)
    bedges = []
    for comp, ring_i, radius in ((0, n_radial, r_out), (1, 0, r_in)):
        for j in range(n_angular):
            va, vb = vid(ring_i, j), vid(ring_i, j + 1)
            e = edge_lookup[tuple(sorted((va, vb)))]
            (tri, loc), = tri_of_edge[e]
            a = mesh.triangles[tri][loc]
            t_a = (j if a == va else j + 1) / n_angular
            t_b = (j + 1 if a == va else j) / n_angular
            t_a, t_b = _unwrap(t_a, t_b)
            bedges.append((e, tri, loc, comp, t_a, t_b))
    mesh._attach_boundary(bedges)
    return mesh.validate()


def _edge_to_triangles(mesh):
    """Map edge id -> list of (triangle, local edge index)."""
    out = [[] for _ in range(len(mesh.edges))]
    for tri in range(len(mesh.triangles)):
        for loc in range(3):
            out[mesh.tri_edges[tri, loc]].append((tri, loc))
    return out


def _tag_boundary_by_projection(mesh, max_rel_dist=0.1, snap_vertices=False):
    """Match topological boundary edges to the nearest domain curve."""
    tri_of_edge = _edge_to_triangles(mesh)
    boundary = [e for e in range(len(mesh.edges)) if len(tri_of_edge[e]) == 1]
    bedges = []
    for e in boundary:
        va, vb = mesh.edges[e]
        (tri, loc), = tri_of_edge[e]
        a = mesh.triangles[tri][loc]
        b = mesh.triangles[tri][(loc + 1) % 3]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        elen = np.hypot(*(pb - pa))
        best = None
        for comp, curve in enumerate(mesh.domain.curves):
            (ta, tb), dist = curve.project(np.array([pa, pb]))
            worst = dist.max()
            if best is None or worst < best[0]:
                best = (worst, comp, ta, tb)
        worst, comp, ta, tb = best
        if worst > max_rel_dist * elen:
            raise MeshImportError(
                f"boundary edge ({va}, {vb}) lies {worst:.3e} from every domain curve")
        ta, tb = _unwrap(ta, tb)
        bedges.append((e, tri, loc, comp, ta, tb))
        if snap_vertices:
            curve = mesh.domain.curves[comp]
            mesh.vertices[a] = curve.point(np.array([ta]))[0]
            mesh.vertices[b] = curve.point(np.array([tb]))[0]
    mesh._attach_boundary(bedges)
    return mesh


def mesh_disk_with_holes(domain, target_h, smooth_rounds=6):
    """Delaunay mesh of a circle-bounded domain with circular holes."""
    for curve in domain.curves:
        if not isinstance(curve, geometry.Circle):
            raise ConfigurationError("built-in generator supports circles only; import a mesh instead")
    outer = domain.curves[0]
    holes = domain.curves[1:]
    for i, hi in enumerate(holes):
        gap = outer.radius - np.hypot(*(hi.center - outer.center)) - hi.radius
        if gap < 3.0 * target_h:
            raise MeshError(f"hole {i + 1} too close to the outer boundary for target_h")
        for j in range(i + 1, len(holes)):
            hj = holes[j]
            gap = np.hypot(*(hi.center - hj.center)) - hi.radius - hj.radius
            if gap < 3.0 * target_h:
                raise MeshError(f"holes {i + 1} and {j + 1} too close for target_h")

    boundary_pts = []
    for curve in domain.curves:
        n = max(16, int(np.ceil(2.0 * np.pi * curve.radius / target_h)))
        t = np.arange(n) / n
        boundary_pts.append(curve.point(t))
    n_boundary = sum(len(p) for p in boundary_pts)

    # hexagonal interior lattice, kept away from all boundaries
    c, R = outer.center, outer.radius
    dy = target_h * np.sqrt(3.0) / 2.0
    rows = int(np.ceil(2 * R / dy)) + 1
    pts = []
    for k in range(rows + 1):
        y = c[1] - R + k * dy
        offset = 0.5 * target_h if k % 2 else 0.0
        x = np.arange(c[0] - R + offset, c[0] + R + 0.5 * target_h, target_h)
        pts.append(np.column_stack([x, np.full(len(x), y)]))
    interior = np.vstack(pts)
    clear = 0.65 * target_h
    keep = np.hypot(*(interior - c).T) < R - clear
    for hole in holes:
        keep &= np.hypot(*(interior - hole.center).T) > hole.radius + clear
    interior = interior[keep]

    points = np.vstack(boundary_pts + [interior])
    for _ in range(smooth_rounds):
        tri = Delaunay(points)
        simplices = _inside_triangles(tri.simplices, points, domain)
        # Laplacian smoothing of interior points only
        neighbor_sum = np.zeros_like(points)
        neighbor_cnt = np.zeros(len(points))
        for a, b in _tri_edge_pairs(simplices):
            neighbor_sum[a] += points[b]
            neighbor_cnt[a] += 1
        movable = np.arange(len(points)) >= n_boundary
        ok = movable & (neighbor_cnt > 0)
        points[ok] = neighbor_sum[ok] / neighbor_cnt[ok, None]

    tri = Delaunay(points)
    simplices = _inside_triangles(tri.simplices, points, domain)
    used = np.unique(simplices)
    remap = -np.ones(len(points), np.int64)
    remap[used] = np.arange(len(used))
    mesh = Mesh(domain, points[used], remap[simplices], snapped=True)
    _tag_boundary_by_projection(mesh)
    mesh.validate()
    if mesh.min_angle() < 20.0:
        raise MeshError(f"mesh quality too low: min angle {mesh.min_angle():.1f} deg")
    return mesh


def _tri_edge_pairs(simplices):
    pairs = np.concatenate([simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [2, 0]]])
    return np.vstack([pairs, pairs[:, ::-1]])


def _inside_triangles(simplices, points, domain):
    centroid = points[simplices].mean(axis=1)
    return simplices[domain.contains(centroid)]


def refine_nested(mesh):
    """Uniform refinement that keeps the parent curved geometry exactly.

    Children of a curved triangle take their new midside nodes from the
    parent quadratic map, so the refined finite element spaces nest
    inside the parent spaces.  Boundary nodes are not re-snapped.
    """
    from .elements import p2_shape

    nv = mesh.n_vertices
    new_vertices = mesh.p2_coords()  # old vertices + old edge nodes
    old_tri_nodes = mesh.triangle_nodes()
    children = []
    child_parent = []
    for tn in old_tri_nodes:
        v0, v1, v2, m01, m12, m20 = tn
        children.extend([
            (v0, m01, m20), (v1, m12, m01), (v2, m20, m12), (m01, m12, m20)])
    for p in range(len(old_tri_nodes)):
        child_parent.extend([p] * 4)
    new_mesh = Mesh(mesh.domain, new_vertices, np.array(children), snapped=False)

    # place new edge nodes via the parent quadratic maps
    coords = mesh.triangle_coords()
    ref = {
        (0, 1): (0.5, 0.0), (1, 2): (0.5, 0.5), (2, 0): (0.0, 0.5),
        (0, 3): (0.25, 0.0), (3, 1): (0.75, 0.0),
        (1, 4): (0.75, 0.25), (4, 2): (0.25, 0.75),
        (2, 5): (0.0, 0.75), (5, 0): (0.0, 0.25),
        (3, 4): (0.5, 0.25), (4, 5): (0.25, 0.5), (5, 3): (0.25, 0.25),
    }
    local_of = {}
    for key, mid in ref.items():
        local_of[key] = mid
        local_of[key[::-1]] = mid

    edge_nodes = 0.5 * (new_vertices[new_mesh.edges[:, 0]] + new_vertices[new_mesh.edges[:, 1]])
    placed = np.zeros(len(new_mesh.edges), bool)
    n_old = mesh.n_p2_nodes
    n_new = new_mesh.n_p2_nodes
    prol_rows, prol_cols, prol_vals = [], [], []
    for node in range(n_old):  # old vertices and edge nodes keep their values
        prol_rows.append(node)
        prol_cols.append(node)
        prol_vals.append(1.0)
    for child_idx, tri in enumerate(new_mesh.triangles):
        parent = child_parent[child_idx]
        parent_nodes = list(old_tri_nodes[parent])
        lookup = {g: l for l, g in enumerate(parent_nodes)}
        for loc in range(3):
            e = new_mesh.tri_edges[child_idx, loc]
            if placed[e]:
                continue
            ga, gb = tri[loc], tri[(loc + 1) % 3]
            la, lb = lookup[ga], lookup[gb]
            midref = np.array([local_of[(la, lb)]])
            shape = p2_shape(midref)[0]
            edge_nodes[e] = shape @ coords[parent]
            fine_node = len(new_vertices) + e
            for l in range(6):
                prol_rows.append(fine_node)
                prol_cols.append(parent_nodes[l])
                prol_vals.append(shape[l])
            placed[e] = True

    # boundary tagging: split parent boundary edges at the midpoint parameter
    old_bedges = mesh.boundary_edges
    edge_lookup = {tuple(e): k for k, e in enumerate(np.sort(new_mesh.edges, axis=1).tolist())}
    tri_of_edge = _edge_to_triangles(new_mesh)
    bedges = []
    for row in old_bedges:
        e_old = row["edge"]
        va, vb = mesh.edges[e_old]
        mid = nv + e_old  # old midside node is now a vertex
        tri_old = row["tri"]
        loc = row["local"]
        a_old = mesh.triangles[tri_old][loc]
        t_first, t_second = row["t0"], row["t1"]
        if a_old != va:
            va, vb = vb, va
        tm = 0.5 * (t_first + t_second)
        for (x, y, ta, tb) in ((va, mid, t_first, tm), (mid, vb, tm, t_second)):
            e_new = edge_lookup[tuple(sorted((int(x), int(y))))]
            (tri_new, loc_new), = tri_of_edge[e_new]
            a_new = new_mesh.triangles[tri_new][loc_new]
            if a_new == x:
                bedges.append((e_new, tri_new, loc_new, int(row["component"]), ta, tb))
            else:
                bedges.append((e_new, tri_new, loc_new, int(row["component"]), tb, ta))
    new_mesh._attach_boundary(bedges)
    new_mesh.edge_nodes = edge_nodes  # keep parent-map geometry, no snapping
    from scipy.sparse import csr_matrix
    new_mesh.prolongation = csr_matrix(
        (prol_vals, (prol_rows, prol_cols)), shape=(n_new, n_old))
    return new_mesh


# -- Triangle-compatible file formats -------------------------------------

def write_mesh(mesh, basename, header=None):
    """Write basename.node/.ele/.bnd in the documented ASCII layout."""
    nodef = io.StringIO()
    nv = mesh.n_vertices
    if header:
        print(f"# {header}", file=nodef)
    print(f"{nv} 2 0 1", file=nodef)
    markers = np.zeros(nv, np.int64)
    bsel = mesh.node_is_boundary[:nv]
    markers[bsel] = mesh.node_component[:nv][bsel] + 1
    for i, (x, y) in enumerate(mesh.vertices):
        print(f"{i} {float(x)!r} {float(y)!r} {markers[i]}", file=nodef)
    with open(f"{basename}.node", "w") as fh:
        fh.write(nodef.getvalue())

    with open(f"{basename}.ele", "w") as fh:
        if header:
            print(f"# {header}", file=fh)
        print(f"{len(mesh.triangles)} 3 0", file=fh)
        for i, (a, b, c) in enumerate(mesh.triangles):
            print(f"{i} {a} {b} {c}", file=fh)

    with open(f"{basename}.bnd", "w") as fh:
        if header:
            print(f"# {header}", file=fh)
        print(f"{len(mesh.boundary_edges)}", file=fh)
        for row in mesh.boundary_edges:
            va, vb = mesh.edges[row["edge"]]
            print(f"{va} {vb} {row['component']}", file=fh)


def import_mesh(node_file, ele_file, domain):
    """Read Triangle-format .node/.ele files and tag against the domain.

    Triangles listed clockwise are reoriented; every topological boundary
    edge must project onto some domain curve within a tenth of its length.
    """
    vertices, base = _read_node(node_file)
    triangles = _read_ele(ele_file, base, len(vertices))
    mesh = Mesh(domain, vertices, triangles, snapped=True)
    _tag_boundary_by_projection(mesh, snap_vertices=True)
    return mesh.validate()


def _read_node(path):
    rows = _data_rows(path)
    header = rows[0]
    n = int(header[0])
    if len(rows) - 1 != n:
        raise MeshImportError(f"{path}: expected {n} node rows, found {len(rows) - 1}")
    ids = [int(r[0]) for r in rows[1:]]
    base = min(ids)
    if sorted(ids) != list(range(base, base + n)):
        raise MeshImportError(f"{path}: node ids must be consecutive")
    verts = np.zeros((n, 2))
    for r in rows[1:]:
        verts[int(r[0]) - base] = (float(r[1]), float(r[2]))
    return verts, base


def _read_ele(path, base, nv):
    rows = _data_rows(path)
    header = rows[0]
    n = int(header[0])
    per = int(header[1])
    if per != 3:
        raise MeshImportError(f"{path}: only 3-node triangles supported, got {per}")
    if len(rows) - 1 != n:
        raise MeshImportError(f"{path}: expected {n} element rows, found {len(rows) - 1}")
    tris = np.zeros((n, 3), np.int64)
    for r in rows[1:]:
        tris[int(r[0]) - base] = [int(r[1]) - base, int(r[2]) - base, int(r[3]) - base]
    if tris.min() < 0 or tris.max() >= nv:
        raise MeshImportError(f"{path}: vertex index out of range")
    return tris


def _data_rows(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append(line.split())
    if not rows:
        raise MeshImportError(f"{path}: empty file")
    return rows
