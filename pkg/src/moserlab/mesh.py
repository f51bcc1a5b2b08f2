"""Triangle meshes for planar domains.

Two generators are provided: concentric-ring meshes of a disc (optionally
graded toward the centre) and polygon meshes built from a fan or ear-clipped
coarse triangulation followed by uniform red refinement. ``refine_toward``
grades any mesh toward a point with newest-vertex bisection.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels


class MeshError(ValueError):
    """Raised for invalid geometry input or a mesh that fails validation."""


@dataclass
class TriMesh:
    vertices: np.ndarray  # (N, 2)
    triangles: np.ndarray  # (T, 3) int64, counterclockwise
    boundary: np.ndarray  # (N,) bool
    domain: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary = np.asarray(self.boundary, dtype=bool)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.stack(
            [
                np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
                np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
            ],
            axis=1,
        )

    @property
    def h_max(self) -> float:
        return float(self.edge_lengths().max())

    @property
    def area(self) -> float:
        """Area of the union of triangles."""
        return float(self.signed_areas().sum())

    @property
    def domain_area(self) -> float:
        """Area of the analytic domain the mesh approximates."""
        kind = self.domain.get("kind")
        if kind == "disc":
            return math.pi * self.domain["radius"] ** 2
        if kind == "polygon":
            return polygon_area(np.asarray(self.domain["vertices"], dtype=float))
        return self.area

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def boundary_edges(self) -> np.ndarray:
        edges, counts = _edge_counts(self.triangles)
        return edges[counts == 1]

    def validate(self, tol: float = 1e-12) -> None:
        """Check orientation, edge manifoldness and boundary flags."""
        areas = self.signed_areas()
        bad = np.flatnonzero(areas <= 0)
        if bad.size:
            raise MeshError(f"triangle {int(bad[0])} has non-positive signed area")
        edges, counts = _edge_counts(self.triangles)
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two triangles")
        on_bnd = np.zeros(self.n_vertices, dtype=bool)
        on_bnd[edges[counts == 1].ravel()] = True
        if not np.array_equal(on_bnd, self.boundary):
            raise MeshError("boundary flags disagree with boundary edges")
        if self.domain.get("kind") == "disc":
            c = np.asarray(self.domain["center"])
            r = np.linalg.norm(self.vertices[self.boundary] - c, axis=1)
            if np.any(np.abs(r - self.domain["radius"]) > tol * max(1.0, self.domain["radius"])):
                raise MeshError("boundary vertex off the circle")

    def local_h(self, point) -> float:
        """Longest edge among triangles touching the vertices of the triangle containing ``point``."""
        idx, _ = self.locate(np.asarray(point, dtype=float).reshape(1, 2))
        if idx[0] < 0:
            raise MeshError(f"point {tuple(point)} lies outside the mesh")
        verts = self.triangles[idx[0]]
        touch = np.isin(self.triangles, verts).any(axis=1)
        return float(self.edge_lengths()[touch].max())

    def locate(self, points, tol: float = 1e-12):
        """Containing triangle index (-1 if outside) and barycentric weights."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.vertices[self.triangles]
        lo = p.min(axis=1) - 1e-12
        hi = p.max(axis=1) + 1e-12
        idx = np.full(pts.shape[0], -1, dtype=np.int64)
        bary = np.zeros((pts.shape[0], 3))
        for k, q in enumerate(pts):
            cand = np.flatnonzero(np.all((lo <= q) & (q <= hi), axis=1))
            if cand.size == 0:
                continue
            i, b = kernels.locate_points(self.vertices, self.triangles[cand], q[None, :], tol)
            if i[0] >= 0:
                idx[k] = cand[i[0]]
                bary[k] = b[0]
        return idx, bary

    def interpolate(self, values, points) -> np.ndarray:
        """Evaluate the P1 interpolant of nodal ``values`` at ``points`` (NaN outside)."""
        idx, bary = self.locate(points)
        out = np.full(idx.shape[0], np.nan)
        ok = idx >= 0
        out[ok] = np.einsum("pk,pk->p", np.asarray(values)[self.triangles[idx[ok]]], bary[ok])
        return out

    def distance_to_boundary(self, point) -> float:
        point = np.asarray(point, dtype=float)
        if self.domain.get("kind") == "disc":
            return self.domain["radius"] - float(np.linalg.norm(point - self.domain["center"]))
        e = self.boundary_edges()
        a = self.vertices[e[:, 0]]
        b = self.vertices[e[:, 1]]
        ab = b - a
        t = np.clip(np.einsum("ij,ij->i", point - a, ab) / np.einsum("ij,ij->i", ab, ab), 0, 1)
        return float(np.min(np.linalg.norm(a + t[:, None] * ab - point, axis=1)))


def _edge_counts(triangles):
    e = np.concatenate([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


# ---------------------------------------------------------------------------
# disc


def _ring_radii(radius, n_rings, core_h, growth):
    """Ring radii from the centre outward, ending exactly at ``radius``."""
    h = radius / n_rings
    if core_h is None or core_h >= h:
        return np.linspace(0.0, radius, n_rings + 1)
    radii = [0.0]
    while radii[-1] < radius:
        r = radii[-1]
        radii.append(r + min(h, max(core_h, (growth - 1.0) * r)))
    radii = np.array(radii)
    # drop an overshooting last ring if it would leave a sliver, then stretch
    if len(radii) > 2 and radii[-1] - radius > 0.5 * (radii[-1] - radii[-2]):
        radii = radii[:-1]
    return radii * (radius / radii[-1])


def _ring_counts(radii, h):
    counts = [1]
    for k in range(1, len(radii)):
        step = radii[k] - radii[k - 1]
        want = 2 * math.pi * radii[k] / min(step, h)
        n = max(6, 6 * int(round(want / 6.0)))
        n = max(n, counts[-1]) if k > 1 else 6
        counts.append(n)
    return counts


def build_disc_mesh(
    radius: float = 1.0,
    refinement_level: int = 0,
    center=(0.0, 0.0),
    core_h: float | None = None,
    growth: float = 1.05,
) -> TriMesh:
    """Concentric-ring mesh of a disc.

    Level ``l`` uses ``4*2**l`` rings of equal width, so ``h_max`` halves per
    level. Ring ``k`` of a uniform mesh carries ``6k`` points, which keeps a
    six-fold rotational symmetry. With ``core_h`` set, ring spacing near the
    centre is ``core_h`` and grows geometrically by ``growth`` up to the
    uniform width.
    """
    if radius <= 0:
        raise MeshError("radius must be positive")
    if refinement_level < 0:
        raise MeshError("refinement_level must be non-negative")
    n_rings = 4 * 2**refinement_level
    h = radius / n_rings
    radii = _ring_radii(radius, n_rings, core_h, growth)
    counts = _ring_counts(radii, h)
    c = np.asarray(center, dtype=float)

    pts = [np.zeros((1, 2))]
    angles = [np.zeros(1)]
    offsets = [0.0]
    offset = 0.0
    for k in range(1, len(radii)):
        n = counts[k]
        if k > 1 and n == counts[k - 1]:
            offset = 0.5 - offset  # stagger equal-count rings
        else:
            offset = 0.0
        th = 2 * math.pi * (np.arange(n) + offset) / n
        angles.append(th)
        offsets.append(offset)
        pts.append(radii[k] * np.column_stack([np.cos(th), np.sin(th)]))
    start = np.cumsum([0] + counts[:-1])

    tris = []
    for k in range(1, len(radii)):
        tris.extend(
            _zip_rings(start[k - 1], counts[k - 1], offsets[k - 1], start[k], counts[k], offsets[k])
        )
    verts = np.concatenate(pts)
    # put boundary points exactly on the circle
    nb = counts[-1]
    th = angles[-1]
    verts[-nb:] = radius * np.column_stack([np.cos(th), np.sin(th)])
    verts = verts + c
    boundary = np.zeros(verts.shape[0], dtype=bool)
    boundary[-nb:] = True
    mesh = TriMesh(
        verts,
        np.array(tris, dtype=np.int64),
        boundary,
        {"kind": "disc", "center": [float(c[0]), float(c[1])], "radius": float(radius)},
    )
    return mesh


def _zip_rings(s0, n0, off0, s1, n1, off1):
    """Triangulate the strip between an inner and an outer ring.

    Point ``j`` of a ring with ``n`` points and offset ``off`` (0 or 1/2) sits
    at angle ``2*pi*(j + off)/n``; comparisons are done in exact integers so
    symmetric rings produce symmetric strips.
    """
    if n0 == 1:
        return [(s0, s1 + j, s1 + (j + 1) % n1) for j in range(n1)]
    h0, h1 = int(round(2 * off0)), int(round(2 * off1))
    out = []
    i = j = 0
    while i < n0 or j < n1:
        # compare (i + 1 + off0) / n0 with (j + 1 + off1) / n1
        adv_inner = j >= n1 or (i < n0 and (2 * (i + 1) + h0) * n1 <= (2 * (j + 1) + h1) * n0)
        if adv_inner:
            out.append((s0 + i % n0, s1 + j % n1, s0 + (i + 1) % n0))
            i += 1
        else:
            out.append((s0 + i % n0, s1 + j % n1, s1 + (j + 1) % n1))
            j += 1
    return out


# ---------------------------------------------------------------------------
# polygons


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 != 0 and d3 * d4 != 0:
        return True
    # collinear overlaps count as intersections
    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (
        (d1 == 0 and on_seg(p3, p4, p1))
        or (d2 == 0 and on_seg(p3, p4, p2))
        or (d3 == 0 and on_seg(p1, p2, p3))
        or (d4 == 0 and on_seg(p1, p2, p4))
    )


def check_simple_polygon(poly: np.ndarray) -> None:
    n = len(poly)
    if n < 3:
        raise MeshError("polygon needs at least three vertices")
    if len({tuple(p) for p in poly}) != n:
        raise MeshError("polygon has repeated vertices")
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                raise MeshError(f"polygon is self-intersecting (edges {i} and {j})")
    if polygon_area(poly) <= 0:
        raise MeshError("polygon must be counterclockwise")


def _is_convex(poly):
    n = len(poly)
    for i in range(n):
        a, b, c = poly[i - 1], poly[i], poly[(i + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) <= 0:
            return False
    return True


def _ear_clip(poly):
    idx = list(range(len(poly)))
    tris = []

    def inside(p, a, b, c):
        d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
        d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
        return d1 >= 0 and d2 >= 0 and d3 >= 0

    while len(idx) > 3:
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) <= 0:
                continue
            if any(inside(poly[m], a, b, c) for m in idx if m not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
        else:
            raise MeshError("ear clipping failed; polygon may be degenerate")
    tris.append(tuple(idx))
    return tris


def red_refine(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four via edge midpoints."""
    t = mesh.triangles
    e = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
    e.sort(axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    nt = t.shape[0]
    m0 = nv + inv[:nt]  # midpoint opposite vertex 0
    m1 = nv + inv[nt : 2 * nt]
    m2 = nv + inv[2 * nt :]
    new_t = np.concatenate(
        [
            np.column_stack([t[:, 0], m2, m1]),
            np.column_stack([m2, t[:, 1], m0]),
            np.column_stack([m1, m0, t[:, 2]]),
            np.column_stack([m0, m1, m2]),
        ]
    )
    _, counts = np.unique(e, axis=0, return_counts=True)
    bnd_mid = counts == 1
    verts = np.concatenate([mesh.vertices, mids])
    if mesh.domain.get("kind") == "disc":
        c = np.asarray(mesh.domain["center"])
        d = verts[nv:][bnd_mid] - c
        verts[nv:][bnd_mid] = c + mesh.domain["radius"] * d / np.linalg.norm(d, axis=1)[:, None]
    boundary = np.concatenate([mesh.boundary, bnd_mid])
    return TriMesh(verts, new_t, boundary, dict(mesh.domain))


def build_polygon_mesh(vertices, refinement_level: int = 0) -> TriMesh:
    """Conforming mesh of a simple counterclockwise polygon.

    Convex polygons start from a fan around the vertex centroid, which keeps
    the symmetries of regular shapes; others start from ear clipping. Each
    level applies one uniform red refinement.
    """
    poly = np.asarray(vertices, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise MeshError("polygon vertices must be an (n, 2) array")
    if refinement_level < 0:
        raise MeshError("refinement_level must be non-negative")
    check_simple_polygon(poly)
    n = len(poly)
    if _is_convex(poly) and n > 3:
        verts = np.vstack([poly, poly.mean(axis=0)])
        tris = np.array([(n, i, (i + 1) % n) for i in range(n)])
    else:
        verts = poly.copy()
        tris = np.array(_ear_clip(poly))
    boundary = np.zeros(len(verts), dtype=bool)
    boundary[:n] = True
    mesh = TriMesh(verts, tris, boundary, {"kind": "polygon", "vertices": poly.tolist()})
    for _ in range(refinement_level):
        mesh = red_refine(mesh)
    return mesh


def unit_square_mesh(refinement_level: int = 0) -> TriMesh:
    return build_polygon_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], refinement_level)


# ---------------------------------------------------------------------------
# local grading by newest-vertex bisection


def refine_toward(
    mesh: TriMesh,
    point,
    h_target: float,
    growth: float = 1.05,
    max_passes: int = 200,
) -> TriMesh:
    """Grade ``mesh`` toward ``point`` by newest-vertex bisection.

    Triangles are bisected until each longest edge is at most
    ``max(h_target, (growth - 1) * dist)``, ``dist`` being the distance from
    the triangle to ``point``. Conformity is kept by the usual closure rule.
    """
    x0 = np.asarray(point, dtype=float)
    verts = [tuple(v) for v in mesh.vertices]
    bnd = list(mesh.boundary)
    disc = mesh.domain.get("kind") == "disc"
    if disc:
        cen = np.asarray(mesh.domain["center"])
        rad = mesh.domain["radius"]

    # orient each triangle so the refinement edge (b, c) is its longest edge
    tris = []
    for a, b, c in mesh.triangles.tolist():
        la = _dist(verts[b], verts[c])
        lb = _dist(verts[c], verts[a])
        lc = _dist(verts[a], verts[b])
        if lb > la and lb >= lc:
            a, b, c = b, c, a
        elif lc > la and lc > lb:
            a, b, c = c, a, b
        tris.append((a, b, c))

    edge_count: dict = {}
    for a, b, c in tris:
        for e in ((a, b), (b, c), (c, a)):
            k = (min(e), max(e))
            edge_count[k] = edge_count.get(k, 0) + 1
    bnd_edges = {k for k, v in edge_count.items() if v == 1}
    midpoint: dict = {}

    for _ in range(max_passes):
        t_arr = np.array(tris, dtype=np.int64)
        v_arr = np.array(verts)
        p = v_arr[t_arr]
        lmax = np.max(
            np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2), axis=1
        )
        dist = _points_triangles_distance(x0, p)
        need = lmax > np.maximum(h_target, (growth - 1.0) * dist) * (1 + 1e-12)
        marked = {(min(b, c), max(b, c)) for (a, b, c), f in zip(tris, need) if f}
        if not marked:
            break
        # closure: a triangle with any marked edge must split its refinement edge
        changed = True
        while changed:
            changed = False
            for a, b, c in tris:
                ref = (min(b, c), max(b, c))
                if ref in marked:
                    continue
                if (min(a, b), max(a, b)) in marked or (min(c, a), max(c, a)) in marked:
                    marked.add(ref)
                    changed = True
        # children inherit marked outer edges as their refinement edges
        split_any = True
        while split_any:
            split_any = False
            out = []
            for a, b, c in tris:
                ref = (min(b, c), max(b, c))
                if ref not in marked:
                    out.append((a, b, c))
                    continue
                split_any = True
                m = midpoint.get(ref)
                if m is None:
                    pm = 0.5 * (np.array(verts[b]) + np.array(verts[c]))
                    on_b = ref in bnd_edges
                    if on_b and disc:
                        d = pm - cen
                        pm = cen + rad * d / np.linalg.norm(d)
                    verts.append(tuple(pm))
                    bnd.append(on_b)
                    m = len(verts) - 1
                    midpoint[ref] = m
                    if on_b:
                        bnd_edges.add((min(b, m), max(b, m)))
                        bnd_edges.add((min(c, m), max(c, m)))
                out.append((m, a, b))
                out.append((m, c, a))
            tris = out
    return TriMesh(np.array(verts), np.array(tris, dtype=np.int64), np.array(bnd), dict(mesh.domain))


def _dist(p, q):
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _points_triangles_distance(x, p):
    """Distance from point ``x`` to each triangle ``p`` of shape (T, 3, 2)."""
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    d = x - p[:, 0]
    l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
    inside = (l1 >= 0) & (l2 >= 0) & (l1 + l2 <= 1)
    best = np.full(p.shape[0], np.inf)
    for i in range(3):
        a, b = p[:, i], p[:, (i + 1) % 3]
        ab = b - a
        t = np.clip(np.einsum("ij,ij->i", x - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(a + t[:, None] * ab - x, axis=1))
    best[inside] = 0.0
    return best


# ---------------------------------------------------------------------------
# text IO


def write_mesh(mesh: TriMesh, path) -> None:
    """Write the whitespace-delimited mesh format (exact float round-trip)."""
    lines = [f"# domain {json.dumps(mesh.domain, sort_keys=True)}", "vertices"]
    for i, (v, b) in enumerate(zip(mesh.vertices, mesh.boundary)):
        lines.append(f"{i} {float(v[0])!r} {float(v[1])!r} {int(b)}")
    lines.append("triangles")
    for i, t in enumerate(mesh.triangles):
        lines.append(f"{i} {t[0]} {t[1]} {t[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    domain: dict = {}
    verts, bnd, tris = [], [], []
    section = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# domain "):
                domain = json.loads(line[len("# domain ") :])
            continue
        if line in ("vertices", "triangles"):
            section = line
            continue
        parts = line.split()
        if section == "vertices":
            verts.append((float(parts[1]), float(parts[2])))
            bnd.append(parts[3] not in ("0", "false", "False"))
        elif section == "triangles":
            tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
        else:
            raise MeshError(f"unexpected line before a section header: {raw!r}")
    return TriMesh(np.array(verts), np.array(tris, dtype=np.int64).reshape(-1, 3), np.array(bnd), domain)
