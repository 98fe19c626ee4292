"""Face-centered square lattice clipped to rectangles and annuli.

Sites are the points of Z^2 plus the centers of its unit squares, scaled
by the mesh; edges are the square sides plus the four center-to-corner
diagonals, which makes every bounded face a triangle. Internally a site
is stored as an integer pair (i, j) in half-mesh units (position =
(i*eps/2, j*eps/2)): corners have i, j both even, centers both odd. All
geometry (edge clipping, boundary marks) is integer-exact.

A region graph follows the edge-generated convention: it contains every
lattice edge that intersects the closed region, together with both
endpoints. Endpoints outside the region ("fringe") are kept in the graph
but flagged, and event detection restricts paths to in-region sites.

Boundary marks are on-side: a site is marked for a side exactly when it
lies on that side's closed segment. Region bounds must therefore be
multiples of the mesh, which puts sites on every side and makes
black/white crossing duality exact on the clipped triangulation.

The rotation reduction: rotating the lattice by pi/4 and rescaling by
sqrt(2) carries its vertices onto Z^2, so spectral work for mesh eps
happens on Z^2 with mesh eps/sqrt(2). rotate_index realizes that map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .errors import PreconditionError

__all__ = [
    "Rect",
    "Annulus",
    "RegionGraph",
    "build_region_graph",
    "rotate_index",
    "unrotate_index",
    "spectral_mesh",
    "dump_edge_list",
]

_ALIGN_RTOL = 1e-9


def spectral_mesh(lattice_eps: float) -> float:
    """Mesh of the rotated Z^2 indexing for a lattice of mesh lattice_eps."""
    return lattice_eps / np.sqrt(2.0)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise PreconditionError("rectangle must have positive area")


@dataclass(frozen=True)
class Annulus:
    """Square annulus: [-r_out, r_out]^2 minus the open square (-r_in, r_in)^2,
    translated by the center."""

    cx: float
    cy: float
    r_in: float
    r_out: float

    def __post_init__(self):
        if not (0 < self.r_in < self.r_out):
            raise PreconditionError("annulus needs 0 < r_in < r_out")


def _half_units(value: float, eps: float, what: str) -> int:
    h = 2.0 * value / eps
    hi = round(h)
    if abs(h - hi) > _ALIGN_RTOL * max(1.0, abs(h)):
        raise PreconditionError(
            f"{what}={value} is not aligned to the mesh {eps} (must be a multiple of eps/2)"
        )
    return int(hi)


def _is_site(i: int, j: int) -> bool:
    return (i - j) % 2 == 0


def _offsets(i: int, j: int) -> list[tuple[int, int]]:
    offs = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    if i % 2 == 0:  # corner: axis edges to the four corner neighbors
        offs += [(2, 0), (-2, 0), (0, 2), (0, -2)]
    return offs


# -- exact integer segment/rect predicates -----------------------------------


def _orient(ax, ay, bx, by, cx, cy) -> int:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(a, b, c) -> bool:
    return (
        _orient(a[0], a[1], b[0], b[1], c[0], c[1]) == 0
        and min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
        and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
    )


def _segments_intersect(a, b, c, d) -> bool:
    o1 = _orient(*a, *b, *c)
    o2 = _orient(*a, *b, *d)
    o3 = _orient(*c, *d, *a)
    o4 = _orient(*c, *d, *b)
    if o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0:
        return (o1 > 0) != (o2 > 0) and (o3 > 0) != (o4 > 0)
    return _on_segment(a, b, c) or _on_segment(a, b, d) or _on_segment(c, d, a) or _on_segment(c, d, b)


def _point_in_box(p, box) -> bool:
    x0, y0, x1, y1 = box
    return x0 <= p[0] <= x1 and y0 <= p[1] <= y1


def _seg_intersects_box(p, q, box) -> bool:
    x0, y0, x1, y1 = box
    if max(p[0], q[0]) < x0 or min(p[0], q[0]) > x1:
        return False
    if max(p[1], q[1]) < y0 or min(p[1], q[1]) > y1:
        return False
    if _point_in_box(p, box) or _point_in_box(q, box):
        return True
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    return any(
        _segments_intersect(p, q, corners[k], corners[(k + 1) % 4]) for k in range(4)
    )


class RegionGraph:
    """Clipped lattice graph with boundary marks.

    Sites are ordered row-major by the rotated Z^2 index (m, then n), which
    fixes RNG consumption and output files. Arrays:
      ij          (S, 2) int  half-unit coordinates
      edges       (E, 2) int  site indices, u < v, lexicographically sorted
      in_region   (S,)  bool  site lies in the closed region
      marks       dict side -> (S,) bool
    """

    def __init__(self, mesh_eps, region, ij, edges, in_region, marks):
        self.mesh_eps = float(mesh_eps)
        self.region = region
        self.ij = ij
        self.edges = edges
        self.in_region = in_region
        self.marks = marks

    @property
    def n_sites(self) -> int:
        return len(self.ij)

    def positions(self) -> np.ndarray:
        """Physical coordinates, shape (S, 2)."""
        return self.ij * (self.mesh_eps / 2.0)

    def rotated(self) -> np.ndarray:
        """Z^2 indices (m, n) of every site, shape (S, 2)."""
        m = (self.ij[:, 0] + self.ij[:, 1]) // 2
        n = (self.ij[:, 1] - self.ij[:, 0]) // 2
        return np.stack([m, n], axis=1)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_sites, dtype=int)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg


def _region_marks(region, ij, eps):
    i, j = ij[:, 0], ij[:, 1]
    if isinstance(region, Rect):
        X0 = _half_units(region.x0, eps, "x0")
        X1 = _half_units(region.x1, eps, "x1")
        Y0 = _half_units(region.y0, eps, "y0")
        Y1 = _half_units(region.y1, eps, "y1")
        yin = (j >= Y0) & (j <= Y1)
        xin = (i >= X0) & (i <= X1)
        return {
            "left": (i == X0) & yin,
            "right": (i == X1) & yin,
            "bottom": (j == Y0) & xin,
            "top": (j == Y1) & xin,
        }
    CX = _half_units(region.cx, eps, "cx")
    CY = _half_units(region.cy, eps, "cy")
    RI = _half_units(region.r_in, eps, "r_in")
    RO = _half_units(region.r_out, eps, "r_out")
    cheb = np.maximum(np.abs(i - CX), np.abs(j - CY))
    return {"inner": cheb == RI, "outer": cheb == RO}


def build_region_graph(eps: float, region) -> RegionGraph:
    """Clip the mesh-eps lattice to a rectangle or annulus.

    Region bounds (and the annulus center) must be multiples of the mesh;
    the shorter region dimension must be at least eps so the four boundary
    arcs stay disjoint.
    """
    if eps <= 0:
        raise PreconditionError("mesh eps must be positive")
    if isinstance(region, Rect):
        X0 = _half_units(region.x0, eps, "x0")
        X1 = _half_units(region.x1, eps, "x1")
        Y0 = _half_units(region.y0, eps, "y0")
        Y1 = _half_units(region.y1, eps, "y1")
        for v, name in ((X0, "x0"), (X1, "x1"), (Y0, "y0"), (Y1, "y1")):
            if v % 2 != 0:
                raise PreconditionError(f"rectangle bound {name} must be a multiple of eps")
        if min(X1 - X0, Y1 - Y0) < 2:
            raise PreconditionError("region dimensions must be at least eps")
        boxes = [(X0, Y0, X1, Y1)]
        hole = None
        scan = (X0 - 2, X1 + 2, Y0 - 2, Y1 + 2)
    elif isinstance(region, Annulus):
        CX = _half_units(region.cx, eps, "cx")
        CY = _half_units(region.cy, eps, "cy")
        RI = _half_units(region.r_in, eps, "r_in")
        RO = _half_units(region.r_out, eps, "r_out")
        if CX % 2 != 0 or CY % 2 != 0 or RI % 2 != 0 or RO % 2 != 0:
            raise PreconditionError("annulus center and radii must be multiples of eps")
        if RO - RI < 2:
            raise PreconditionError("annulus width must be at least eps")
        boxes = [(CX - RO, CY - RO, CX + RO, CY + RO)]
        hole = (CX - RI, CY - RI, CX + RI, CY + RI)
        scan = (CX - RO - 2, CX + RO + 2, CY - RO - 2, CY + RO + 2)
    else:
        raise PreconditionError(f"unsupported region type {type(region).__name__}")

    outer = boxes[0]

    def seg_in_region(p, q) -> bool:
        if not _seg_intersects_box(p, q, outer):
            return False
        if hole is None:
            return True
        hx0, hy0, hx1, hy1 = hole
        p_in = hx0 < p[0] < hx1 and hy0 < p[1] < hy1
        q_in = hx0 < q[0] < hx1 and hy0 < q[1] < hy1
        return not (p_in and q_in)  # open hole is convex

    # positive offsets only, so each undirected edge is generated once
    pos_all = [(1, 1), (1, -1)]
    pos_corner = [(2, 0), (0, 2)]
    edges_set = set()
    lo_i, hi_i, lo_j, hi_j = scan
    for i in range(lo_i, hi_i + 1):
        for j in range(lo_j, hi_j + 1):
            if not _is_site(i, j):
                continue
            offs = pos_all + (pos_corner if i % 2 == 0 else [])
            for di, dj in offs:
                p, q = (i, j), (i + di, j + dj)
                if seg_in_region(p, q):
                    edges_set.add((p, q) if p < q else (q, p))

    sites = sorted(
        {s for e in edges_set for s in e},
        key=lambda s: ((s[0] + s[1]) // 2, (s[1] - s[0]) // 2),
    )
    index = {s: k for k, s in enumerate(sites)}
    ij = np.array(sites, dtype=np.int64)
    edge_idx = sorted(
        (min(index[p], index[q]), max(index[p], index[q])) for p, q in edges_set
    )
    edges = np.array(edge_idx, dtype=np.int64)

    if isinstance(region, Rect):
        in_region = (
            (ij[:, 0] >= outer[0])
            & (ij[:, 0] <= outer[2])
            & (ij[:, 1] >= outer[1])
            & (ij[:, 1] <= outer[3])
        )
    else:
        cheb = np.maximum(np.abs(ij[:, 0] - (outer[0] + outer[2]) // 2),
                          np.abs(ij[:, 1] - (outer[1] + outer[3]) // 2))
        in_region = (cheb <= (outer[2] - outer[0]) // 2) & (
            cheb >= _half_units(region.r_in, eps, "r_in")
        )

    marks = _region_marks(region, ij, eps)
    return RegionGraph(eps, region, ij, edges, in_region, marks)


def rotate_index(point, eps: float) -> tuple[int, int]:
    """Map a lattice site to its Z^2 index under the pi/4 rotation reduction.

    (x, y) -> (m, n) = ((x + y)/eps, (y - x)/eps); the origin is fixed and
    lattice neighbors map to Z^2 neighbors (axis steps for diagonal edges,
    diagonal steps for axis edges).
    """
    x, y = float(point[0]), float(point[1])
    i = _half_units(x, eps, "x")
    j = _half_units(y, eps, "y")
    if not _is_site(i, j):
        raise PreconditionError(f"point {point} is not on the mesh-{eps} lattice")
    return ((i + j) // 2, (j - i) // 2)


def unrotate_index(mn, eps: float) -> tuple[float, float]:
    """Inverse of rotate_index."""
    m, n = int(mn[0]), int(mn[1])
    return ((m - n) * eps / 2.0, (m + n) * eps / 2.0)


def dump_edge_list(graph: RegionGraph, fh: TextIO) -> None:
    """Debug dump: one site per line, then one edge per line (half-units)."""
    fh.write(f"# gfperc lattice dump eps={graph.mesh_eps:g}\n")
    fh.write("# sites: index i j in_region marks\n")
    names = sorted(graph.marks)
    for k in range(graph.n_sites):
        tags = ",".join(n for n in names if graph.marks[n][k]) or "-"
        fh.write(
            f"s {k} {graph.ij[k, 0]} {graph.ij[k, 1]} "
            f"{int(bool(graph.in_region[k]))} {tags}\n"
        )
    fh.write("# edges: u v\n")
    for u, v in graph.edges:
        fh.write(f"e {u} {v}\n")
