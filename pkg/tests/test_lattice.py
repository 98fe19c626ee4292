"""Region graph construction, boundary marks, and the rotation indexing."""

import io
import math

import numpy as np
import pytest

from gfperc.errors import PreconditionError
from gfperc.lattice import (
    Annulus,
    Rect,
    build_region_graph,
    dump_edge_list,
    rotate_index,
    spectral_mesh,
    unrotate_index,
)


def brute_force_region(eps, rect, pad=3):
    """Independent geometric enumeration (floats, shapely-free clipping).

    Walks a padded float grid of candidate sites and keeps every edge whose
    segment meets the closed rectangle, using a parametric clip instead of
    the integer predicates of the implementation.
    """
    x0, y0, x1, y1 = rect
    sites = set()
    edges = set()

    def seg_hits_rect(p, q):
        # Liang-Barsky style parametric clipping
        t0, t1 = 0.0, 1.0
        dx, dy = q[0] - p[0], q[1] - p[1]
        for pval, qval in (
            (-dx, p[0] - x0),
            (dx, x1 - p[0]),
            (-dy, p[1] - y0),
            (dy, y1 - p[1]),
        ):
            if abs(pval) < 1e-12:
                if qval < -1e-12:
                    return False
                continue
            t = qval / pval
            if pval < 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
            if t0 > t1 + 1e-12:
                return False
        return True

    lo_i = int(math.floor(2 * x0 / eps)) - pad
    hi_i = int(math.ceil(2 * x1 / eps)) + pad
    lo_j = int(math.floor(2 * y0 / eps)) - pad
    hi_j = int(math.ceil(2 * y1 / eps)) + pad
    for i in range(lo_i, hi_i + 1):
        for j in range(lo_j, hi_j + 1):
            if (i - j) % 2 != 0:
                continue
            p = (i * eps / 2, j * eps / 2)
            offs = [(1, 1), (1, -1), (-1, -1), (-1, 1)]
            if i % 2 == 0:
                offs += [(2, 0), (-2, 0), (0, 2), (0, -2)]
            for di, dj in offs:
                q = ((i + di) * eps / 2, (j + dj) * eps / 2)
                if seg_hits_rect(p, q):
                    a, b = (i, j), (i + di, j + dj)
                    edges.add((min(a, b), max(a, b)))
                    sites.add(a)
                    sites.add(b)
    return sites, edges


class TestBuildRegionGraph:
    def test_frozen_regression_2x1(self):
        # hand-enumerable smallest case: 8 sites inside, 20 fringe endpoints
        g = build_region_graph(1.0, Rect(0, 0, 2, 1))
        assert g.n_sites == 28
        assert int(g.in_region.sum()) == 8
        assert len(g.edges) == 41

    def test_matches_independent_enumeration(self):
        for eps, rect in [(1.0, (0, 0, 2, 1)), (0.5, (0, 0, 2, 2)), (1.0, (0, 0, 3, 2))]:
            g = build_region_graph(eps, Rect(*rect))
            sites, edges = brute_force_region(eps, rect)
            got_sites = {tuple(s) for s in g.ij}
            got_edges = {
                (tuple(g.ij[u]), tuple(g.ij[v])) for u, v in g.edges
            }
            got_edges = {(min(a, b), max(a, b)) for a, b in got_edges}
            assert got_sites == sites
            assert got_edges == edges

    def test_no_dangling_edges(self):
        g = build_region_graph(1.0, Rect(0, 0, 2, 1))
        assert g.edges.min() >= 0 and g.edges.max() < g.n_sites
        appears = np.zeros(g.n_sites, dtype=bool)
        appears[g.edges.ravel()] = True
        assert appears.all()

    def test_degrees(self):
        g = build_region_graph(1.0, Rect(0, 0, 4, 4))
        deg = g.degrees()
        for k in range(g.n_sites):
            i, j = g.ij[k]
            interior = 0 < i < 8 and 0 < j < 8 and g.in_region[k]
            if not interior:
                continue
            assert deg[k] == (8 if i % 2 == 0 else 4)

    def test_annulus_marks_disjoint(self):
        g = build_region_graph(0.5, Annulus(0, 0, 1, 2))
        assert not np.any(g.marks["inner"] & g.marks["outer"])
        assert g.marks["inner"].sum() > 0 and g.marks["outer"].sum() > 0

    def test_marks_on_side(self):
        g = build_region_graph(0.5, Rect(0, 0, 2, 1))
        pos = g.positions()
        for name, coord, value in [("left", 0, 0.0), ("right", 0, 2.0), ("bottom", 1, 0.0), ("top", 1, 1.0)]:
            sel = g.marks[name]
            assert sel.sum() > 0
            assert np.allclose(pos[sel][:, coord], value)
            # within eps of the side, trivially
            assert np.all(np.abs(pos[sel][:, coord] - value) <= 0.5)

    def test_reflection_symmetry(self):
        g = build_region_graph(1.0, Rect(0, 0, 3, 3))
        mirrored = {(6 - i, j) for i, j in map(tuple, g.ij)}
        assert mirrored == {tuple(s) for s in g.ij}
        pos = {tuple(s): k for k, s in enumerate(map(tuple, g.ij))}
        for k in range(g.n_sites):
            i, j = g.ij[k]
            m = pos[(6 - i, j)]
            assert g.marks["left"][k] == g.marks["right"][m]
            assert g.marks["top"][k] == g.marks["top"][m]

    def test_triangulation_interior_faces(self):
        # interior edges of the in-region subgraph belong to exactly two
        # triangles, boundary edges to one
        g = build_region_graph(1.0, Rect(0, 0, 3, 2))
        core = set(np.flatnonzero(g.in_region))
        adj = {k: set() for k in core}
        for u, v in g.edges:
            if u in core and v in core:
                adj[u].add(v)
                adj[v].add(u)
        X1, Y1 = 6, 4
        for u in core:
            for v in adj[u]:
                if v < u:
                    continue
                common = adj[u] & adj[v]
                iu, ju = g.ij[u]
                iv, jv = g.ij[v]
                on_boundary = (
                    (iu == iv and iu in (0, X1))
                    or (ju == jv and ju in (0, Y1))
                )
                assert len(common) == (1 if on_boundary else 2), (tuple(g.ij[u]), tuple(g.ij[v]))

    def test_preconditions(self):
        with pytest.raises(PreconditionError):
            build_region_graph(1.0, Rect(0, 0, 2.5, 1))  # not a multiple of eps
        with pytest.raises(PreconditionError):
            build_region_graph(1.0, Rect(0, 0, 2, 0.5))  # thinner than eps
        with pytest.raises(PreconditionError):
            Rect(0, 0, 0, 0)
        with pytest.raises(PreconditionError):
            Annulus(0, 0, 2, 1)
        with pytest.raises(PreconditionError):
            build_region_graph(1.0, Annulus(0, 0, 1, 1.5))  # width below eps


class TestRotateIndex:
    def test_origin_fixed(self):
        assert rotate_index((0.0, 0.0), 1.0) == (0, 0)

    def test_center_adjacent_to_origin_image(self):
        m, n = rotate_index((0.5, 0.5), 1.0)
        assert abs(m) + abs(n) == 1

    def test_round_trip_random_sites(self):
        rng = np.random.default_rng(7)
        eps = 0.25
        for _ in range(10_000):
            i, j = rng.integers(-200, 200, size=2)
            if (i - j) % 2 != 0:
                j += 1
            point = (i * eps / 2, j * eps / 2)
            assert unrotate_index(rotate_index(point, eps), eps) == pytest.approx(point)

    def test_bijective_on_region(self):
        g = build_region_graph(0.5, Rect(0, 0, 3, 2))
        mn = g.rotated()
        assert len({tuple(r) for r in mn}) == g.n_sites

    def test_off_lattice_rejected(self):
        with pytest.raises(PreconditionError):
            rotate_index((0.3, 0.0), 1.0)
        with pytest.raises(PreconditionError):
            rotate_index((0.5, 0.0), 1.0)  # center parity violated

    def test_spectral_mesh(self):
        assert spectral_mesh(1.0) == pytest.approx(1 / math.sqrt(2))


class TestDump:
    def test_edge_list_text(self):
        g = build_region_graph(1.0, Rect(0, 0, 2, 1))
        buf = io.StringIO()
        dump_edge_list(g, buf)
        text = buf.getvalue()
        assert text.count("\ns ") + text.startswith("s ") == g.n_sites
        assert text.count("\ne ") == len(g.edges)
        assert "left" in text and "right" in text
