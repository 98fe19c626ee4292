"""Threshold colorings and percolation events on region graphs.

A site is black when f(x) >= -p (ties black), an edge is black when both
endpoints are. Events are detected with connected components over
same-colored edges, restricted to in-region sites; a component realizes a
crossing when it holds marked sites of both target sides. On this
triangulation the complementary pair is exact: a rectangle has a black
left-right crossing iff it has no white top-bottom crossing, and a black
circuit surrounds the hole of an annulus iff no white arm joins the
boundaries. Both dualities are exercised by enumeration in the tests.

Sub-rectangle crossings (needed for the multi-crossing event, whose frames
have irrational corners) use a geometric touch rule instead of stored
marks: a component touches a side if it contains a site on it or a
same-colored edge whose segment crosses it. That matches the continuum
convention where the black set is the union of closed black edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import PreconditionError, ResourceCapError
from .kernels import Kernel, build_sqrt_kernel
from .lattice import Rect, RegionGraph, build_region_graph, spectral_mesh
from .rng import stream_label
from .sampler import FieldSample, sample_sqrt_convolution

__all__ = [
    "MCEstimate",
    "MeanAccumulator",
    "ColoredConfig",
    "color_config",
    "crossing",
    "arm_event",
    "circuit_event",
    "circuit_event_direct",
    "subrect_crossing",
    "multicross_event",
    "crossing_batch",
    "crossing_truth_table",
    "estimate_crossing",
    "check_site_cap",
    "r_sequence",
    "MAX_SITES",
]

#: resource cap on sites per configuration
MAX_SITES = 4_000_000


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo estimate with its standard error and stream provenance."""

    mean: float
    stderr: float
    n: int
    seed_stream: str = ""


class MeanAccumulator:
    """Streaming mean/M2 (Welford) with order-fixed chunk merging.

    merge() uses Chan's parallel update, so fanning replicates out to
    workers and merging chunks in index order reproduces the serial sums.
    """

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def add_many(self, xs) -> None:
        for x in np.asarray(xs, dtype=float).ravel():
            self.add(float(x))

    def merge(self, other: "MeanAccumulator") -> None:
        if other.n == 0:
            return
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return
        n = self.n + other.n
        d = other.mean - self.mean
        self.mean += d * other.n / n
        self.m2 += other.m2 + d * d * self.n * other.n / n
        self.n = n

    def estimate(self, seed_stream: str = "") -> MCEstimate:
        if self.n < 2:
            return MCEstimate(self.mean, float("nan"), self.n, seed_stream)
        sd = math.sqrt(self.m2 / (self.n - 1))
        return MCEstimate(self.mean, sd / math.sqrt(self.n), self.n, seed_stream)


@dataclass(frozen=True)
class ColoredConfig:
    """A graph plus per-site colors at a level p (black = True)."""

    graph: RegionGraph
    colors: np.ndarray
    level: float


def color_config(graph: RegionGraph, sample: FieldSample, p: float) -> ColoredConfig:
    if sample.values.shape[0] != graph.n_sites:
        raise PreconditionError("field sample does not match the graph site set")
    return ColoredConfig(graph=graph, colors=sample.values >= -p, level=float(p))


# ---------------------------------------------------------------------------
# connectivity engine


def _component_labels(graph: RegionGraph, active: np.ndarray) -> np.ndarray:
    """Connected-component labels over edges whose endpoints are both active."""
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    keep = active[u] & active[v]
    n = graph.n_sites
    mat = sparse.csr_matrix(
        (np.ones(int(keep.sum()), dtype=np.int8), (u[keep], v[keep])), shape=(n, n)
    )
    _, labels = csgraph.connected_components(mat, directed=False)
    return labels


def _want(config: ColoredConfig, color: str) -> np.ndarray:
    if color == "black":
        return config.colors
    if color == "white":
        return ~config.colors
    raise PreconditionError(f"color must be 'black' or 'white', got {color!r}")


def _marks_connected(config, color, mark_a, mark_b) -> bool:
    active = _want(config, color) & config.graph.in_region
    if not (active[mark_a].any() and active[mark_b].any()):
        return False
    labels = _component_labels(config.graph, active)
    a = np.unique(labels[mark_a & active])
    b = np.unique(labels[mark_b & active])
    return bool(np.isin(a, b).any())


def crossing(config: ColoredConfig, direction: str = "left_right", color: str = "black") -> bool:
    """Side-to-side crossing of a rectangle region by same-colored sites."""
    marks = config.graph.marks
    if "left" not in marks:
        raise PreconditionError("crossing needs a rectangle region graph")
    if direction == "left_right":
        return _marks_connected(config, color, marks["left"], marks["right"])
    if direction == "top_bottom":
        return _marks_connected(config, color, marks["top"], marks["bottom"])
    raise PreconditionError(f"unknown direction {direction!r}")


def arm_event(config: ColoredConfig, color: str = "black") -> bool:
    """Same-colored path joining the inner and outer boundary of an annulus."""
    marks = config.graph.marks
    if "inner" not in marks:
        raise PreconditionError("arm event needs an annulus region graph")
    return _marks_connected(config, color, marks["inner"], marks["outer"])


def circuit_event(config: ColoredConfig, color: str = "black") -> bool:
    """Circuit surrounding the annulus hole; exact dual of the opposite arm."""
    other = "white" if color == "black" else "black"
    return not arm_event(config, other)


def circuit_event_direct(config: ColoredConfig, color: str = "black") -> bool:
    """Literal winding-cycle search (reference implementation for small graphs).

    Lifts the same-colored subgraph by the signed crossing number of a ray
    from the hole center; a surrounding circuit exists iff some site is
    reachable from itself at a nonzero level.
    """
    g = config.graph
    if "inner" not in g.marks:
        raise PreconditionError("circuit event needs an annulus region graph")
    region = g.region
    eps = g.mesh_eps
    ci = round(2.0 * region.cx / eps)
    cj = round(2.0 * region.cy / eps)

    active = _want(config, color) & g.in_region
    adj: dict[int, list[tuple[int, int]]] = {}
    for u, v in g.edges:
        if not (active[u] and active[v]):
            continue
        iu, ju = int(g.ij[u, 0]), int(g.ij[u, 1])
        iv, jv = int(g.ij[v, 0]), int(g.ij[v, 1])
        # ray from the hole center along +x at height cj + 1/3 (in half-units;
        # never passes through a site, so crossings are transversal)
        a = 3 * (ju - cj) - 1
        b = 3 * (jv - cj) - 1
        w = 0
        if (a > 0) != (b > 0):
            # x-coordinate where the segment meets the ray line, times (b - a)
            # sign bookkeeping done with exact integers
            num = iu * b - iv * a  # = (b-a) * x_cross  when oriented u -> v
            den = b - a
            # crossing point x >= ci ?
            if (num - ci * den > 0) == (den > 0) or num == ci * den:
                w = 1 if jv > ju else -1
        adj.setdefault(u, []).append((v, w))
        adj.setdefault(v, []).append((u, -w))

    seen: dict[int, int] = {}
    for start in adj:
        if start in seen:
            continue
        seen[start] = 0
        stack = [(start, 0)]
        levels = {start: 0}
        while stack:
            node, lev = stack.pop()
            for nxt, w in adj[node]:
                nl = lev + w
                if nxt not in levels:
                    levels[nxt] = nl
                    seen[nxt] = 0
                    stack.append((nxt, nl))
                elif levels[nxt] != nl:
                    return True
    return False


# ---------------------------------------------------------------------------
# sub-rectangle crossings (geometric touch rule)


def subrect_crossing(
    config: ColoredConfig,
    rect: tuple[float, float, float, float],
    direction: str = "left_right",
    color: str = "black",
) -> bool:
    """Crossing of an arbitrary rectangle inside a larger colored config.

    The path lives on same-colored sites inside the closed rectangle; a
    side is touched by a site on it or by a same-colored edge whose
    segment crosses the side. Exactly the continuum convention for the
    black set as a union of closed edges.
    """
    x0, y0, x1, y1 = map(float, rect)
    g = config.graph
    tol = 1e-9 * g.mesh_eps
    pos = g.positions()
    want = _want(config, color)
    inside = (
        (pos[:, 0] >= x0 - tol)
        & (pos[:, 0] <= x1 + tol)
        & (pos[:, 1] >= y0 - tol)
        & (pos[:, 1] <= y1 + tol)
    )
    active = want & inside

    if direction == "left_right":
        sides = (((x0, y0), (x0, y1)), ((x1, y0), (x1, y1)))
        coord, lo, hi = 0, y0, y1
        svals = (x0, x1)
    elif direction == "top_bottom":
        sides = (((x0, y1), (x1, y1)), ((x0, y0), (x1, y0)))
        coord, lo, hi = 1, x0, x1
        svals = (y1, y0)
    else:
        raise PreconditionError(f"unknown direction {direction!r}")
    _ = sides

    other = 1 - coord
    touch = []
    for a in svals:
        t = active & (np.abs(pos[:, coord] - a) <= tol) \
            & (pos[:, other] >= lo - tol) & (pos[:, other] <= hi + tol)
        touch.append(t)

    # witness edges: same-colored edge from an inside site across the side
    u, v = g.edges[:, 0], g.edges[:, 1]
    colored = want[u] & want[v]
    for k, a in enumerate(svals):
        du = pos[u, coord] - a
        dv = pos[v, coord] - a
        crossing_edge = colored & (np.sign(du) * np.sign(dv) < 0)
        if crossing_edge.any():
            uu, vv = u[crossing_edge], v[crossing_edge]
            tpar = du[crossing_edge] / (du[crossing_edge] - dv[crossing_edge])
            ycross = pos[uu, other] + tpar * (pos[vv, other] - pos[uu, other])
            ok = (ycross >= lo - tol) & (ycross <= hi + tol)
            ins_u = inside[uu] & ok
            ins_v = inside[vv] & ok
            touch[k][uu[ins_u]] = touch[k][uu[ins_u]] | active[uu[ins_u]]
            touch[k][vv[ins_v]] = touch[k][vv[ins_v]] | active[vv[ins_v]]

    if not (touch[0].any() and touch[1].any()):
        return False
    labels = _component_labels(g, active)
    a = np.unique(labels[touch[0]])
    b = np.unique(labels[touch[1]])
    return bool(np.isin(a, b).any())


def multicross_event(config: ColoredConfig, k: int, r_table, color: str = "black") -> bool:
    """Conjunction of staggered crossings in [0, 5 r_k] x [0, r_k].

    Four horizontal crossings of the 2r x r rectangles [i r, (i+2) r] x [0, r]
    (i = 0..3) and three vertical crossings of the squares
    [j r, (j+1) r] x [0, r] (j = 1..3). Implies the long crossing of
    [0, 5r] x [0, r] on every configuration.
    """
    r = float(r_table[k])
    g = config.graph
    if not isinstance(g.region, Rect):
        raise PreconditionError("multicross needs a rectangle region")
    if g.region.x1 < 5 * r - 1e-9 or g.region.y1 < r - 1e-9:
        raise PreconditionError("region must contain [0, 5 r_k] x [0, r_k]")
    for i in range(4):
        if not subrect_crossing(config, (i * r, 0.0, (i + 2) * r, r), "left_right", color):
            return False
    for j in range(1, 4):
        if not subrect_crossing(config, (j * r, 0.0, (j + 1) * r, r), "top_bottom", color):
            return False
    return True


# ---------------------------------------------------------------------------
# batched evaluation (exhaustive checks, influence lookup tables)


def crossing_batch(
    graph: RegionGraph,
    colorings: np.ndarray,
    direction: str = "left_right",
    color: str = "black",
    chunk: int = 4096,
) -> np.ndarray:
    """Vectorized crossings for many colorings (rows of `colorings`).

    Colorings are given on in-region sites, ordered as
    graph.ij[graph.in_region]; fringe sites never matter for events.
    """
    marks = graph.marks
    if direction == "left_right":
        ma, mb = marks["left"], marks["right"]
    elif direction == "top_bottom":
        ma, mb = marks["top"], marks["bottom"]
    elif direction == "inner_outer":
        ma, mb = marks["inner"], marks["outer"]
    else:
        raise PreconditionError(f"unknown direction {direction!r}")

    core = np.flatnonzero(graph.in_region)
    n_core = len(core)
    if colorings.shape[1] != n_core:
        raise PreconditionError("colorings must cover exactly the in-region sites")
    full_to_core = -np.ones(graph.n_sites, dtype=np.int64)
    full_to_core[core] = np.arange(n_core)
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    core_edges = (full_to_core[u] >= 0) & (full_to_core[v] >= 0)
    eu = full_to_core[u[core_edges]]
    ev = full_to_core[v[core_edges]]
    ta = full_to_core[np.flatnonzero(ma & graph.in_region)]
    tb = full_to_core[np.flatnonzero(mb & graph.in_region)]

    want_all = colorings if color == "black" else ~colorings
    out = np.zeros(len(colorings), dtype=bool)
    for s in range(0, len(colorings), chunk):
        want = want_all[s : s + chunk]
        B = want.shape[0]
        keep = want[:, eu] & want[:, ev]  # (B, E)
        b_idx, e_idx = np.nonzero(keep)
        gu = b_idx * n_core + eu[e_idx]
        gv = b_idx * n_core + ev[e_idx]
        mat = sparse.csr_matrix(
            (np.ones(len(gu), dtype=np.int8), (gu, gv)), shape=(B * n_core, B * n_core)
        )
        _, labels = csgraph.connected_components(mat, directed=False)
        labels = labels.reshape(B, n_core)
        La = np.where(want[:, ta], labels[:, ta], -1)
        Lb = np.where(want[:, tb], labels[:, tb], -2)
        hit = (La[:, :, None] == Lb[:, None, :]).any(axis=(1, 2))
        out[s : s + chunk] = hit
    return out


def crossing_truth_table(
    graph: RegionGraph, direction: str = "left_right", color: str = "black"
) -> np.ndarray:
    """Boolean table over all 2^k colorings of the in-region sites.

    Bit i of the coloring index is site i of graph.ij[graph.in_region].
    Only meant for small graphs (k <= 20).
    """
    n_core = int(graph.in_region.sum())
    if n_core > 20:
        raise PreconditionError(f"truth table limited to 20 in-region sites, got {n_core}")
    idx = np.arange(1 << n_core, dtype=np.uint32)
    colorings = (idx[:, None] >> np.arange(n_core)) & 1
    return crossing_batch(graph, colorings.astype(bool), direction, color)


# ---------------------------------------------------------------------------
# Monte Carlo crossing probability


def check_site_cap(graph: RegionGraph) -> None:
    if graph.n_sites > MAX_SITES:
        raise ResourceCapError(
            f"{graph.n_sites} sites exceeds the per-configuration cap {MAX_SITES}"
        )


def _crossing_chunk(args) -> tuple[int, int]:
    graph, sqrt_kernel, p, seed, stream, start, stop = args
    hits = 0
    for r in range(start, stop):
        sample = sample_sqrt_convolution(sqrt_kernel, graph, seed, stream, r)
        cfg = ColoredConfig(graph, sample.values >= -p, p)
        hits += bool(crossing(cfg, "left_right", "black"))
    return stop - start, hits


def estimate_crossing(
    kernel: Kernel,
    eps: float,
    R: float,
    rho: float,
    p: float,
    n: int,
    seed: int,
    stream: int = 0,
    threads: int = 1,
    graph: RegionGraph | None = None,
    sqrt_kernel=None,
) -> MCEstimate:
    """P[Cross_p^eps(rho R, R)] over n independent field samples."""
    if n < 1:
        raise PreconditionError("need at least one replicate")
    if graph is None:
        graph = build_region_graph(eps, Rect(0.0, 0.0, rho * R, R))
    check_site_cap(graph)
    if sqrt_kernel is None:
        sqrt_kernel = build_sqrt_kernel(kernel, spectral_mesh(eps))

    chunk = 512
    spans = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    args = [(graph, sqrt_kernel, p, seed, stream, a, b) for a, b in spans]
    if threads > 1 and len(spans) > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(threads) as pool:
            parts = pool.map(_crossing_chunk, args)
    else:
        parts = [_crossing_chunk(a) for a in args]

    total = sum(c for c, _ in parts)
    hits = sum(h for _, h in parts)
    mean = hits / total
    sd = math.sqrt(max(0.0, mean * (1.0 - mean) * total / max(1, total - 1)))
    return MCEstimate(mean, sd / math.sqrt(total), total, stream_label(seed, stream))


def r_sequence(k_max: int) -> dict:
    """Scale sequence r_0 = 1, r_{k+1} = 2 r_k + sqrt(r_k).

    Also reports the geometric bracket 2^k <= r_k <= C 2^k with the
    smallest C observed on the computed range.
    """
    if k_max < 0:
        raise PreconditionError("k_max must be >= 0")
    r = [1.0]
    for _ in range(k_max):
        r.append(2.0 * r[-1] + math.sqrt(r[-1]))
    ratios = [rk / 2.0**k for k, rk in enumerate(r)]
    return {
        "r": r,
        "lower_ok": all(rk >= 2.0**k for k, rk in enumerate(r)),
        "bracket_constant": max(ratios),
    }
