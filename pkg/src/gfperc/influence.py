"""Influences of Gaussian threshold events and the Russo-type derivative.

For an n-dimensional centered Gaussian X with covariance Sigma and an
increasing event B over the threshold coloring omega^p_i = 1{X_i >= -p},
the influence of coordinate i equals

    I_i = P[Piv_i^p(B) | X_i = -p] * exp(-p^2/(2 Sigma_ii)) / sqrt(2 pi Sigma_ii),

and the sum over i is d/dp P[omega^p in B]. The conditional law is reached
exactly by the shift X' = X + (q - X_i) Sigma(:,i)/Sigma_ii, which leaves a
Gaussian with the Schur-complement covariance, so pivotal probabilities are
plain Monte Carlo under the conditioned draws.

The module also checks the KKL-type lower bound on the influence sum
(weighted by the infinity operator norm of the symmetric square root of
Sigma), the sub-linearity of directional influences under Minkowski
enlargement, conditional monotonicity in the conditioning value, and the
decay of pivotal probabilities of lattice crossings with scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import PreconditionError
from .kernels import GAUSSIAN, RATIONAL, Kernel, build_sqrt_kernel, eval_kappa
from .lattice import Rect, build_region_graph, spectral_mesh
from .percolation import (
    ColoredConfig,
    MCEstimate,
    MeanAccumulator,
    check_site_cap,
    crossing,
    crossing_truth_table,
)
from .rng import replicate_rng, stream_label
from .sampler import sample_sqrt_convolution

__all__ = [
    "GaussianSpec",
    "InfluenceEstimate",
    "DictatorEvent",
    "MajorityEvent",
    "TribesEvent",
    "GridCrossEvent",
    "LatticeCrossingEvent",
    "HalfSpace",
    "Orthant",
    "ThresholdSet",
    "condition_on_site",
    "influence_of_site",
    "russo_check",
    "kkl_check",
    "sublinearity_check",
    "conditional_monotonicity_check",
    "pivotal_decay_scan",
    "lattice_gaussian_spec",
]

_SYM_TOL = 1e-10


class GaussianSpec:
    """Finite-dimensional centered Gaussian with cached factorizations."""

    def __init__(self, sigma, sqrt_sigma=None):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise PreconditionError("covariance must be a square matrix")
        if np.max(np.abs(sigma - sigma.T)) > _SYM_TOL:
            raise PreconditionError("covariance must be symmetric")
        if np.any(np.diag(sigma) <= 0):
            raise PreconditionError("covariance needs positive diagonal entries")
        self.sigma = 0.5 * (sigma + sigma.T)
        if sqrt_sigma is not None:
            sqrt_sigma = np.asarray(sqrt_sigma, dtype=float)
            if np.max(np.abs(sqrt_sigma @ sqrt_sigma - self.sigma)) > 1e-10:
                raise PreconditionError("provided sqrt_sigma does not square to sigma")
            self._sqrt = sqrt_sigma
        else:
            self._sqrt = None

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @cached_property
    def sqrt_sigma(self) -> np.ndarray:
        """Symmetric PSD square root (eigendecomposition)."""
        if self._sqrt is not None:
            return self._sqrt
        w, V = np.linalg.eigh(self.sigma)
        if w.min() <= 0:
            raise PreconditionError("covariance is numerically degenerate")
        return (V * np.sqrt(w)) @ V.T

    @cached_property
    def inf_op_norm(self) -> float:
        """||sqrt(Sigma)||_{inf,op} = max_i sum_j |sqrt(Sigma)(i,j)|."""
        return float(np.abs(self.sqrt_sigma).sum(axis=1).max())

    @cached_property
    def _chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.sigma)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((size, self.n)) @ self._chol.T


def lattice_gaussian_spec(kernel: Kernel, graph) -> GaussianSpec:
    """Covariance of the field restricted to a graph's in-region sites."""
    pos = graph.positions()[graph.in_region]
    diff = pos[:, None, :] - pos[None, :, :]
    return GaussianSpec(eval_kappa(kernel, diff))


# ---------------------------------------------------------------------------
# threshold events


class DictatorEvent:
    """B = {omega_i = 1}."""

    increasing = True

    def __init__(self, n: int, i: int = 0):
        self.n, self.i = n, i

    def evaluate(self, omega: np.ndarray) -> np.ndarray:
        return omega[:, self.i].astype(bool)


class MajorityEvent:
    """B = {sum omega > n/2}, n odd."""

    increasing = True

    def __init__(self, n: int):
        if n % 2 == 0:
            raise PreconditionError("majority needs odd n")
        self.n = n

    def evaluate(self, omega: np.ndarray) -> np.ndarray:
        return omega.sum(axis=1) > self.n // 2


class TribesEvent:
    """B = {some tribe all ones}; coordinates split into consecutive tribes."""

    increasing = True

    def __init__(self, tribe_size: int, n_tribes: int):
        self.tribe_size, self.n_tribes = tribe_size, n_tribes
        self.n = tribe_size * n_tribes

    def evaluate(self, omega: np.ndarray) -> np.ndarray:
        blocks = omega.reshape(len(omega), self.n_tribes, self.tribe_size)
        return blocks.all(axis=2).any(axis=1)


class GridCrossEvent:
    """Left-right crossing of a rows x cols site grid with 8-adjacency.

    Small synthetic crossing fixture; coordinates are row-major. Evaluated
    through a precomputed truth table.
    """

    increasing = True

    def __init__(self, rows: int, cols: int):
        self.rows, self.cols = rows, cols
        self.n = rows * cols
        if self.n > 20:
            raise PreconditionError("grid fixture limited to 20 sites")
        self._table = self._build_table()

    def _adjacent(self, a: int, b: int) -> bool:
        ra, ca = divmod(a, self.cols)
        rb, cb = divmod(b, self.cols)
        return max(abs(ra - rb), abs(ca - cb)) == 1

    def _build_table(self) -> np.ndarray:
        n = self.n
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n) if self._adjacent(a, b)]
        table = np.zeros(1 << n, dtype=bool)
        left = [r * self.cols for r in range(self.rows)]
        right = [r * self.cols + self.cols - 1 for r in range(self.rows)]
        for mask in range(1 << n):
            parent = list(range(n))

            def find(x):
                while parent[x] != x:
                    parent[x] = parent[parent[x]]
                    x = parent[x]
                return x

            for a, b in pairs:
                if mask >> a & 1 and mask >> b & 1:
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[ra] = rb
            roots_l = {find(s) for s in left if mask >> s & 1}
            roots_r = {find(s) for s in right if mask >> s & 1}
            table[mask] = bool(roots_l & roots_r)
        return table

    def evaluate(self, omega: np.ndarray) -> np.ndarray:
        idx = (omega.astype(np.uint32) << np.arange(self.n, dtype=np.uint32)).sum(axis=1)
        return self._table[idx]


class LatticeCrossingEvent:
    """Crossing event of a region graph, over its in-region sites.

    Uses a truth table when the graph is small enough, otherwise batched
    component labeling.
    """

    increasing = True

    def __init__(self, graph, direction: str = "left_right"):
        self.graph = graph
        self.direction = direction
        self.n = int(graph.in_region.sum())
        self._table = None
        if self.n <= 20:
            self._table = crossing_truth_table(graph, direction, "black")

    def evaluate(self, omega: np.ndarray) -> np.ndarray:
        if self._table is not None:
            idx = (omega.astype(np.uint64) << np.arange(self.n, dtype=np.uint64)).sum(axis=1)
            return self._table[idx]
        from .percolation import crossing_batch

        return crossing_batch(self.graph, omega.astype(bool), self.direction, "black")


# monotone Borel sets in R^n (for the enlargement-based influence)


class HalfSpace:
    """{x : <w, x> >= b}; increasing when w >= 0."""

    def __init__(self, w, b: float):
        self.w = np.asarray(w, dtype=float)
        self.b = float(b)
        if np.any(self.w < 0):
            raise PreconditionError("half-space fixture requires w >= 0")
        self.n = len(self.w)
        self.increasing = True

    def contains(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w >= self.b


class Orthant:
    """{x : x_i >= t_i for all i}; increasing."""

    def __init__(self, t):
        self.t = np.asarray(t, dtype=float)
        self.n = len(self.t)
        self.increasing = True

    def contains(self, x: np.ndarray) -> np.ndarray:
        return (x >= self.t).all(axis=1)


class ThresholdSet:
    """Preimage {x : omega^p(x) in B} of a threshold event; increasing."""

    def __init__(self, event, p: float):
        self.event = event
        self.p = float(p)
        self.n = event.n
        self.increasing = True

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.event.evaluate(x >= -self.p)


# ---------------------------------------------------------------------------
# conditioning and influences


def condition_on_site(x: np.ndarray, i: int, q: float, sigma_col, sigma_ii: float | None = None):
    """Exact draw from L(X | X_i = q) given a draw x of X.

    x may be a single vector or a batch (rows). sigma_col is Sigma(:, i);
    the shift X + (q - X_i) Sigma(:,i)/Sigma_ii preserves the conditional
    law because the adjusted vector is independent of X_i.
    """
    col = np.asarray(sigma_col, dtype=float)
    sii = float(col[i]) if sigma_ii is None else float(sigma_ii)
    if sii <= 0:
        raise PreconditionError("conditioning needs Sigma_ii > 0")
    x = np.asarray(x, dtype=float)
    v = col / sii
    if x.ndim == 1:
        return x + (q - x[i]) * v
    return x + (q - x[:, i])[:, None] * v


def _density_factor(p: float, sigma_ii: float) -> float:
    return math.exp(-p * p / (2.0 * sigma_ii)) / math.sqrt(2.0 * math.pi * sigma_ii)


@dataclass(frozen=True)
class InfluenceEstimate:
    site: int
    level: float
    pivotal_prob: MCEstimate
    influence: float
    influence_se: float
    density_factor: float


def _pivotal_indicators(event, omega: np.ndarray, i: int) -> np.ndarray:
    w = omega.copy()
    w[:, i] = False
    lo = event.evaluate(w)
    w[:, i] = True
    hi = event.evaluate(w)
    return lo != hi


def influence_of_site(
    event,
    spec: GaussianSpec,
    i: int,
    p: float,
    n: int,
    seed: int,
    stream: int = 0,
) -> InfluenceEstimate:
    """I_i via exact conditioning: pivotal probability times density factor."""
    if not getattr(event, "increasing", False):
        raise PreconditionError("influence formula requires an increasing event")
    rng = replicate_rng(seed, stream)
    x = spec.sample(n, rng)
    xc = condition_on_site(x, i, -p, spec.sigma[:, i])
    omega = xc >= -p
    piv = _pivotal_indicators(event, omega, i)
    acc = MeanAccumulator()
    acc.add_many(piv.astype(float))
    pe = acc.estimate(stream_label(seed, stream))
    dens = _density_factor(p, spec.sigma[i, i])
    return InfluenceEstimate(
        site=i,
        level=p,
        pivotal_prob=pe,
        influence=pe.mean * dens,
        influence_se=pe.stderr * dens,
        density_factor=dens,
    )


@dataclass(frozen=True)
class RussoReport:
    level: float
    influences: tuple
    influence_sum: float
    influence_sum_se: float
    derivative_fd: float
    derivative_fd_se: float
    h: float
    difference: float
    limit: float
    passed: bool


def event_probability(event, spec: GaussianSpec, p: float, n: int, seed: int, stream: int = 0) -> MCEstimate:
    rng = replicate_rng(seed, stream)
    x = spec.sample(n, rng)
    hits = event.evaluate(x >= -p)
    acc = MeanAccumulator()
    acc.add_many(hits.astype(float))
    return acc.estimate(stream_label(seed, stream))


def russo_check(
    event,
    spec: GaussianSpec,
    p: float,
    h: float,
    n: int,
    seed: int,
    tolerance_multiplier: float = 3.0,
) -> RussoReport:
    """Compare sum_i I_i against the central finite difference of p -> P[B].

    The finite difference reuses one set of draws at both levels (the
    coloring is monotone in p), which cancels most of its variance.
    """
    ests = [
        influence_of_site(event, spec, i, p, n, seed, stream=i) for i in range(spec.n)
    ]
    total = float(sum(e.influence for e in ests))
    total_se = math.sqrt(sum(e.influence_se**2 for e in ests))

    rng = replicate_rng(seed, stream=spec.n)
    x = spec.sample(n, rng)
    hi = event.evaluate(x >= -(p + h)).astype(float)
    lo = event.evaluate(x >= -(p - h)).astype(float)
    acc = MeanAccumulator()
    acc.add_many(hi - lo)
    diff_est = acc.estimate()
    fd = diff_est.mean / (2.0 * h)
    fd_se = diff_est.stderr / (2.0 * h)

    difference = abs(total - fd)
    limit = tolerance_multiplier * math.hypot(total_se, fd_se)
    return RussoReport(
        level=p,
        influences=tuple(ests),
        influence_sum=total,
        influence_sum_se=total_se,
        derivative_fd=fd,
        derivative_fd_se=fd_se,
        h=h,
        difference=difference,
        limit=limit,
        passed=bool(difference <= limit),
    )


@dataclass(frozen=True)
class KKLReport:
    level: float
    mu: float
    influence_sum: float
    max_influence: float
    op_norm: float
    rhs_without_constant: float
    implied_constant: float | None
    vacuous: bool


def kkl_check(event, spec: GaussianSpec, p: float, n: int, seed: int) -> KKLReport:
    """Evaluate both sides of the KKL-type bound and report the implied
    constant LHS/RHS (None when the log factor is vacuous)."""
    ests = [
        influence_of_site(event, spec, i, p, n, seed, stream=i) for i in range(spec.n)
    ]
    total = float(sum(e.influence for e in ests))
    imax = float(max(e.influence for e in ests))
    mu = event_probability(event, spec, p, n, seed, stream=spec.n).mean
    norm = spec.inf_op_norm
    log_arg = 0.0 if imax <= 0 else 1.0 / (norm * imax)
    log_plus = max(0.0, math.log(log_arg)) if log_arg > 0 else 0.0
    rhs = (1.0 / norm) * mu * (1.0 - mu) * math.sqrt(log_plus)
    vacuous = rhs <= 0.0
    return KKLReport(
        level=p,
        mu=float(mu),
        influence_sum=total,
        max_influence=imax,
        op_norm=norm,
        rhs_without_constant=rhs,
        implied_constant=None if vacuous else total / rhs,
        vacuous=vacuous,
    )


# ---------------------------------------------------------------------------
# enlargement influences and sub-linearity


def _enlarged_contains(A, x: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    """Membership in A + [-r, r] v."""
    if not A.increasing:
        raise PreconditionError("enlargement implemented for increasing sets")
    if np.all(v >= 0) or np.all(v <= 0):
        return A.contains(x + r * np.abs(v))
    hits = A.contains(x + r * v)
    for s in np.linspace(-1.0, 1.0, 9):
        hits = hits | A.contains(x - s * r * v)
    return hits


def directional_influence(
    A,
    spec: GaussianSpec,
    v,
    r: float,
    n: int,
    seed: int,
    stream: int = 0,
    draws: np.ndarray | None = None,
) -> MCEstimate:
    """(mu(A + [-r,r]v) - mu(A)) / r by Monte Carlo (finite-r influence)."""
    v = np.asarray(v, dtype=float)
    if draws is None:
        rng = replicate_rng(seed, stream)
        draws = spec.sample(n, rng)
    base = A.contains(draws)
    grown = _enlarged_contains(A, draws, v, r)
    acc = MeanAccumulator()
    acc.add_many((grown.astype(float) - base.astype(float)) / r)
    return acc.estimate(stream_label(seed, stream))


def _richardson(rs, values, ses) -> tuple[float, float]:
    """Linear-in-r least-squares extrapolation to r = 0, with the intercept
    standard error propagated through the fit weights."""
    rs = np.asarray(rs, dtype=float)
    vals = np.asarray(values, dtype=float)
    ses = np.asarray(ses, dtype=float)
    if len(rs) == 1:
        return float(vals[0]), float(ses[0])
    xbar = rs.mean()
    sxx = ((rs - xbar) ** 2).sum()
    w = 1.0 / len(rs) - xbar * (rs - xbar) / sxx  # intercept weights
    return float(w @ vals), float(np.sqrt((w**2) @ (ses**2)))


@dataclass(frozen=True)
class SublinearityReport:
    v: tuple
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    r_grid: tuple
    margin: float
    passed: bool


def sublinearity_check(
    A,
    spec: GaussianSpec,
    v,
    n: int,
    seed: int,
    r_grid=(0.05, 0.02, 0.01),
    tolerance_multiplier: float = 4.0,
) -> SublinearityReport:
    """Check I_v(A) <= sum_i |v_i| I_i(A) with Richardson-extrapolated
    finite-r influences. Each direction evaluates its whole r-grid on one
    set of draws, so the extrapolation noise is common-mode."""
    v = np.asarray(v, dtype=float)
    draws = spec.sample(n, replicate_rng(seed, 1000))
    pts = [directional_influence(A, spec, v, r, n, seed, draws=draws) for r in r_grid]
    lhs, lhs_se = _richardson(r_grid, [e.mean for e in pts], [e.stderr for e in pts])

    rhs = 0.0
    rhs_var = 0.0
    for i in range(spec.n):
        if v[i] == 0.0:
            continue
        e_i = np.zeros(spec.n)
        e_i[i] = 1.0
        draws_i = spec.sample(n, replicate_rng(seed, 2000 + i))
        pts = [directional_influence(A, spec, e_i, r, n, seed, draws=draws_i) for r in r_grid]
        val, se = _richardson(r_grid, [e.mean for e in pts], [e.stderr for e in pts])
        rhs += abs(v[i]) * val
        rhs_var += (abs(v[i]) * se) ** 2
    rhs_se = math.sqrt(rhs_var)

    margin = rhs - lhs
    limit = -tolerance_multiplier * math.hypot(lhs_se, rhs_se)
    return SublinearityReport(
        v=tuple(v),
        lhs=lhs,
        lhs_se=lhs_se,
        rhs=rhs,
        rhs_se=rhs_se,
        r_grid=tuple(r_grid),
        margin=margin,
        passed=bool(margin >= limit),
    )


# ---------------------------------------------------------------------------
# conditional monotonicity


@dataclass(frozen=True)
class ConditionalMonotonicityReport:
    q_grid: tuple
    coupled_means: tuple
    coupled_nondecreasing: bool
    point_mean: float
    tail_mean: float
    tail_minus_point: float
    passed: bool


def conditional_monotonicity_check(
    spec: GaussianSpec,
    phi,
    q_grid,
    n: int,
    seed: int,
    p: float = 0.0,
) -> ConditionalMonotonicityReport:
    """For Sigma(0, i) >= 0 and non-decreasing phi of X_{1..n-1}:
    q -> E[phi(X) | X_0 = q] is non-decreasing, and
    E[phi | X_0 = -p] <= E[phi | X_0 >= -p].

    The q-grid means share one set of base draws; since the conditional
    shift is linear in q with a non-negative direction, the coupled means
    are non-decreasing exactly (not just within Monte Carlo error).
    """
    if np.any(spec.sigma[0, 1:] < 0):
        raise PreconditionError("conditional monotonicity needs Sigma(0, i) >= 0")
    rng = replicate_rng(seed, 0)
    x = spec.sample(n, rng)
    means = []
    for q in q_grid:
        xc = condition_on_site(x, 0, float(q), spec.sigma[:, 0])
        means.append(float(np.mean(phi(xc[:, 1:]))))
    coupled_ok = bool(np.all(np.diff(means) >= -1e-12))

    xc = condition_on_site(x, 0, -p, spec.sigma[:, 0])
    point = float(np.mean(phi(xc[:, 1:])))
    keep = x[:, 0] >= -p
    if keep.sum() < 2:
        raise PreconditionError("too few draws satisfy the tail conditioning")
    tail = float(np.mean(phi(x[keep][:, 1:])))

    se = float(np.std(phi(x[:, 1:]), ddof=1)) / math.sqrt(n)
    passed = coupled_ok and (tail - point >= -4.0 * se)
    return ConditionalMonotonicityReport(
        q_grid=tuple(float(q) for q in q_grid),
        coupled_means=tuple(means),
        coupled_nondecreasing=coupled_ok,
        point_mean=point,
        tail_mean=tail,
        tail_minus_point=tail - point,
        passed=passed,
    )


# ---------------------------------------------------------------------------
# pivotal decay with scale


@dataclass(frozen=True)
class PivotalDecayReport:
    level: float
    mesh_eps: float
    R_grid: tuple
    estimates: tuple  # MCEstimate per R
    center_sites: tuple  # (x, y) per R
    nonincreasing: bool
    loglog_slope: float | None


def pivotal_decay_scan(
    kernel: Kernel,
    eps: float,
    R_grid,
    p: float,
    n: int,
    seed: int,
) -> PivotalDecayReport:
    """P[Piv_center(Cross(2R, R)) | f(center) = -p] across scales R.

    The center site is the in-region site nearest to (R, R/2) (lowest index
    on ties). Conditioning uses the closed-form covariance column, exact in
    law up to the square-root table residual.
    """
    if kernel.name not in (GAUSSIAN, RATIONAL):
        raise PreconditionError(f"unsupported kernel {kernel.name!r}")
    if p < -1.0 or p > 1.0:
        raise PreconditionError("pivotal decay scan expects p in [-1, 1]")
    sqrt_kernel = build_sqrt_kernel(kernel, spectral_mesh(eps))
    rows = []
    centers = []
    for ridx, R in enumerate(R_grid):
        graph = build_region_graph(eps, Rect(0.0, 0.0, 2.0 * R, R))
        check_site_cap(graph)
        pos = graph.positions()
        target = np.array([R, R / 2.0])
        d2 = ((pos - target) ** 2).sum(axis=1)
        d2[~graph.in_region] = np.inf
        center = int(np.argmin(d2))
        centers.append(tuple(pos[center]))
        col = eval_kappa(kernel, pos - pos[center])
        acc = MeanAccumulator()
        for r in range(n):
            f = sample_sqrt_convolution(sqrt_kernel, graph, seed, stream=ridx, replicate=r)
            vals = condition_on_site(f.values, center, -p, col, sigma_ii=1.0)
            colors = vals >= -p
            colors[center] = True
            hi = crossing(ColoredConfig(graph, colors, p))
            colors[center] = False
            lo = crossing(ColoredConfig(graph, colors, p))
            acc.add(float(hi != lo))
        rows.append(acc.estimate(stream_label(seed, ridx)))

    means = [e.mean for e in rows]
    noninc = bool(all(means[k + 1] <= means[k] + 1e-12 for k in range(len(means) - 1)))
    slope = None
    if all(m > 0 for m in means) and len(means) >= 2:
        slope = float(np.polyfit(np.log(list(R_grid)), np.log(means), 1)[0])
    return PivotalDecayReport(
        level=p,
        mesh_eps=eps,
        R_grid=tuple(float(R) for R in R_grid),
        estimates=tuple(rows),
        center_sites=tuple(centers),
        nonincreasing=noninc,
        loglog_slope=slope,
    )
