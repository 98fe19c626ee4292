"""Covariance kernels and their discrete convolution square roots.

A kernel kappa is a normalized stationary covariance on R^2 with strictly
positive Fourier transform. For a mesh eps the table eta_eps on Z^2 solves

    (eta_eps * eta_eps)(m) = kappa(eps * m),

so convolving white noise with eta_eps realizes the field restricted to
eps*Z^2 exactly (up to table truncation). eta_eps is obtained as the
Fourier coefficients of the square root of the periodized spectral
density: lam(xi) = sqrt(sum_m kappa_hat((xi - 2*pi*m)/eps)), evaluated on
a uniform torus grid and inverted with an FFT (trapezoidal quadrature,
which converges fast because lam is smooth and periodic).

Supported kernels: the Gaussian covariance exp(-|x|^2/2) and the rational
family ((1+x1^2)(1+x2^2))^(-n). The transform of the rational kernel is a
product h_n(xi1)*h_n(xi2) where h_n is the n-fold convolution of the
two-sided exponential density, available in closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import PreconditionError, QuadratureError

__all__ = [
    "Kernel",
    "SqrtKernel",
    "bargmann_fock",
    "rational",
    "kernel_from_name",
    "eval_kappa",
    "eval_kappa_hat",
    "log_kappa_hat",
    "build_sqrt_kernel",
    "direct_convolution",
    "op_norm_scan",
]

GAUSSIAN = "bargmann_fock"
RATIONAL = "rational"

#: conv_residual threshold that build_sqrt_kernel refines towards
CONV_TOL = 1e-6
#: refinement cap on the torus quadrature grid
MAX_GRID_ORDER = 4096
#: relative mass threshold for extending the lattice sum inside lam
IMAGE_TAIL_RTOL = 1e-14
#: relative table-tail mass allowed when auto-selecting the support radius
SUPPORT_TAIL_RTOL = 1e-8


@dataclass(frozen=True)
class Kernel:
    """A supported covariance kernel with its decay/symmetry metadata."""

    name: str
    order: int = 0  # exponent n for the rational family
    alpha: float = math.inf  # polynomial decay exponent of kappa
    rotation_invariant: bool = True
    quarter_turn_invariant: bool = True
    axis_reflection_invariant: bool = True

    def label(self) -> str:
        return self.name if self.name == GAUSSIAN else f"{self.name}({self.order})"


def bargmann_fock() -> Kernel:
    """Gaussian covariance exp(-|x|^2 / 2); super-polynomial decay."""
    return Kernel(name=GAUSSIAN, alpha=math.inf, rotation_invariant=True)


def rational(n: int) -> Kernel:
    """Covariance ((1+x1^2)(1+x2^2))^(-n); decays like |x|^(-2n) along axes."""
    if n < 1:
        raise PreconditionError("rational kernel order must be a positive integer")
    return Kernel(name=RATIONAL, order=int(n), alpha=2.0 * n, rotation_invariant=False)


def kernel_from_name(spec: str) -> Kernel:
    """Parse CLI-style names: 'bf', 'bargmann_fock', 'rational3', 'rational(3)'."""
    s = spec.strip().lower()
    if s in ("bf", "bargmann_fock", "bargmann-fock", "gaussian"):
        return bargmann_fock()
    if s.startswith(RATIONAL):
        digits = s[len(RATIONAL):].strip("()")
        if digits.isdigit() and int(digits) >= 1:
            return rational(int(digits))
    raise PreconditionError(f"unsupported kernel {spec!r}")


# ---------------------------------------------------------------------------
# closed-form evaluation


def eval_kappa(kernel: Kernel, x) -> np.ndarray:
    """kappa(x) for points x with shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    if kernel.name == GAUSSIAN:
        return np.exp(-0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2))
    if kernel.name == RATIONAL:
        base = (1.0 + x[..., 0] ** 2) * (1.0 + x[..., 1] ** 2)
        return base ** (-float(kernel.order))
    raise PreconditionError(f"unsupported kernel {kernel.name!r}")


def _laplace_convolution_coeffs(n: int) -> np.ndarray:
    """Coefficients of h_n(t) = exp(-|t|) * sum_k c[k] |t|^(n-1-k).

    h_1(t) = exp(-|t|)/2 is the two-sided exponential density; h_n is its
    n-fold convolution (the density of a Gamma(n) difference):
    c[k] = C(n-1,k) (n-1+k)! / ((n-1)!^2 2^(n+k)).
    """
    c = np.empty(n)
    for k in range(n):
        c[k] = (
            math.comb(n - 1, k)
            * math.factorial(n - 1 + k)
            / (math.factorial(n - 1) ** 2 * 2.0 ** (n + k))
        )
    return c


def _log_h_n(t: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    a = np.abs(t)
    n = len(coeffs)
    powers = a[..., None] ** np.arange(n - 1, -1, -1.0)
    poly = powers @ coeffs
    return -a + np.log(poly)


def log_kappa_hat(kernel: Kernel, xi) -> np.ndarray:
    """log of the Fourier transform, convention
    kappa_hat(xi) = (1/4pi^2) * integral exp(-i<xi,x>) kappa(x) dx.

    Working in log space keeps the periodized symbol strictly positive even
    where the linear value underflows float64 (small-mesh Gaussian tails).
    """
    xi = np.asarray(xi, dtype=float)
    if kernel.name == GAUSSIAN:
        return -0.5 * (xi[..., 0] ** 2 + xi[..., 1] ** 2) - math.log(2.0 * math.pi)
    if kernel.name == RATIONAL:
        coeffs = _laplace_convolution_coeffs(kernel.order)
        return _log_h_n(xi[..., 0], coeffs) + _log_h_n(xi[..., 1], coeffs)
    raise PreconditionError(f"unsupported kernel {kernel.name!r}")


def eval_kappa_hat(kernel: Kernel, xi) -> np.ndarray:
    """kappa_hat(xi) > 0 for points xi with shape (..., 2)."""
    return np.exp(log_kappa_hat(kernel, xi))


# ---------------------------------------------------------------------------
# square-root table


@dataclass(frozen=True)
class SqrtKernel:
    """Truncated convolution square root eta_eps on Z^2.

    table[M+m1, M+m2] = eta_eps(m1, m2) for |m|_inf <= M = support_radius.
    sum_abs is the l1 mass of the table (the infinite-operator-norm
    diagnostic); conv_residual the worst direct-convolution defect
    max |(eta*eta)(m) - kappa(eps m)| over tested lags.
    """

    kernel: Kernel
    mesh_eps: float
    support_radius: int
    grid_order: int
    table: np.ndarray = field(repr=False)
    sum_abs: float
    conv_residual: float

    def eta(self, m1: int, m2: int) -> float:
        M = self.support_radius
        if max(abs(m1), abs(m2)) > M:
            return 0.0
        return float(self.table[M + m1, M + m2])

    # -- serialization (versioned JSON cache) -------------------------------

    FORMAT = "gfperc-sqrt-kernel/1"

    def to_json_dict(self) -> dict:
        return {
            "format": self.FORMAT,
            "kernel": {"name": self.kernel.name, "order": self.kernel.order},
            "mesh_eps": self.mesh_eps,
            "support_radius": self.support_radius,
            "grid_order": self.grid_order,
            "sum_abs": self.sum_abs,
            "conv_residual": self.conv_residual,
            "table": [[float(v) for v in row] for row in self.table],
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, d: dict) -> "SqrtKernel":
        if d.get("format") != cls.FORMAT:
            raise PreconditionError(f"unsupported cache format {d.get('format')!r}")
        kd = d["kernel"]
        kern = bargmann_fock() if kd["name"] == GAUSSIAN else rational(kd["order"])
        table = np.array(d["table"], dtype=float)
        return cls(
            kernel=kern,
            mesh_eps=float(d["mesh_eps"]),
            support_radius=int(d["support_radius"]),
            grid_order=int(d["grid_order"]),
            table=table,
            sum_abs=float(d["sum_abs"]),
            conv_residual=float(d["conv_residual"]),
        )

    @classmethod
    def load(cls, path) -> "SqrtKernel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    def cache_key(self) -> str:
        return (
            f"{self.kernel.label()}_eps{self.mesh_eps:g}"
            f"_M{self.support_radius}_N{self.grid_order}"
        ).replace("(", "").replace(")", "")


def _periodized_log_symbol(kernel: Kernel, eps: float, grid_order: int) -> np.ndarray:
    """log of sum_m kappa_hat((xi - 2 pi m)/eps) on the uniform torus grid.

    Images are added shell by shell (|m|_inf = r) until the added mass is
    below IMAGE_TAIL_RTOL of the running total.
    """
    n = grid_order
    xi = 2.0 * math.pi * np.arange(n) / n
    xi = (xi + math.pi) % (2.0 * math.pi) - math.pi  # center to [-pi, pi)
    X1, X2 = np.meshgrid(xi, xi, indexing="ij")
    logs = []
    for r in range(0, 64):
        shell_logs = []
        for m1 in range(-r, r + 1):
            for m2 in range(-r, r + 1):
                if max(abs(m1), abs(m2)) != r:
                    continue
                pts = np.stack(
                    [(X1 - 2.0 * math.pi * m1) / eps, (X2 - 2.0 * math.pi * m2) / eps],
                    axis=-1,
                )
                shell_logs.append(log_kappa_hat(kernel, pts))
        logs.extend(shell_logs)
        if r >= 1:
            total = logsumexp(np.stack(logs, axis=0), axis=0)
            shell = logsumexp(np.stack(shell_logs, axis=0), axis=0)
            if np.all(shell - total < math.log(IMAGE_TAIL_RTOL)):
                return total
    raise QuadratureError("lattice sum in the periodized symbol did not settle", math.inf)


def direct_convolution(table: np.ndarray, m1: int, m2: int) -> float:
    """(eta * eta)(m) by direct summation over the truncated table.

    Independent of the FFT quadrature path; used for conv_residual and as
    the test oracle.
    """
    M = (table.shape[0] - 1) // 2
    a1, b1 = max(-M, m1 - M), min(M, m1 + M)
    a2, b2 = max(-M, m2 - M), min(M, m2 + M)
    if a1 > b1 or a2 > b2:
        return 0.0
    A = table[a1 + M : b1 + M + 1, a2 + M : b2 + M + 1]
    B = table[m1 - b1 + M : m1 - a1 + M + 1, m2 - b2 + M : m2 - a2 + M + 1][::-1, ::-1]
    return float((A * B).sum())


def _conv_residual(kernel: Kernel, eps: float, table: np.ndarray, check_radius: int) -> float:
    M = (table.shape[0] - 1) // 2
    lags = np.arange(-check_radius, check_radius + 1)
    worst = 0.0
    for m1 in lags:
        targets = eval_kappa(
            kernel, np.stack([np.full_like(lags, m1) * eps, lags * eps], axis=-1)
        )
        for k, m2 in enumerate(lags):
            worst = max(worst, abs(direct_convolution(table, int(m1), int(m2)) - targets[k]))
    _ = M
    return worst


def _extract_table(eta_full: np.ndarray, M: int) -> np.ndarray:
    n = eta_full.shape[0]
    idx = np.arange(-M, M + 1) % n
    tab = eta_full[np.ix_(idx, idx)]
    # enforce exact evenness eta(m) = eta(-m)
    return 0.5 * (tab + tab[::-1, ::-1])


def _auto_support_radius(eta_full: np.ndarray) -> int:
    n = eta_full.shape[0]
    half = n // 2 - 1
    mags = np.abs(np.fft.fftshift(eta_full))
    total = mags.sum()
    c = n // 2  # center after shift
    for M in range(4, half + 1):
        inner = mags[c - M : c + M + 1, c - M : c + M + 1].sum()
        if total - inner < SUPPORT_TAIL_RTOL * total:
            return M
    return half


def build_sqrt_kernel(
    kernel: Kernel,
    eps: float,
    grid_order: int | None = None,
    support_radius: int | None = None,
    conv_tol: float = CONV_TOL,
    check_radius: int | None = None,
) -> SqrtKernel:
    """Build the truncated square-root table eta_eps for kappa(eps . ) on Z^2.

    The torus quadrature grid starts at `grid_order` (a power of two,
    >= 2*support_radius when both are given) and doubles until the direct
    convolution residual drops below `conv_tol`, up to MAX_GRID_ORDER.
    When `support_radius` is omitted it is chosen so the discarded table
    tail carries less than SUPPORT_TAIL_RTOL of the l1 mass.
    """
    if eps <= 0:
        raise PreconditionError("mesh eps must be positive")
    if grid_order is not None:
        if grid_order < 4 or grid_order & (grid_order - 1) != 0:
            raise PreconditionError("grid_order must be a power of two >= 4")
        if support_radius is not None and grid_order < 2 * support_radius:
            raise PreconditionError("grid_order must be at least 2 * support_radius")

    if grid_order is None:
        want = support_radius if support_radius is not None else max(16, int(6.0 / eps))
        grid_order = 64
        while grid_order < 2 * want + 2:
            grid_order *= 2

    n = grid_order
    if support_radius is not None:
        # index +-M must not wrap on the FFT grid
        while n < 2 * support_radius + 2:
            n *= 2
    last_residual = math.inf
    while True:
        log_sym = _periodized_log_symbol(kernel, eps, n)
        if not np.all(np.isfinite(log_sym)):
            raise QuadratureError("periodized symbol is not strictly positive", math.inf)
        lam = np.exp(0.5 * log_sym)
        eta_full = (2.0 * math.pi / eps) * np.fft.ifft2(lam).real

        M = support_radius if support_radius is not None else _auto_support_radius(eta_full)
        M = min(M, n // 2 - 1)
        table = _extract_table(eta_full, M)
        radius = check_radius if check_radius is not None else min(20, max(2, M // 2))
        radius = min(radius, M)
        residual = _conv_residual(kernel, eps, table, radius)
        if residual <= conv_tol:
            return SqrtKernel(
                kernel=kernel,
                mesh_eps=float(eps),
                support_radius=int(M),
                grid_order=int(n),
                table=table,
                sum_abs=float(np.abs(table).sum()),
                conv_residual=float(residual),
            )
        last_residual = residual
        if n >= MAX_GRID_ORDER:
            raise QuadratureError(
                f"convolution residual {last_residual:.3e} above {conv_tol:.1e} "
                f"at grid cap {MAX_GRID_ORDER}",
                last_residual,
            )
        n *= 2


def op_norm_scan(kernel: Kernel, eps_grid, **build_kwargs) -> list[dict]:
    """sum_abs diagnostic across meshes.

    Returns rows {eps, sum_abs, ratio} with ratio = sum_abs*eps/log(1/eps)
    (None when eps >= 1, where the normalizer is meaningless). For the
    Gaussian kernel the ratio column stays bounded as eps decreases.
    """
    rows = []
    for eps in eps_grid:
        sk = build_sqrt_kernel(kernel, float(eps), **build_kwargs)
        ratio = None
        if eps < 1.0:
            ratio = sk.sum_abs * eps / math.log(1.0 / eps)
        rows.append({"eps": float(eps), "sum_abs": sk.sum_abs, "ratio": ratio})
    return rows
