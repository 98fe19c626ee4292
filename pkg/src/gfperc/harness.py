"""Experiment orchestration: sweeps, derived curves, persistence, caps.

Sweeps enumerate (R, p) cells of a crossing experiment; each cell is an
independent Monte Carlo estimate with its own stream id, so reruns with
the same seed reproduce the results table bit for bit regardless of the
worker count. Derived quantities: the logit curve g(p) = log(P/(1-P))
with delta-method errors, exponential decay fits of crossing failures in
R, the dyadic summability diagnostic, and the quadratic recursion report
for the scale sequence r_k.

Run manifests are JSON with a config hash; CSV outputs carry a header row
(UTF-8, '.' decimal separator). Volatile quantities such as wall time are
never written to output files, which keeps byte-identical reruns.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import PreconditionError
from .kernels import Kernel, build_sqrt_kernel, kernel_from_name
from .lattice import Rect, build_region_graph, spectral_mesh
from .percolation import MAX_SITES, MCEstimate, estimate_crossing
from .rng import stream_label

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "SWEEP_SCHEMA",
    "run_crossing_sweep",
    "logit_curve",
    "decay_fit",
    "DecayFit",
    "summability_report",
    "recursion_report",
    "eps_rule_log_cuberoot",
    "config_hash",
    "write_sweep_csv",
    "read_sweep_csv",
    "write_manifest",
]

SWEEP_SCHEMA = "gfperc-crossing-sweep/1"
SWEEP_COLUMNS = ["kernel", "eps", "R", "rho", "p", "n", "mean", "stderr", "seed"]


def eps_rule_log_cuberoot(R: float) -> float:
    """Mesh rule eps(R) = log(R)^(-1/3), snapped so the mesh divides R."""
    if R <= math.e:
        raise PreconditionError("eps rule log^(-1/3) needs R > e")
    raw = math.log(R) ** (-1.0 / 3.0)
    return R / max(1, round(R / raw))


@dataclass(frozen=True)
class ExperimentConfig:
    """A crossing-sweep request; grids must be non-empty, n >= 100."""

    kernel: str
    R_grid: tuple
    p_grid: tuple
    rho: float = 2.0
    eps: float | None = 0.5
    eps_rule: str | None = None  # "log_cuberoot" overrides eps per R
    n: int = 1000
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if len(self.R_grid) == 0 or len(self.p_grid) == 0:
            raise PreconditionError("R and p grids must be non-empty")
        if self.n < 100:
            raise PreconditionError("n >= 100 required for standard errors")
        if self.eps is None and self.eps_rule is None:
            raise PreconditionError("either eps or eps_rule must be set")
        kernel_from_name(self.kernel)

    def eps_for(self, R: float) -> float:
        if self.eps_rule is None:
            return float(self.eps)
        if self.eps_rule == "log_cuberoot":
            return eps_rule_log_cuberoot(R)
        raise PreconditionError(f"unknown eps rule {self.eps_rule!r}")

    def to_json_dict(self) -> dict:
        return asdict(self)


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_json_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunRecord:
    config: ExperimentConfig
    code_version: str
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    wall_time: float = 0.0  # informational; never serialized to outputs

    def manifest(self) -> dict:
        return {
            "schema": SWEEP_SCHEMA,
            "config": self.config.to_json_dict(),
            "config_hash": config_hash(self.config),
            "code_version": self.code_version,
            "rows": len(self.rows),
        }


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("gfperc")
    except Exception:
        return "unknown"


def run_crossing_sweep(config: ExperimentConfig) -> RunRecord:
    """Estimate P[Cross_p^eps(rho R, R)] over the config's (R, p) grid.

    Streams are numbered by cell position, so the table is reproducible
    from (config, seed) alone. Graphs and square-root tables are shared
    across the p grid of each R.
    """
    kern = kernel_from_name(config.kernel)
    record = RunRecord(config=config, code_version=_package_version())
    t0 = time.monotonic()
    stream = 0
    for R in config.R_grid:
        eps = config.eps_for(R)
        graph = build_region_graph(eps, Rect(0.0, 0.0, config.rho * R, R))
        if graph.n_sites > MAX_SITES:
            raise PreconditionError(
                f"R={R} at eps={eps} needs {graph.n_sites} sites (cap {MAX_SITES})"
            )
        sk = build_sqrt_kernel(kern, spectral_mesh(eps))
        for p in config.p_grid:
            est = estimate_crossing(
                kern,
                eps,
                R,
                config.rho,
                p,
                config.n,
                config.seed,
                stream=stream,
                threads=config.threads,
                graph=graph,
                sqrt_kernel=sk,
            )
            record.rows.append(
                {
                    "kernel": config.kernel,
                    "eps": eps,
                    "R": float(R),
                    "rho": config.rho,
                    "p": float(p),
                    "n": est.n,
                    "mean": est.mean,
                    "stderr": est.stderr,
                    "seed": config.seed,
                }
            )
            stream += 1
    record.wall_time = time.monotonic() - t0
    return record


# ---------------------------------------------------------------------------
# derived curves


def logit_curve(rows) -> dict:
    """g = log(P/(1-P)) per row with delta-method errors.

    Rows whose estimate touches 0 or 1 cannot be mapped and are counted as
    censored rather than extrapolated.
    """
    points = []
    censored = 0
    for row in rows:
        P, se = float(row["mean"]), float(row["stderr"])
        if not (0.0 < P < 1.0):
            censored += 1
            continue
        points.append(
            {
                "R": float(row["R"]),
                "eps": float(row["eps"]),
                "p": float(row["p"]),
                "g": math.log(P / (1.0 - P)),
                "g_stderr": se / (P * (1.0 - P)),
            }
        )
    return {"points": points, "censored": censored}


@dataclass(frozen=True)
class DecayFit:
    slope: float | None
    intercept: float | None
    residual: float | None
    n_points: int
    censored: int
    rejected: bool
    reason: str = ""


def decay_fit(R_values, failure_estimates, floor: float = 0.25) -> DecayFit:
    """Least-squares slope of log(failure) against R.

    Rejects when fewer than two failure estimates are positive, when the
    fitted slope is not negative, or when the failures never drop below
    `floor` (failure probability not tending to 0, the critical pattern).
    """
    Rs, logs, fails = [], [], []
    censored = 0
    for R, q in zip(R_values, failure_estimates):
        if q <= 0.0:
            censored += 1
            continue
        Rs.append(float(R))
        logs.append(math.log(q))
        fails.append(float(q))
    if len(Rs) < 2:
        return DecayFit(None, None, None, len(Rs), censored, True, "insufficient uncensored points")
    coeff, res = np.polyfit(Rs, logs, 1, full=True)[:2]
    slope, intercept = float(coeff[0]), float(coeff[1])
    residual = float(res[0]) if len(res) else 0.0
    if slope >= 0.0:
        return DecayFit(slope, intercept, residual, len(Rs), censored, True,
                        "slope not negative: failures not tending to 0")
    if min(fails) > floor:
        return DecayFit(slope, intercept, residual, len(Rs), censored, True,
                        "failures stay above the floor: not tending to 0")
    return DecayFit(slope, intercept, residual, len(Rs), censored, False)


def summability_report(
    kernel: Kernel,
    eps: float,
    p: float,
    k_grid,
    n: int,
    seed: int,
    threads: int = 1,
) -> dict:
    """Failure probabilities of the dyadic crossings Cross_p(2^{k+1}, 2^k).

    Reports per-k failure estimates and partial sums of the summability
    criterion; the `failures_nonincreasing` flag is what the p > 0 theory
    predicts, while p <= 0 shows the non-summable pattern.
    """
    if max(k_grid) > 6 and eps <= 0.5:
        raise PreconditionError("k grid capped at 6 for eps <= 0.5 (resource budget)")
    rows = []
    partial = 0.0
    for idx, k in enumerate(k_grid):
        R = 2.0**k
        est = estimate_crossing(kernel, eps, R, 2.0, p, n, seed, stream=idx, threads=threads)
        failure = 1.0 - est.mean
        partial += failure
        rows.append(
            {
                "k": int(k),
                "R": R,
                "crossing": est,
                "failure": failure,
                "partial_sum": partial,
            }
        )
    fails = [r["failure"] for r in rows]
    return {
        "p": p,
        "eps": eps,
        "rows": rows,
        "failures_nonincreasing": all(b <= a + 1e-12 for a, b in zip(fails, fails[1:])),
        # at and below the critical level the failures stay bounded away
        # from zero (for the hard-direction 2:1 crossing they sit well above
        # 1/2 at these scales), so the series cannot look summable
        "nonsummable_pattern": all(f >= 0.2 for f in fails),
    }


def recursion_report(
    kernel: Kernel,
    eps: float,
    p: float,
    k_max: int,
    n: int,
    seed: int,
    threads: int = 1,
) -> dict:
    """Both sides of the quadratic recursion a_{k+1} <= 49 a_k^2 at the
    reachable scales, where a_k = 1 - P[Cross_p(2 r_k, r_k)] + exp(-r_k/10).

    Computed and reported only; the inequality is asymptotic and is not
    asserted at desk scale.
    """
    from .percolation import r_sequence

    rs = r_sequence(k_max)["r"]
    rows = []
    for k, r in enumerate(rs):
        R = eps * max(2, round(r / eps))  # snap the scale to the mesh
        est = estimate_crossing(kernel, eps, R, 2.0, p, n, seed, stream=k, threads=threads)
        a_k = 1.0 - est.mean + math.exp(-r / 10.0)
        rows.append({"k": k, "r": r, "R_snapped": R, "a_k": a_k, "crossing": est})
    for k in range(len(rows) - 1):
        rows[k]["bound_49_a_k_sq"] = 49.0 * rows[k]["a_k"] ** 2
        rows[k]["a_next"] = rows[k + 1]["a_k"]
    return {"p": p, "eps": eps, "rows": rows}


# ---------------------------------------------------------------------------
# persistence


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in SWEEP_COLUMNS})


def read_sweep_csv(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "kernel": row["kernel"],
                    "eps": float(row["eps"]),
                    "R": float(row["R"]),
                    "rho": float(row["rho"]),
                    "p": float(row["p"]),
                    "n": int(row["n"]),
                    "mean": float(row["mean"]),
                    "stderr": float(row["stderr"]),
                    "seed": int(row["seed"]),
                }
            )
    return out


def write_manifest(record: RunRecord, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def shared_sample_symmetry_check(kernel: Kernel, eps: float, R: float, p: float, n: int, seed: int) -> bool:
    """Per-sample identity: black LR crossing of f at level p equals the
    complement of the black TB crossing of -f at level -p (duality plus the
    centered-field sign flip). Exact unless a site value ties +-p."""
    from .percolation import ColoredConfig, crossing
    from .sampler import sample_sqrt_convolution

    graph = build_region_graph(eps, Rect(0.0, 0.0, R, R))
    sk = build_sqrt_kernel(kernel, spectral_mesh(eps))
    for r in range(n):
        f = sample_sqrt_convolution(sk, graph, seed, 0, r)
        if np.any(np.abs(f.values) == abs(p)):
            continue
        black_lr = crossing(ColoredConfig(graph, f.values >= -p, p), "left_right", "black")
        mirrored = crossing(ColoredConfig(graph, -f.values >= p, -p), "top_bottom", "black")
        if black_lr == mirrored:
            return False
    return True
