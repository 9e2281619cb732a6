"""Deterministic mark-space quantities.

Every kernel lives on a :class:`~mrcm.model.MarkGrid`: the atoms of a finite
mark distribution, or a midpoint grid for an interval.  Essential suprema and
infima become max/min over grid nodes of positive weight.  When the model is
rational (finite marks with exact weights and rational ``D``) the kernels also
carry an exact :class:`fractions.Fraction` copy.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import MarkGrid, ModelSpec, mark_grid

__all__ = [
    "KernelMatrix",
    "SeedResult",
    "ConstantsReport",
    "EnvelopeBound",
    "AssumptionVerdict",
    "BranchingDivergence",
    "degree_kernel",
    "path_kernel",
    "mixed_norm",
    "operator_norm",
    "connectivity_seed",
    "derived_constants",
    "branching_envelope_norm",
    "branching_susceptibility",
    "coarse_grain_bound",
    "assumption_report",
]

DEFAULT_K_MAX = 64
DEFAULT_RESOLUTION = 64
_EARLY_STOP_RATIO = 1e-3
_EARLY_STOP_RUN = 8
# exact arithmetic is skipped when lambda has a huge binary denominator
_MAX_EXACT_DENOMINATOR = 10**6


class BranchingDivergence(ArithmeticError):
    """The branching envelope has no finite total progeny at this intensity."""


@dataclass(frozen=True)
class KernelMatrix:
    """A kernel ``h(a, b)`` tabulated on a mark grid."""

    grid: MarkGrid
    values: np.ndarray
    exact: tuple[tuple[Fraction, ...], ...] | None = None
    name: str = "h"

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        v = self.values
        scale = max(1.0, float(np.max(np.abs(v)))) if v.size else 1.0
        return bool(np.all(np.abs(v - v.T) <= tol * scale))

    def to_csv(self) -> str:
        buf = io.StringIO()
        exact = self.exact is not None
        buf.write("a,b,value" + (",numerator,denominator" if exact else "") + "\n")
        for i, a in enumerate(self.grid.marks):
            for j, b in enumerate(self.grid.marks):
                row = f"{a},{b},{float(self.values[i, j])!r}"
                if exact:
                    f = self.exact[i][j]
                    row += f",{f.numerator},{f.denominator}"
                buf.write(row + "\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "marks": list(self.grid.marks),
            "weights": self.grid.weights.tolist(),
            "resolution": self.grid.resolution,
            "values": self.values.tolist(),
        }
        if self.exact is not None:
            out["exact"] = [[[f.numerator, f.denominator] for f in row] for row in self.exact]
        return out


def _positive(grid: MarkGrid) -> np.ndarray:
    return grid.weights > 0


def _exact_weights(grid: MarkGrid):
    return grid.exact_weights


def degree_kernel(model: ModelSpec, resolution: int = DEFAULT_RESOLUTION) -> KernelMatrix:
    """``D(a, b)`` on the mark grid, in closed form for each family."""
    grid = mark_grid(model.marks, resolution)
    m = np.asarray(grid.marks)
    vals = np.asarray(model.degree(m[:, None], m[None, :]), dtype=float)
    exact = None
    if grid.exact_weights is not None:
        rows = []
        for a in grid.marks:
            row = [model.exact_degree(a, b) for b in grid.marks]
            if any(x is None for x in row):
                rows = None
                break
            rows.append(tuple(row))
        exact = tuple(rows) if rows is not None else None
    return KernelMatrix(grid, vals, exact, "D")


def _compose(left: KernelMatrix, right: KernelMatrix, name: str) -> KernelMatrix:
    w = left.weights
    vals = (left.values * w[None, :]) @ right.values
    exact = None
    if left.exact is not None and right.exact is not None and left.grid.exact_weights is not None:
        ew = left.grid.exact_weights
        n = len(ew)
        exact = tuple(
            tuple(sum((left.exact[i][c] * ew[c] * right.exact[c][j] for c in range(n)), Fraction(0))
                  for j in range(n))
            for i in range(n)
        )
    return KernelMatrix(left.grid, vals, exact, name)


def path_kernel(model: ModelSpec, k: int, resolution: int = DEFAULT_RESOLUTION,
                base: KernelMatrix | None = None) -> KernelMatrix:
    """``D^(k)``: expected number of ``k``-step paths between two marks.

    Built as ``D^(k)(a, b) = sum_c D^(k-1)(a, c) w_c D(c, b)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    D = base if base is not None else degree_kernel(model, resolution)
    out = D
    for j in range(2, k + 1):
        out = _compose(out, D, f"D^({j})")
    if k == 1:
        return D
    return out


def mixed_norm(h: KernelMatrix, p1: float, p2: float) -> float:
    """Weighted ``L^{p1}`` norm over the inner mark, then ``L^{p2}`` over the outer."""
    for p in (p1, p2):
        if not (p >= 1):
            raise ValueError("norm exponents must lie in [1, inf]")
    pos = _positive(h.grid)
    w = h.weights[pos]
    a = np.abs(h.values[np.ix_(pos, pos)])
    if math.isinf(p1):
        inner = a.max(axis=1)
    else:
        inner = (a**p1 @ w) ** (1.0 / p1)
    if math.isinf(p2):
        return float(inner.max())
    return float((inner**p2 @ w) ** (1.0 / p2))


def operator_norm(h: KernelMatrix) -> float:
    """``L^2(P)`` operator norm of the integral operator with kernel ``h``.

    This is the spectral radius of ``W^{1/2} h W^{1/2}``.  The Schur bound
    ``||h||_op <= ||h||_{1,inf}`` is checked on every call.
    """
    if not h.is_symmetric():
        raise ValueError("operator_norm requires a symmetric kernel")
    s = np.sqrt(h.weights)
    m = s[:, None] * h.values * s[None, :]
    m = 0.5 * (m + m.T)
    rho = float(np.max(np.abs(np.linalg.eigvalsh(m)))) if m.size else 0.0
    schur = mixed_norm(h, 1, math.inf)
    if rho > schur + 1e-10 * max(1.0, schur):
        raise ArithmeticError(f"Schur ordering violated: {rho} > {schur}")
    return rho


# ---------------------------------------------------------------------------
# connectivity constants


@dataclass(frozen=True)
class SeedResult:
    """``(sup_k r^k min_b D^(k)(a, b))^{-1}`` with its maximising ``k``."""

    value: float
    k_star: int | None
    converged: bool
    k_evaluated: int
    exact: Fraction | None = None

    def __float__(self):
        return self.value


def _exact_ratio(lam: float, kind: str) -> Fraction | None:
    f = Fraction(lam)
    if f.denominator > _MAX_EXACT_DENOMINATOR:
        f = f.limit_denominator(_MAX_EXACT_DENOMINATOR)
        if float(f) != lam:
            return None
    r = f / (1 + f)
    return r / 2 if kind == "J" else r


def _seed_from_kernel(D: KernelMatrix, lam: float, row: int, kind: str, k_max: int) -> SeedResult:
    if kind not in ("I", "J"):
        raise ValueError("kind must be 'I' or 'J'")
    if lam < 0:
        raise ValueError("intensity must be nonnegative")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if lam == 0:
        return SeedResult(math.inf, None, True, 0, None)
    pos = _positive(D.grid)
    r = lam / (1.0 + lam)
    if kind == "J":
        r *= 0.5
    w = D.weights

    exact_r = _exact_ratio(lam, kind) if D.exact is not None else None
    if exact_r is not None:
        ew = D.grid.exact_weights
        n = len(ew)
        idx = [j for j in range(n) if pos[j]]
        v = list(D.exact[row])
        best, best_k, prev, run, rising = Fraction(0), None, None, 0, False
        rk = Fraction(1)
        k_done = 0
        for k in range(1, k_max + 1):
            if k > 1:
                v = [sum((v[c] * ew[c] * D.exact[c][j] for c in range(n)), Fraction(0)) for j in range(n)]
            rk *= exact_r
            term = rk * min(v[j] for j in idx)
            k_done = k
            rising = prev is not None and term > prev
            prev = term
            if term > best:
                best, best_k = term, k
            if best > 0 and term < best * Fraction(1, 1000):
                run += 1
                if run >= _EARLY_STOP_RUN:
                    break
            else:
                run = 0
        converged = not (k_done == k_max and rising)
        if best == 0:
            return SeedResult(math.inf, None, converged, k_done, None)
        return SeedResult(float(1 / best), best_k, converged, k_done, 1 / best)

    v = D.values[row].copy()
    best, best_k, prev, run, rising = 0.0, None, None, 0, False
    log_rk = 0.0
    k_done = 0
    for k in range(1, k_max + 1):
        if k > 1:
            v = (v * w) @ D.values
        log_rk += math.log(r)
        mn = float(np.min(v[pos]))
        term = math.exp(log_rk + math.log(mn)) if mn > 0 else 0.0
        k_done = k
        rising = prev is not None and term > prev
        prev = term
        if term > best:
            best, best_k = term, k
        if best > 0 and term < best * _EARLY_STOP_RATIO:
            run += 1
            if run >= _EARLY_STOP_RUN:
                break
        else:
            run = 0
    converged = not (k_done == k_max and rising)
    if best == 0:
        return SeedResult(math.inf, None, converged, k_done)
    return SeedResult(1.0 / best, best_k, converged, k_done)


def connectivity_seed(model: ModelSpec, lam: float, a, kind: str = "I",
                      k_max: int = DEFAULT_K_MAX, resolution: int = DEFAULT_RESOLUTION,
                      base: KernelMatrix | None = None) -> SeedResult:
    """The constants ``I_{lam,a}`` (``kind="I"``) and ``J_{lam,a}`` (``kind="J"``).

    For continuous marks ``a`` is located on the quadrature grid by nearest node.
    """
    D = base if base is not None else degree_kernel(model, resolution)
    return _seed_from_kernel(D, lam, _grid_index(D.grid, a), kind, k_max)


def _grid_index(grid: MarkGrid, a) -> int:
    if grid.resolution is None:
        return int(a)
    return int(np.argmin(np.abs(np.asarray(grid.marks) - float(a))))


@dataclass
class ConstantsReport:
    """Kernel constants evaluated at one intensity."""

    lam: float
    triangle: float
    marks: list
    I_per_mark: np.ndarray
    J_per_mark: np.ndarray
    cbar: float
    kappa_per_mark: np.ndarray
    K_constant: float
    C_delta: float
    mean_degree_per_mark: np.ndarray
    D_sup: float
    D_op: float
    D_1inf: float
    resolution: int | None
    seeds_converged: bool
    exact: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")
        out = {
            "lambda": self.lam,
            "triangle": self.triangle,
            "marks": list(self.marks),
            "I_per_mark": [num(x) for x in self.I_per_mark],
            "J_per_mark": [num(x) for x in self.J_per_mark],
            "cbar": num(self.cbar),
            "kappa_per_mark": [num(x) for x in self.kappa_per_mark],
            "K_constant": num(self.K_constant),
            "C_delta": num(self.C_delta),
            "mean_degree_per_mark": [num(x) for x in self.mean_degree_per_mark],
            "D_sup": num(self.D_sup),
            "D_op": num(self.D_op),
            "D_1inf": num(self.D_1inf),
            "resolution": self.resolution,
            "seeds_converged": self.seeds_converged,
        }
        if self.exact:
            out["exact"] = {k: [v.numerator, v.denominator] if isinstance(v, Fraction)
                            else [[x.numerator, x.denominator] if x is not None else None for x in v]
                            for k, v in self.exact.items()}
        return out


def _times(x: float, y: float) -> float:
    # 0 * inf = 0: every such product here is a vanishing-intensity term
    if x == 0 or y == 0:
        return 0.0
    return x * y


def derived_constants(model: ModelSpec, lam: float, triangle: float = 0.0,
                      k_max: int = DEFAULT_K_MAX, resolution: int = DEFAULT_RESOLUTION) -> ConstantsReport:
    """``I``, ``J``, ``cbar``, ``C_Delta``, ``kappa`` and ``K`` at intensity ``lam``.

    ``triangle`` is the (estimated) triangle diagram used by ``kappa``.
    ``C_Delta`` is evaluated at ``lam`` standing in for the critical intensity.
    """
    if lam < 0 or triangle < 0:
        raise ValueError("intensity and triangle value must be nonnegative")
    D = degree_kernel(model, resolution)
    pos = _positive(D.grid)
    seeds_I = [_seed_from_kernel(D, lam, i, "I", k_max) for i in range(len(D.grid))]
    seeds_J = [_seed_from_kernel(D, lam, i, "J", k_max) for i in range(len(D.grid))]
    I = np.array([s.value for s in seeds_I])
    J = np.array([s.value for s in seeds_J])
    d_sup = mixed_norm(D, math.inf, math.inf)
    dbar = D.values[:, pos] @ D.weights[pos]
    dbar_pos = dbar[pos]
    J_sup = float(np.max(J[pos]))
    I_sup = float(np.max(I[pos]))
    cbar = 1.0 + _times(lam * d_sup, J_sup)
    first = 1.0 / (1.0 + _times(lam * d_sup, I_sup)) ** 2
    second = (lam**2 * float(dbar_pos.min()) ** 2 / (1.0 + 2 * lam * float(dbar_pos.max()))) / cbar
    c_delta = min(first, second)
    deg = lam * dbar
    kappa = deg**2 - (2 * deg + 1) * _times(cbar**2, triangle)
    kmin = float(np.min(kappa[pos]))
    K = 8 * cbar**2 * (1 + cbar**2) / kmin if kmin > 0 and math.isfinite(cbar) else math.inf

    exact = {}
    if all(s.exact is not None for s in seeds_I) and all(s.exact is not None for s in seeds_J):
        exact["I_per_mark"] = [s.exact for s in seeds_I]
        exact["J_per_mark"] = [s.exact for s in seeds_J]
        if D.exact is not None:
            flam = Fraction(lam)
            dsup_e = max(D.exact[i][j] for i in range(len(pos)) for j in range(len(pos)) if pos[i] and pos[j])
            exact["cbar"] = 1 + flam * dsup_e * max(s.exact for i, s in enumerate(seeds_J) if pos[i])

    return ConstantsReport(
        lam=lam, triangle=triangle, marks=list(D.grid.marks), I_per_mark=I, J_per_mark=J,
        cbar=cbar, kappa_per_mark=kappa, K_constant=K, C_delta=c_delta, mean_degree_per_mark=deg,
        D_sup=d_sup, D_op=operator_norm(D), D_1inf=mixed_norm(D, 1, math.inf),
        resolution=D.grid.resolution,
        seeds_converged=all(s.converged for s in seeds_I + seeds_J), exact=exact,
    )


# ---------------------------------------------------------------------------
# branching envelope


@dataclass(frozen=True)
class EnvelopeBound:
    """Geometric-series bound on the two-point operator norm."""

    lam: float
    D_op: float
    bound: float | None
    diverges: bool
    lambda_O_lower: float


def branching_envelope_norm(model: ModelSpec, lam: float,
                            resolution: int = DEFAULT_RESOLUTION) -> EnvelopeBound:
    """``||D||_op / (1 - lam ||D||_op)`` when the series converges."""
    if lam < 0:
        raise ValueError("intensity must be nonnegative")
    op = operator_norm(degree_kernel(model, resolution))
    lower = math.inf if op == 0 else 1.0 / op
    if lam * op < 1:
        return EnvelopeBound(lam, op, op / (1.0 - lam * op), False, lower)
    return EnvelopeBound(lam, op, None, True, lower)


def branching_susceptibility(model: ModelSpec, lam: float,
                             resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """Expected total progeny per root mark of the multitype branching envelope.

    Solves ``(I - lam D W) x = 1``; raises :class:`BranchingDivergence` at or
    above ``1 / ||D||_op``.
    """
    if lam < 0:
        raise ValueError("intensity must be nonnegative")
    D = degree_kernel(model, resolution)
    n = len(D.grid)
    if lam == 0:
        return np.ones(n)
    op = operator_norm(D)
    if lam * op >= 1:
        raise BranchingDivergence(f"lambda * ||D||_op = {lam * op:.6g} >= 1")
    A = np.eye(n) - lam * D.values * D.weights[None, :]
    try:
        x = np.linalg.solve(A, np.ones(n))
    except np.linalg.LinAlgError as exc:
        raise BranchingDivergence(str(exc)) from None
    return x


def coarse_grain_bound(p_min: float, eps: float, delta: float, d: int) -> float:
    """Upper bound ``log 2 / (p_min eps) (2 / delta)^d`` on the percolation threshold."""
    if not (p_min > 0 and eps > 0 and delta > 0 and d > 0):
        raise ValueError("all inputs must be positive")
    if p_min > 1:
        raise ValueError("p_min is a probability")
    return math.log(2.0) / (p_min * eps) * (2.0 / delta) ** d


# ---------------------------------------------------------------------------
# assumption verdicts


@dataclass
class AssumptionVerdict:
    d1_holds: bool
    d1_value: float
    d2_holds: bool
    d2_witness_k: int | None
    d2_min_entry: float
    t_status: str
    t_triangle: float | None
    t_C_delta: float

    def to_dict(self) -> dict:
        return {
            "d1": {"holds": self.d1_holds, "value": self.d1_value},
            "d2": {"holds": self.d2_holds, "witness_k": self.d2_witness_k, "min_entry": self.d2_min_entry},
            "t": {"status": self.t_status, "triangle": self.t_triangle, "C_delta": self.t_C_delta},
        }


def assumption_report(model: ModelSpec, lam_ref: float, triangle_estimate=None,
                      k_max: int = DEFAULT_K_MAX, resolution: int = DEFAULT_RESOLUTION) -> AssumptionVerdict:
    """Verdicts on bounded degree, uniform k-step connectivity and the triangle condition.

    ``triangle_estimate`` is an object with ``mean`` and ``stderr`` (an
    :class:`~mrcm.estimate.Estimate`) or ``None``.
    """
    D = degree_kernel(model, resolution)
    pos = _positive(D.grid)
    d_sup = mixed_norm(D, math.inf, math.inf)
    witness, min_entry = None, 0.0
    Dk = D
    for k in range(1, k_max + 1):
        if k > 1:
            Dk = _compose(Dk, D, f"D^({k})")
        mn = float(np.min(Dk.values[np.ix_(pos, pos)]))
        if mn > 0:
            witness, min_entry = k, mn
            break
    c_delta = derived_constants(model, lam_ref, 0.0, k_max, resolution).C_delta
    if triangle_estimate is None:
        status, tri = "undetermined", None
    else:
        tri = float(triangle_estimate.mean)
        se = float(triangle_estimate.stderr)
        if tri + 3 * se < c_delta:
            status = "holds"
        elif tri - 3 * se > c_delta:
            status = "fails"
        else:
            status = "undetermined"
    return AssumptionVerdict(
        d1_holds=math.isfinite(d_sup), d1_value=d_sup,
        d2_holds=witness is not None, d2_witness_k=witness, d2_min_entry=min_entry,
        t_status=status, t_triangle=tri, t_C_delta=c_delta,
    )


def report_json(obj) -> str:
    return json.dumps(obj.to_dict(), indent=2, sort_keys=True)
