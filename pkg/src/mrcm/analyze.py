"""Critical intensities, exponent fits, magnetisation limits and bound checks."""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import kernels
from .estimate import ClusterSizeDistribution, Estimate
from .model import ModelSpec
from .simulate import ExplorationConfig, run_batch

__all__ = [
    "ScanResult",
    "ExponentFit",
    "PowerLawFit",
    "CriticalResult",
    "LimitReport",
    "BoundEntry",
    "BoundReport",
    "BoundInputs",
    "scan_observable",
    "fit_exponent",
    "find_critical_intensity",
    "magnetization_limits",
    "verify_bounds",
]

FORMS = ("chi_divergence", "theta_growth", "tail_power")
OBSERVABLES = ("chi", "theta", "tail", "M")
DEFAULT_THRESHOLD = 0.01


def _fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class ScanResult:
    lambda_grid: np.ndarray
    observable: str
    estimates: list
    model_fingerprint: str = ""
    cfg_fingerprint: str = ""

    def __post_init__(self):
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)
        if self.observable not in OBSERVABLES:
            raise ValueError(f"observable must be one of {OBSERVABLES}")
        if np.any(np.diff(self.lambda_grid) <= 0):
            raise ValueError("lambda grid must be strictly increasing")
        if len(self.estimates) != len(self.lambda_grid):
            raise ValueError("one estimate per grid point is required")

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.estimates])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("lambda,observable,mean,stderr,n,flags\n")
        for lam, e in zip(self.lambda_grid, self.estimates):
            buf.write(f"{float(lam)!r},{self.observable},{e.mean!r},{e.stderr!r},{e.n},"
                      f"{'|'.join(sorted(e.bias_flags))}\n")
        return buf.getvalue()


def scan_observable(model: ModelSpec, lambda_grid, root_mark, n_runs: int, seed: int,
                    observable: str = "chi", cfg: ExplorationConfig | None = None,
                    mode: str = "thinned", gamma: float | None = None, workers: int | None = 1,
                    keep_batches: bool = False):
    """Simulate at every grid point and reduce with the chosen observable.

    Grid point ``i`` uses stream task ``i``.  Returns the :class:`ScanResult`
    and, with ``keep_batches``, the raw batches.
    """
    cfg = cfg or ExplorationConfig()
    ests, batches = [], []
    for i, lam in enumerate(lambda_grid):
        b = run_batch(model, float(lam), root_mark, n_runs, seed, cfg, mode=mode, task=i, workers=workers)
        h = ClusterSizeDistribution(cfg.size_cap).fit(b)
        if observable == "chi":
            e = h.chi()
        elif observable == "theta":
            e = h.survival()
        elif observable == "M":
            if gamma is None:
                raise ValueError("observable 'M' needs gamma")
            e = h.magnetization(gamma)[0]
        else:
            raise ValueError("tail scans are built with estimate_cluster_tail")
        ests.append(e)
        if keep_batches:
            batches.append(b)
    res = ScanResult(np.asarray(lambda_grid, dtype=float), observable, ests, model.fingerprint(),
                     _fingerprint({"cfg": cfg.to_dict(), "mode": mode, "n": n_runs, "seed": seed}))
    return (res, batches) if keep_batches else res


# ---------------------------------------------------------------------------
# exponent fits


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    stderr: float
    window: tuple
    r2: float
    form: str
    amplitude: float
    n_points: int

    def to_dict(self):
        return {"exponent": self.exponent, "stderr": self.stderr, "window": list(self.window),
                "r2": self.r2, "form": self.form, "amplitude": self.amplitude, "n_points": self.n_points}


class PowerLawFit(RegressorMixin, BaseEstimator):
    """Weighted log-log least squares for one of three critical forms.

    ``chi_divergence``: ``y ~ A (lambda_hat - x)^(-exponent)``.
    ``theta_growth``: ``y ~ A (x - lambda_hat)^exponent``.
    ``tail_power``: ``y ~ A x^(-exponent)``, so ``exponent = 1/delta``.

    Parameters
    ----------
    form : str
    lambda_hat : float or None
        Critical point; unused for ``tail_power``.
    exclude_nearest : int
        Number of usable grid points closest to ``lambda_hat`` to drop.
    max_rel_stderr : float
        Points whose relative error exceeds this are dropped.
    min_points : int
    """

    def __init__(self, form="chi_divergence", lambda_hat=None, exclude_nearest=2,
                 max_rel_stderr=0.2, min_points=5):
        self.form = form
        self.lambda_hat = lambda_hat
        self.exclude_nearest = exclude_nearest
        self.max_rel_stderr = max_rel_stderr
        self.min_points = min_points

    def _design(self, x):
        x = np.asarray(x, dtype=float)
        if self.form == "tail_power":
            return np.log(x)
        if self.lambda_hat is None:
            raise ValueError("lambda_hat is required for intensity forms")
        dist = self.lambda_hat - x if self.form == "chi_divergence" else x - self.lambda_hat
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(dist)

    def _usable(self, x, y, yerr, flagged):
        ok = np.isfinite(y) & (y > 0)
        if flagged is not None:
            ok &= ~np.asarray(flagged, dtype=bool)
        if yerr is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                ok &= np.where(y > 0, yerr / y, np.inf) <= self.max_rel_stderr
        if self.form == "tail_power":
            ok &= x > 0
        else:
            side = (x < self.lambda_hat) if self.form == "chi_divergence" else (x > self.lambda_hat)
            ok &= side
            if self.exclude_nearest:
                idx = np.flatnonzero(ok)
                near = idx[np.argsort(np.abs(x[idx] - self.lambda_hat))[: self.exclude_nearest]]
                ok[near] = False
        return ok

    def fit(self, X, y, yerr=None, flagged=None):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        x = np.asarray(X, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.shape != y.shape:
            raise ValueError("X and y differ in length")
        err = None if yerr is None else np.asarray(yerr, dtype=float).ravel()
        ok = self._usable(x, y, err, flagged)
        if ok.sum() < self.min_points:
            raise ValueError(f"only {int(ok.sum())} usable points; need {self.min_points}")
        u = self._design(x[ok])
        v = np.log(y[ok])
        if np.ptp(u) <= 1e-12:
            raise ValueError("degenerate spread in the fit window")
        if err is not None and np.all(err[ok] > 0):
            w = (y[ok] / err[ok]) ** 2
        else:
            w = np.ones(ok.sum())
        A = np.column_stack([np.ones_like(u), u])
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(A * sw[:, None], v * sw, rcond=None)
        resid = v - A @ coef
        dof = max(len(v) - 2, 1)
        cov = np.linalg.inv(A.T @ (A * w[:, None]))
        if err is None or not np.all(err[ok] > 0):
            cov *= float(resid @ (w * resid)) / dof
        vbar = float(np.average(v, weights=w))
        ss_tot = float(((v - vbar) ** 2) @ w)
        r2 = 1.0 - float((resid**2) @ w) / ss_tot if ss_tot > 0 else 1.0
        slope = float(coef[1])
        self.coef_ = coef
        self.exponent_ = slope if self.form == "theta_growth" else -slope
        self.stderr_ = float(math.sqrt(max(cov[1, 1], 0.0)))
        self.amplitude_ = float(math.exp(coef[0]))
        self.r2_ = float(min(max(r2, 0.0), 1.0))
        self.window_ = (float(x[ok].min()), float(x[ok].max()))
        self.n_points_ = int(ok.sum())
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return np.exp(self.coef_[0] + self.coef_[1] * self._design(X))

    def result(self) -> ExponentFit:
        check_is_fitted(self, "coef_")
        return ExponentFit(self.exponent_, self.stderr_, self.window_, self.r2_, self.form,
                           self.amplitude_, self.n_points_)


def fit_exponent(data, lambda_hat=None, form="chi_divergence", **kw) -> ExponentFit:
    """Fit a critical exponent.

    ``data`` is a :class:`ScanResult`, a tail table ``[(n, Estimate), ...]``,
    or a tuple ``(x, y)`` / ``(x, y, yerr)``.  Cap-flagged susceptibility
    points are excluded.
    """
    flagged = None
    if isinstance(data, ScanResult):
        x, y, err = data.lambda_grid, data.means, data.stderrs
        if form == "chi_divergence":
            flagged = np.array(["cap_truncation" in e.bias_flags for e in data.estimates])
    elif isinstance(data, tuple):
        x, y = data[0], data[1]
        err = data[2] if len(data) > 2 else None
    else:
        x = np.array([n for n, _ in data], dtype=float)
        y = np.array([e.mean for _, e in data])
        err = np.array([e.stderr for _, e in data])
    return PowerLawFit(form, lambda_hat, **kw).fit(x, y, err, flagged).result()


# ---------------------------------------------------------------------------
# critical intensity


@dataclass
class CriticalResult:
    lambda_hat: float
    ci: tuple
    trace: list
    threshold: float
    size_cap: int
    mode: str
    lambda_O_lower: float
    below_rigorous_lower: bool

    def to_dict(self):
        return {"lambda_hat": self.lambda_hat, "ci": list(self.ci), "threshold": self.threshold,
                "size_cap": self.size_cap, "mode": self.mode, "lambda_O_lower": self.lambda_O_lower,
                "below_rigorous_lower": self.below_rigorous_lower,
                "trace": [{"lambda": l, "survival": e.mean, "stderr": e.stderr} for l, e in self.trace]}


def find_critical_intensity(model: ModelSpec, root_mark, bracket, n_runs: int, seed: int,
                            size_cap: int = 10_000, mode: str = "thinned",
                            threshold: float = DEFAULT_THRESHOLD, rel_tol: float = 2e-3,
                            max_iter: int = 30, workers: int | None = 1) -> CriticalResult:
    """Bisect on the fraction of runs reaching ``size_cap``.

    The crossing of ``threshold`` is the finite-size stand-in for the
    critical intensity.  The final bracket is returned as the interval.
    """
    lo, hi = map(float, bracket)
    if not 0 <= lo < hi:
        raise ValueError("bracket must satisfy 0 <= lo < hi")
    cfg = ExplorationConfig(size_cap=size_cap)
    trace = []
    probe = [0]

    def survival(lam):
        b = run_batch(model, lam, root_mark, n_runs, seed, cfg, mode=mode, task=probe[0], workers=workers)
        probe[0] += 1
        p = float(b.size_capped.mean())
        e = Estimate(p, math.sqrt(p * (1 - p) / n_runs), n_runs)
        trace.append((lam, e))
        return p

    if survival(lo) >= threshold or survival(hi) < threshold:
        raise ValueError(f"bracket [{lo}, {hi}] does not straddle the survival threshold {threshold}")
    for _ in range(max_iter):
        if hi - lo <= rel_tol * 0.5 * (lo + hi):
            break
        mid = 0.5 * (lo + hi)
        if survival(mid) >= threshold:
            hi = mid
        else:
            lo = mid
    lam_hat = 0.5 * (lo + hi)
    lower = kernels.branching_envelope_norm(model, 0.0).lambda_O_lower
    return CriticalResult(lam_hat, (lo, hi), trace, threshold, size_cap, mode, lower,
                          bool(lam_hat < lower - (hi - lo)))


# ---------------------------------------------------------------------------
# magnetisation limits


@dataclass
class LimitReport:
    gammas: np.ndarray
    M: list
    slopes: list
    chi_f: Estimate
    monotone_in_gamma: bool
    slopes_increasing: bool
    slopes_bracketed: bool
    last_slope_close: bool

    @property
    def passed(self) -> bool:
        return self.monotone_in_gamma and self.slopes_increasing and self.slopes_bracketed and self.last_slope_close

    def to_dict(self):
        return {"gammas": self.gammas.tolist(), "M": [e.to_dict() for e in self.M],
                "slopes": [e.to_dict() for e in self.slopes], "chi_f": self.chi_f.to_dict(),
                "monotone_in_gamma": self.monotone_in_gamma, "slopes_increasing": self.slopes_increasing,
                "slopes_bracketed": self.slopes_bracketed, "last_slope_close": self.last_slope_close,
                "passed": self.passed}


def magnetization_limits(samples, gammas=None, rel_tol: float = 0.10) -> LimitReport:
    """Check the small-``gamma`` behaviour of the magnetisation on subcritical samples.

    ``gammas`` defaults to ``2^-1, ..., 2^-10``.  Finite-difference slopes are
    compared with the mean of uncapped sizes.
    """
    from .estimate import _sizes_and_caps
    s, capped, _ = _sizes_and_caps(samples)
    n = len(s)
    theta = capped.mean()
    if theta - 3 * math.sqrt(theta * (1 - theta) / n) > 0:
        raise ValueError("samples look supercritical; the slope check needs finite clusters")
    g = np.sort(np.asarray([2.0**-j for j in range(1, 11)] if gammas is None else gammas, dtype=float))[::-1]
    if np.any((g <= 0) | (g >= 1)):
        raise ValueError("gammas must lie in (0, 1)")
    sf = s.astype(float)
    M = [Estimate.from_values(1 - (1 - x) ** sf) for x in g]
    slopes, bracketed = [], True
    for g1, g2 in zip(g[:-1], g[1:]):
        per = ((1 - g2) ** sf - (1 - g1) ** sf) / (g1 - g2)
        slopes.append(Estimate.from_values(per))
        lo = float(np.mean(sf * (1 - g1) ** (sf - 1)))
        hi = float(np.mean(sf * (1 - g2) ** (sf - 1)))
        m = float(per.mean())
        bracketed &= lo - 1e-12 * max(1, hi) <= m <= hi + 1e-12 * max(1, hi)
    chi_f = Estimate.from_values(sf[~capped]) if (~capped).any() else Estimate(math.inf, 0.0, 1)
    monotone = all(a.mean - b.mean >= -3 * math.hypot(a.stderr, b.stderr) for a, b in zip(M[:-1], M[1:]))
    increasing = all(b.mean - a.mean >= -3 * math.hypot(a.stderr, b.stderr)
                     for a, b in zip(slopes[:-1], slopes[1:]))
    last = slopes[-1]
    close = abs(last.mean - chi_f.mean) <= rel_tol * chi_f.mean + 3 * math.hypot(last.stderr, chi_f.stderr)
    return LimitReport(g, M, slopes, chi_f, bool(monotone), bool(increasing), bool(bracketed), bool(close))


# ---------------------------------------------------------------------------
# bound verification


@dataclass
class BoundEntry:
    name: str
    lhs: float
    rhs: float
    status: str
    z: float | None
    detail: str = ""

    def to_dict(self):
        def num(x):
            if x is None:
                return None
            x = float(x)
            return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")
        return {"name": self.name, "lhs": num(self.lhs), "rhs": num(self.rhs), "status": self.status,
                "z": num(self.z), "detail": self.detail}


@dataclass
class BoundReport:
    entries: list = field(default_factory=list)

    @property
    def any_violated(self) -> bool:
        return any(e.status == "violated" for e in self.entries)

    def to_dict(self):
        return {"entries": [e.to_dict() for e in self.entries], "any_violated": self.any_violated}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [("bound", "lhs", "rhs", "z", "status", "detail")]
        for e in self.entries:
            z = "" if e.z is None else f"{e.z:+.2f}"
            rows.append((e.name, f"{e.lhs:.6g}", f"{e.rhs:.6g}", z, e.status, e.detail))
        widths = [max(len(r[i]) for r in rows) for i in range(6)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _geq(name, lhs, rhs, se, detail=""):
    """Entry for ``lhs >= rhs`` with ``lhs`` carrying standard error ``se``."""
    diff = lhs - rhs
    if diff >= 0:
        z = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
    else:
        z = diff / se if se > 0 else -math.inf
    return BoundEntry(name, lhs, rhs, "holds" if z >= -3 else "violated", z, detail)


def _undetermined(name, why):
    return BoundEntry(name, math.nan, math.nan, "undetermined", None, why)


@dataclass
class BoundInputs:
    """Everything :func:`verify_bounds` plugs into the inequalities.

    ``chi`` maps each intensity below the critical point to one Estimate
    per mark-grid node.  ``magnetization`` maps ``gamma`` to per-mark
    Estimates at ``lambda_hat``; ``tails`` is a per-mark tail table at
    ``lambda_hat``.  ``triangle_holds`` is the verdict of the triangle check.
    """

    model: ModelSpec
    lambda_hat: float | None = None
    lambda_ci: tuple | None = None
    chi: dict = field(default_factory=dict)
    magnetization: dict = field(default_factory=dict)
    tails: dict = field(default_factory=dict)
    triangle_holds: bool = False
    triangle_value: float = 0.0
    k_max: int = kernels.DEFAULT_K_MAX
    resolution: int = kernels.DEFAULT_RESOLUTION


def verify_bounds(inputs: BoundInputs) -> BoundReport:
    """Evaluate each inequality with estimates and kernel constants.

    Inequalities whose preconditions are missing are marked undetermined
    with the reason.
    """
    rep = BoundReport()
    model = inputs.model
    D = kernels.degree_kernel(model, inputs.resolution)
    w = D.weights
    d_inf = kernels.mixed_norm(D, math.inf, math.inf)
    d_1inf = kernels.mixed_norm(D, 1, math.inf)
    lam_hat = inputs.lambda_hat

    for lam in sorted(inputs.chi):
        ests = inputs.chi[lam]
        means = np.array([e.mean for e in ests])
        ses = np.array([e.stderr for e in ests])
        top = int(np.argmax(means))
        tag = f"lambda={lam:.6g}"
        if lam_hat is None:
            rep.entries.append(_undetermined(f"susceptibility_lower_sup[{tag}]", "no critical estimate"))
        elif lam >= lam_hat:
            rep.entries.append(_undetermined(f"susceptibility_lower_sup[{tag}]", "intensity not below lambda_hat"))
        else:
            rhs = 1.0 / (d_1inf * (lam_hat - lam))
            rep.entries.append(_geq(f"susceptibility_lower_sup[{tag}]", means[top], rhs, ses[top],
                                    "max-grid chi >= 1 / (||D||_{1,inf} (lambda_hat - lambda))"))
            l1 = float(means @ w)
            se1 = float(math.sqrt((ses**2) @ (w**2)))
            rep.entries.append(_geq(f"susceptibility_lower_l1[{tag}]", l1, 1.0 / (d_inf * (lam_hat - lam)), se1,
                                    "||chi||_1 >= 1 / (||D||_{inf,inf} (lambda_hat - lambda))"))
        seeds = [kernels._seed_from_kernel(D, lam, i, "I", inputs.k_max) for i in range(len(ests))]
        for i, s in enumerate(seeds):
            factor = 1.0 + (0.0 if lam == 0 else lam * d_inf * s.value)
            rhs = factor * means[i]
            se = math.hypot(factor * ses[i], ses[top])
            e = _geq(f"sup_chi_ratio[{tag},mark={D.grid.marks[i]}]", rhs, means[top], se,
                     "(1 + lambda ||D||_{inf,inf} I_a) chi(a) >= max-grid chi")
            e.lhs, e.rhs = means[top], rhs
            rep.entries.append(e)

    if inputs.magnetization:
        if lam_hat is None:
            rep.entries.append(_undetermined("magnetization_lower", "no critical estimate"))
        else:
            J = [kernels._seed_from_kernel(D, lam_hat, i, "J", inputs.k_max).value for i in range(len(w))]
            cons = kernels.derived_constants(model, lam_hat, inputs.triangle_value, inputs.k_max, inputs.resolution)
            for g in sorted(inputs.magnetization):
                for i, e in enumerate(inputs.magnetization[g]):
                    mark = D.grid.marks[i]
                    rhs = math.sqrt(g / (1 + (1 + lam_hat * d_inf * J[i]) ** 2))
                    rep.entries.append(_geq(f"magnetization_lower[gamma={g:.6g},mark={mark}]", e.mean, rhs,
                                            e.stderr, "M >= sqrt(gamma / (1 + (1 + lambda ||D|| J_a)^2))"))
                    name = f"magnetization_upper[gamma={g:.6g},mark={mark}]"
                    if not inputs.triangle_holds:
                        rep.entries.append(_undetermined(name, "triangle condition not verified"))
                    elif not math.isfinite(cons.K_constant):
                        rep.entries.append(_undetermined(name, "kappa not positive at lambda_hat"))
                    else:
                        rhs = math.sqrt(cons.K_constant * g)
                        x = _geq(name, rhs, e.mean, e.stderr, "M <= sqrt(K gamma)")
                        x.lhs, x.rhs = e.mean, rhs
                        rep.entries.append(x)

    for mark, table in inputs.tails.items():
        if not inputs.triangle_holds:
            rep.entries.append(_undetermined(f"tail_bounds[mark={mark}]", "triangle condition not verified"))
            continue
        cons = kernels.derived_constants(model, lam_hat, inputs.triangle_value, inputs.k_max, inputs.resolution)
        K = cons.K_constant
        if not math.isfinite(K):
            rep.entries.append(_undetermined(f"tail_bounds[mark={mark}]", "kappa not positive at lambda_hat"))
            continue
        c_low = 1.0 / (4 * math.e * math.sqrt(K)) / (1 + cons.cbar**2)
        for n, e in table:
            up = math.e / (math.e - 1) * math.sqrt(K / n)
            x = _geq(f"tail_upper[n={n},mark={mark}]", up, e.mean, e.stderr, "P(|C|>=n) <= e/(e-1) sqrt(K/n)")
            x.lhs, x.rhs = e.mean, up
            rep.entries.append(x)
            rep.entries.append(_geq(f"tail_lower[n={n},mark={mark}]", e.mean, c_low / math.sqrt(n), e.stderr,
                                    "P(|C|>=n) >= C n^{-1/2}"))
    return rep
