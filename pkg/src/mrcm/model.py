"""Mark spaces, adjacency families and the sampling primitives built on them.

A model is the triple ``(d, adjacency, marks)``.  Marks are either indices
into a finite alphabet (``int``) or real values in an interval (``float``).
For finite alphabets each atom also carries a real ``value``; the Boolean
disc family reads it as the radius of the vertex.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Any, Sequence

import numpy as np
from scipy.special import gammaln

__all__ = [
    "ModelError",
    "MarkDistribution",
    "BoxProfile",
    "BallProfile",
    "GaussianProfile",
    "BooleanDisc",
    "Gaussian",
    "Factorisable",
    "ModelSpec",
    "MarkGrid",
    "ball_volume",
    "adjacency_prob",
    "sample_mark",
    "sample_displacement",
    "mark_grid",
    "load_fixture",
]

WEIGHT_TOL = 1e-12
#: phi below this value is treated as zero by the spatial hash
TRUNCATION_LEVEL = 1e-12


class ModelError(ValueError):
    """Invalid model definition or invalid mark/displacement for a model."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


def ball_volume(d: int, r=1.0):
    """Volume of the Euclidean ``d``-ball of radius ``r``."""
    return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)) * np.asarray(r, dtype=float) ** d


# ---------------------------------------------------------------------------
# mark distributions


@dataclass(frozen=True)
class MarkDistribution:
    """Distribution of vertex marks.

    Use :meth:`finite` or :meth:`uniform` rather than the raw constructor.
    """

    kind: str
    weights: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    low: float = math.nan
    high: float = math.nan
    exact_weights: tuple[Fraction, ...] | None = field(default=None, compare=False)

    @classmethod
    def finite(cls, weights: Sequence, values: Sequence | None = None) -> "MarkDistribution":
        if len(weights) == 0:
            raise ModelError("at least one atom is required", "marks.weights")
        fracs = [_to_fraction(w) for w in weights]
        w = tuple(float(f) for f in fracs)
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ModelError("weights must be finite and nonnegative", "marks.weights")
        if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
            raise ModelError(f"weights sum to {math.fsum(w)!r}, not 1", "marks.weights")
        exact = tuple(fracs) if sum(fracs) == 1 else None
        if values is None:
            vals = tuple(float(i) for i in range(len(w)))
        else:
            if len(values) != len(w):
                raise ModelError("values and weights differ in length", "marks.values")
            vals = tuple(float(v) for v in values)
        return cls("finite", w, vals, exact_weights=exact)

    @classmethod
    def uniform(cls, low: float, high: float) -> "MarkDistribution":
        low, high = float(low), float(high)
        if not (math.isfinite(low) and math.isfinite(high)) or high < low:
            raise ModelError("need finite bounds with low <= high", "marks")
        return cls("uniform_interval", low=low, high=high)

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    def check(self, mark) -> None:
        if self.is_finite:
            if not isinstance(mark, (int, np.integer)) or not 0 <= mark < self.n_atoms:
                raise ModelError(f"mark {mark!r} is not an index below {self.n_atoms}")
        else:
            if not self.low <= float(mark) <= self.high:
                raise ModelError(f"mark {mark!r} outside [{self.low}, {self.high}]")

    def value(self, mark):
        """Real attribute of ``mark`` (the atom value, or the mark itself)."""
        if self.is_finite:
            return np.asarray(self.values)[np.asarray(mark, dtype=int)]
        return np.asarray(mark, dtype=float)

    def value_bounds(self) -> tuple[float, float]:
        if self.is_finite:
            return min(self.values), max(self.values)
        return self.low, self.high

    def sample(self, rng: np.random.Generator, size=None):
        if self.is_finite:
            return rng.choice(self.n_atoms, size=size, p=np.asarray(self.weights))
        return rng.uniform(self.low, self.high, size=size)

    def to_dict(self) -> dict:
        if self.is_finite:
            if self.exact_weights is not None:
                w = [int(f) if f.denominator == 1 else str(f) for f in self.exact_weights]
            else:
                w = list(self.weights)
            return {"kind": "finite", "weights": w, "values": list(self.values)}
        return {"kind": "uniform_interval", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class MarkGrid:
    """Quadrature discretisation of a mark distribution."""

    marks: tuple
    weights: np.ndarray
    exact_weights: tuple[Fraction, ...] | None
    resolution: int | None

    def __len__(self):
        return len(self.marks)


def mark_grid(dist: MarkDistribution, resolution: int = 64) -> MarkGrid:
    """Atoms of a finite distribution, or midpoint nodes of a continuous one."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if dist.is_finite:
        return MarkGrid(tuple(range(dist.n_atoms)), np.asarray(dist.weights, dtype=float),
                        dist.exact_weights, None)
    h = (dist.high - dist.low) / resolution
    nodes = tuple(float(dist.low + (i + 0.5) * h) for i in range(resolution))
    return MarkGrid(nodes, np.full(resolution, 1.0 / resolution), None, resolution)


def sample_mark(dist: MarkDistribution, rng: np.random.Generator):
    """Draw one mark from ``dist``."""
    m = dist.sample(rng)
    return int(m) if dist.is_finite else float(m)


# ---------------------------------------------------------------------------
# spatial profiles for the factorisable family


@dataclass(frozen=True)
class BoxProfile:
    """``height`` on the cube ``[-half_width, half_width]^d``."""

    half_width: float
    height: float = 1.0
    code = 0

    def integral(self, d):
        return self.height * (2.0 * self.half_width) ** d

    def exact_integral(self, d):
        return _to_fraction(self.height) * (2 * _to_fraction(self.half_width)) ** d

    def range(self, d):
        return self.half_width * math.sqrt(d)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.all(np.abs(x) <= self.half_width, axis=-1), self.height, 0.0)

    def sample(self, rng, d, size=None):
        shape = (d,) if size is None else (*np.atleast_1d(size), d)
        return rng.uniform(-self.half_width, self.half_width, size=shape)

    def to_dict(self):
        return {"shape": "box", "half_width": self.half_width, "height": self.height}


@dataclass(frozen=True)
class BallProfile:
    """``height`` on the ball of radius ``radius``."""

    radius: float
    height: float = 1.0
    code = 1

    def integral(self, d):
        return self.height * float(ball_volume(d, self.radius))

    def exact_integral(self, d):
        return None

    def range(self, d):
        return self.radius

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.linalg.norm(x, axis=-1) < self.radius, self.height, 0.0)

    def sample(self, rng, d, size=None):
        return _uniform_ball(rng, d, self.radius, size)

    def to_dict(self):
        return {"shape": "ball", "radius": self.radius, "height": self.height}


@dataclass(frozen=True)
class GaussianProfile:
    """``height * exp(-|x|^2 / (2 scale^2))``."""

    scale: float
    height: float = 1.0
    code = 2

    def integral(self, d):
        return self.height * (2.0 * math.pi * self.scale**2) ** (0.5 * d)

    def exact_integral(self, d):
        return None

    def range(self, d):
        return self.scale * math.sqrt(2.0 * math.log(self.height / TRUNCATION_LEVEL))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.height * np.exp(-0.5 * np.sum(x * x, axis=-1) / self.scale**2)

    def sample(self, rng, d, size=None):
        shape = (d,) if size is None else (*np.atleast_1d(size), d)
        return rng.normal(0.0, self.scale, size=shape)

    def to_dict(self):
        return {"shape": "gaussian", "scale": self.scale, "height": self.height}


_PROFILES = {"box": BoxProfile, "ball": BallProfile, "gaussian": GaussianProfile}


def _uniform_ball(rng, d, radius, size=None):
    n = 1 if size is None else int(np.prod(size))
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    out = g * r[:, None]
    if size is None:
        return out[0]
    return out.reshape(*np.atleast_1d(size), d)


# ---------------------------------------------------------------------------
# adjacency families


@dataclass(frozen=True)
class BooleanDisc:
    """``phi(x; a, b) = 1{|x| < r_a + r_b}`` with radii read from the marks."""

    r_min: float
    r_max: float
    kind = "boolean_disc"

    def __post_init__(self):
        if not (0 <= self.r_min <= self.r_max < math.inf) or self.r_max <= 0:
            raise ModelError("need 0 <= r_min <= r_max < inf and r_max > 0", "adjacency")

    def to_dict(self):
        return {"kind": self.kind, "r_min": self.r_min, "r_max": self.r_max}


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Gaussian-shaped adjacency with total mass ``amplitude`` per mark pair.

    ``covariance`` is an array of shape ``(n, n, d, d)`` for an ``n``-atom
    alphabet; shapes ``(d, d)``, ``(n, n)`` (isotropic variances) and scalars
    are broadcast.  A callable ``cov(a, b) -> (d, d)`` is tabulated at model
    construction.
    """

    covariance: Any
    amplitude: float
    kind = "gaussian"

    def table(self, n: int, d: int) -> np.ndarray:
        cov = self.covariance
        if callable(cov):
            tab = np.array([[np.asarray(cov(a, b), dtype=float).reshape(d, d)
                             for b in range(n)] for a in range(n)])
        else:
            c = np.asarray(cov, dtype=float)
            if c.ndim == 0:
                tab = np.broadcast_to(c * np.eye(d), (n, n, d, d))
            elif c.shape == (d, d):
                tab = np.broadcast_to(c, (n, n, d, d))
            elif c.shape == (n, n):
                tab = c[:, :, None, None] * np.eye(d)
            elif c.shape == (n, n, d, d):
                tab = c
            else:
                raise ModelError(f"covariance shape {c.shape} incompatible with n={n}, d={d}",
                                 "adjacency.covariance")
        return np.array(tab, dtype=float)

    def to_dict(self):
        cov = self.covariance
        if callable(cov):
            raise ModelError("callable covariance cannot be serialised; pass a table")
        return {"kind": self.kind, "covariance": np.asarray(cov, dtype=float).tolist(),
                "amplitude": self.amplitude}


@dataclass(frozen=True, eq=False)
class Factorisable:
    """``phi(x; a, b) = psi(x) K(a, b)``.

    ``kernel`` is a symmetric matrix for finite marks, or ``"product"``
    (``K(a, b) = a b``) for marks in a subinterval of ``[0, 1]``.
    """

    profile: BoxProfile | BallProfile | GaussianProfile
    kernel: Any
    kind = "factorisable"

    @property
    def kernel_form(self) -> str:
        return self.kernel if isinstance(self.kernel, str) else "matrix"

    def exact_kernel(self):
        if isinstance(self.kernel, str):
            return None
        try:
            return [[_to_fraction(x) for x in row] for row in self.kernel]
        except (TypeError, ValueError):
            return None

    def to_dict(self):
        k = self.kernel
        if not isinstance(k, str):
            ex = self.exact_kernel()
            k = [[int(f) if f.denominator == 1 else str(f) for f in row] for row in ex]
        return {"kind": self.kind, "profile": self.profile.to_dict(), "kernel": k}


# ---------------------------------------------------------------------------
# the model


class ModelSpec:
    """Complete definition of one marked random connection model.

    Parameters
    ----------
    d : int
        Spatial dimension.
    adjacency : BooleanDisc, Gaussian or Factorisable
    marks : MarkDistribution
    """

    def __init__(self, d: int, adjacency, marks: MarkDistribution, name: str | None = None):
        if not isinstance(d, (int, np.integer)) or d < 1:
            raise ModelError("dimension must be a positive integer", "d")
        self.d = int(d)
        self.adjacency = adjacency
        self.marks = marks
        self.name = name
        self._validate()

    # -- validation ---------------------------------------------------------
    def _validate(self):
        adj, marks, d = self.adjacency, self.marks, self.d
        if isinstance(adj, BooleanDisc):
            lo, hi = marks.value_bounds()
            if lo < adj.r_min - 1e-12 or hi > adj.r_max + 1e-12:
                raise ModelError("mark radii fall outside [r_min, r_max]", "marks")
        elif isinstance(adj, Gaussian):
            if not marks.is_finite:
                raise ModelError("gaussian adjacency requires a finite mark alphabet", "marks")
            n = marks.n_atoms
            tab = adj.table(n, d)
            if not np.allclose(tab, np.swapaxes(tab, 0, 1)):
                raise ModelError("covariance table must satisfy S(a,b) = S(b,a)",
                                 "adjacency.covariance")
            if adj.amplitude <= 0:
                raise ModelError("amplitude must be positive", "adjacency.amplitude")
            chol = np.empty_like(tab)
            for a in range(n):
                for b in range(n):
                    s = tab[a, b]
                    if not np.allclose(s, s.T):
                        raise ModelError(f"covariance ({a},{b}) is not symmetric",
                                         "adjacency.covariance")
                    try:
                        chol[a, b] = np.linalg.cholesky(s)
                    except np.linalg.LinAlgError:
                        raise ModelError(f"covariance ({a},{b}) is not positive definite",
                                         "adjacency.covariance") from None
                    det = float(np.prod(np.diag(chol[a, b])) ** 2)
                    if adj.amplitude**2 > (2 * math.pi) ** d * det * (1 + 1e-12):
                        raise ModelError(f"amplitude too large for covariance ({a},{b}); phi would exceed 1",
                                         "adjacency.amplitude")
            self._cov = tab
            self._chol = chol
            self._cov_inv = np.linalg.inv(tab)
            self._gauss_pref = adj.amplitude * (2 * math.pi) ** (-d / 2) / np.prod(
                np.diagonal(chol, axis1=2, axis2=3), axis=-1)
        elif isinstance(adj, Factorisable):
            p = adj.profile
            if not isinstance(p, (BoxProfile, BallProfile, GaussianProfile)):
                raise ModelError("unknown spatial profile", "adjacency.profile")
            if not 0 < p.height <= 1:
                raise ModelError("profile height must be in (0, 1]", "adjacency.profile.height")
            size = getattr(p, "half_width", None) or getattr(p, "radius", None) or getattr(p, "scale", None)
            if size is None or size <= 0:
                raise ModelError("profile size must be positive", "adjacency.profile")
            if adj.kernel_form == "matrix":
                if not marks.is_finite:
                    raise ModelError("matrix kernel requires finite marks", "adjacency.kernel")
                k = np.asarray(adj.kernel, dtype=float)
                n = marks.n_atoms
                if k.shape != (n, n):
                    raise ModelError(f"kernel must be {n}x{n}", "adjacency.kernel")
                if not np.array_equal(k, k.T):
                    raise ModelError("kernel must be symmetric", "adjacency.kernel")
                if np.any(k < 0) or np.any(k > 1):
                    raise ModelError("kernel entries must lie in [0, 1]", "adjacency.kernel")
                self._K = k
            elif adj.kernel_form == "product":
                if marks.is_finite:
                    vals = np.asarray(marks.values)
                    lo, hi = vals.min(), vals.max()
                else:
                    lo, hi = marks.low, marks.high
                if lo < 0 or hi > 1:
                    raise ModelError("product kernel needs mark values in [0, 1]", "adjacency.kernel")
            else:
                raise ModelError(f"unknown kernel form {adj.kernel!r}", "adjacency.kernel")
        else:
            raise ModelError(f"unknown adjacency type {type(adj).__name__}", "adjacency")

    # -- kernel-level quantities -----------------------------------------------
    def _kernel_value(self, a, b):
        adj = self.adjacency
        if adj.kernel_form == "matrix":
            return self._K[np.asarray(a, dtype=int), np.asarray(b, dtype=int)]
        return self.marks.value(a) * self.marks.value(b)

    def degree(self, a, b):
        """``D(a, b)``, the integral of ``phi(.; a, b)`` over space."""
        adj = self.adjacency
        if isinstance(adj, BooleanDisc):
            return ball_volume(self.d, self.marks.value(a) + self.marks.value(b))
        if isinstance(adj, Gaussian):
            return np.full(np.broadcast(np.asarray(a), np.asarray(b)).shape, adj.amplitude)
        return adj.profile.integral(self.d) * self._kernel_value(a, b)

    def exact_degree(self, a: int, b: int) -> Fraction | None:
        """``D(a, b)`` as a Fraction where it is rational, else ``None``."""
        adj = self.adjacency
        if isinstance(adj, BooleanDisc):
            if self.d == 1 and self.marks.is_finite:
                return 2 * (_to_fraction(self.marks.values[a]) + _to_fraction(self.marks.values[b]))
            return None
        if isinstance(adj, Gaussian):
            return _to_fraction(adj.amplitude)
        integ = adj.profile.exact_integral(self.d)
        k = adj.exact_kernel()
        if integ is None or k is None:
            return None
        return integ * k[a][b]

    def interaction_range(self) -> float:
        """Distance beyond which ``phi`` is zero or below the truncation level."""
        adj = self.adjacency
        if isinstance(adj, BooleanDisc):
            return 2.0 * self.marks.value_bounds()[1]
        if isinstance(adj, Gaussian):
            # largest covariance eigenvalue and largest prefactor bound the tail
            lam_max = float(np.max(np.linalg.eigvalsh(self._cov)))
            pref = float(np.max(self._gauss_pref))
            if pref <= TRUNCATION_LEVEL:
                return 0.0
            return math.sqrt(2.0 * lam_max * math.log(pref / TRUNCATION_LEVEL))
        return adj.profile.range(self.d)

    def truncated_mass(self) -> float:
        """Upper bound on the mass of ``phi`` lost beyond :meth:`interaction_range`."""
        adj = self.adjacency
        r = self.interaction_range()
        from scipy.stats import chi2
        if isinstance(adj, Gaussian):
            lam_max = float(np.max(np.linalg.eigvalsh(self._cov)))
            return adj.amplitude * float(chi2.sf(r * r / lam_max, self.d))
        if isinstance(adj, Factorisable) and isinstance(adj.profile, GaussianProfile):
            p = adj.profile
            return p.integral(self.d) * float(chi2.sf((r / p.scale) ** 2, self.d))
        return 0.0

    # -- pointwise evaluation -----------------------------------------------
    def phi(self, dx, a, b):
        """Vectorised ``phi(dx; a, b)``; ``dx`` has trailing axis of length ``d``."""
        dx = np.asarray(dx, dtype=float)
        adj = self.adjacency
        if isinstance(adj, BooleanDisc):
            r = self.marks.value(a) + self.marks.value(b)
            return (np.linalg.norm(dx, axis=-1) < r).astype(float)
        if isinstance(adj, Gaussian):
            a = np.asarray(a, dtype=int)
            b = np.asarray(b, dtype=int)
            inv = self._cov_inv[a, b]
            q = np.einsum("...i,...ij,...j->...", dx, inv, dx)
            return self._gauss_pref[a, b] * np.exp(-0.5 * q)
        return adj.profile(dx) * self._kernel_value(a, b)

    # -- serialisation --------------------------------------------------------
    def to_dict(self) -> dict:
        out = {"d": self.d, "adjacency": self.adjacency.to_dict(), "marks": self.marks.to_dict()}
        if self.name:
            out["name"] = self.name
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        return _model_from_dict(doc)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return _model_from_dict(json.loads(text))

    def fingerprint(self) -> str:
        import hashlib
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def __repr__(self):
        return f"ModelSpec(d={self.d}, adjacency={self.adjacency.kind}, marks={self.marks.kind})"


# ---------------------------------------------------------------------------
# module-level operations


def _check_point(model: ModelSpec, dx, a, b):
    dx = np.asarray(dx, dtype=float)
    if dx.shape[-1:] != (model.d,):
        raise ModelError(f"displacement must have length {model.d}, got shape {dx.shape}")
    model.marks.check(a)
    model.marks.check(b)
    return dx


def adjacency_prob(model: ModelSpec, dx, a, b) -> float:
    """Connection probability ``phi(dx; a, b)`` for one pair."""
    dx = _check_point(model, dx, a, b)
    return float(model.phi(dx, a, b))


def sample_displacement(model: ModelSpec, a, b, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw displacements with density ``phi(.; a, b) / D(a, b)``."""
    model.marks.check(a)
    model.marks.check(b)
    if float(model.degree(a, b)) <= 0:
        raise ModelError(f"D({a}, {b}) = 0: the displacement law has empty support")
    adj, d = model.adjacency, model.d
    if isinstance(adj, BooleanDisc):
        r = float(model.marks.value(a) + model.marks.value(b))
        return _uniform_ball(rng, d, r, size)
    if isinstance(adj, Gaussian):
        L = model._chol[a, b]
        n = 1 if size is None else int(np.prod(size))
        z = rng.standard_normal((n, d)) @ L.T
        return z[0] if size is None else z.reshape(*np.atleast_1d(size), d)
    return adj.profile.sample(rng, d, size)


# ---------------------------------------------------------------------------
# JSON documents


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise ModelError(f"missing required key {key!r}", path)
    return doc[key]


def _strict_keys(doc: dict, allowed: set, path: str):
    import difflib
    for k in doc:
        if k not in allowed:
            close = difflib.get_close_matches(k, sorted(allowed), n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ModelError(f"unknown key {k!r}{hint}", f"{path}.{k}" if path else k)


def _marks_from_dict(doc: dict) -> MarkDistribution:
    if not isinstance(doc, dict):
        raise ModelError("must be an object", "marks")
    kind = _require(doc, "kind", "marks")
    if kind == "finite":
        _strict_keys(doc, {"kind", "weights", "values"}, "marks")
        return MarkDistribution.finite(_require(doc, "weights", "marks"), doc.get("values"))
    if kind == "uniform_interval":
        _strict_keys(doc, {"kind", "low", "high"}, "marks")
        return MarkDistribution.uniform(_require(doc, "low", "marks"), _require(doc, "high", "marks"))
    raise ModelError(f"unknown mark kind {kind!r} (expected 'finite' or 'uniform_interval')", "marks.kind")


def _profile_from_dict(doc: dict):
    path = "adjacency.profile"
    shape = _require(doc, "shape", path)
    if shape not in _PROFILES:
        raise ModelError(f"unknown profile shape {shape!r}", path + ".shape")
    cls = _PROFILES[shape]
    size_key = {"box": "half_width", "ball": "radius", "gaussian": "scale"}[shape]
    _strict_keys(doc, {"shape", size_key, "height"}, path)
    return cls(float(_require(doc, size_key, path)), float(doc.get("height", 1.0)))


def _adjacency_from_dict(doc: dict):
    if not isinstance(doc, dict):
        raise ModelError("must be an object", "adjacency")
    kind = _require(doc, "kind", "adjacency")
    if kind == "boolean_disc":
        _strict_keys(doc, {"kind", "r_min", "r_max"}, "adjacency")
        return BooleanDisc(float(_require(doc, "r_min", "adjacency")), float(_require(doc, "r_max", "adjacency")))
    if kind == "gaussian":
        _strict_keys(doc, {"kind", "covariance", "amplitude"}, "adjacency")
        return Gaussian(_require(doc, "covariance", "adjacency"), float(_require(doc, "amplitude", "adjacency")))
    if kind == "factorisable":
        _strict_keys(doc, {"kind", "profile", "kernel"}, "adjacency")
        prof = _profile_from_dict(_require(doc, "profile", "adjacency"))
        kern = _require(doc, "kernel", "adjacency")
        return Factorisable(prof, kern)
    raise ModelError(f"unknown adjacency kind {kind!r} (expected boolean_disc, gaussian or factorisable)",
                     "adjacency.kind")


def _model_from_dict(doc: dict) -> ModelSpec:
    if not isinstance(doc, dict):
        raise ModelError("model document must be an object")
    _strict_keys(doc, {"d", "adjacency", "marks", "name"}, "")
    d = _require(doc, "d", "")
    if not isinstance(d, int) or isinstance(d, bool):
        raise ModelError("must be an integer", "d")
    adj = _adjacency_from_dict(_require(doc, "adjacency", ""))
    marks = _marks_from_dict(_require(doc, "marks", ""))
    return ModelSpec(d, adj, marks, name=doc.get("name"))


FIXTURES = ("three_mark", "boolean_d1")


def load_fixture(name: str) -> ModelSpec:
    """Load a bundled model document by name (``three_mark``, ``boolean_d1``)."""
    if name not in FIXTURES:
        raise ModelError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    text = resources.files("mrcm").joinpath("data", f"{name}.json").read_text()
    return ModelSpec.from_json(text)
