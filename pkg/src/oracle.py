"""
Closed-form population quantities for independent covariates with known
Laplace exponents M_j(theta) = -log E exp(-theta x_j).

With cumulative regressors A(u) and censoring survival C(u):

    G(u)  = f(u) {D(u) + z(u) z(u)^t} C(u),  f = exp(-sum_l M_l(A_l)),
                                             D = diag(-M''(A)), z = M'(A)
    b_I(u) via Sherman-Morrison on D + z z^t
    dJ(u) = f(u) {E(u) + F(u)} C(u) du        (constant alpha only)

These serve as ground truth for the estimators in risk.py.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy import integrate, stats

from .aalen import IndexSet

DEFAULT_QUAD = {"abstol": 1e-10, "reltol": 1e-10, "limit": 200}


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature fails to reach the requested tolerance."""

    def __init__(self, what: str, achieved: float, message: str = ""):
        self.achieved = achieved
        detail = f" ({message})" if message else ""
        super().__init__(f"quadrature for {what} did not converge, error estimate {achieved:.3g}{detail}")


class LaplaceExponent(Protocol):
    """One covariate's distribution, described through its Laplace exponent."""

    @property
    def mean(self) -> float: ...

    def derivatives(self, theta: float) -> tuple[float, float, float, float]: ...

    def ppf(self, u: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class GammaLaplace:
    """Gamma(shape a, rate b): M(theta) = a log(1 + theta/b), defined for theta > -b."""
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"gamma shape and rate must be positive, got a={self.a}, b={self.b}")

    @property
    def mean(self) -> float:
        return self.a / self.b

    def derivatives(self, theta: float) -> tuple[float, float, float, float]:
        """(M, M', M'', M''') at theta."""
        if theta <= -self.b:
            raise ValueError(f"theta = {theta} outside the domain theta > {-self.b}")
        s = 1.0 + theta / self.b
        xi = self.mean
        return (
            self.a * math.log(s),
            xi / s,
            -(xi / self.b) / s ** 2,
            2.0 * (xi / self.b ** 2) / s ** 3,
        )

    def ppf(self, u: np.ndarray) -> np.ndarray:
        return stats.gamma.ppf(u, self.a, scale=1.0 / self.b)


@dataclass(frozen=True)
class CovariateSpec:
    """Independent covariates x_1..x_r, each with its own Laplace exponent."""
    components: tuple[LaplaceExponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("covariate specification needs at least one component")

    @classmethod
    def gamma(cls, shapes: Sequence[float], rates: Sequence[float]) -> "CovariateSpec":
        if len(shapes) != len(rates):
            raise ValueError("shapes and rates must have the same length")
        return cls(tuple(GammaLaplace(float(a), float(b)) for a, b in zip(shapes, rates)))

    @classmethod
    def from_dict(cls, raw: dict) -> "CovariateSpec":
        kind = raw.get("type", "gamma")
        if kind != "gamma":
            raise ValueError(f"unsupported covariate distribution '{kind}'")
        return cls.gamma(raw["shapes"], raw["rates"])

    @property
    def r(self) -> int:
        return len(self.components)

    @property
    def is_gamma(self) -> bool:
        return all(isinstance(c, GammaLaplace) for c in self.components)

    def sample(self, uniforms: np.ndarray) -> np.ndarray:
        """Covariates by inversion from an (n, r) array of uniforms."""
        return np.column_stack([c.ppf(uniforms[:, j]) for j, c in enumerate(self.components)])

    def to_dict(self) -> dict:
        if not self.is_gamma:
            raise ValueError("only gamma specifications serialize")
        return {
            "type": "gamma",
            "shapes": [c.a for c in self.components],
            "rates": [c.b for c in self.components],
        }


@dataclass(frozen=True)
class CensoringSpec:
    """Censoring law: none, exponential with rate c, or administrative at time c."""
    kind: str = "none"
    c: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("none", "exponential", "administrative"):
            raise ValueError(f"unknown censoring type '{self.kind}'")
        if self.kind != "none" and not (self.c is not None and self.c > 0):
            raise ValueError(f"{self.kind} censoring needs a positive parameter c")

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "CensoringSpec":
        if not raw:
            return cls()
        c = raw.get("c")
        return cls(raw.get("type", "none"), None if c is None else float(c))

    def to_dict(self) -> dict:
        return {"type": self.kind} if self.kind == "none" else {"type": self.kind, "c": self.c}

    def survival(self, u: float) -> float:
        """C(u) = Pr{censoring time >= u}."""
        if self.kind == "exponential":
            return math.exp(-self.c * u)
        if self.kind == "administrative":
            return 1.0 if u <= self.c else 0.0
        return 1.0

    def sample(self, uniforms: np.ndarray) -> np.ndarray:
        uniforms = np.asarray(uniforms, dtype=float)
        if self.kind == "exponential":
            return -np.log1p(-uniforms) / self.c
        if self.kind == "administrative":
            return np.full(uniforms.shape, self.c)
        return np.full(uniforms.shape, np.inf)


@dataclass(frozen=True, eq=False)
class PiecewiseConstantRegressors:
    """
    alpha(u) = levels[k] on [breaks[k-1], breaks[k]), with breaks[-1] = 0
    and the last level extending to infinity.
    """
    breaks: tuple[float, ...]
    levels: np.ndarray

    def __post_init__(self):
        levels = np.atleast_2d(np.asarray(self.levels, dtype=float))
        object.__setattr__(self, "levels", levels)
        if levels.shape[0] != len(self.breaks) + 1:
            raise ValueError(
                f"{len(self.breaks)} breakpoints need {len(self.breaks) + 1} levels, got {levels.shape[0]}"
            )
        if any(b <= 0 for b in self.breaks) or any(
            a >= b for a, b in zip(self.breaks, self.breaks[1:])
        ):
            raise ValueError("breakpoints must be positive and strictly increasing")
        if np.any(levels < 0) or not np.all(np.isfinite(levels)):
            raise ValueError("regressor levels must be finite and nonnegative")

    @classmethod
    def constant(cls, alphas: Sequence[float]) -> "PiecewiseConstantRegressors":
        return cls((), np.asarray([alphas], dtype=float))

    @classmethod
    def from_dict(cls, raw: dict) -> "PiecewiseConstantRegressors":
        if "alphas" in raw:
            return cls.constant([float(a) for a in raw["alphas"]])
        regressors = raw.get("regressors", raw)
        return cls(
            tuple(float(b) for b in regressors.get("breaks", [])),
            np.asarray(regressors["levels"], dtype=float),
        )

    def to_dict(self) -> dict:
        if self.is_constant:
            return {"alphas": self.levels[0].tolist()}
        return {"regressors": {"breaks": list(self.breaks), "levels": self.levels.tolist()}}

    @property
    def r(self) -> int:
        return self.levels.shape[1]

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.levels == self.levels[0]))

    @property
    def alphas(self) -> np.ndarray:
        if not self.is_constant:
            raise ValueError("regressor functions are not constant")
        return self.levels[0]

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([[0.0], self.breaks])

    def rate(self, u: float) -> np.ndarray:
        return self.levels[int(np.searchsorted(self.breaks, u, side="right"))]

    def cumulative(self, u: float) -> np.ndarray:
        """A(u) = integral of alpha over [0, u]."""
        edges = self.edges
        seg = int(np.searchsorted(self.breaks, u, side="right"))
        widths = np.diff(edges[: seg + 1])
        done = widths @ self.levels[:seg] if seg else np.zeros(self.r)
        return done + (u - edges[seg]) * self.levels[seg]


@dataclass(frozen=True)
class OracleConfig:
    """Population truth plus the focal covariate vector x and horizon t."""
    covariates: CovariateSpec
    regressors: PiecewiseConstantRegressors
    censoring: CensoringSpec
    x: tuple[float, ...]
    t: float

    def __post_init__(self):
        r = self.covariates.r
        if self.regressors.r != r:
            raise ValueError(f"regressors have dimension {self.regressors.r}, covariates {r}")
        if len(self.x) != r:
            raise ValueError(f"focal x has dimension {len(self.x)}, expected {r}")
        if self.t < 0:
            raise ValueError(f"horizon t must be nonnegative, got {self.t}")
        if self.censoring.kind == "administrative" and self.t > self.censoring.c:
            raise ValueError("horizon t lies beyond the administrative censoring time")

    @classmethod
    def from_dict(cls, raw: dict) -> "OracleConfig":
        try:
            return cls(
                covariates=CovariateSpec.from_dict(raw["covariates"]),
                regressors=PiecewiseConstantRegressors.from_dict(raw),
                censoring=CensoringSpec.from_dict(raw.get("censoring")),
                x=tuple(float(v) for v in raw["x"]),
                t=float(raw["t"]),
            )
        except KeyError as e:
            raise ValueError(f"oracle config is missing {e}") from e

    @classmethod
    def load(cls, path) -> "OracleConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "covariates": self.covariates.to_dict(),
            **self.regressors.to_dict(),
            "censoring": self.censoring.to_dict(),
            "x": list(self.x),
            "t": self.t,
        }

    @property
    def r(self) -> int:
        return self.covariates.r


@dataclass(frozen=True)
class ExactRisk:
    sqb: float
    var: float
    mse: float
    bias: float


@dataclass(frozen=True)
class ToleranceVerdict:
    lhs: float
    rhs: float
    submodel_preferred: bool


@dataclass(frozen=True)
class SweepRow:
    n: int
    index_set: IndexSet
    sqb: float
    var: float
    mse: float
    best: bool = False

    def to_row(self) -> list:
        return [self.n, self.index_set.label, self.sqb, self.var, self.mse, int(self.best)]


@dataclass(frozen=True, eq=False)
class _Moments:
    f: float
    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    A: np.ndarray
    C: float = field(default=1.0)


def laplace_derivatives(spec: CovariateSpec, j: int, theta: float) -> tuple[float, float, float, float]:
    """(M_j, M_j', M_j'', M_j''') at theta for 1-based covariate j."""
    if not 1 <= j <= spec.r:
        raise ValueError(f"covariate index {j} outside 1..{spec.r}")
    return spec.components[j - 1].derivatives(theta)


def _moments(cfg: OracleConfig, u: float) -> _Moments:
    if u < 0:
        raise ValueError(f"time must be nonnegative, got {u}")
    A = cfg.regressors.cumulative(u)
    values = np.array([c.derivatives(a) for c, a in zip(cfg.covariates.components, A)])
    return _Moments(
        f=math.exp(-values[:, 0].sum()),
        M1=values[:, 1],
        M2=values[:, 2],
        M3=values[:, 3],
        A=A,
        C=cfg.censoring.survival(u),
    )


def g_exact(cfg: OracleConfig, u: float) -> np.ndarray:
    """G(u) = E_* exp(-x^t A(u)) x x^t C(u)."""
    m = _moments(cfg, u)
    return m.f * (np.diag(-m.M2) + np.outer(m.M1, m.M1)) * m.C


def b_generic(cfg: OracleConfig, I: IndexSet, u: float) -> np.ndarray:
    """b_I(u) = G_10 G_00^{-1} x_I - x_II computed from the G matrix directly."""
    if I.is_full:
        return np.zeros(0)
    m = _moments(cfg, u)
    # f and C cancel in G_10 G_00^{-1}
    g = np.diag(-m.M2) + np.outer(m.M1, m.M1)
    x = np.asarray(cfg.x)
    p0, p1 = I.positions, I.complement_positions
    return g[np.ix_(p1, p0)] @ np.linalg.solve(g[np.ix_(p0, p0)], x[p0]) - x[p1]


def b_exact(cfg: OracleConfig, I: IndexSet, u: float) -> np.ndarray:
    """b_I(u) by the matrix inversion formula on D_0 + z_0 z_0^t."""
    if I.is_full:
        return np.zeros(0)
    m = _moments(cfg, u)
    x = np.asarray(cfg.x)
    p0, p1 = I.positions, I.complement_positions
    d0 = -m.M2[p0]
    z0, z1 = m.M1[p0], m.M1[p1]
    return z1 * (z0 @ (x[p0] / d0)) / (1.0 + z0 @ (z0 / d0)) - x[p1]


def b_exact_gamma(cfg: OracleConfig, I: IndexSet, u: float) -> np.ndarray:
    """
    Componentwise gamma form:
    b_{I,j}(u) = g_I(u)/(1 + sum_{I} b_j xi_j) * xi_j/(1 + A_j(u)/b_j) - x_j,
    g_I(u) = sum_{I} (b_j + A_j(u)) x_j.
    """
    if not cfg.covariates.is_gamma:
        raise ValueError("gamma closed form needs gamma covariates")
    if I.is_full:
        return np.zeros(0)
    comps = cfg.covariates.components
    A = cfg.regressors.cumulative(u)
    x = cfg.x
    g_I = sum((comps[p].b + A[p]) * x[p] for p in I.positions)
    denom = 1.0 + sum(comps[p].b * comps[p].mean for p in I.positions)
    return np.array([
        g_I / denom * comps[p].mean / (1.0 + A[p] / comps[p].b) - x[p]
        for p in I.complement_positions
    ])


def dj_exact(cfg: OracleConfig, u: float) -> np.ndarray:
    """
    Density of J at u: f(u) {E(u) + F(u)} C(u).

    E_j = M_j''' alpha_j - g M_j'', F_jk = -M_j' M_k'' alpha_k - M_j'' M_k' alpha_j
    + g M_j' M_k', with g = sum_l M_l' alpha_l.
    """
    alpha = cfg.regressors.alphas
    m = _moments(cfg, u)
    g = m.M1 @ alpha
    E = np.diag(m.M3 * alpha - g * m.M2)
    cross = np.outer(m.M1, m.M2 * alpha)
    F = -cross - cross.T + g * np.outer(m.M1, m.M1)
    return m.f * (E + F) * m.C


def _integrate(func, a: float, b: float, what: str, points=None, **quad):
    opts = {**DEFAULT_QUAD, **quad}
    if b <= a:
        return np.zeros_like(np.asarray(func(a), dtype=float))
    inner = None
    if points is not None:
        inner = [p for p in points if a < p < b] or None
    value, err, info = integrate.quad_vec(
        func, a, b,
        epsabs=opts["abstol"],
        epsrel=opts["reltol"],
        limit=opts["limit"],
        points=inner,
        full_output=True,
    )
    if not info.success:
        raise QuadratureError(what, float(err), info.message)
    return value


def j_exact(cfg: OracleConfig, u: float, **quad) -> np.ndarray:
    """J(u) = integral of dj_exact over [0, u]."""
    return _integrate(lambda s: dj_exact(cfg, s), 0.0, u, "J(u)", **quad)


def _variance(cfg: OracleConfig, I: IndexSet, **quad) -> float:
    x = np.asarray(cfg.x)
    p0 = I.positions

    def integrand(u):
        g00 = g_exact(cfg, u)[np.ix_(p0, p0)]
        w = np.linalg.solve(g00, x[p0])
        return w @ dj_exact(cfg, u)[np.ix_(p0, p0)] @ w

    return float(_integrate(integrand, 0.0, cfg.t, f"var{I.label}", **quad))


def _bias_quadrature(cfg: OracleConfig, I: IndexSet, **quad) -> float:
    if I.is_full:
        return 0.0
    p1 = I.complement_positions
    return float(_integrate(
        lambda u: b_exact(cfg, I, u) @ cfg.regressors.rate(u)[p1],
        0.0, cfg.t, f"bias{I.label}", points=cfg.regressors.breaks, **quad,
    ))


def bias_integral(cfg: OracleConfig, I: IndexSet) -> float:
    """
    Integral of b_I^t alpha_II over [0, t] in closed form, for gamma covariates
    and constant alpha.
    """
    if not cfg.covariates.is_gamma:
        raise ValueError("closed-form bias integral needs gamma covariates")
    if I.is_full:
        return 0.0
    alpha = cfg.regressors.alphas
    comps = cfg.covariates.components
    x, t = cfg.x, cfg.t
    c0 = sum(comps[p].b * x[p] for p in I.positions)
    c1 = sum(alpha[p] * x[p] for p in I.positions)
    denom = 1.0 + sum(comps[p].a for p in I.positions)
    total = 0.0
    for p in I.complement_positions:
        a_j, b_j, al = comps[p].a, comps[p].b, alpha[p]
        if al == 0:
            continue
        total += a_j * ((c0 - c1 * b_j / al) * math.log1p(al * t / b_j) + c1 * t)
    return total / denom - sum(x[p] * alpha[p] * t for p in I.complement_positions)


def exact_risk(cfg: OracleConfig, I: IndexSet, n: int, **quad) -> ExactRisk:
    """
    sqb = n (integral of b_I^t dA_II)^2, var by quadrature of
    x_I^t G_00^{-1} dJ_00 G_00^{-1} x_I, mse = sqb + var.

    Raises:
        QuadratureError: If an integral does not converge.
    """
    if I.r != cfg.r:
        raise ValueError(f"index set dimension {I.r} does not match config dimension {cfg.r}")
    bias = _bias_quadrature(cfg, I, **quad)
    var = _variance(cfg, I, **quad)
    sqb = n * bias ** 2
    return ExactRisk(sqb=sqb, var=var, mse=sqb + var, bias=bias)


def tolerance_radius(cfg: OracleConfig, I: IndexSet, n: int, **quad) -> ToleranceVerdict:
    """
    Compare the submodel's squared bias with the variance it saves:
    submodel preferred iff n (int b^t dA_II)^2 <= var(full) - var(I).
    """
    lhs = exact_risk(cfg, I, n, **quad).sqb
    rhs = _variance(cfg, IndexSet.full(cfg.r), **quad) - _variance(cfg, I, **quad)
    return ToleranceVerdict(lhs=lhs, rhs=rhs, submodel_preferred=lhs <= rhs)


def bias_curve(cfg: OracleConfig, I: IndexSet, times: Sequence[float]) -> list[tuple[float, np.ndarray]]:
    """(u, b_I(u)) rows for plotting."""
    return [(float(u), b_exact(cfg, I, u)) for u in times]


def oracle_sweep(
    cfg: OracleConfig,
    candidates: Sequence[IndexSet],
    ns: Sequence[int],
    **quad,
) -> list[SweepRow]:
    """Exact risk of every candidate for each n, flagging the mse-optimal one."""
    parts = {}
    for I in candidates:
        parts[I] = (_bias_quadrature(cfg, I, **quad), _variance(cfg, I, **quad))

    rows = []
    for n in ns:
        block = [
            SweepRow(n, I, n * bias ** 2, var, n * bias ** 2 + var)
            for I, (bias, var) in parts.items()
        ]
        best = min(block, key=lambda row: (row.mse, row.index_set.sort_key()))
        rows.extend(
            SweepRow(row.n, row.index_set, row.sqb, row.var, row.mse, row is best)
            for row in block
        )
    return rows
