"""
Risk estimation and focussed model selection for the Aalen model.

For a candidate index set I and focal covariate x, the squared-bias and
variance estimators are finite sums over the event grid:

    sqb-hat = n (sum_u b(u)^t dA-hat_II(u))^2 - sum_u b(u)^t dQ-hat(u) b(u)
    var-hat = sum_u x_I^t G00^{-1} dJ-hat_00 G00^{-1} x_I

with b(u) = G10 G00^{-1} x_I - x_II. The FIC score truncates sqb-hat at
zero; the weighted FIC truncates only after weighting.
"""

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .aalen import (
    DEFAULT_RCOND,
    GridMoments,
    IndexSet,
    SingularityError,
    StepEstimate,
    gn_blocks,
    reciprocal_condition,
)
from .data_model import Dataset, EventGrid


class InfeasibleWeightError(ValueError):
    """Raised when a weighted focus point cannot be scored for a candidate."""

    def __init__(self, j: int, x: Sequence[float], t: float, cause: Exception):
        self.j = j
        self.x = tuple(x)
        self.t = t
        super().__init__(f"weight point {j} (x={list(self.x)}, t={t:g}) infeasible: {cause}")


class AllCandidatesInfeasibleError(RuntimeError):
    """Raised when no candidate model can be scored for the requested focus."""

    def __init__(self, report: "FicReport"):
        self.report = report
        reasons = "; ".join(f"{r.index_set.label}: {r.reason}" for r in report.infeasible)
        super().__init__(f"all candidate models infeasible ({reasons})")


@dataclass(frozen=True, eq=False)
class BiasFunctionSample:
    """b_{I,n}(u, x), of dimension q = r - |I|."""
    time: float
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class MatrixIncrements:
    """Symmetric matrix increments at event-grid times."""
    grid: EventGrid
    increments: np.ndarray


@dataclass(frozen=True)
class FicResult:
    """
    Risk estimate for one candidate.

    For weighted criteria sqb_hat, var_hat and bias_variance hold the
    w-weighted sums and bias_estimate is left unset.
    """
    index_set: IndexSet
    sqb_hat: float = float("nan")
    var_hat: float = float("nan")
    score: float = float("nan")
    bias_estimate: Optional[float] = None
    bias_variance: Optional[float] = None
    feasible: bool = True
    reason: Optional[str] = None

    @classmethod
    def infeasible(cls, index_set: IndexSet, reason: str) -> "FicResult":
        return cls(index_set=index_set, feasible=False, reason=reason)

    @property
    def negative_variance(self) -> bool:
        return self.feasible and self.var_hat < 0

    def as_tuple(self) -> tuple[float, float, float]:
        return self.sqb_hat, self.var_hat, self.score

    def to_dict(self) -> dict:
        out = {
            "I": list(self.index_set.indices),
            "sqb_hat": self.sqb_hat if self.feasible else None,
            "var_hat": self.var_hat if self.feasible else None,
            "score": self.score if self.feasible else None,
            "feasible": self.feasible,
        }
        if self.reason:
            out["reason"] = self.reason
        if self.negative_variance:
            out["negative_variance"] = True
        return out


@dataclass(frozen=True)
class PointFocus:
    """A focal covariate vector and time horizon [0, t]."""
    x: tuple[float, ...]
    t: float

    def describe(self) -> dict:
        return {"x": list(self.x), "t": self.t}


@dataclass(frozen=True)
class IntervalFocus:
    """A focal covariate vector and time window (t1, t2]."""
    x: tuple[float, ...]
    t1: float
    t2: float

    def describe(self) -> dict:
        return {"x": list(self.x), "t1": self.t1, "t2": self.t2}


@dataclass(frozen=True)
class WeightPoint:
    x: tuple[float, ...]
    t: float
    w: float


@dataclass(frozen=True)
class PointWeights:
    """Finite weight measure over (x_j, t_j) with nonnegative weights summing to one."""
    points: tuple[WeightPoint, ...]

    def __post_init__(self):
        if not self.points:
            raise ValueError("weight specification needs at least one point")
        if any(p.w < 0 for p in self.points):
            raise ValueError("weights must be nonnegative")
        total = sum(p.w for p in self.points)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")

    @classmethod
    def uniform(cls, xs: Iterable[Sequence[float]], t: float) -> "PointWeights":
        xs = [tuple(float(v) for v in x) for x in xs]
        return cls(tuple(WeightPoint(x, float(t), 1.0 / len(xs)) for x in xs))

    def describe(self) -> dict:
        return {"points": [{"x": list(p.x), "t": p.t, "w": p.w} for p in self.points]}


@dataclass(frozen=True)
class EmpiricalCovariates:
    """Weights given by the empirical covariate distribution at a fixed time."""
    t: float

    def describe(self) -> dict:
        return {"empirical": {"t": self.t}}


WeightSpec = Union[PointWeights, EmpiricalCovariates]
Focus = Union[PointFocus, IntervalFocus, PointWeights, EmpiricalCovariates]


def parse_weight_spec(raw: dict) -> WeightSpec:
    """Build a weight specification from its JSON document."""
    try:
        if "empirical" in raw:
            return EmpiricalCovariates(float(raw["empirical"]["t"]))
        if "points" in raw:
            return PointWeights(tuple(
                WeightPoint(tuple(float(v) for v in p["x"]), float(p["t"]), float(p["w"]))
                for p in raw["points"]
            ))
    except KeyError as e:
        raise ValueError(f"weight specification is missing {e}") from e
    except TypeError as e:
        raise ValueError(f"malformed weight specification: {e}") from e
    raise ValueError("weight specification needs 'points' or 'empirical'")


def load_weight_spec(path) -> WeightSpec:
    with open(path) as f:
        return parse_weight_spec(json.load(f))


@dataclass(frozen=True)
class FicReport:
    """Ranked candidates (ascending score) plus those that could not be scored."""
    focal: dict
    ranked: tuple[FicResult, ...]
    infeasible: tuple[FicResult, ...] = field(default_factory=tuple)

    @property
    def winner(self) -> Optional[IndexSet]:
        return self.ranked[0].index_set if self.ranked else None

    def to_dict(self) -> dict:
        return {
            "focal": self.focal,
            "candidates": [r.to_dict() for r in self.ranked + self.infeasible],
            "winner": list(self.winner.indices) if self.winner else None,
        }


def rank_results(results: Iterable[FicResult], focal: dict) -> FicReport:
    """Order feasible results by score, then smaller |I|, then lexicographic I."""
    results = list(results)
    feasible = sorted(
        (r for r in results if r.feasible),
        key=lambda r: (r.score, r.index_set.size, r.index_set.indices),
    )
    infeasible = tuple(r for r in results if not r.feasible)
    return FicReport(focal=focal, ranked=tuple(feasible), infeasible=infeasible)


class RiskContext:
    """
    Cached full-model quantities for one dataset: G_n, G_n^{-1}, dA-hat,
    dJ-hat and the sandwich G_n^{-1} dJ-hat G_n^{-1} over the event grid.

    The full model is fitted up to the first grid time where G_n turns
    singular; windows reaching past that time raise SingularityError.
    """

    def __init__(self, d: Dataset, rcond: float = DEFAULT_RCOND):
        self.dataset = d
        self.n = d.n
        self.r = d.r
        self.rcond = rcond
        self.moments = GridMoments(d)
        self.times = self.moments.grid.as_array()

        bad = self.moments.first_singular(np.arange(self.r), rcond)
        self.usable = len(self.times) if bad is None else bad
        self.singular_time = None if bad is None else float(self.times[bad])

        k = self.usable
        gn = self.moments.gn[:k]
        self.ginv = np.linalg.inv(gn) if k else np.zeros((0, self.r, self.r))
        self.ahat = np.einsum("kij,kj->ki", self.ginv, self.moments.dn_x[:k])
        self.jhat = self.moments.jhat(self.ahat)
        self.sandwich = self.ginv @ self.jhat @ self.ginv

    def _window(self, t1: float, t2: float) -> slice:
        if t1 < 0 or t2 < t1:
            raise ValueError(f"invalid window ({t1}, {t2}]")
        lo = int(np.searchsorted(self.times, t1, side="right"))
        hi = int(np.searchsorted(self.times, t2, side="right"))
        if hi > self.usable:
            raise SingularityError(self.singular_time, IndexSet.full(self.r))
        return slice(lo, hi)

    def _focal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.r,):
            raise ValueError(f"covariate vector has shape {x.shape}, expected ({self.r},)")
        return x

    def _check_candidate(self, I: IndexSet):
        if I.r != self.r:
            raise ValueError(f"index set dimension {I.r} does not match dataset dimension {self.r}")

    def _g00(self, I: IndexSet, sl: slice) -> np.ndarray:
        p0 = I.positions
        g00 = self.moments.gn[sl][:, p0][:, :, p0]
        bad = np.flatnonzero(reciprocal_condition(g00) < self.rcond)
        if bad.size:
            raise SingularityError(float(self.times[sl][bad[0]]), I)
        return g00

    def evaluate(self, I: IndexSet, x, t1: float, t2: float) -> FicResult:
        """sqb-hat, var-hat and FIC over the window (t1, t2]."""
        self._check_candidate(I)
        x = self._focal(x)
        sl = self._window(t1, t2)
        p0, p1 = I.positions, I.complement_positions
        if sl.stop <= sl.start:
            return FicResult(I, 0.0, 0.0, 0.0, bias_estimate=0.0, bias_variance=0.0)

        g00 = self._g00(I, sl)
        k = g00.shape[0]
        w = np.linalg.solve(g00, np.broadcast_to(x[p0], (k, I.size))[..., None])[..., 0]
        j00 = self.jhat[sl][:, p0][:, :, p0]
        var_hat = float(np.sum(np.einsum("ki,kij,kj->k", w, j00, w)))

        if I.is_full:
            bias_estimate = 0.0
            bias_variance = 0.0
            sqb_hat = 0.0
        else:
            g10 = self.moments.gn[sl][:, p1][:, :, p0]
            b = np.einsum("kij,kj->ki", g10, w) - x[p1]
            bias_estimate = float(np.sum(np.einsum("ki,ki->k", b, self.ahat[sl][:, p1])))
            q11 = self.sandwich[sl][:, p1][:, :, p1]
            bias_variance = float(np.sum(np.einsum("ki,kij,kj->k", b, q11, b)))
            sqb_hat = self.n * bias_estimate ** 2 - bias_variance

        return FicResult(
            index_set=I,
            sqb_hat=sqb_hat,
            var_hat=var_hat,
            score=max(sqb_hat, 0.0) + var_hat,
            bias_estimate=bias_estimate,
            bias_variance=bias_variance,
        )

    def drift_target(self, I: IndexSet, t: float) -> np.ndarray:
        """B-hat_I(t) = sum_u G00^{-1} G01 dA-hat_II(u)."""
        self._check_candidate(I)
        sl = self._window(0.0, t)
        if I.is_full or sl.stop == 0:
            return np.zeros(I.size)
        p0, p1 = I.positions, I.complement_positions
        g00 = self._g00(I, sl)
        g01 = self.moments.gn[sl][:, p0][:, :, p1]
        rhs = np.einsum("kij,kj->ki", g01, self.ahat[sl][:, p1])
        return np.linalg.solve(g00, rhs[..., None])[..., 0].sum(axis=0)

    def empirical_wfic(self, I: IndexSet, t: float) -> FicResult:
        """
        wFIC with weights from the empirical covariate distribution at time t,
        via the trace form for w-var and the B-hat_I form for w-sqb.
        """
        self._check_candidate(I)
        sl = self._window(0.0, t)
        if sl.stop == 0:
            return FicResult(I, 0.0, 0.0, 0.0, bias_variance=0.0)
        p0, p1 = I.positions, I.complement_positions
        X = self.dataset.covariates[self.dataset.time_order]
        S = (X.T @ X) / self.n

        g00 = self._g00(I, sl)
        g00inv = np.linalg.inv(g00)
        j00 = self.jhat[sl][:, p0][:, :, p0]
        V = (g00inv @ j00 @ g00inv).sum(axis=0)
        w_var = float(np.sum(V * S[np.ix_(p0, p0)]))

        if I.is_full:
            w_sqb = 0.0
            second = 0.0
        else:
            B = self.drift_target(I, t)
            A_II = self.ahat[sl][:, p1].sum(axis=0)
            beta = X[:, p0] @ B - X[:, p1] @ A_II
            first = float(np.sum(beta ** 2))

            g10 = self.moments.gn[sl][:, p1][:, :, p0]
            H = g10 @ g00inv
            q = len(p1)
            M = np.concatenate([H, -np.broadcast_to(np.eye(q), (H.shape[0], q, q))], axis=2)
            q11 = self.sandwich[sl][:, p1][:, :, p1]
            P = np.swapaxes(M, 1, 2) @ q11 @ M
            perm = np.concatenate([p0, p1])
            second = float(np.sum(P * S[np.ix_(perm, perm)]))
            w_sqb = first - second

        return FicResult(
            index_set=I,
            sqb_hat=w_sqb,
            var_hat=w_var,
            score=max(w_sqb, 0.0) + w_var,
            bias_variance=second,
        )

    def point_wfic(self, I: IndexSet, weights: PointWeights) -> FicResult:
        w_sqb = 0.0
        w_var = 0.0
        w_bias_var = 0.0
        for j, point in enumerate(weights.points, start=1):
            try:
                res = self.evaluate(I, point.x, 0.0, point.t)
            except SingularityError as e:
                raise InfeasibleWeightError(j, point.x, point.t, e) from e
            w_sqb += point.w * res.sqb_hat
            w_var += point.w * res.var_hat
            w_bias_var += point.w * res.bias_variance
        return FicResult(
            index_set=I,
            sqb_hat=w_sqb,
            var_hat=w_var,
            score=max(w_sqb, 0.0) + w_var,
            bias_variance=w_bias_var,
        )

    def score(self, I: IndexSet, focal: Focus) -> FicResult:
        if isinstance(focal, PointFocus):
            return self.evaluate(I, focal.x, 0.0, focal.t)
        if isinstance(focal, IntervalFocus):
            return self.evaluate(I, focal.x, focal.t1, focal.t2)
        if isinstance(focal, PointWeights):
            return self.point_wfic(I, focal)
        if isinstance(focal, EmpiricalCovariates):
            return self.empirical_wfic(I, focal.t)
        raise TypeError(f"unsupported focus {focal!r}")

    def rank(self, candidates: Sequence[IndexSet], focal: Focus) -> FicReport:
        """Score every candidate; singular or infeasible ones are listed separately."""
        results = []
        for I in candidates:
            try:
                results.append(self.score(I, focal))
            except (SingularityError, InfeasibleWeightError) as e:
                results.append(FicResult.infeasible(I, str(e)))
        return rank_results(results, focal.describe())


def bias_function(d: Dataset, I: IndexSet, x, u: float, rcond: float = DEFAULT_RCOND) -> BiasFunctionSample:
    """b_{I,n}(u, x) = G_{n,10}(u) G_{n,00}(u)^{-1} x_I - x_II."""
    x = np.asarray(x, dtype=float)
    if x.shape != (d.r,):
        raise ValueError(f"covariate vector has shape {x.shape}, expected ({d.r},)")
    if I.is_full:
        return BiasFunctionSample(u, np.zeros(0))
    blocks = gn_blocks(d, I, u)
    if reciprocal_condition(blocks.g00) < rcond:
        raise SingularityError(u, I)
    values = blocks.g10 @ np.linalg.solve(blocks.g00, x[I.positions]) - x[I.complement_positions]
    return BiasFunctionSample(u, values)


def _moments_for(d: Dataset, ahat: StepEstimate) -> GridMoments:
    if not ahat.index_set.is_full or ahat.index_set.r != d.r:
        raise ValueError("dJ-hat needs the full-model estimate fitted on this dataset")
    moments = GridMoments(d, ahat.grid.times[-1] if len(ahat.grid) else None)
    if moments.grid.times[: len(ahat.grid)] != ahat.grid.times:
        raise ValueError("estimate grid does not match the dataset's event grid")
    return moments


def jhat_increments(d: Dataset, ahat: StepEstimate) -> MatrixIncrements:
    """dJ-hat(u) = n^{-1} sum_i Y_i(u) x_i x_i^t x_i^t dA-hat(u) at each grid time."""
    moments = _moments_for(d, ahat)
    return MatrixIncrements(ahat.grid, moments.jhat(ahat.increments))


def qhat_increments(
    d: Dataset,
    ahat: StepEstimate,
    I: IndexSet,
    rcond: float = DEFAULT_RCOND,
) -> MatrixIncrements:
    """dQ-hat(u) = II-block of G_n^{-1} dJ-hat G_n^{-1}."""
    moments = _moments_for(d, ahat)
    k = len(ahat.grid)
    p1 = I.complement_positions
    if k == 0:
        return MatrixIncrements(ahat.grid, np.zeros((0, len(p1), len(p1))))
    gn = moments.gn[:k]
    bad = np.flatnonzero(reciprocal_condition(gn) < rcond)
    if bad.size:
        raise SingularityError(ahat.grid.times[bad[0]], IndexSet.full(d.r))
    ginv = np.linalg.inv(gn)
    sandwich = ginv @ moments.jhat(ahat.increments) @ ginv
    return MatrixIncrements(ahat.grid, sandwich[:, p1][:, :, p1])


def sqb_hat(d: Dataset, I: IndexSet, x, t: float, rcond: float = DEFAULT_RCOND) -> float:
    """Bias-corrected squared-bias estimate (may be negative)."""
    return RiskContext(d, rcond).evaluate(I, x, 0.0, t).sqb_hat


def var_hat(d: Dataset, I: IndexSet, x, t: float, rcond: float = DEFAULT_RCOND) -> float:
    """Variance estimate x_I^t (sum G00^{-1} dJ-hat_00 G00^{-1}) x_I."""
    return RiskContext(d, rcond).evaluate(I, x, 0.0, t).var_hat


def fic_score(d: Dataset, I: IndexSet, x, t: float, rcond: float = DEFAULT_RCOND) -> FicResult:
    """FIC(I, x, t) = max(sqb-hat, 0) + var-hat."""
    return RiskContext(d, rcond).evaluate(I, x, 0.0, t)


def fic_interval(
    d: Dataset,
    I: IndexSet,
    x,
    t1: float,
    t2: float,
    rcond: float = DEFAULT_RCOND,
) -> FicResult:
    """FIC with every grid sum restricted to (t1, t2]."""
    return RiskContext(d, rcond).evaluate(I, x, t1, t2)


def gliding_window(
    d: Dataset,
    candidates: Sequence[IndexSet],
    x,
    centers: Sequence[float],
    delta: float,
    rcond: float = DEFAULT_RCOND,
) -> list[FicReport]:
    """One ranking per window (max(0, c - delta), c + delta]."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not centers:
        return []
    context = RiskContext(d, rcond)
    x = tuple(float(v) for v in x)
    return [
        context.rank(candidates, IntervalFocus(x, max(0.0, c - delta), c + delta))
        for c in centers
    ]


def wfic_score(d: Dataset, I: IndexSet, w: WeightSpec, rcond: float = DEFAULT_RCOND) -> FicResult:
    """
    wFIC(I) = max(w-sqb, 0) + w-var, truncating after weighting.

    Raises:
        InfeasibleWeightError: If a weight point cannot be scored for I.
    """
    context = RiskContext(d, rcond)
    if isinstance(w, EmpiricalCovariates):
        return context.empirical_wfic(I, w.t)
    return context.point_wfic(I, w)


def drift_target(d: Dataset, I: IndexSet, t: float, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """The drift term B-hat_I(t) that A-tilde_I estimates on top of A_I."""
    return RiskContext(d, rcond).drift_target(I, t)


def rank_models(
    d: Dataset,
    candidates: Sequence[IndexSet],
    focal: Focus,
    rcond: float = DEFAULT_RCOND,
) -> FicReport:
    """
    Rank candidate models by FIC (or wFIC for weight specifications).

    Raises:
        ValueError: If no candidates are given.
        AllCandidatesInfeasibleError: If no candidate can be scored.
    """
    if not candidates:
        raise ValueError("at least one candidate model is required")
    report = RiskContext(d, rcond).rank(candidates, focal)
    if report.winner is None:
        raise AllCandidatesInfeasibleError(report)
    return report


def enumerate_candidates(
    r: int,
    protected: Iterable[int] = (),
    max_r: int = 12,
) -> list[IndexSet]:
    """All nonempty subsets of {1..r} containing the protected covariates."""
    if r > max_r:
        raise ValueError(
            f"r = {r} exceeds {max_r}; pass an explicit candidate list instead of all subsets"
        )
    protected = sorted(set(int(j) for j in protected))
    if any(j < 1 or j > r for j in protected):
        raise ValueError(f"protected covariates {protected} outside 1..{r}")
    optional = [j for j in range(1, r + 1) if j not in protected]
    candidates = []
    for size in range(len(optional) + 1):
        for extra in itertools.combinations(optional, size):
            chosen = sorted(protected + list(extra))
            if chosen:
                candidates.append(IndexSet(tuple(chosen), r))
    return sorted(candidates, key=IndexSet.sort_key)
