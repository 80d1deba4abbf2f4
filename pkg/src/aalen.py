"""
Aalen estimators for the linear hazard regression model.

Computes G_n(u) = n^{-1} sum_i Y_i(u) x_i x_i^t, the full-model estimator
A-hat, submodel estimators A-tilde_I, and the derived cumulative hazard and
product-integral survival predictions. Estimates are stored as increments at
event-grid times, so every integral against dA-hat is a finite sum.
"""

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .data_model import Dataset, EventGrid, at_risk, event_grid

# Reject a block when its reciprocal condition number falls below this.
DEFAULT_RCOND = 1e-12


class SingularityError(ArithmeticError):
    """Raised when a G_n block is not invertible at some grid time."""

    def __init__(self, time: float, index_set: Optional["IndexSet"] = None):
        self.time = time
        self.index_set = index_set
        label = f" for I = {index_set.label}" if index_set is not None else ""
        super().__init__(
            f"G_n block singular at time {time:g}{label}: "
            "fewer linearly independent covariate vectors remain at risk than required"
        )


@dataclass(frozen=True)
class IndexSet:
    """A nonempty subset I of {1..r} of retained covariates (1-based)."""
    indices: tuple[int, ...]
    r: int

    def __post_init__(self):
        if self.r < 1:
            raise ValueError(f"covariate dimension must be positive, got {self.r}")
        if len(self.indices) == 0:
            raise ValueError("index set must be nonempty")
        if any(j < 1 or j > self.r for j in self.indices):
            raise ValueError(f"indices {self.indices} outside 1..{self.r}")
        if any(a >= b for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError(f"indices {self.indices} must be strictly increasing without duplicates")

    @classmethod
    def of(cls, indices: Iterable[int], r: int) -> "IndexSet":
        values = [int(j) for j in indices]
        if len(set(values)) != len(values):
            raise ValueError(f"duplicate indices in {values}")
        return cls(tuple(sorted(values)), r)

    @classmethod
    def full(cls, r: int) -> "IndexSet":
        return cls(tuple(range(1, r + 1)), r)

    @classmethod
    def parse(cls, text: str, r: int) -> "IndexSet":
        """Parse comma-separated 1-based indices, or 'full'."""
        text = text.strip()
        if text.lower() == "full":
            return cls.full(r)
        try:
            values = [int(part) for part in text.split(",") if part.strip()]
        except ValueError as e:
            raise ValueError(f"invalid index set '{text}': {e}") from e
        return cls.of(values, r)

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def is_full(self) -> bool:
        return self.size == self.r

    @property
    def complement(self) -> tuple[int, ...]:
        kept = set(self.indices)
        return tuple(j for j in range(1, self.r + 1) if j not in kept)

    @property
    def positions(self) -> np.ndarray:
        return np.array(self.indices, dtype=int) - 1

    @property
    def complement_positions(self) -> np.ndarray:
        return np.array(self.complement, dtype=int) - 1

    @property
    def label(self) -> str:
        return "{" + ",".join(str(j) for j in self.indices) + "}"

    def sort_key(self) -> tuple:
        return (self.size, self.indices)


@dataclass(frozen=True, eq=False)
class GnBlocks:
    """G_n(u) and its (I, II) partition."""
    full: np.ndarray
    g00: np.ndarray
    g01: np.ndarray
    g10: np.ndarray
    g11: np.ndarray


@dataclass(frozen=True, eq=False)
class StepEstimate:
    """Right-continuous step function given by increment vectors at grid times."""
    grid: EventGrid
    increments: np.ndarray
    index_set: IndexSet

    def _upto(self, t: float) -> int:
        return int(np.searchsorted(self.grid.as_array(), t, side="right"))

    def cumulative(self, t: float) -> np.ndarray:
        """Sum of increments at grid times <= t (zero vector before the first jump)."""
        return self.increments[: self._upto(t)].sum(axis=0)

    def window(self, t1: float, t2: float) -> np.ndarray:
        """Increments at grid times in (t1, t2]."""
        return self.increments[self._upto(t1): self._upto(t2)]

    def to_dict(self) -> dict:
        return {
            "index_set": list(self.index_set.indices),
            "grid": list(self.grid.times),
            "increments": self.increments.tolist(),
        }


@dataclass(frozen=True)
class SurvivalPrediction:
    """Product-integral survival value with a flag for factors outside (0, 1]."""
    value: float
    factors_in_range: bool


def reciprocal_condition(mats: np.ndarray) -> np.ndarray:
    """Smallest over largest singular value for each matrix in a stack."""
    if mats.size == 0:
        return np.ones(mats.shape[:-2])
    s = np.linalg.svd(mats, compute_uv=False)
    largest = s[..., 0]
    return np.divide(s[..., -1], largest, out=np.zeros_like(largest), where=largest > 0)


class GridMoments:
    """
    Risk-set moments over an event grid.

    Records are taken in the dataset's canonical time order; suffix sums
    over that order give the at-risk sums, so summation order does not
    depend on how the records were listed.
    """

    def __init__(self, d: Dataset, tau: Optional[float] = None):
        self.dataset = d
        self.n = d.n
        self.r = d.r
        self.grid = event_grid(d, tau)
        grid_times = self.grid.as_array()

        order = d.time_order
        self._sorted_times = d.times[order]
        self._sorted_x = d.covariates[order]
        self._start = np.searchsorted(self._sorted_times, grid_times, side="left")

        outer = self._sorted_x[:, :, None] * self._sorted_x[:, None, :]
        self._outer = outer
        self.gn = _suffix_sums(outer)[self._start] / self.n

        self.dn_x = np.zeros((len(self.grid), self.r))
        observed = d.events[order] & (self._sorted_times > 0) & (
            self._sorted_times <= (grid_times[-1] if len(self.grid) else -1.0)
        )
        slots = np.searchsorted(grid_times, self._sorted_times[observed])
        np.add.at(self.dn_x, slots, self._sorted_x[observed])
        self.dn_x /= self.n

    def block(self, rows: np.ndarray, cols: Optional[np.ndarray] = None) -> np.ndarray:
        cols = rows if cols is None else cols
        return self.gn[:, rows][:, :, cols]

    def first_singular(self, positions: np.ndarray, rcond: float = DEFAULT_RCOND) -> Optional[int]:
        """Index of the first grid time where the block is singular, if any."""
        if len(self.grid) == 0:
            return None
        bad = np.flatnonzero(reciprocal_condition(self.block(positions)) < rcond)
        return int(bad[0]) if bad.size else None

    def jhat(self, ahat_increments: np.ndarray) -> np.ndarray:
        """
        dJ-hat(u) = n^{-1} sum_i Y_i(u) x_i x_i^t (x_i^t dA-hat(u)) for the
        leading grid times covered by the given increments.
        """
        k = ahat_increments.shape[0]
        start = self._start[:k]
        out = np.zeros((k, self.r, self.r))
        for l in range(self.r):
            weighted = self._outer * self._sorted_x[:, l, None, None]
            out += ahat_increments[:, l, None, None] * (_suffix_sums(weighted)[start] / self.n)
        return out


def _suffix_sums(values: np.ndarray) -> np.ndarray:
    """S[j] = sum of values[j:], padded with a zero row at index len(values)."""
    padded = np.concatenate([values, np.zeros((1,) + values.shape[1:])], axis=0)
    return np.cumsum(padded[::-1], axis=0)[::-1]


def gn_at(d: Dataset, u: float) -> np.ndarray:
    """G_n(u) = n^{-1} sum_i Y_i(u) x_i x_i^t."""
    y = at_risk(d, u)
    x = d.covariates[y]
    return (x.T @ x) / d.n


def gn_blocks(d: Dataset, I: IndexSet, u: float) -> GnBlocks:
    """Partition G_n(u) into blocks under (I, II)."""
    g = gn_at(d, u)
    p0, p1 = I.positions, I.complement_positions
    return GnBlocks(
        full=g,
        g00=g[np.ix_(p0, p0)],
        g01=g[np.ix_(p0, p1)],
        g10=g[np.ix_(p1, p0)],
        g11=g[np.ix_(p1, p1)],
    )


def fit_moments(
    moments: GridMoments,
    I: IndexSet,
    rcond: float = DEFAULT_RCOND,
) -> StepEstimate:
    """Aalen increments G_{n,00}(u)^{-1} n^{-1} sum_i x_{i,I} dN_i(u) on a prepared grid."""
    pos = I.positions
    bad = moments.first_singular(pos, rcond)
    if bad is not None:
        raise SingularityError(moments.grid.times[bad], I)
    if len(moments.grid) == 0:
        increments = np.zeros((0, I.size))
    else:
        increments = np.linalg.solve(moments.block(pos), moments.dn_x[:, pos][..., None])[..., 0]
    return StepEstimate(moments.grid, increments, I)


def fit_full(d: Dataset, tau: Optional[float] = None, rcond: float = DEFAULT_RCOND) -> StepEstimate:
    """
    Full-model Aalen estimator A-hat on (0, tau].

    Raises:
        SingularityError: If G_n is singular at some grid time <= tau.
    """
    return fit_moments(GridMoments(d, tau), IndexSet.full(d.r), rcond)


def fit_submodel(
    d: Dataset,
    I: IndexSet,
    tau: Optional[float] = None,
    rcond: float = DEFAULT_RCOND,
) -> StepEstimate:
    """Submodel Aalen estimator A-tilde_I using only the covariates in I."""
    if I.r != d.r:
        raise ValueError(f"index set dimension {I.r} does not match dataset dimension {d.r}")
    return fit_moments(GridMoments(d, tau), I, rcond)


def _focal(est: StepEstimate, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (est.index_set.r,):
        raise ValueError(
            f"covariate vector has shape {x.shape}, expected ({est.index_set.r},)"
        )
    return x[est.index_set.positions]


def cumulative_hazard(est: StepEstimate, x, t: float) -> float:
    """H(t|x) = x_I^t A_I(t) for the estimate's index set."""
    return float(_focal(est, x) @ est.cumulative(t))


def _product(factors: np.ndarray) -> SurvivalPrediction:
    in_range = bool(np.all((factors > 0) & (factors <= 1)))
    return SurvivalPrediction(float(np.prod(factors)), in_range)


def survival_estimate(est: StepEstimate, x, t: float) -> SurvivalPrediction:
    """Product integral of (1 - x^t dA(u)) over grid times u <= t."""
    xi = _focal(est, x)
    return _product(1.0 - est.window(-np.inf, t) @ xi)


def conditional_survival(est: StepEstimate, x, t1: float, t2: float) -> SurvivalPrediction:
    """Estimate of Pr{T0 >= t2 | T0 >= t1, x}: product over grid times in (t1, t2]."""
    if t2 < t1:
        raise ValueError(f"interval end {t2} precedes start {t1}")
    xi = _focal(est, x)
    return _product(1.0 - est.window(t1, t2) @ xi)


def invertibility_horizon(
    d: Dataset,
    I: Optional[IndexSet] = None,
    rcond: float = DEFAULT_RCOND,
) -> float:
    """Largest grid time up to which the relevant G_n block stays invertible; 0 if none."""
    I = IndexSet.full(d.r) if I is None else I
    moments = GridMoments(d)
    if len(moments.grid) == 0:
        return 0.0
    bad = moments.first_singular(I.positions, rcond)
    if bad is None:
        return moments.grid.times[-1]
    return moments.grid.times[bad - 1] if bad > 0 else 0.0
