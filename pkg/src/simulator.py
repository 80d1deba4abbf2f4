"""
Right-censored data from an additive-hazard truth h(u|x) = x^t alpha(u).

Each individual consumes one row of r + 2 uniforms from a Philox stream:
r for the covariates (by inversion), one unit-exponential deviate for the
event time and one for the censoring time. Rows are drawn in index order,
so a dataset of size n is a prefix of the dataset of size n + 1.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .aalen import DEFAULT_RCOND, IndexSet, SingularityError, cumulative_hazard, fit_submodel
from .data_model import Dataset
from .oracle import CensoringSpec, CovariateSpec, PiecewiseConstantRegressors
from .risk import PointFocus, RiskContext

MODES = ("marginal", "conditional")


class TooManySingularReplicationsError(RuntimeError):
    """Raised when too many replications hit a singular G_n block."""

    def __init__(self, singular: int, reps: int):
        self.singular = singular
        self.reps = reps
        super().__init__(
            f"{singular} of {reps} replications singular before the horizon; "
            "configuration is outside the estimator's regime"
        )


@dataclass(frozen=True, eq=False)
class SimConfig:
    """
    Simulation truth. Covariates come from a distribution spec or from an
    explicit (n, r) array; the explicit form is always held fixed.
    """
    n: int
    regressors: PiecewiseConstantRegressors
    censoring: CensoringSpec
    seed: int
    covariates: Optional[CovariateSpec] = None
    fixed_covariates: Optional[np.ndarray] = None
    mode: str = "marginal"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"sample size must be positive, got {self.n}")
        if (self.covariates is None) == (self.fixed_covariates is None):
            raise ValueError("give exactly one of a covariate distribution or explicit covariates")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.fixed_covariates is not None:
            fixed = np.asarray(self.fixed_covariates, dtype=float)
            if fixed.ndim != 2 or fixed.shape[0] != self.n:
                raise ValueError(f"explicit covariates must have {self.n} rows")
            if np.any(fixed < 0):
                raise ValueError("covariates must be nonnegative")
            object.__setattr__(self, "fixed_covariates", fixed)
        if self.regressors.r != self.r:
            raise ValueError(f"regressors have dimension {self.regressors.r}, covariates {self.r}")
        if self._finite_mass_possible() and self.censoring.kind != "administrative":
            raise ValueError(
                "total hazard can stay finite (some x^t alpha vanishes on the last segment); "
                "administrative censoring is required"
            )

    def _finite_mass_possible(self) -> bool:
        last = self.regressors.levels[-1]
        if self.fixed_covariates is not None:
            return bool(np.any(self.fixed_covariates @ last == 0))
        return bool(np.all(last == 0))

    @property
    def r(self) -> int:
        if self.covariates is not None:
            return self.covariates.r
        return self.fixed_covariates.shape[1]

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        try:
            cov = raw["covariates"]
            fixed = cov.get("values") if isinstance(cov, dict) else cov
            n = int(raw.get("n", len(fixed) if fixed is not None else 0))
            return cls(
                n=n,
                regressors=PiecewiseConstantRegressors.from_dict(raw),
                censoring=CensoringSpec.from_dict(raw.get("censoring")),
                seed=int(raw["seed"]),
                covariates=None if fixed is not None else CovariateSpec.from_dict(cov),
                fixed_covariates=None if fixed is None else np.asarray(fixed, dtype=float),
                mode=raw.get("mode", "marginal"),
            )
        except KeyError as e:
            raise ValueError(f"simulation config is missing {e}") from e

    @classmethod
    def load(cls, path) -> "SimConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        out = {"n": self.n, "seed": self.seed, "mode": self.mode}
        if self.covariates is not None:
            out["covariates"] = self.covariates.to_dict()
        else:
            out["covariates"] = {"values": self.fixed_covariates.tolist()}
        out.update(self.regressors.to_dict())
        out["censoring"] = self.censoring.to_dict()
        return out


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Mean and standard error of n (H-hat_I(t|x) - H(t|x))^2 over kept replications."""
    mean: float
    se: float
    used: int
    singular: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "used": self.used, "singular": self.singular}


@dataclass(frozen=True)
class SelectionCounts:
    """How often each candidate won the FIC ranking across replications."""
    wins: dict
    infeasible: int
    reps: int

    def frequency(self, I: IndexSet) -> float:
        return self.wins.get(I, 0) / self.reps


def invert_cumulative_hazard(x, regressors: PiecewiseConstantRegressors, e) -> np.ndarray | float:
    """
    Solve H(T|x) = e for T with H piecewise linear; infinite when e exceeds
    a finite total hazard mass. Accepts a single x and e, or arrays (n, r) and (n,).
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    E = np.atleast_1d(np.asarray(e, dtype=float))
    edges = regressors.edges
    rates = X @ regressors.levels.T
    widths = np.diff(edges)
    h_edges = np.concatenate(
        [np.zeros((len(X), 1)), np.cumsum(rates[:, :-1] * widths, axis=1)], axis=1
    )
    seg = np.sum(h_edges <= E[:, None], axis=1) - 1
    rows = np.arange(len(X))
    remaining = E - h_edges[rows, seg]
    rate = rates[rows, seg]
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(rate > 0, remaining / rate, np.where(remaining == 0, 0.0, np.inf))
    out = edges[seg] + step
    return float(out[0]) if np.ndim(e) == 0 and np.ndim(x) == 1 else out


def _stream(seed: int, replication: Optional[int]) -> np.random.Generator:
    if replication is None:
        seq = np.random.SeedSequence(seed)
    else:
        seq = np.random.SeedSequence(seed, spawn_key=(replication,))
    return np.random.Generator(np.random.Philox(seq))


def simulate_dataset(cfg: SimConfig, replication: Optional[int] = None) -> Dataset:
    """
    Draw one dataset. Replication k uses the sub-stream (seed, k); in
    conditional mode the covariates always come from the base stream.
    """
    r = cfg.r
    uniforms = _stream(cfg.seed, replication).random((cfg.n, r + 2))

    if cfg.fixed_covariates is not None:
        X = cfg.fixed_covariates
    elif cfg.mode == "conditional" and replication is not None:
        base = _stream(cfg.seed, None).random((cfg.n, r + 2))
        X = cfg.covariates.sample(base[:, :r])
    else:
        X = cfg.covariates.sample(uniforms[:, :r])

    deviates = -np.log1p(-uniforms[:, r])
    t0 = invert_cumulative_hazard(X, cfg.regressors, deviates)
    c = cfg.censoring.sample(uniforms[:, r + 1])
    times = np.minimum(t0, c)
    events = t0 < c
    return Dataset.from_arrays(times, events, X)


def _replication_loss(k: int, cfg: SimConfig, I: IndexSet, x: tuple, t: float, truth: float, rcond: float):
    d = simulate_dataset(cfg, replication=k)
    if t <= 0:
        return 0.0
    try:
        est = fit_submodel(d, I, tau=t, rcond=rcond)
    except SingularityError:
        return None
    return d.n * (cumulative_hazard(est, x, t) - truth) ** 2


def _run(func, reps: int, workers: int) -> list:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(func, range(reps), chunksize=max(1, reps // (4 * workers))))
    return [func(k) for k in range(reps)]


def replicate_mse(
    cfg: SimConfig,
    I: IndexSet,
    x: Sequence[float],
    t: float,
    reps: int,
    workers: int = 1,
    max_singular_fraction: float = 0.5,
    rcond: float = DEFAULT_RCOND,
    verbose: bool = False,
) -> MonteCarloEstimate:
    """
    Monte Carlo mean and SE of n (H-hat_I(t|x) - H(t|x))^2.

    Replications with a singular block before t are dropped and counted.

    Raises:
        TooManySingularReplicationsError: If more than max_singular_fraction
            of the replications are singular.
    """
    if reps < 2:
        raise ValueError("at least two replications are required")
    x = tuple(float(v) for v in x)
    if len(x) != cfg.r:
        raise ValueError(f"focal x has dimension {len(x)}, expected {cfg.r}")
    truth = float(np.asarray(x) @ cfg.regressors.cumulative(t))

    func = partial(_replication_loss, cfg=cfg, I=I, x=x, t=t, truth=truth, rcond=rcond)
    losses = _run(func, reps, workers)
    kept = np.array([v for v in losses if v is not None], dtype=float)
    singular = reps - kept.size
    if verbose:
        print(f"  {reps} replications, {singular} singular, n={cfg.n}, I={I.label}")
    if singular > max_singular_fraction * reps:
        raise TooManySingularReplicationsError(singular, reps)

    mean = float(np.mean(kept)) if kept.size else float("nan")
    se = float(np.std(kept, ddof=1) / np.sqrt(kept.size)) if kept.size > 1 else float("nan")
    return MonteCarloEstimate(mean=mean, se=se, used=int(kept.size), singular=int(singular))


def _replication_winner(k: int, cfg: SimConfig, candidates: tuple, x: tuple, t: float, rcond: float):
    d = simulate_dataset(cfg, replication=k)
    report = RiskContext(d, rcond).rank(candidates, PointFocus(x, t))
    return report.winner


def selection_frequencies(
    cfg: SimConfig,
    candidates: Sequence[IndexSet],
    x: Sequence[float],
    t: float,
    reps: int,
    workers: int = 1,
    rcond: float = DEFAULT_RCOND,
    verbose: bool = False,
) -> SelectionCounts:
    """Count FIC winners over replications; ties follow the ranking tie-break."""
    if not candidates:
        raise ValueError("at least one candidate model is required")
    func = partial(
        _replication_winner,
        cfg=cfg,
        candidates=tuple(candidates),
        x=tuple(float(v) for v in x),
        t=t,
        rcond=rcond,
    )
    winners = _run(func, reps, workers)
    wins = {I: 0 for I in candidates}
    infeasible = 0
    for winner in winners:
        if winner is None:
            infeasible += 1
        else:
            wins[winner] += 1
    if verbose:
        summary = ", ".join(f"{I.label}: {c}" for I, c in wins.items())
        print(f"  n={cfg.n}: {summary}, infeasible: {infeasible}")
    return SelectionCounts(wins=wins, infeasible=infeasible, reps=reps)
