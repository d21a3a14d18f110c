"""Hyperparameter search: temporal-block cross-validation plus a Gaussian-
process surrogate maximizing expected improvement.

The first trials are random exploration; after that, each iteration fits an
RBF-kernel GP over the normalized parameter box (log dimensions flattened,
integer dimensions relaxed) and evaluates the candidate with the best
expected improvement among a fixed number of random candidates. Everything
is deterministic per seed: trial i draws from random.Random derived from
(seed, i), so interrupted runs resume identically.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import gbt, metrics
from .errors import ConfigError, DataError


class InfeasibleFolds(DataError):
    """Cross-validation folds cannot all contain both classes."""


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float
    integer: bool = False
    log: bool = False

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigError(f"{self.name}: lower bound exceeds upper bound")
        if self.log and self.lower <= 0:
            raise ConfigError(f"{self.name}: log scale needs positive bounds")

    def sample(self, rng: random.Random):
        if self.integer:
            return rng.randint(int(self.lower), int(self.upper))
        if self.log:
            return math.exp(rng.uniform(math.log(self.lower), math.log(self.upper)))
        return rng.uniform(self.lower, self.upper)

    def normalize(self, x) -> float:
        lo, hi = self.lower, self.upper
        if self.log:
            lo, hi, x = math.log(lo), math.log(hi), math.log(x)
        if hi == lo:
            return 0.5
        return (x - lo) / (hi - lo)

    def clip(self, x):
        x = min(max(x, self.lower), self.upper)
        if self.integer:
            x = int(min(max(round(x), self.lower), self.upper))
        return x


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...]

    @staticmethod
    def default() -> "SearchSpace":
        return SearchSpace(
            dims=(
                Dim("n_estimators", 5, 30, integer=True),
                Dim("max_depth", 2, 12, integer=True),
                Dim("learning_rate", 0.003, 0.1, log=True),
                Dim("colsample_bytree", 0.5, 1.0),
            )
        )

    def sample(self, rng: random.Random) -> dict:
        return {d.name: d.sample(rng) for d in self.dims}

    def normalize(self, params: dict) -> np.ndarray:
        return np.array([d.normalize(params[d.name]) for d in self.dims])

    def contains(self, params: dict) -> bool:
        return all(d.lower <= params[d.name] <= d.upper for d in self.dims)


@dataclass(frozen=True)
class TrialRecord:
    index: int
    params: dict
    fold_scores: tuple[float, ...]
    mean_score: float
    wall_time: float

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "trial_index": self.index,
                "params": self.params,
                "fold_scores": list(self.fold_scores),
                "mean": self.mean_score,
                "wall_time": self.wall_time,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json_line(line: str) -> "TrialRecord":
        doc = json.loads(line)
        return TrialRecord(
            index=int(doc["trial_index"]),
            params=dict(doc["params"]),
            fold_scores=tuple(float(x) for x in doc["fold_scores"]),
            mean_score=float(doc["mean"]),
            wall_time=float(doc.get("wall_time", 0.0)),
        )


def _resolve_objective(objective) -> Callable:
    if callable(objective):
        return objective
    table = {"minority_f1": metrics.minority_f1, "accuracy": metrics.accuracy}
    try:
        return table[objective]
    except KeyError:
        raise ConfigError(f"unknown objective {objective!r}; pick from {sorted(table)}")


def _fold_bounds(n: int, k: int) -> list[tuple[int, int]]:
    cuts = [round(i * n / k) for i in range(k + 1)]
    return [(cuts[i], cuts[i + 1]) for i in range(k)]


def run_cv(
    X,
    y,
    params: dict,
    k: int = 3,
    objective: Union[str, Callable] = "minority_f1",
    seed: int = 0,
    shuffled: bool = False,
    holdout_fraction: float = 0.25,
    base_config: Optional[gbt.TrainConfig] = None,
    index: int = 0,
) -> TrialRecord:
    """Score one parameter set by k-fold cross-validation.

    Rows are assumed time-ordered; folds are contiguous temporal blocks
    unless `shuffled` asks for randomized blocks. k=1 degenerates to a
    single temporal holdout of the trailing `holdout_fraction` rows.
    Raises InfeasibleFolds when any fold (or its training complement)
    would see a single class.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = len(X)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if n < k * 10:
        raise InfeasibleFolds(f"{n} rows cannot support {k} folds (need {k * 10})")
    score_fn = _resolve_objective(objective)
    cfg = base_config or gbt.TrainConfig()
    cfg = replace(cfg, **params, seed=seed)

    if k == 1:
        bounds = [(round(n * (1.0 - holdout_fraction)), n)]
    else:
        bounds = _fold_bounds(n, k)

    def feasible(order: np.ndarray) -> bool:
        for lo, hi in bounds:
            val = order[lo:hi]
            rest = np.concatenate([order[: lo], order[hi:]])
            if len(set(y[val].tolist())) < 2 or len(set(y[rest].tolist())) < 2:
                return False
        return True

    order = np.arange(n)
    if shuffled:
        rng = random.Random(seed)
        for _ in range(20):
            perm = list(range(n))
            rng.shuffle(perm)
            order = np.array(perm)
            if feasible(order):
                break
        else:
            raise InfeasibleFolds("no shuffled fold assignment had both classes everywhere")
    elif not feasible(order):
        raise InfeasibleFolds("a temporal fold contains a single class")

    started = time.perf_counter()
    fold_scores = []
    for lo, hi in bounds:
        val = order[lo:hi]
        rest = np.concatenate([order[:lo], order[hi:]])
        model = gbt.train(X[rest], y[rest], cfg)
        preds = gbt.predict(model, X[val])
        fold_scores.append(float(score_fn(y[val], preds)))
    wall = time.perf_counter() - started
    return TrialRecord(
        index=index,
        params=dict(params),
        fold_scores=tuple(fold_scores),
        mean_score=float(np.mean(fold_scores)),
        wall_time=wall,
    )


# ---------------------------------------------------------------------------
# Gaussian-process surrogate


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = (A * A).sum(axis=1)[:, None]
    bb = (B * B).sum(axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * A @ B.T, 0.0)


class _Surrogate:
    """GP regression with a fixed RBF kernel over the unit box."""

    def __init__(self, length_scale: float = 0.25, noise: float = 1e-4):
        self.length_scale = length_scale
        self.noise = noise

    def fit(self, Z: np.ndarray, y: np.ndarray) -> "_Surrogate":
        self.Z = Z
        self.y_mean = float(y.mean())
        self.y_std = float(y.std())
        if self.y_std < 1e-12:
            self.y_std = 1.0
        yn = (y - self.y_mean) / self.y_std
        K = np.exp(-_sqdist(Z, Z) / (2.0 * self.length_scale**2))
        jitter = self.noise
        for _ in range(8):
            try:
                self.L = np.linalg.cholesky(K + jitter * np.eye(len(Z)))
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
        else:
            raise ConfigError("surrogate covariance is not positive definite")
        self.alpha = np.linalg.solve(self.L.T, np.linalg.solve(self.L, yn))
        return self

    def predict(self, Zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Ks = np.exp(-_sqdist(Zs, self.Z) / (2.0 * self.length_scale**2))
        mu = Ks @ self.alpha * self.y_std + self.y_mean
        v = np.linalg.solve(self.L, Ks.T)
        var = np.maximum(1.0 + self.noise - (v * v).sum(axis=0), 1e-12)
        return mu, np.sqrt(var) * self.y_std


def _normal_cdf(z: np.ndarray) -> np.ndarray:
    return np.array([0.5 * (1.0 + math.erf(x / math.sqrt(2.0))) for x in z])


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float, xi: float = 0.01):
    sigma = np.maximum(sigma, 1e-12)
    z = (mu - best - xi) / sigma
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return (mu - best - xi) * _normal_cdf(z) + sigma * pdf


@dataclass(frozen=True)
class OptimizeResult:
    best_params: dict
    best_score: float
    best_index: int
    history: tuple[TrialRecord, ...]


def _trial_rng(seed: int, index: int) -> random.Random:
    return random.Random(seed * 1_000_003 + index)


def optimize(
    evaluate: Callable[[dict, int], TrialRecord],
    space: SearchSpace,
    iterations: int = 50,
    seed: int = 0,
    n_initial: int = 10,
    n_candidates: int = 1024,
    history_path: Optional[Union[str, Path]] = None,
    resume: bool = False,
) -> OptimizeResult:
    """Maximize `evaluate` over the space.

    `evaluate(params, trial_index)` returns a TrialRecord (use `make_trial`
    to wrap a plain objective). The first n_initial trials are random;
    later ones pick the best expected improvement among n_candidates random
    candidates under the GP surrogate. Best = highest mean score, ties
    resolved toward the earlier trial.
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    history: list[TrialRecord] = []
    if resume and history_path and Path(history_path).exists():
        with open(history_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    history.append(TrialRecord.from_json_line(line))
    sink = None
    if history_path:
        Path(history_path).parent.mkdir(parents=True, exist_ok=True)
        sink = open(history_path, "a" if resume else "w")
    try:
        for i in range(len(history), iterations):
            rng = _trial_rng(seed, i)
            if i < n_initial or len(history) < 2:
                params = space.sample(rng)
            else:
                Z = np.stack([space.normalize(t.params) for t in history])
                scores = np.array([t.mean_score for t in history])
                surrogate = _Surrogate().fit(Z, scores)
                cands = [space.sample(rng) for _ in range(n_candidates)]
                Zc = np.stack([space.normalize(p) for p in cands])
                mu, sigma = surrogate.predict(Zc)
                ei = expected_improvement(mu, sigma, float(scores.max()))
                params = cands[int(np.argmax(ei))]
            record = evaluate(params, i)
            history.append(record)
            if sink:
                sink.write(record.to_json_line() + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    best = history[0]
    for t in history[1:]:
        if t.mean_score > best.mean_score:
            best = t
    return OptimizeResult(
        best_params=dict(best.params),
        best_score=best.mean_score,
        best_index=best.index,
        history=tuple(history),
    )


def make_trial(objective: Callable[[dict], float]) -> Callable[[dict, int], TrialRecord]:
    """Adapt a plain params->score function into the evaluate interface."""

    def evaluate(params: dict, index: int) -> TrialRecord:
        started = time.perf_counter()
        score = float(objective(params))
        return TrialRecord(
            index=index,
            params=dict(params),
            fold_scores=(score,),
            mean_score=score,
            wall_time=time.perf_counter() - started,
        )

    return evaluate


def tune_cv(
    X,
    y,
    space: Optional[SearchSpace] = None,
    iterations: int = 50,
    k: int = 3,
    seed: int = 0,
    objective: Union[str, Callable] = "minority_f1",
    shuffled: bool = False,
    base_config: Optional[gbt.TrainConfig] = None,
    history_path: Optional[Union[str, Path]] = None,
    resume: bool = False,
) -> OptimizeResult:
    """Cross-validated Bayesian search over the GBT configuration space."""
    space = space or SearchSpace.default()

    def evaluate(params: dict, index: int) -> TrialRecord:
        return run_cv(
            X,
            y,
            params,
            k=k,
            objective=objective,
            seed=seed,
            shuffled=shuffled,
            base_config=base_config,
            index=index,
        )

    return optimize(
        evaluate,
        space,
        iterations=iterations,
        seed=seed,
        history_path=history_path,
        resume=resume,
    )
