"""
Dataset Pipelines for Interpretable Bandit Bench
CSV ingestion, ridge ground truth and low-rank ratings factorization
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from envs import EnvKind, Environment
from errors import DatasetError, InputError, InvariantViolation, RankDeficiencyError

logger = logging.getLogger(__name__)


@dataclass
class FeatureDataset:
    """Feature rows scaled to unit max norm, plus regression targets"""

    rows: np.ndarray
    targets: np.ndarray
    feature_names: List[str] = field(default_factory=list)
    target_name: str = ""
    # rows = raw_rows / scale
    scale: float = 1.0

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] != self.targets.shape[0]:
            raise InputError("rows and targets disagree in length")
        if not (np.all(np.isfinite(self.rows)) and np.all(np.isfinite(self.targets))):
            raise InputError("dataset contains non-finite values")

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])


@dataclass
class RatingsMatrix:
    """(user, item, rating) triplets with densely re-indexed ids"""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    n_users: int
    n_items: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.ratings)):
            raise InputError("ratings must be finite")

    @classmethod
    def from_triplets(cls, users, items, ratings) -> "RatingsMatrix":
        """Re-index arbitrary ids to 0..U-1 and 0..I-1 in sorted order"""
        user_codes, user_ids = pd.factorize(pd.Series(users), sort=True)
        item_codes, item_ids = pd.factorize(pd.Series(items), sort=True)
        return cls(
            users=np.asarray(user_codes, dtype=int),
            items=np.asarray(item_codes, dtype=int),
            ratings=np.asarray(ratings, dtype=float),
            n_users=len(user_ids),
            n_items=len(item_ids),
        )

    def __len__(self) -> int:
        return int(self.ratings.shape[0])


def _read_csv(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DatasetError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DatasetError(f"empty file: {path}")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DatasetError(f"cannot parse {path}: {e}")
    if frame.empty:
        raise DatasetError(f"no data rows in {path}")
    return frame


def _numeric(frame: pd.DataFrame, columns: List[str]) -> np.ndarray:
    """Convert columns to floats, reporting the first bad cell (1-based file row)"""
    values = np.empty((len(frame), len(columns)))
    for j, column in enumerate(columns):
        raw = frame[column]
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = parsed.isna() | ~np.isfinite(parsed.fillna(0.0).to_numpy(dtype=float))
        if bad.any():
            position = int(np.flatnonzero(bad.to_numpy())[0])
            # header is file row 1
            raise DatasetError(f"non-numeric value {raw.iloc[position]!r}", row=position + 2, column=column)
        values[:, j] = parsed.to_numpy(dtype=float)
    return values


def load_feature_csv(path: str, target_column: str) -> FeatureDataset:
    """Headered numeric CSV; features scaled so the largest row norm is 1"""
    frame = _read_csv(path)
    if target_column not in frame.columns:
        raise DatasetError(f"target column missing from {path}", column=target_column)

    feature_names = [c for c in frame.columns if c != target_column]
    if not feature_names:
        raise DatasetError(f"no feature columns in {path}")

    rows = _numeric(frame, feature_names)
    targets = _numeric(frame, [target_column])[:, 0]

    max_norm = float(np.max(np.linalg.norm(rows, axis=1)))
    scale = max_norm if max_norm > 0 else 1.0
    logger.info("Loaded %s: %d rows, %d features, scale %.4g", path, rows.shape[0], rows.shape[1], scale)

    return FeatureDataset(
        rows=rows / scale,
        targets=targets,
        feature_names=feature_names,
        target_name=target_column,
        scale=scale,
    )


def load_ratings_csv(path: str) -> RatingsMatrix:
    """CSV with columns user_id,item_id,rating"""
    frame = _read_csv(path)
    for column in ("user_id", "item_id", "rating"):
        if column not in frame.columns:
            raise DatasetError(f"ratings column missing from {path}", column=column)
    ratings = _numeric(frame, ["rating"])[:, 0]
    return RatingsMatrix.from_triplets(frame["user_id"].str.strip(), frame["item_id"].str.strip(), ratings)


def fit_theta_from_dataset(ds: FeatureDataset, lam_fit: float) -> np.ndarray:
    """Ridge solution (X^T X + lam I)^-1 X^T y on the full dataset"""
    if lam_fit < 0:
        raise InputError(f"lam_fit must be non-negative, got {lam_fit}")
    X, y = ds.rows, ds.targets
    gram = X.T @ X + lam_fit * np.eye(ds.dim)
    if lam_fit == 0:
        rank = np.linalg.matrix_rank(X)
        if rank < ds.dim:
            raise RankDeficiencyError(f"features have rank {rank} < {ds.dim} and lam_fit = 0")
    try:
        return scipy.linalg.solve(gram, X.T @ y, assume_a="pos")
    except (np.linalg.LinAlgError, ValueError):
        logger.exception("Ridge fit failed")
        raise RankDeficiencyError("normal equations are singular")


def residual_sigma(ds: FeatureDataset, theta: np.ndarray) -> float:
    """Standard deviation of the fit residuals"""
    residuals = ds.targets - ds.rows @ theta
    dof = max(ds.targets.shape[0] - ds.dim, 1)
    return float(np.sqrt(np.sum(residuals ** 2) / dof))


def _als_objective(ratings: RatingsMatrix, U: np.ndarray, V: np.ndarray, lam: float) -> float:
    predictions = np.einsum("ij,ij->i", U[ratings.users], V[ratings.items])
    error = np.sum((ratings.ratings - predictions) ** 2)
    return float(error + lam * (np.sum(U ** 2) + np.sum(V ** 2)))


def _solve_side(indices: np.ndarray, others: np.ndarray, other_factors: np.ndarray,
                ratings: np.ndarray, count: int, lam: float) -> np.ndarray:
    """Ridge solve for every row of one side given the other side's factors"""
    rank = other_factors.shape[1]
    solved = np.zeros((count, rank))
    order = np.argsort(indices, kind="stable")
    boundaries = np.searchsorted(indices[order], np.arange(count + 1))
    for row in range(count):
        observed = order[boundaries[row]:boundaries[row + 1]]
        Q = other_factors[others[observed]]
        gram = Q.T @ Q + lam * np.eye(rank)
        solved[row] = np.linalg.solve(gram, Q.T @ ratings[observed])
    return solved


def rmse(ratings: RatingsMatrix, U: np.ndarray, V: np.ndarray) -> float:
    """Root mean squared error on the observed entries"""
    predictions = np.einsum("ij,ij->i", U[ratings.users], V[ratings.items])
    return float(np.sqrt(np.mean((ratings.ratings - predictions) ** 2)))


def als_factorize(
    ratings: RatingsMatrix,
    r: int,
    iters: int,
    lam_als: float,
    rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Alternating ridge solves on the observed entries.
    Each half-sweep minimises the regularised objective exactly, so it never increases.
    """
    if len(ratings) == 0:
        raise InputError("no ratings to factorize")
    if r < 1:
        raise InputError(f"rank must be at least 1, got {r}")
    if lam_als < 0:
        raise InputError(f"lam_als must be non-negative, got {lam_als}")
    if np.unique(ratings.users).size < ratings.n_users or np.unique(ratings.items).size < ratings.n_items:
        raise InputError("every user and item needs at least one rating")

    scale = 1.0 / np.sqrt(r)
    U = rng.normal(0.0, scale, size=(ratings.n_users, r))
    V = rng.normal(0.0, scale, size=(ratings.n_items, r))
    # tiny floor keeps the normal equations solvable when lam_als = 0
    ridge = max(lam_als, 1e-12)

    previous = _als_objective(ratings, U, V, ridge)
    for sweep in range(iters):
        U = _solve_side(ratings.users, ratings.items, V, ratings.ratings, ratings.n_users, ridge)
        current = _als_objective(ratings, U, V, ridge)
        _check_descent(previous, current, sweep, "users")
        previous = current

        V = _solve_side(ratings.items, ratings.users, U, ratings.ratings, ratings.n_items, ridge)
        current = _als_objective(ratings, U, V, ridge)
        _check_descent(previous, current, sweep, "items")
        previous = current

    logger.info("ALS rank %d after %d sweeps: RMSE %.4f", r, iters, rmse(ratings, U, V))
    return U, V


def _check_descent(previous: float, current: float, sweep: int, side: str):
    if current > previous + 1e-9 * max(1.0, abs(previous)):
        raise InvariantViolation(
            f"ALS objective increased on sweep {sweep} ({side}): {previous:.12g} -> {current:.12g}"
        )


def dataset_to_env(
    vectors: np.ndarray,
    theta_star: np.ndarray,
    K: Optional[int],
    sigma: float,
    rng: np.random.Generator
) -> Environment:
    """Fixed-action linear environment over K sampled vectors (all when K is None)"""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    available = vectors.shape[0]
    if K is None or K == available:
        pool = vectors.copy()
    else:
        if K > available:
            raise InputError(f"asked for {K} actions but only {available} vectors exist")
        if K < 1:
            raise InputError(f"need at least one action, got {K}")
        pool = vectors[rng.choice(available, size=K, replace=False)]
    if sigma < 0:
        raise InputError(f"noise scale must be non-negative, got {sigma}")

    norms = np.linalg.norm(pool, axis=1)
    return Environment(
        kind=EnvKind.LINEAR_FIXED,
        theta_star=np.asarray(theta_star, dtype=float).copy(),
        sigma=float(sigma),
        L=float(np.max(norms)) if norms.size else 0.0,
        n_actions=pool.shape[0],
        action_pool=pool,
    )
