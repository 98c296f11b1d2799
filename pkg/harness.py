"""
Experiment Harness for Interpretable Bandit Bench
Config parsing, seeded parallel runs and aggregation into results tables
"""

import asyncio
import dataclasses
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from config import Config
from data import (
    als_factorize,
    dataset_to_env,
    fit_theta_from_dataset,
    load_feature_csv,
    load_ratings_csv,
    residual_sigma,
)
from envs import EnvKind, Environment, gap_means, gen_k_armed, gen_synthetic_linear, next_round, sample_reward
from errors import ConfigError, InvariantViolation
from linalg import ellipsoid_contains, elliptical_potential_bound
from metrics import KArmedLemmaMonitor, MetricsAccumulator, instant_regret, model_uncertainty
from policies import (
    CodeKArmedPolicy,
    LinearPolicy,
    PolicyConfig,
    build_policy,
    check_compatible,
)

logger = logging.getLogger(__name__)

RAW_COLUMNS = ["algorithm", "run", "round", "regret_cum", "q_cum"]
AGGREGATE_COLUMNS = ["algorithm", "round", "regret_mean", "regret_se", "q_mean", "q_se"]

ENV_KINDS = ("synthetic_fixed", "synthetic_changing", "k_armed", "features", "ratings")


@dataclass(frozen=True)
class EnvironmentSpec:
    """[environment] table of an experiment file"""

    kind: str
    d: int = 5
    K: Optional[int] = 100
    sigma: Optional[float] = None
    gap: Optional[float] = None
    means: Optional[Tuple[float, ...]] = None
    path: Optional[str] = None
    target_column: Optional[str] = None
    lam_fit: float = 1e-6
    rank: int = 5
    als_iters: int = Config.DEFAULT_ALS_ITERS
    lam_als: float = Config.DEFAULT_ALS_LAMBDA

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ConfigError(f"unknown environment kind {self.kind!r} (known: {', '.join(ENV_KINDS)})")
        if self.sigma is not None and self.sigma < 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        if self.kind in ("synthetic_fixed", "synthetic_changing"):
            if self.d < 1 or self.K is None or self.K < 2:
                raise ConfigError("synthetic environments need d >= 1 and K >= 2")
        if self.kind == "k_armed" and self.means is None and (self.gap is None or self.K is None):
            raise ConfigError("k_armed environments need either means or K and gap")
        if self.kind in ("features", "ratings") and not self.path:
            raise ConfigError(f"{self.kind} environments need a path")
        if self.kind == "features" and not self.target_column:
            raise ConfigError("features environments need a target_column")

    @property
    def env_kind(self) -> EnvKind:
        if self.kind == "synthetic_changing":
            return EnvKind.LINEAR_CHANGING
        if self.kind == "k_armed":
            return EnvKind.K_ARMED
        return EnvKind.LINEAR_FIXED


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: environment, horizon, runs and the compared algorithms"""

    name: str
    environment: EnvironmentSpec
    algorithms: Tuple[PolicyConfig, ...]
    horizon: int = 10_000
    runs: int = 200
    seed: int = 0
    output_dir: str = ""
    full_trace: bool = False
    check_invariants: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        if self.runs < 1:
            raise ConfigError(f"runs must be at least 1, got {self.runs}")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ConfigError(f"algorithm names must be unique, got {names}")

    @property
    def algorithm_names(self) -> List[str]:
        return [a.name for a in self.algorithms]


def _build(cls, table: Dict[str, Any], context: str, extra: Dict[str, Any] = None):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {', '.join(unknown)}")
    try:
        return cls(**{**table, **(extra or {})})
    except TypeError as e:
        raise ConfigError(f"invalid {context}: {e}")


def load_experiment_config(path: str, **overrides) -> ExperimentConfig:
    """Parse a TOML experiment file; overrides replace top-level keys"""
    try:
        with open(path, "rb") as f:
            document = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}")

    base_dir = os.path.dirname(os.path.abspath(path))

    env_table = dict(document.pop("environment", {}) or {})
    if not env_table:
        raise ConfigError(f"{path}: missing [environment] table")
    if "lambda" in env_table:
        env_table["lam_fit"] = env_table.pop("lambda")
    if env_table.get("path"):
        env_table["path"] = os.path.normpath(os.path.join(base_dir, env_table["path"]))
    if env_table.get("means") is not None:
        env_table["means"] = tuple(float(m) for m in env_table["means"])
    if env_table.get("K") == "all":
        env_table["K"] = None
    environment = _build(EnvironmentSpec, env_table, "[environment]")

    top = {k: v for k, v in document.items() if k != "algorithm"}
    top.update({k: v for k, v in overrides.items() if v is not None})
    horizon = int(top.get("horizon", 10_000))

    algorithms = []
    for i, table in enumerate(document.get("algorithm", []) or []):
        table = dict(table)
        if "lambda" in table:
            table["lam"] = table.pop("lambda")
        if "width_lambda" in table:
            table["width_lam"] = table.pop("width_lambda")
        table.pop("horizon", None)
        algorithms.append(_build(PolicyConfig, table, f"[[algorithm]] #{i + 1}", {"horizon": horizon}))

    if "name" not in top:
        top["name"] = os.path.splitext(os.path.basename(path))[0]
    if not top.get("output_dir"):
        top["output_dir"] = os.path.join(Config.OUTPUT_DIR, str(top["name"]))

    cfg = _build(ExperimentConfig, top, path, {"environment": environment, "algorithms": tuple(algorithms)})
    validate_experiment(cfg)
    return cfg


def validate_experiment(cfg: ExperimentConfig):
    """Algorithm/environment compatibility, checked before any simulation"""
    for algorithm in cfg.algorithms:
        if algorithm.horizon != cfg.horizon:
            raise ConfigError(f"{algorithm.name}: horizon {algorithm.horizon} != experiment horizon {cfg.horizon}")
        check_compatible(algorithm, cfg.environment.env_kind)


# Environment sources


@dataclass
class EnvironmentSource:
    """Prepared inputs from which each run draws its environment"""

    spec: EnvironmentSpec
    vectors: Optional[np.ndarray] = None
    theta_star: Optional[np.ndarray] = None
    user_vectors: Optional[np.ndarray] = None
    sigma: float = 0.0

    def draw(self, rng: np.random.Generator) -> Environment:
        spec = self.spec
        if spec.kind in ("synthetic_fixed", "synthetic_changing"):
            return gen_synthetic_linear(spec.d, spec.K, self.sigma, rng, changing=spec.kind == "synthetic_changing")
        if spec.kind == "k_armed":
            means = spec.means if spec.means is not None else gap_means(spec.K, spec.gap)
            return gen_k_armed(means, self.sigma)
        if spec.kind == "features":
            return dataset_to_env(self.vectors, self.theta_star, spec.K, self.sigma, rng)
        user = int(rng.integers(self.user_vectors.shape[0]))
        return dataset_to_env(self.vectors, self.user_vectors[user], spec.K, self.sigma, rng)


def prepare_source(spec: EnvironmentSpec, seed: int) -> EnvironmentSource:
    """Load and fit datasets once per experiment"""
    if spec.kind in ("synthetic_fixed", "synthetic_changing", "k_armed"):
        return EnvironmentSource(spec=spec, sigma=0.5 if spec.sigma is None else spec.sigma)

    if spec.kind == "features":
        ds = load_feature_csv(spec.path, spec.target_column)
        theta = fit_theta_from_dataset(ds, spec.lam_fit)
        sigma = residual_sigma(ds, theta) if spec.sigma is None else spec.sigma
        if spec.K is not None and spec.K > ds.rows.shape[0]:
            raise ConfigError(f"K={spec.K} exceeds the {ds.rows.shape[0]} rows of {spec.path}")
        logger.info("Feature pipeline %s: d=%d, sigma=%.4f", spec.path, ds.dim, sigma)
        return EnvironmentSource(spec=spec, vectors=ds.rows, theta_star=theta, sigma=sigma)

    ratings = load_ratings_csv(spec.path)
    if spec.K is not None and spec.K > ratings.n_items:
        raise ConfigError(f"K={spec.K} exceeds the {ratings.n_items} items of {spec.path}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    users, items = als_factorize(ratings, spec.rank, spec.als_iters, spec.lam_als, rng)
    # unit max item norm, rewards unchanged
    scale = float(np.max(np.linalg.norm(items, axis=1))) or 1.0
    sigma = 0.811 if spec.sigma is None else spec.sigma
    return EnvironmentSource(
        spec=spec,
        vectors=items / scale,
        user_vectors=users * scale,
        sigma=sigma,
    )


# Seeds


def environment_streams(base_seed: int, run: int) -> Tuple[np.random.Generator, ...]:
    """Environment, context and reward generators shared by every algorithm of a run"""
    children = np.random.SeedSequence([base_seed, run]).spawn(3)
    return tuple(np.random.default_rng(child) for child in children)


def policy_stream(base_seed: int, run: int, cfg: PolicyConfig) -> np.random.Generator:
    tag = zlib.crc32(cfg.name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([base_seed, run, tag, cfg.seed]))


def checkpoint_rounds(n: int, count: int = None) -> List[int]:
    """Round 1, round n and every n/count rounds"""
    count = Config.CHECKPOINTS if count is None else count
    step = max(1, n // count)
    rounds = set(range(step, n + 1, step))
    rounds.update((1, n))
    return sorted(rounds)


# Simulation


@dataclass
class RunSummary:
    """End-of-run figures and invariant bookkeeping for one (algorithm, run)"""

    algorithm: str
    run: int
    regret: float
    q: float
    covered: bool
    potential: Optional[float] = None
    potential_bound: Optional[float] = None
    lemma_rounds: int = 0
    lemma_violations: int = 0


@dataclass
class RunTask:
    cfg: PolicyConfig
    run: int
    base_seed: int
    horizon: int
    source: EnvironmentSource
    full_trace: bool = False
    check_invariants: bool = True


@dataclass
class RunResult:
    rows: List[Tuple[str, int, int, float, float]]
    summary: RunSummary


def simulate_run(task: RunTask) -> RunResult:
    """Simulate one (algorithm, run) pair for the full horizon"""
    env_rng, context_rng, reward_rng = environment_streams(task.base_seed, task.run)
    env = task.source.draw(env_rng)
    policy = build_policy(task.cfg, env, policy_stream(task.base_seed, task.run, task.cfg))

    n = task.horizon
    wanted = set(checkpoint_rounds(n))
    metrics = MetricsAccumulator(keep_trace=task.full_trace)
    monitor = None
    if task.check_invariants and isinstance(policy, CodeKArmedPolicy):
        monitor = KArmedLemmaMonitor(means=env.theta_star)

    covered = True
    rows = []
    for t in range(1, n + 1):
        context = next_round(env, t, context_rng)

        plausible = policy.plausible(context)
        estimate = policy.working_estimate()
        if isinstance(policy, LinearPolicy):
            if covered and not ellipsoid_contains(policy.state.estimate, env.theta_star, policy.state.width()):
                covered = False
        elif isinstance(policy, CodeKArmedPolicy):
            widths = policy.state.widths()
            pulled = policy.state.pulls > 0
            gaps = np.abs(estimate[pulled] - env.theta_star[pulled])
            if covered and np.any(gaps > widths[pulled]):
                covered = False

        index = policy.select(context)
        action = context.actions[index]
        reward = sample_reward(env, action, reward_rng)

        metrics.record(
            instant_regret(env, context, index),
            model_uncertainty(estimate, env.theta_star, context.actions[plausible]),
        )
        if monitor is not None:
            monitor.check(policy.state.mean_est, policy.state.widths(), plausible, index, t)

        policy.observe(context, index, reward)

        if not task.full_trace and t in wanted:
            rows.append((task.cfg.name, task.run, t, metrics.regret_cum, metrics.q_cum))

    if task.full_trace:
        rows = [(task.cfg.name, task.run, t, regret, q) for t, regret, q in metrics.cumulative_trace()]

    summary = RunSummary(
        algorithm=task.cfg.name,
        run=task.run,
        regret=metrics.regret_cum,
        q=metrics.q_cum,
        covered=covered,
    )
    if monitor is not None:
        summary.lemma_rounds = monitor.covered_rounds
        summary.lemma_violations = monitor.regret_violations + monitor.width_violations

    if isinstance(policy, LinearPolicy):
        design = policy.state.design
        summary.potential = design.potential
        # sqrt(d) ** 2 can land a few ulps above d
        if design.lam >= env.L ** 2 * (1.0 - 1e-12):
            summary.potential_bound = elliptical_potential_bound(env.dim, design.count, env.L, design.lam)
            if task.check_invariants and summary.potential > summary.potential_bound:
                raise InvariantViolation(
                    f"{task.cfg.name} run {task.run}: elliptical potential "
                    f"{summary.potential:.6g} > {summary.potential_bound:.6g}"
                )

    return RunResult(rows=rows, summary=summary)


# Results


@dataclass
class ResultsTable:
    """Long-format checkpoint rows and their per-round aggregates"""

    raw: pd.DataFrame
    aggregate: pd.DataFrame
    algorithms: List[str]
    summaries: List[RunSummary] = field(default_factory=list)


def aggregate_raw(raw: pd.DataFrame, algorithms: Sequence[str]) -> pd.DataFrame:
    """Mean and standard error of both series per (algorithm, round)"""
    if raw.empty:
        return pd.DataFrame(columns=AGGREGATE_COLUMNS)
    frame = raw.copy()
    frame["algorithm"] = pd.Categorical(frame["algorithm"], categories=list(algorithms), ordered=True)
    grouped = frame.groupby(["algorithm", "round"], observed=True, sort=True)
    stats = grouped.agg(
        regret_mean=("regret_cum", "mean"),
        regret_std=("regret_cum", "std"),
        q_mean=("q_cum", "mean"),
        q_std=("q_cum", "std"),
        count=("run", "count"),
    ).reset_index()
    root = np.sqrt(stats["count"].to_numpy(dtype=float))
    stats["regret_se"] = stats["regret_std"].fillna(0.0).to_numpy() / root
    stats["q_se"] = stats["q_std"].fillna(0.0).to_numpy() / root
    stats["algorithm"] = stats["algorithm"].astype(str)
    return stats[AGGREGATE_COLUMNS].reset_index(drop=True)


def build_table(results: Sequence[RunResult], algorithms: Sequence[str]) -> ResultsTable:
    rows = [row for result in results for row in result.rows]
    raw = pd.DataFrame(rows, columns=RAW_COLUMNS)
    order = {name: i for i, name in enumerate(algorithms)}
    raw = raw.sort_values(
        by=["algorithm", "run", "round"],
        key=lambda col: col.map(order) if col.name == "algorithm" else col,
        kind="stable",
    ).reset_index(drop=True)
    return ResultsTable(
        raw=raw,
        aggregate=aggregate_raw(raw, algorithms),
        algorithms=list(algorithms),
        summaries=[result.summary for result in results],
    )


async def _gather_parallel(tasks: List[RunTask], workers: int) -> List[RunResult]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [loop.run_in_executor(pool, simulate_run, task) for task in tasks]
        return list(await asyncio.gather(*futures))


async def run_experiment_async(cfg: ExperimentConfig, workers: Optional[int] = None) -> ResultsTable:
    validate_experiment(cfg)
    source = prepare_source(cfg.environment, cfg.seed)

    tasks = [
        RunTask(
            cfg=algorithm,
            run=run,
            base_seed=cfg.seed,
            horizon=cfg.horizon,
            source=source,
            full_trace=cfg.full_trace,
            check_invariants=cfg.check_invariants,
        )
        for algorithm in cfg.algorithms
        for run in range(cfg.runs)
    ]
    workers = min(Config.worker_count(workers), len(tasks))
    logger.info("Experiment %s: %d tasks on %d worker(s)", cfg.name, len(tasks), workers)

    if workers <= 1:
        results = [simulate_run(task) for task in tasks]
    else:
        results = await _gather_parallel(tasks, workers)

    table = build_table(results, cfg.algorithm_names)
    for name in cfg.algorithm_names:
        final = [s for s in table.summaries if s.algorithm == name]
        logger.info(
            "%s: mean R_n %.3f, mean Q_n %.5f, coverage %d/%d",
            name,
            float(np.mean([s.regret for s in final])),
            float(np.mean([s.q for s in final])),
            sum(s.covered for s in final),
            len(final),
        )
    return table


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> ResultsTable:
    """Run every (algorithm, run) pair and aggregate; independent of scheduling"""
    return asyncio.run(run_experiment_async(cfg, workers))
