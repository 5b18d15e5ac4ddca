"""Benchmark harness.

A benchmark config names one true environment, the simulator discrepancies a
training-time simulator suffers, the offline dataset (a file path or a
generation recipe), and the agent to train.  Execution trains the agent per
seed using only the perturbed simulator and/or the dataset, then evaluates
on the unperturbed true environment and reports scores normalized to 0
(uniform-random reference) .. 100 (trained expert reference).

Config files are JSON with exactly the documented keys; unknown keys are an
error so misconfigurations fail instead of silently running something else.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import agents
from .data import (
    DEFAULT_TIER_BUDGET,
    Dataset,
    DatasetRecipe,
    generate_dataset,
    online_training_run,
    read_dataset,
)
from .envs import Environment, make_env
from .seeding import REFS, derived_seed
from .wrappers import (
    PerturbSpec,
    apply_perturbations,
    clone_env,
    perturb_from_dict,
    perturb_to_dict,
)

AGENT_NAMES = ("online_q", "offline_bcq", "mopo_lite", "hymopo")

RESULTS_HEADER = (
    "benchmark_id",
    "agent",
    "seed",
    "raw_return",
    "normalized_score",
    "wall_time",
    "config_hash",
    "dataset_hash",
)


def normalize_score(raw: float, random_ref: float, expert_ref: float) -> float:
    """Scale a raw return to 0 (random reference) .. 100 (expert reference).

    Scores outside [0, 100] are allowed; the reference gap must be positive.
    """
    if expert_ref <= random_ref:
        raise ValueError(
            f"expert reference ({expert_ref}) must exceed random reference "
            f"({random_ref})"
        )
    return 100.0 * (raw - random_ref) / (expert_ref - random_ref)


@dataclass(frozen=True)
class ReferencePair:
    random_ref: float
    expert_ref: float


_REF_CACHE: dict = {}


def clear_reference_cache() -> None:
    _REF_CACHE.clear()


def compute_reference_pair(
    env: Environment,
    seed: int = 0,
    episodes: int = 100,
    budget: int | None = None,
    config=None,
) -> ReferencePair:
    """Mean returns of the uniform policy and of a trained expert policy.

    Cached per (environment signature, seed, episodes, budget) so repeated
    normalization reuses one expert training run per process.
    """
    from .wrappers import env_signature

    if budget is None:
        budget = DEFAULT_TIER_BUDGET.get(env.name, 20_000)
    key = (env_signature(env), seed, episodes, budget)
    if key in _REF_CACHE:
        return _REF_CACHE[key]
    cfg = config if config is not None else agents.default_agent_config(env)
    uniform = agents.UniformPolicy(agents.resolve_action_grid(env, cfg), seed=seed)
    random_ref, _ = agents.evaluate_policy(
        clone_env(env), uniform, episodes, derived_seed(seed, REFS, 0)
    )
    run = online_training_run(env, budget, seed, cfg)
    expert_ref, _ = agents.evaluate_policy(
        clone_env(env), run.policy, episodes, derived_seed(seed, REFS, 1)
    )
    pair = ReferencePair(float(random_ref), float(expert_ref))
    _REF_CACHE[key] = pair
    return pair


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchConfig:
    benchmark_id: str
    env_name: str
    env_params: dict
    sim2real: tuple[PerturbSpec, ...] = ()
    dataset_path: str | None = None
    dataset_recipe: DatasetRecipe | None = None
    agent: str = "offline_bcq"
    agent_overrides: dict | None = None
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_episodes: int = 20
    out: str | None = None

    def __post_init__(self):
        if self.agent not in AGENT_NAMES:
            raise ValueError(f"unknown agent {self.agent!r}; valid: {AGENT_NAMES}")
        uses_dataset = self.agent in ("offline_bcq", "mopo_lite", "hymopo")
        has_dataset = self.dataset_path is not None or self.dataset_recipe is not None
        if uses_dataset and not has_dataset:
            raise ValueError(f"agent {self.agent!r} requires a dataset")
        if self.agent == "online_q" and has_dataset:
            raise ValueError("agent 'online_q' does not use a dataset; remove it")
        if self.agent in ("offline_bcq", "mopo_lite") and self.sim2real:
            raise ValueError(
                f"agent {self.agent!r} does not use a simulator; remove sim2real"
            )
        if self.dataset_path is not None and self.dataset_recipe is not None:
            raise ValueError("give either a dataset path or a recipe, not both")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")

    def to_dict(self) -> dict:
        dataset: dict | str | None
        if self.dataset_path is not None:
            dataset = {"path": self.dataset_path}
        elif self.dataset_recipe is not None:
            dataset = self.dataset_recipe.to_dict()
        else:
            dataset = None
        return {
            "benchmark_id": self.benchmark_id,
            "env": {"name": self.env_name, "params": dict(self.env_params)},
            "sim2real": [perturb_to_dict(s) for s in self.sim2real],
            "dataset": dataset,
            "agent": {"name": self.agent, "config": dict(self.agent_overrides or {})},
            "seeds": list(self.seeds),
            "eval_episodes": self.eval_episodes,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        allowed = {"benchmark_id", "env", "sim2real", "dataset", "agent", "seeds",
                   "eval_episodes", "out"}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ValueError(f"unknown config keys {unknown}; valid: {sorted(allowed)}")
        for required in ("benchmark_id", "env", "agent"):
            if required not in d:
                raise ValueError(f"config is missing required key {required!r}")
        env_d = dict(d["env"])
        env_unknown = sorted(set(env_d) - {"name", "params"})
        if env_unknown:
            raise ValueError(f"unknown env keys {env_unknown}")
        if "name" not in env_d:
            raise ValueError("env requires a 'name'")
        agent_d = dict(d["agent"])
        agent_unknown = sorted(set(agent_d) - {"name", "config"})
        if agent_unknown:
            raise ValueError(f"unknown agent keys {agent_unknown}")
        if "name" not in agent_d:
            raise ValueError("agent requires a 'name'")
        dataset_path = None
        recipe = None
        ds = d.get("dataset")
        if ds is not None:
            ds = dict(ds)
            if set(ds) == {"path"}:
                dataset_path = ds["path"]
            else:
                recipe = DatasetRecipe.from_dict(ds)
        return cls(
            benchmark_id=d["benchmark_id"],
            env_name=env_d["name"],
            env_params=dict(env_d.get("params") or {}),
            sim2real=tuple(perturb_from_dict(s) for s in d.get("sim2real", [])),
            dataset_path=dataset_path,
            dataset_recipe=recipe,
            agent=agent_d["name"],
            agent_overrides=dict(agent_d.get("config") or {}),
            seeds=tuple(int(s) for s in d.get("seeds", (0, 1, 2))),
            eval_episodes=int(d.get("eval_episodes", 20)),
            out=d.get("out"),
        )


def load_configs(path) -> list[BenchConfig]:
    """Load one config object or a JSON array of them."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list):
        raise ValueError("config file must hold a JSON object or array of objects")
    return [BenchConfig.from_dict(item) for item in payload]


def config_hash(config: BenchConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def dataset_hash(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(dataset.meta.to_dict(), sort_keys=True).encode())
    O, A, R, O2, D = dataset.arrays()
    for arr in (O, np.asarray(A, dtype=float), R, O2, D.astype(np.uint8)):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    benchmark_id: str
    agent: str
    seed: int
    raw_return: float
    normalized_score: float
    wall_time: float
    config_hash: str
    dataset_hash: str

    def row(self) -> list:
        return [
            self.benchmark_id,
            self.agent,
            self.seed,
            repr(self.raw_return),
            repr(self.normalized_score),
            repr(self.wall_time),
            self.config_hash,
            self.dataset_hash,
        ]


@dataclass(frozen=True)
class RunFailure:
    benchmark_id: str
    agent: str
    seed: int
    error: str


def _agent_config(env: Environment, overrides: dict | None) -> agents.AgentConfig:
    cfg = agents.default_agent_config(env)
    if not overrides:
        return cfg
    overrides = dict(overrides)
    model_over = overrides.pop("model", None)
    valid = set(cfg.__dataclass_fields__)
    unknown = sorted(set(overrides) - valid)
    if unknown:
        raise ValueError(f"unknown agent config keys {unknown}")
    for key in ("action_grid", "q_input_shift", "q_input_scale"):
        if key in overrides and overrides[key] is not None:
            overrides[key] = tuple(overrides[key])
    cfg = replace(cfg, **overrides)
    if model_over:
        model_over = dict(model_over)
        munknown = sorted(set(model_over) - set(cfg.model.__dataclass_fields__))
        if munknown:
            raise ValueError(f"unknown model config keys {munknown}")
        for key in ("input_shift", "input_scale"):
            if key in model_over and model_over[key] is not None:
                model_over[key] = tuple(model_over[key])
        cfg = replace(cfg, model=replace(cfg.model, **model_over))
    return cfg


def obtain_dataset(config: BenchConfig) -> Dataset | None:
    if config.dataset_path is not None:
        return read_dataset(config.dataset_path)
    if config.dataset_recipe is not None:
        env = make_env(config.env_name, config.env_params)
        return generate_dataset(env, config.dataset_recipe)
    return None


def _run_single_seed(config: BenchConfig, seed: int, dataset: Dataset | None
                     ) -> RunResult:
    start = time.monotonic()
    true_env = make_env(config.env_name, config.env_params)
    cfg = _agent_config(true_env, config.agent_overrides)
    refs = compute_reference_pair(true_env)

    if config.agent == "online_q":
        sim = apply_perturbations(make_env(config.env_name, config.env_params),
                                  config.sim2real)
        policy = agents.train_online_q(sim, cfg, seed).policy
    elif config.agent == "offline_bcq":
        policy = agents.train_offline_bcq(dataset, cfg, seed).policy
    elif config.agent == "mopo_lite":
        policy = agents.train_mopo_lite(dataset, cfg, seed).policy
    else:  # hymopo
        sim = apply_perturbations(make_env(config.env_name, config.env_params),
                                  config.sim2real)
        policy = agents.train_hymopo(dataset, sim, cfg, seed).policy

    raw, _ = agents.evaluate_policy(true_env, policy, config.eval_episodes, seed)
    score = normalize_score(raw, refs.random_ref, refs.expert_ref)
    ds_hash = dataset_hash(dataset) if dataset is not None else "-"
    return RunResult(
        benchmark_id=config.benchmark_id,
        agent=config.agent,
        seed=seed,
        raw_return=float(raw),
        normalized_score=float(score),
        wall_time=time.monotonic() - start,
        config_hash=config_hash(config),
        dataset_hash=ds_hash,
    )


def _worker(payload: tuple) -> tuple:
    config_dict, seed = payload
    config = BenchConfig.from_dict(config_dict)
    try:
        dataset = obtain_dataset(config)
        return ("ok", _run_single_seed(config, seed, dataset))
    except Exception as exc:  # per-seed isolation: other seeds continue
        return ("error", RunFailure(config.benchmark_id, config.agent, seed, str(exc)))


def run_benchmark(
    config: BenchConfig, jobs: int = 1
) -> tuple[list[RunResult], list[RunFailure]]:
    """Run every seed of a benchmark config.

    Training only ever touches the perturbed simulator and/or the dataset;
    evaluation always happens on the unperturbed true environment.  Failures
    are recorded per seed and do not stop the remaining seeds.  Results are
    appended to ``config.out`` when set.
    """
    results: list[RunResult] = []
    failures: list[RunFailure] = []
    if jobs > 1:
        payloads = [(config.to_dict(), seed) for seed in config.seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for status, value in pool.map(_worker, payloads):
                (results if status == "ok" else failures).append(value)
    else:
        dataset = None
        dataset_ready = False
        for seed in config.seeds:
            try:
                if not dataset_ready:
                    dataset = obtain_dataset(config)
                    dataset_ready = True
                results.append(_run_single_seed(config, seed, dataset))
            except Exception as exc:
                failures.append(
                    RunFailure(config.benchmark_id, config.agent, seed, str(exc))
                )
    if config.out:
        append_results(config.out, results)
    return results, failures


def run_benchmarks(
    configs: list[BenchConfig], jobs: int = 1
) -> tuple[list[RunResult], list[RunFailure]]:
    results: list[RunResult] = []
    failures: list[RunFailure] = []
    for config in configs:
        r, f = run_benchmark(config, jobs=jobs)
        results.extend(r)
        failures.extend(f)
    return results, failures


# ---------------------------------------------------------------------------
# Results files and reports
# ---------------------------------------------------------------------------


def append_results(path, results: list[RunResult]) -> None:
    """Append rows to a results CSV, writing the header on first touch."""
    try:
        with open(path, encoding="utf-8") as fh:
            has_header = fh.readline().strip() == ",".join(RESULTS_HEADER)
    except FileNotFoundError:
        has_header = False
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if not has_header:
            writer.writerow(RESULTS_HEADER)
        for res in results:
            writer.writerow(res.row())


def read_results(path) -> list[RunResult]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(RESULTS_HEADER):
            raise ValueError(
                f"unexpected results header {reader.fieldnames}; "
                f"expected {list(RESULTS_HEADER)}"
            )
        for row in reader:
            out.append(
                RunResult(
                    benchmark_id=row["benchmark_id"],
                    agent=row["agent"],
                    seed=int(row["seed"]),
                    raw_return=float(row["raw_return"]),
                    normalized_score=float(row["normalized_score"]),
                    wall_time=float(row["wall_time"]),
                    config_hash=row["config_hash"],
                    dataset_hash=row["dataset_hash"],
                )
            )
    return out


def _aggregate(results: list[RunResult]) -> dict:
    groups: dict = {}
    for res in results:
        groups.setdefault((res.benchmark_id, res.agent), []).append(res)
    agg = {}
    for key, rows in groups.items():
        norm = np.array([r.normalized_score for r in rows])
        raw = np.array([r.raw_return for r in rows])
        # sample standard deviation (n-1); a single run reports 0
        nstd = float(np.std(norm, ddof=1)) if len(rows) > 1 else 0.0
        rstd = float(np.std(raw, ddof=1)) if len(rows) > 1 else 0.0
        agg[key] = {
            "rows": rows,
            "raw_mean": float(raw.mean()),
            "raw_std": rstd,
            "norm_mean": float(norm.mean()),
            "norm_std": nstd,
        }
    return agg


def emit_report(results: list[RunResult], fmt: str = "markdown", path=None) -> str:
    """Render per-seed rows plus aggregates.

    ``csv`` keeps full precision (one row per run, one aggregate row per
    benchmark/agent); ``markdown`` is a pivot table of "mean +- std" cells to
    one decimal, benchmarks as rows and agents as columns.
    """
    if not results:
        raise ValueError("cannot report on an empty result list")
    agg = _aggregate(results)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["benchmark_id", "agent", "seed", "raw_return", "normalized_score",
             "raw_return_std", "normalized_score_std"]
        )
        for (bench_id, agent), info in sorted(agg.items()):
            for res in info["rows"]:
                writer.writerow(
                    [bench_id, agent, res.seed, repr(res.raw_return),
                     repr(res.normalized_score), "", ""]
                )
            writer.writerow(
                [bench_id, agent, "aggregate", repr(info["raw_mean"]),
                 repr(info["norm_mean"]), repr(info["raw_std"]), repr(info["norm_std"])]
            )
        text = buf.getvalue()
    elif fmt == "markdown":
        bench_ids = sorted({k[0] for k in agg})
        agent_names = sorted({k[1] for k in agg})
        lines = ["| benchmark | " + " | ".join(agent_names) + " |",
                 "|---" * (len(agent_names) + 1) + "|"]
        for bench_id in bench_ids:
            cells = []
            for agent in agent_names:
                info = agg.get((bench_id, agent))
                if info is None:
                    cells.append("-")
                else:
                    cells.append(f"{info['norm_mean']:.1f} ± {info['norm_std']:.1f}")
            lines.append("| " + bench_id + " | " + " | ".join(cells) + " |")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}; use 'csv' or 'markdown'")
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def grid_configs(
    env_name: str,
    env_params: dict,
    sim2real_options: list[tuple[str, list]],
    dataset_options: list[tuple[str, DatasetRecipe | None]],
    agent_names: list[str],
    seeds: tuple[int, ...] = (0, 1, 2),
    eval_episodes: int = 20,
) -> list[BenchConfig]:
    """Expand (discrepancy x dataset x agent) axes into benchmark configs,
    skipping combinations an agent cannot consume."""
    configs = []
    for sim_label, specs in sim2real_options:
        for ds_label, recipe in dataset_options:
            for agent in agent_names:
                uses_sim = agent in ("online_q", "hymopo")
                uses_data = agent != "online_q"
                if uses_data and recipe is None:
                    continue
                configs.append(
                    BenchConfig(
                        benchmark_id=f"{env_name}-{sim_label}-{ds_label}-{agent}",
                        env_name=env_name,
                        env_params=dict(env_params),
                        sim2real=tuple(specs) if uses_sim else (),
                        dataset_recipe=recipe if uses_data else None,
                        agent=agent,
                        seeds=seeds,
                        eval_episodes=eval_episodes,
                    )
                )
    return configs
