"""Offline dataset generation, corruption and serialization.

Datasets are ordered collections of (obs, action, reward, next_obs, done)
records labeled with how they were produced: which environment, which
behavior-policy tier (random / medium / medium_replay / medium_expert /
expert), whether the behavior policy acted on the recorded observation
("observed") or on privileged full state ("privileged"), and which
corruptions were applied afterwards.

Corruption operators model the gap between recorded data and the world the
data came from: post-hoc Gaussian noise on stored observations, zeroing of
stored dimensions, and history-aware collection where the behavior policy's
actual decision input (a window of past observations) is discarded.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from fractions import Fraction

import numpy as np

from .envs import Environment, StepResult
from .seeding import COLLECT_ENV, COLLECT_POLICY, DATA_NOISE, derived_rng, derived_seed
from .wrappers import EnvWrapper

FORMAT_VERSION = "b4mrl-ds/1"
DATASET_TIERS = ("random", "medium", "medium_replay", "medium_expert", "expert")
BEHAVIOR_MODES = ("observed", "privileged")

DEFAULT_TIER_BUDGET = {"pendulum": 40_000, "windygrid": 25_000, "bandit": 2_000}
DEFAULT_DATASET_SIZE = {"pendulum": 100_000, "windygrid": 20_000, "bandit": 10_000}


class DatasetIOError(Exception):
    """Base class for dataset file errors; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetVersionError(DatasetIOError):
    pass


class DatasetParseError(DatasetIOError):
    pass


class DatasetDimensionError(DatasetIOError):
    pass


class TierError(RuntimeError):
    """Raised when a tier policy cannot be produced within its budget."""


# ---------------------------------------------------------------------------
# Records and metadata
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TransitionRecord:
    obs: np.ndarray
    action: int | float | np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransitionRecord):
            return NotImplemented
        return (
            np.array_equal(self.obs, other.obs)
            and np.array_equal(np.asarray(self.action), np.asarray(other.action))
            and self.reward == other.reward
            and np.array_equal(self.next_obs, other.next_obs)
            and self.done == other.done
        )


def _jsonify(value):
    """Convert parameter values to JSON-native types (tuples become lists,
    exact fractions become 'p/q' strings) so metadata round-trips exactly."""
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (tuple, list)):
        return [_jsonify(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def env_params_dict(env: Environment) -> dict:
    params = env.params
    return _jsonify(asdict(params) if is_dataclass(params) else dict(params))


@dataclass
class DatasetMeta:
    env_name: str
    env_params: dict
    tier: str
    corruption: tuple = ()
    behavior_mode: str = "observed"
    seed: int = 0
    format_version: str = FORMAT_VERSION
    record_count: int = 0

    def __post_init__(self):
        if self.tier not in DATASET_TIERS:
            raise ValueError(f"unknown tier {self.tier!r}; valid: {DATASET_TIERS}")
        if self.behavior_mode not in BEHAVIOR_MODES:
            raise ValueError(
                f"unknown behavior mode {self.behavior_mode!r}; valid: {BEHAVIOR_MODES}"
            )
        self.corruption = tuple(dict(c) for c in self.corruption)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "env_name": self.env_name,
            "env_params": self.env_params,
            "tier": self.tier,
            "corruption": [dict(c) for c in self.corruption],
            "behavior_mode": self.behavior_mode,
            "seed": self.seed,
            "record_count": self.record_count,
        }


@dataclass
class Dataset:
    meta: DatasetMeta
    records: list[TransitionRecord]

    def __post_init__(self):
        if not self.records:
            raise ValueError("datasets must be non-empty")
        dim = self.records[0].obs.shape[0]
        for i, rec in enumerate(self.records):
            if rec.obs.shape[0] != dim or rec.next_obs.shape[0] != dim:
                raise ValueError(f"record {i}: inconsistent observation dimensions")
        if self.meta.record_count != len(self.records):
            raise ValueError(
                f"meta.record_count={self.meta.record_count} but dataset holds "
                f"{len(self.records)} records"
            )

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.meta == other.meta and self.records == other.records

    def arrays(self):
        """(O, A, R, O2, D) as stacked numpy arrays."""
        O = np.stack([r.obs for r in self.records])
        A = np.asarray([r.action for r in self.records])
        R = np.asarray([r.reward for r in self.records], dtype=float)
        O2 = np.stack([r.next_obs for r in self.records])
        D = np.asarray([r.done for r in self.records], dtype=bool)
        return O, A, R, O2, D


def concat_datasets(parts: list[Dataset], tier: str, seed: int) -> Dataset:
    """Concatenate record streams; behavior mode is privileged if any part is."""
    records = [rec for part in parts for rec in part.records]
    corruption = tuple(c for part in parts for c in part.meta.corruption)
    mode = (
        "privileged"
        if any(p.meta.behavior_mode == "privileged" for p in parts)
        else "observed"
    )
    meta = replace(
        parts[0].meta,
        tier=tier,
        seed=seed,
        corruption=corruption,
        behavior_mode=mode,
        record_count=len(records),
    )
    return Dataset(meta, records)


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------


def collect_dataset(
    env: Environment,
    policy,
    n_records: int,
    behavior_mode: str,
    seed: int,
    tier: str = "random",
) -> Dataset:
    """Roll the behavior policy for exactly ``n_records`` transitions.

    In ``observed`` mode the policy consumes the (possibly wrapped)
    observation that is also recorded; in ``privileged`` mode it consumes
    ``full_state()`` while the records keep only the emitted observations.
    Episodes reset on done.
    """
    if behavior_mode not in BEHAVIOR_MODES:
        raise ValueError(f"unknown behavior mode {behavior_mode!r}")
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    policy.reseed(derived_seed(seed, COLLECT_POLICY))
    obs = env.reset(seed=derived_seed(seed, COLLECT_ENV) % 2**31)
    records: list[TransitionRecord] = []
    while len(records) < n_records:
        decision_input = env.full_state() if behavior_mode == "privileged" else obs
        action = policy.act(decision_input)
        res = env.step(action)
        records.append(
            TransitionRecord(obs, _plain_action(action), res.reward, res.obs, res.done)
        )
        obs = env.reset() if res.done else res.obs
    meta = DatasetMeta(
        env_name=env.name,
        env_params=env_params_dict(env),
        tier=tier,
        behavior_mode=behavior_mode,
        seed=seed,
        record_count=len(records),
    )
    return Dataset(meta, records)


def _plain_action(action):
    if isinstance(action, np.ndarray):
        return float(action.reshape(-1)[0]) if action.size == 1 else action.copy()
    if isinstance(action, (np.integer,)):
        return int(action)
    if isinstance(action, (np.floating,)):
        return float(action)
    return action


def collect_history_confounded(
    env: Environment,
    k: int,
    policy_over_history,
    n_records: int,
    seed: int,
    tier: str = "random",
) -> Dataset:
    """Collect data with a policy that acts on the last ``k`` observations.

    The decision window (zero-padded at episode starts, oldest first) is
    discarded: records keep only the single current observation, which hides
    part of what drove the actions whenever k > 1.
    """
    if k < 1:
        raise ValueError("history length k must be >= 1")
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    policy_over_history.reseed(derived_seed(seed, COLLECT_POLICY))
    obs = env.reset(seed=derived_seed(seed, COLLECT_ENV) % 2**31)
    dim = env.obs_dim
    window = np.zeros((k, dim))
    window[-1] = obs
    records: list[TransitionRecord] = []
    while len(records) < n_records:
        action = policy_over_history.act(window.reshape(-1))
        res = env.step(action)
        records.append(
            TransitionRecord(obs, _plain_action(action), res.reward, res.obs, res.done)
        )
        if res.done:
            obs = env.reset()
            window = np.zeros((k, dim))
            window[-1] = obs
        else:
            obs = res.obs
            window = np.roll(window, -1, axis=0)
            window[-1] = obs
    meta = DatasetMeta(
        env_name=env.name,
        env_params=env_params_dict(env),
        tier=tier,
        corruption=({"kind": "history_confounded", "k": int(k)},),
        behavior_mode="privileged" if k > 1 else "observed",
        seed=seed,
        record_count=len(records),
    )
    return Dataset(meta, records)


class HistoryStack(EnvWrapper):
    """Observation wrapper exposing the concatenation of the last k
    observations (zero-padded after reset).  Used to train history-aware
    behavior policies; not an error-injection wrapper."""

    def __init__(self, env: Environment, k: int):
        if k < 1:
            raise ValueError("history length k must be >= 1")
        super().__init__(env)
        self.k = int(k)
        self._window = np.zeros((self.k, env.obs_dim))

    @property
    def obs_dim(self) -> int:  # type: ignore[override]
        return self.env.obs_dim * self.k

    def _rebuild(self, inner: Environment) -> "HistoryStack":
        return HistoryStack(inner, self.k)

    def reset(self, seed: int | None = None) -> np.ndarray:
        obs = self.env.reset(seed)
        self._window = np.zeros((self.k, self.env.obs_dim))
        self._window[-1] = obs
        return self._window.reshape(-1).copy()

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        self._window = np.roll(self._window, -1, axis=0)
        self._window[-1] = res.obs
        return StepResult(self._window.reshape(-1).copy(), res.reward, res.done)


class FullStateObservation(EnvWrapper):
    """Observation wrapper that emits ``full_state()`` directly.  Used to
    train privileged behavior policies whose input is the full state."""

    def __init__(self, env: Environment):
        super().__init__(env)
        probe = type(env.unwrapped)(env.unwrapped.params)
        probe.reset(seed=0)
        self._state_dim = probe.full_state().shape[0]

    @property
    def obs_dim(self) -> int:  # type: ignore[override]
        return self._state_dim

    def _rebuild(self, inner: Environment) -> "FullStateObservation":
        return FullStateObservation(inner)

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.env.reset(seed)
        return self.env.full_state()

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        return StepResult(self.env.full_state(), res.reward, res.done)


# ---------------------------------------------------------------------------
# Corruption operators
# ---------------------------------------------------------------------------


def _records_changed(old: list[TransitionRecord], new: list[TransitionRecord]) -> bool:
    return any(
        not (np.array_equal(a.obs, b.obs) and np.array_equal(a.next_obs, b.next_obs))
        for a, b in zip(old, new)
    )


def _corrupted_mode(dataset: Dataset, changed: bool) -> str:
    # Once stored observations diverge from what the behavior policy saw, the
    # dataset is effectively privileged: actions depend on hidden information.
    if dataset.meta.behavior_mode == "privileged" or changed:
        return "privileged"
    return "observed"


def corrupt_obs_noise(dataset: Dataset, sigma: float, seed: int) -> Dataset:
    """Add one fixed Gaussian noise draw per (record index, dimension).

    Noise row i perturbs record i's observation and noise row i+1 its next
    observation, so a state appearing as next_obs of record t and obs of
    record t+1 inside one episode receives the same draw.  The whole
    corruption is a pure function of (seed, record index, dimension).
    """
    if sigma < 0:
        raise ValueError(f"observation noise sigma must be >= 0, got {sigma}")
    n = len(dataset.records)
    dim = dataset.records[0].obs.shape[0]
    tag = {"kind": "obs_noise", "sigma": float(sigma), "seed": int(seed)}
    if sigma == 0.0:
        new_records = [replace(r) for r in dataset.records]
    else:
        noise = sigma * derived_rng(seed, DATA_NOISE).standard_normal((n + 1, dim))
        new_records = [
            replace(r, obs=r.obs + noise[i], next_obs=r.next_obs + noise[i + 1])
            for i, r in enumerate(dataset.records)
        ]
    changed = sigma != 0.0
    meta = replace(
        dataset.meta,
        corruption=dataset.meta.corruption + (tag,),
        behavior_mode=_corrupted_mode(dataset, changed),
    )
    return Dataset(meta, new_records)


def corrupt_hide_dims(dataset: Dataset, indices) -> Dataset:
    """Zero the named dimensions of every stored obs and next_obs.

    This manufactures hidden confounding exactly when the behavior policy
    used those entries; zeroing an already-zero column changes nothing and
    keeps the dataset's observed/privileged label intact.
    """
    idx = tuple(sorted({int(i) for i in indices}))
    dim = dataset.records[0].obs.shape[0]
    for i in idx:
        if not 0 <= i < dim:
            raise ValueError(f"hidden index {i} out of range for observation dim {dim}")
    cols = list(idx)
    new_records = []
    changed = False
    for r in dataset.records:
        obs, next_obs = r.obs.copy(), r.next_obs.copy()
        if cols:
            changed = changed or bool(
                np.any(obs[cols] != 0.0) or np.any(next_obs[cols] != 0.0)
            )
            obs[cols] = 0.0
            next_obs[cols] = 0.0
        new_records.append(replace(r, obs=obs, next_obs=next_obs))
    tag = {"kind": "hidden_dims", "indices": list(idx)}
    meta = replace(
        dataset.meta,
        corruption=dataset.meta.corruption + (tag,),
        behavior_mode=_corrupted_mode(dataset, changed),
    )
    return Dataset(meta, new_records)


# ---------------------------------------------------------------------------
# Tier policies
# ---------------------------------------------------------------------------


@dataclass
class TierPolicy:
    tier: str
    policy: object
    raw_score: float
    normalized_score: float
    train_result: object | None = None
    checkpoint_index: int | None = None


_TRAIN_CACHE: dict = {}


def clear_training_cache() -> None:
    _TRAIN_CACHE.clear()


def _env_cache_key(env: Environment):
    from .wrappers import env_signature

    return env_signature(env)


def online_training_run(env: Environment, budget: int, seed: int, config=None):
    """Cached online training run on a fresh clone of ``env``.

    The same run backs the expert reference, the expert tier and the medium
    checkpoint search, so each (env, budget, seed) trains at most once per
    process.
    """
    from . import agents

    cfg = config if config is not None else agents.default_agent_config(env)
    key = (_env_cache_key(env), budget, seed, cfg)
    if key not in _TRAIN_CACHE:
        from .wrappers import clone_env

        _TRAIN_CACHE[key] = agents.train_online_q(
            clone_env(env), cfg, seed, budget=budget
        )
    return _TRAIN_CACHE[key]


MEDIUM_NORMALIZED_TARGET = 40.0


def train_tier_policy(
    env: Environment,
    tier: str,
    budget: int | None = None,
    seed: int = 0,
    config=None,
    refs=None,
) -> TierPolicy:
    """Produce the behavior policy for a dataset tier, with measured scores.

    ``random`` is the uniform policy; ``expert`` is the final policy of an
    online training run; ``medium`` is the earliest training checkpoint whose
    normalized score crosses the medium target.  Scores are normalized
    against the environment's reference pair.
    """
    from . import agents, bench

    if tier not in ("random", "medium", "expert"):
        raise ValueError(f"tier policies exist for random/medium/expert, not {tier!r}")
    if budget is None:
        budget = DEFAULT_TIER_BUDGET.get(env.name, 20_000)
    cfg = config if config is not None else agents.default_agent_config(env)
    if refs is None:
        refs = bench.compute_reference_pair(env, seed=seed, budget=budget, config=cfg)

    if tier == "random":
        policy = agents.UniformPolicy(agents.resolve_action_grid(env, cfg), seed=seed)
        from .wrappers import clone_env

        raw, _ = agents.evaluate_policy(clone_env(env), policy, episodes=100, seed=seed)
        return TierPolicy(
            tier, policy, raw, bench.normalize_score(raw, refs.random_ref, refs.expert_ref)
        )

    result = online_training_run(env, budget, seed, cfg)
    if tier == "expert":
        raw = result.curve[result.best_index][1]
        return TierPolicy(
            tier,
            result.policy,
            raw,
            bench.normalize_score(raw, refs.random_ref, refs.expert_ref),
            train_result=result,
            checkpoint_index=result.best_index,
        )

    best = -np.inf
    for i, (steps, raw) in enumerate(result.curve):
        score = bench.normalize_score(raw, refs.random_ref, refs.expert_ref)
        best = max(best, score)
        if score >= MEDIUM_NORMALIZED_TARGET:
            return TierPolicy(
                "medium",
                result.checkpoint_policy(i),
                raw,
                score,
                train_result=result,
                checkpoint_index=i,
            )
    raise TierError(
        f"medium tier unreachable within budget {budget}: best normalized score "
        f"achieved was {best:.1f} (target {MEDIUM_NORMALIZED_TARGET})"
    )


# ---------------------------------------------------------------------------
# Recipes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRecipe:
    """Declarative description of how to produce one dataset.

    ``hidden_during_collection`` wraps the environment before the behavior
    policy is trained and before collection, so the policy never sees those
    dimensions (partial observability without confounding).  ``corruption``
    entries are applied post hoc, after collection.  For ``medium_replay``
    the records are the training run's replay buffer up to the medium
    checkpoint, so ``n_records`` only caps the size.
    """

    tier: str = "medium"
    n_records: int | None = None
    behavior_mode: str = "observed"
    hidden_during_collection: tuple[int, ...] = ()
    corruption: tuple = ()
    history_k: int | None = None
    seed: int = 0
    collect_epsilon: float = 0.05
    train_budget: int | None = None

    def __post_init__(self):
        if self.tier not in DATASET_TIERS:
            raise ValueError(f"unknown tier {self.tier!r}; valid: {DATASET_TIERS}")
        if self.behavior_mode not in BEHAVIOR_MODES:
            raise ValueError(f"unknown behavior mode {self.behavior_mode!r}")
        object.__setattr__(
            self, "hidden_during_collection", tuple(int(i) for i in self.hidden_during_collection)
        )
        object.__setattr__(self, "corruption", tuple(dict(c) for c in self.corruption))

    def to_dict(self) -> dict:
        return {
            "tier": self.tier,
            "n_records": self.n_records,
            "behavior_mode": self.behavior_mode,
            "hidden_during_collection": list(self.hidden_during_collection),
            "corruption": [dict(c) for c in self.corruption],
            "history_k": self.history_k,
            "seed": self.seed,
            "collect_epsilon": self.collect_epsilon,
            "train_budget": self.train_budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecipe":
        valid = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - valid)
        if unknown:
            raise ValueError(f"unknown dataset recipe keys {unknown}; valid: {sorted(valid)}")
        d = dict(d)
        if "hidden_during_collection" in d:
            d["hidden_during_collection"] = tuple(d["hidden_during_collection"])
        if "corruption" in d:
            d["corruption"] = tuple(d["corruption"])
        return cls(**d)


def _apply_corruptions(dataset: Dataset, corruption) -> Dataset:
    for tag in corruption:
        tag = dict(tag)
        kind = tag.pop("kind", None)
        if kind == "obs_noise":
            dataset = corrupt_obs_noise(
                dataset, tag["sigma"], tag.get("seed", dataset.meta.seed)
            )
        elif kind == "hidden_dims":
            dataset = corrupt_hide_dims(dataset, tag["indices"])
        else:
            raise ValueError(f"unknown corruption kind {kind!r}")
    return dataset


def generate_dataset(env: Environment, recipe: DatasetRecipe, refs=None) -> Dataset:
    """Materialize a dataset from a recipe on (a clone of) the given true env."""
    from . import agents
    from .wrappers import clone_env, with_hidden_dims

    n_records = recipe.n_records or DEFAULT_DATASET_SIZE.get(env.name, 20_000)
    budget = recipe.train_budget or DEFAULT_TIER_BUDGET.get(env.name, 20_000)

    collect_env = clone_env(env)
    if recipe.hidden_during_collection:
        collect_env = with_hidden_dims(collect_env, recipe.hidden_during_collection)

    # The behavior policy trains on whatever it will consume at collection
    # time: wrapped observations in observed mode, full state in privileged.
    if recipe.behavior_mode == "privileged":
        policy_env = FullStateObservation(clone_env(env))
    else:
        policy_env = clone_env(collect_env)
    if recipe.history_k is not None and recipe.history_k > 1:
        policy_env = HistoryStack(policy_env, recipe.history_k)

    def tier_policy(tier: str):
        tp = train_tier_policy(policy_env, tier, budget, recipe.seed, refs=refs)
        return agents.with_epsilon(tp.policy, recipe.collect_epsilon), tp

    if recipe.tier == "medium_replay":
        if recipe.history_k is not None and recipe.history_k > 1:
            raise ValueError("history-aware collection is not defined for medium_replay")
        tp = train_tier_policy(policy_env, "medium", budget, recipe.seed, refs=refs)
        replay = tp.train_result.replay_records(tp.checkpoint_index)
        records = replay[-n_records:]
        meta = DatasetMeta(
            env_name=env.name,
            env_params=env_params_dict(env),
            tier="medium_replay",
            behavior_mode=recipe.behavior_mode,
            seed=recipe.seed,
            record_count=len(records),
        )
        dataset = Dataset(meta, records)
    elif recipe.tier == "medium_expert":
        half = n_records // 2
        parts = []
        for tier, count in (("medium", half), ("expert", n_records - half)):
            pol, _ = tier_policy(tier)
            parts.append(
                _collect(collect_env, pol, count, recipe, tier)
            )
        dataset = concat_datasets(parts, "medium_expert", recipe.seed)
    else:
        pol, _ = tier_policy(recipe.tier)
        dataset = _collect(collect_env, pol, n_records, recipe, recipe.tier)

    return _apply_corruptions(dataset, recipe.corruption)


def _collect(collect_env, policy, count, recipe: DatasetRecipe, tier: str) -> Dataset:
    from .wrappers import clone_env

    env = clone_env(collect_env)
    if recipe.history_k is not None and recipe.history_k > 1:
        return collect_history_confounded(
            env, recipe.history_k, policy, count, recipe.seed, tier=tier
        )
    return collect_dataset(env, policy, count, recipe.behavior_mode, recipe.seed, tier=tier)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_META_KEYS = {
    "format_version",
    "env_name",
    "env_params",
    "tier",
    "corruption",
    "behavior_mode",
    "seed",
    "record_count",
}
_RECORD_KEYS = {"o", "a", "r", "o2", "d"}


def _action_to_json(action):
    if isinstance(action, np.ndarray):
        return action.tolist()
    return action


def write_dataset(dataset: Dataset, path) -> None:
    """Line-delimited text: one metadata object, then one object per record
    with keys o, a, r, o2, d.  Reals are written with full round-trip
    precision, so read(write(d)) == d bit-exactly."""
    for i, rec in enumerate(dataset.records):
        if not np.isfinite(rec.reward):
            raise ValueError(f"record {i}: non-finite reward cannot be serialized")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(dataset.meta.to_dict()) + "\n")
        for rec in dataset.records:
            fh.write(
                json.dumps(
                    {
                        "o": rec.obs.tolist(),
                        "a": _action_to_json(rec.action),
                        "r": rec.reward,
                        "o2": rec.next_obs.tolist(),
                        "d": rec.done,
                    }
                )
                + "\n"
            )


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise DatasetParseError("missing metadata line", line=1)
        try:
            meta_d = json.loads(header)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"metadata is not valid JSON ({exc.msg})", line=1)
        if not isinstance(meta_d, dict):
            raise DatasetParseError("metadata line must be a JSON object", line=1)
        version = meta_d.get("format_version")
        if version != FORMAT_VERSION:
            raise DatasetVersionError(
                f"unsupported format_version {version!r}; expected {FORMAT_VERSION!r}",
                line=1,
            )
        unknown = sorted(set(meta_d) - _META_KEYS)
        if unknown:
            raise DatasetParseError(f"unknown metadata keys {unknown}", line=1)
        missing = sorted(_META_KEYS - set(meta_d))
        if missing:
            raise DatasetParseError(f"missing metadata keys {missing}", line=1)
        try:
            meta = DatasetMeta(
                env_name=meta_d["env_name"],
                env_params=meta_d["env_params"],
                tier=meta_d["tier"],
                corruption=tuple(meta_d["corruption"]),
                behavior_mode=meta_d["behavior_mode"],
                seed=meta_d["seed"],
                format_version=version,
                record_count=meta_d["record_count"],
            )
        except ValueError as exc:
            raise DatasetParseError(str(exc), line=1)

        records: list[TransitionRecord] = []
        dim = None
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                raise DatasetParseError("blank record line", line=line_no)
            if len(records) >= meta.record_count:
                raise DatasetParseError(
                    f"more records than the declared record_count={meta.record_count}",
                    line=line_no,
                )
            try:
                rec_d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"record is not valid JSON ({exc.msg})", line=line_no)
            if not isinstance(rec_d, dict) or set(rec_d) != _RECORD_KEYS:
                raise DatasetParseError(
                    f"record must be an object with keys {sorted(_RECORD_KEYS)}",
                    line=line_no,
                )
            obs = np.asarray(rec_d["o"], dtype=float)
            next_obs = np.asarray(rec_d["o2"], dtype=float)
            if dim is None:
                dim = obs.shape[0]
            if obs.shape != (dim,) or next_obs.shape != (dim,):
                raise DatasetDimensionError(
                    f"observation dimensions {obs.shape}/{next_obs.shape} do not "
                    f"match the dataset dimension {dim}",
                    line=line_no,
                )
            action = rec_d["a"]
            if isinstance(action, list):
                action = np.asarray(action, dtype=float)
            records.append(
                TransitionRecord(obs, action, float(rec_d["r"]), next_obs, bool(rec_d["d"]))
            )
        if len(records) != meta.record_count:
            raise DatasetParseError(
                f"expected {meta.record_count} records, file ends after {len(records)}",
                line=len(records) + 2,
            )
    return Dataset(meta, records)
