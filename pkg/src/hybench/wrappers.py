"""Composable error-injection wrappers.

Each wrapper injects one kind of simulator/reality discrepancy into an
environment while preserving its observation dimension, action space,
horizon and done semantics:

* transition-parameter overrides (wrong physics),
* additive Gaussian observation noise,
* observation dimensions fixed to zero,
* additive Gaussian noise on executed actions (continuous envs only),
* a FIFO action-execution delay.

``full_state`` always bypasses observation wrappers: it is the privileged
channel used to manufacture confounded datasets.  Every wrapper is the exact
identity when its parameter is the neutral element (empty override map,
sigma = 0, delay = 0, empty index set).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .envs import ContinuousActions, EnvError, Environment, StepResult
from .seeding import ACTION_NOISE, OBS_NOISE, derived_rng


class EnvWrapper(Environment):
    """Delegating base wrapper.  Subclasses store their own arguments and
    implement ``_rebuild`` so a wrapper chain can be reconstructed around a
    replacement inner environment."""

    def __init__(self, env: Environment):
        self.env = env

    @property
    def name(self) -> str:  # type: ignore[override]
        return self.env.name

    @property
    def obs_dim(self) -> int:  # type: ignore[override]
        return self.env.obs_dim

    @property
    def action_space(self):  # type: ignore[override]
        return self.env.action_space

    @property
    def params(self):
        return self.env.params

    @property
    def unwrapped(self) -> Environment:
        return self.env.unwrapped

    def _rebuild(self, inner: Environment) -> "EnvWrapper":
        raise NotImplementedError

    def with_params(self, **overrides) -> Environment:
        return self._rebuild(self.env.with_params(**overrides))

    def reset(self, seed: int | None = None) -> np.ndarray:
        return self.env.reset(seed)

    def step(self, action) -> StepResult:
        return self.env.step(action)

    def full_state(self) -> np.ndarray:
        return self.env.full_state()

    def simulate_step(self, obs, action):
        return self.env.simulate_step(obs, action)


def clone_env(env: Environment) -> Environment:
    """Fresh, unseeded copy of an environment including its wrapper chain."""
    if isinstance(env, EnvWrapper):
        return env._rebuild(clone_env(env.env))
    return env.with_params()


def env_signature(env: Environment) -> tuple:
    """Hashable description of an environment including its wrapper chain."""

    def _freeze(value):
        if isinstance(value, (int, float, str, bool, type(None))):
            return value
        if isinstance(value, tuple):
            return tuple(_freeze(v) for v in value)
        return repr(value)

    if isinstance(env, EnvWrapper):
        inner = env_signature(env.env)
        extras = tuple(
            (k, _freeze(v))
            for k, v in sorted(vars(env).items())
            if k != "env" and not k.startswith("_")
        )
        return (type(env).__name__, extras, inner)
    return (type(env).__name__, repr(env.params))


def with_transition_error(env: Environment, overrides: dict) -> Environment:
    """Copy of ``env`` whose innermost dynamics parameters are overridden.

    Works through wrapper chains: the chain is rebuilt around a base
    environment with the new parameters.  Unknown parameter names are an
    error; an empty override map yields a bit-identical environment.
    """
    if isinstance(env, EnvWrapper):
        return env._rebuild(with_transition_error(env.env, overrides))
    return env.with_params(**dict(overrides))


class ObsNoiseWrapper(EnvWrapper):
    """Adds i.i.d. N(0, sigma^2) per dimension to every returned observation.

    The stored environment state stays clean and ``full_state`` is untouched.
    The noise stream is derived from the reset seed with its own tag, so the
    inner dynamics see exactly the seed an unwrapped environment would.
    """

    def __init__(self, env: Environment, sigma: float):
        if sigma < 0:
            raise ValueError(f"observation noise sigma must be >= 0, got {sigma}")
        super().__init__(env)
        self.sigma = float(sigma)
        self._noise_rng = None

    def _rebuild(self, inner: Environment) -> "ObsNoiseWrapper":
        return ObsNoiseWrapper(inner, self.sigma)

    def _noisy(self, obs: np.ndarray) -> np.ndarray:
        if self.sigma == 0.0:
            return obs
        if self._noise_rng is None:
            raise EnvError("observation-noise wrapper used before a seeded reset")
        return obs + self.sigma * self._noise_rng.standard_normal(obs.shape)

    def reset(self, seed: int | None = None) -> np.ndarray:
        obs = self.env.reset(seed)
        if seed is not None:
            self._noise_rng = derived_rng(int(seed), OBS_NOISE)
        return self._noisy(obs)

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        return StepResult(self._noisy(res.obs), res.reward, res.done)


def with_obs_noise(env: Environment, sigma: float) -> ObsNoiseWrapper:
    return ObsNoiseWrapper(env, sigma)


class HiddenDimsWrapper(EnvWrapper):
    """Fixes the named observation entries to exactly 0.0.

    The observation-space dimension is deliberately unchanged so downstream
    consumers keep a single observation definition.
    """

    def __init__(self, env: Environment, indices):
        idx = tuple(sorted({int(i) for i in indices}))
        for i in idx:
            if not 0 <= i < env.obs_dim:
                raise ValueError(
                    f"hidden index {i} out of range for observation dim {env.obs_dim}"
                )
        super().__init__(env)
        self.indices = idx

    def _rebuild(self, inner: Environment) -> "HiddenDimsWrapper":
        return HiddenDimsWrapper(inner, self.indices)

    def _mask(self, obs: np.ndarray) -> np.ndarray:
        if not self.indices:
            return obs
        out = obs.copy()
        out[list(self.indices)] = 0.0
        return out

    def reset(self, seed: int | None = None) -> np.ndarray:
        return self._mask(self.env.reset(seed))

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        return StepResult(self._mask(res.obs), res.reward, res.done)


def with_hidden_dims(env: Environment, indices) -> HiddenDimsWrapper:
    return HiddenDimsWrapper(env, indices)


class ActionNoiseWrapper(EnvWrapper):
    """Executes clamp(action + N(0, sigma^2)) instead of the submitted action.

    The returned transition reflects the noisy action; the agent never
    observes the perturbation.  ``last_executed_action`` records what
    actually ran, for diagnostics only.
    """

    def __init__(self, env: Environment, sigma: float):
        if sigma < 0:
            raise ValueError(f"action noise sigma must be >= 0, got {sigma}")
        if not isinstance(env.action_space, ContinuousActions):
            raise ValueError("action noise requires a continuous action space")
        super().__init__(env)
        self.sigma = float(sigma)
        self._noise_rng = None
        self.last_executed_action: np.ndarray | None = None

    def _rebuild(self, inner: Environment) -> "ActionNoiseWrapper":
        return ActionNoiseWrapper(inner, self.sigma)

    def reset(self, seed: int | None = None) -> np.ndarray:
        obs = self.env.reset(seed)
        if seed is not None:
            self._noise_rng = derived_rng(int(seed), ACTION_NOISE)
        self.last_executed_action = None
        return obs

    def step(self, action) -> StepResult:
        if self.sigma == 0.0:
            return self.env.step(action)
        if self._noise_rng is None:
            raise EnvError("action-noise wrapper used before a seeded reset")
        space = self.env.action_space
        a = np.asarray(action, dtype=float).reshape(-1)
        noisy = a + self.sigma * self._noise_rng.standard_normal(a.shape)
        executed = np.clip(noisy, space.low, space.high)
        self.last_executed_action = executed
        return self.env.step(executed)


def with_action_noise(env: Environment, sigma: float) -> ActionNoiseWrapper:
    return ActionNoiseWrapper(env, sigma)


class ActionDelayWrapper(EnvWrapper):
    """Delays action execution by ``delay`` steps through a FIFO queue that
    starts filled with zero-actions at every reset."""

    def __init__(self, env: Environment, delay: int):
        if delay < 0:
            raise ValueError(f"action delay must be >= 0, got {delay}")
        super().__init__(env)
        self.delay = int(delay)
        self._queue: deque = deque()

    def _rebuild(self, inner: Environment) -> "ActionDelayWrapper":
        return ActionDelayWrapper(inner, self.delay)

    def _zero_action(self):
        space = self.env.action_space
        if isinstance(space, ContinuousActions):
            return np.zeros(space.dim)
        return 0

    def reset(self, seed: int | None = None) -> np.ndarray:
        obs = self.env.reset(seed)
        self._queue = deque(self._zero_action() for _ in range(self.delay))
        return obs

    def step(self, action) -> StepResult:
        if self.delay == 0:
            return self.env.step(action)
        self._queue.append(action)
        executed = self._queue.popleft()
        return self.env.step(executed)


def with_action_delay(env: Environment, delay: int) -> ActionDelayWrapper:
    return ActionDelayWrapper(env, delay)


# ---------------------------------------------------------------------------
# Declarative perturbation specs (serializable into benchmark configs)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionParamOverride:
    overrides: dict

    kind = "transition_param_override"


@dataclass(frozen=True)
class ObsNoise:
    sigma: float

    kind = "obs_noise"


@dataclass(frozen=True)
class HiddenDims:
    indices: tuple[int, ...]

    kind = "hidden_dims"


@dataclass(frozen=True)
class ActionNoise:
    sigma: float

    kind = "action_noise"


@dataclass(frozen=True)
class ActionDelay:
    delay: int

    kind = "action_delay"


PerturbSpec = TransitionParamOverride | ObsNoise | HiddenDims | ActionNoise | ActionDelay


def apply_perturbation(env: Environment, spec: PerturbSpec) -> Environment:
    if isinstance(spec, TransitionParamOverride):
        return with_transition_error(env, spec.overrides)
    if isinstance(spec, ObsNoise):
        return with_obs_noise(env, spec.sigma)
    if isinstance(spec, HiddenDims):
        return with_hidden_dims(env, spec.indices)
    if isinstance(spec, ActionNoise):
        return with_action_noise(env, spec.sigma)
    if isinstance(spec, ActionDelay):
        return with_action_delay(env, spec.delay)
    raise TypeError(f"not a perturbation spec: {spec!r}")


def apply_perturbations(env: Environment, specs) -> Environment:
    """Apply perturbation specs in order; later specs wrap earlier ones, so a
    hidden-dims spec listed after observation noise zeroes the noisy values."""
    for spec in specs:
        env = apply_perturbation(env, spec)
    return env


def perturb_to_dict(spec: PerturbSpec) -> dict:
    if isinstance(spec, TransitionParamOverride):
        return {"kind": spec.kind, "overrides": dict(spec.overrides)}
    if isinstance(spec, ObsNoise):
        return {"kind": spec.kind, "sigma": spec.sigma}
    if isinstance(spec, HiddenDims):
        return {"kind": spec.kind, "indices": list(spec.indices)}
    if isinstance(spec, ActionNoise):
        return {"kind": spec.kind, "sigma": spec.sigma}
    if isinstance(spec, ActionDelay):
        return {"kind": spec.kind, "delay": spec.delay}
    raise TypeError(f"not a perturbation spec: {spec!r}")


_PERTURB_FIELDS = {
    "transition_param_override": {"overrides"},
    "obs_noise": {"sigma"},
    "hidden_dims": {"indices"},
    "action_noise": {"sigma"},
    "action_delay": {"delay"},
}


def perturb_from_dict(record: dict) -> PerturbSpec:
    record = dict(record)
    kind = record.pop("kind", None)
    if kind not in _PERTURB_FIELDS:
        raise ValueError(
            f"unknown perturbation kind {kind!r}; valid: {sorted(_PERTURB_FIELDS)}"
        )
    unknown = sorted(set(record) - _PERTURB_FIELDS[kind])
    if unknown:
        raise ValueError(f"unknown keys {unknown} for perturbation kind {kind!r}")
    missing = sorted(_PERTURB_FIELDS[kind] - set(record))
    if missing:
        raise ValueError(f"missing keys {missing} for perturbation kind {kind!r}")
    if kind == "transition_param_override":
        return TransitionParamOverride(dict(record["overrides"]))
    if kind == "obs_noise":
        return ObsNoise(float(record["sigma"]))
    if kind == "hidden_dims":
        return HiddenDims(tuple(int(i) for i in record["indices"]))
    if kind == "action_noise":
        return ActionNoise(float(record["sigma"]))
    return ActionDelay(int(record["delay"]))
