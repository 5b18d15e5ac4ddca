"""Probabilistic ensemble dynamics models.

Closed-form linear-Gaussian regressors in fixed feature expansions stand in
for neural dynamics models.  Two modes share one machinery:

* ``direct``    -- predict (next_obs, reward) from (obs, action);
* ``correction``-- predict (next_obs - simulator_next_obs, reward), i.e. an
  additive correction anchored to a simulator's one-step prediction.

Each ensemble member is trained on its own bootstrap resample (and, for
random Fourier features, its own feature draw); per-target-dimension residual
variance on a held-out split provides the Gaussian sampling width and the
uncertainty penalty used by model-based agents.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .envs import ContinuousActions, DiscreteActions, Environment
from .seeding import derived_rng


class ModelFitError(RuntimeError):
    """Raised when a regression cannot be solved as configured."""


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------


class FeatureMap:
    """Deterministic feature expansion with a bias column.

    Two kinds: ``polynomial`` (all monomials up to a total degree) and
    ``random_fourier`` (cosine features with a seeded frequency draw).  An
    optional affine input transform ``(x + shift) * scale`` is part of the
    map's identity; it exists purely for conditioning.
    """

    def __init__(self, kind, input_dim, shift, scale, degree=None, count=None,
                 bandwidth=None, seed=None, dim_degrees=None):
        self.kind = kind
        self.input_dim = int(input_dim)
        self.shift = np.asarray(shift, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.degree = degree
        self.count = count
        self.bandwidth = bandwidth
        self.seed = seed
        self.dim_degrees = tuple(dim_degrees) if dim_degrees is not None else None
        if kind == "polynomial":
            self._exponents = [
                exps
                for d in range(degree + 1)
                for exps in _exponent_tuples(self.input_dim, d)
                if self._within_caps(exps)
            ]
            self.output_dim = len(self._exponents)
        elif kind == "random_fourier":
            rng = derived_rng(int(seed))
            self._freqs = rng.standard_normal((count, self.input_dim)) / bandwidth
            self._phases = rng.uniform(0.0, 2.0 * math.pi, size=count)
            self.output_dim = count + 1  # + bias
        else:
            raise ValueError(f"unknown feature kind {kind!r}")

    def _within_caps(self, exps) -> bool:
        if self.dim_degrees is None:
            return True
        return all(e <= self.dim_degrees[dim] for dim, e in exps)

    @classmethod
    def polynomial(cls, input_dim: int, degree: int, shift=None, scale=None,
                   dim_degrees=None) -> "FeatureMap":
        """All monomials of total degree <= ``degree``; ``dim_degrees``
        optionally caps the exponent per input dimension (on a finite grid of
        k levels per dimension, caps of k-1 give a complete full-rank basis).
        """
        if degree < 0:
            raise ValueError("polynomial degree must be >= 0")
        shift = np.zeros(input_dim) if shift is None else shift
        scale = np.ones(input_dim) if scale is None else scale
        return cls("polynomial", input_dim, shift, scale, degree=int(degree),
                   dim_degrees=dim_degrees)

    @classmethod
    def random_fourier(cls, input_dim: int, count: int, bandwidth: float,
                       seed: int, shift=None, scale=None) -> "FeatureMap":
        if count < 1:
            raise ValueError("feature count must be >= 1")
        if bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        shift = np.zeros(input_dim) if shift is None else shift
        scale = np.ones(input_dim) if scale is None else scale
        return cls("random_fourier", input_dim, shift, scale,
                   count=int(count), bandwidth=float(bandwidth), seed=int(seed))

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.input_dim:
            raise ValueError(
                f"feature map expects input dim {self.input_dim}, got {X.shape[1]}"
            )
        Xs = (X + self.shift) * self.scale
        if self.kind == "polynomial":
            cols = np.empty((X.shape[0], self.output_dim))
            for j, exps in enumerate(self._exponents):
                col = np.ones(X.shape[0])
                for dim, e in exps:
                    col = col * Xs[:, dim] ** e
                cols[:, j] = col
            return cols
        Z = Xs @ self._freqs.T + self._phases
        phi = math.sqrt(2.0 / self.count) * np.cos(Z)
        return np.concatenate([np.ones((X.shape[0], 1)), phi], axis=1)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
        }
        if self.kind == "polynomial":
            out["degree"] = self.degree
            out["dim_degrees"] = (
                list(self.dim_degrees) if self.dim_degrees is not None else None
            )
        else:
            out.update(count=self.count, bandwidth=self.bandwidth, seed=self.seed)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        if d["kind"] == "polynomial":
            return cls.polynomial(d["input_dim"], d["degree"], d["shift"], d["scale"],
                                  d.get("dim_degrees"))
        return cls.random_fourier(
            d["input_dim"], d["count"], d["bandwidth"], d["seed"], d["shift"], d["scale"]
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureMap) and self.to_dict() == other.to_dict()


def _exponent_tuples(dim: int, degree: int):
    """Non-zero (dim, exponent) pairs for every monomial of exact total degree."""
    if degree == 0:
        yield ()
        return
    for combo in itertools.combinations_with_replacement(range(dim), degree):
        exps = {}
        for d in combo:
            exps[d] = exps.get(d, 0) + 1
        yield tuple(sorted(exps.items()))


# ---------------------------------------------------------------------------
# Model input encoding
# ---------------------------------------------------------------------------


def model_input_dim(obs_dim: int, action_space, encoding: str = "onehot") -> int:
    if isinstance(action_space, DiscreteActions):
        return obs_dim + (action_space.count if encoding == "onehot" else 1)
    return obs_dim + action_space.dim


def encode_model_input(obs: np.ndarray, actions, action_space,
                       encoding: str = "onehot") -> np.ndarray:
    """Stack observations with actions.

    Discrete actions are one-hot by default; ``numeric`` encodes the index as
    one real input, which keeps polynomial bases small.
    """
    O = np.asarray(obs, dtype=float)
    if O.ndim == 1:
        O = O[None, :]
    n = O.shape[0]
    if isinstance(action_space, DiscreteActions):
        idx = np.asarray(actions, dtype=int).reshape(n)
        if encoding == "numeric":
            A = idx.astype(float)[:, None]
        else:
            A = np.zeros((n, action_space.count))
            A[np.arange(n), idx] = 1.0
    else:
        A = np.asarray(actions, dtype=float).reshape(n, action_space.dim)
    return np.concatenate([O, A], axis=1)


# ---------------------------------------------------------------------------
# Gaussian regressor and ensemble
# ---------------------------------------------------------------------------


@dataclass
class GaussianRegressor:
    features: FeatureMap
    weights: np.ndarray  # (F, T)
    noise_var: np.ndarray  # (T,)
    ridge: float

    def predict_mean(self, X: np.ndarray) -> np.ndarray:
        return self.features.transform(X) @ self.weights

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GaussianRegressor)
            and self.features == other.features
            and self.ridge == other.ridge
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.noise_var, other.noise_var)
        )


def _solve_ridge(Phi: np.ndarray, Y: np.ndarray, ridge: float) -> np.ndarray:
    # solved as an augmented least-squares problem: orthogonal methods keep
    # the monomial bases' poor conditioning from squaring
    F = Phi.shape[1]
    A = np.concatenate([Phi, math.sqrt(ridge) * np.eye(F)], axis=0)
    b = np.concatenate([Y, np.zeros((F, Y.shape[1]))], axis=0)
    try:
        W, *_ = np.linalg.lstsq(A, b, rcond=None)
        if not np.isfinite(W).all():
            raise np.linalg.LinAlgError("non-finite solution")
        return W
    except np.linalg.LinAlgError as exc:
        raise ModelFitError(
            f"singular normal equations at ridge={ridge}; increase the ridge "
            "or reduce the feature count"
        ) from exc


def fit_gaussian_regressor(
    features: FeatureMap,
    X: np.ndarray,
    Y: np.ndarray,
    ridge: float,
    val_X: np.ndarray,
    val_Y: np.ndarray,
) -> GaussianRegressor:
    if ridge <= 0:
        raise ValueError("ridge must be > 0")
    Phi = features.transform(X)
    W = _solve_ridge(Phi, Y, ridge)
    resid = val_Y - features.transform(val_X) @ W
    noise_var = np.mean(resid**2, axis=0)
    return GaussianRegressor(features, W, noise_var, float(ridge))


@dataclass(frozen=True)
class ModelConfig:
    """Configuration shared by direct and correction ensembles."""

    n_members: int = 5
    ridge: float = 1e-3
    holdout_fraction: float = 0.1
    bootstrap: bool = True
    seed: int = 0
    discrete_action_encoding: str = "onehot"
    feature_kind: str = "random_fourier"
    feature_count: int = 256
    bandwidth: float = 1.0
    poly_degree: int = 3
    poly_dim_degrees: tuple | None = None
    input_shift: tuple | None = None
    input_scale: tuple | None = None

    def feature_map(self, input_dim: int, member_seed: int) -> FeatureMap:
        shift = self.input_shift
        scale = self.input_scale
        if self.feature_kind == "polynomial":
            return FeatureMap.polynomial(input_dim, self.poly_degree, shift, scale,
                                         self.poly_dim_degrees)
        return FeatureMap.random_fourier(
            input_dim, self.feature_count, self.bandwidth, member_seed, shift, scale
        )


@dataclass
class CorrectionEnsemble:
    """Ensemble over targets (state-part, reward); ``mode`` fixes whether the
    state-part is the next observation itself or a correction added to a
    simulator's prediction."""

    members: list[GaussianRegressor]
    mode: str  # "direct" | "correction"
    obs_dim: int
    action_space: DiscreteActions | ContinuousActions
    action_encoding: str = "onehot"

    def __post_init__(self):
        if self.mode not in ("direct", "correction"):
            raise ValueError(f"unknown ensemble mode {self.mode!r}")
        if len(self.members) < 1:
            raise ValueError("ensemble needs at least one member")
        dims = {m.weights.shape for m in self.members}
        if len(dims) != 1:
            raise ValueError("ensemble members must share input/target dimensions")

    @property
    def n_members(self) -> int:
        return len(self.members)

    def _encode(self, obs, actions) -> np.ndarray:
        return encode_model_input(obs, actions, self.action_space, self.action_encoding)

    def member_means(self, obs, actions) -> np.ndarray:
        """Raw member mean targets, shape (N, n, T)."""
        X = self._encode(obs, actions)
        return np.stack([m.predict_mean(X) for m in self.members])

    def predict(self, member: int, obs, action, sim_next_obs=None):
        """Mean next observation, mean reward and per-dimension variance for
        one member.  Correction mode requires the simulator prediction."""
        X = self._encode(obs, action)
        mu = self.members[member].predict_mean(X)[0]
        state_part, reward = mu[: self.obs_dim], float(mu[self.obs_dim])
        if self.mode == "correction":
            if sim_next_obs is None:
                raise ValueError("correction mode requires the simulator prediction")
            next_obs = np.asarray(sim_next_obs, dtype=float) + state_part
        else:
            next_obs = state_part
        return next_obs, reward, self.members[member].noise_var.copy()

    def sample(self, member: int, obs, action, rng: np.random.Generator,
               sim_next_obs=None):
        """Draw (next_obs, reward, raw_target_draw) from one member's Gaussian."""
        X = self._encode(obs, action)
        m = self.members[member]
        mu = m.predict_mean(X)[0]
        draw = mu + np.sqrt(m.noise_var) * rng.standard_normal(mu.shape)
        state_part, reward = draw[: self.obs_dim], float(draw[self.obs_dim])
        if self.mode == "correction":
            if sim_next_obs is None:
                raise ValueError("correction mode requires the simulator prediction")
            next_obs = np.asarray(sim_next_obs, dtype=float) + state_part
        else:
            next_obs = state_part
        return next_obs, reward, draw

    def penalty(self, obs, action, mode: str = "disagreement") -> float:
        return float(self.penalty_batch(obs, action, mode)[0])

    def penalty_batch(self, obs, actions, mode: str = "disagreement") -> np.ndarray:
        """Uncertainty penalty per input row; always >= 0.

        ``frobenius``: largest member Frobenius norm of the (diagonal)
        covariance, which is input-independent here.  ``disagreement``:
        largest member deviation from the ensemble mean prediction.
        """
        X = self._encode(obs, actions)
        n = X.shape[0]
        if mode == "frobenius":
            worst = max(float(np.sqrt(m.noise_var.sum())) for m in self.members)
            return np.full(n, worst)
        if mode == "disagreement":
            mus = np.stack([m.predict_mean(X) for m in self.members])
            center = mus.mean(axis=0)
            return np.linalg.norm(mus - center, axis=2).max(axis=0)
        raise ValueError(f"unknown penalty mode {mode!r}")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CorrectionEnsemble)
            and self.mode == other.mode
            and self.obs_dim == other.obs_dim
            and self.action_space == other.action_space
            and self.members == other.members
        )


# ---------------------------------------------------------------------------
# Simulator augmentation and fitting
# ---------------------------------------------------------------------------


@dataclass
class AugmentedDataset:
    """A dataset plus the simulator's one-step prediction for every record."""

    dataset: Dataset
    sim_next_obs: np.ndarray  # (n, obs_dim)


def augment_with_sim(dataset: Dataset, simulator: Environment) -> AugmentedDataset:
    """Evaluate the simulator's next-observation prediction for each record.

    Deterministic: repeated calls produce identical augmentations.  Raises if
    an observation cannot be decoded into a simulator state.
    """
    preds = np.empty((len(dataset.records), dataset.records[0].obs.shape[0]))
    for i, rec in enumerate(dataset.records):
        preds[i], _ = simulator.simulate_step(rec.obs, rec.action)
    return AugmentedDataset(dataset, preds)


def _fit_ensemble(X, Y, config: ModelConfig, mode, obs_dim, action_space,
                  action_encoding) -> CorrectionEnsemble:
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 records to fit an ensemble")
    split_rng = derived_rng(config.seed, 0xF17)
    perm = split_rng.permutation(n)
    n_val = max(1, int(round(n * config.holdout_fraction)))
    n_val = min(n_val, n - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    members = []
    for i in range(config.n_members):
        member_rng = derived_rng(config.seed, 0xB00, i)
        if config.bootstrap:
            rows = train_idx[member_rng.integers(0, len(train_idx), len(train_idx))]
        else:
            rows = train_idx
        fm = config.feature_map(X.shape[1], derived_rng(config.seed, 0xFEA, i).integers(2**31))
        members.append(
            fit_gaussian_regressor(fm, X[rows], Y[rows], config.ridge,
                                   X[val_idx], Y[val_idx])
        )
    return CorrectionEnsemble(members, mode, obs_dim, action_space, action_encoding)


def _dataset_action_space(dataset: Dataset):
    A = dataset.arrays()[1]
    if np.issubdtype(A.dtype, np.integer):
        return DiscreteActions(int(A.max()) + 1)
    dim = 1 if A.ndim == 1 else A.shape[1]
    return ContinuousActions(float(A.min()), float(A.max()), dim)


def fit_correction_ensemble(
    augmented: AugmentedDataset,
    config: ModelConfig,
    action_space=None,
) -> CorrectionEnsemble:
    """Fit regressors for (next_obs - sim_next_obs, reward) on (obs, action).

    The next observation enters training only through that residual, so a
    constant shared shift of both quantities leaves the fit unchanged.
    """
    ds = augmented.dataset
    O, A, R, O2, _ = ds.arrays()
    space = action_space if action_space is not None else _dataset_action_space(ds)
    enc = config.discrete_action_encoding
    X = encode_model_input(O, A, space, enc)
    Y = np.concatenate([O2 - augmented.sim_next_obs, R[:, None]], axis=1)
    return _fit_ensemble(X, Y, config, "correction", O.shape[1], space, enc)


def fit_direct_ensemble(
    dataset: Dataset, config: ModelConfig, action_space=None
) -> CorrectionEnsemble:
    """Fit regressors for (next_obs, reward) on (obs, action); no simulator."""
    O, A, R, O2, _ = dataset.arrays()
    space = action_space if action_space is not None else _dataset_action_space(dataset)
    enc = config.discrete_action_encoding
    X = encode_model_input(O, A, space, enc)
    Y = np.concatenate([O2, R[:, None]], axis=1)
    return _fit_ensemble(X, Y, config, "direct", O.shape[1], space, enc)


# ---------------------------------------------------------------------------
# Serialization (round-trip identity is the only contract)
# ---------------------------------------------------------------------------

ENSEMBLE_FORMAT_VERSION = "hybench-ensemble/1"


def ensemble_to_dict(ens: CorrectionEnsemble) -> dict:
    if isinstance(ens.action_space, DiscreteActions):
        space = {"type": "discrete", "count": ens.action_space.count}
    else:
        space = {
            "type": "continuous",
            "low": ens.action_space.low,
            "high": ens.action_space.high,
            "dim": ens.action_space.dim,
        }
    return {
        "format_version": ENSEMBLE_FORMAT_VERSION,
        "mode": ens.mode,
        "obs_dim": ens.obs_dim,
        "action_encoding": ens.action_encoding,
        "action_space": space,
        "members": [
            {
                "features": m.features.to_dict(),
                "weights": m.weights.tolist(),
                "noise_var": m.noise_var.tolist(),
                "ridge": m.ridge,
            }
            for m in ens.members
        ],
    }


def ensemble_from_dict(d: dict) -> CorrectionEnsemble:
    if d.get("format_version") != ENSEMBLE_FORMAT_VERSION:
        raise ValueError(
            f"unsupported ensemble format {d.get('format_version')!r}; "
            f"expected {ENSEMBLE_FORMAT_VERSION!r}"
        )
    space_d = d["action_space"]
    if space_d["type"] == "discrete":
        space = DiscreteActions(space_d["count"])
    else:
        space = ContinuousActions(space_d["low"], space_d["high"], space_d["dim"])
    members = [
        GaussianRegressor(
            FeatureMap.from_dict(m["features"]),
            np.array(m["weights"]),
            np.array(m["noise_var"]),
            m["ridge"],
        )
        for m in d["members"]
    ]
    return CorrectionEnsemble(members, d["mode"], d["obs_dim"], space,
                              d.get("action_encoding", "onehot"))


def save_ensemble(ens: CorrectionEnsemble, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ensemble_to_dict(ens), fh)


def load_ensemble(path) -> CorrectionEnsemble:
    with open(path, encoding="utf-8") as fh:
        return ensemble_from_dict(json.load(fh))
