"""Fusing refined positions with refined velocities.

Three integration methods plus ablation variants:

* soft-KNN: exact K-nearest-neighbor regression over stored (key, target)
  pose pairs where, per component, neighbors whose implied velocity is
  inconsistent with the refined velocity are dropped before averaging.
  Consistency is a two-sided tail test under a per-component zero-mean
  Gaussian fitted to validation residuals.
* Kalman: per-component scalar filter with identity dynamics, refined
  velocities as the control input and refined positions as measurements.
  Noise diagonals come from validation residual variances.
* The chain: Kalman states re-regressed through a second soft-KNN whose
  velocity check uses a network trained on Kalman-state velocities.

run_pipeline() exposes these plus the raw/position-only baselines and the
ablations that drop one refinement stage at a time.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import special

from . import drnn, seqio
from .errors import ConfigurationError, NumericalError
from .skeleton import (
    POSE_DIM,
    Encoding,
    KinematicTree,
    SkeletonSequence,
    velocities,
)

VARIANCE_FLOOR = 1e-12

PIPELINE_VARIANTS = (
    "raw",
    "pdrnn",
    "sknn",
    "kf",
    "sknnkf",
    "sknn_minus_pdrnn",
    "sknn_minus_vdrnn",
    "naive_sknn",
    "kf_minus_pdrnn",
)


@dataclass(frozen=True)
class GateModel:
    """Per-component velocity-consistency test.

    A deviation d passes for component j when the two-sided tail probability
    P(|N(0, sigma2[j])| > d) exceeds theta, i.e. d < sqrt(2 sigma2[j]) *
    erfcinv(theta). theta = 0 disables the gate (everything passes).
    """

    sigma2: np.ndarray  # (48,)
    theta: float

    def __post_init__(self):
        sigma2 = np.asarray(self.sigma2, dtype=np.float64)
        if sigma2.shape != (POSE_DIM,):
            raise ValueError(f"sigma2 must have shape ({POSE_DIM},), got {sigma2.shape}")
        if np.any(sigma2 <= 0.0) or not np.all(np.isfinite(sigma2)):
            raise ValueError("sigma2 must be positive and finite elementwise")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must lie in [0, 1)")
        sigma2 = sigma2.copy()
        sigma2.setflags(write=False)
        object.__setattr__(self, "sigma2", sigma2)
        thresholds = np.sqrt(2.0 * sigma2) * special.erfcinv(self.theta)
        thresholds.setflags(write=False)
        object.__setattr__(self, "_thresholds", thresholds)

    def passes(self, deviation) -> np.ndarray:
        """Boolean mask over (..., 48) absolute deviations."""
        return np.asarray(deviation, dtype=np.float64) < self._thresholds

    def tail_probability(self, deviation) -> np.ndarray:
        d = np.asarray(deviation, dtype=np.float64)
        return special.erfc(d / np.sqrt(2.0 * self.sigma2))

    def to_json_dict(self) -> dict:
        return {"sigma2": [float(v) for v in self.sigma2], "theta": self.theta}

    @classmethod
    def from_json_dict(cls, data: dict) -> "GateModel":
        return cls(np.asarray(data["sigma2"], dtype=np.float64), float(data["theta"]))


def estimate_gate(validation_residuals, theta: float = 0.05) -> GateModel:
    """Fit per-component variances from velocity residuals, mean pinned at 0.

    Components with zero empirical variance are floored at 1e-12 with a
    warning.
    """
    res = np.asarray(validation_residuals, dtype=np.float64)
    if res.ndim != 2 or res.shape[1] != POSE_DIM:
        raise ValueError(f"residuals must be (n, {POSE_DIM}), got {res.shape}")
    if res.shape[0] < 2:
        raise ValueError("need at least 2 residual vectors")
    sigma2 = np.mean(res * res, axis=0)
    if np.any(sigma2 < VARIANCE_FLOOR):
        warnings.warn("zero-variance gate components floored at 1e-12", stacklevel=2)
        sigma2 = np.maximum(sigma2, VARIANCE_FLOOR)
    return GateModel(sigma2, theta)


@dataclass(frozen=True)
class NeighborStore:
    """Paired (key pose, target pose) training points for KNN regression."""

    keys: np.ndarray  # (n, 48)
    targets: np.ndarray  # (n, 48)
    k: int = 300

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if keys.ndim != 2 or keys.shape[1] != POSE_DIM:
            raise ValueError(f"keys must be (n, {POSE_DIM}), got {keys.shape}")
        if targets.shape != keys.shape:
            raise ValueError("keys and targets must have matching shapes")
        if keys.shape[0] < 1:
            raise ValueError("store must not be empty")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        keys = keys.copy()
        targets = targets.copy()
        keys.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return self.keys.shape[0]


def nearest_indices(store: NeighborStore, query) -> np.ndarray:
    """Indices of the k nearest keys by Euclidean distance.

    Exact brute-force search; ties at equal distance go to the lower store
    index. k is clamped to the store size.
    """
    q = np.asarray(query, dtype=np.float64)
    d2 = np.sum((store.keys - q) ** 2, axis=1)
    k = min(store.k, len(store))
    return np.argsort(d2, kind="stable")[:k]


def sknn_step(store: NeighborStore, gate: GateModel, query, velocity, prev) -> np.ndarray:
    """One step of gated KNN regression.

    For the K nearest stored keys to the query pose, each neighbor's implied
    per-component velocity (its key minus the previous fused output) is
    checked against the refined velocity through the gate; the output
    component is the mean of the surviving neighbors' target components.
    Components where the gate rejects every neighbor fall back to the
    ungated K-neighbor mean.
    """
    query = np.asarray(query, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    idx = nearest_indices(store, query)
    keys = store.keys[idx]
    targets = store.targets[idx]
    deviation = np.abs((keys - prev) - velocity)
    ok = gate.passes(deviation)
    out = np.empty(POSE_DIM)
    for j in range(POSE_DIM):
        kept = targets[ok[:, j], j]
        out[j] = kept.mean() if kept.size else targets[:, j].mean()
    return out


# The chained method runs the identical algorithm over a store keyed by
# Kalman states, with its own gate; only the parameterization differs.
sknnkf_step = sknn_step


@dataclass(frozen=True)
class KalmanState:
    """Per-component scalar filter state: estimate plus diagonal covariances."""

    x: np.ndarray  # (48,) state estimate
    P: np.ndarray  # (48,) estimate variances
    Q: np.ndarray  # (48,) process-noise variances
    R: np.ndarray  # (48,) measurement-noise variances

    def __post_init__(self):
        for name in ("x", "P", "Q", "R"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (POSE_DIM,):
                raise ValueError(f"{name} must have shape ({POSE_DIM},), got {arr.shape}")
            if name != "x" and np.any(arr < 0.0):
                raise ValueError(f"{name} must be non-negative elementwise")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def kalman_step(state: KalmanState, velocity, measurement) -> tuple[KalmanState, np.ndarray]:
    """Predict with the velocity control, then correct with the measurement.

    Identity dynamics throughout: predict x_pred = x + v, P_pred = P + Q;
    update with gain P_pred / (P_pred + R). Returns the new state and the
    posterior estimate as the fused pose.
    """
    velocity = np.asarray(velocity, dtype=np.float64)
    measurement = np.asarray(measurement, dtype=np.float64)
    x_pred = state.x + velocity
    p_pred = state.P + state.Q
    denom = p_pred + state.R
    if np.any(denom == 0.0):
        raise NumericalError("P + Q + R vanished in some component; gain undefined")
    gain = p_pred / denom
    x = x_pred + gain * (measurement - x_pred)
    p = (1.0 - gain) * p_pred
    return replace(state, x=x, P=p), x


def kalman_filter_stream(measurements, control_velocities, measurement_noise,
                         process_noise) -> np.ndarray:
    """Filter a whole stream; state starts at the first measurement, P0 = R."""
    meas = np.asarray(measurements, dtype=np.float64)
    vel = np.asarray(control_velocities, dtype=np.float64)
    if meas.ndim != 2 or meas.shape[1] != POSE_DIM:
        raise ValueError(f"measurements must be (n, {POSE_DIM}), got {meas.shape}")
    if vel.shape != (meas.shape[0] - 1, POSE_DIM):
        raise ValueError(
            f"need one control velocity per transition: got {vel.shape} "
            f"for {meas.shape[0]} measurements"
        )
    r = np.asarray(measurement_noise, dtype=np.float64)
    q = np.asarray(process_noise, dtype=np.float64)
    out = np.empty_like(meas)
    out[0] = meas[0]
    state = KalmanState(x=meas[0], P=r, Q=q, R=r)
    for t in range(1, meas.shape[0]):
        state, fused = kalman_step(state, vel[t - 1], meas[t])
        out[t] = fused
    return out


def estimate_noise_covariances(position_residuals, velocity_residuals) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal measurement (R) and process (Q) noise from residual variances.

    Variances are floored at 1e-12.
    """
    r = _residual_variance(position_residuals, "position residuals")
    q = _residual_variance(velocity_residuals, "velocity residuals")
    return r, q


def _residual_variance(residuals, what: str) -> np.ndarray:
    res = np.asarray(residuals, dtype=np.float64)
    if res.ndim != 2 or res.shape[1] != POSE_DIM:
        raise ValueError(f"{what} must be (n, {POSE_DIM}), got {res.shape}")
    if res.shape[0] < 2:
        raise ValueError(f"need at least 2 {what}")
    return np.maximum(np.var(res, axis=0), VARIANCE_FLOOR)


@dataclass
class FusionModels:
    """Everything run_pipeline may need; variants check their own subset."""

    tree: KinematicTree
    knn_k: int = 300
    pdrnn: drnn.DrnnParams | None = None
    vdrnn: drnn.DrnnParams | None = None
    vdrnn_plus: drnn.DrnnParams | None = None
    store: NeighborStore | None = None  # refined-pose keys
    store_plus: NeighborStore | None = None  # Kalman-state keys
    store_raw: NeighborStore | None = None  # unrefined-pose keys
    gate: GateModel | None = None
    gate_plus: GateModel | None = None
    gate_raw: GateModel | None = None
    gate_unrefined_velocity: GateModel | None = None
    kalman_r: np.ndarray | None = None
    kalman_q: np.ndarray | None = None
    kalman_r_raw: np.ndarray | None = None
    kalman_q_raw: np.ndarray | None = None


_VARIANT_NEEDS: dict[str, tuple[str, ...]] = {
    "raw": (),
    "pdrnn": ("pdrnn",),
    "sknn": ("pdrnn", "vdrnn", "store", "gate"),
    "naive_sknn": ("pdrnn", "vdrnn", "store", "gate"),
    "sknn_minus_vdrnn": ("pdrnn", "store", "gate_unrefined_velocity"),
    "sknn_minus_pdrnn": ("vdrnn", "store_raw", "gate_raw"),
    "kf": ("pdrnn", "vdrnn", "kalman_r", "kalman_q"),
    "kf_minus_pdrnn": ("vdrnn", "kalman_r_raw", "kalman_q_raw"),
    "sknnkf": (
        "pdrnn", "vdrnn", "vdrnn_plus", "kalman_r", "kalman_q", "store_plus", "gate_plus",
    ),
}


def required_networks(variant: str) -> tuple[str, ...]:
    """Which trained networks a variant needs loaded."""
    if variant not in _VARIANT_NEEDS:
        raise ConfigurationError(f"unknown pipeline variant {variant!r}")
    nets = ("pdrnn", "vdrnn", "vdrnn_plus")
    return tuple(n for n in _VARIANT_NEEDS[variant] if n in nets)


def _require(models: FusionModels, variant: str) -> None:
    missing = [name for name in _VARIANT_NEEDS[variant] if getattr(models, name) is None]
    if missing:
        raise ConfigurationError(
            f"variant {variant!r} is missing models: {', '.join(missing)}"
        )


def _sknn_track(query_data: np.ndarray, velocity_stream: np.ndarray,
                store: NeighborStore, gate: GateModel,
                anchor_on_query: bool = False) -> np.ndarray:
    """Run the gated-KNN recursion along a sequence; frame 0 passes through.

    anchor_on_query switches the implied-velocity anchor from the previous
    fused output to the previous query pose.
    """
    out = np.empty_like(query_data)
    out[0] = query_data[0]
    for t in range(1, query_data.shape[0]):
        anchor = query_data[t - 1] if anchor_on_query else out[t - 1]
        out[t] = sknn_step(store, gate, query_data[t], velocity_stream[t - 1], anchor)
    return out


def _run_sknnkf(seq: SkeletonSequence, models: FusionModels) -> np.ndarray:
    refined = drnn.refine_positions(models.pdrnn, seq, models.tree)
    refined_vel = drnn.refine_velocities(models.vdrnn, refined)
    states = kalman_filter_stream(
        refined.data, refined_vel, models.kalman_r, models.kalman_q
    )
    state_vel = drnn.run_stream(models.vdrnn_plus, np.diff(states, axis=0))
    return _sknn_track(states, state_vel, models.store_plus, models.gate_plus)


def run_pipeline(variant: str, seq: SkeletonSequence, models: FusionModels) -> SkeletonSequence:
    """Refine an absolute sequence with the named method.

    Variants: raw (pass-through), pdrnn (position network only), sknn, kf,
    sknnkf, and the ablations sknn_minus_pdrnn, sknn_minus_vdrnn,
    naive_sknn, kf_minus_pdrnn. Missing models raise ConfigurationError.
    Deterministic: identical inputs and models give identical outputs.
    """
    if variant not in _VARIANT_NEEDS:
        raise ConfigurationError(f"unknown pipeline variant {variant!r}")
    if seq.encoding is not Encoding.ABSOLUTE:
        raise ConfigurationError("run_pipeline expects an absolute sequence")
    _require(models, variant)

    if variant == "raw":
        return seq.with_data(seq.data.copy())

    if variant == "pdrnn":
        return drnn.refine_positions(models.pdrnn, seq, models.tree)

    if variant in ("sknn", "naive_sknn"):
        refined = drnn.refine_positions(models.pdrnn, seq, models.tree)
        refined_vel = drnn.refine_velocities(models.vdrnn, refined)
        fused = _sknn_track(
            refined.data, refined_vel, models.store, models.gate,
            anchor_on_query=(variant == "naive_sknn"),
        )
        return seq.with_data(fused)

    if variant == "sknn_minus_vdrnn":
        refined = drnn.refine_positions(models.pdrnn, seq, models.tree)
        fused = _sknn_track(
            refined.data, velocities(refined), models.store,
            models.gate_unrefined_velocity,
        )
        return seq.with_data(fused)

    if variant == "sknn_minus_pdrnn":
        refined_vel = drnn.run_stream(models.vdrnn, velocities(seq))
        fused = _sknn_track(seq.data, refined_vel, models.store_raw, models.gate_raw)
        return seq.with_data(fused)

    if variant == "kf":
        refined = drnn.refine_positions(models.pdrnn, seq, models.tree)
        refined_vel = drnn.refine_velocities(models.vdrnn, refined)
        return seq.with_data(
            kalman_filter_stream(refined.data, refined_vel, models.kalman_r, models.kalman_q)
        )

    if variant == "kf_minus_pdrnn":
        refined_vel = drnn.run_stream(models.vdrnn, velocities(seq))
        return seq.with_data(
            kalman_filter_stream(seq.data, refined_vel, models.kalman_r_raw, models.kalman_q_raw)
        )

    return seq.with_data(_run_sknnkf(seq, models))


def fit_fusion_models(
    corpus,
    tree: KinematicTree,
    pdrnn: drnn.DrnnParams | None = None,
    vdrnn: drnn.DrnnParams | None = None,
    vdrnn_plus: drnn.DrnnParams | None = None,
    k: int = 300,
    theta: float = 0.05,
    theta_plus: float = 0.05,
    variants: tuple[str, ...] = ("sknn", "kf", "sknnkf"),
) -> FusionModels:
    """Build stores, gates and noise diagonals for the requested variants.

    Stores come from the training split; gates and covariances are fitted on
    validation residuals. Only artifacts some requested variant needs are
    computed, and the networks each variant relies on must be supplied.
    """
    for variant in variants:
        if variant not in _VARIANT_NEEDS:
            raise ConfigurationError(f"unknown pipeline variant {variant!r}")
    want: set[str] = set()
    for variant in variants:
        want.update(_VARIANT_NEEDS[variant])
    provided = {"pdrnn": pdrnn, "vdrnn": vdrnn, "vdrnn_plus": vdrnn_plus}
    for net, params in provided.items():
        if net in want and params is None:
            raise ConfigurationError(f"requested variants need the {net} network")

    models = FusionModels(
        tree=tree, knn_k=k, pdrnn=pdrnn, vdrnn=vdrnn, vdrnn_plus=vdrnn_plus
    )
    corrupt_train, clean_train = corpus.train.corrupted, corpus.train.clean
    corrupt_val, clean_val = corpus.validation.corrupted, corpus.validation.clean
    clean_val_vel = velocities(clean_val)

    refined_train = refined_val = None
    refined_train_vel = refined_val_vel = None
    if want & {"store", "gate", "gate_unrefined_velocity", "kalman_r", "store_plus"}:
        refined_train = drnn.refine_positions(pdrnn, corrupt_train, tree)
        refined_val = drnn.refine_positions(pdrnn, corrupt_val, tree)
    if want & {"gate", "kalman_r", "store_plus"}:
        refined_train_vel = drnn.refine_velocities(vdrnn, refined_train)
        refined_val_vel = drnn.refine_velocities(vdrnn, refined_val)

    if "store" in want:
        models.store = NeighborStore(refined_train.data, clean_train.data, k)
    if "gate" in want:
        models.gate = estimate_gate(clean_val_vel - refined_val_vel, theta)
    if "gate_unrefined_velocity" in want:
        models.gate_unrefined_velocity = estimate_gate(
            clean_val_vel - velocities(refined_val), theta
        )
    if want & {"kalman_r", "kalman_q"}:
        models.kalman_r, models.kalman_q = estimate_noise_covariances(
            clean_val.data - refined_val.data, clean_val_vel - refined_val_vel
        )

    if want & {"store_raw", "gate_raw", "kalman_r_raw"}:
        raw_val_vel_refined = drnn.run_stream(vdrnn, velocities(corrupt_val))
        if "store_raw" in want:
            models.store_raw = NeighborStore(corrupt_train.data, clean_train.data, k)
        if "gate_raw" in want:
            models.gate_raw = estimate_gate(clean_val_vel - raw_val_vel_refined, theta)
        if want & {"kalman_r_raw", "kalman_q_raw"}:
            models.kalman_r_raw, models.kalman_q_raw = estimate_noise_covariances(
                clean_val.data - corrupt_val.data, clean_val_vel - velocities(corrupt_val)
            )

    if want & {"store_plus", "gate_plus"}:
        states_train = kalman_filter_stream(
            refined_train.data, refined_train_vel, models.kalman_r, models.kalman_q
        )
        states_val = kalman_filter_stream(
            refined_val.data, refined_val_vel, models.kalman_r, models.kalman_q
        )
        state_val_vel = drnn.run_stream(vdrnn_plus, np.diff(states_val, axis=0))
        models.store_plus = NeighborStore(states_train, clean_train.data, k)
        models.gate_plus = estimate_gate(clean_val_vel - state_val_vel, theta_plus)

    return models


def write_gate(path, gate: GateModel) -> None:
    Path(path).write_text(json.dumps(gate.to_json_dict()), encoding="utf-8")


def read_gate(path) -> GateModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return GateModel.from_json_dict(data)


def write_covariances(path, measurement_noise, process_noise) -> None:
    payload = {
        "R": [float(v) for v in np.asarray(measurement_noise)],
        "Q": [float(v) for v in np.asarray(process_noise)],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def read_covariances(path) -> tuple[np.ndarray, np.ndarray]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return (
        np.asarray(data["R"], dtype=np.float64),
        np.asarray(data["Q"], dtype=np.float64),
    )


def write_store(keys_path, targets_path, store: NeighborStore,
                frame_rate_hz: float = 30.0) -> None:
    """Serialize a store as a pair of sequence files (keys, targets)."""
    seqio.write_sequence(
        keys_path, SkeletonSequence(store.keys, Encoding.ABSOLUTE, frame_rate_hz)
    )
    seqio.write_sequence(
        targets_path, SkeletonSequence(store.targets, Encoding.ABSOLUTE, frame_rate_hz)
    )


def read_store(keys_path, targets_path, k: int = 300) -> NeighborStore:
    keys = seqio.read_sequence(keys_path)
    targets = seqio.read_sequence(targets_path)
    return NeighborStore(keys.data, targets.data, k)
