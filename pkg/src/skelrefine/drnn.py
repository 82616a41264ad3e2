"""Recurrent refinement networks.

The network is a stack of ReLU hidden layers with a temporal connection at
exactly one of them: that layer's previous-frame activation feeds back
through a square weight matrix, all other layers are plain feedforward at
each step, and the output layer is linear. Training minimizes the sum of
squared output errors over fixed-length windows; gradients come from
backpropagation through the whole window.

Two application wrappers cover the refinement roles: position denoising
(parent-relative encoding in and out) and velocity denoising. At inference
the hidden state is carried across the entire sequence; windows only bound
the training horizon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import optim
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    EncodingError,
    InsufficientFramesError,
    NumericalError,
)
from .skeleton import (
    Encoding,
    KinematicTree,
    SkeletonSequence,
    sequence_to_absolute,
    sequence_to_relative,
    velocities,
)

CHECKPOINT_VERSION = 1

POSITION_WINDOW = 7
VELOCITY_WINDOW = 20


@dataclass(frozen=True)
class DrnnConfig:
    """Network layout and training-window geometry."""

    input_dim: int = 48
    output_dim: int = 48
    hidden_sizes: tuple[int, ...] = (256, 256, 256)
    recurrent_layer_index: int = 2  # 1-based position of the temporal connection
    window_length: int = POSITION_WINDOW  # 20 for the velocity networks
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigurationError("input_dim and output_dim must be positive")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigurationError("hidden_sizes must be a nonempty list of positive ints")
        if not 1 <= self.recurrent_layer_index <= len(self.hidden_sizes):
            raise ConfigurationError(
                f"recurrent_layer_index must be in 1..{len(self.hidden_sizes)}"
            )
        if self.window_length < 2:
            raise ConfigurationError("window_length must be at least 2")

    @property
    def recurrent_size(self) -> int:
        return self.hidden_sizes[self.recurrent_layer_index - 1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "recurrent_layer_index": self.recurrent_layer_index,
            "window_length": self.window_length,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DrnnConfig":
        try:
            return cls(
                input_dim=int(data["input_dim"]),
                output_dim=int(data["output_dim"]),
                hidden_sizes=tuple(int(h) for h in data["hidden_sizes"]),
                recurrent_layer_index=int(data["recurrent_layer_index"]),
                window_length=int(data["window_length"]),
                seed=int(data["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad network config: {exc}") from exc


@dataclass
class DrnnParams:
    """Weights for one network. Shapes follow the config:

    inter[l] maps layer l's input to its units, (size_below, size_l);
    recurrent is square at the designated layer; out_weight is
    (last hidden size, output_dim). Biases start at zero and are absent
    from the recurrence equations unless training moves them.
    """

    config: DrnnConfig
    inter: list[np.ndarray]
    biases: list[np.ndarray]
    recurrent: np.ndarray
    out_weight: np.ndarray
    out_bias: np.ndarray

    def copy(self) -> "DrnnParams":
        return DrnnParams(
            self.config,
            [u.copy() for u in self.inter],
            [b.copy() for b in self.biases],
            self.recurrent.copy(),
            self.out_weight.copy(),
            self.out_bias.copy(),
        )


def _expected_shapes(config: DrnnConfig) -> list[tuple[str, tuple[int, ...]]]:
    sizes = (config.input_dim, *config.hidden_sizes)
    shapes = []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        shapes.append((f"inter_{layer}", (fan_in, fan_out)))
        shapes.append((f"bias_{layer}", (fan_out,)))
    r = config.recurrent_size
    shapes.append(("recurrent", (r, r)))
    shapes.append(("out_weight", (config.hidden_sizes[-1], config.output_dim)))
    shapes.append(("out_bias", (config.output_dim,)))
    return shapes


def init_params(config: DrnnConfig) -> DrnnParams:
    """Seeded random initialization, uniform(-a, a) with a = sqrt(6/(fi+fo))."""
    rng = np.random.default_rng(config.seed)
    sizes = (config.input_dim, *config.hidden_sizes)
    inter, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        inter.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    r = config.recurrent_size
    bound = np.sqrt(6.0 / (r + r))
    recurrent = rng.uniform(-bound, bound, size=(r, r))
    bound = np.sqrt(6.0 / (config.hidden_sizes[-1] + config.output_dim))
    out_weight = rng.uniform(-bound, bound, size=(config.hidden_sizes[-1], config.output_dim))
    return DrnnParams(config, inter, biases, recurrent, out_weight, np.zeros(config.output_dim))


def zeros_like_params(params: DrnnParams) -> DrnnParams:
    return DrnnParams(
        params.config,
        [np.zeros_like(u) for u in params.inter],
        [np.zeros_like(b) for b in params.biases],
        np.zeros_like(params.recurrent),
        np.zeros_like(params.out_weight),
        np.zeros_like(params.out_bias),
    )


def _param_arrays(params: DrnnParams) -> list[np.ndarray]:
    arrays = []
    for u, b in zip(params.inter, params.biases):
        arrays.append(u)
        arrays.append(b)
    arrays.append(params.recurrent)
    arrays.append(params.out_weight)
    arrays.append(params.out_bias)
    return arrays


def pack_params(params: DrnnParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in _param_arrays(params)])


def unpack_params(config: DrnnConfig, vector: np.ndarray) -> DrnnParams:
    shapes = _expected_shapes(config)
    total = sum(int(np.prod(shape)) for _, shape in shapes)
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (total,):
        raise DimensionError(f"parameter vector must have {total} entries, got {vector.shape}")
    arrays = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        arrays[name] = vector[offset : offset + size].reshape(shape).copy()
        offset += size
    n_layers = len(config.hidden_sizes)
    return DrnnParams(
        config,
        [arrays[f"inter_{l}"] for l in range(1, n_layers + 1)],
        [arrays[f"bias_{l}"] for l in range(1, n_layers + 1)],
        arrays["recurrent"],
        arrays["out_weight"],
        arrays["out_bias"],
    )


def _forward_batch(params: DrnnParams, inputs: np.ndarray, h0: np.ndarray | None = None,
                   keep_cache: bool = False):
    """Batched forward pass over (batch, time, input_dim) windows.

    Returns (outputs, final_hidden, cache); cache holds per-layer activations
    and the pre-step hidden states when keep_cache is set, else (None, None).
    """
    cfg = params.config
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != cfg.input_dim:
        raise DimensionError(
            f"expected inputs of shape (batch, time, {cfg.input_dim}), got {x.shape}"
        )
    n_batch, n_time, _ = x.shape
    if n_time < 1:
        raise DimensionError("window must contain at least one frame")
    n_layers = len(cfg.hidden_sizes)
    rec = cfg.recurrent_layer_index - 1
    if h0 is None:
        h = np.zeros((n_batch, cfg.recurrent_size))
    else:
        h = np.asarray(h0, dtype=np.float64)
        if h.shape != (n_batch, cfg.recurrent_size):
            raise DimensionError(
                f"h0 must have shape ({n_batch}, {cfg.recurrent_size}), got {h.shape}"
            )
    acts = None
    h_prev = None
    if keep_cache:
        acts = [np.empty((n_batch, n_time, s)) for s in cfg.hidden_sizes]
        h_prev = np.empty((n_batch, n_time, cfg.recurrent_size))
    outputs = np.empty((n_batch, n_time, cfg.output_dim))
    for t in range(n_time):
        a = x[:, t, :]
        for layer in range(n_layers):
            pre = a @ params.inter[layer]
            pre += params.biases[layer]
            if layer == rec:
                if keep_cache:
                    h_prev[:, t, :] = h
                pre += h @ params.recurrent
            a = np.maximum(pre, 0.0, out=pre)
            if layer == rec:
                h = a
            if keep_cache:
                acts[layer][:, t, :] = a
        outputs[:, t, :] = a @ params.out_weight + params.out_bias
    return outputs, h, (acts, h_prev)


def forward(params: DrnnParams, window, h0=None) -> tuple[np.ndarray, np.ndarray]:
    """Run one window of frames; returns (outputs, final hidden state).

    window is (time, input_dim); h0 is the recurrent layer's entering state,
    zeros when omitted.
    """
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionError(f"window must be 2-D (time, features), got {w.shape}")
    h = None
    if h0 is not None:
        h = np.asarray(h0, dtype=np.float64)
        if h.shape != (params.config.recurrent_size,):
            raise DimensionError(
                f"h0 must have shape ({params.config.recurrent_size},), got {h.shape}"
            )
        h = h[None]
    outputs, h_final, _ = _forward_batch(params, w[None], h)
    return outputs[0], h_final[0]


def run_stream(params: DrnnParams, stream) -> np.ndarray:
    """Apply the network across a whole (frames, dim) stream, state carried."""
    s = np.asarray(stream, dtype=np.float64)
    if s.ndim != 2:
        raise DimensionError(f"stream must be 2-D, got {s.shape}")
    outputs, _, _ = _forward_batch(params, s[None])
    return outputs[0]


@dataclass(frozen=True)
class TrainingBatch:
    """Equal-count input and target windows of one common length."""

    inputs: np.ndarray  # (n_windows, window_length, dim)
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if inputs.ndim != 3 or targets.ndim != 3:
            raise DimensionError("batch arrays must be (windows, time, features)")
        if inputs.shape[:2] != targets.shape[:2]:
            raise DimensionError(
                f"inputs {inputs.shape} and targets {targets.shape} disagree on "
                "window count or window length"
            )
        if inputs.shape[0] == 0:
            raise ValueError("batch must contain at least one window")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def n_windows(self) -> int:
        return self.inputs.shape[0]

    @property
    def window_length(self) -> int:
        return self.inputs.shape[1]


def window_count(n_frames: int, window_length: int) -> int:
    return n_frames - window_length + 1


def make_windows(stream, window_length: int, stride: int = 1) -> np.ndarray:
    """Dense sliding windows over a (frames, dim) stream."""
    arr = np.asarray(stream, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"stream must be 2-D, got {arr.shape}")
    if window_count(arr.shape[0], window_length) < 1:
        raise InsufficientFramesError(
            f"stream of {arr.shape[0]} frames is shorter than window {window_length}"
        )
    view = np.lib.stride_tricks.sliding_window_view(arr, (window_length, arr.shape[1]))
    return view[::stride, 0].copy()


def batch_from_streams(input_stream, target_stream, window_length: int,
                       stride: int = 1) -> TrainingBatch:
    return TrainingBatch(
        make_windows(input_stream, window_length, stride),
        make_windows(target_stream, window_length, stride),
    )


def _check_batch(config: DrnnConfig, batch: TrainingBatch) -> None:
    if batch.inputs.shape[2] != config.input_dim:
        raise DimensionError(
            f"batch input dim {batch.inputs.shape[2]} != config input_dim {config.input_dim}"
        )
    if batch.targets.shape[2] != config.output_dim:
        raise DimensionError(
            f"batch target dim {batch.targets.shape[2]} != config output_dim {config.output_dim}"
        )


def loss_value(params: DrnnParams, batch: TrainingBatch) -> float:
    """Sum of squared output errors over the whole batch."""
    _check_batch(params.config, batch)
    outputs, _, _ = _forward_batch(params, batch.inputs)
    diff = outputs - batch.targets
    return float(np.vdot(diff, diff))


def loss_and_gradient(params: DrnnParams, batch: TrainingBatch) -> tuple[float, DrnnParams]:
    """Sum-of-squares loss and its gradient by backpropagation through time.

    The ReLU subgradient at exactly zero is taken as zero. Raises
    NumericalError when activations overflow to non-finite values.
    """
    cfg = params.config
    _check_batch(cfg, batch)
    x, target = batch.inputs, batch.targets
    outputs, _, (acts, h_prev) = _forward_batch(params, x, keep_cache=True)
    diff = outputs - target
    loss = float(np.vdot(diff, diff))
    if not np.isfinite(loss):
        raise NumericalError("loss is not finite; activations overflowed")

    grads = zeros_like_params(params)
    n_batch, n_time, _ = x.shape
    n_layers = len(cfg.hidden_sizes)
    rec = cfg.recurrent_layer_index - 1
    d_out = 2.0 * diff
    dh_carry = np.zeros((n_batch, cfg.recurrent_size))
    for t in range(n_time - 1, -1, -1):
        dy = d_out[:, t, :]
        grads.out_weight += acts[n_layers - 1][:, t, :].T @ dy
        grads.out_bias += dy.sum(axis=0)
        da = dy @ params.out_weight.T
        for layer in range(n_layers - 1, -1, -1):
            a_layer = acts[layer][:, t, :]
            if layer == rec:
                da = da + dh_carry
            dpre = da * (a_layer > 0.0)
            below = acts[layer - 1][:, t, :] if layer > 0 else x[:, t, :]
            grads.inter[layer] += below.T @ dpre
            grads.biases[layer] += dpre.sum(axis=0)
            if layer == rec:
                grads.recurrent += h_prev[:, t, :].T @ dpre
                dh_carry = dpre @ params.recurrent.T
            da = dpre @ params.inter[layer].T
    return loss, grads


@dataclass
class TrainResult:
    """Fitted parameters plus the recorded optimization trace."""

    params: DrnnParams
    train_losses: list[float]  # SSE at iteration 0 (initial) onward
    validation_losses: list[float]
    iterations: int
    converged: bool
    message: str

    def train_mse(self) -> list[float]:
        return [v / self._train_size for v in self.train_losses]

    _train_size: int = field(default=1, repr=False)


def train(
    config: DrnnConfig,
    train_set: TrainingBatch,
    validation_set: TrainingBatch,
    optimizer_spec: optim.OptimizerSpec | None = None,
) -> TrainResult:
    """Fit a network to the training windows by full-batch minimization.

    Deterministic for a fixed config seed and optimizer spec: the same call
    produces bitwise-identical parameter trajectories. Training and
    validation SSE are recorded at the starting point and after every
    accepted optimizer step.
    """
    _check_batch(config, train_set)
    _check_batch(config, validation_set)
    spec = optimizer_spec or optim.OptimizerSpec()
    x0 = pack_params(init_params(config))

    def objective(vec):
        p = unpack_params(config, vec)
        try:
            loss, grads = loss_and_gradient(p, train_set)
        except NumericalError:
            # overflowing trial points read as infinitely bad; the optimizer
            # rejects them or reports divergence if it cannot
            return float("inf"), np.zeros_like(vec)
        return loss, pack_params(grads)

    train_losses: list[float] = []
    validation_losses: list[float] = []

    def record(iteration, loss, vec):
        train_losses.append(loss)
        validation_losses.append(loss_value(unpack_params(config, vec), validation_set))

    result = optim.minimize(objective, x0, spec, callback=record)
    out = TrainResult(
        params=unpack_params(config, result.x),
        train_losses=train_losses,
        validation_losses=validation_losses,
        iterations=result.iterations,
        converged=result.converged,
        message=result.message,
    )
    out._train_size = train_set.targets.size
    return out


def refine_positions(params: DrnnParams, seq: SkeletonSequence,
                     tree: KinematicTree) -> SkeletonSequence:
    """Denoise an absolute sequence through the position network.

    The sequence is re-encoded parent-relative, streamed through the network
    with the hidden state carried across all frames, and resolved back to
    absolute coordinates. Output length equals input length.
    """
    if seq.encoding is not Encoding.ABSOLUTE:
        raise EncodingError("refine_positions expects an absolute sequence")
    rel = sequence_to_relative(seq, tree)
    refined = run_stream(params, rel.data)
    return sequence_to_absolute(
        SkeletonSequence(refined, Encoding.RELATIVE, seq.frame_rate_hz), tree
    )


def refine_velocities(params: DrnnParams, seq: SkeletonSequence) -> np.ndarray:
    """Denoised per-frame velocities of an absolute sequence, (len - 1, 48)."""
    return run_stream(params, velocities(seq))


def save_checkpoint(path, params: DrnnParams) -> None:
    """Versioned JSON container: config plus all matrices, row-major."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "arrays": {},
    }
    for (name, shape), array in zip(_expected_shapes(params.config), _param_arrays(params)):
        payload["arrays"][name] = {
            "shape": list(shape),
            "data": [float(v) for v in array.ravel()],
        }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path) -> DrnnParams:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint version {payload.get('format_version')!r}"
        )
    config = DrnnConfig.from_dict(payload.get("config", {}))
    arrays = payload.get("arrays", {})
    loaded = {}
    for name, shape in _expected_shapes(config):
        entry = arrays.get(name)
        if entry is None:
            raise DataError(f"{path}: checkpoint missing array {name!r}")
        if tuple(entry.get("shape", ())) != shape:
            raise DataError(
                f"{path}: array {name!r} has shape {entry.get('shape')}, expected {list(shape)}"
            )
        data = np.asarray(entry.get("data"), dtype=np.float64)
        if data.shape != (int(np.prod(shape)),):
            raise DataError(f"{path}: array {name!r} data length mismatch")
        if not np.all(np.isfinite(data)):
            raise DataError(f"{path}: array {name!r} contains non-finite values")
        loaded[name] = data.reshape(shape)
    n_layers = len(config.hidden_sizes)
    return DrnnParams(
        config,
        [loaded[f"inter_{l}"] for l in range(1, n_layers + 1)],
        [loaded[f"bias_{l}"] for l in range(1, n_layers + 1)],
        loaded["recurrent"],
        loaded["out_weight"],
        loaded["out_bias"],
    )
