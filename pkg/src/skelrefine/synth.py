"""Synthetic motion corpus.

Ground truth is smooth, bone-length-preserving skeleton motion: every bone
direction follows band-limited sinusoidal angle trajectories around a
standing rest pose, resolved by forward kinematics over the kinematic tree,
while the root wanders along a slow path. The corruption model emulates a
depth-sensor tracker's failure modes: per-joint Gaussian jitter plus
occlusion episodes during which a joint freezes at a displaced position and
then snaps back.

All randomness flows from explicit seeds, so identical configs reproduce
identical corpora.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import seqio
from .errors import ConfigurationError, DataError, EncodingError
from .skeleton import (
    DEFAULT_TREE,
    N_JOINTS,
    Encoding,
    JointId,
    KinematicTree,
    SkeletonSequence,
    joint_slice,
)

DEFAULT_BONE_LENGTHS: dict[JointId, float] = {
    JointId.SPINEMID: 0.0,  # root carries no bone
    JointId.SPINEBASE: 0.18,
    JointId.SPINESHOULDER: 0.30,
    JointId.NECK: 0.12,
    JointId.SHOULDERLEFT: 0.20,
    JointId.ELBOWLEFT: 0.28,
    JointId.WRISTLEFT: 0.26,
    JointId.SHOULDERRIGHT: 0.20,
    JointId.ELBOWRIGHT: 0.28,
    JointId.WRISTRIGHT: 0.26,
    JointId.HIPLEFT: 0.11,
    JointId.KNEELEFT: 0.42,
    JointId.ANKLELEFT: 0.41,
    JointId.HIPRIGHT: 0.11,
    JointId.KNEERIGHT: 0.42,
    JointId.ANKLERIGHT: 0.41,
}

# unit rest directions (parent -> joint) of a relaxed standing pose
_REST_DIRECTIONS: dict[JointId, tuple[float, float, float]] = {
    JointId.SPINEBASE: (0.05, -1.0, 0.02),
    JointId.SPINESHOULDER: (0.0, 1.0, 0.05),
    JointId.NECK: (0.02, 1.0, 0.0),
    JointId.SHOULDERLEFT: (-1.0, 0.15, 0.05),
    JointId.ELBOWLEFT: (-0.25, -1.0, 0.1),
    JointId.WRISTLEFT: (-0.1, -1.0, 0.15),
    JointId.SHOULDERRIGHT: (1.0, 0.15, 0.05),
    JointId.ELBOWRIGHT: (0.25, -1.0, 0.1),
    JointId.WRISTRIGHT: (0.1, -1.0, 0.15),
    JointId.HIPLEFT: (-1.0, -0.35, 0.0),
    JointId.KNEELEFT: (-0.05, -1.0, 0.08),
    JointId.ANKLELEFT: (0.0, -1.0, -0.05),
    JointId.HIPRIGHT: (1.0, -0.35, 0.0),
    JointId.KNEERIGHT: (0.05, -1.0, 0.08),
    JointId.ANKLERIGHT: (0.0, -1.0, -0.05),
}

_ROOT_BASE = np.array([0.0, 0.95, 0.0])
_SIGNAL_COMPONENTS = 3

DEFAULT_SPLIT_RATIOS = (50 / 73, 8 / 73, 15 / 73)  # 5000/800/1500 at 7300 frames


@dataclass(frozen=True)
class MotionConfig:
    """Ground-truth motion parameters.

    Every angle trajectory is a sum of sinusoids over one shared frequency
    pool with per-joint random amplitudes and phases; sharing the pool keeps
    the whole pose manifold low-dimensional, the analogue of a performer
    repeating a small set of activities. The pool is drawn from the seed
    when not pinned explicitly.
    """

    n_frames: int
    frame_rate_hz: float = 30.0
    bone_lengths: Mapping[JointId, float] | None = None
    motion_bandwidth_hz: float = 1.0
    seed: int = 0
    angle_amplitude_rad: float = 0.35
    root_amplitude_m: float = 0.15
    frequency_pool_hz: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigurationError("n_frames must be at least 1")
        if not self.frame_rate_hz > 0:
            raise ConfigurationError("frame_rate_hz must be positive")
        if not 0 < self.motion_bandwidth_hz < self.frame_rate_hz / 2:
            raise ConfigurationError(
                "motion_bandwidth_hz must lie in (0, frame_rate_hz / 2)"
            )
        if self.angle_amplitude_rad < 0 or self.root_amplitude_m < 0:
            raise ConfigurationError("amplitudes must be non-negative")
        if self.frequency_pool_hz is not None:
            pool = tuple(sorted(float(f) for f in self.frequency_pool_hz))
            if not pool or any(
                not 0 < f <= self.motion_bandwidth_hz for f in pool
            ):
                raise ConfigurationError(
                    "frequency_pool_hz entries must lie in (0, motion_bandwidth_hz]"
                )
            object.__setattr__(self, "frequency_pool_hz", pool)
        lengths = dict(DEFAULT_BONE_LENGTHS if self.bone_lengths is None else self.bone_lengths)
        if set(lengths) != set(JointId):
            raise ConfigurationError("bone_lengths must cover all 16 joints")
        for joint, length in lengths.items():
            if joint != JointId.SPINEMID and not length > 0:
                raise ConfigurationError(f"bone length for {joint.name} must be positive")
        object.__setattr__(self, "bone_lengths", lengths)

    def to_dict(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "frame_rate_hz": self.frame_rate_hz,
            "bone_lengths": {j.name.lower(): v for j, v in self.bone_lengths.items()},
            "motion_bandwidth_hz": self.motion_bandwidth_hz,
            "seed": self.seed,
            "angle_amplitude_rad": self.angle_amplitude_rad,
            "root_amplitude_m": self.root_amplitude_m,
            "frequency_pool_hz": (
                None if self.frequency_pool_hz is None else list(self.frequency_pool_hz)
            ),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MotionConfig":
        try:
            lengths = None
            if data.get("bone_lengths") is not None:
                lengths = {
                    JointId[name.upper()]: float(v)
                    for name, v in data["bone_lengths"].items()
                }
            pool = data.get("frequency_pool_hz")
            return cls(
                n_frames=int(data["n_frames"]),
                frame_rate_hz=float(data.get("frame_rate_hz", 30.0)),
                bone_lengths=lengths,
                motion_bandwidth_hz=float(data.get("motion_bandwidth_hz", 1.0)),
                seed=int(data.get("seed", 0)),
                angle_amplitude_rad=float(data.get("angle_amplitude_rad", 0.35)),
                root_amplitude_m=float(data.get("root_amplitude_m", 0.15)),
                frequency_pool_hz=None if pool is None else tuple(float(f) for f in pool),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad motion config: {exc}") from exc


@dataclass(frozen=True)
class CorruptionConfig:
    """Tracker-noise parameters: jitter plus freeze-then-snap occlusions."""

    jitter_sigma: float = 0.01
    occlusion_rate: float = 0.02
    occlusion_duration_frames: tuple[int, int] = (3, 10)
    displacement_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.jitter_sigma < 0 or self.displacement_sigma < 0:
            raise ConfigurationError("sigmas must be non-negative")
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise ConfigurationError("occlusion_rate must lie in [0, 1]")
        lo, hi = self.occlusion_duration_frames
        if not (1 <= lo <= hi):
            raise ConfigurationError("occlusion_duration_frames must satisfy 1 <= lo <= hi")
        object.__setattr__(self, "occlusion_duration_frames", (int(lo), int(hi)))

    def to_dict(self) -> dict:
        return {
            "jitter_sigma": self.jitter_sigma,
            "occlusion_rate": self.occlusion_rate,
            "occlusion_duration_frames": list(self.occlusion_duration_frames),
            "displacement_sigma": self.displacement_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorruptionConfig":
        try:
            duration = data.get("occlusion_duration_frames", (3, 10))
            return cls(
                jitter_sigma=float(data.get("jitter_sigma", 0.01)),
                occlusion_rate=float(data.get("occlusion_rate", 0.02)),
                occlusion_duration_frames=(int(duration[0]), int(duration[1])),
                displacement_sigma=float(data.get("displacement_sigma", 0.05)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ConfigurationError(f"bad corruption config: {exc}") from exc


def _rest_angles(direction) -> tuple[float, float]:
    u = np.asarray(direction, dtype=np.float64)
    u = u / np.linalg.norm(u)
    elevation = float(np.arcsin(np.clip(u[1], -1.0, 1.0)))
    azimuth = float(np.arctan2(u[0], u[2]))
    return azimuth, elevation


def draw_frequency_pool(seed: int, motion_bandwidth_hz: float) -> tuple[float, ...]:
    """The shared sinusoid frequencies implied by a seed, sorted ascending."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x9E3779B9)))
    pool = motion_bandwidth_hz * np.sort(rng.uniform(0.1, 1.0, _SIGNAL_COMPONENTS))
    return tuple(float(f) for f in pool)


def _pool_signal(rng: np.random.Generator, pool: tuple[float, ...], t: np.ndarray,
                 amplitude: float, low_frequency_bias: bool = False) -> np.ndarray:
    """Sum of sinusoids over the pool, random amplitude and phase each.

    Amplitudes decay along the (ascending) pool so most energy sits at the
    low end, as in natural movement; the decay is quadratic for slow-wander
    signals like the root path and linear otherwise.
    """
    out = np.zeros(len(t))
    for i, freq in enumerate(pool):
        weight = 1.0 / (1 + i) ** 2 if low_frequency_bias else 1.0 / (1 + i)
        amp = amplitude * weight * rng.uniform(0.2, 1.0) / len(pool)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += amp * np.sin(2.0 * np.pi * freq * t + phase)
    return out


def generate_ground_truth(cfg: MotionConfig, tree: KinematicTree = DEFAULT_TREE) -> SkeletonSequence:
    """Smooth absolute motion whose bone lengths hold exactly in every frame."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_frames
    t = np.arange(n) / cfg.frame_rate_hz
    pool = cfg.frequency_pool_hz
    if pool is None:
        pool = draw_frequency_pool(cfg.seed, cfg.motion_bandwidth_hz)
    root = np.empty((n, 3))
    for axis in range(3):
        root[:, axis] = _ROOT_BASE[axis] + _pool_signal(
            rng, pool, t, cfg.root_amplitude_m, low_frequency_bias=True
        )

    directions: dict[JointId, np.ndarray] = {}
    for joint in JointId:
        if joint == tree.root:
            continue
        az0, el0 = _rest_angles(_REST_DIRECTIONS[joint])
        azimuth = az0 + _pool_signal(rng, pool, t, cfg.angle_amplitude_rad)
        elevation = el0 + _pool_signal(rng, pool, t, cfg.angle_amplitude_rad)
        cos_el = np.cos(elevation)
        unit = np.stack(
            [cos_el * np.sin(azimuth), np.sin(elevation), cos_el * np.cos(azimuth)],
            axis=1,
        )
        # normalize away the last-ulp drift so bone lengths hold exactly
        unit /= np.linalg.norm(unit, axis=1, keepdims=True)
        directions[joint] = unit

    data = np.empty((n, 3 * N_JOINTS))
    data[:, joint_slice(tree.root)] = root
    for joint in tree.topological_order()[1:]:
        parent = tree.parent_of(joint)
        data[:, joint_slice(joint)] = (
            data[:, joint_slice(parent)] + cfg.bone_lengths[joint] * directions[joint]
        )
    return SkeletonSequence(data, Encoding.ABSOLUTE, cfg.frame_rate_hz)


def corrupt(seq: SkeletonSequence, cfg: CorruptionConfig) -> SkeletonSequence:
    """Apply the tracker-noise model; identity under an all-zero config.

    Occlusion episodes freeze a joint at its entry position plus a random
    displacement for the episode duration, then snap back; jitter rides on
    top of everything. Jitter and occlusion draw from independent
    sub-streams of the seed, so disabling one leaves the other unchanged.
    """
    if seq.encoding is not Encoding.ABSOLUTE:
        raise EncodingError("corrupt expects an absolute sequence")
    jitter_seed, occlusion_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    data = seq.data.copy()
    n = len(seq)

    if cfg.occlusion_rate > 0.0:
        rng = np.random.default_rng(occlusion_seed)
        onset = rng.random((n, N_JOINTS))
        lo, hi = cfg.occlusion_duration_frames
        for joint in range(N_JOINTS):
            cols = joint_slice(JointId(joint))
            t = 0
            while t < n:
                if onset[t, joint] < cfg.occlusion_rate:
                    duration = int(rng.integers(lo, hi + 1))
                    displacement = rng.normal(0.0, cfg.displacement_sigma, size=3)
                    end = min(t + duration, n)
                    data[t:end, cols] = seq.data[t, cols] + displacement
                    t = end
                else:
                    t += 1

    if cfg.jitter_sigma > 0.0:
        rng = np.random.default_rng(jitter_seed)
        data += rng.normal(0.0, cfg.jitter_sigma, size=data.shape)

    return seq.with_data(data)


@dataclass(frozen=True)
class SequencePair:
    """A corrupted sequence aligned with its clean ground truth."""

    corrupted: SkeletonSequence
    clean: SkeletonSequence

    def __post_init__(self):
        if len(self.corrupted) != len(self.clean):
            raise ValueError("corrupted and clean sequences must have equal length")


@dataclass(frozen=True)
class Corpus:
    train: SequencePair
    validation: SequencePair
    test: SequencePair
    motion_config: MotionConfig
    corruption_config: CorruptionConfig
    split_ratios: tuple[float, float, float]

    def splits(self) -> dict[str, SequencePair]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


SPLIT_NAMES = ("train", "validation", "test")


def split_frame_counts(total: int, ratios) -> tuple[int, int, int]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ConfigurationError("split_ratios must have exactly 3 entries")
    if any(r <= 0 for r in ratios):
        raise ConfigurationError("split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {sum(ratios)}")
    n_train = round(ratios[0] * total)
    n_val = round(ratios[1] * total)
    n_test = total - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigurationError("every split needs at least one frame")
    return n_train, n_val, n_test


def build_corpus(
    motion_cfg: MotionConfig,
    corruption_cfg: CorruptionConfig,
    split_ratios=DEFAULT_SPLIT_RATIOS,
    tree: KinematicTree = DEFAULT_TREE,
) -> Corpus:
    """Paired (corrupted, clean) train/validation/test sequences.

    Each split is generated independently with seeds derived from the two
    config seeds, so splits share motion statistics but not trajectories.
    """
    counts = split_frame_counts(motion_cfg.n_frames, split_ratios)
    motion_seeds = np.random.SeedSequence(motion_cfg.seed).generate_state(3)
    corruption_seeds = np.random.SeedSequence(corruption_cfg.seed).generate_state(3)
    # one frequency pool for all splits: train must cover the test manifold
    pool = motion_cfg.frequency_pool_hz
    if pool is None:
        pool = draw_frequency_pool(motion_cfg.seed, motion_cfg.motion_bandwidth_hz)
    pairs = {}
    for i, (name, n_frames) in enumerate(zip(SPLIT_NAMES, counts)):
        split_motion = replace(
            motion_cfg, n_frames=n_frames, seed=int(motion_seeds[i]),
            frequency_pool_hz=pool,
        )
        split_corruption = replace(corruption_cfg, seed=int(corruption_seeds[i]))
        clean = generate_ground_truth(split_motion, tree)
        pairs[name] = SequencePair(corrupt(clean, split_corruption), clean)
    return Corpus(
        train=pairs["train"],
        validation=pairs["validation"],
        test=pairs["test"],
        motion_config=motion_cfg,
        corruption_config=corruption_cfg,
        split_ratios=tuple(float(r) for r in split_ratios),
    )


MANIFEST_NAME = "manifest.json"


def write_corpus(corpus: Corpus, out_dir) -> Path:
    """Write the six sequence files plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "motion_config": corpus.motion_config.to_dict(),
        "corruption_config": corpus.corruption_config.to_dict(),
        "split_ratios": list(corpus.split_ratios),
        "splits": {},
    }
    for name, pair in corpus.splits().items():
        corrupted_name = f"{name}.corrupted.jsonl"
        clean_name = f"{name}.clean.jsonl"
        seqio.write_sequence(out_dir / corrupted_name, pair.corrupted)
        seqio.write_sequence(out_dir / clean_name, pair.clean)
        manifest["splits"][name] = {
            "corrupted": corrupted_name,
            "clean": clean_name,
            "n_frames": len(pair.clean),
        }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path


def read_corpus(corpus_dir) -> Corpus:
    corpus_dir = Path(corpus_dir)
    manifest_path = corpus_dir / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read corpus manifest {manifest_path}: {exc}") from exc
    try:
        splits = manifest["splits"]
        pairs = {}
        for name in SPLIT_NAMES:
            entry = splits[name]
            pairs[name] = SequencePair(
                corrupted=seqio.read_sequence(corpus_dir / entry["corrupted"]),
                clean=seqio.read_sequence(corpus_dir / entry["clean"]),
            )
        return Corpus(
            train=pairs["train"],
            validation=pairs["validation"],
            test=pairs["test"],
            motion_config=MotionConfig.from_dict(manifest["motion_config"]),
            corruption_config=CorruptionConfig.from_dict(manifest["corruption_config"]),
            split_ratios=tuple(float(r) for r in manifest["split_ratios"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corpus manifest {manifest_path} is malformed: {exc}") from exc
