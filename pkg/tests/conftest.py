import numpy as np
import pytest

from skelrefine.skeleton import DEFAULT_TREE, POSE_DIM, Encoding, SkeletonSequence


@pytest.fixture
def tree():
    return DEFAULT_TREE


def random_absolute_sequence(rng, n_frames, scale=0.5, frame_rate_hz=30.0):
    data = rng.normal(scale=scale, size=(n_frames, POSE_DIM))
    return SkeletonSequence(data, Encoding.ABSOLUTE, frame_rate_hz)


def smooth_absolute_sequence(rng, n_frames, frame_rate_hz=30.0, amplitude=0.3):
    """Band-limited sinusoidal coordinates, one random phase per component."""
    t = np.arange(n_frames) / frame_rate_hz
    freqs = rng.uniform(0.1, 1.0, size=POSE_DIM)
    phases = rng.uniform(0, 2 * np.pi, size=POSE_DIM)
    amps = rng.uniform(0.2, 1.0, size=POSE_DIM) * amplitude
    data = amps * np.sin(2 * np.pi * freqs * t[:, None] + phases)
    return SkeletonSequence(data, Encoding.ABSOLUTE, frame_rate_hz)
