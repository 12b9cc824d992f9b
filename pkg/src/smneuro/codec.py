"""Observation -> input spike counts, output counts -> action."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .cartpole import Action

N_INPUTS = 8
N_OUTPUTS = 2
# input channel layout: (x+, x-, dx+, dx-, theta+, theta-, dtheta+, dtheta-)
OUTPUT_LEFT, OUTPUT_RIGHT = 8, 9


@dataclass(frozen=True)
class EncoderConfig:
    ranges: tuple[float, float, float, float] = (2.4, 2.0, 12 * math.pi / 180, 2.0)
    max_count: int = 100

    def __post_init__(self):
        object.__setattr__(self, "ranges", tuple(float(r) for r in self.ranges))
        if len(self.ranges) != 4 or any(not r > 0 for r in self.ranges):
            raise ValueError("need 4 positive observation ranges")
        if self.max_count < 1:
            raise ValueError("max_count must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranges"] = list(self.ranges)
        return d


@njit(cache=True, nogil=True)
def _encode(obs, ranges, max_count, out):
    for k in range(4):
        v = obs[k] / ranges[k]
        if v > 1.0:
            v = 1.0
        elif v < -1.0:
            v = -1.0
        # half-up on the magnitude keeps the pair odd-symmetric
        c = math.floor(abs(v) * max_count + 0.5)
        if v > 0:
            out[2 * k] = c
            out[2 * k + 1] = 0
        else:
            out[2 * k] = 0
            out[2 * k + 1] = c
    return out


@njit(cache=True, nogil=True)
def _decode(left, right, previous):
    # previous: 0 left, 1 right, -1 none
    if left > right:
        return 0
    if right > left:
        return 1
    return 1 if previous < 0 else previous


def encode(observation, config: EncoderConfig = EncoderConfig()) -> np.ndarray:
    obs = observation.as_array() if hasattr(observation, "as_array") else np.asarray(observation, dtype=np.float64)
    out = np.zeros(N_INPUTS, dtype=np.int64)
    return _encode(obs.astype(np.float64), np.asarray(config.ranges), config.max_count, out)


def decode(output_counts, previous: Action | None = None) -> Action:
    """Argmax vote: neuron 8 (Left) vs neuron 9 (Right).

    Ties repeat ``previous``; with no previous action a tie goes Right.
    """
    if len(output_counts) != N_OUTPUTS:
        raise ValueError("decode expects exactly 2 output counts")
    prev = -1 if previous is None else int(previous)
    return Action(_decode(int(output_counts[0]), int(output_counts[1]), prev))
