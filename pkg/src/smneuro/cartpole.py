"""Cart-pole physics and episode accounting.

Classic benchmark constants, semi-implicit Euler at 20 ms, fitness is the
number of steps survived (capped at ``max_steps``).
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit


class Action(enum.IntEnum):
    LEFT = 0
    RIGHT = 1

    def flipped(self) -> "Action":
        return Action.RIGHT if self is Action.LEFT else Action.LEFT


class Termination(enum.Enum):
    X_BOUND = "x_bound"
    THETA_BOUND = "theta_bound"
    SURVIVED = "survived"


class NonFiniteState(FloatingPointError):
    pass


@dataclass(frozen=True)
class CartPoleParams:
    mass_cart: float = 1.0
    mass_pole: float = 0.1
    half_length: float = 0.5
    force: float = 10.0
    gravity: float = 9.8
    dt: float = 0.02
    x_limit: float = 2.4
    theta_limit: float = 12 * math.pi / 180
    max_steps: int = 15000
    init_range: float = 0.05

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.x_limit > 0 and self.theta_limit > 0):
            raise ValueError("limits must be positive")
        if not (self.mass_cart > 0 and self.mass_pole > 0):
            raise ValueError("masses must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.mass_cart, self.mass_pole, self.half_length, self.force,
                         self.gravity, self.dt, self.x_limit, self.theta_limit], dtype=np.float64)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CartPoleState:
    x: float = 0.0
    dx: float = 0.0
    theta: float = 0.0
    dtheta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.dx, self.theta, self.dtheta], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "CartPoleState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def negate(self) -> "CartPoleState":
        return CartPoleState(-self.x, -self.dx, -self.theta, -self.dtheta)


@dataclass
class EpisodeResult:
    fitness: int
    seed: int
    cause: Termination


@njit(cache=True, nogil=True)
def _advance_into(s, push, p):
    # p = [mc, mp, l, F, g, dt, xlim, thlim]; push = +1 right, -1 left, 0 none
    mc, mp, l, f, g, dt = p[0], p[1], p[2], p[3], p[4], p[5]
    dth = s[3]
    ct = math.cos(s[2])
    st = math.sin(s[2])
    total = mc + mp
    tmp = (push * f + mp * l * dth * dth * st) / total
    thacc = (g * st - ct * tmp) / (l * (4.0 / 3.0 - mp * ct * ct / total))
    xacc = tmp - mp * l * thacc * ct / total
    s[1] = s[1] + dt * xacc
    s[0] = s[0] + dt * s[1]
    s[3] = dth + dt * thacc
    s[2] = s[2] + dt * s[3]


@njit(cache=True, nogil=True)
def _advance(s, push, p):
    out = s.copy()
    _advance_into(out, push, p)
    return out


def step(state: CartPoleState, action, params: CartPoleParams = CartPoleParams(), force_scale: float = 1.0) -> CartPoleState:
    """One 20 ms step. ``force_scale=0`` gives the unforced pole."""
    push = (1.0 if Action(int(action)) is Action.RIGHT else -1.0) * force_scale
    out = _advance(state.as_array(), push, params.as_array())
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"non-finite cart-pole state {out}")
    return CartPoleState.from_array(out)


def initial_state(seed: int, params: CartPoleParams = CartPoleParams()) -> CartPoleState:
    rng = np.random.default_rng(seed)
    return CartPoleState.from_array(rng.uniform(-params.init_range, params.init_range, 4))


def initial_states(seeds: Sequence[int], params: CartPoleParams = CartPoleParams()) -> np.ndarray:
    return np.array([initial_state(int(s), params).as_array() for s in seeds], dtype=np.float64).reshape(-1, 4)


def _cause(s: np.ndarray, params: CartPoleParams) -> Termination | None:
    if abs(s[0]) > params.x_limit:
        return Termination.X_BOUND
    if abs(s[2]) > params.theta_limit:
        return Termination.THETA_BOUND
    return None


def run_episode(policy: Callable, seed: int, params: CartPoleParams = CartPoleParams(),
                initial: CartPoleState | None = None) -> EpisodeResult:
    """Observe, act, step until a bound is crossed or ``max_steps`` elapse.

    ``policy`` maps a length-4 observation array to an Action. If it has a
    ``reset()`` method it is called before the episode. ``initial`` replaces
    the seeded initial state.
    """
    if hasattr(policy, "reset"):
        policy.reset()
    p = params.as_array()
    s = (initial_state(seed, params) if initial is None else initial).as_array()
    for t in range(params.max_steps):
        a = Action(int(policy(s.copy())))
        s = _advance(s, 1.0 if a is Action.RIGHT else -1.0, p)
        if not np.all(np.isfinite(s)):
            raise NonFiniteState(f"non-finite cart-pole state at step {t}")
        cause = _cause(s, params)
        if cause is not None:
            return EpisodeResult(t, seed, cause)
    return EpisodeResult(params.max_steps, seed, Termination.SURVIVED)


# ---------------------------------------------------------------------------
# reference policies


@dataclass
class PDPolicy:
    """Bang-bang push on a linear combination of the state."""

    gains: tuple[float, float, float, float] = (0.1, 0.4, 10.0, 2.0)

    def __call__(self, obs) -> Action:
        s = float(np.dot(self.gains, obs))
        return Action.RIGHT if s > 0 else Action.LEFT


@dataclass
class RandomPolicy:
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.reset()

    def reset(self):
        self._rng = np.random.default_rng(self.seed)

    def __call__(self, obs) -> Action:
        return Action(int(self._rng.integers(2)))


@dataclass
class MirroredPolicy:
    """policy'(s) = flip(policy(-s))."""

    inner: Callable

    def reset(self):
        if hasattr(self.inner, "reset"):
            self.inner.reset()

    def __call__(self, obs) -> Action:
        return Action(int(self.inner(-np.asarray(obs)))).flipped()


# ---------------------------------------------------------------------------
# batches


@dataclass
class BatchSummary:
    n: int
    mean_fitness: float
    fraction_at_max: float
    fitnesses: np.ndarray
    histogram: list[tuple[int, int, int]]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_fitness": self.mean_fitness,
            "fraction_at_max": self.fraction_at_max,
            "min_fitness": int(self.fitnesses.min()),
            "max_fitness": int(self.fitnesses.max()),
        }


def episode_seeds(n: int, base_seed: int) -> list[int]:
    return [base_seed + i for i in range(n)]


def fitness_histogram(fitnesses, max_steps: int = 15000, bins: int = 15) -> list[tuple[int, int, int]]:
    edges = np.linspace(0, max_steps, bins + 1)
    counts, _ = np.histogram(np.asarray(fitnesses), bins=edges)
    return [(int(lo), int(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def write_histogram_csv(path, histogram) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("bin_low,bin_high,count\n")
        for lo, hi, c in histogram:
            fh.write(f"{lo},{hi},{c}\n")


def summarize(fitnesses, max_steps: int) -> BatchSummary:
    f = np.asarray(fitnesses, dtype=np.int64)
    return BatchSummary(
        n=len(f),
        mean_fitness=float(f.mean()),
        fraction_at_max=float(np.mean(f == max_steps)),
        fitnesses=f,
        histogram=fitness_histogram(f, max_steps),
    )


def evaluate_batch(policy, n: int, base_seed: int = 0, params: CartPoleParams = CartPoleParams(),
                   threads: int = 1) -> BatchSummary:
    """Run ``n`` seeded episodes (seeds ``base_seed .. base_seed+n-1``).

    With ``threads > 1`` a policy exposing ``clone()`` gets one copy per
    episode so stateful policies are never shared.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seeds = episode_seeds(n, base_seed)

    def one(seed):
        pol = policy.clone() if threads > 1 and hasattr(policy, "clone") else policy
        return run_episode(pol, seed, params).fitness

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            fits = list(ex.map(one, seeds))
    else:
        fits = [one(s) for s in seeds]
    return summarize(fits, params.max_steps)
