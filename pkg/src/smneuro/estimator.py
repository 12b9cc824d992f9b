"""scikit-learn style wrappers around the encoder and the evolved controller."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .cartpole import CartPoleParams, evaluate_batch
from .codec import EncoderConfig, _decode, encode
from .evolve import EvoConfig, GenomePolicy, train
from .ratenet import compile_genome, net_counts


class SpikeEncoder(TransformerMixin, BaseEstimator):
    """Observation rows (x, dx, theta, dtheta) -> 8 sign-split spike counts."""

    def __init__(self, ranges=(2.4, 2.0, 0.20943951023931953, 2.0), max_count=100):
        self.ranges = ranges
        self.max_count = max_count

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 4:
            raise ValueError("expected observations of shape (n, 4)")
        self.config_ = EncoderConfig(tuple(self.ranges), int(self.max_count))
        self.n_features_in_ = 4
        return self

    def transform(self, X):
        if not hasattr(self, "config_"):
            raise NotFittedError("SpikeEncoder is not fitted")
        X = np.asarray(X, dtype=np.float64).reshape(-1, 4)
        return np.stack([encode(row, self.config_) for row in X]) if len(X) else np.zeros((0, 8), dtype=np.int64)


class EvolvedPolicy(BaseEstimator):
    """Cart-pole controller trained by the GA.

    ``fit`` runs the evolution (X and y are ignored: the environment is the
    data), ``predict`` maps a trajectory of observations to actions with the
    tie rule carried from row to row, ``score`` is the mean test fitness.
    """

    def __init__(self, tables=None, population=50, generations=50, episodes=25, hidden_cap=10,
                 seed=0, threads=1, ranges=(2.4, 2.0, 0.20943951023931953, 2.0), max_count=100,
                 score_episodes=100, score_base_seed=0):
        self.tables = tables
        self.population = population
        self.generations = generations
        self.episodes = episodes
        self.hidden_cap = hidden_cap
        self.seed = seed
        self.threads = threads
        self.ranges = ranges
        self.max_count = max_count
        self.score_episodes = score_episodes
        self.score_base_seed = score_base_seed

    def _encoder(self) -> EncoderConfig:
        return EncoderConfig(tuple(self.ranges), int(self.max_count))

    def fit(self, X=None, y=None):
        if self.tables is None:
            raise ValueError("EvolvedPolicy needs calibrated transfer tables")
        cfg = EvoConfig(population=self.population, generations=self.generations, episodes=self.episodes,
                        hidden_cap=self.hidden_cap, seed=self.seed)
        res = train(cfg, self.tables, CartPoleParams(), self._encoder(), threads=self.threads)
        self.genome_ = res.best
        self.history_ = res.history
        self.best_validation_ = res.best_validation
        return self

    def _check(self):
        if not hasattr(self, "genome_"):
            raise NotFittedError("EvolvedPolicy is not fitted")

    def predict(self, X):
        self._check()
        X = np.asarray(X, dtype=np.float64).reshape(-1, 4)
        net = compile_genome(self.genome_)
        enc = self._encoder()
        out = np.empty(len(X), dtype=np.int64)
        prev = -1
        for k, row in enumerate(X):
            c = net_counts(net, encode(row, enc), self.tables)
            prev = _decode(c[net.output_pos[0]], c[net.output_pos[1]], prev)
            out[k] = prev
        return out

    def policy(self) -> GenomePolicy:
        self._check()
        return GenomePolicy(self.genome_, self.tables, self._encoder())

    def score(self, X=None, y=None) -> float:
        """Mean fitness over ``score_episodes`` seeded test episodes."""
        batch = evaluate_batch(self.policy(), self.score_episodes, self.score_base_seed, CartPoleParams())
        return batch.mean_fitness
