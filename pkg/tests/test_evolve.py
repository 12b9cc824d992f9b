from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from smneuro.cartpole import CartPoleParams, evaluate_batch
from smneuro.evolve import (
    TRAIN_SEED_FLOOR, EvoConfig, GenomePolicy, crossover, episode_fitness, flip_sm, mutate, random_genome,
    seed_block, train,
)
from smneuro.ratenet import Role

SETTINGS = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
NO_MUT = dict(p_add_neuron=0, p_remove_neuron=0, p_add_edge=0, p_remove_edge=0, p_flip_sm=0, p_perturb_bias=0)


def _bits(g):
    out = []
    for n in g.neurons:
        out += [b.value for b in n.smn] if n.role is not Role.INPUT else []
    for e in g.edges:
        out += [b.value for b in e.sms]
    return np.array(out)


def test_random_genome_valid_and_deterministic():
    for s in range(20):
        g = random_genome(s)
        g.validate()
        assert g == random_genome(s)
        assert g.input_ids == list(range(8)) and g.output_ids == [8, 9]
        assert len(g.hidden_ids) <= EvoConfig().hidden_cap


def test_random_genome_cap_zero():
    g = random_genome(3, EvoConfig(hidden_cap=0, init_edge_prob=1.0))
    assert g.hidden_ids == []
    assert len(g.edges) == 16


def test_config_validation():
    with pytest.raises(ValueError):
        EvoConfig(population=1)
    with pytest.raises(ValueError):
        EvoConfig(p_flip_sm=1.5)
    with pytest.raises(ValueError):
        EvoConfig.from_dict({"populaton": 3})
    assert EvoConfig.from_dict(EvoConfig().to_dict()) == EvoConfig()


@SETTINGS
@given(seed=st.integers(0, 2**40))
def test_zero_rates_mutate_is_identity(seed):
    cfg = EvoConfig(**NO_MUT)
    g = random_genome(seed % 1000, cfg)
    assert mutate(g, cfg, seed) == g


@SETTINGS
@given(seed=st.integers(0, 2**40))
def test_self_crossover_is_identity(seed):
    cfg = EvoConfig()
    g = random_genome(seed % 997, cfg)
    assert crossover(g, g, cfg, seed) == g


@SETTINGS
@given(seed=st.integers(0, 2**40))
def test_flip_changes_exactly_one_bit(seed):
    g = random_genome(seed % 991)
    h = flip_sm(g, np.random.default_rng(seed))
    assert int(np.sum(_bits(g) != _bits(h))) == 1
    assert [n.bias for n in g.neurons] == [n.bias for n in h.neurons]


@SETTINGS
@given(a=st.integers(0, 2**40), b=st.integers(0, 2**40), seed=st.integers(0, 2**40),
       cap=st.integers(0, 6), steps=st.integers(1, 5))
def test_operators_preserve_validity(a, b, seed, cap, steps):
    """Validity closure: mutate and crossover never leave the valid set."""
    cfg = EvoConfig(hidden_cap=cap, p_add_neuron=0.5, p_remove_neuron=0.3, p_add_edge=0.6, p_remove_edge=0.3,
                    p_flip_sm=0.5, p_perturb_bias=0.5)
    x, y = random_genome(a, cfg), random_genome(b, cfg)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        x = mutate(crossover(x, y, cfg, int(rng.integers(2**62))), cfg, int(rng.integers(2**62)))
        x.validate()
        assert len(x.hidden_ids) <= cap
        assert all(cfg.bias_domain[0] <= n.bias <= cfg.bias_domain[1]
                   for n in x.neurons if n.role is not Role.INPUT)


def test_seed_streams_disjoint_from_test_seeds():
    s = seed_block(0, 0, 3, n=100)
    assert min(s) >= TRAIN_SEED_FLOOR
    assert len(set(s)) == 100
    assert s == seed_block(0, 0, 3, n=100)
    assert s != seed_block(0, 0, 4, n=100)


def test_compiled_fitness_matches_policy_loop(tables):
    g = random_genome(11, EvoConfig(hidden_cap=3, init_edge_prob=0.5))
    seeds = list(range(5))
    fast = episode_fitness(g, tables, seeds)
    slow = evaluate_batch(GenomePolicy(g, tables), 5, 0, CartPoleParams())
    assert list(fast) == list(slow.fitnesses)


def test_tiny_train(tables):
    cfg = EvoConfig(population=2, generations=1, episodes=2, validation_episodes=2, seed=4)
    res = train(cfg, tables)
    assert [h[0] for h in res.history] == [0, 1]
    assert len(res.population) == 2
    res.best.validate()


def test_generations_zero_is_random_population(tables):
    cfg = EvoConfig(population=4, generations=0, episodes=2, validation_episodes=2, seed=2)
    res = train(cfg, tables)
    assert len(res.history) == 1
    assert all(g.generation == 0 for g in res.population)


def test_train_reproducible_and_validation_monotone(tables):
    cfg = EvoConfig(population=8, generations=4, episodes=3, validation_episodes=3, seed=7)
    a, b = train(cfg, tables), train(cfg, tables, threads=2)
    assert a.history == b.history and a.best == b.best
    assert all(x <= y for x, y in zip(a.validation_history, a.validation_history[1:]))
    assert a.history_csv().startswith("generation,best,mean\n0,")
