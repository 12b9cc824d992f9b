"""EONS-style neuroevolution of rate-domain networks for cart-pole.

Structural mutations (add/remove neuron, add/remove edge) and parametric
ones (flip one SM bit, perturb one bias) plus graph recombination.
Selection is tournament with elitism; fitness is the mean number of steps
survived over a batch of seeded episodes.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .cartpole import Action, CartPoleParams, _advance_into, initial_states
from .cells import TransferTables
from .codec import EncoderConfig, _decode, _encode
from .devices import Level
from .ratenet import CompiledNet, EdgeGene, Genome, NeuronGene, Role, _net_counts, compile_genome, net_counts, table_arrays

N_IN, N_OUT = 8, 2
# training/validation seeds live above this; test batches use small seeds
TRAIN_SEED_FLOOR = 2**31


@dataclass
class EvoConfig:
    population: int = 100
    generations: int = 200
    tournament: int = 4
    elitism: int = 2
    p_add_neuron: float = 0.05
    p_remove_neuron: float = 0.05
    p_add_edge: float = 0.15
    p_remove_edge: float = 0.10
    p_flip_sm: float = 0.20
    p_perturb_bias: float = 0.10
    crossover_rate: float = 0.5
    episodes: int = 25
    validation_episodes: int = 25
    hidden_cap: int = 10
    seed: int = 0
    # genome initialisation / perturbation
    init_edge_prob: float = 0.25
    bias_init: tuple[float, float] = (15e-6, 30e-6)
    bias_domain: tuple[float, float] = (0.0, 80e-6)
    bias_sigma: float = 1e-6
    max_retries: int = 20
    checkpoint_every: int = 0

    def __post_init__(self):
        self.bias_init = tuple(self.bias_init)
        self.bias_domain = tuple(self.bias_domain)
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.generations < 0 or self.episodes < 1 or self.validation_episodes < 1:
            raise ValueError("generations >= 0 and episode counts >= 1 required")
        if self.hidden_cap < 0:
            raise ValueError("hidden_cap must be >= 0")
        if not 1 <= self.tournament:
            raise ValueError("tournament must be >= 1")
        if not 0 <= self.elitism <= self.population:
            raise ValueError("elitism must be within [0, population]")
        for f in fields(self):
            if f.name.startswith("p_") or f.name in ("crossover_rate", "init_edge_prob"):
                v = getattr(self, f.name)
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{f.name} must be in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bias_init"] = list(self.bias_init)
        d["bias_domain"] = list(self.bias_domain)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvoConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown evo keys {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# operators


def _levels(rng, n):
    return tuple(Level(int(b)) for b in rng.integers(0, 2, n))


def _bias(rng, cfg: EvoConfig) -> float:
    return float(rng.uniform(*cfg.bias_init))


def random_genome(seed: int, cfg: EvoConfig | None = None) -> Genome:
    cfg = cfg or EvoConfig()
    rng = np.random.default_rng(seed)
    neurons = [NeuronGene(i, Role.INPUT) for i in range(N_IN)]
    neurons += [NeuronGene(N_IN + k, Role.OUTPUT, _levels(rng, 2), _bias(rng, cfg)) for k in range(N_OUT)]
    n_hidden = int(rng.integers(0, cfg.hidden_cap + 1))
    hidden = [NeuronGene(N_IN + N_OUT + k, Role.HIDDEN, _levels(rng, 2), _bias(rng, cfg)) for k in range(n_hidden)]
    neurons += hidden
    ins = list(range(N_IN))
    outs = list(range(N_IN, N_IN + N_OUT))
    hids = [h.id for h in hidden]
    # hidden ids are already a topological order
    pairs = [(i, o) for i in ins for o in outs]
    pairs += [(i, h) for i in ins for h in hids]
    pairs += [(a, b) for k, a in enumerate(hids) for b in hids[k + 1:]]
    pairs += [(h, o) for h in hids for o in outs]
    edges = [EdgeGene(s, d, _levels(rng, 3)) for s, d in pairs if rng.random() < cfg.init_edge_prob]
    return Genome(tuple(neurons), tuple(edges), seed=int(seed), generation=0)


def _sm_sites(g: Genome) -> list[tuple[str, int, int]]:
    sites = []
    for n in g.neurons:
        if n.role is not Role.INPUT:
            sites += [("n", n.id, 0), ("n", n.id, 1)]
    for k, e in enumerate(g.edges):
        sites += [("e", k, 0), ("e", k, 1), ("e", k, 2)]
    return sites


def flip_sm(g: Genome, rng) -> Genome:
    """Flip exactly one SM bit (no-op if the genome has none)."""
    sites = _sm_sites(g)
    if not sites:
        return g
    kind, ref, bit = sites[int(rng.integers(len(sites)))]
    if kind == "n":
        n = g.neuron(ref)
        smn = list(n.smn)
        smn[bit] = smn[bit].flipped()
        neurons = tuple(replace(n, smn=tuple(smn)) if x.id == ref else x for x in g.neurons)
        return replace(g, neurons=neurons)
    e = g.edges[ref]
    sms = list(e.sms)
    sms[bit] = sms[bit].flipped()
    edges = tuple(replace(e, sms=tuple(sms)) if k == ref else x for k, x in enumerate(g.edges))
    return replace(g, edges=edges)


def _add_neuron(g: Genome, rng, cfg: EvoConfig) -> Genome:
    if len(g.hidden_ids) >= cfg.hidden_cap:
        return g
    nid = max(x.id for x in g.neurons) + 1
    h = NeuronGene(nid, Role.HIDDEN, _levels(rng, 2), _bias(rng, cfg))
    if g.edges:
        k = int(rng.integers(len(g.edges)))
        e = g.edges[k]
        edges = [x for j, x in enumerate(g.edges) if j != k]
        edges += [EdgeGene(e.src, nid, e.sms), EdgeGene(nid, e.dst, _levels(rng, 3))]
    else:
        src = int(rng.choice(g.input_ids))
        dst = int(rng.choice(g.output_ids))
        edges = [EdgeGene(src, nid, _levels(rng, 3)), EdgeGene(nid, dst, _levels(rng, 3))]
    return replace(g, neurons=g.neurons + (h,), edges=tuple(edges))


def _remove_neuron(g: Genome, rng) -> Genome:
    hids = g.hidden_ids
    if not hids:
        return g
    h = int(rng.choice(hids))
    return replace(
        g,
        neurons=tuple(n for n in g.neurons if n.id != h),
        edges=tuple(e for e in g.edges if h not in (e.src, e.dst)),
    )


def _add_edge(g: Genome, rng, cfg: EvoConfig) -> Genome:
    srcs = [n.id for n in g.neurons if n.role is not Role.OUTPUT]
    dsts = [n.id for n in g.neurons if n.role is not Role.INPUT]
    present = {(e.src, e.dst) for e in g.edges}
    for _ in range(cfg.max_retries):
        s = int(rng.choice(srcs))
        d = int(rng.choice(dsts))
        if s == d or (s, d) in present or g.reaches(d, s):
            continue
        return replace(g, edges=g.edges + (EdgeGene(s, d, _levels(rng, 3)),))
    return g


def _remove_edge(g: Genome, rng) -> Genome:
    if not g.edges:
        return g
    k = int(rng.integers(len(g.edges)))
    return replace(g, edges=tuple(e for j, e in enumerate(g.edges) if j != k))


def _perturb_bias(g: Genome, rng, cfg: EvoConfig) -> Genome:
    ids = [n.id for n in g.neurons if n.role is not Role.INPUT]
    nid = int(rng.choice(ids))
    lo, hi = cfg.bias_domain
    n = g.neuron(nid)
    b = float(min(max(n.bias + rng.normal(0.0, cfg.bias_sigma), lo), hi))
    return replace(g, neurons=tuple(replace(n, bias=b) if x.id == nid else x for x in g.neurons))


def mutate(genome: Genome, cfg: EvoConfig, seed: int) -> Genome:
    """Each operator fires independently with its configured probability."""
    rng = np.random.default_rng(seed)
    g = genome
    if rng.random() < cfg.p_add_neuron:
        g = _add_neuron(g, rng, cfg)
    if rng.random() < cfg.p_remove_neuron:
        g = _remove_neuron(g, rng)
    if rng.random() < cfg.p_add_edge:
        g = _add_edge(g, rng, cfg)
    if rng.random() < cfg.p_remove_edge:
        g = _remove_edge(g, rng)
    if rng.random() < cfg.p_flip_sm:
        g = flip_sm(g, rng)
    if rng.random() < cfg.p_perturb_bias:
        g = _perturb_bias(g, rng, cfg)
    return g


def crossover(a: Genome, b: Genome, cfg: EvoConfig, seed: int) -> Genome:
    """Graph recombination with ``a`` as the primary parent.

    Shared neurons/edges take their genes from either parent; everything
    unique to ``a`` is kept; things unique to ``b`` join with probability
    1/2 when they fit (hidden cap, endpoints present, no cycle).
    """
    rng = np.random.default_rng(seed)
    bn = {n.id: n for n in b.neurons}
    neurons = {}
    for n in a.neurons:
        other = bn.get(n.id)
        neurons[n.id] = n if other is None or rng.random() < 0.5 else other
    n_hidden = len(a.hidden_ids)
    for n in b.neurons:
        if n.id in neurons or n_hidden >= cfg.hidden_cap:
            continue
        if rng.random() < 0.5:
            neurons[n.id] = n
            n_hidden += 1
    be = {(e.src, e.dst): e for e in b.edges}
    edges = []
    for e in a.edges:
        other = be.get((e.src, e.dst))
        edges.append(e if other is None or rng.random() < 0.5 else other)
    child = Genome(tuple(neurons.values()), tuple(edges), seed=a.seed, generation=a.generation,
                   n_in=a.n_in, n_out=a.n_out)
    present = {(e.src, e.dst) for e in edges}
    for e in b.edges:
        if (e.src, e.dst) in present or e.src not in neurons or e.dst not in neurons:
            continue
        if rng.random() < 0.5 and not child.reaches(e.dst, e.src):
            child = replace(child, edges=child.edges + (e,))
    return child


# ---------------------------------------------------------------------------
# fitness


@njit(cache=True, nogil=True)
def _episodes(init, cp, max_steps, ranges, max_count,
              is_input, smn, bias, fanin, in_ptr, e_src, e_sms, input_pos, output_pos,
              bias_grid, rates, lut):
    n = init.shape[0]
    fit = np.zeros(n, dtype=np.int64)
    obs_counts = np.zeros(8, dtype=np.int64)
    counts = np.zeros(is_input.shape[0], dtype=np.int64)
    xlim, thlim = cp[6], cp[7]
    for k in range(n):
        s = init[k].copy()
        prev = -1
        t = 0
        while t < max_steps:
            _encode(s, ranges, max_count, obs_counts)
            _net_counts(obs_counts, is_input, smn, bias, fanin, in_ptr, e_src, e_sms, input_pos,
                        bias_grid, rates, lut, counts)
            a = _decode(counts[output_pos[0]], counts[output_pos[1]], prev)
            prev = a
            _advance_into(s, 1.0 if a == 1 else -1.0, cp)
            if abs(s[0]) > xlim or abs(s[2]) > thlim or not (math.isfinite(s[0]) and math.isfinite(s[2])):
                break
            t += 1
        fit[k] = t
    return fit


def episode_fitness(genome: Genome | CompiledNet, tables: TransferTables, seeds: Sequence[int],
                    encoder: EncoderConfig = EncoderConfig(), params: CartPoleParams = CartPoleParams()) -> np.ndarray:
    """Per-episode fitness of a genome-controlled cart-pole (compiled path)."""
    net = genome if isinstance(genome, CompiledNet) else compile_genome(genome)
    init = initial_states(seeds, params)
    return _episodes(init, params.as_array(), params.max_steps, np.asarray(encoder.ranges), encoder.max_count,
                     net.is_input, net.smn, net.bias, net.fanin, net.in_ptr, net.e_src, net.e_sms,
                     net.input_pos, net.output_pos, *table_arrays(tables))


@dataclass
class GenomePolicy:
    """Callable policy: encode, evaluate one window, vote."""

    genome: Genome
    tables: TransferTables
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    _prev: Action | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self._net = compile_genome(self.genome)

    def reset(self):
        self._prev = None

    def clone(self) -> "GenomePolicy":
        return GenomePolicy(self.genome, self.tables, self.encoder)

    def __call__(self, obs) -> Action:
        from .codec import decode, encode

        counts = net_counts(self._net, encode(obs, self.encoder), self.tables)
        a = decode([counts[self._net.output_pos[0]], counts[self._net.output_pos[1]]], self._prev)
        self._prev = a
        return a


def seed_block(*key: int, n: int) -> list[int]:
    ss = np.random.SeedSequence([int(k) for k in key])
    return [int(v) | TRAIN_SEED_FLOOR for v in ss.generate_state(n, dtype=np.uint32)]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    best: Genome
    best_validation: float
    history: list[tuple[int, float, float]]
    validation_history: list[float]
    population: list[Genome]

    def history_csv(self) -> str:
        lines = ["generation,best,mean"]
        lines += [f"{g},{b!r},{m!r}" for g, b, m in self.history]
        return "\n".join(lines) + "\n"


def _tournament(rng, fitness: np.ndarray, k: int) -> int:
    idx = rng.integers(0, len(fitness), size=k)
    return int(idx[np.argmax(fitness[idx])])


def train(cfg: EvoConfig, tables: TransferTables, params: CartPoleParams = CartPoleParams(),
          encoder: EncoderConfig = EncoderConfig(), threads: int = 1,
          on_generation: Callable | None = None) -> TrainResult:
    """Run the GA. Generation 0 is the random initial population; each of
    the ``cfg.generations`` later populations is bred from the previous."""
    rng = np.random.default_rng(cfg.seed)
    pop = [random_genome(int(rng.integers(2**62)), cfg) for _ in range(cfg.population)]
    val_seeds = seed_block(cfg.seed, 1, n=cfg.validation_episodes)
    history, val_hist = [], []
    best, best_val = None, -math.inf

    def fit_all(genomes, seeds):
        fn = lambda g: float(np.mean(episode_fitness(g, tables, seeds, encoder, params)))
        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                return np.array(list(ex.map(fn, genomes)))
        return np.array([fn(g) for g in genomes])

    for gen in range(cfg.generations + 1):
        seeds = seed_block(cfg.seed, 0, gen, n=cfg.episodes)
        fitness = fit_all(pop, seeds)
        order = np.argsort(-fitness, kind="stable")
        top = pop[int(order[0])]
        v = float(np.mean(episode_fitness(top, tables, val_seeds, encoder, params)))
        if v > best_val:
            best, best_val = top, v
        history.append((gen, float(fitness[order[0]]), float(fitness.mean())))
        val_hist.append(best_val)
        if on_generation is not None:
            on_generation(gen, pop, fitness, history)
        if gen == cfg.generations:
            break
        nxt = [pop[int(i)] for i in order[: cfg.elitism]]
        while len(nxt) < cfg.population:
            a = pop[_tournament(rng, fitness, cfg.tournament)]
            if rng.random() < cfg.crossover_rate:
                b = pop[_tournament(rng, fitness, cfg.tournament)]
                child = crossover(a, b, cfg, int(rng.integers(2**62)))
            else:
                child = a
            child = mutate(child, cfg, int(rng.integers(2**62)))
            nxt.append(replace(child, generation=gen + 1))
        pop = nxt
    return TrainResult(best, best_val, history, val_hist, pop)
