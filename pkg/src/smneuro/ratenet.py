"""Rate-domain evaluation of feed-forward neurosynaptic networks.

A window is evaluated in topological order: each non-input neuron's bias is
its base bias plus the calibrated synapse currents of its incoming edges,
and its spike count is read off the calibrated neuron transfer curve.
"""
from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .cells import (
    DT, WINDOW, OutOfDomain, TransferTables, WeightCellParams, _soft_start, add_neuron, add_synapse,
    count_spikes, interp_clamped, round_half_up, sms_index, smn_index,
)
from .devices import Level, SmState
from .transient import Drive, Netlist, run_transient

GENOME_SCHEMA = "smneuro.genome/1"
MAX_CROSSVALIDATE_NEURONS = 4


class Role(enum.Enum):
    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT = "output"


class InvalidGenome(ValueError):
    pass


class CyclicGenome(InvalidGenome):
    pass


class GenomeTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class NeuronGene:
    id: int
    role: Role
    smn: tuple[Level, Level] = (Level.LRS, Level.LRS)
    bias: float = 0.0

    def to_dict(self) -> dict:
        return {"id": self.id, "role": self.role.value, "smn": [b.value for b in self.smn], "bias": self.bias}

    @classmethod
    def from_dict(cls, d) -> "NeuronGene":
        return cls(int(d["id"]), Role(d["role"]), tuple(Level.coerce(b) for b in d["smn"]), float(d["bias"]))


@dataclass(frozen=True)
class EdgeGene:
    src: int
    dst: int
    sms: tuple[Level, Level, Level] = (Level.LRS, Level.LRS, Level.LRS)

    def to_dict(self) -> dict:
        return {"src": self.src, "dst": self.dst, "sms": [b.value for b in self.sms]}

    @classmethod
    def from_dict(cls, d) -> "EdgeGene":
        return cls(int(d["src"]), int(d["dst"]), tuple(Level.coerce(b) for b in d["sms"]))


@dataclass(frozen=True)
class Genome:
    neurons: tuple[NeuronGene, ...]
    edges: tuple[EdgeGene, ...] = ()
    seed: int = 0
    generation: int = 0
    n_in: int = 8
    n_out: int = 2

    def __post_init__(self):
        object.__setattr__(self, "neurons", tuple(sorted(self.neurons, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: (e.src, e.dst))))

    # -- structure ---------------------------------------------------------
    def neuron(self, nid: int) -> NeuronGene:
        for n in self.neurons:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def ids(self, role: Role | None = None) -> list[int]:
        return [n.id for n in self.neurons if role is None or n.role is role]

    @property
    def input_ids(self) -> list[int]:
        return self.ids(Role.INPUT)

    @property
    def output_ids(self) -> list[int]:
        return self.ids(Role.OUTPUT)

    @property
    def hidden_ids(self) -> list[int]:
        return self.ids(Role.HIDDEN)

    def incoming(self) -> dict[int, list[EdgeGene]]:
        inc = defaultdict(list)
        for e in self.edges:
            inc[e.dst].append(e)
        return inc

    def topo_order(self) -> list[int]:
        """Kahn's algorithm, smallest id first. Raises CyclicGenome."""
        indeg = {n.id: 0 for n in self.neurons}
        succ = defaultdict(list)
        for e in self.edges:
            indeg[e.dst] += 1
            succ[e.src].append(e.dst)
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for j in succ[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(j)
            ready.sort()
        if len(order) != len(indeg):
            raise CyclicGenome(f"genome has a cycle through {sorted(set(indeg) - set(order))}")
        return order

    def reaches(self, a: int, b: int) -> bool:
        """True if there is a directed path a -> ... -> b."""
        succ = defaultdict(list)
        for e in self.edges:
            succ[e.src].append(e.dst)
        stack, seen = [a], set()
        while stack:
            i = stack.pop()
            if i == b:
                return True
            if i in seen:
                continue
            seen.add(i)
            stack.extend(succ[i])
        return False

    def validate(self) -> None:
        ids = [n.id for n in self.neurons]
        if len(set(ids)) != len(ids):
            raise InvalidGenome("duplicate neuron ids")
        roles = {n.id: n.role for n in self.neurons}
        if len(self.input_ids) != self.n_in or len(self.output_ids) != self.n_out:
            raise InvalidGenome(f"need {self.n_in} inputs and {self.n_out} outputs")
        pairs = set()
        for e in self.edges:
            if e.src not in roles or e.dst not in roles:
                raise InvalidGenome(f"edge {e.src}->{e.dst} references a missing neuron")
            if (e.src, e.dst) in pairs:
                raise InvalidGenome(f"duplicate edge {e.src}->{e.dst}")
            pairs.add((e.src, e.dst))
            if roles[e.dst] is Role.INPUT:
                raise InvalidGenome(f"input neuron {e.dst} has an incoming edge")
            if roles[e.src] is Role.OUTPUT:
                raise InvalidGenome(f"output neuron {e.src} has an outgoing edge")
            if e.src == e.dst:
                raise CyclicGenome(f"self-loop on {e.src}")
        self.topo_order()

    # -- relabel / io ------------------------------------------------------
    def relabel(self, mapping: Mapping[int, int]) -> "Genome":
        return replace(
            self,
            neurons=tuple(replace(n, id=mapping[n.id]) for n in self.neurons),
            edges=tuple(replace(e, src=mapping[e.src], dst=mapping[e.dst]) for e in self.edges),
        )

    def to_dict(self) -> dict:
        return {
            "schema": GENOME_SCHEMA,
            "seed": self.seed,
            "generation": self.generation,
            "n_in": self.n_in,
            "n_out": self.n_out,
            "neurons": [n.to_dict() for n in self.neurons],
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d) -> "Genome":
        if d.get("schema") != GENOME_SCHEMA:
            raise ValueError(f"unsupported genome schema {d.get('schema')!r}")
        g = cls(
            neurons=tuple(NeuronGene.from_dict(n) for n in d["neurons"]),
            edges=tuple(EdgeGene.from_dict(e) for e in d["edges"]),
            seed=int(d.get("seed", 0)),
            generation=int(d.get("generation", 0)),
            n_in=int(d.get("n_in", 8)),
            n_out=int(d.get("n_out", 2)),
        )
        g.validate()
        return g

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Genome":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class WindowActivity:
    counts: dict[int, int]
    currents: dict[tuple[int, int], float] = field(default_factory=dict)
    biases: dict[int, float] = field(default_factory=dict)


def _input_map(genome: Genome, inputs) -> dict[int, int]:
    if isinstance(inputs, Mapping):
        m = {int(k): int(v) for k, v in inputs.items()}
        if sorted(m) != genome.input_ids:
            raise ValueError("input counts must cover exactly the input neurons")
        return m
    inputs = list(inputs)
    if len(inputs) != genome.n_in:
        raise ValueError(f"expected {genome.n_in} input counts, got {len(inputs)}")
    return {i: int(c) for i, c in zip(genome.input_ids, inputs)}


def evaluate_window(genome: Genome, inputs, tables: TransferTables, clamp: bool = True) -> WindowActivity:
    """Spike counts of every neuron for one window.

    ``inputs`` is a sequence ordered by input id or a mapping id -> count.
    Biases outside the calibrated range are clamped; with ``clamp=False``
    they raise OutOfDomain instead.
    """
    genome.validate()
    order = genome.topo_order()
    counts = _input_map(genome, inputs)
    lo, hi = tables.count_domain
    for i, c in counts.items():
        if not lo <= c <= hi:
            raise OutOfDomain(f"input count {c} for neuron {i} outside [{lo}, {hi}]")
    inc = genome.incoming()
    act = WindowActivity(counts={})
    for nid in order:
        n = genome.neuron(nid)
        if n.role is Role.INPUT:
            act.counts[nid] = counts[nid]
            continue
        bias = n.bias
        for e in inc.get(nid, ()):
            i = tables.current(act.counts[e.src], sms_index(*e.sms))
            act.currents[(e.src, e.dst)] = i
            bias += i
        act.biases[nid] = bias
        act.counts[nid] = tables.rate(bias, smn_index(*n.smn), loads=len(inc.get(nid, ())), clamp=clamp)
    return act


# ---------------------------------------------------------------------------
# compiled form for the training hot loop


@dataclass(frozen=True)
class CompiledNet:
    """Flat arrays over neurons in topological order."""

    is_input: np.ndarray
    smn: np.ndarray
    bias: np.ndarray
    fanin: np.ndarray
    in_ptr: np.ndarray
    e_src: np.ndarray
    e_sms: np.ndarray
    input_pos: np.ndarray
    output_pos: np.ndarray


def compile_genome(genome: Genome) -> CompiledNet:
    genome.validate()
    order = genome.topo_order()
    pos = {nid: k for k, nid in enumerate(order)}
    inc = genome.incoming()
    n = len(order)
    is_input = np.zeros(n, dtype=np.bool_)
    smn = np.zeros(n, dtype=np.int64)
    bias = np.zeros(n)
    fanin = np.zeros(n, dtype=np.int64)
    in_ptr = np.zeros(n + 1, dtype=np.int64)
    e_src, e_sms = [], []
    for k, nid in enumerate(order):
        g = genome.neuron(nid)
        is_input[k] = g.role is Role.INPUT
        smn[k] = smn_index(*g.smn)
        bias[k] = g.bias
        edges = inc.get(nid, ())
        fanin[k] = len(edges)
        for e in edges:
            e_src.append(pos[e.src])
            e_sms.append(sms_index(*e.sms))
        in_ptr[k + 1] = len(e_src)
    return CompiledNet(
        is_input, smn, bias, fanin, in_ptr,
        np.array(e_src, dtype=np.int64), np.array(e_sms, dtype=np.int64),
        np.array([pos[i] for i in genome.input_ids], dtype=np.int64),
        np.array([pos[i] for i in genome.output_ids], dtype=np.int64),
    )


def table_arrays(tables: TransferTables):
    return tables.bias_grid.astype(np.float64), tables.rate_values, tables.current_lut


@njit(cache=True, nogil=True)
def _net_counts(inputs, is_input, smn, bias, fanin, in_ptr, e_src, e_sms, input_pos,
                bias_grid, rates, lut, counts):
    for k in range(input_pos.shape[0]):
        counts[input_pos[k]] = inputs[k]
    c_hi = lut.shape[1] - 1
    n_loads = rates.shape[0]
    for k in range(is_input.shape[0]):
        if is_input[k]:
            continue
        b = bias[k]
        for m in range(in_ptr[k], in_ptr[k + 1]):
            b += lut[e_sms[m], min(max(counts[e_src[m]], 0), c_hi)]
        ld = min(fanin[k], n_loads - 1)
        counts[k] = round_half_up(interp_clamped(b, bias_grid, rates[ld, smn[k]]))
    return counts


def net_counts(net: CompiledNet, inputs, tables: TransferTables) -> np.ndarray:
    counts = np.zeros(len(net.is_input), dtype=np.int64)
    return _net_counts(np.asarray(inputs, dtype=np.int64), net.is_input, net.smn, net.bias, net.fanin,
                       net.in_ptr, net.e_src, net.e_sms, net.input_pos, *table_arrays(tables), counts)


# ---------------------------------------------------------------------------
# tier cross-validation


@dataclass
class CrossValidation:
    rate_counts: dict[int, int]
    transient_counts: dict[int, int]

    @property
    def errors(self) -> dict[int, int]:
        return {i: abs(self.rate_counts[i] - self.transient_counts[i]) for i in self.transient_counts}

    @property
    def max_error(self) -> int:
        return max(self.errors.values(), default=0)

    def to_dict(self) -> dict:
        return {
            "rate_counts": {str(k): v for k, v in self.rate_counts.items()},
            "transient_counts": {str(k): v for k, v in self.transient_counts.items()},
            "errors": {str(k): v for k, v in self.errors.items()},
            "max_error": self.max_error,
        }


def genome_netlist(genome: Genome, inputs: Mapping[int, int], params: WeightCellParams,
                   window: float = WINDOW) -> tuple[Netlist, dict[str, Drive]]:
    """Full circuit for a small genome.

    Input neurons are ideal spike sources: the h-Tron heaters of their
    outgoing synapses receive ``count`` evenly spaced pulses per window,
    the same train used to calibrate the synapse tables.
    """
    net = Netlist()
    drives: dict[str, Drive] = {}
    out_node = {}
    for n in genome.neurons:
        if n.role is Role.INPUT:
            continue
        cell = params.post.with_levels(*n.smn)
        out_node[n.id] = add_neuron(net, cell, f"n{n.id}_", bias_dc=n.bias)
    for e in genome.edges:
        prefix = f"e{e.src}_{e.dst}_"
        src = genome.neuron(e.src)
        syn = replace(params, sms1=SmState(e.sms[0]), sms2=SmState(e.sms[1]), sms3=SmState(e.sms[2]))
        trigger = None if src.role is Role.INPUT else f"n{e.src}_SNW2"
        add_synapse(net, syn, prefix, out_node[e.dst], trigger=trigger)
        if src.role is Role.INPUT:
            c = inputs[e.src]
            drives[f"{prefix}HT"] = (
                Drive.pulse_train(c, window, params.htron.t_hold, params.htron.i_heater_pulse)
                if c > 0 else Drive()
            )
    return net, drives


def crossvalidate(genome: Genome, inputs, tables: TransferTables, params: WeightCellParams,
                  window: float = WINDOW, dt: float = DT) -> CrossValidation:
    if len(genome.neurons) > MAX_CROSSVALIDATE_NEURONS:
        raise GenomeTooLarge(f"crossvalidate supports at most {MAX_CROSSVALIDATE_NEURONS} neurons, "
                             f"got {len(genome.neurons)}")
    genome.validate()
    imap = _input_map(genome, inputs)
    act = evaluate_window(genome, imap, tables)
    net, extra = genome_netlist(genome, imap, params, window)
    drives = _soft_start(net)
    drives.update(extra)
    ids = [n.id for n in genome.neurons if n.role is not Role.INPUT]
    w = run_transient(net, window, dt, drives=drives, record=[f"v(n{i}_B)" for i in ids])
    transient = {i: count_spikes(w, f"v(n{i}_B)") for i in ids}
    return CrossValidation({i: act.counts[i] for i in ids}, transient)
