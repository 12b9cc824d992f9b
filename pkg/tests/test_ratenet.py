from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from smneuro.cells import OutOfDomain, WeightCellParams, WeightConfig, neuron_count, read_weight_table_csv, smn_index
from smneuro.cli import chain_genome
from smneuro.devices import Level
from smneuro.evolve import EvoConfig, random_genome
from smneuro.ratenet import (
    CyclicGenome, EdgeGene, Genome, GenomeTooLarge, InvalidGenome, NeuronGene, Role,
    compile_genome, crossvalidate, evaluate_window, net_counts,
)

L, H = Level.LRS, Level.HRS
WC = WeightCellParams()
SETTINGS = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def io_genome(edges=(), hidden=(), bias=24e-6):
    neurons = [NeuronGene(i, Role.INPUT) for i in range(8)]
    neurons += [NeuronGene(8, Role.OUTPUT, (L, H), bias), NeuronGene(9, Role.OUTPUT, (H, L), bias)]
    neurons += [NeuronGene(h, Role.HIDDEN, (H, H), bias) for h in hidden]
    return Genome(tuple(neurons), tuple(EdgeGene(s, d, sms) for s, d, sms in edges))


# ---------------------------------------------------------------------------
# validation

def test_valid_minimal():
    io_genome().validate()


@pytest.mark.parametrize("edges,err", [
    ([(10, 10, (L, L, L))], CyclicGenome),
    ([(8, 9, (L, L, L))], InvalidGenome),   # output with outgoing edge
    ([(10, 3, (L, L, L))], InvalidGenome),  # input with incoming edge
    ([(0, 42, (L, L, L))], InvalidGenome),  # dangling
])
def test_invalid_edges(edges, err):
    with pytest.raises(err):
        io_genome(edges, hidden=[10]).validate()


def test_cycle_detected():
    g = io_genome([(10, 11, (L, L, L)), (11, 10, (L, L, L))], hidden=[10, 11])
    with pytest.raises(CyclicGenome):
        g.validate()


def test_duplicate_ids_and_edges():
    g = io_genome()
    with pytest.raises(InvalidGenome):
        Genome(g.neurons + (NeuronGene(10, Role.HIDDEN), NeuronGene(10, Role.HIDDEN))).validate()
    with pytest.raises(InvalidGenome):
        io_genome([(0, 8, (L, L, L)), (0, 8, (H, L, L))]).validate()


def test_role_counts():
    g = io_genome()
    with pytest.raises(InvalidGenome):
        Genome(g.neurons[1:]).validate()


def test_topo_order_smallest_first():
    g = io_genome([(0, 11, (L, L, L)), (11, 10, (L, L, L)), (10, 8, (L, L, L))], hidden=[10, 11])
    order = g.topo_order()
    assert order.index(11) < order.index(10) < order.index(8)
    assert order[:8] == list(range(8))


def test_json_roundtrip(tmp_path):
    g = random_genome(5)
    g.save(tmp_path / "g.json")
    assert Genome.load(tmp_path / "g.json") == g
    d = json.loads(g.dumps())
    d["schema"] = "other"
    with pytest.raises(ValueError):
        Genome.from_dict(d)


# ---------------------------------------------------------------------------
# rate evaluation

def test_zero_input_baseline_is_isolated_neuron(tables):
    # 30 uA sits on the bias grid, so interpolation is exact
    g = io_genome(bias=30e-6)
    act = evaluate_window(g, [0] * 8, tables)
    for nid in (8, 9):
        n = g.neuron(nid)
        assert act.counts[nid] == neuron_count(WC.post.with_levels(*n.smn), bias=30e-6)


def test_zero_input_with_edges_adds_no_current(tables):
    g = io_genome([(0, 8, (H, H, H)), (1, 8, (L, H, L))])
    act = evaluate_window(g, [0] * 8, tables)
    assert act.biases[8] == g.neuron(8).bias
    assert act.counts[8] == tables.rate(g.neuron(8).bias, smn_index(L, H), loads=2)


def test_chain_matches_weight_table(golden_dir, tables):
    from smneuro.cells import neuron_rate_table

    pre = json.loads((golden_dir / "neuron_rates.json").read_text())["dt"]
    for name, matched in (("weight_table.csv", True), ("weight_table_mismatched.csv", False)):
        table = read_weight_table_csv(golden_dir / name)
        for cfg, count in table.items():
            g = chain_genome(cfg, WC.post.i_bias, matched)
            key = "".join(str(b.value) for b in cfg.smn)
            pred = evaluate_window(g, [pre[key]], tables).counts[1]
            assert abs(pred - count) <= 1, (name, cfg.as_ints(), pred, count)


def test_input_domain(tables):
    g = io_genome([(0, 8, (L, L, L))])
    with pytest.raises(OutOfDomain):
        evaluate_window(g, [tables.count_domain[1] + 1] + [0] * 7, tables)
    with pytest.raises(ValueError):
        evaluate_window(g, [0] * 7, tables)


def test_bias_clamp_flag(tables):
    g = io_genome(bias=200e-6)
    evaluate_window(g, [0] * 8, tables)
    with pytest.raises(OutOfDomain):
        evaluate_window(g, [0] * 8, tables, clamp=False)


counts8 = st.lists(st.integers(0, 100), min_size=8, max_size=8)


@SETTINGS
@given(seed=st.integers(0, 2**32 - 1), inputs=counts8)
def test_compiled_matches_reference(tables, seed, inputs):
    g = random_genome(seed, EvoConfig(hidden_cap=4))
    act = evaluate_window(g, inputs, tables)
    net = compile_genome(g)
    c = net_counts(net, inputs, tables)
    order = g.topo_order()
    assert {nid: int(c[k]) for k, nid in enumerate(order)} == act.counts


@SETTINGS
@given(seed=st.integers(0, 2**32 - 1), inputs=counts8, shift=st.integers(1, 50))
def test_relabel_invariance(tables, seed, inputs, shift):
    g = random_genome(seed, EvoConfig(hidden_cap=3))
    m = {i: i for i in g.input_ids}
    m.update({i: i + shift for i in g.ids() if i not in m})
    a = evaluate_window(g, inputs, tables).counts
    b = evaluate_window(g.relabel(m), dict(zip(g.input_ids, inputs)), tables).counts
    assert {m[k]: v for k, v in a.items()} == b


@SETTINGS
@given(sms=st.integers(0, 7), smn=st.integers(0, 3), bias=st.floats(0, 60e-6), c=st.integers(0, 99),
       d=st.integers(1, 300))
def test_single_edge_monotone_in_input(tables, sms, smn, bias, c, d):
    """More input spikes never lower the injected current."""
    lv = lambda v, n: tuple(Level((v >> (n - 1 - k)) & 1) for k in range(n))
    g = Genome((NeuronGene(0, Role.INPUT), NeuronGene(1, Role.OUTPUT, lv(smn, 2), bias)),
               (EdgeGene(0, 1, lv(sms, 3)),), n_in=1, n_out=1)
    hi = min(c + d, tables.count_domain[1])
    a, b = evaluate_window(g, [c], tables), evaluate_window(g, [hi], tables)
    assert b.biases[1] >= a.biases[1]


# ---------------------------------------------------------------------------
# tier cross-validation (slower: full transients)

def test_crossvalidate_too_large(tables):
    g = random_genome(1)
    with pytest.raises(GenomeTooLarge):
        crossvalidate(g, [0] * 8, tables, WC)


@pytest.mark.parametrize("idx,count", [(0, 15), (21, 40)])
def test_crossvalidate_chain(tables, idx, count):
    cfg = WeightConfig.all()[idx]
    g = chain_genome(cfg, WC.post.i_bias)
    cv = crossvalidate(g, [count], tables, WC)
    assert cv.max_error <= 1, cv.to_dict()


def test_crossvalidate_zero_input(tables):
    g = chain_genome(WeightConfig.all()[31], WC.post.i_bias)
    cv = crossvalidate(g, [0], tables, WC)
    assert cv.max_error <= 1


@SETTINGS
@given(seed=st.integers(0, 2**32 - 1), inputs=counts8, pick=st.integers(0, 10**6), new=st.integers(0, 7))
def test_stronger_edge_never_lowers_bias(tables, seed, inputs, pick, new):
    """Swapping one edge's SM tuple for one with a larger calibrated current
    never decreases the downstream neuron's bias."""
    from smneuro.cells import index_levels, sms_index

    g = random_genome(seed, EvoConfig(hidden_cap=3, init_edge_prob=0.4))
    if not g.edges:
        return
    k = pick % len(g.edges)
    e = g.edges[k]
    before = evaluate_window(g, inputs, tables)
    c = before.counts[e.src]
    if tables.current(c, new) <= tables.current(c, sms_index(*e.sms)):
        return
    edges = tuple(EdgeGene(e.src, e.dst, index_levels(new, 3)) if j == k else x for j, x in enumerate(g.edges))
    after = evaluate_window(Genome(g.neurons, edges), inputs, tables)
    assert after.biases[e.dst] >= before.biases[e.dst]
