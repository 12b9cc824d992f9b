"""Acceptance suite: one line per criterion in the terminal summary.

Slow (the full characterization and five desk-scale training runs take
tens of minutes on one core). Select with ``pytest tests/test_acceptance.py``.
"""
from __future__ import annotations

import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from smneuro import cli
from smneuro.cartpole import CartPoleParams, PDPolicy, RandomPolicy, evaluate_batch
from smneuro.cells import (
    WeightCellParams, WeightConfig, neuron_rate_table, read_weight_table_csv, synapse_weight_table,
)
from smneuro.devices import Level
from smneuro.evolve import EvoConfig, episode_fitness, train
from smneuro.ratenet import EdgeGene, Genome, NeuronGene, Role, crossvalidate

pytestmark = pytest.mark.slow
WC = WeightCellParams()


def report(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="module")
def characterized(tmp_path_factory):
    out = tmp_path_factory.mktemp("acc") / "characterize"
    t0 = time.time()
    code = cli.main(["characterize", "--out", str(out)])
    return out, code, time.time() - t0


def test_weight_table_distinctness(characterized):
    out, code, secs = characterized
    m = read_weight_table_csv(out / "weight_table.csv")
    mm = read_weight_table_csv(out / "weight_table_mismatched.csv")
    dm, dmm = len(set(m.values())), len(set(mm.values()))
    ok = len(m) == 32 == len(mm) and dm == 23 and dmm == 23 and code == 0
    report("weight-table distinctness", ok, f"rows {len(m)}/{len(mm)}, distinct matched {dm}, mismatched {dmm} "
           f"(need 23/23), {secs:.0f}s")
    assert ok


def test_characterization_reproduces_golden(characterized, golden_dir):
    out, _, _ = characterized
    same = {name: (out / name).read_bytes() == (golden_dir / name).read_bytes()
            for name in ("weight_table.csv", "weight_table_mismatched.csv", "transfer_tables.json")}
    ok = all(same.values())
    report("characterization vs frozen golden", ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}"
                                                               for k, v in same.items()))
    assert ok


def test_sub_tables():
    n = neuron_rate_table(WC.pre)
    s = synapse_weight_table(WC)
    ok = len(set(n.values())) == 4 and len(set(s.values())) == 8
    report("sub-tables", ok, f"neuron {len(set(n.values()))}/4 distinct {sorted(n.values())}, "
           f"synapse {len(set(s.values()))}/8 distinct")
    assert ok


def test_tier_consistency_chain(tables):
    pre = neuron_rate_table(WC.pre)
    errs = []
    for cfg in WeightConfig.all():
        g = Genome((NeuronGene(0, Role.INPUT), NeuronGene(1, Role.OUTPUT, cfg.smn, WC.post.i_bias)),
                   (EdgeGene(0, 1, cfg.sms),), n_in=1, n_out=1)
        errs.append(crossvalidate(g, [pre[cfg.smn]], tables, WC).max_error)
    ok = max(errs) <= 1
    report("tier consistency (2-neuron chain)", ok,
           f"max |rate - transient| {max(errs)} over 32 configurations (need <= 1), exact {errs.count(0)}")
    assert ok


def test_tier_consistency_fanin(tables):
    """Two synapses into one neuron; logged against the looser bound."""
    L, H = Level.LRS, Level.HRS
    cases = [((L, L, L), (H, H, H), 15, 31), ((H, L, H), (L, H, L), 21, 86), ((H, H, H), (H, H, H), 31, 31),
             ((L, H, H), (H, L, L), 86, 15)]
    errs = []
    for sa, sb, ca, cb in cases:
        g = Genome((NeuronGene(0, Role.INPUT), NeuronGene(1, Role.INPUT),
                    NeuronGene(2, Role.OUTPUT, (L, L), WC.post.i_bias)),
                   (EdgeGene(0, 2, sa), EdgeGene(1, 2, sb)), n_in=2, n_out=1)
        errs.append(crossvalidate(g, [ca, cb], tables, WC).max_error)
    ok = max(errs) <= 2
    report("tier consistency (3-neuron fan-in, logged)", ok, f"errors {errs} (bound <= 2)")
    assert ok


def test_solver_convergence():
    a = neuron_rate_table(WC.pre)
    b = neuron_rate_table(WC.pre, dt=5e-11)
    diff = {k: abs(a[k] - b[k]) for k in a}
    ok = max(diff.values()) <= 1
    report("solver convergence", ok, f"max |N(0.1 ns) - N(0.05 ns)| = {max(diff.values())} "
           f"(dt {sorted(a.values())}, dt/2 {sorted(b.values())})")
    assert ok


def test_environment_validity():
    batch = evaluate_batch(PDPolicy(), 100, 0, CartPoleParams())
    n = int(np.sum(batch.fitnesses == 15000))
    ok = n == 100
    report("environment validity (PD oracle)", ok, f"{n}/100 episodes at 15000")
    assert ok


def test_training_outcome(tables):
    t0 = time.time()
    baseline = evaluate_batch(RandomPolicy(0), 100, 0, CartPoleParams()).mean_fitness
    runs = []
    for seed in range(5):
        res = train(EvoConfig(population=50, generations=50, seed=seed), tables)
        f = episode_fitness(res.best, tables, list(range(100)))
        runs.append((float(f.mean()), int(np.sum(f == 15000)), seed))
    secs = time.time() - t0
    mean, at_cap, seed = max(runs)
    ok = mean >= 20 * baseline and mean >= 1500 and at_cap >= 1 and secs <= 3600
    report("training outcome (best of 5)", ok,
           f"seed {seed}: test mean {mean:.0f} ({mean / baseline:.0f}x random {baseline:.1f}), {at_cap}/100 at cap, "
           f"{secs / 60:.1f} min; all runs {[round(r[0]) for r in sorted(runs, key=lambda r: r[2])]}")
    assert ok


def _rerun_identical(tmp, argv) -> list[str]:
    a, b = tmp / "a", tmp / "b"
    assert cli.main(argv + ["--out", str(a)]) in (0, 1)
    assert cli.main([argv[0], "--from-manifest", str(a / "manifest.json"), "--out", str(b)]) in (0, 1)
    ma = json.loads((a / "manifest.json").read_text())
    return [n for n in ma["artifacts"] if (a / n).read_bytes() != (b / n).read_bytes()]


def test_determinism(tmp_path, golden_dir, characterized):
    tables = str(golden_dir / "transfer_tables.json")
    genome = tmp_path / "g.json"
    Genome.load(golden_dir / "genome_small.json").save(genome)
    cmds = {
        "characterize": ["characterize", "--no-tables"],
        "train": ["train", "--tables", tables, "--population", "10", "--generations", "3", "--episodes", "5",
                  "--set", "evo.checkpoint_every=1"],
        "evaluate": ["evaluate", "--genome", str(genome), "--tables", tables, "--episodes", "50", "--episode-log"],
        "evaluate-random": ["evaluate", "--policy", "random", "--episodes", "200", "--seed", "9"],
        "validate": ["validate", "--genome", str(genome), "--tables", tables, "--samples", "1"],
    }
    diffs = {}
    for name, argv in cmds.items():
        (tmp_path / name).mkdir()
        diffs[name] = _rerun_identical(tmp_path / name, argv)
    ok = not any(diffs.values())
    report("determinism (manifest reruns)", ok,
           ", ".join(f"{k} {'identical' if not v else 'DIFFERS ' + str(v)}" for k, v in diffs.items()))
    assert ok


def test_property_suites():
    import test_cartpole
    import test_codec
    import test_devices
    import test_evolve

    props = [test_devices.test_hysteresis_never_changes_phase_inside_band, test_devices.test_sm_queries_are_non_volatile,
             test_evolve.test_operators_preserve_validity, test_codec.test_decode_argmax_invariance,
             test_codec.test_encode_odd_symmetry, test_cartpole.test_mirror_symmetry]
    failures = []
    for fn in props:
        n = fn._hypothesis_internal_use_settings.max_examples
        assert n >= 1000, fn.__name__
        try:
            fn()
        except Exception as exc:  # noqa: BLE001
            failures.append(f"{fn.__name__}: {exc}")
    ok = not failures
    report("property suites", ok, f"{len(props)} properties x >= 1000 cases, violations: {failures or 'none'}")
    assert ok
