"""smneuro command line: characterize | train | evaluate | validate.

Exit codes: 0 ok, 1 validation failure, 2 usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cartpole import PDPolicy, RandomPolicy, evaluate_batch, write_histogram_csv
from .cells import (
    TransferTables, WeightConfig, characterize_transfer, index_levels, neuron_rate_table, smn_index,
    sms_index, synapse_weight_table, weightcell_rate_table, write_weight_table_csv,
)
from .config import ConfigError, RunConfig, load_config
from .evolve import GenomePolicy, train
from .ratenet import EdgeGene, Genome, NeuronGene, Role, crossvalidate, evaluate_window
from .codec import encode
from .transient import IllPosedNetlist, NumericalBlowUp

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
MANIFEST_SCHEMA = "smneuro.manifest/1"
REFERENCE_MEAN, REFERENCE_FRACTION = 5965.0, 0.40
EXPECTED_DISTINCT = 23


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _levels_str(levels) -> str:
    return "".join(str(b.value) for b in levels)


# ---------------------------------------------------------------------------
# run directories and manifests


def run_dir(args, raw_cfg: dict, command: str) -> Path:
    if args.out:
        out = Path(args.out)
        if out.exists() and any(out.iterdir()):
            raise UsageError(f"refusing to overwrite non-empty run directory {out}")
    else:
        base = Path(raw_cfg.get("output_dir", "runs"))
        k = 1
        while (base / f"{command}-{k:03d}").exists():
            k += 1
        out = base / f"{command}-{k:03d}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, params: dict, raw_cfg: dict, inputs: dict, artifacts: list[str]) -> None:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "command": command,
        "seed": raw_cfg["seed"],
        "params": params,
        "config": raw_cfg,
        "inputs": {k: {"path": str(v), "sha256": sha256(v)} for k, v in inputs.items() if v is not None},
        "artifacts": {name: sha256(out / name) for name in sorted(artifacts)},
    }
    write_json(out / "manifest.json", manifest)


def load_manifest(path) -> dict:
    try:
        with open(path) as fh:
            m = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}") from None
    if m.get("schema") != MANIFEST_SCHEMA:
        raise UsageError(f"{path} is not a run manifest")
    for name, rec in m.get("inputs", {}).items():
        p = Path(rec["path"])
        if not p.exists():
            raise UsageError(f"manifest input {name} missing: {p}")
        if sha256(p) != rec["sha256"]:
            raise UsageError(f"manifest input {name} changed since the run: {p}")
    return m


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_tables(path) -> TransferTables:
    p = _require(path, "--tables")
    try:
        return TransferTables.load(p)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read transfer tables {p}: {exc}") from None


def _load_genome(path) -> Genome:
    p = _require(path, "--genome")
    try:
        return Genome.load(p)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read genome {p}: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_characterize(rc: RunConfig, params: dict, out: Path) -> tuple[int, dict, list[str]]:
    wc = rc.weightcell
    artifacts = []
    tables_cfg = rc.raw.get("tables", {})
    matched = weightcell_rate_table(wc, rc.window, rc.dt, post_matched=True, threads=rc.threads)
    mismatched = weightcell_rate_table(wc, rc.window, rc.dt, post_matched=False, threads=rc.threads)
    write_weight_table_csv(out / "weight_table.csv", matched)
    write_weight_table_csv(out / "weight_table_mismatched.csv", mismatched)
    artifacts += ["weight_table.csv", "weight_table_mismatched.csv"]

    neuron = neuron_rate_table(wc.pre, rc.window, rc.dt)
    synapse = synapse_weight_table(wc, rc.window, rc.dt)
    report = {
        "distinct_matched": len(set(matched.values())),
        "distinct_mismatched": len(set(mismatched.values())),
        "expected_distinct": EXPECTED_DISTINCT,
        "neuron_rates": {_levels_str(k): v for k, v in neuron.items()},
        "neuron_distinct": len(set(neuron.values())),
        "synapse_currents": {_levels_str(k): v for k, v in synapse.items()},
        "synapse_distinct": len(set(synapse.values())),
        "synapse_pre_count": neuron[(wc.pre.smn1.level, wc.pre.smn2.level)],
    }
    if not params.get("no_tables"):
        tables = characterize_transfer(wc, tables_cfg.get("bias_grid"), tables_cfg.get("count_grid"),
                                       rc.window, rc.dt, rc.threads, tables_cfg.get("max_loads", 2))
        tables.save(out / "transfer_tables.json")
        artifacts.append("transfer_tables.json")
        report["monotonicity"] = tables.monotonicity_report()
        report["composition"] = composition_report(tables, wc, neuron, matched, mismatched)
        report["bias_domain"] = list(tables.bias_domain)
        report["count_domain"] = list(tables.count_domain)
    write_json(out / "report.json", report)
    artifacts.append("report.json")
    ok = report["distinct_matched"] == EXPECTED_DISTINCT and report["distinct_mismatched"] == EXPECTED_DISTINCT
    print(f"distinct post rates: matched {report['distinct_matched']}, mismatched {report['distinct_mismatched']}"
          f" (expected {EXPECTED_DISTINCT})")
    print(f"neuron rates {sorted(neuron.values())}, synapse currents distinct {report['synapse_distinct']}")
    return (EXIT_OK if ok else EXIT_VALIDATION), report, artifacts


def chain_genome(cfg: WeightConfig, post_bias: float, post_matched: bool = True) -> Genome:
    n1, n2 = cfg.smn
    post = (n1, n2) if post_matched else (n1.flipped(), n2.flipped())
    return Genome(
        neurons=(NeuronGene(0, Role.INPUT), NeuronGene(1, Role.OUTPUT, post, post_bias)),
        edges=(EdgeGene(0, 1, cfg.sms),),
        n_in=1, n_out=1,
    )


def composition_report(tables, wc, neuron, matched, mismatched) -> dict:
    """Weight-table counts vs the rate-tier prediction for the 2-neuron chain."""
    out = {}
    for name, table, m in (("matched", matched, True), ("mismatched", mismatched, False)):
        errs = []
        for cfg, count in table.items():
            g = chain_genome(cfg, wc.post.i_bias, m)
            pred = evaluate_window(g, [neuron[cfg.smn]], tables).counts[1]
            errs.append(abs(pred - count))
        out[name] = {"max_error": max(errs), "n_exact": int(sum(e == 0 for e in errs))}
    return out


def cmd_train(rc: RunConfig, params: dict, out: Path) -> tuple[int, dict, list[str]]:
    tables = _load_tables(params.get("tables"))
    ckpt_every = rc.evo.checkpoint_every
    artifacts = []

    def on_gen(gen, pop, fitness, history):
        if ckpt_every and gen % ckpt_every == 0:
            (out / "checkpoints").mkdir(exist_ok=True)
            name = f"checkpoints/gen{gen:04d}.json"
            write_json(out / name, {"generation": gen, "fitness": [float(f) for f in fitness],
                                    "population": [g.to_dict() for g in pop]})
            artifacts.append(name)
        print(f"gen {gen}: best {history[-1][1]:.1f} mean {history[-1][2]:.1f}", flush=True)

    res = train(rc.evo, tables, rc.cartpole, rc.encoder, threads=rc.threads, on_generation=on_gen)
    res.best.save(out / "best_genome.json")
    (out / "history.csv").write_text(res.history_csv())
    with open(out / "validation.csv", "w") as fh:
        fh.write("generation,best_validation\n")
        for g, v in enumerate(res.validation_history):
            fh.write(f"{g},{v!r}\n")
    summary = {
        "best_validation": res.best_validation,
        "best_generation": res.best.generation,
        "final_best": res.history[-1][1],
        "final_mean": res.history[-1][2],
        "n_hidden": len(res.best.hidden_ids),
        "n_edges": len(res.best.edges),
    }
    write_json(out / "summary.json", summary)
    artifacts += ["best_genome.json", "history.csv", "validation.csv", "summary.json"]
    return EXIT_OK, summary, artifacts


def _policy(params, rc: RunConfig):
    kind = params.get("policy")
    if kind == "pd":
        return PDPolicy()
    if kind == "random":
        return RandomPolicy(rc.seed)
    genome = _load_genome(params.get("genome"))
    return GenomePolicy(genome, _load_tables(params.get("tables")), rc.encoder)


def cmd_evaluate(rc: RunConfig, params: dict, out: Path) -> tuple[int, dict, list[str]]:
    policy = _policy(params, rc)
    ev = rc.raw.get("evaluate", {})
    n = int(params.get("episodes") or ev.get("episodes", 1000))
    base = int(ev.get("base_seed", 0) if params.get("base_seed") is None else params["base_seed"])
    if n < 1:
        raise UsageError("--episodes must be >= 1")
    batch = evaluate_batch(policy, n, base, rc.cartpole, threads=rc.threads)
    summary = batch.to_dict()
    summary["reference"] = {
        "mean_fitness": REFERENCE_MEAN,
        "fraction_at_max": REFERENCE_FRACTION,
        "mean_minus_reference": batch.mean_fitness - REFERENCE_MEAN,
        "fraction_minus_reference": batch.fraction_at_max - REFERENCE_FRACTION,
    }
    write_histogram_csv(out / "fitness_histogram.csv", batch.histogram)
    write_json(out / "summary.json", summary)
    artifacts = ["fitness_histogram.csv", "summary.json"]
    if params.get("episode_log"):
        with open(out / "episodes.csv", "w") as fh:
            fh.write("seed,fitness\n")
            for k, f in enumerate(batch.fitnesses):
                fh.write(f"{base + k},{int(f)}\n")
        artifacts.append("episodes.csv")
    print(f"mean fitness {batch.mean_fitness:.1f} over {n} episodes, {batch.fraction_at_max:.1%} at cap "
          f"(reference {REFERENCE_MEAN:.0f}, {REFERENCE_FRACTION:.0%})")
    return EXIT_OK, summary, artifacts


def extract_subgraphs(genome: Genome, activity, max_inputs: int = 3):
    """Per non-input neuron with fan-in: the neuron plus its strongest
    predecessors as ideal inputs. Dropped predecessors' currents fold into
    the neuron's bias."""
    inc = genome.incoming()
    subs = []
    for nid in genome.topo_order():
        edges = inc.get(nid, [])
        if not edges:
            continue
        ranked = sorted(edges, key=lambda e: (-activity.currents[(e.src, e.dst)], e.src))
        keep, drop = ranked[:max_inputs], ranked[max_inputs:]
        n = genome.neuron(nid)
        bias = n.bias + sum(activity.currents[(e.src, e.dst)] for e in drop)
        neurons = [NeuronGene(e.src, Role.INPUT) for e in keep] + [NeuronGene(nid, Role.OUTPUT, n.smn, bias)]
        g = Genome(tuple(neurons), tuple(keep), n_in=len(keep), n_out=1)
        subs.append((nid, g, {e.src: activity.counts[e.src] for e in keep}))
    return subs


def cmd_validate(rc: RunConfig, params: dict, out: Path) -> tuple[int, dict, list[str]]:
    genome = _load_genome(params.get("genome"))
    tables = _load_tables(params.get("tables"))
    vcfg = rc.raw.get("validate", {})
    n_samples = int(params.get("samples") or vcfg.get("samples", 3))
    rng = np.random.default_rng(rc.seed)
    ranges = np.asarray(rc.encoder.ranges)
    records = []
    for s in range(n_samples):
        obs = rng.uniform(-0.5, 0.5, 4) * ranges
        act = evaluate_window(genome, encode(obs, rc.encoder), tables)
        for nid, sub, inputs in extract_subgraphs(genome, act):
            cv = crossvalidate(sub, inputs, tables, rc.weightcell, rc.window, rc.dt)
            records.append({"sample": s, "neuron": nid, "fan_in": len(sub.edges), "inputs": {str(k): v for k, v in inputs.items()},
                            **cv.to_dict()})
    chain_tol = int(vcfg.get("chain_tolerance", 1))
    fan_tol = int(vcfg.get("fanin_tolerance", 2))
    worst_chain = max((r["max_error"] for r in records if r["fan_in"] == 1), default=0)
    worst_fan = max((r["max_error"] for r in records if r["fan_in"] > 1), default=0)
    report = {"n_subgraphs": len(records), "max_error_chain": worst_chain, "max_error_fanin": worst_fan,
              "chain_tolerance": chain_tol, "fanin_tolerance": fan_tol, "records": records}
    ok = worst_chain <= chain_tol and worst_fan <= fan_tol
    report["passed"] = ok
    write_json(out / "validation.json", report)
    print(f"{len(records)} subgraphs: max error chain {worst_chain}, fan-in {worst_fan}")
    return (EXIT_OK if ok else EXIT_VALIDATION), report, ["validation.json"]


COMMANDS = {
    "characterize": cmd_characterize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (default: $SMNEURO_CONFIG)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. evo.population=50")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="run directory (must be new or empty)")
    common.add_argument("--from-manifest", help="re-run with the config and parameters of a previous run")

    p = _Parser(prog="smneuro", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    c = sub.add_parser("characterize", parents=[common], help="weight table, transfer tables, report")
    c.add_argument("--no-tables", action="store_true", help="skip the transfer-table sweep")
    c.add_argument("--dt", type=float)
    c.add_argument("--window", type=float)
    t = sub.add_parser("train", parents=[common], help="evolve a controller")
    t.add_argument("--tables")
    t.add_argument("--population", type=int)
    t.add_argument("--generations", type=int)
    t.add_argument("--episodes", type=int, help="training episodes per fitness call")
    e = sub.add_parser("evaluate", parents=[common], help="seeded test episodes")
    e.add_argument("--genome")
    e.add_argument("--tables")
    e.add_argument("--policy", choices=["genome", "pd", "random"], default="genome")
    e.add_argument("--episodes", type=int)
    e.add_argument("--base-seed", type=int)
    e.add_argument("--episode-log", action="store_true")
    v = sub.add_parser("validate", parents=[common], help="cross-validate rate tier against transients")
    v.add_argument("--genome")
    v.add_argument("--tables")
    v.add_argument("--samples", type=int)
    return p


# flag -> config key
FLAG_KEYS = {
    "seed": "seed",
    "threads": "threads",
    "dt": "engine.dt",
    "window": "engine.window",
    "population": "evo.population",
    "generations": "evo.generations",
}
PARAM_FLAGS = ("no_tables", "tables", "genome", "policy", "episodes", "base_seed", "episode_log", "samples")
PATH_PARAMS = ("tables", "genome")


def _resolve(args) -> tuple[dict, dict]:
    if args.from_manifest:
        m = load_manifest(args.from_manifest)
        if m["command"] != args.command:
            raise UsageError(f"manifest is for {m['command']!r}, not {args.command!r}")
        return m["config"], dict(m["params"])
    overrides = list(args.overrides)
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append(f"{key}={json.dumps(v)}")
    if args.command == "train" and args.episodes is not None:
        overrides.append(f"evo.episodes={args.episodes}")
    raw = load_config(args.config, overrides)
    if "seed" not in raw.get("evo", {}):
        raw["evo"] = {**raw.get("evo", {}), "seed": raw["seed"]}
    params = {}
    for k in PARAM_FLAGS:
        v = getattr(args, k, None)
        if v is None or v is False:
            continue
        if args.command == "train" and k == "episodes":
            continue
        params[k] = str(Path(v).resolve()) if k in PATH_PARAMS else v
    return raw, params


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        raw, params = _resolve(args)
        rc = RunConfig.from_dict(raw)
        out = run_dir(args, raw, args.command)
        code, _, artifacts = COMMANDS[args.command](rc, params, out)
        inputs = {k: params.get(k) for k in PATH_PARAMS}
        write_manifest(out, args.command, params, raw, inputs, artifacts)
        print(f"run directory: {out}")
        return code
    except (UsageError, ConfigError) as exc:
        print(f"smneuro: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalBlowUp, IllPosedNetlist, FloatingPointError) as exc:
        print(f"smneuro: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
