"""Neuron, synapse and weight-cell circuits and their characterization.

Neuron: a stacked pair of nanowire oscillators. ``I_in`` feeds the main
SNW which sits on top of the output SNW; ``I_bias`` feeds the node between
them. Each SNW node is shunted to ground by an SM in series with an
inductive nanowire; the main shunt carries an extra fixed resistor so the
two SM positions are not electrically equivalent. The output SNW fires
whenever its current reaches ``i_c``.

Synapse: a three-SM T-network fed from ``I_channel``. An h-Tron channel
normally shorts ``I_channel`` to ground; each pre-neuron spike heats the
h-Tron for ``t_hold`` and diverts the channel current into the network:
SMS1 in series, SMS3 shunting to ground, SMS2 in series towards the
post-neuron through an injection resistor. The output current lands on
the post-neuron bias node, i.e. it adds to ``I_Bias2``.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .devices import HtronParams, Level, SmParams, SmState, SnwParams, htron_channel_enabled
from .transient import Drive, Netlist, Waveform, detect_spikes, run_transient

WINDOW = 20e-6
DT = 1e-10
REFRACTORY = 10e-9
SOURCE_RISE = 5e-9

SM_IDS = ("SMN1", "SMN2", "SMS1", "SMS2", "SMS3")
LEVELS = (Level.LRS, Level.HRS)


class ProgrammingDisabled(RuntimeError):
    pass


@dataclass
class NeuronCellParams:
    snw_main: SnwParams = field(default_factory=SnwParams)
    snw_out: SnwParams = field(default_factory=SnwParams)
    sm: SmParams = field(default_factory=SmParams)
    smn1: SmState = field(default_factory=SmState)
    smn2: SmState = field(default_factory=SmState)
    i_bias: float = 30e-6
    i_in: float = 10e-6
    htron: HtronParams = field(default_factory=HtronParams)
    l_shunt_main: float = 10e-9
    l_shunt_out: float = 10e-9
    r_shunt_main: float = 10e-3

    def __post_init__(self):
        if self.i_bias < 0 or self.i_in < 0:
            raise ValueError("neuron currents must be non-negative")

    @property
    def sm_tuple(self) -> tuple[Level, Level]:
        return (self.smn1.level, self.smn2.level)

    def with_levels(self, smn1: Level, smn2: Level, **kw) -> "NeuronCellParams":
        return replace(self, smn1=SmState(smn1), smn2=SmState(smn2), **kw)


@dataclass
class WeightCellParams:
    pre: NeuronCellParams = field(default_factory=NeuronCellParams)
    post: NeuronCellParams = field(default_factory=lambda: NeuronCellParams(i_bias=24e-6))
    sm: SmParams = field(default_factory=SmParams)
    sms1: SmState = field(default_factory=SmState)
    sms2: SmState = field(default_factory=SmState)
    sms3: SmState = field(default_factory=SmState)
    i_channel: float = 7.5e-3
    htron: HtronParams = field(default_factory=lambda: HtronParams(r_channel=0.1, t_hold=20e-9))
    l_syn: float = 10e-9
    l_integrate: float = 2e-6
    r_tap: float = 40e-3
    r_inject: float = 2.0
    # heater current applied while programming; gate asserted when >= threshold
    i_program_heater: float = 100e-6

    def __post_init__(self):
        if self.i_channel < 0:
            raise ValueError("i_channel must be non-negative")

    @property
    def i_bias2(self) -> float:
        return self.post.i_bias

    @property
    def i_in2(self) -> float:
        return self.post.i_in

    @property
    def sms_tuple(self) -> tuple[Level, Level, Level]:
        return (self.sms1.level, self.sms2.level, self.sms3.level)

    def config(self) -> "WeightConfig":
        return WeightConfig((self.pre.smn1.level, self.pre.smn2.level, *self.sms_tuple))


@dataclass(frozen=True)
class WeightConfig:
    bits: tuple[Level, Level, Level, Level, Level]

    def __post_init__(self):
        if len(self.bits) != 5:
            raise ValueError("WeightConfig needs 5 SM states")
        object.__setattr__(self, "bits", tuple(Level.coerce(b) for b in self.bits))

    @classmethod
    def all(cls) -> list["WeightConfig"]:
        return [cls(bits) for bits in itertools.product(LEVELS, repeat=5)]

    @property
    def smn(self) -> tuple[Level, Level]:
        return self.bits[0], self.bits[1]

    @property
    def sms(self) -> tuple[Level, Level, Level]:
        return self.bits[2], self.bits[3], self.bits[4]

    def as_ints(self) -> tuple[int, ...]:
        return tuple(b.value for b in self.bits)

    def apply(self, params: WeightCellParams, post_matched: bool = True) -> WeightCellParams:
        n1, n2 = self.smn
        post_levels = (n1, n2) if post_matched else (n1.flipped(), n2.flipped())
        return replace(
            params,
            pre=params.pre.with_levels(n1, n2),
            post=params.post.with_levels(*post_levels),
            sms1=SmState(self.sms[0]),
            sms2=SmState(self.sms[1]),
            sms3=SmState(self.sms[2]),
        )


# ---------------------------------------------------------------------------
# programming


def program_sm(cell, target: str, level, heater_current: float | None = None):
    """Return a copy of ``cell`` with SM ``target`` set to ``level``.

    Programming is an out-of-band state assignment through the SM's h-Tron;
    the h-Tron heater must be above threshold (gate asserted).
    """
    level = Level.coerce(level)
    target = target.upper()
    if isinstance(cell, WeightCellParams):
        htron = cell.htron
        i_h = cell.i_program_heater if heater_current is None else heater_current
        if htron_channel_enabled(i_h, htron):
            raise ProgrammingDisabled(f"programming path disabled for {target}: h-Tron gate deasserted")
        if target in ("SMS1", "SMS2", "SMS3"):
            return replace(cell, **{target.lower(): SmState(level)})
        if target in ("SMN1", "SMN2"):
            pre = program_sm(cell.pre, target, level, heater_current=i_h)
            return replace(cell, pre=pre)
        raise KeyError(f"no SM named {target!r}")
    if isinstance(cell, NeuronCellParams):
        i_h = cell.htron.i_heater_pulse if heater_current is None else heater_current
        if htron_channel_enabled(i_h, cell.htron):
            raise ProgrammingDisabled(f"programming path disabled for {target}: h-Tron gate deasserted")
        if target in ("SMN1", "SMN2"):
            return replace(cell, **{target.lower(): SmState(level)})
        raise KeyError(f"no SM named {target!r}")
    raise TypeError(f"cannot program {type(cell).__name__}")


# ---------------------------------------------------------------------------
# netlists


def add_neuron(net: Netlist, p: NeuronCellParams, prefix: str, bias_dc: float | None = None) -> str:
    """Stamp a neuron into ``net``; returns the output (bias) node name."""
    a, b = f"{prefix}A", f"{prefix}B"
    net.current_source(f"{prefix}Iin", a, dc=p.i_in)
    net.current_source(f"{prefix}Ibias", b, dc=p.i_bias if bias_dc is None else bias_dc)
    net.snw(f"{prefix}SNW1", a, b, p.snw_main)
    net.sm(f"{prefix}SMN1", a, f"{prefix}a1", p.sm, p.smn1)
    net.inductor(f"{prefix}L1", f"{prefix}a1", "0", p.l_shunt_main, r=p.r_shunt_main)
    net.snw(f"{prefix}SNW2", b, "0", p.snw_out)
    net.sm(f"{prefix}SMN2", b, f"{prefix}b1", p.sm, p.smn2)
    net.inductor(f"{prefix}L2", f"{prefix}b1", "0", p.l_shunt_out)
    return b


def add_synapse(net: Netlist, p: WeightCellParams, prefix: str, out_node: str, trigger: str | None) -> str:
    """Stamp a synapse whose output current flows into ``out_node``.

    Returns the name of the element carrying the output current.
    """
    c, e, f = f"{prefix}C", f"{prefix}E", f"{prefix}F"
    net.current_source(f"{prefix}Ich", c, dc=p.i_channel)
    net.htron(f"{prefix}HT", c, "0", p.htron, trigger=trigger)
    net.sm(f"{prefix}SMS1", c, f"{prefix}s1", p.sm, p.sms1)
    net.inductor(f"{prefix}Ls1", f"{prefix}s1", e, p.l_syn)
    net.sm(f"{prefix}SMS3", e, f"{prefix}s3", p.sm, p.sms3)
    net.inductor(f"{prefix}Ls3", f"{prefix}s3", "0", p.l_syn)
    net.sm(f"{prefix}SMS2", e, f"{prefix}s2", p.sm, p.sms2)
    net.inductor(f"{prefix}Ls2", f"{prefix}s2", f, p.l_syn)
    net.inductor(f"{prefix}Ltap", f, "0", p.l_syn, r=p.r_tap)
    net.inductor(f"{prefix}Lint", f, f"{prefix}g", p.l_integrate)
    net.resistor(f"{prefix}Rinj", f"{prefix}g", out_node, p.r_inject)
    return f"{prefix}Rinj"


def _soft_start(net: Netlist) -> dict[str, Drive]:
    return {
        e.name: Drive(dc=e.params["dc"], rise=SOURCE_RISE)
        for e in net.elements
        if e.kind == "CurrentSource"
    }


def neuron_netlist(p: NeuronCellParams, bias: float | None = None,
                   load: tuple[float, float] | None = None) -> Netlist:
    """Single neuron; ``load`` = (L, R) hangs a series L-R from the output
    node to ground, the small-signal image of an attached synapse output."""
    net = Netlist()
    b = add_neuron(net, p, "n", bias_dc=bias)
    if load is not None:
        net.inductor("nLload", b, "0", load[0], r=load[1])
    return net


def synapse_netlist(p: WeightCellParams) -> Netlist:
    """Synapse terminated by a superconducting load standing in for the post
    neuron's output nanowire. The h-Tron heater is driven externally."""
    net = Netlist()
    net.inductor("Lload", "D", "0", p.post.snw_out.l_nw)
    add_synapse(net, p, "s", "D", trigger=None)
    return net


def weightcell_netlist(p: WeightCellParams) -> Netlist:
    net = Netlist()
    add_neuron(net, p.pre, "pre")
    add_neuron(net, p.post, "post")
    add_synapse(net, p, "syn", "postB", trigger="preSNW2")
    return net


# ---------------------------------------------------------------------------
# spike counting


def count_spikes(w: Waveform, signal: str, refractory: float = REFRACTORY) -> int:
    """Spike count with the threshold at half the observed pulse height."""
    x = w[signal]
    skip = min(len(x) - 1, int(round(50e-9 / w.dt)))
    peak = float(np.max(x[skip:])) if len(x) else 0.0
    # sub-microvolt levels are inductive ripple, not hotspot pulses
    if peak < 1e-5:
        return 0
    return detect_spikes(w, signal, 0.5 * peak, refractory).count


def _run(net: Netlist, window: float, dt: float, record, extra_drives=None) -> Waveform:
    drives = _soft_start(net)
    drives.update(extra_drives or {})
    return run_transient(net, window, dt, drives=drives, record=record)


def neuron_count(p: NeuronCellParams, window: float = WINDOW, dt: float = DT, bias: float | None = None,
                 load: tuple[float, float] | None = None) -> int:
    net = neuron_netlist(p, bias, load)
    w = _run(net, window, dt, ["v(nB)"])
    return count_spikes(w, "v(nB)")


def neuron_rate_table(params: NeuronCellParams, window: float = WINDOW, dt: float = DT) -> dict[tuple[Level, Level], int]:
    return {
        (l1, l2): neuron_count(params.with_levels(l1, l2), window, dt)
        for l1, l2 in itertools.product(LEVELS, repeat=2)
    }


def synapse_current(p: WeightCellParams, pre_count: int, window: float = WINDOW, dt: float = DT) -> float:
    """Mean injected current over ``window`` for ``pre_count`` evenly spaced
    pre-neuron spikes."""
    if pre_count <= 0:
        return 0.0
    net = synapse_netlist(p)
    heater = Drive.pulse_train(pre_count, window, p.htron.t_hold, p.htron.i_heater_pulse)
    w = _run(net, window, dt, ["i(sRinj)"], {"sHT": heater})
    return float(np.mean(w["i(sRinj)"]))


def synapse_weight_table(params: WeightCellParams, window: float = WINDOW, dt: float = DT,
                         pre_count: int | None = None) -> dict[tuple[Level, Level, Level], float]:
    """Integrated synapse current for all 8 SMS states at a fixed pre train.

    The default train is the pre-neuron's own rate at its configured SMs.
    """
    if pre_count is None:
        pre_count = neuron_count(params.pre, window, dt)
    out = {}
    for lv in itertools.product(LEVELS, repeat=3):
        p = replace(params, sms1=SmState(lv[0]), sms2=SmState(lv[1]), sms3=SmState(lv[2]))
        out[lv] = synapse_current(p, pre_count, window, dt)
    return out


def weightcell_counts(p: WeightCellParams, window: float = WINDOW, dt: float = DT) -> tuple[int, int]:
    """(pre count, post count) from one full transient of the weight cell."""
    net = weightcell_netlist(p)
    w = _run(net, window, dt, ["v(preB)", "v(postB)"])
    return count_spikes(w, "v(preB)"), count_spikes(w, "v(postB)")


def weightcell_rate_table(params: WeightCellParams, window: float = WINDOW, dt: float = DT,
                          post_matched: bool = True, threads: int = 1) -> dict[WeightConfig, int]:
    configs = WeightConfig.all()

    def one(cfg):
        return weightcell_counts(cfg.apply(params, post_matched), window, dt)[1]

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            counts = list(ex.map(one, configs))
    else:
        counts = [one(c) for c in configs]
    return dict(zip(configs, counts))


# ---------------------------------------------------------------------------
# transfer tables

TABLES_SCHEMA = "smneuro.tables/1"
MAX_LOADS = 2


def default_bias_grid() -> np.ndarray:
    # coarse below onset, fine across it, 1 uA steps in the linear regime
    return np.round(np.r_[np.arange(0, 18, 2.0), np.arange(18, 30, 0.25), np.arange(30, 80.5, 1.0)], 6) * 1e-6


def default_count_grid() -> np.ndarray:
    return np.arange(0, 401, 10, dtype=np.int64)


def smn_index(l1, l2) -> int:
    return 2 * Level.coerce(l1).value + Level.coerce(l2).value


def sms_index(s1, s2, s3) -> int:
    return 4 * Level.coerce(s1).value + 2 * Level.coerce(s2).value + Level.coerce(s3).value


def index_levels(idx: int, n: int) -> tuple[Level, ...]:
    return tuple(Level((idx >> (n - 1 - k)) & 1) for k in range(n))


class OutOfDomain(ValueError):
    pass


@njit(cache=True, nogil=True)
def interp_clamped(x, xs, ys):
    """Linear interpolation on a strictly increasing grid, clamped at the ends."""
    n = xs.shape[0]
    if x <= xs[0]:
        return ys[0]
    if x >= xs[n - 1]:
        return ys[n - 1]
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + w * (ys[hi] - ys[lo])


@njit(cache=True, nogil=True)
def round_half_up(v):
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class TransferTables:
    """Calibrated rate-tier maps.

    ``neuron_rate[k, smn, j]``: spike count per window at bias ``bias_grid[j]``
    with ``k`` synapse outputs attached to the neuron's output node.
    ``synapse_current[sms, j]``: mean injected current for ``count_grid[j]``
    pre spikes per window.
    """

    bias_grid: np.ndarray
    neuron_rate: np.ndarray
    count_grid: np.ndarray
    synapse_current: np.ndarray
    dt: float
    window: float
    i_in: float
    load: tuple[float, float]

    def __post_init__(self):
        for name in ("bias_grid", "count_grid"):
            g = getattr(self, name)
            if len(g) < 1 or np.any(np.diff(g) <= 0):
                raise ValueError(f"{name} must be non-empty and strictly increasing")
        if np.any(self.neuron_rate < 0):
            raise ValueError("negative spike count in neuron_rate")
        if self.neuron_rate.shape[1:] != (4, len(self.bias_grid)):
            raise ValueError("neuron_rate shape mismatch")
        if self.synapse_current.shape != (8, len(self.count_grid)):
            raise ValueError("synapse_current shape mismatch")

    @property
    def bias_domain(self) -> tuple[float, float]:
        return float(self.bias_grid[0]), float(self.bias_grid[-1])

    @property
    def count_domain(self) -> tuple[int, int]:
        return int(self.count_grid[0]), int(self.count_grid[-1])

    @property
    def n_loads(self) -> int:
        return self.neuron_rate.shape[0]

    def rate(self, bias: float, smn: int, loads: int = 1, clamp: bool = True) -> int:
        """Piecewise-linear in bias, rounded half-up."""
        lo, hi = self.bias_domain
        if not math.isfinite(bias):
            raise OutOfDomain(f"bias {bias!r} is not finite")
        if not clamp and not lo <= bias <= hi:
            raise OutOfDomain(f"bias {bias:.3e} A outside [{lo:.3e}, {hi:.3e}]")
        k = min(max(loads, 0), self.n_loads - 1)
        return round_half_up(interp_clamped(float(bias), self.bias_grid, self.rate_values[k, smn]))

    def current(self, count: int, sms: int) -> float:
        """Synapse current for an integer pre count (clamped to the grid)."""
        lut = self.current_lut
        return float(lut[sms, min(max(int(count), 0), lut.shape[1] - 1)])

    @property
    def rate_values(self) -> np.ndarray:
        return self._cached("_rate_values", lambda: np.ascontiguousarray(self.neuron_rate, dtype=np.float64))

    @property
    def current_lut(self) -> np.ndarray:
        """``current_lut[sms, c]`` for every integer count 0..count_domain[1]."""
        def build():
            cg = self.count_grid.astype(np.float64)
            cs = np.arange(int(self.count_grid[-1]) + 1, dtype=np.float64)
            return np.array([[interp_clamped(c, cg, self.synapse_current[s]) for c in cs] for s in range(8)])
        return self._cached("_current_lut", build)

    def _cached(self, name, fn):
        v = self.__dict__.get(name)
        if v is None:
            v = fn()
            object.__setattr__(self, name, v)
        return v

    def monotonicity_report(self) -> dict:
        out = {}
        for k in range(self.n_loads):
            for smn in range(4):
                d = np.diff(self.neuron_rate[k, smn])
                bad = [float(self.bias_grid[j + 1]) for j in np.nonzero(d < 0)[0]]
                key = f"loads={k} SMN={''.join(str(b.value) for b in index_levels(smn, 2))}"
                out[key] = {"monotone": not bad, "violations_at_bias": bad}
        return out

    def to_dict(self) -> dict:
        return {
            "schema": TABLES_SCHEMA,
            "dt": self.dt,
            "window": self.window,
            "i_in": self.i_in,
            "load": list(self.load),
            "bias_grid": self.bias_grid.tolist(),
            "bias_domain": list(self.bias_domain),
            "count_grid": self.count_grid.tolist(),
            "count_domain": list(self.count_domain),
            "neuron_rate": self.neuron_rate.tolist(),
            "synapse_current": self.synapse_current.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransferTables":
        if d.get("schema") != TABLES_SCHEMA:
            raise ValueError(f"unsupported tables schema {d.get('schema')!r}")
        return cls(
            bias_grid=np.asarray(d["bias_grid"], dtype=np.float64),
            neuron_rate=np.asarray(d["neuron_rate"], dtype=np.int64),
            count_grid=np.asarray(d["count_grid"], dtype=np.int64),
            synapse_current=np.asarray(d["synapse_current"], dtype=np.float64),
            dt=float(d["dt"]),
            window=float(d["window"]),
            i_in=float(d["i_in"]),
            load=tuple(d["load"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TransferTables":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def synapse_load(p: WeightCellParams) -> tuple[float, float]:
    """Series L-R seen from the post node looking back into a synapse."""
    return (p.l_integrate, p.r_inject)


def _loaded(load: tuple[float, float], k: int):
    return None if k == 0 else (load[0] / k, load[1] / k)


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def characterize_transfer(params: WeightCellParams, bias_grid=None, count_grid=None,
                          window: float = WINDOW, dt: float = DT, threads: int = 1,
                          max_loads: int = MAX_LOADS) -> TransferTables:
    bias_grid = default_bias_grid() if bias_grid is None else np.asarray(bias_grid, dtype=np.float64)
    count_grid = default_count_grid() if count_grid is None else np.asarray(count_grid, dtype=np.int64)
    if len(bias_grid) == 0 or np.any(np.diff(bias_grid) <= 0):
        raise ValueError("bias grid must be non-empty and strictly increasing")
    if len(count_grid) == 0 or np.any(np.diff(count_grid) <= 0):
        raise ValueError("count grid must be non-empty and strictly increasing")
    load = synapse_load(params)
    neuron = params.post

    jobs = [(k, smn, j) for k in range(max_loads + 1) for smn in range(4) for j in range(len(bias_grid))]

    def run_neuron(job):
        k, smn, j = job
        q = neuron.with_levels(*index_levels(smn, 2))
        return neuron_count(q, window, dt, bias=float(bias_grid[j]), load=_loaded(load, k))

    rates = np.array(_map(run_neuron, jobs, threads), dtype=np.int64).reshape(max_loads + 1, 4, len(bias_grid))

    sjobs = [(s, j) for s in range(8) for j in range(len(count_grid))]

    def run_synapse(job):
        s, j = job
        lv = index_levels(s, 3)
        q = replace(params, sms1=SmState(lv[0]), sms2=SmState(lv[1]), sms3=SmState(lv[2]))
        return synapse_current(q, int(count_grid[j]), window, dt)

    currents = np.array(_map(run_synapse, sjobs, threads), dtype=np.float64).reshape(8, len(count_grid))
    return TransferTables(bias_grid, rates, count_grid, currents, dt, window, neuron.i_in, load)


def write_weight_table_csv(path, table: dict[WeightConfig, int]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SM_IDS) + ",post_count\n")
        for cfg in WeightConfig.all():
            fh.write(",".join(str(b) for b in cfg.as_ints()) + f",{table[cfg]}\n")


def read_weight_table_csv(path) -> dict[WeightConfig, int]:
    out = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != [*SM_IDS, "post_count"]:
            raise ValueError(f"unexpected weight table header {header}")
        for line in fh:
            *bits, n = line.strip().split(",")
            out[WeightConfig(tuple(int(b) for b in bits))] = int(n)
    return out
