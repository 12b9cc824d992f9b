"""Fixed-step behavioral transient solver.

Every two-terminal element is a series R-L branch, discretised with the
backward-Euler companion ``i = g*v + j`` where ``g = 1/(R + L/h)`` and
``j = g*(L/h)*i_old``. Resistors have ``L = 0``, inductors ``R = 0``.
SNW switches add ``r_nw`` while in the normal phase and h-Tron channels add
their channel resistance while the heater is above threshold.

While any SNW sits in the normal phase the step is split into fixed
``hotspot_dt`` sub-steps so that retrapping happens at ``i_r`` independently
of the outer ``dt``. Sampled node voltages are averages over the step
(flux increment / dt), branch currents are end-of-step values.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np

from .devices import HtronParams, Level, SmParams, SmState, SnwParams, sm_resistance

GROUND = "0"

K_R, K_L, K_SNW, K_SM, K_HTRON, K_ISRC = range(6)
_KIND_CODES = {
    "Resistor": K_R,
    "Inductor": K_L,
    "SnwSwitch": K_SNW,
    "SmResistor": K_SM,
    "HtronSwitch": K_HTRON,
    "CurrentSource": K_ISRC,
}

ERR_SINGULAR = 1
ERR_BLOWUP = 2


class NetlistError(ValueError):
    pass


class IllPosedNetlist(NetlistError):
    def __init__(self, nodes):
        self.nodes = sorted(nodes)
        super().__init__(f"ill-posed netlist: no conductive path to ground for nodes {self.nodes}")


class NumericalBlowUp(RuntimeError):
    def __init__(self, step: int, reason: str = "non-finite value"):
        self.step = step
        super().__init__(f"numerical blow-up at step {step}: {reason}")


@dataclass
class Element:
    name: str
    kind: str
    nodes: tuple[str, str]
    params: dict = field(default_factory=dict)
    state: object | None = None


@dataclass
class Drive:
    """Time-varying value: ``dc`` plus rectangular pulses.

    Pulse ``k`` is active on ``[starts[k], starts[k] + width)``. A positive
    ``rise`` ramps the dc part linearly from zero over that time.
    """

    dc: float = 0.0
    starts: Sequence[float] = ()
    width: float = 0.0
    amplitude: float = 0.0
    rise: float = 0.0

    def sample(self, t: np.ndarray) -> np.ndarray:
        out = np.full(t.shape, float(self.dc))
        if self.rise > 0:
            out *= np.minimum(1.0, t / self.rise)
        if len(self.starts) and self.width > 0:
            starts = np.sort(np.asarray(self.starts, dtype=float))
            k = np.searchsorted(starts, t, side="right") - 1
            valid = k >= 0
            active = np.zeros(t.shape, dtype=bool)
            active[valid] = t[valid] < starts[k[valid]] + self.width
            out[active] += self.amplitude
        return out

    @classmethod
    def pulse_train(cls, count: int, window: float, width: float, amplitude: float, dc: float = 0.0) -> "Drive":
        """``count`` evenly spaced pulses over ``window``, the first at half a period."""
        if count <= 0:
            return cls(dc=dc)
        period = window / count
        starts = (np.arange(count) + 0.5) * period
        return cls(dc=dc, starts=tuple(starts), width=width, amplitude=amplitude)


class Netlist:
    """Declarative circuit: node ids and a list of elements.

    Current sources push current *into* their first node and draw it from
    the second. Branch currents of other elements are positive flowing from
    the first node to the second.
    """

    def __init__(self, nodes: Iterable[str] = ()):
        self.nodes: list[str] = [GROUND]
        self.elements: list[Element] = []
        for n in nodes:
            self.add_node(n)

    def add_node(self, name: str) -> str:
        if name not in self.nodes:
            self.nodes.append(name)
        return name

    def _add(self, name, kind, a, b, params, state=None) -> Element:
        if any(e.name == name for e in self.elements):
            raise NetlistError(f"duplicate element name {name!r}")
        for n in (a, b):
            self.add_node(n)
        el = Element(name, kind, (a, b), dict(params), state)
        self.elements.append(el)
        return el

    def resistor(self, name, a, b, r):
        return self._add(name, "Resistor", a, b, {"r": float(r)})

    def inductor(self, name, a, b, l, r=0.0):
        return self._add(name, "Inductor", a, b, {"l": float(l), "r": float(r)})

    def snw(self, name, a, b, params: SnwParams):
        return self._add(name, "SnwSwitch", a, b, {"snw": params})

    def sm(self, name, a, b, params: SmParams, state: SmState):
        return self._add(name, "SmResistor", a, b, {"sm": params}, state)

    def htron(self, name, a, b, params: HtronParams, trigger: str | None = None):
        return self._add(name, "HtronSwitch", a, b, {"htron": params, "trigger": trigger})

    def current_source(self, name, pos, neg=GROUND, dc=0.0):
        return self._add(name, "CurrentSource", pos, neg, {"dc": float(dc)})

    def element(self, name: str) -> Element:
        for e in self.elements:
            if e.name == name:
                return e
        raise KeyError(name)

    def sm_states(self) -> dict[str, SmState]:
        return {e.name: e.state for e in self.elements if e.kind == "SmResistor"}

    def validate(self) -> None:
        declared = set(self.nodes)
        if GROUND not in declared:
            raise NetlistError("ground node missing")
        for e in self.elements:
            if e.kind not in _KIND_CODES:
                raise NetlistError(f"unknown element kind {e.kind!r}")
            for n in e.nodes:
                if n not in declared:
                    raise NetlistError(f"element {e.name} references undeclared node {n!r}")
            if e.kind == "HtronSwitch" and e.params.get("trigger"):
                trig = self.element(e.params["trigger"])
                if trig.kind != "SnwSwitch":
                    raise NetlistError(f"h-Tron {e.name} trigger must be an SnwSwitch")
        if not any(e.kind == "CurrentSource" for e in self.elements):
            raise NetlistError("netlist has no source")
        # every node needs a conductive path to ground, otherwise G is singular
        parent = {n: n for n in self.nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in self.elements:
            if e.kind != "CurrentSource":
                ra, rb = find(e.nodes[0]), find(e.nodes[1])
                if ra != rb:
                    parent[ra] = rb
        g = find(GROUND)
        floating = [n for n in self.nodes if find(n) != g]
        if floating:
            raise IllPosedNetlist(floating)

    # structured text round-trip
    def to_dict(self) -> dict:
        els = []
        for e in self.elements:
            p = {}
            for k, v in e.params.items():
                if isinstance(v, (SnwParams, SmParams, HtronParams)):
                    p[k] = dict(v.__dict__)
                else:
                    p[k] = v
            d = {"name": e.name, "kind": e.kind, "nodes": list(e.nodes), "params": p}
            if isinstance(e.state, SmState):
                d["state"] = e.state.level.name
            els.append(d)
        return {"schema": "smneuro.netlist/1", "nodes": list(self.nodes), "elements": els}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Netlist":
        if d.get("schema", "smneuro.netlist/1") != "smneuro.netlist/1":
            raise NetlistError(f"unsupported netlist schema {d.get('schema')!r}")
        net = cls(n for n in d.get("nodes", []) if n != GROUND)
        for e in d["elements"]:
            kind, (a, b), p = e["kind"], e["nodes"], e.get("params", {})
            if kind == "Resistor":
                net.resistor(e["name"], a, b, p["r"])
            elif kind == "Inductor":
                net.inductor(e["name"], a, b, p["l"], p.get("r", 0.0))
            elif kind == "SnwSwitch":
                net.snw(e["name"], a, b, SnwParams(**p.get("snw", {})))
            elif kind == "SmResistor":
                net.sm(e["name"], a, b, SmParams(**p.get("sm", {})), SmState(Level.coerce(e.get("state", "LRS"))))
            elif kind == "HtronSwitch":
                net.htron(e["name"], a, b, HtronParams(**p.get("htron", {})), p.get("trigger"))
            elif kind == "CurrentSource":
                net.current_source(e["name"], a, b, p.get("dc", 0.0))
            else:
                raise NetlistError(f"unknown element kind {kind!r}")
        return net

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "Netlist":
        return cls.from_dict(json.loads(text))


@dataclass
class Waveform:
    dt: float
    samples: dict[str, np.ndarray]
    switch_counts: dict[str, int] = field(default_factory=dict)
    max_residual: float = 0.0
    source_scale: float = 0.0

    def __post_init__(self):
        lengths = {len(v) for v in self.samples.values()}
        if len(lengths) > 1:
            raise ValueError("all signals must have equal length")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.samples.values()))) if self.samples else 0

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_samples) + 1) * self.dt

    def __getitem__(self, key: str) -> np.ndarray:
        return self.samples[key]

    def to_csv(self, path, signals: Sequence[str] | None = None) -> None:
        signals = list(signals or self.samples)
        t = self.times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", *signals])
            cols = [self.samples[s] for s in signals]
            for k in range(self.n_samples):
                w.writerow([repr(float(t[k]))] + [repr(float(c[k])) for c in cols])


@dataclass(frozen=True)
class SpikeTrain:
    times: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("spike times must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.times)


def detect_spikes(waveform: Waveform, signal: str, v_threshold: float, refractory: float = 10e-9) -> SpikeTrain:
    """One spike per upward crossing of ``v_threshold``; crossings within
    ``refractory`` of the previous spike are ignored."""
    if signal not in waveform.samples:
        raise KeyError(f"unknown signal id {signal!r}")
    if not v_threshold > 0:
        raise ValueError("threshold must be positive")
    if refractory < 0:
        raise ValueError("refractory must be non-negative")
    x = np.asarray(waveform.samples[signal])
    above = x >= v_threshold
    prev = np.concatenate(([False], above[:-1]))
    idx = np.flatnonzero(above & ~prev)
    times = waveform.times[idx]
    kept: list[float] = []
    for t in times:
        if not kept or t - kept[-1] > refractory:
            kept.append(float(t))
    return SpikeTrain(tuple(kept))


def integrate_spike_current(train: SpikeTrain | int, charge_packet: float, window: float) -> float:
    """Equivalent DC current of ``count`` packets spread over ``window``."""
    if not window > 0:
        raise ValueError("window must be positive")
    count = train.count if isinstance(train, SpikeTrain) else int(train)
    return count * charge_packet / window


# ---------------------------------------------------------------------------
# compiled kernel


@numba.njit(cache=True)
def _solve_inplace(A, b):
    n = b.shape[0]
    for k in range(n):
        p = k
        amax = abs(A[k, k])
        for r in range(k + 1, n):
            if abs(A[r, k]) > amax:
                amax = abs(A[r, k])
                p = r
        if amax == 0.0:
            return k
        if p != k:
            for c in range(n):
                tmp = A[k, c]
                A[k, c] = A[p, c]
                A[p, c] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
        inv = 1.0 / A[k, k]
        for r in range(k + 1, n):
            f = A[r, k] * inv
            if f != 0.0:
                for c in range(k + 1, n):
                    A[r, c] -= f * A[k, c]
                b[r] -= f * b[k]
    for k in range(n - 1, -1, -1):
        s = b[k]
        for c in range(k + 1, n):
            s -= A[k, c] * b[c]
        b[k] = s / A[k, k]
    return -1


@numba.njit(cache=True, nogil=True)
def _kernel(
    n_nodes, kind, na, nb, r_base, l_base, r_extra, i_c, i_r,
    h_th, h_pulse, h_hold, h_trig, h_drive, src_idx, src_vals, heat_vals,
    dt, n_steps, hotspot_dt, rec_kind, rec_idx, phase0,
):
    n_el = kind.shape[0]
    cur = np.zeros(n_el)
    phase = phase0.copy()          # 1 = normal (SNW), 1 = suppressed (h-Tron)
    last_trig = np.full(n_el, -1e30)
    switches = np.zeros(n_el, dtype=np.int64)
    v = np.zeros(n_nodes)
    vacc = np.zeros(n_nodes)
    n_rec = rec_kind.shape[0]
    out = np.zeros((n_steps, n_rec))
    G = np.zeros((n_nodes, n_nodes))
    rhs = np.zeros(n_nodes)
    A = np.zeros((n_nodes, n_nodes))
    x = np.zeros(n_nodes)
    g_el = np.zeros(n_el)
    j_el = np.zeros(n_el)
    max_res = 0.0
    for step in range(n_steps):
        t0 = step * dt
        t_loc = 0.0
        vacc[:] = 0.0
        while t_loc < dt * (1.0 - 1e-9):
            any_normal = False
            for e in range(n_el):
                if kind[e] == 2 and phase[e] == 1:
                    any_normal = True
            if any_normal:
                h = min(hotspot_dt, dt - t_loc)
            else:
                h = dt - t_loc
            t_end = t0 + t_loc + h
            # h-Tron heater evaluation at unit end time
            for e in range(n_el):
                if kind[e] == 4:
                    ih = 0.0
                    if h_drive[e] >= 0:
                        ih += heat_vals[h_drive[e], step]
                    if t_end - last_trig[e] <= h_hold[e] + 1e-15:
                        ih += h_pulse[e]
                    phase[e] = 1 if abs(ih) >= h_th[e] else 0
            G[:, :] = 0.0
            rhs[:] = 0.0
            for e in range(n_el):
                k = kind[e]
                a = na[e]
                b = nb[e]
                if k == 5:
                    val = src_vals[src_idx[e], step]
                    if a >= 0:
                        rhs[a] += val
                    if b >= 0:
                        rhs[b] -= val
                    continue
                r = r_base[e]
                if phase[e] == 1:
                    r += r_extra[e]
                lh = l_base[e] / h
                g = 1.0 / (r + lh)
                jj = g * lh * cur[e]
                g_el[e] = g
                j_el[e] = jj
                if a >= 0:
                    G[a, a] += g
                    rhs[a] -= jj
                if b >= 0:
                    G[b, b] += g
                    rhs[b] += jj
                if a >= 0 and b >= 0:
                    G[a, b] -= g
                    G[b, a] -= g
            A[:, :] = G
            x[:] = rhs
            bad = _solve_inplace(A, x)
            if bad >= 0:
                return out, switches, max_res, ERR_SINGULAR, step, bad
            # Kirchhoff residual
            for i in range(n_nodes):
                s = -rhs[i]
                for c in range(n_nodes):
                    s += G[i, c] * x[c]
                if abs(s) > max_res:
                    max_res = abs(s)
            for i in range(n_nodes):
                if not np.isfinite(x[i]):
                    return out, switches, max_res, ERR_BLOWUP, step, i
                v[i] = x[i]
                vacc[i] += x[i] * h
            for e in range(n_el):
                k = kind[e]
                if k == 5:
                    continue
                va = v[na[e]] if na[e] >= 0 else 0.0
                vb = v[nb[e]] if nb[e] >= 0 else 0.0
                cur[e] = g_el[e] * (va - vb) + j_el[e]
            # SNW phase transitions
            for e in range(n_el):
                if kind[e] == 2:
                    mag = abs(cur[e])
                    if phase[e] == 0 and mag >= i_c[e]:
                        phase[e] = 1
                        switches[e] += 1
                        for q in range(n_el):
                            if kind[q] == 4 and h_trig[q] == e:
                                last_trig[q] = t_end
                    elif phase[e] == 1 and mag <= i_r[e]:
                        phase[e] = 0
            t_loc += h
        for q in range(n_rec):
            if rec_kind[q] == 0:
                out[step, q] = vacc[rec_idx[q]] / dt
            elif rec_kind[q] == 1:
                out[step, q] = cur[rec_idx[q]]
            else:
                out[step, q] = phase[rec_idx[q]]
    return out, switches, max_res, 0, -1, -1


def _compile(netlist: Netlist, drives: Mapping[str, Drive], dt: float, n_steps: int):
    node_index = {n: i - 1 for i, n in enumerate(netlist.nodes)}  # ground -> -1
    els = netlist.elements
    ne = len(els)
    kind = np.zeros(ne, dtype=np.int64)
    na = np.zeros(ne, dtype=np.int64)
    nb = np.zeros(ne, dtype=np.int64)
    r_base = np.zeros(ne)
    l_base = np.zeros(ne)
    r_extra = np.zeros(ne)
    i_c = np.zeros(ne)
    i_r = np.zeros(ne)
    h_th = np.zeros(ne)
    h_pulse = np.zeros(ne)
    h_hold = np.zeros(ne)
    h_trig = np.full(ne, -1, dtype=np.int64)
    h_drive = np.full(ne, -1, dtype=np.int64)
    src_idx = np.full(ne, -1, dtype=np.int64)
    phase0 = np.zeros(ne, dtype=np.int64)
    name_index = {e.name: i for i, e in enumerate(els)}
    t = (np.arange(n_steps) + 1) * dt
    src_rows, heat_rows = [], []
    for i, e in enumerate(els):
        kind[i] = _KIND_CODES[e.kind]
        na[i] = node_index[e.nodes[0]]
        nb[i] = node_index[e.nodes[1]]
        p = e.params
        if e.kind == "Resistor":
            if p["r"] <= 0:
                raise NetlistError(f"resistor {e.name} must have positive resistance")
            r_base[i] = p["r"]
        elif e.kind == "Inductor":
            if p["l"] <= 0 or p.get("r", 0.0) < 0:
                raise NetlistError(f"inductor {e.name} needs l > 0")
            l_base[i] = p["l"]
            r_base[i] = p.get("r", 0.0)
        elif e.kind == "SnwSwitch":
            sp: SnwParams = p["snw"]
            l_base[i], r_extra[i], i_c[i], i_r[i] = sp.l_nw, sp.r_nw, sp.i_c, sp.i_r
        elif e.kind == "SmResistor":
            r_base[i] = sm_resistance(e.state, p["sm"])
        elif e.kind == "HtronSwitch":
            hp: HtronParams = p["htron"]
            l_base[i], r_extra[i] = hp.l_channel, hp.r_channel
            h_th[i], h_pulse[i], h_hold[i] = hp.i_heater_th, hp.i_heater_pulse, hp.t_hold
            if p.get("trigger"):
                h_trig[i] = name_index[p["trigger"]]
            if e.name in drives:
                h_drive[i] = len(heat_rows)
                heat_rows.append(drives[e.name].sample(t))
        elif e.kind == "CurrentSource":
            src_idx[i] = len(src_rows)
            d = drives.get(e.name, Drive(dc=p.get("dc", 0.0)))
            src_rows.append(d.sample(t))
    src_vals = np.array(src_rows) if src_rows else np.zeros((1, n_steps))
    heat_vals = np.array(heat_rows) if heat_rows else np.zeros((1, n_steps))
    return dict(
        n_nodes=len(netlist.nodes) - 1, kind=kind, na=na, nb=nb, r_base=r_base, l_base=l_base,
        r_extra=r_extra, i_c=i_c, i_r=i_r, h_th=h_th, h_pulse=h_pulse, h_hold=h_hold, h_trig=h_trig,
        h_drive=h_drive, src_idx=src_idx, src_vals=src_vals, heat_vals=heat_vals, phase0=phase0,
    ), node_index, name_index


def _parse_signal(sig: str, node_index, name_index):
    if sig.startswith("v(") and sig.endswith(")"):
        n = sig[2:-1]
        if n not in node_index or node_index[n] < 0:
            raise KeyError(f"unknown node in signal {sig!r}")
        return 0, node_index[n]
    if sig.startswith("i(") and sig.endswith(")"):
        n = sig[2:-1]
        if n not in name_index:
            raise KeyError(f"unknown element in signal {sig!r}")
        return 1, name_index[n]
    if sig.startswith("phase(") and sig.endswith(")"):
        n = sig[6:-1]
        if n not in name_index:
            raise KeyError(f"unknown element in signal {sig!r}")
        return 2, name_index[n]
    raise KeyError(f"bad signal id {sig!r}")


def run_transient(
    netlist: Netlist,
    duration: float,
    dt: float,
    drives: Mapping[str, Drive] | None = None,
    record: Sequence[str] | None = None,
    hotspot_dt: float = 0.5e-12,
) -> Waveform:
    """Integrate ``netlist`` for ``duration`` seconds at fixed ``dt``.

    ``drives`` maps current-source names (source value) and h-Tron names
    (external heater current) to a :class:`Drive`. ``record`` lists signal
    ids ``v(node)``, ``i(element)`` or ``phase(element)``; default is every
    node voltage and element current.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if duration < dt:
        raise ValueError("duration must be at least one step")
    netlist.validate()
    drives = dict(drives or {})
    n_steps = int(round(duration / dt))
    arrays, node_index, name_index = _compile(netlist, drives, dt, n_steps)
    if record is None:
        record = [f"v({n})" for n in netlist.nodes if n != GROUND]
        record += [f"i({e.name})" for e in netlist.elements if e.kind != "CurrentSource"]
    rk, ri = zip(*(_parse_signal(s, node_index, name_index) for s in record)) if record else ((), ())
    rec_kind = np.array(rk, dtype=np.int64)
    rec_idx = np.array(ri, dtype=np.int64)
    out, switches, max_res, err, err_step, err_at = _kernel(
        arrays["n_nodes"], arrays["kind"], arrays["na"], arrays["nb"], arrays["r_base"], arrays["l_base"],
        arrays["r_extra"], arrays["i_c"], arrays["i_r"], arrays["h_th"], arrays["h_pulse"], arrays["h_hold"],
        arrays["h_trig"], arrays["h_drive"], arrays["src_idx"], arrays["src_vals"], arrays["heat_vals"],
        float(dt), n_steps, float(hotspot_dt), rec_kind, rec_idx, arrays["phase0"],
    )
    if err == ERR_SINGULAR:
        inv = {i: n for n, i in node_index.items()}
        raise IllPosedNetlist([inv.get(int(err_at), str(err_at))])
    if err == ERR_BLOWUP:
        raise NumericalBlowUp(int(err_step))
    samples = {s: out[:, q].copy() for q, s in enumerate(record)}
    counts = {e.name: int(switches[i]) for i, e in enumerate(netlist.elements) if e.kind == "SnwSwitch"}
    scale = float(np.max(np.abs(arrays["src_vals"]))) if arrays["src_vals"].size else 0.0
    return Waveform(dt=dt, samples=samples, switch_counts=counts, max_residual=float(max_res), source_scale=scale)


def load_netlist(path) -> Netlist:
    return Netlist.loads(Path(path).read_text())
