"""Cycle-driven simulation: traffic generation, warm-up/measurement/drain
phases, statistics and saturation search.

Reproducibility: every run derives its random streams from
(seed, injection rate), with one child stream per terminal plus one shared
stream for route choices. Traffic is therefore independent of topology
iteration order, and a sweep entry equals a direct run at the same rate.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .analytics import BufferScheme
from .router import Packet, Priority, PriorityMode, RouterNode
from .topology import (
    FabricKind,
    FabricTopology,
    apply_faults,
    build_benes,
    build_clos3,
    build_single_stage,
    count_disconnected_pairs,
    delivery_table,
)

# One cycle each for route computation, VC allocation, switch allocation and
# switch traversal.
PIPELINE_DEPTH = 4

_RNG_BLOCK = 8192


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TopoSpec:
    """Serializable description of a fabric: kind, parameters, fault list."""

    kind: str
    n: int = 0
    clos: tuple | None = None
    faults: tuple = ()

    @classmethod
    def single_stage(cls, n, faults=()):
        return cls(kind=FabricKind.SINGLE_STAGE.value, n=n, faults=tuple(faults))

    @classmethod
    def clos3(cls, n, m, r, faults=()):
        return cls(kind=FabricKind.CLOS3.value, n=n * r, clos=(n, m, r),
                   faults=tuple(faults))

    @classmethod
    def benes(cls, n, faults=()):
        return cls(kind=FabricKind.BENES.value, n=n, faults=tuple(faults))

    def build(self) -> FabricTopology:
        kind = FabricKind(self.kind)
        if kind is FabricKind.SINGLE_STAGE:
            topo = build_single_stage(self.n)
        elif kind is FabricKind.CLOS3:
            topo = build_clos3(*self.clos)
        else:
            topo = build_benes(self.n)
        if self.faults:
            topo, _ = apply_faults(topo, self.faults)
        return topo


@dataclass(frozen=True)
class SimConfig:
    topo: TopoSpec
    priority_mode: str = PriorityMode.BY_VC.value
    injection_rate: float = 0.1
    high_priority_fraction: float = 0.0
    packet_length: int = 1
    warmup_cycles: int = 10_000
    measure_cycles: int = 50_000
    max_drain_cycles: int = 50_000
    seed: int = 1
    buffer_scheme: str = BufferScheme.BASELINE_36N.value
    vcs_per_port: int = 2
    vc_capacity: int = 6
    link_latency: int = 1
    early_abort: bool = False
    scripted: tuple = ()  # ((cycle, src, dst, priority, length), ...)
    trace_path: str | None = None
    audit: bool = False

    def validate(self):
        if not 0.0 <= self.injection_rate <= 1.0:
            raise ConfigError(f"injection rate out of [0,1]: {self.injection_rate}")
        if not 0.0 <= self.high_priority_fraction <= 1.0:
            raise ConfigError("high priority fraction out of [0,1]")
        if self.packet_length < 1:
            raise ConfigError("packet length must be >= 1")
        if self.warmup_cycles < 0 or self.measure_cycles <= 0 or self.max_drain_cycles <= 0:
            raise ConfigError("phase cycle counts must be positive")
        if self.vcs_per_port < 1 or self.vc_capacity < 1:
            raise ConfigError("need at least one VC of at least one flit")
        if self.link_latency < 0:
            raise ConfigError("link latency must be >= 0")
        PriorityMode(self.priority_mode)
        BufferScheme(self.buffer_scheme)


@dataclass(frozen=True)
class StatsReport:
    """Measured results for one run. Latency averages cover only packets
    generated during the measurement window; accepted throughput counts the
    measurement packets that actually ejected by the end of the drain."""

    injection_rate: float
    offered_load: float
    accepted_throughput: float
    avg_latency_all: float
    avg_latency_high: float
    avg_latency_low: float
    saturated: bool
    packets_injected: int
    packets_ejected: int
    seed: int

    CSV_HEADER = ("offered_load,accepted_throughput,avg_latency_all,"
                  "avg_latency_high,avg_latency_low,saturated,seed")

    def to_csv_row(self) -> str:
        return (f"{self.offered_load:.6f},{self.accepted_throughput:.6f},"
                f"{self.avg_latency_all:.6f},{self.avg_latency_high:.6f},"
                f"{self.avg_latency_low:.6f},{int(self.saturated)},{self.seed}")


def reports_to_csv(reports) -> str:
    lines = [StatsReport.CSV_HEADER]
    lines += [r.to_csv_row() for r in reports]
    return "\n".join(lines) + "\n"


def zero_load_latency(cfg: SimConfig) -> int:
    """Uncontended end-to-end latency: one full pipeline plus one link cycle
    per hop, plus tail serialization for multi-flit packets."""
    kind = FabricKind(cfg.topo.kind)
    if kind is FabricKind.SINGLE_STAGE:
        hops = 1
    elif kind is FabricKind.CLOS3:
        hops = 3
    else:
        hops = 2 * (cfg.topo.n.bit_length() - 1) - 1
    return hops * (PIPELINE_DEPTH + cfg.link_latency) + (cfg.packet_length - 1)


class _Stream:
    """Blocked uniform draws from one child generator."""

    __slots__ = ("gen", "block", "i")

    def __init__(self, seed_seq):
        self.gen = np.random.default_rng(seed_seq)
        self.block = self.gen.random(_RNG_BLOCK)
        self.i = 0

    def draw(self) -> float:
        i = self.i
        block = self.block
        if i == _RNG_BLOCK:
            self.block = block = self.gen.random(_RNG_BLOCK)
            i = 0
        self.i = i + 1
        return block[i]


class _Terminal:
    __slots__ = ("index", "router", "port", "stream", "queue",
                 "cur_pkt", "cur_flit", "cur_vc")

    def __init__(self, index, router, port, stream):
        self.index = index
        self.router = router
        self.port = port
        self.stream = stream
        self.queue = deque()
        self.cur_pkt = None
        self.cur_flit = 0
        self.cur_vc = 0


class Simulation:
    """One deterministic run over a compiled fabric. Routers advance in
    lock-step inside a single thread; nothing is shared between instances."""

    def __init__(self, cfg: SimConfig):
        cfg.validate()
        self.cfg = cfg
        self.topo = cfg.topo.build()
        if not cfg.topo.faults and count_disconnected_pairs(self.topo) > 0:
            raise ConfigError("topology has disconnected pairs without requested faults")
        self.n_terminals = self.topo.n_terminals
        self.mode = PriorityMode(cfg.priority_mode)
        self.scheme = BufferScheme(cfg.buffer_scheme)
        self.link_latency = cfg.link_latency
        self.zero_load = zero_load_latency(cfg)

        self.audit = [] if cfg.audit else None
        self.trace = None
        self._trace_lines = None
        if cfg.trace_path is not None:
            self.trace = True
            self._trace_lines = []

        # Independent streams per terminal plus one for route choices, all
        # derived from (seed, rate) so sweeps and direct runs agree.
        rate_key = int(round(cfg.injection_rate * 1_000_000))
        root = np.random.SeedSequence([int(cfg.seed), rate_key])
        children = root.spawn(self.n_terminals + 1)
        self._route_stream = _Stream(children[-1])

        self._build_routers()
        self.terminals = []
        for t in range(self.n_terminals):
            eid, port = self.topo.injection_point(t)
            self.terminals.append(
                _Terminal(t, self._router_of[eid], port, _Stream(children[t])))

        self._flit_bucket = {}
        self._credit_bucket = {}
        self._inflight_flits = 0

        self.total_generated = 0
        self.total_ejected = 0
        self.source_flits = 0
        self.generated_flits = 0
        self.ejected_flits = 0
        self.tagged_generated = 0
        self.tagged_ejected = 0
        self._lat_sum = 0.0
        self._lat_n = 0
        self._lat_sum_cls = [0.0, 0.0]
        self._lat_n_cls = [0, 0]
        self.per_packet_log = None  # (pid, src, dst, gen, eject) when audit is on
        if cfg.audit:
            self.per_packet_log = []
        self._next_pid = 0
        self._scripted = sorted(cfg.scripted, key=lambda e: e[0])
        self._scripted_i = 0

    def _vc_geometry(self, stage):
        if self.scheme is BufferScheme.MEMORY_EFFICIENT_24N and stage > 0:
            return 1, self.cfg.vc_capacity
        return self.cfg.vcs_per_port, self.cfg.vc_capacity

    def _build_routers(self):
        cfg = self.cfg
        table = delivery_table(self.topo)
        self.routers = []
        self._router_of = {}
        for rid, el in enumerate(sorted(self.topo.elements, key=lambda e: e.id)):
            nvc, cap = self._vc_geometry(el.stage)
            node = RouterNode(rid, el.id, el.radix_in, el.radix_out,
                              nvc, cap, self.mode, self)
            node.route_table = table[el.id]
            self.routers.append(node)
            self._router_of[el.id] = node
        for lk in self.topo.links:
            src_eid, src_port = lk.src
            dst_eid, dst_port = lk.dst
            if src_eid[0] < 0:
                continue
            src = self._router_of[src_eid]
            if dst_eid[0] == -2:  # ejection terminal
                src.wire_eject(src_port, dst_eid[1])
            else:
                dn = self._router_of[dst_eid]
                nvc, cap = self._vc_geometry(dst_eid[0])
                src.wire_link(src_port, dn, dst_port, nvc, cap)

    # -- hooks used by RouterNode ----------------------------------------

    def route_draw(self) -> float:
        return self._route_stream.draw()

    def schedule_flit(self, router, in_port, vc, pkt, flit_idx, cycle):
        self._flit_bucket.setdefault(cycle, []).append(
            (router, in_port, vc, pkt, flit_idx))
        self._inflight_flits += 1

    def schedule_eject(self, terminal, pkt, flit_idx, cycle):
        self._flit_bucket.setdefault(cycle, []).append(
            (None, terminal, 0, pkt, flit_idx))
        self._inflight_flits += 1

    def schedule_credit(self, router, out_port, vc, cycle):
        self._credit_bucket.setdefault(cycle, []).append((router, out_port, vc))

    def trace_event(self, cycle, where, event, pid):
        self._trace_lines.append(f"{cycle},{where},{event},{pid}")

    # -- per-cycle work ---------------------------------------------------

    def _deliver(self, cycle):
        creds = self._credit_bucket.pop(cycle, None)
        if creds:
            for router, out_port, vc in creds:
                router.deliver_credit(out_port, vc)
        flits = self._flit_bucket.pop(cycle, None)
        if flits:
            measure_start = self.cfg.warmup_cycles
            measure_end = measure_start + self.cfg.measure_cycles
            for router, in_port, vc, pkt, flit_idx in flits:
                self._inflight_flits -= 1
                if router is not None:
                    router.deliver_flit(in_port, vc, pkt, flit_idx, cycle)
                    continue
                self.ejected_flits += 1
                if flit_idx == pkt.length - 1:
                    pkt.eject_cycle = cycle
                    self.total_ejected += 1
                    if measure_start <= pkt.gen_cycle < measure_end:
                        self.tagged_ejected += 1
                        lat = cycle - pkt.gen_cycle
                        self._lat_sum += lat
                        self._lat_n += 1
                        cls = int(pkt.priority)
                        self._lat_sum_cls[cls] += lat
                        self._lat_n_cls[cls] += 1
                    if self.per_packet_log is not None:
                        self.per_packet_log.append(
                            (pkt.pid, pkt.src, pkt.dst, pkt.gen_cycle, cycle))
                    if self.trace:
                        self.trace_event(cycle, f"t{in_port}", "eject", pkt.pid)

    def _make_packet(self, src, dst, prio, length, cycle):
        pkt = Packet(self._next_pid, src, dst, prio, length, cycle)
        self._next_pid += 1
        self.total_generated += 1
        self.source_flits += length
        self.generated_flits += length
        measure_end = self.cfg.warmup_cycles + self.cfg.measure_cycles
        if self.cfg.warmup_cycles <= cycle < measure_end:
            self.tagged_generated += 1
        return pkt

    def _traffic(self, cycle):
        cfg = self.cfg
        n = self.n_terminals
        scripted = self._scripted
        if scripted:
            i = self._scripted_i
            while i < len(scripted) and scripted[i][0] == cycle:
                _, src, dst, prio, length = scripted[i]
                pkt = self._make_packet(src, dst, Priority(prio), length, cycle)
                self.terminals[src].queue.append(pkt)
                i += 1
            self._scripted_i = i
        rate = cfg.injection_rate
        hpf = cfg.high_priority_fraction
        length = cfg.packet_length
        for term in self.terminals:
            if rate > 0.0:
                stream = term.stream
                if stream.draw() < rate:
                    if n > 1:
                        d = int(stream.draw() * (n - 1))
                        if d >= term.index:
                            d += 1
                    else:
                        d = 0
                    prio = Priority.HIGH if stream.draw() < hpf else Priority.LOW
                    pkt = self._make_packet(term.index, d, prio, length, cycle)
                    term.queue.append(pkt)
                    if self.trace:
                        self.trace_event(cycle, f"t{term.index}", "gen", pkt.pid)
            self._inject(term, cycle)

    def _inject(self, term, cycle):
        pkt = term.cur_pkt
        if pkt is None:
            if not term.queue:
                return
            term.cur_pkt = pkt = term.queue.popleft()
            term.cur_flit = 0
            vcs = term.router.vcs[term.port]
            if self.mode is PriorityMode.BY_VC and len(vcs) >= 2:
                term.cur_vc = 0 if pkt.priority == Priority.HIGH else 1
            else:
                term.cur_vc = min(range(len(vcs)), key=lambda i: (len(vcs[i].buf), i))
        vc = term.router.vcs[term.port][term.cur_vc]
        if len(vc.buf) < vc.cap:
            term.router.deliver_flit(term.port, term.cur_vc, pkt, term.cur_flit, cycle)
            self.source_flits -= 1
            if self.trace and term.cur_flit == 0:
                self.trace_event(cycle, term.router.name, "inject", pkt.pid)
            term.cur_flit += 1
            if term.cur_flit == pkt.length:
                term.cur_pkt = None

    # -- invariant checks (audit runs only) -------------------------------

    def check_conservation(self):
        # Flit-level balance: everything generated is queued at a source,
        # buffered in a VC, on a link, or already ejected.
        buffered = sum(r.occ for r in self.routers)
        lhs = self.source_flits + buffered + self._inflight_flits + self.ejected_flits
        assert lhs == self.generated_flits, (
            f"conservation broken: {lhs} != {self.generated_flits}")

    def _credit_soundness(self, cycle):
        inbound = {}
        for _, events in self._flit_bucket.items():
            for router, in_port, vc, _pkt, _fi in events:
                if router is not None:
                    inbound[(router.rid, in_port, vc)] = inbound.get(
                        (router.rid, in_port, vc), 0) + 1
        credits_back = {}
        for _, events in self._credit_bucket.items():
            for router, out_port, vc in events:
                credits_back[(router.rid, out_port, vc)] = credits_back.get(
                    (router.rid, out_port, vc), 0) + 1
        for r in self.routers:
            for out in range(r.n_out):
                if r.out_is_eject[out] or r.out_target[out] is None:
                    continue
                dn, dn_port = r.out_target[out]
                for v in range(r.out_nvc[out]):
                    total = (r.credits[out][v]
                             + len(dn.vcs[dn_port][v].buf)
                             + inbound.get((dn.rid, dn_port, v), 0)
                             + credits_back.get((r.rid, out, v), 0))
                    assert total == r.out_cap[out], (
                        f"credit soundness broken at {r.name} out{out} vc{v} "
                        f"cycle {cycle}: {total} != {r.out_cap[out]}")

    # -- run ---------------------------------------------------------------

    def run(self) -> StatsReport:
        cfg = self.cfg
        warmup = cfg.warmup_cycles
        measure_end = warmup + cfg.measure_cycles
        hard_end = measure_end + cfg.max_drain_cycles
        n = self.n_terminals
        routers = self.routers
        abort_backlog = 300 * n
        aborted = False

        cycle = 0
        while cycle < hard_end:
            self._deliver(cycle)
            self._traffic(cycle)
            for r in routers:
                if r.ctl:
                    r.cycle_step(cycle)
            if self.audit is not None:
                self.check_conservation()
                self._credit_soundness(cycle)
            cycle += 1
            if cycle >= measure_end and self.tagged_ejected == self.tagged_generated:
                break
            if (cfg.early_abort and cycle > warmup and not cycle % 1024
                    and self.total_generated - self.total_ejected > abort_backlog):
                aborted = True
                break

        drained = self.tagged_ejected == self.tagged_generated
        avg_all = self._lat_sum / self._lat_n if self._lat_n else float("nan")
        avg_cls = [
            self._lat_sum_cls[c] / self._lat_n_cls[c] if self._lat_n_cls[c]
            else float("nan")
            for c in (0, 1)
        ]
        saturated = (aborted or not drained
                     or (self._lat_n > 0 and avg_all > 10 * self.zero_load))
        assert drained or saturated
        denom = n * cfg.measure_cycles
        report = StatsReport(
            injection_rate=cfg.injection_rate,
            offered_load=self.tagged_generated / denom,
            accepted_throughput=self.tagged_ejected / denom,
            avg_latency_all=avg_all,
            avg_latency_high=avg_cls[0],
            avg_latency_low=avg_cls[1],
            saturated=saturated,
            packets_injected=self.tagged_generated,
            packets_ejected=self.tagged_ejected,
            seed=cfg.seed,
        )
        if cfg.trace_path is not None:
            with open(cfg.trace_path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(self._trace_lines))
                fh.write("\n")
        return report


def run_simulation(cfg: SimConfig) -> StatsReport:
    return Simulation(cfg).run()


def sweep_injection(cfg: SimConfig, rates) -> list:
    """Independent runs at strictly increasing rates in (0, 1]."""
    rates = list(rates)
    if any(r <= 0.0 or r > 1.0 for r in rates):
        raise ConfigError("sweep rates must lie in (0, 1]")
    if any(b <= a for a, b in zip(rates, rates[1:])):
        raise ConfigError("sweep rates must be strictly increasing")
    return [run_simulation(replace(cfg, injection_rate=r)) for r in rates]


def find_saturation(cfg: SimConfig, resolution: float = 0.01) -> float:
    """Lowest-offered-load boundary, by bisection: returns the accepted
    throughput at the highest rate that still drains with bounded latency."""
    def probe(rate):
        return run_simulation(replace(cfg, injection_rate=rate, early_abort=True))

    top = probe(1.0)
    if not top.saturated:
        return top.accepted_throughput
    lo, best = 0.0, None
    hi = 1.0
    while hi - lo > resolution:
        mid = round((lo + hi) / 2, 6)
        rep = probe(mid)
        if rep.saturated:
            hi = mid
        else:
            lo, best = mid, rep
    return best.accepted_throughput if best is not None else 0.0
