"""Virtual-channel router runtime: per-port VC buffers, credit-based flow
control, and separable input-first allocators with strict-priority classes.

Timing model: route computation, VC allocation, switch allocation and switch
traversal each take one cycle. State written in cycle t is acted on from
cycle t+1 (every transition carries a cycle stamp), so a flit needs
4 + link_latency cycles per hop at zero load. Switch traversal runs in the
same call as switch allocation; its extra cycle is folded into the arrival
offset, which keeps contention behaviour identical while avoiding a grant
register between cycles.

Each VC services one packet at a time but overlaps the next packet's route
computation and VC allocation with the draining of the current one, giving
a best-case per-VC service interval of 2 cycles.
"""

from __future__ import annotations

from collections import deque
from enum import Enum, IntEnum


class Priority(IntEnum):
    # Lower value is served first.
    HIGH = 0
    LOW = 1


class PriorityMode(str, Enum):
    NONE = "none"
    BY_PACKET = "bypacket"
    BY_VC = "byvc"


class VCState(str, Enum):
    IDLE = "idle"
    ROUTING = "routing"
    WAITING_VC = "waiting_vc"
    ACTIVE = "active"


class CreditError(RuntimeError):
    """A flit was driven into a full buffer: credit accounting is broken."""


class Packet:
    __slots__ = ("pid", "src", "dst", "priority", "length",
                 "gen_cycle", "eject_cycle", "route_choice")

    def __init__(self, pid, src, dst, priority, length, gen_cycle):
        self.pid = pid
        self.src = src
        self.dst = dst
        self.priority = priority
        self.length = length
        self.gen_cycle = gen_cycle
        self.eject_cycle = -1
        self.route_choice = -1

    def __repr__(self):
        return (f"Packet({self.pid}, {self.src}->{self.dst}, "
                f"prio={int(self.priority)}, len={self.length})")


def rr_arbitrate(requests, pointer: int, span: int) -> int:
    """Pick one request id: lowest class rank wins, rotating-pointer
    round-robin breaks ties. `requests` is a list of (id, rank)."""
    best_rank = min(rank for _, rank in requests)
    winner = -1
    winner_key = span
    for rid, rank in requests:
        if rank != best_rank:
            continue
        key = (rid - pointer) % span
        if key < winner_key:
            winner_key = key
            winner = rid
    return winner


# Packets of one VC whose route is computed but whose output VC is not yet
# allocated; depth 2 lets consecutive packets pipeline through RC and VA.
SETUP_DEPTH = 2


class VirtualChannel:
    """One buffered lane of an input port.

    `pending` holds (packet, arrival stamp) for heads that still need route
    computation; `setup` queues packets between route computation and VC
    allocation; `ready_*` has its output VC allocated and waits to become the
    draining packet; `active_*` is being forwarded flit by flit.
    """

    __slots__ = ("cap", "dedicated_rank", "buf", "pending", "setup",
                 "ready_pkt", "ready_stamp", "ready_out", "ready_dnvc",
                 "active_pkt", "active_out", "active_dnvc")

    def __init__(self, cap, dedicated_rank=-1):
        self.cap = cap
        self.dedicated_rank = dedicated_rank  # fixed class lane, -1 if shared
        self.buf = deque()
        self.pending = deque()
        self.setup = deque()  # (packet, stamp, out port)
        self.ready_pkt = None
        self.ready_stamp = 0
        self.ready_out = 0
        self.ready_dnvc = 0
        self.active_pkt = None
        self.active_out = 0
        self.active_dnvc = 0

    @property
    def occupancy(self) -> int:
        return len(self.buf)

    @property
    def capacity(self) -> int:
        return self.cap

    @property
    def state(self) -> VCState:
        if self.active_pkt is not None or self.ready_pkt is not None:
            return VCState.ACTIVE
        if self.setup:
            return VCState.WAITING_VC
        if self.pending:
            return VCState.ROUTING
        return VCState.IDLE


class RouterNode:
    """Runtime state of one switch element inside a simulation instance."""

    __slots__ = ("rid", "eid", "name", "stage", "n_in", "n_out", "vspan",
                 "mode", "engine", "vcs", "route_table",
                 "out_is_eject", "out_target", "out_nvc", "out_cap",
                 "credits", "bound", "va_ptr", "dnvc_ptr",
                 "sa_in_ptr", "sa_out_ptr", "sa_iterations",
                 "up", "occ", "ctl", "noroute_retries",
                 "rc_count", "va_grants", "sa_grants")

    def __init__(self, rid, eid, n_in, n_out, vcs_per_port, vc_capacity,
                 mode: PriorityMode, engine):
        self.rid = rid
        self.eid = eid
        self.name = f"s{eid[0]}e{eid[1]}"
        self.stage = eid[0]
        self.n_in = n_in
        self.n_out = n_out
        self.vspan = vcs_per_port
        self.mode = mode
        self.engine = engine
        dedicated = mode is PriorityMode.BY_VC and vcs_per_port >= 2
        self.vcs = [
            [VirtualChannel(vc_capacity,
                            (0 if v == 0 else 1) if dedicated else -1)
             for v in range(vcs_per_port)]
            for _ in range(n_in)
        ]
        self.route_table = None           # per destination: tuple of out ports
        self.out_is_eject = [False] * n_out
        self.out_target = [None] * n_out  # (router, in port) or terminal id
        self.out_nvc = [1] * n_out
        self.out_cap = [0] * n_out
        self.credits = [None] * n_out     # per out port: per downstream VC
        self.bound = [None] * n_out       # per out port: packet holding each VC
        self.va_ptr = [None] * n_out
        self.dnvc_ptr = [0] * n_out
        self.sa_in_ptr = [0] * n_in
        self.sa_out_ptr = [0] * n_out
        self.sa_iterations = 3
        self.up = [None] * n_in           # (router, out port) feeding each in port
        self.occ = 0                      # buffered flits
        self.ctl = 0                      # packets anywhere in the pipeline
        self.noroute_retries = 0
        self.rc_count = 0
        self.va_grants = 0
        self.sa_grants = 0

    # -- wiring ---------------------------------------------------------

    def wire_eject(self, port, terminal):
        self.out_is_eject[port] = True
        self.out_target[port] = terminal

    def wire_link(self, port, dn_router, dn_port, dn_nvc, dn_cap):
        self.out_target[port] = (dn_router, dn_port)
        self.out_nvc[port] = dn_nvc
        self.out_cap[port] = dn_cap
        self.credits[port] = [dn_cap] * dn_nvc
        self.bound[port] = [None] * dn_nvc
        self.va_ptr[port] = [0] * dn_nvc
        dn_router.up[dn_port] = (self, port)

    # -- datapath -------------------------------------------------------

    def deliver_flit(self, in_port, vc_idx, pkt, flit_idx, cycle):
        vc = self.vcs[in_port][vc_idx]
        if len(vc.buf) >= vc.cap:
            raise CreditError(
                f"{self.name} in{in_port}.vc{vc_idx} overflow at cycle {cycle}")
        vc.buf.append((pkt, flit_idx))
        self.occ += 1
        if flit_idx == 0:
            vc.pending.append((pkt, cycle))
            self.ctl += 1

    def deliver_credit(self, out_port, dn_vc):
        credits = self.credits[out_port]
        credits[dn_vc] += 1
        if credits[dn_vc] > self.out_cap[out_port]:
            raise CreditError(
                f"{self.name} out{out_port}.vc{dn_vc} credits exceed capacity")

    def _rank(self, vc, pkt) -> int:
        mode = self.mode
        if mode is PriorityMode.NONE:
            return 0
        if mode is PriorityMode.BY_PACKET:
            return pkt.priority
        # BY_VC: the lane's class when dedicated, else the head packet's.
        return vc.dedicated_rank if vc.dedicated_rank >= 0 else pkt.priority

    # -- pipeline stages (one call each per cycle) -----------------------

    def promote(self, cycle):
        """Advance allocated packets into the draining position."""
        for port in self.vcs:
            for vc in port:
                if (vc.active_pkt is None and vc.ready_pkt is not None
                        and vc.ready_stamp < cycle):
                    vc.active_pkt = vc.ready_pkt
                    vc.active_out = vc.ready_out
                    vc.active_dnvc = vc.ready_dnvc
                    vc.ready_pkt = None

    def route_compute(self, cycle):
        """Pick an output port for heads whose route is still unknown.
        A head with every candidate link faulty simply retries next cycle."""
        table = self.route_table
        engine = self.engine
        for in_port in range(self.n_in):
            for vc in self.vcs[in_port]:
                if len(vc.setup) >= SETUP_DEPTH or not vc.pending:
                    continue
                pkt, stamp = vc.pending[0]
                if stamp >= cycle:
                    continue
                cands = table[pkt.dst]
                ncand = len(cands)
                if ncand == 0:
                    self.noroute_retries += 1
                    continue
                if ncand == 1:
                    out = cands[0]
                else:
                    out = cands[int(engine.route_draw() * ncand)]
                vc.pending.popleft()
                vc.setup.append((pkt, cycle, out))
                self.rc_count += 1
                if self.stage == 0:
                    pkt.route_choice = out
                if engine.trace:
                    engine.trace_event(cycle, self.name, "rc", pkt.pid)

    def vc_allocate(self, cycle):
        """Match routed packets to free downstream VCs, high class first."""
        reqs = None
        vspan = self.vspan
        for in_port in range(self.n_in):
            for vc_idx, vc in enumerate(self.vcs[in_port]):
                if not vc.setup or vc.ready_pkt is not None:
                    continue
                pkt, stamp, out = vc.setup[0]
                if stamp >= cycle:
                    continue
                if self.out_is_eject[out]:
                    # Ejection channels have no VC binding to contend for.
                    vc.setup.popleft()
                    vc.ready_pkt = pkt
                    vc.ready_stamp = cycle
                    vc.ready_out = out
                    vc.ready_dnvc = 0
                    self.va_grants += 1
                    if self.engine.trace:
                        self.engine.trace_event(cycle, self.name, "va", pkt.pid)
                    continue
                bound = self.bound[out]
                nvc = self.out_nvc[out]
                if nvc == 1:
                    dn_vc = 0
                    if bound[0] is not None:
                        continue
                elif self.mode is PriorityMode.BY_VC:
                    dn_vc = 0 if pkt.priority == Priority.HIGH else 1
                    if bound[dn_vc] is not None:
                        continue
                else:
                    # Rotate over free downstream VCs so consecutive packets
                    # spread across lanes instead of serializing on VC 0.
                    dn_vc = -1
                    ptr = self.dnvc_ptr[out]
                    for k in range(nvc):
                        i = (ptr + k) % nvc
                        if bound[i] is None:
                            dn_vc = i
                            break
                    if dn_vc < 0:
                        continue
                    self.dnvc_ptr[out] = (dn_vc + 1) % nvc
                if reqs is None:
                    reqs = {}
                reqs.setdefault((out, dn_vc), []).append(
                    (in_port * vspan + vc_idx, self._rank(vc, pkt)))
        if not reqs:
            return
        span = self.n_in * vspan
        for (out, dn_vc), lst in reqs.items():
            ptr = self.va_ptr[out]
            winner = lst[0][0] if len(lst) == 1 else rr_arbitrate(lst, ptr[dn_vc], span)
            ptr[dn_vc] = (winner + 1) % span
            vc = self.vcs[winner // vspan][winner % vspan]
            pkt = vc.setup.popleft()[0]
            self.bound[out][dn_vc] = pkt
            vc.ready_pkt = pkt
            vc.ready_stamp = cycle
            vc.ready_out = out
            vc.ready_dnvc = dn_vc
            self.va_grants += 1
            if self.engine.audit is not None and len(lst) > 1:
                self.engine.audit.append(
                    (cycle, self.name, "va", (out, dn_vc),
                     tuple(rank for _, rank in lst),
                     lst[[rid for rid, _ in lst].index(winner)][1]))
            if self.engine.trace:
                self.engine.trace_event(cycle, self.name, "va", pkt.pid)

    def switch_allocate(self, cycle):
        """Per-cycle crossbar matching: at most one flit per input port and
        per output port, high class first, round-robin inside a class.

        Input-first separable matching, iterated: ports left unmatched get
        further chances against the outputs that are still free, which
        recovers most of the matching lost to first-round collisions.
        Returns grants as (in_port, vc_idx, out_port) triples."""
        requests = None  # per input port: list of (vc_idx, rank, out)
        for in_port in range(self.n_in):
            cand = None
            for vc_idx, vc in enumerate(self.vcs[in_port]):
                pkt = vc.active_pkt
                if pkt is None:
                    continue
                buf = vc.buf
                if not buf or buf[0][0] is not pkt:
                    continue
                out = vc.active_out
                if not self.out_is_eject[out] and self.credits[out][vc.active_dnvc] <= 0:
                    continue
                if cand is None:
                    cand = []
                cand.append((vc_idx, self._rank(vc, pkt), out))
            if cand:
                if requests is None:
                    requests = {}
                requests[in_port] = cand
        if not requests:
            return ()
        grants = []
        out_taken = set()
        audit = self.engine.audit
        for _ in range(self.sa_iterations):
            out_reqs = None
            for in_port, cand in requests.items():
                usable = [c for c in cand if c[2] not in out_taken]
                if not usable:
                    continue
                if len(usable) == 1:
                    vc_idx, rank, out = usable[0]
                else:
                    pick = rr_arbitrate([(v, r) for v, r, _ in usable],
                                        self.sa_in_ptr[in_port], self.vspan)
                    vc_idx, rank, out = usable[[v for v, _, _ in usable].index(pick)]
                    if audit is not None:
                        audit.append((cycle, self.name, "sa-in", in_port,
                                      tuple(r for _, r, _ in usable), rank))
                if out_reqs is None:
                    out_reqs = {}
                out_reqs.setdefault(out, []).append((in_port, rank, vc_idx))
            if not out_reqs:
                break
            for out, lst in out_reqs.items():
                if len(lst) == 1:
                    in_port, _, vc_idx = lst[0]
                else:
                    in_port = rr_arbitrate([(ip, rank) for ip, rank, _ in lst],
                                           self.sa_out_ptr[out], self.n_in)
                    entry = lst[[ip for ip, _, _ in lst].index(in_port)]
                    vc_idx = entry[2]
                    if audit is not None:
                        audit.append((cycle, self.name, "sa-out", out,
                                      tuple(rank for _, rank, _ in lst), entry[1]))
                self.sa_out_ptr[out] = (in_port + 1) % self.n_in
                self.sa_in_ptr[in_port] = (vc_idx + 1) % self.vspan
                grants.append((in_port, vc_idx, out))
                out_taken.add(out)
                del requests[in_port]
            if not requests:
                break
        self.sa_grants += len(grants)
        return grants

    def switch_traverse(self, grants, cycle):
        """Move granted flits across the crossbar: consume a downstream
        credit, schedule the link delivery, and return a credit upstream for
        the vacated buffer slot."""
        engine = self.engine
        lat = engine.link_latency
        for in_port, vc_idx, out in grants:
            vc = self.vcs[in_port][vc_idx]
            pkt, flit_idx = vc.buf.popleft()
            self.occ -= 1
            dn_vc = vc.active_dnvc
            if self.out_is_eject[out]:
                engine.schedule_eject(self.out_target[out], pkt, flit_idx,
                                      cycle + 1 + lat)
            else:
                self.credits[out][dn_vc] -= 1
                dn_router, dn_port = self.out_target[out]
                engine.schedule_flit(dn_router, dn_port, dn_vc, pkt, flit_idx,
                                     cycle + 1 + lat)
            up = self.up[in_port]
            if up is not None:
                engine.schedule_credit(up[0], up[1], vc_idx, cycle + lat)
            if flit_idx == pkt.length - 1:
                vc.active_pkt = None
                self.ctl -= 1
                if not self.out_is_eject[out]:
                    self.bound[out][dn_vc] = None
            if engine.trace:
                engine.trace_event(cycle, self.name, "st", pkt.pid)

    def cycle_step(self, cycle):
        self.promote(cycle)
        self.route_compute(cycle)
        self.vc_allocate(cycle)
        grants = self.switch_allocate(cycle)
        if grants:
            self.switch_traverse(grants, cycle)

    # -- accounting -----------------------------------------------------

    def total_buffer_slots(self) -> int:
        return sum(vc.cap for port in self.vcs for vc in port)
