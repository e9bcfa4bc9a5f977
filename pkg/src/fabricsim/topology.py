"""Switch-fabric graphs: single-stage, 3-stage Clos and Benes construction,
link-fault bookkeeping, and source-destination path enumeration.

Topologies are immutable values. Fault application returns a new topology,
so a base fabric can be shared freely between concurrent simulations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum

# Pseudo-stages used for terminal endpoints. Real switch stages are >= 0.
STAGE_INJECT = -1
STAGE_EJECT = -2


class TopologyError(ValueError):
    """Invalid fabric parameters or fault selectors."""


class FabricKind(str, Enum):
    SINGLE_STAGE = "single-stage"
    CLOS3 = "clos3"
    BENES = "benes"


@dataclass(frozen=True)
class SwitchElement:
    stage: int
    index: int
    radix_in: int
    radix_out: int

    @property
    def id(self):
        return (self.stage, self.index)


@dataclass(frozen=True)
class Link:
    """Directed link from ((stage, elem), out_port) to ((stage, elem), in_port)."""

    src: tuple
    dst: tuple
    faulty: bool = False

    @property
    def is_interstage(self) -> bool:
        return self.src[0][0] >= 0 and self.dst[0][0] >= 0

    @property
    def selector(self) -> str:
        (ss, si), sp = self.src
        (ds, di), dp = self.dst
        return f"{ss}.{si}.{sp}->{ds}.{di}.{dp}"


def parse_selector(text: str) -> tuple:
    """Parse "stage.elem.port->stage.elem.port" into (src, dst) endpoints."""
    try:
        left, right = text.split("->")
        ss, si, sp = (int(x) for x in left.strip().split("."))
        ds, di, dp = (int(x) for x in right.strip().split("."))
    except (ValueError, AttributeError):
        raise TopologyError(f"malformed link selector: {text!r}") from None
    return (((ss, si), sp), ((ds, di), dp))


@dataclass(frozen=True)
class PathGroups:
    """Paths for one source-destination pair, split by length.

    Main paths share the minimum hop count (counted in traversed switch
    elements); anything longer is auxiliary. Lengths inside each group must
    be uniform.
    """

    pair: tuple
    main_count: int
    main_length: int
    aux_count: int = 0
    aux_length: int = 0
    main_paths: tuple = ()
    aux_paths: tuple = ()

    def __post_init__(self):
        if self.main_paths and {len(p) for p in self.main_paths} != {self.main_length}:
            raise TopologyError("main path lengths not uniform")
        if self.aux_paths and {len(p) for p in self.aux_paths} != {self.aux_length}:
            raise TopologyError("auxiliary path lengths not uniform")
        if self.aux_count and self.aux_length < self.main_length:
            raise TopologyError("auxiliary paths shorter than main paths")

    @classmethod
    def from_paths(cls, pair, paths) -> "PathGroups":
        paths = tuple(tuple(p) for p in paths)
        if not paths:
            return cls(pair=pair, main_count=0, main_length=0)
        shortest = min(len(p) for p in paths)
        main = tuple(p for p in paths if len(p) == shortest)
        aux = tuple(p for p in paths if len(p) > shortest)
        aux_lengths = {len(p) for p in aux}
        if len(aux_lengths) > 1:
            raise TopologyError(f"auxiliary path lengths not uniform for pair {pair}")
        return cls(
            pair=pair,
            main_count=len(main),
            main_length=shortest,
            aux_count=len(aux),
            aux_length=aux_lengths.pop() if aux else 0,
            main_paths=main,
            aux_paths=aux,
        )


@dataclass(frozen=True)
class FabricTopology:
    kind: FabricKind
    n_terminals: int
    elements: tuple
    links: tuple
    clos_params: tuple | None = None

    def __post_init__(self):
        elem_map = {}
        for el in self.elements:
            if el.radix_in < 1 or el.radix_out < 1:
                raise TopologyError(f"element {el.id} has an empty radix")
            if el.id in elem_map:
                raise TopologyError(f"duplicate element id {el.id}")
            elem_map[el.id] = el
        n_stages = 1 + max(el.stage for el in self.elements)
        by_src, by_dst = {}, {}
        for lk in self.links:
            if lk.src in by_src:
                raise TopologyError(f"output endpoint reused: {lk.src}")
            if lk.dst in by_dst:
                raise TopologyError(f"input endpoint reused: {lk.dst}")
            s_stage, d_stage = lk.src[0][0], lk.dst[0][0]
            if s_stage == STAGE_INJECT:
                ok = d_stage == 0
            elif d_stage == STAGE_EJECT:
                ok = s_stage == n_stages - 1
            else:
                ok = d_stage == s_stage + 1
            if not ok:
                raise TopologyError(f"link does not connect adjacent stages: {lk}")
            by_src[lk.src] = lk
            by_dst[lk.dst] = lk
        object.__setattr__(self, "_elem_map", elem_map)
        object.__setattr__(self, "_by_src", by_src)
        object.__setattr__(self, "_by_dst", by_dst)
        object.__setattr__(self, "_n_stages", n_stages)

    @property
    def n_stages(self) -> int:
        return self._n_stages

    def element(self, eid) -> SwitchElement:
        return self._elem_map[eid]

    def out_link(self, eid, port) -> Link | None:
        return self._by_src.get((eid, port))

    def injection_point(self, terminal: int) -> tuple:
        """(element id, input port) fed by an injection terminal."""
        link = self._by_src[(((STAGE_INJECT, terminal)), 0)]
        return link.dst

    def ejection_source(self, terminal: int) -> tuple:
        """(element id, output port) that feeds an ejection terminal."""
        link = self._by_dst[(((STAGE_EJECT, terminal)), 0)]
        return link.src

    def interstage_links(self, from_stage: int | None = None) -> tuple:
        out = tuple(
            lk for lk in self.links
            if lk.is_interstage and (from_stage is None or lk.src[0][0] == from_stage)
        )
        return out

    @property
    def fault_selectors(self) -> tuple:
        return tuple(sorted(lk.selector for lk in self.links if lk.faulty))


def _terminal_links(n, first_stage_in, last_stage_out):
    """Injection/ejection wiring shared by all builders.

    first_stage_in / last_stage_out map a terminal index to the
    (element id, port) endpoint it attaches to.
    """
    links = []
    for t in range(n):
        links.append(Link(src=((STAGE_INJECT, t), 0), dst=first_stage_in(t)))
        links.append(Link(src=last_stage_out(t), dst=((STAGE_EJECT, t), 0)))
    return links


def build_single_stage(n: int) -> FabricTopology:
    """One N x N routing node with N injection and N ejection terminals."""
    if n < 2 or n % 2:
        raise TopologyError(f"single-stage port count must be even and >= 2, got {n}")
    elements = (SwitchElement(stage=0, index=0, radix_in=n, radix_out=n),)
    links = _terminal_links(n, lambda t: ((0, 0), t), lambda t: ((0, 0), t))
    return FabricTopology(
        kind=FabricKind.SINGLE_STAGE, n_terminals=n,
        elements=elements, links=tuple(links),
    )


def build_clos3(n: int, m: int, r: int) -> FabricTopology:
    """Three-stage Clos: r ingress (n x m), m middle (r x r), r egress (m x n).

    Every ingress has one link to every middle switch and every middle one
    link to every egress, giving m single-middle routes per terminal pair.
    """
    if min(n, m, r) < 1:
        raise TopologyError(f"clos parameters must be >= 1, got ({n},{m},{r})")
    elements = []
    for i in range(r):
        elements.append(SwitchElement(stage=0, index=i, radix_in=n, radix_out=m))
    for j in range(m):
        elements.append(SwitchElement(stage=1, index=j, radix_in=r, radix_out=r))
    for k in range(r):
        elements.append(SwitchElement(stage=2, index=k, radix_in=m, radix_out=n))
    links = []
    for i in range(r):
        for j in range(m):
            links.append(Link(src=((0, i), j), dst=((1, j), i)))
    for j in range(m):
        for k in range(r):
            links.append(Link(src=((1, j), k), dst=((2, k), j)))
    n_term = n * r
    links += _terminal_links(
        n_term,
        lambda t: ((0, t // n), t % n),
        lambda t: ((2, t // n), t % n),
    )
    return FabricTopology(
        kind=FabricKind.CLOS3, n_terminals=n_term,
        elements=tuple(elements), links=tuple(links), clos_params=(n, m, r),
    )


def build_benes(n: int) -> FabricTopology:
    """Benes fabric: a baseline network and its mirror sharing the center
    stage, (2*log2(n) - 1) stages of n/2 two-by-two elements."""
    if n < 4 or n & (n - 1):
        raise TopologyError(f"benes port count must be a power of two >= 4, got {n}")
    links = []

    def wire(size, stage0, elem0):
        """Recursively wire a size-port subnetwork whose first stage is
        `stage0` and whose per-stage element block starts at `elem0`.
        Returns (inputs, outputs): port endpoints indexed 0..size-1."""
        half = size // 2
        if size == 2:
            eid = (stage0, elem0)
            return [(eid, 0), (eid, 1)], [(eid, 0), (eid, 1)]
        depth = 1
        s = size
        while s > 2:
            depth += 2
            s //= 2
        last = stage0 + depth - 1
        top_in, top_out = wire(half, stage0 + 1, elem0)
        bot_in, bot_out = wire(half, stage0 + 1, elem0 + half // 2)
        for i in range(half):
            first = (stage0, elem0 + i)
            final = (last, elem0 + i)
            links.append(Link(src=(first, 0), dst=top_in[i]))
            links.append(Link(src=(first, 1), dst=bot_in[i]))
            links.append(Link(src=top_out[i], dst=(final, 0)))
            links.append(Link(src=bot_out[i], dst=(final, 1)))
        inputs = [((stage0, elem0 + i // 2), i % 2) for i in range(size)]
        outputs = [((last, elem0 + i // 2), i % 2) for i in range(size)]
        return inputs, outputs

    inputs, outputs = wire(n, 0, 0)
    stages = 2 * (n.bit_length() - 1) - 1
    elements = tuple(
        SwitchElement(stage=s, index=i, radix_in=2, radix_out=2)
        for s in range(stages) for i in range(n // 2)
    )
    links += _terminal_links(n, lambda t: inputs[t], lambda t: outputs[t])
    return FabricTopology(
        kind=FabricKind.BENES, n_terminals=n,
        elements=elements, links=tuple(links),
    )


def _normalize_selectors(topo: FabricTopology, selectors) -> list:
    keys = []
    for sel in selectors:
        if isinstance(sel, Link):
            key = (sel.src, sel.dst)
        elif isinstance(sel, str):
            key = parse_selector(sel)
        else:
            key = tuple(sel)
        link = topo._by_src.get(key[0])
        if link is None or link.dst != key[1]:
            raise TopologyError(f"unknown link selector: {sel}")
        if not link.is_interstage:
            raise TopologyError(f"terminal links are not selectable: {sel}")
        keys.append(key)
    if len(set(keys)) != len(keys):
        raise TopologyError("duplicate fault selector")
    return keys


def apply_faults(topo: FabricTopology, selectors) -> tuple:
    """Mark the named inter-stage links faulty.

    Returns (new topology, number of ordered terminal pairs left without a
    fault-free path). Re-marking an already faulty link is a no-op, so
    applying the same selector set twice is idempotent.
    """
    keys = set(_normalize_selectors(topo, selectors))
    new_links = tuple(
        replace(lk, faulty=True) if (lk.src, lk.dst) in keys and not lk.faulty else lk
        for lk in topo.links
    )
    faulted = replace(topo, links=new_links)
    return faulted, count_disconnected_pairs(faulted)


def clear_faults(topo: FabricTopology) -> FabricTopology:
    new_links = tuple(replace(lk, faulty=False) if lk.faulty else lk for lk in topo.links)
    return replace(topo, links=new_links)


def element_fault_selectors(topo: FabricTopology, eid) -> tuple:
    """Selectors for every inter-stage link touching an element; failing all
    of them models a whole-element failure."""
    if eid not in topo._elem_map:
        raise TopologyError(f"unknown element {eid}")
    return tuple(
        lk.selector for lk in topo.links
        if lk.is_interstage and (lk.src[0] == eid or lk.dst[0] == eid)
    )


def element_reachability(topo: FabricTopology, respect_faults: bool = True) -> dict:
    """For each element, the set of ejection terminals reachable through
    fault-free links (all links when respect_faults is False)."""
    reach = {}
    for el in sorted(topo.elements, key=lambda e: -e.stage):
        dsts = set()
        for port in range(el.radix_out):
            lk = topo.out_link(el.id, port)
            if lk is None or (respect_faults and lk.faulty):
                continue
            tgt_eid = lk.dst[0]
            if tgt_eid[0] == STAGE_EJECT:
                dsts.add(tgt_eid[1])
            else:
                dsts |= reach[tgt_eid]
        reach[el.id] = dsts
    return reach


def delivery_table(topo: FabricTopology, respect_faults: bool = True) -> dict:
    """Per element: destination terminal -> tuple of usable output ports.

    A port is usable when its link is fault-free and the neighbour it leads
    to can still deliver to the destination. This is the routing view the
    simulator consumes; an empty tuple means no route.
    """
    reach = element_reachability(topo, respect_faults)
    table = {}
    for el in topo.elements:
        per_dst = [[] for _ in range(topo.n_terminals)]
        for port in range(el.radix_out):
            lk = topo.out_link(el.id, port)
            if lk is None or (respect_faults and lk.faulty):
                continue
            tgt_eid = lk.dst[0]
            if tgt_eid[0] == STAGE_EJECT:
                per_dst[tgt_eid[1]].append(port)
            else:
                for d in reach[tgt_eid]:
                    per_dst[d].append(port)
        table[el.id] = [tuple(ports) for ports in per_dst]
    return table


def count_disconnected_pairs(topo: FabricTopology) -> int:
    """Ordered (source, destination) terminal pairs with no fault-free path."""
    reach = element_reachability(topo, respect_faults=True)
    n = topo.n_terminals
    count = 0
    for s in range(n):
        entry, _ = topo.injection_point(s)
        count += n - len(reach[entry])
    return count


def enumerate_paths(topo: FabricTopology, src: int, dst: int,
                    respect_faults: bool = True) -> PathGroups:
    """All simple stage-monotonic element paths from src to dst, classified
    into main (shortest) and auxiliary (longer) groups."""
    n = topo.n_terminals
    if not (0 <= src < n and 0 <= dst < n):
        raise TopologyError(f"terminals out of range: ({src}, {dst})")
    entry, _ = topo.injection_point(src)
    paths = []

    def walk(eid, trail):
        el = topo._elem_map[eid]
        trail.append(eid)
        for port in range(el.radix_out):
            lk = topo.out_link(eid, port)
            if lk is None or (respect_faults and lk.faulty):
                continue
            tgt = lk.dst[0]
            if tgt[0] == STAGE_EJECT:
                if tgt[1] == dst:
                    paths.append(tuple(trail))
            else:
                walk(tgt, trail)
        trail.pop()

    walk(entry, [])
    return PathGroups.from_paths((src, dst), paths)


def count_pair_paths(topo: FabricTopology, src: int, dst: int,
                     respect_faults: bool = True) -> int:
    """Fault-free path count for one pair, by dynamic programming (cheap even
    when enumeration would blow up)."""
    counts = {}
    for el in sorted(topo.elements, key=lambda e: -e.stage):
        total = 0
        for port in range(el.radix_out):
            lk = topo.out_link(el.id, port)
            if lk is None or (respect_faults and lk.faulty):
                continue
            tgt = lk.dst[0]
            if tgt[0] == STAGE_EJECT:
                total += tgt[1] == dst
            else:
                total += counts[tgt]
        counts[el.id] = total
    entry, _ = topo.injection_point(src)
    return counts[entry]


def to_document(topo: FabricTopology) -> str:
    """Serialize kind, parameters and fault list as a JSON text document."""
    doc = {
        "kind": topo.kind.value,
        "n_terminals": topo.n_terminals,
        "clos_params": list(topo.clos_params) if topo.clos_params else None,
        "faults": list(topo.fault_selectors),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def from_document(text: str) -> FabricTopology:
    try:
        doc = json.loads(text)
        kind = FabricKind(doc["kind"])
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise TopologyError(f"bad topology document: {exc}") from None
    if kind is FabricKind.SINGLE_STAGE:
        topo = build_single_stage(doc["n_terminals"])
    elif kind is FabricKind.CLOS3:
        topo = build_clos3(*doc["clos_params"])
    else:
        topo = build_benes(doc["n_terminals"])
    faults = doc.get("faults") or []
    if faults:
        topo, _ = apply_faults(topo, faults)
    return topo
