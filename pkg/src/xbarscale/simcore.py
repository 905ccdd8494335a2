"""Deterministic cycle-level simulator of the hierarchical fabric.

PEs issue non-blocking loads and stores tracked in a small transaction
table; requests cross round-robin arbitration points (tile egress ports,
boundary-crossbar outputs, single-ported banks) with single-entry input
queues, and spill registers at hierarchy boundaries realize the configured
NUMA latency ladder exactly.  The engine is a strict two-phase cycle loop
over numpy request state, so results are bit-identical for identical
(config, trace, seed) and one simulation never touches global state.

Cycle accounting: a response is charged ``arrival_cycle - issue_cycle + 1``
round-trip cycles, counting the bank access itself as the one cycle of the
local class.  Each spill-register pair past that adds one cycle on the
request path and one on the response path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .addrmap import AddressMap, WORD_BYTES
from .topology import ConfigError, HierarchyConfig, LatencyLadder, validate
from .workloads import Trace

_HIST_CAP = 1024  # latencies above this land in the overflow bucket


class FabricBuildError(RuntimeError):
    """A built fabric failed its zero-load probe; the build is defective."""


@dataclass
class SimStats:
    """Aggregated measurements of one simulation run."""

    cycles: int
    warmup: int
    completed: int
    issued: int
    measured_amat: float
    amat_per_class: list[float]
    accepted_throughput: float
    stall_fractions: dict[str, float]
    latency_histogram: dict[int, np.ndarray]
    in_flight_at_end: int

    def to_dict(self) -> dict:
        return {
            "cycles": self.cycles,
            "warmup": self.warmup,
            "completed": self.completed,
            "issued": self.issued,
            "measured_amat": self.measured_amat,
            "amat_per_class": self.amat_per_class,
            "accepted_throughput": self.accepted_throughput,
            "stall_fractions": self.stall_fractions,
            "in_flight_at_end": self.in_flight_at_end,
        }

    def histogram_rows(self) -> list[tuple[int, int, int]]:
        rows = []
        for cls in sorted(self.latency_histogram):
            hist = self.latency_histogram[cls]
            for lat in np.nonzero(hist)[0]:
                rows.append((cls, int(lat), int(hist[lat])))
        return rows


# request lifecycle stages
_AT_EGRESS = 0   # waiting to win the tile egress port
_AT_XBAR = 1     # in the egress register, waiting on the boundary crossbar
_TRANSIT = 2     # crossing spill registers toward the target tile
_QUEUED = 3      # at the target-side return port, waiting on the bank
_LOCAL = 4       # class-0, contending for the bank from the PE


class Fabric:
    """Static routing tables and arbitration state for one configuration."""

    def __init__(self, config: HierarchyConfig, ladder: LatencyLadder,
                 amap: AddressMap | None = None, txn_depth: int = 8,
                 input_queue_depth: int = 1):
        validate(config)
        pops_classes = config.num_classes
        if len(ladder) != pops_classes:
            raise ConfigError(
                f"ladder has {len(ladder)} entries but config {config.name()} "
                f"has {pops_classes} distance classes")
        self.config = config
        self.ladder = ladder
        self.amap = amap if amap is not None else AddressMap.default_for(config)
        self.txn_depth = txn_depth
        self.input_queue_depth = input_queue_depth

        a = config.pes_per_tile
        beta, gamma, delta = (config.tiles_per_subgroup,
                              config.subgroups_per_group, config.groups)
        self.n_pe = config.total_pes
        self.n_tiles = config.total_tiles
        self.n_banks = config.total_banks
        self.banks_per_tile = config.banks_per_tile

        # Tile coordinates.
        tiles = np.arange(self.n_tiles)
        self.tile_sg = (tiles // beta) % gamma
        self.tile_group = tiles // (beta * gamma)
        self.tile_pos_sg = tiles % beta                  # position in subgroup
        self.tile_pos_group = tiles % (beta * gamma)     # position in group

        # Egress/return port layout per tile: 0 = intra-subgroup, then one
        # per remote subgroup of the same group, then one per remote group.
        self.has_sg_port = beta > 1
        self.n_csg_ports = gamma - 1
        self.n_cg_ports = delta - 1
        self.ports_per_tile = ((1 if self.has_sg_port else 0)
                               + self.n_csg_ports + self.n_cg_ports)

        # Distance codes present in this config, ordered inner to outer;
        # maps a raw distance (0 tile, 1 subgroup, 2 group, 3 cluster) to
        # the class index of the ladder.
        codes = [0]
        if beta > 1:
            codes.append(1)
        if gamma > 1:
            codes.append(2)
        if delta > 1:
            codes.append(3)
        self._code_to_class = {c: i for i, c in enumerate(codes)}
        self.pipe_pairs = np.zeros(4, dtype=np.int64)
        for code, cls in self._code_to_class.items():
            self.pipe_pairs[code] = ladder.pipeline_pairs[cls]

        # Return-port capacity per distance code: the in-flight spill
        # registers plus the port's own input queue (single-entry unless
        # configured deeper).
        self.queue_cap = (np.maximum(self.pipe_pairs - 1, 0)
                          + input_queue_depth).astype(np.int64)

        # Arbiter widths.
        self.egress_width = a
        self.bank_width = a + self.ports_per_tile

        n_ports = self.n_tiles * max(self.ports_per_tile, 1)
        self._rr_egress = np.zeros(n_ports, dtype=np.int64)
        self._rr_xbar = np.zeros(n_ports, dtype=np.int64)
        self._rr_bank = np.zeros(self.n_banks, dtype=np.int64)
        self._xbar_widths = np.ones(n_ports, dtype=np.int64)

    # --- routing ---------------------------------------------------------

    def distance_code(self, src_tile: np.ndarray, dst_tile: np.ndarray) -> np.ndarray:
        """0 same tile, 1 same subgroup, 2 same group, 3 remote group."""
        same_tile = src_tile == dst_tile
        same_group = self.tile_group[src_tile] == self.tile_group[dst_tile]
        same_sg = same_group & (self.tile_sg[src_tile] == self.tile_sg[dst_tile])
        return np.where(same_tile, 0,
                        np.where(same_sg, 1, np.where(same_group, 2, 3)))

    def class_of_code(self, code: np.ndarray) -> np.ndarray:
        out = np.zeros_like(code)
        for c, i in self._code_to_class.items():
            out[code == c] = i
        return out

    def port_index(self, code: np.ndarray, src_tile: np.ndarray,
                   dst_tile: np.ndarray) -> np.ndarray:
        """Egress port a request leaves through, given its distance code.

        The same index names the matching return port on the target side
        (the geometry is symmetric: the peer's slot is compressed over the
        remote unit indices, skipping the unit's own).
        """
        cfg = self.config
        port = np.zeros(len(code), dtype=np.int64)
        base_csg = 1 if self.has_sg_port else 0
        m = code == 2
        if m.any():
            dst_sg = self.tile_sg[dst_tile[m]]
            src_sg = self.tile_sg[src_tile[m]]
            port[m] = base_csg + dst_sg - (dst_sg > src_sg)
        m = code == 3
        if m.any():
            dst_g = self.tile_group[dst_tile[m]]
            src_g = self.tile_group[src_tile[m]]
            port[m] = (base_csg + self.n_csg_ports + dst_g - (dst_g > src_g))
        return port

    def return_port_index(self, code, src_tile, dst_tile):
        """Return-port slot at the destination tile, keyed on the source."""
        return self.port_index(code, dst_tile, src_tile)

    def xbar_lane(self, code: np.ndarray, src_tile: np.ndarray) -> np.ndarray:
        """Input lane of the boundary crossbar: the source tile's position."""
        lane = self.tile_pos_sg[src_tile].copy()
        m = code == 3
        lane[m] = self.tile_pos_group[src_tile[m]]
        return lane

    def spill_report(self) -> list[dict]:
        """Register placement per class, for auditability."""
        rows = []
        names = {0: "local_tile", 1: "same_subgroup", 2: "same_group",
                 3: "remote_group"}
        for code, cls in sorted(self._code_to_class.items()):
            pairs = int(self.pipe_pairs[code])
            rows.append({
                "class": cls,
                "distance": names[code],
                "round_trip": self.ladder[cls],
                "register_pairs": pairs,
                "request_path": ([] if pairs == 0 else
                                 ["issuing_tile_boundary"]
                                 + [f"stage_{i}" for i in range(1, pairs)]),
                "response_path_registers": pairs,
            })
        return rows


def build_fabric(config: HierarchyConfig, ladder: LatencyLadder,
                 amap: AddressMap | None = None, txn_depth: int = 8,
                 input_queue_depth: int = 1, probe: bool = True) -> Fabric:
    """Construct a fabric and verify its zero-load ladder by probing it."""
    fabric = Fabric(config, ladder, amap, txn_depth, input_queue_depth)
    if probe:
        measured = measure_zero_load(fabric)
        expected = list(ladder.round_trip_cycles)
        if measured != expected:
            raise FabricBuildError(
                f"zero-load probe measured {measured}, ladder is {expected}")
    return fabric


def _rr_grant(node_ids: np.ndarray, lanes: np.ndarray, pointers: np.ndarray,
              widths) -> np.ndarray:
    """Round-robin winners: index mask over the contender arrays.

    For each distinct node, grant the lane at or after the node's pointer.
    """
    if len(node_ids) == 0:
        return np.zeros(0, dtype=bool)
    if np.isscalar(widths):
        w = widths
    else:
        w = widths[node_ids]
    rank = (lanes - pointers[node_ids]) % w
    order = np.lexsort((rank, node_ids))
    sorted_nodes = node_ids[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_nodes[1:] != sorted_nodes[:-1]
    win = np.zeros(len(node_ids), dtype=bool)
    win[order[first]] = True
    return win


class Engine:
    """One simulation run; owns the mutable request and arbiter state."""

    def __init__(self, fabric: Fabric, trace: Trace, cycles: int,
                 warmup: int = 0, check_invariants: bool = True):
        if cycles <= warmup:
            raise ValueError(f"cycles ({cycles}) must exceed warmup ({warmup})")
        self.fabric = fabric
        self.cycles = cycles
        self.warmup = warmup
        self.check = check_invariants
        f = fabric

        # Per-PE trace queues, ordered by (cycle, original position).
        order = np.lexsort((np.arange(len(trace.pe)), trace.cycle, trace.pe))
        self.tr_pe = trace.pe[order].astype(np.int64)
        self.tr_cycle = trace.cycle[order].astype(np.int64)
        addr = trace.address[order]
        self.tr_dep = trace.dep[order].astype(np.int64)
        # remap dep references (original positions) to sorted positions
        pos_of = np.empty(len(order), dtype=np.int64)
        pos_of[order] = np.arange(len(order))
        has_dep = self.tr_dep >= 0
        self.tr_dep[has_dep] = pos_of[self.tr_dep[has_dep]]

        self.tr_bank = f.amap.flat_banks(addr)
        src_tile = self.tr_pe // f.config.pes_per_tile
        dst_tile = self.tr_bank // f.banks_per_tile
        self.tr_code = f.distance_code(src_tile, dst_tile)
        self.tr_class = f.class_of_code(self.tr_code)

        counts = np.bincount(self.tr_pe, minlength=f.n_pe)
        self.q_start = np.zeros(f.n_pe, dtype=np.int64)
        np.cumsum(counts[:-1], out=self.q_start[1:])
        self.q_end = self.q_start + counts
        self.q_ptr = self.q_start.copy()
        self.entry_done = np.zeros(len(self.tr_pe), dtype=bool)

        # Request pool.
        pool = f.n_pe * (f.txn_depth + 2) + 16
        self.pool = pool
        self.r_active = np.zeros(pool, dtype=bool)
        self.r_pe = np.zeros(pool, dtype=np.int64)
        self.r_bank = np.zeros(pool, dtype=np.int64)
        self.r_cls = np.zeros(pool, dtype=np.int64)
        self.r_code = np.zeros(pool, dtype=np.int64)
        self.r_stage = np.zeros(pool, dtype=np.int64)
        self.r_ready = np.zeros(pool, dtype=np.int64)
        self.r_issue = np.zeros(pool, dtype=np.int64)
        self.r_retire = np.full(pool, -1, dtype=np.int64)
        self.r_entry = np.zeros(pool, dtype=np.int64)
        self.r_eg_node = np.zeros(pool, dtype=np.int64)
        self.r_xb_node = np.zeros(pool, dtype=np.int64)
        self.r_xb_lane = np.zeros(pool, dtype=np.int64)
        self.r_arrival = np.zeros(pool, dtype=np.int64)
        self.free_slots = list(range(pool - 1, -1, -1))

        self.lsu_req = np.full(f.n_pe, -1, dtype=np.int64)  # request holding the LSU
        self.txn_count = np.zeros(f.n_pe, dtype=np.int64)
        self.eg_busy = np.zeros(f.n_tiles * max(f.ports_per_tile, 1), dtype=bool)
        self.rq_len = np.zeros(f.n_tiles * max(f.ports_per_tile, 1), dtype=np.int64)

        # Stats.
        self.issued_total = 0
        self.retired_total = 0
        self.hist = {c: np.zeros(_HIST_CAP + 1, dtype=np.int64)
                     for c in range(len(f.ladder))}
        self.completed_measured = 0
        self.lat_sum = np.zeros(len(f.ladder), dtype=np.float64)
        self.lat_cnt = np.zeros(len(f.ladder), dtype=np.int64)
        self.stalls = {"issued": 0, "idle": 0, "raw": 0, "lsu_full": 0,
                       "contention": 0}

    # -- helpers -----------------------------------------------------------

    def _alloc(self, n: int) -> np.ndarray:
        if len(self.free_slots) < n:
            raise RuntimeError("request pool exhausted")
        return np.array([self.free_slots.pop() for _ in range(n)],
                        dtype=np.int64)

    def _grant_bank(self, now: int, req_idx: np.ndarray):
        f = self.fabric
        pairs = f.pipe_pairs[self.r_code[req_idx]]
        self.r_retire[req_idx] = now + pairs
        lat = now - self.r_issue[req_idx] + 1 + pairs
        # free what the winner occupied
        local = self.r_stage[req_idx] == _LOCAL
        if local.any():
            self.lsu_req[self.r_pe[req_idx[local]]] = -1
        remote = ~local
        if remote.any():
            np.subtract.at(self.rq_len, self.r_xb_node[req_idx[remote]], 1)
        self.r_stage[req_idx] = -1  # waiting for the response to come home
        if self.check:
            assert np.all(lat >= f.ladder[0])
        # latency stats window on issue time; throughput on grant time
        if now >= self.warmup:
            self.completed_measured += len(req_idx)
        meas = self.r_issue[req_idx] >= self.warmup
        if meas.any():
            cls = self.r_cls[req_idx[meas]]
            capped = np.minimum(lat[meas], _HIST_CAP)
            for c in np.unique(cls):
                sel = cls == c
                self.hist[int(c)][:] += np.bincount(
                    capped[sel], minlength=_HIST_CAP + 1)
            np.add.at(self.lat_sum, cls, lat[meas].astype(np.float64))
            np.add.at(self.lat_cnt, cls, 1)

    # -- cycle phases ------------------------------------------------------

    def _retire(self, now: int):
        done = self.r_active & (self.r_retire >= 0) & (self.r_retire < now)
        if done.any():
            idx = np.nonzero(done)[0]
            np.subtract.at(self.txn_count, self.r_pe[idx], 1)
            self.entry_done[self.r_entry[idx]] = True
            self.r_active[idx] = False
            self.r_retire[idx] = -1
            self.retired_total += len(idx)
            self.free_slots.extend(idx.tolist())

    def _issue(self, now: int):
        f = self.fabric
        pes = np.nonzero(self.q_ptr < self.q_end)[0]
        if len(pes) == 0:
            self.stalls["idle"] += f.n_pe if now >= self.warmup else 0
            return
        entry = self.q_ptr[pes]
        eligible = self.tr_cycle[entry] <= now
        count_stats = now >= self.warmup
        if count_stats:
            self.stalls["idle"] += int(f.n_pe - len(pes) + (~eligible).sum())
        pes = pes[eligible]
        entry = entry[eligible]
        if len(pes) == 0:
            return

        lsu_free = self.lsu_req[pes] < 0
        dep = self.tr_dep[entry]
        dep_ok = (dep < 0) | self.entry_done[np.maximum(dep, 0)]
        txn_ok = self.txn_count[pes] < f.txn_depth
        can = lsu_free & dep_ok & txn_ok
        if count_stats:
            self.stalls["contention"] += int((~lsu_free).sum())
            self.stalls["raw"] += int((lsu_free & ~dep_ok).sum())
            self.stalls["lsu_full"] += int((lsu_free & dep_ok & ~txn_ok).sum())
            self.stalls["issued"] += int(can.sum())
        pes = pes[can]
        entry = entry[can]
        if len(pes) == 0:
            return

        idx = self._alloc(len(pes))
        self.r_active[idx] = True
        self.r_pe[idx] = pes
        self.r_entry[idx] = entry
        self.r_bank[idx] = self.tr_bank[entry]
        self.r_cls[idx] = self.tr_class[entry]
        self.r_code[idx] = self.tr_code[entry]
        self.r_issue[idx] = now
        self.r_retire[idx] = -1
        src_tile = pes // f.config.pes_per_tile
        dst_tile = self.r_bank[idx] // f.banks_per_tile
        code = self.r_code[idx]
        local = code == 0
        self.r_stage[idx] = np.where(local, _LOCAL, _AT_EGRESS)
        self.r_ready[idx] = now
        remote = ~local
        if remote.any():
            ridx = idx[remote]
            port = f.port_index(code[remote], src_tile[remote], dst_tile[remote])
            self.r_eg_node[ridx] = src_tile[remote] * f.ports_per_tile + port
            rport = f.return_port_index(code[remote], src_tile[remote],
                                        dst_tile[remote])
            self.r_xb_node[ridx] = dst_tile[remote] * f.ports_per_tile + rport
            self.r_xb_lane[ridx] = f.xbar_lane(code[remote], src_tile[remote])
        self.lsu_req[pes] = idx
        np.add.at(self.txn_count, pes, 1)
        self.q_ptr[pes] += 1
        self.issued_total += len(pes)

    def _xbar_phase(self, now: int) -> np.ndarray:
        """Boundary-crossbar arbitration; returns winners that contend the
        bank this same cycle (zero-transit classes)."""
        f = self.fabric
        mask = self.r_active & (self.r_stage == _AT_XBAR) & (self.r_ready <= now)
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            return idx
        room = self.rq_len[self.r_xb_node[idx]] < f.queue_cap[self.r_code[idx]]
        idx = idx[room]
        if len(idx) == 0:
            return idx
        win = _rr_grant(self.r_xb_node[idx], self.r_xb_lane[idx],
                        f._rr_xbar, f._xbar_widths)
        winners = idx[win]
        f._rr_xbar[self.r_xb_node[winners]] = self.r_xb_lane[winners] + 1
        self.eg_busy[self.r_eg_node[winners]] = False
        np.add.at(self.rq_len, self.r_xb_node[winners], 1)
        pairs = f.pipe_pairs[self.r_code[winners]]
        arrive = now + np.maximum(pairs - 1, 0)
        self.r_stage[winners] = _TRANSIT
        self.r_ready[winners] = arrive
        self.r_arrival[winners] = arrive
        immediate = winners[arrive == now]
        self.r_stage[immediate] = _QUEUED
        return immediate

    def _arrivals(self, now: int):
        mask = self.r_active & (self.r_stage == _TRANSIT) & (self.r_ready <= now)
        self.r_stage[np.nonzero(mask)[0]] = _QUEUED

    def _bank_phase(self, now: int):
        f = self.fabric
        # local contenders straight from the PE
        local = np.nonzero(self.r_active & (self.r_stage == _LOCAL)
                           & (self.r_ready <= now))[0]
        # remote contenders: FIFO heads of each return-port queue
        queued = np.nonzero(self.r_active & (self.r_stage == _QUEUED))[0]
        if len(queued):
            order = np.lexsort((self.r_arrival[queued], self.r_xb_node[queued]))
            q_sorted = queued[order]
            nodes = self.r_xb_node[q_sorted]
            first = np.ones(len(q_sorted), dtype=bool)
            first[1:] = nodes[1:] != nodes[:-1]
            heads = q_sorted[first]
        else:
            heads = queued
        if len(local) == 0 and len(heads) == 0:
            return
        idx = np.concatenate([local, heads])
        banks = self.r_bank[idx]
        lanes = np.concatenate([
            self.r_pe[local] % f.config.pes_per_tile,
            f.config.pes_per_tile
            + self.r_xb_node[heads] % max(f.ports_per_tile, 1),
        ])
        win = _rr_grant(banks, lanes, f._rr_bank, f.bank_width)
        winners = idx[win]
        if self.check:
            assert len(np.unique(banks[win])) == win.sum()  # port exclusivity
        f._rr_bank[banks[win]] = lanes[win] + 1
        self._grant_bank(now, winners)

    def _egress_phase(self, now: int):
        f = self.fabric
        mask = self.r_active & (self.r_stage == _AT_EGRESS) & (self.r_ready <= now)
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            return
        open_node = ~self.eg_busy[self.r_eg_node[idx]]
        idx = idx[open_node]
        if len(idx) == 0:
            return
        lanes = self.r_pe[idx] % f.config.pes_per_tile
        win = _rr_grant(self.r_eg_node[idx], lanes, f._rr_egress, f.egress_width)
        winners = idx[win]
        f._rr_egress[self.r_eg_node[winners]] = lanes[win] + 1
        self.eg_busy[self.r_eg_node[winners]] = True
        self.r_stage[winners] = _AT_XBAR
        self.r_ready[winners] = now + 1
        self.lsu_req[self.r_pe[winners]] = -1

    # -- main loop ---------------------------------------------------------

    def run(self) -> SimStats:
        f = self.fabric
        for now in range(self.cycles):
            self._retire(now)
            self._issue(now)
            self._xbar_phase(now)
            self._arrivals(now)
            self._bank_phase(now)
            self._egress_phase(now)
            if self.check:
                active = int(self.r_active.sum())
                assert self.issued_total == self.retired_total + active, \
                    f"conservation violated at cycle {now}"

        measured_cycles = self.cycles - self.warmup
        per_class = [float(self.lat_sum[c] / self.lat_cnt[c])
                     if self.lat_cnt[c] else float("nan")
                     for c in range(len(f.ladder))]
        total_cnt = int(self.lat_cnt.sum())
        amat = float(self.lat_sum.sum() / total_cnt) if total_cnt else float("nan")
        pe_cycles = max(1, f.n_pe * measured_cycles)
        fractions = {k: v / pe_cycles for k, v in self.stalls.items()
                     if k != "issued"}
        return SimStats(
            cycles=self.cycles,
            warmup=self.warmup,
            completed=self.completed_measured,
            issued=self.issued_total,
            measured_amat=amat,
            amat_per_class=per_class,
            accepted_throughput=self.completed_measured / pe_cycles,
            stall_fractions=fractions,
            latency_histogram=self.hist,
            in_flight_at_end=int(self.r_active.sum()),
        )


def run(fabric: Fabric, trace: Trace, cycles: int, warmup: int = 0,
        check_invariants: bool = True) -> SimStats:
    """Simulate a trace; deterministic for a fixed (fabric, trace)."""
    return Engine(fabric, trace, cycles, warmup, check_invariants).run()


def measure_zero_load(fabric: Fabric) -> list[int]:
    """Round-trip cycles of one lone request per distance class.

    Probes the idle fabric from PE 0; a mismatch against the ladder is a
    construction defect, not a modeling error.
    """
    f = fabric
    targets = {}
    dst_tiles = np.arange(f.n_tiles)
    codes = f.distance_code(np.zeros(f.n_tiles, dtype=np.int64), dst_tiles)
    for tile in range(f.n_tiles):
        cls = int(f.class_of_code(codes[tile:tile + 1])[0])
        if cls not in targets:
            targets[cls] = tile * f.banks_per_tile
    out = []
    base = f.amap.seq_region_bytes
    for cls in range(len(f.ladder)):
        bank = targets[cls]
        # interleaved word landing on this bank, row 0
        addr = base + bank * WORD_BYTES
        trace = Trace.single(pe=0, cycle=0, address=addr)
        stats = run(fabric, trace, cycles=int(f.ladder[cls]) + 4, warmup=0,
                    check_invariants=True)
        if stats.completed != 1:
            raise FabricBuildError(f"zero-load probe for class {cls} never completed")
        out.append(int(round(stats.amat_per_class[cls])))
    return out
