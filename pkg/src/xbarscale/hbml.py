"""Main-memory link model: modular DMA splitting plus HBM channel timing.

A transfer descriptor is cut by the midend into one subtask per subgroup
(the subgroup owns the L1 stripes the data lands in), each a list of bursts
capped at one stripe and never crossing a main-memory channel boundary.
The backends stream their bursts over 512-bit links at one beat per cluster
cycle while every channel is rate-limited by its DDR speed and withholds
service during refresh blackout windows.  Dram internals beyond that
(banks, row hits) are deliberately out of the picture: per-channel rate
plus a refresh fraction reproduces the published bandwidth envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .addrmap import WORD_BYTES, AddressError, AddressMap, burst_span

# pin rate (Gb/s/pin) -> aggregate peak over 16 channels (128 pins each)
PIN_RATES = (2.8, 3.2, 3.6)
_PINS_PER_CHANNEL = 128


class TransferError(ValueError):
    """Descriptor violates alignment or range rules."""


@dataclass(frozen=True)
class HbmConfig:
    """Main-memory side of the link: channel count, speed, and overheads."""

    clock_hz: float
    pin_rate_gbps: float = 3.6
    channels: int = 16
    link_bytes_per_cycle: int = 64          # one 512-bit beat per master
    refresh_fraction: float = 0.03
    refresh_period_cycles: int = 500
    frontend_cost_cycles: int = 64          # per descriptor
    interleave_words: int = 256             # channel granularity = burst cap

    def __post_init__(self):
        if self.pin_rate_gbps not in PIN_RATES:
            raise ValueError(
                f"pin rate must be one of {PIN_RATES}, got {self.pin_rate_gbps}")
        if self.clock_hz <= 0:
            raise ValueError("clock must be positive")

    @property
    def peak_bytes_per_sec(self) -> float:
        """Aggregate DDR peak: pins * rate over all channels."""
        return (self.pin_rate_gbps * 1e9 / 8) * _PINS_PER_CHANNEL * self.channels

    @property
    def channel_bytes_per_cycle(self) -> float:
        return self.peak_bytes_per_sec / self.channels / self.clock_hz

    @property
    def blackout_cycles(self) -> int:
        return int(round(self.refresh_period_cycles * self.refresh_fraction))


def link_ceiling(hbm: HbmConfig, masters: int = 16) -> float:
    """Cluster-side bound in bytes/s: masters x beat width x clock."""
    return masters * hbm.link_bytes_per_cycle * hbm.clock_hz


@dataclass(frozen=True)
class DmaDescriptor:
    """One software-visible transfer between L1 and main memory."""

    l1_address: int
    l2_address: int
    length_bytes: int
    direction: str = "l2_to_l1"

    def __post_init__(self):
        if self.direction not in ("l2_to_l1", "l1_to_l2"):
            raise TransferError(f"unknown direction {self.direction!r}")
        if self.length_bytes <= 0:
            raise TransferError("transfer length must be positive")
        if (self.l1_address % WORD_BYTES or self.l2_address % WORD_BYTES
                or self.length_bytes % WORD_BYTES):
            raise TransferError("addresses and length must be word aligned")


@dataclass(frozen=True)
class Burst:
    l1_address: int
    l2_address: int
    words: int
    channel: int


@dataclass
class DmaSubTask:
    """Burst list handled by one per-subgroup backend."""

    subgroup: int
    bursts: list[Burst] = field(default_factory=list)

    @property
    def bytes(self) -> int:
        return sum(b.words for b in self.bursts) * WORD_BYTES


def _l1_spans(amap: AddressMap, l1_address: int, length: int):
    """(subgroup, words) chunks of an L1 range, sequential region included.

    Sequential bytes belong to their tile's slice and therefore to that
    tile's subgroup; interleaved bytes follow the stripe ownership of
    :func:`burst_span`.  Chunks are additionally cut at the stripe size so
    no chunk exceeds the burst cap.
    """
    cfg = amap.config
    stripe = amap.stripe_words
    seq_end = amap.seq_region_bytes
    addr = l1_address
    end = l1_address + length
    while addr < end and addr < seq_end:
        slice_bytes = amap.seq_slice_bytes
        tile = addr // slice_bytes
        room = (tile + 1) * slice_bytes - addr
        take_bytes = min(room, end - addr, stripe * WORD_BYTES)
        sg = tile // cfg.tiles_per_subgroup
        yield sg, take_bytes // WORD_BYTES
        addr += take_bytes
    if addr < end:
        yield from burst_span(amap, addr, end - addr)


def dma_split(descriptor: DmaDescriptor, amap: AddressMap,
              hbm: HbmConfig | None = None) -> list[DmaSubTask]:
    """Partition a descriptor into per-subgroup subtasks.

    Chunks follow the L1 ownership (stripes in the interleaved region, tile
    slices in the sequential one); a chunk is split again wherever the
    matching main-memory range would cross a channel interleave boundary,
    so no burst ever straddles two channels.
    """
    granule = (hbm.interleave_words if hbm is not None else 256)
    channels = hbm.channels if hbm is not None else 16
    if descriptor.l1_address + descriptor.length_bytes > amap.l1_bytes:
        raise TransferError("descriptor leaves the L1 range")

    tasks: dict[int, DmaSubTask] = {}
    l1 = descriptor.l1_address
    l2 = descriptor.l2_address
    for subgroup, words in _l1_spans(amap, descriptor.l1_address,
                                     descriptor.length_bytes):
        remaining = words
        while remaining:
            l2_word = l2 // WORD_BYTES
            room = granule - l2_word % granule
            take = min(remaining, room)
            channel = (l2_word // granule) % channels
            task = tasks.setdefault(subgroup, DmaSubTask(subgroup))
            task.bursts.append(Burst(l1, l2, take, channel))
            l1 += take * WORD_BYTES
            l2 += take * WORD_BYTES
            remaining -= take
    out = [tasks[sg] for sg in sorted(tasks)]
    total = sum(t.bytes for t in out)
    assert total == descriptor.length_bytes  # exact partition
    return out


@dataclass
class TransferStats:
    bytes_moved: int
    cycles: int
    clock_hz: float
    achieved_bytes_per_sec: float
    hbm_utilization: float
    link_utilization: float

    def to_dict(self) -> dict:
        return {
            "bytes_moved": self.bytes_moved,
            "cycles": self.cycles,
            "achieved_gbps": self.achieved_bytes_per_sec / 1e9,
            "hbm_utilization": self.hbm_utilization,
            "link_utilization": self.link_utilization,
        }


def run_transfer(subtasks: list[DmaSubTask], hbm: HbmConfig,
                 masters: int = 16, descriptors: int = 1,
                 lookahead: int = 16) -> TransferStats:
    """Stream the subtasks cycle by cycle and report achieved bandwidth.

    Each backend moves at most one 64-byte beat per cycle; with several
    AXI bursts outstanding it serves the first burst in its queue whose
    channel has budget left (bounded lookahead), so unrelated bursts are
    not convoyed behind a busy or refreshing channel.  A channel serves at
    most its DDR rate per cycle and nothing during its staggered refresh
    blackout window.  Descriptor configuration pipelines under the running
    transfer, so only the first descriptor's frontend cost is exposed.
    """
    queues = [[[b.words * WORD_BYTES, b.channel] for b in t.bursts]
              for t in subtasks]
    heads = [0] * len(queues)
    total_bytes = sum(t.bytes for t in subtasks)

    ch_rate = hbm.channel_bytes_per_cycle
    beat = hbm.link_bytes_per_cycle
    period = hbm.refresh_period_cycles
    blackout = hbm.blackout_cycles
    stagger = max(1, period // max(hbm.channels, 1))

    # Only the first descriptor's configuration is exposed: the frontend
    # programs the next transfer while data for the current one streams.
    cycles = hbm.frontend_cost_cycles * min(descriptors, 1)
    moved = 0
    carry = [0.0] * hbm.channels  # fractional channel-rate accumulator
    active = [i for i, q in enumerate(queues) if q]
    cycle = 0
    while active:
        blacked = [False] * hbm.channels
        ch_budget = [0] * hbm.channels
        for ch in range(hbm.channels):
            if (cycle + ch * stagger) % period < blackout:
                blacked[ch] = True
            else:
                carry[ch] += ch_rate
                ch_budget[ch] = int(carry[ch])
                carry[ch] -= ch_budget[ch]
        # rotate service order so channel sharing stays fair
        for off in range(len(active)):
            i = active[(off + cycle) % len(active)]
            q = queues[i]
            link_left = beat
            for pos in range(heads[i], min(heads[i] + lookahead, len(q))):
                left, ch = q[pos]
                if left <= 0 or blacked[ch] or ch_budget[ch] <= 0:
                    continue
                step = min(link_left, left, ch_budget[ch])
                q[pos][0] = left - step
                ch_budget[ch] -= step
                moved += step
                link_left -= step
                if link_left <= 0:
                    break
            while heads[i] < len(q) and q[heads[i]][0] <= 0:
                heads[i] += 1
        active = [i for i in active if heads[i] < len(queues[i])]
        cycle += 1
    cycles += cycle

    seconds = cycles / hbm.clock_hz if cycles else 0.0
    achieved = total_bytes / seconds if seconds else 0.0
    return TransferStats(
        bytes_moved=int(moved),
        cycles=cycles,
        clock_hz=hbm.clock_hz,
        achieved_bytes_per_sec=achieved,
        hbm_utilization=achieved / hbm.peak_bytes_per_sec,
        link_utilization=achieved / link_ceiling(hbm, masters),
    )


def transfer_scenario(amap: AddressMap, hbm: HbmConfig, nbytes: int,
                      direction: str = "l2_to_l1",
                      l2_address: int = 0) -> TransferStats:
    """Split-and-run helper for whole-memory bandwidth scenarios.

    The benchmark pattern interleaves the entire L1 (a bandwidth run does
    not carry private stacks), so the scenario maps the config with an
    empty sequential region and every backend stays on its own aligned
    channel.  ``nbytes`` may cover the L1 several times (a read pass plus a
    write pass, say); each full-or-partial pass is one descriptor, and all
    passes queue on the same sixteen per-subgroup backends.
    """
    if nbytes == 0:
        return run_transfer([], hbm)
    bench_map = AddressMap(amap.config, seq_region_bytes=0)
    window = bench_map.l1_bytes
    merged: dict[int, DmaSubTask] = {}
    descriptors = 0
    left = nbytes
    while left > 0:
        chunk = min(left, window)
        desc = DmaDescriptor(0, l2_address, chunk, direction)
        for t in dma_split(desc, bench_map, hbm):
            merged.setdefault(t.subgroup, DmaSubTask(t.subgroup)) \
                  .bursts.extend(t.bursts)
        descriptors += 1
        left -= chunk
    tasks = [merged[sg] for sg in sorted(merged)]
    return run_transfer(tasks, hbm, descriptors=descriptors)


def bandwidth_matrix(amap: AddressMap, clocks_mhz: list[float],
                     pin_rates: list[float], nbytes: int) -> list[dict]:
    """Achieved-bandwidth grid over cluster clock x DDR rate."""
    rows = []
    for mhz in clocks_mhz:
        for rate in pin_rates:
            hbm = HbmConfig(clock_hz=mhz * 1e6, pin_rate_gbps=rate)
            stats = transfer_scenario(amap, hbm, nbytes)
            row = {"clock_mhz": mhz, "pin_rate_gbps": rate}
            row.update(stats.to_dict())
            rows.append(row)
    return rows
