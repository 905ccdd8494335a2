"""Hierarchy configurations and static interconnect metrics.

A cluster is described as alphaC-betaT-gammaSG-deltaG: delta groups, each
holding gamma subgroups of beta tiles, with alpha PEs per tile.  Every tile
owns ``alpha * banking_factor`` single-ported SPM banks, so the whole L1 is
shared through a tree of crossbars.  This module validates such shapes and
computes the metrics that only depend on the static topology: per-distance
bank counts, zero-load latency, routing complexity and combinational depth.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence


class ConfigError(ValueError):
    """Raised when a hierarchy configuration violates an invariant."""


def _is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class HierarchyConfig:
    """Shape of one cluster: counts per hierarchy level plus banking.

    A flat cluster is expressed as ``tiles_per_subgroup = subgroups_per_group
    = groups = 1``.  All counts must be powers of two; routing-tree stages
    need integral log2 depths.
    """

    pes_per_tile: int
    tiles_per_subgroup: int = 1
    subgroups_per_group: int = 1
    groups: int = 1
    banking_factor: int = 4
    bank_words: int = 256  # 32-bit words per SPM bank (1 KiB)

    @property
    def total_pes(self) -> int:
        return (self.pes_per_tile * self.tiles_per_subgroup
                * self.subgroups_per_group * self.groups)

    @property
    def total_tiles(self) -> int:
        return self.tiles_per_subgroup * self.subgroups_per_group * self.groups

    @property
    def total_banks(self) -> int:
        return self.banking_factor * self.total_pes

    @property
    def banks_per_tile(self) -> int:
        return self.pes_per_tile * self.banking_factor

    @property
    def tiles_per_group(self) -> int:
        return self.tiles_per_subgroup * self.subgroups_per_group

    @property
    def levels(self) -> tuple[str, ...]:
        """Hierarchy levels with more than one unit, innermost first."""
        out = []
        if self.tiles_per_subgroup > 1:
            out.append("tile")
        if self.subgroups_per_group > 1:
            out.append("subgroup")
        if self.groups > 1:
            out.append("group")
        return tuple(out)

    @property
    def num_classes(self) -> int:
        """Distance classes: the local tile plus one per populated level."""
        return 1 + len(self.levels)

    @property
    def remote_ports_per_tile(self) -> int:
        """Egress/return port pairs a tile exposes toward remote units."""
        ports = 0
        if self.tiles_per_subgroup > 1:
            ports += 1
        ports += self.subgroups_per_group - 1
        ports += self.groups - 1
        return ports

    def name(self) -> str:
        parts = [f"{self.pes_per_tile}C"]
        if self.tiles_per_subgroup > 1:
            parts.append(f"{self.tiles_per_subgroup}T")
        if self.subgroups_per_group > 1:
            parts.append(f"{self.subgroups_per_group}SG")
        if self.groups > 1:
            parts.append(f"{self.groups}G")
        return "-".join(parts)

    @classmethod
    def from_dict(cls, doc: dict) -> "HierarchyConfig":
        known = {"pes_per_tile", "tiles_per_subgroup", "subgroups_per_group",
                 "groups", "banking_factor", "bank_words"}
        fields = {k: int(v) for k, v in doc.items() if k in known}
        if "pes_per_tile" not in fields:
            raise ConfigError("config document lacks 'pes_per_tile'")
        return validate(cls(**fields))

    @classmethod
    def from_json(cls, path: str) -> "HierarchyConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def validate(config: HierarchyConfig) -> HierarchyConfig:
    """Check every invariant, raising ConfigError listing all violations."""
    problems = []
    for fname, sym in (("pes_per_tile", "alpha"), ("tiles_per_subgroup", "beta"),
                       ("subgroups_per_group", "gamma"), ("groups", "delta")):
        v = getattr(config, fname)
        if v < 1:
            problems.append(f"{fname} ({sym}) must be >= 1, got {v}")
        elif not _is_pow2(v):
            problems.append(f"{fname} ({sym}) must be a power of two, got {v}")
    if config.banking_factor < 1:
        problems.append(f"banking_factor must be >= 1, got {config.banking_factor}")
    elif not _is_pow2(config.banking_factor):
        problems.append(f"banking_factor must be a power of two, got {config.banking_factor}")
    if config.bank_words < 1 or not _is_pow2(config.bank_words):
        problems.append(f"bank_words must be a power of two >= 1, got {config.bank_words}")
    if problems:
        raise ConfigError("; ".join(problems))
    return config


@dataclass(frozen=True)
class LatencyLadder:
    """Round-trip cycles per distance class, innermost first.

    Entries must be odd and strictly increasing: every pipeline stage added
    past the 1-cycle local bank access appears on both the request and the
    response path, so each register pair costs two cycles.
    """

    round_trip_cycles: tuple[int, ...]

    def __post_init__(self):
        rt = tuple(int(c) for c in self.round_trip_cycles)
        object.__setattr__(self, "round_trip_cycles", rt)
        if not rt:
            raise ConfigError("ladder must have at least one entry")
        if rt[0] != 1:
            raise ConfigError(f"local class latency must be 1, got {rt[0]}")
        if any(b <= a for a, b in zip(rt, rt[1:])):
            raise ConfigError(f"ladder must be strictly increasing: {rt}")
        if any(c % 2 == 0 for c in rt):
            raise ConfigError(f"ladder entries must be odd: {rt}")

    def __len__(self) -> int:
        return len(self.round_trip_cycles)

    def __getitem__(self, i: int) -> int:
        return self.round_trip_cycles[i]

    @property
    def pipeline_pairs(self) -> tuple[int, ...]:
        """Spill-register pairs per class: (round_trip - 1) / 2."""
        return tuple((c - 1) // 2 for c in self.round_trip_cycles)

    @classmethod
    def default_for(cls, config: HierarchyConfig) -> "LatencyLadder":
        """The 1-3-5-7 style ladder truncated to the config's class count."""
        return cls(tuple(range(1, 2 * config.num_classes, 2)))


def bank_population(config: HierarchyConfig) -> list[int]:
    """Bank counts per distance class seen from any one PE.

    Classes with no population (a level of width one) are dropped, matching
    the class list of :meth:`HierarchyConfig.levels`.
    """
    validate(config)
    bpt = config.banks_per_tile
    beta, gamma, delta = (config.tiles_per_subgroup, config.subgroups_per_group,
                          config.groups)
    counts = [bpt]
    if beta > 1:
        counts.append((beta - 1) * bpt)
    if gamma > 1:
        counts.append((gamma - 1) * beta * bpt)
    if delta > 1:
        counts.append((delta - 1) * gamma * beta * bpt)
    assert sum(counts) == config.total_banks
    return counts


def zero_load_latency(config: HierarchyConfig, ladder: LatencyLadder) -> float:
    """Mean round-trip cycles of a lone uniformly random request."""
    pops = bank_population(config)
    if len(ladder) != len(pops):
        raise ConfigError(
            f"ladder has {len(ladder)} entries but config {config.name()} "
            f"has {len(pops)} distance classes")
    total = config.total_banks
    return sum(n * ladder[i] for i, n in enumerate(pops)) / total


@dataclass(frozen=True)
class CrossbarInstance:
    """One crossbar (or arbiter) counted in the complexity budget."""

    kind: str
    inputs: int
    outputs: int
    count: int

    @property
    def leaves(self) -> int:
        return self.inputs * self.outputs

    @property
    def comb_delay(self) -> float:
        return math.log2(self.inputs) + math.log2(self.outputs)


@dataclass(frozen=True)
class ComplexityReport:
    """Leaf-node counts and combinational depth of the implied crossbars."""

    total_complexity: int
    critical_complexity: int
    critical_comb_delay: float
    zero_load: float
    instances: tuple[CrossbarInstance, ...] = field(default=())

    def breakdown(self) -> list[dict]:
        return [
            {"kind": i.kind, "inputs": i.inputs, "outputs": i.outputs,
             "count": i.count, "leaves": i.leaves, "subtotal": i.leaves * i.count}
            for i in self.instances
        ]


def crossbar_instances(config: HierarchyConfig,
                       include_return_ports: bool = True,
                       include_dma_port: bool = True) -> list[CrossbarInstance]:
    """Enumerate every crossbar the hierarchy implies.

    Accounting choices, since the published totals are not itemized:
    the tile-local crossbar input side counts the PEs plus (optionally) one
    return port per remote link; three-level shapes additionally count one
    main-memory ingress input per tile (the per-subgroup DMA backends land
    in the tile crossbars only when a subgroup level exists).  Remote links
    between peer units are directed, one crossbar per ordered pair.
    """
    validate(config)
    alpha = config.pes_per_tile
    beta, gamma, delta = (config.tiles_per_subgroup, config.subgroups_per_group,
                          config.groups)
    bpt = config.banks_per_tile
    ports = config.remote_ports_per_tile

    local_inputs = alpha
    if include_return_ports:
        local_inputs += ports
    if include_dma_port and gamma > 1 and delta > 1:
        local_inputs += 1  # per-subgroup DMA backend feeds each tile crossbar

    out = [CrossbarInstance("tile_local", local_inputs, bpt, config.total_tiles)]
    if ports:
        out.append(CrossbarInstance("port_arbiter", alpha, 1,
                                    config.total_tiles * ports))
    if beta > 1:
        out.append(CrossbarInstance("intra_subgroup", beta, beta, gamma * delta))
    if gamma > 1:
        out.append(CrossbarInstance("cross_subgroup", beta, beta,
                                    delta * gamma * (gamma - 1)))
    if delta > 1:
        side = beta * gamma
        out.append(CrossbarInstance("cross_group", side, side,
                                    delta * (delta - 1)))
    return out


def complexity_metrics(config: HierarchyConfig,
                       ladder: LatencyLadder | None = None,
                       include_return_ports: bool = True,
                       include_dma_port: bool = True) -> ComplexityReport:
    """Total and critical crossbar complexity plus combinational delay.

    The critical instance is the one with the largest n*k leaf count; its
    delay is log2(n) + log2(k), fractional when n is not a power of two.
    """
    inst = crossbar_instances(config, include_return_ports, include_dma_port)
    total = sum(i.leaves * i.count for i in inst)
    critical = max(inst, key=lambda i: i.leaves)
    if ladder is None:
        ladder = LatencyLadder.default_for(config)
    return ComplexityReport(
        total_complexity=total,
        critical_complexity=critical.leaves,
        critical_comb_delay=critical.comb_delay,
        zero_load=zero_load_latency(config, ladder),
        instances=tuple(inst),
    )


@dataclass(frozen=True)
class LevelBounds:
    """Restricts the hierarchy enumeration: per-level choice sets and depth."""

    pes_per_tile: tuple[int, ...] | None = None
    tiles_per_subgroup: tuple[int, ...] | None = None
    subgroups_per_group: tuple[int, ...] | None = None
    groups: tuple[int, ...] | None = None
    max_levels: int = 3  # populated levels beyond the tile, 0..3

    @classmethod
    def from_dict(cls, doc: dict) -> "LevelBounds":
        kw = {}
        for key in ("pes_per_tile", "tiles_per_subgroup",
                    "subgroups_per_group", "groups"):
            if key in doc and doc[key] is not None:
                kw[key] = tuple(int(v) for v in doc[key])
        if "max_levels" in doc:
            kw["max_levels"] = int(doc["max_levels"])
        return cls(**kw)

    def admits(self, cfg: HierarchyConfig) -> bool:
        for key in ("pes_per_tile", "tiles_per_subgroup",
                    "subgroups_per_group", "groups"):
            allowed = getattr(self, key)
            if allowed is not None and getattr(cfg, key) not in allowed:
                return False
        return len(cfg.levels) <= self.max_levels


def enumerate_hierarchies(total_pes: int,
                          banking_factor: int = 4,
                          bounds: LevelBounds | None = None) -> list[HierarchyConfig]:
    """All power-of-two factorizations of ``total_pes`` within bounds.

    Output is deduplicated and deterministically ordered by (level count,
    alpha, beta, gamma, delta).
    """
    if not _is_pow2(total_pes):
        raise ConfigError(f"total_pes must be a power of two, got {total_pes}")
    if bounds is None:
        bounds = LevelBounds()
    log_total = total_pes.bit_length() - 1
    seen = set()
    out = []
    # Split log2(total) across the four levels; each level gets 2**share.
    for la in range(log_total + 1):
        for lb in range(log_total - la + 1):
            for lg in range(log_total - la - lb + 1):
                ld = log_total - la - lb - lg
                cfg = HierarchyConfig(
                    pes_per_tile=1 << la,
                    tiles_per_subgroup=1 << lb,
                    subgroups_per_group=1 << lg,
                    groups=1 << ld,
                    banking_factor=banking_factor,
                )
                key = (cfg.pes_per_tile, cfg.tiles_per_subgroup,
                       cfg.subgroups_per_group, cfg.groups)
                if key in seen or not bounds.admits(cfg):
                    continue
                seen.add(key)
                out.append(cfg)
    out.sort(key=lambda c: (len(c.levels), c.pes_per_tile, c.tiles_per_subgroup,
                            c.subgroups_per_group, c.groups))
    return out
