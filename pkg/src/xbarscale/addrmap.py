"""Hybrid sequential/interleaved decoding of L1 byte addresses.

The L1 address range splits into a sequential region (private stacks, kept
inside the owning tile) followed by a word-interleaved region striped across
every bank in the cluster.  Interleaving makes the bank index a pure modulo
of the word index, so access patterns are independent of how many rows each
bank holds; the sequential region fills each tile's slice bank by bank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .topology import ConfigError, HierarchyConfig, validate

WORD_BYTES = 4


class AddressError(ValueError):
    """Unaligned or out-of-range L1 address."""


@dataclass(frozen=True)
class BankCoord:
    """Physical location of one word: which bank, and where inside it."""

    group: int
    subgroup: int
    tile: int          # position within its subgroup
    bank: int          # position within its tile
    row: int

    def flat_bank(self, config: HierarchyConfig) -> int:
        """Global bank id with the bank-within-tile index minor."""
        tile_id = (self.group * config.subgroups_per_group
                   + self.subgroup) * config.tiles_per_subgroup + self.tile
        return tile_id * config.banks_per_tile + self.bank


@dataclass(frozen=True)
class AddressMap:
    """Region boundaries plus the config that fixes the bank geometry."""

    config: HierarchyConfig
    seq_region_bytes: int = 512 * 1024

    def __post_init__(self):
        validate(self.config)
        if self.seq_region_bytes % (WORD_BYTES * self.config.total_banks):
            raise ConfigError(
                "sequential region must be a whole number of words per bank")
        if not 0 <= self.seq_region_bytes <= self.l1_bytes:
            raise ConfigError(
                f"sequential region {self.seq_region_bytes} exceeds the "
                f"{self.l1_bytes}-byte L1")

    @property
    def l1_bytes(self) -> int:
        return self.config.total_banks * self.config.bank_words * WORD_BYTES

    @property
    def interleaved_region_bytes(self) -> int:
        return self.l1_bytes - self.seq_region_bytes

    @property
    def seq_slice_bytes(self) -> int:
        """Per-tile private slice of the sequential region."""
        return self.seq_region_bytes // self.config.total_tiles

    @property
    def seq_rows_per_bank(self) -> int:
        return self.seq_region_bytes // (WORD_BYTES * self.config.total_banks)

    @property
    def stripe_words(self) -> int:
        """Contiguous interleaved words owned by one subgroup (burst cap)."""
        return self.config.banks_per_tile * self.config.tiles_per_subgroup

    @classmethod
    def default_for(cls, config: HierarchyConfig) -> "AddressMap":
        """Scale the 512 KiB / 3.5 MiB split to the config's L1 size."""
        l1 = config.total_banks * config.bank_words * WORD_BYTES
        seq = l1 // 8
        # keep the slice a whole number of words per bank
        gran = WORD_BYTES * config.total_banks
        seq -= seq % gran
        return cls(config, seq_region_bytes=seq)

    def flat_banks(self, byte_addresses: np.ndarray) -> np.ndarray:
        """Vectorized map from byte addresses to global bank ids.

        Same arithmetic as :func:`map_address`, over whole arrays; the
        per-word equivalence is covered by tests.
        """
        addrs = np.asarray(byte_addresses, dtype=np.int64)
        if np.any(addrs % WORD_BYTES):
            raise AddressError("addresses must be word aligned")
        if np.any((addrs < 0) | (addrs >= self.l1_bytes)):
            raise AddressError("addresses outside the L1 range")
        cfg = self.config
        word = addrs // WORD_BYTES
        seq_words = self.seq_region_bytes // WORD_BYTES
        out = np.empty(len(addrs), dtype=np.int64)
        seq = word < seq_words
        if seq.any():
            slice_words = self.seq_slice_bytes // WORD_BYTES
            tile_id = word[seq] // slice_words
            offset = word[seq] % slice_words
            words_per_bank = slice_words // cfg.banks_per_tile
            out[seq] = tile_id * cfg.banks_per_tile + offset // words_per_bank
        inter = ~seq
        if inter.any():
            out[inter] = (word[inter] - seq_words) % cfg.total_banks
        return out


def _decompose_bank(config: HierarchyConfig, flat_bank: int) -> tuple[int, int, int, int]:
    """Little-endian split of a global bank id into (group, subgroup, tile, bank)."""
    bank = flat_bank % config.banks_per_tile
    tile_id = flat_bank // config.banks_per_tile
    tile = tile_id % config.tiles_per_subgroup
    sg_id = tile_id // config.tiles_per_subgroup
    subgroup = sg_id % config.subgroups_per_group
    group = sg_id // config.subgroups_per_group
    return group, subgroup, tile, bank


def map_address(amap: AddressMap, byte_address: int) -> tuple[BankCoord, str]:
    """Decode one word-aligned byte address to its bank coordinate.

    Returns the coordinate plus a region tag, "seq" or "interleaved".
    Sequential slices sit at the bottom of the range and fill their tile's
    banks contiguously; interleaved words stripe bank-by-bank across the
    whole cluster, rows offset past the sequential rows.
    """
    cfg = amap.config
    if byte_address % WORD_BYTES:
        raise AddressError(f"address {byte_address:#x} is not word aligned")
    if not 0 <= byte_address < amap.l1_bytes:
        raise AddressError(f"address {byte_address:#x} outside the L1 range")

    word = byte_address // WORD_BYTES
    seq_words = amap.seq_region_bytes // WORD_BYTES
    if word < seq_words:
        slice_words = amap.seq_slice_bytes // WORD_BYTES
        tile_id = word // slice_words
        offset = word % slice_words
        words_per_bank = slice_words // cfg.banks_per_tile
        bank = offset // words_per_bank
        row = offset % words_per_bank
        group, subgroup, tile, _ = _decompose_bank(
            cfg, tile_id * cfg.banks_per_tile)
        return BankCoord(group, subgroup, tile, bank, row), "seq"

    iword = word - seq_words
    flat_bank = iword % cfg.total_banks
    row = amap.seq_rows_per_bank + iword // cfg.total_banks
    group, subgroup, tile, bank = _decompose_bank(cfg, flat_bank)
    return BankCoord(group, subgroup, tile, bank, row), "interleaved"


def owner_subgroup(amap: AddressMap, byte_address: int) -> int:
    """Global subgroup index owning an interleaved address's stripe."""
    coord, region = map_address(amap, byte_address)
    if region != "interleaved":
        raise AddressError(f"address {byte_address:#x} is not interleaved")
    return coord.group * amap.config.subgroups_per_group + coord.subgroup


def burst_span(amap: AddressMap, byte_address: int,
               byte_len: int) -> list[tuple[int, int]]:
    """Split a linear interleaved range at stripe boundaries.

    Returns (owning global subgroup, word count) per chunk.  A stripe is
    ``banks-per-subgroup`` consecutive words, all resident in one subgroup,
    which caps a single contiguous transfer.
    """
    if byte_address % WORD_BYTES or byte_len % WORD_BYTES:
        raise AddressError("burst ranges must be word aligned")
    if byte_len == 0:
        return []
    seq_bytes = amap.seq_region_bytes
    if byte_address < seq_bytes or byte_address + byte_len > amap.l1_bytes:
        raise AddressError(
            f"burst [{byte_address:#x}, +{byte_len}) leaves the interleaved region")

    stripe = amap.stripe_words
    word = (byte_address - seq_bytes) // WORD_BYTES
    remaining = byte_len // WORD_BYTES
    out = []
    while remaining:
        in_stripe = stripe - word % stripe
        take = min(in_stripe, remaining)
        stripe_idx = word // stripe
        total_sg = amap.config.subgroups_per_group * amap.config.groups
        out.append((stripe_idx % total_sg, take))
        word += take
        remaining -= take
    return out


def iter_words(amap: AddressMap) -> Iterator[int]:
    """Every word-aligned byte address of the L1, in order."""
    return iter(range(0, amap.l1_bytes, WORD_BYTES))
