"""Access-pattern trace generators for the fabric simulator.

Each generator emits a :class:`Trace`: flat arrays of (cycle, pe, op,
address, dep) rows.  Addresses are real L1 byte addresses that decode
through the address map; ``dep`` is the row index (within the whole trace)
of an earlier access whose response must have returned before this row may
issue, or -1.  The simulator turns those edges into RAW stalls, so kernels
are modeled by their memory traffic and dependency shape, not their
arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .addrmap import WORD_BYTES, AddressMap
from .topology import HierarchyConfig, validate

OP_READ = 0
OP_WRITE = 1
_OP_NAMES = {OP_READ: "read", OP_WRITE: "write"}
_OP_CODES = {v: k for k, v in _OP_NAMES.items()}


@dataclass
class Trace:
    """Flat struct-of-arrays memory trace, one row per access."""

    cycle: np.ndarray
    pe: np.ndarray
    op: np.ndarray
    address: np.ndarray
    dep: np.ndarray

    def __len__(self) -> int:
        return len(self.cycle)

    @classmethod
    def from_rows(cls, rows) -> "Trace":
        rows = list(rows)
        return cls(
            cycle=np.array([r[0] for r in rows], dtype=np.int64),
            pe=np.array([r[1] for r in rows], dtype=np.int64),
            op=np.array([r[2] for r in rows], dtype=np.int8),
            address=np.array([r[3] for r in rows], dtype=np.int64),
            dep=np.array([r[4] for r in rows], dtype=np.int64),
        )

    @classmethod
    def single(cls, pe: int, cycle: int, address: int,
               op: int = OP_READ) -> "Trace":
        return cls.from_rows([(cycle, pe, op, address, -1)])

    @classmethod
    def empty(cls) -> "Trace":
        return cls.from_rows([])

    def save_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            for i in range(len(self)):
                fh.write(json.dumps({
                    "cycle": int(self.cycle[i]),
                    "pe": int(self.pe[i]),
                    "op": _OP_NAMES[int(self.op[i])],
                    "address": int(self.address[i]),
                    "dep": int(self.dep[i]),
                }) + "\n")

    @classmethod
    def load_jsonl(cls, path: str) -> "Trace":
        rows = []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                doc = json.loads(line)
                rows.append((doc["cycle"], doc["pe"], _OP_CODES[doc["op"]],
                             doc["address"], doc.get("dep", -1)))
        return cls.from_rows(rows)


def _interleaved_bounds(amap: AddressMap) -> tuple[int, int]:
    base = amap.seq_region_bytes
    words = amap.interleaved_region_bytes // WORD_BYTES
    return base, words


def gen_uniform(config: HierarchyConfig, p: float, cycles: int, seed: int,
                amap: AddressMap | None = None) -> Trace:
    """Each PE requests a uniformly random interleaved word w.p. p per cycle."""
    validate(config)
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    if amap is None:
        amap = AddressMap.default_for(config)
    rng = np.random.default_rng(seed)
    fire = rng.random((cycles, config.total_pes)) < p
    cyc, pes = np.nonzero(fire)
    base, words = _interleaved_bounds(amap)
    addr = base + rng.integers(0, words, size=len(cyc)) * WORD_BYTES
    return Trace(
        cycle=cyc.astype(np.int64),
        pe=pes.astype(np.int64),
        op=np.zeros(len(cyc), dtype=np.int8),
        address=addr.astype(np.int64),
        dep=np.full(len(cyc), -1, dtype=np.int64),
    )


def gen_local_tile(config: HierarchyConfig, p: float, cycles: int, seed: int,
                   amap: AddressMap | None = None) -> Trace:
    """Every access stays inside the issuing PE's tile slice (class 0)."""
    validate(config)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if amap is None:
        amap = AddressMap.default_for(config)
    if p == 0.0:
        return Trace.empty()
    rng = np.random.default_rng(seed)
    fire = rng.random((cycles, config.total_pes)) < p
    cyc, pes = np.nonzero(fire)
    slice_words = amap.seq_slice_bytes // WORD_BYTES
    tile = pes // config.pes_per_tile
    addr = (tile * slice_words
            + rng.integers(0, slice_words, size=len(cyc))) * WORD_BYTES
    return Trace(
        cycle=cyc.astype(np.int64),
        pe=pes.astype(np.int64),
        op=np.zeros(len(cyc), dtype=np.int8),
        address=addr.astype(np.int64),
        dep=np.full(len(cyc), -1, dtype=np.int64),
    )


def gen_gemm_tiled(config: HierarchyConfig, m: int, p: float = 1.0,
                   dep_distance: int = 8,
                   amap: AddressMap | None = None) -> Trace:
    """Blocked matmul traffic: 4x4 output blocks walked along the k axis.

    A, B and C live row-major in the interleaved region, so operand fetches
    spread over all banks.  Every block step loads four A cells and four B
    cells; a load depends on the load ``dep_distance`` positions earlier
    (the multiply consuming it), which bounds the outstanding loads the way
    a register-blocked inner loop would.
    """
    validate(config)
    if m % 4:
        raise ValueError(f"matrix dimension must be a multiple of 4, got {m}")
    if amap is None:
        amap = AddressMap.default_for(config)
    base, words = _interleaved_bounds(amap)
    if 3 * m * m > words:
        raise ValueError(
            f"three {m}x{m} matrices ({3 * m * m} words) exceed the "
            f"{words}-word interleaved region")
    base_a = base
    base_b = base + m * m * WORD_BYTES
    base_c = base + 2 * m * m * WORD_BYTES

    n_pe = config.total_pes
    blocks = [(bi, bj) for bi in range(m // 4) for bj in range(m // 4)]
    rows = []
    pe_clock = np.zeros(n_pe, dtype=np.int64)
    pe_loads: list[list[int]] = [[] for _ in range(n_pe)]
    step = 1.0 / p
    for blk_idx, (bi, bj) in enumerate(blocks):
        pe = blk_idx % n_pe
        for k in range(m):
            for r in range(4):
                _emit(rows, pe_clock, pe, step, OP_READ,
                      base_a + ((bi * 4 + r) * m + k) * WORD_BYTES,
                      _back_dep(pe_loads[pe], dep_distance))
                pe_loads[pe].append(len(rows) - 1)
            for c in range(4):
                _emit(rows, pe_clock, pe, step, OP_READ,
                      base_b + (k * m + bj * 4 + c) * WORD_BYTES,
                      _back_dep(pe_loads[pe], dep_distance))
                pe_loads[pe].append(len(rows) - 1)
        last_load = len(rows) - 1
        for r in range(4):
            for c in range(4):
                _emit(rows, pe_clock, pe, step, OP_WRITE,
                      base_c + ((bi * 4 + r) * m + bj * 4 + c) * WORD_BYTES,
                      last_load)
    return Trace.from_rows(rows)


def _emit(rows, pe_clock, pe, step, op, addr, dep):
    cycle = int(pe_clock[pe])
    rows.append((cycle, pe, op, addr, dep))
    pe_clock[pe] = cycle + max(1, int(round(step)))


def _back_dep(loads: list[int], distance: int) -> int:
    if len(loads) >= distance:
        return loads[-distance]
    return -1


def gen_fft_radix4(config: HierarchyConfig, n_points: int, stage: int,
                   ffts: int | None = None,
                   amap: AddressMap | None = None) -> Trace:
    """One radix-4 decimation-in-frequency stage over independent FFTs.

    At stage k of an N-point transform a butterfly reads four inputs
    N/(4*4^k) words apart (the published stride expression read as a power,
    the only reading consistent with radix-4 recursion) and writes them
    back.  Butterflies are dealt round-robin over the PEs working each FFT.
    """
    validate(config)
    if n_points < 4 or 4 ** int(math.log(n_points, 4) + 0.5) != n_points:
        raise ValueError(f"n_points must be a power of 4, got {n_points}")
    n_stages = int(round(math.log(n_points, 4)))
    if not 0 <= stage < n_stages:
        raise ValueError(f"stage must be in [0, {n_stages}), got {stage}")
    if amap is None:
        amap = AddressMap.default_for(config)
    base, words = _interleaved_bounds(amap)
    n_pe = config.total_pes
    if ffts is None:
        ffts = max(1, min(n_pe * 4 // n_points, words // n_points))
    if ffts * n_points > words:
        raise ValueError(f"{ffts} x {n_points}-point arrays exceed L1")

    span = n_points // 4 ** stage      # group size at this stage
    stride = span // 4                 # distance between the four inputs
    pes_per_fft = max(1, n_pe // ffts)
    rows = []
    pe_clock = np.zeros(n_pe, dtype=np.int64)
    for f_idx in range(ffts):
        fft_base = base + f_idx * n_points * WORD_BYTES
        pe0 = (f_idx * pes_per_fft) % n_pe
        butterflies = [(g * span + i) for g in range(4 ** stage)
                       for i in range(stride)]
        for b_idx, b in enumerate(butterflies):
            pe = (pe0 + b_idx % pes_per_fft) % n_pe
            addrs = [fft_base + (b + q * stride) * WORD_BYTES for q in range(4)]
            load_rows = []
            for a in addrs:
                cycle = int(pe_clock[pe])
                rows.append((cycle, pe, OP_READ, a, -1))
                load_rows.append(len(rows) - 1)
                pe_clock[pe] = cycle + 1
            for a in addrs:
                cycle = int(pe_clock[pe])
                rows.append((cycle, pe, OP_WRITE, a, load_rows[-1]))
                pe_clock[pe] = cycle + 1
    return Trace.from_rows(rows)


def fft_stage_stride(n_points: int, stage: int) -> int:
    """Input spacing of one butterfly at the given stage, in words."""
    return n_points // 4 ** (stage + 1)


def gen_csr_spmmadd(config: HierarchyConfig, rows_count: int,
                    nnz_per_row: int, seed: int,
                    amap: AddressMap | None = None) -> Trace:
    """Element-wise addition of two sparse matrices in CSR form.

    Per row: gather the values of both operands at random column positions
    (narrow, non-sequential reads), write the merged row, then one row
    pointer store.  Rows are dealt round-robin over the PEs.
    """
    validate(config)
    if rows_count < 1 or nnz_per_row < 0:
        raise ValueError("rows_count must be >= 1 and nnz_per_row >= 0")
    if amap is None:
        amap = AddressMap.default_for(config)
    rng = np.random.default_rng(seed)
    base, words = _interleaved_bounds(amap)
    third = words // 3
    base_a, base_b, base_c = base, base + third * WORD_BYTES, base + 2 * third * WORD_BYTES

    n_pe = config.total_pes
    out = []
    pe_clock = np.zeros(n_pe, dtype=np.int64)
    for r in range(rows_count):
        pe = r % n_pe
        gathers = []
        for src_base in (base_a, base_b):
            cols = rng.integers(0, third, size=nnz_per_row)
            for c in cols:
                cycle = int(pe_clock[pe])
                out.append((cycle, pe, OP_READ, src_base + int(c) * WORD_BYTES, -1))
                gathers.append(len(out) - 1)
                pe_clock[pe] = cycle + 1
        for j in range(2 * nnz_per_row):
            cycle = int(pe_clock[pe])
            dst = base_c + ((r * 2 * max(nnz_per_row, 1) + j) % third) * WORD_BYTES
            out.append((cycle, pe, OP_WRITE, dst, gathers[j]))
            pe_clock[pe] = cycle + 1
        # row pointer bookkeeping write
        cycle = int(pe_clock[pe])
        dst = base_c + ((r + third // 2) % third) * WORD_BYTES
        out.append((cycle, pe, OP_WRITE, dst, -1))
        pe_clock[pe] = cycle + 1
    return Trace.from_rows(out)
