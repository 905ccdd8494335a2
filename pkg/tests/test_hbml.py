import pytest

from xbarscale.addrmap import WORD_BYTES, AddressMap
from xbarscale.hbml import (
    Burst,
    DmaDescriptor,
    DmaSubTask,
    HbmConfig,
    TransferError,
    bandwidth_matrix,
    dma_split,
    link_ceiling,
    run_transfer,
    transfer_scenario,
)
from xbarscale.topology import HierarchyConfig

FLAGSHIP = HierarchyConfig(8, 8, 4, 4)
MIB = 1024 * 1024


def flagship_map(seq=512 * 1024):
    return AddressMap(FLAGSHIP, seq_region_bytes=seq)


def hbm(mhz=900.0, rate=3.6, **kw):
    return HbmConfig(clock_hz=mhz * 1e6, pin_rate_gbps=rate, **kw)


class TestConfig:
    @pytest.mark.parametrize("rate,peak", [(2.8, 716.8), (3.2, 819.2), (3.6, 921.6)])
    def test_aggregate_peaks(self, rate, peak):
        cfg = hbm(rate=rate)
        assert cfg.peak_bytes_per_sec == pytest.approx(peak * 1e9)

    def test_unknown_rate_rejected(self):
        with pytest.raises(ValueError):
            hbm(rate=4.0)

    @pytest.mark.parametrize("mhz,ceiling", [(900, 921.6), (500, 512.0)])
    def test_link_ceiling(self, mhz, ceiling):
        assert link_ceiling(hbm(mhz=mhz)) == pytest.approx(ceiling * 1e9)

    def test_zero_masters(self):
        assert link_ceiling(hbm(), masters=0) == 0.0


class TestDmaSplit:
    def test_full_interleaved_region(self):
        amap = flagship_map(seq=0)
        desc = DmaDescriptor(0, 0, 4 * MIB)
        tasks = dma_split(desc, amap, hbm())
        assert len(tasks) == 16
        assert all(len(t.bursts) == 256 for t in tasks)
        assert all(b.words == 256 for t in tasks for b in t.bursts)
        # alignment: every burst of a subtask lives on one channel
        assert all(len({b.channel for b in t.bursts}) == 1 for t in tasks)

    def test_single_stripe(self):
        amap = flagship_map()
        desc = DmaDescriptor(amap.seq_region_bytes, 0, 1024)
        tasks = dma_split(desc, amap, hbm())
        assert len(tasks) == 1 and len(tasks[0].bursts) == 1

    def test_straddling_burst_splits(self):
        amap = flagship_map()
        desc = DmaDescriptor(amap.seq_region_bytes, 0, 1536)  # 1.5 KiB
        tasks = dma_split(desc, amap, hbm())
        bursts = [b for t in tasks for b in t.bursts]
        assert sorted(b.words for b in bursts) == [128, 256]
        assert {t.subgroup for t in tasks} == {0, 1}

    def test_misaligned_l2_splits_at_channel_boundaries(self):
        amap = flagship_map()
        desc = DmaDescriptor(amap.seq_region_bytes, 512, 2048)
        tasks = dma_split(desc, amap, hbm())
        bursts = [b for t in tasks for b in t.bursts]
        assert sum(b.words for b in bursts) == 512
        for b in bursts:
            start = b.l2_address // WORD_BYTES
            assert start // 256 == (start + b.words - 1) // 256

    def test_partition_is_exact(self):
        amap = flagship_map()
        desc = DmaDescriptor(0, 0, amap.l1_bytes)  # includes the seq region
        tasks = dma_split(desc, amap, hbm())
        assert sum(t.bytes for t in tasks) == amap.l1_bytes
        spans = [(b.l1_address, b.l1_address + b.words * WORD_BYTES)
                 for t in tasks for b in t.bursts]
        spans.sort()
        assert spans[0][0] == 0 and spans[-1][1] == amap.l1_bytes
        assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))  # no overlap

    def test_rejects_misaligned(self):
        with pytest.raises(TransferError):
            DmaDescriptor(2, 0, 1024)
        with pytest.raises(TransferError):
            DmaDescriptor(0, 0, 0)

    def test_rejects_out_of_range(self):
        amap = flagship_map()
        with pytest.raises(TransferError):
            dma_split(DmaDescriptor(0, 0, amap.l1_bytes + 4), amap, hbm())


class TestRunTransfer:
    def test_zero_length(self):
        stats = run_transfer([], hbm())
        assert stats.bytes_moved == 0
        assert stats.cycles == hbm().frontend_cost_cycles

    def test_achieved_bounded(self):
        amap = flagship_map(seq=0)
        for mhz, rate in ((500, 3.6), (900, 3.6), (1200, 2.8)):
            cfg = hbm(mhz=mhz, rate=rate)
            stats = transfer_scenario(amap, cfg, 8 * MIB)
            bound = min(link_ceiling(cfg),
                        (1 - cfg.refresh_fraction) * cfg.peak_bytes_per_sec)
            assert stats.achieved_bytes_per_sec <= bound * 1.001

    @pytest.mark.parametrize("mhz,rate", [(700, 2.8), (800, 3.2), (900, 3.6)])
    def test_near_peak_at_matched_frequency(self, mhz, rate):
        amap = flagship_map()
        stats = transfer_scenario(amap, hbm(mhz=mhz, rate=rate), 8 * MIB)
        assert stats.hbm_utilization >= 0.95

    def test_flagship_point(self):
        amap = flagship_map()
        stats = transfer_scenario(amap, hbm(900, 3.6), 8 * MIB)
        assert stats.achieved_bytes_per_sec == pytest.approx(896e9, rel=0.03)

    def test_low_frequency_link_bound(self):
        amap = flagship_map()
        for rate, published in ((2.8, 0.618), (3.6, 0.494)):
            cfg = hbm(500, rate)
            stats = transfer_scenario(amap, cfg, 8 * MIB)
            assert stats.achieved_bytes_per_sec <= link_ceiling(cfg)
            assert stats.hbm_utilization == pytest.approx(published, rel=0.15)

    def test_monotone_in_clock_and_rate(self):
        amap = flagship_map()
        prev = 0.0
        for mhz in (300, 500, 700, 900, 1100):
            got = transfer_scenario(amap, hbm(mhz, 3.6), 4 * MIB)
            assert got.achieved_bytes_per_sec >= prev - 1e6
            prev = got.achieved_bytes_per_sec
        prev = 0.0
        for rate in (2.8, 3.2, 3.6):
            got = transfer_scenario(amap, hbm(900, rate), 4 * MIB)
            assert got.achieved_bytes_per_sec >= prev
            prev = got.achieved_bytes_per_sec

    def test_refresh_fraction_costs_bandwidth(self):
        amap = flagship_map()
        lossless = hbm(900, 3.6, refresh_fraction=0.0)
        lossy = hbm(900, 3.6, refresh_fraction=0.06)
        a = transfer_scenario(amap, lossless, 4 * MIB)
        b = transfer_scenario(amap, lossy, 4 * MIB)
        assert a.achieved_bytes_per_sec > b.achieved_bytes_per_sec

    def test_channel_conflicts_slow_transfer(self):
        # two subtasks pinned to one channel move half as fast as two on
        # distinct channels
        def task(sg, ch):
            return DmaSubTask(sg, [Burst(0, 0, 256, ch) for _ in range(64)])
        cfg = hbm(900, 3.6)
        shared = run_transfer([task(0, 0), task(1, 0)], cfg)
        split = run_transfer([task(0, 0), task(1, 1)], cfg)
        assert shared.cycles > 1.8 * (split.cycles - cfg.frontend_cost_cycles)


class TestBandwidthMatrix:
    def test_grid_shape_and_content(self):
        amap = flagship_map()
        rows = bandwidth_matrix(amap, [500, 900], [2.8, 3.6], 2 * MIB)
        assert len(rows) == 4
        assert {r["clock_mhz"] for r in rows} == {500, 900}
        assert all(r["achieved_gbps"] > 0 for r in rows)
