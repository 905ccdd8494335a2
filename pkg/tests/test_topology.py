import math

import pytest
from hypothesis import given, strategies as st

from xbarscale.topology import (
    ConfigError,
    CrossbarInstance,
    HierarchyConfig,
    LatencyLadder,
    LevelBounds,
    bank_population,
    complexity_metrics,
    enumerate_hierarchies,
    validate,
    zero_load_latency,
)

FLAGSHIP = HierarchyConfig(8, 8, 4, 4)
FLAT = HierarchyConfig(1024)


def pow2_configs():
    exps = st.integers(min_value=0, max_value=5)
    return st.builds(
        lambda a, b, g, d, bf: HierarchyConfig(2**a, 2**b, 2**g, 2**d, 2**bf),
        exps, exps, exps, exps, st.integers(min_value=0, max_value=3))


class TestValidate:
    def test_flagship_totals(self):
        cfg = validate(FLAGSHIP)
        assert cfg.total_pes == 1024
        assert cfg.total_banks == 4096
        assert cfg.banks_per_tile == 32
        assert cfg.num_classes == 4

    def test_flat_totals(self):
        cfg = validate(FLAT)
        assert cfg.total_pes == 1024
        assert cfg.total_banks == 4096
        assert cfg.levels == ()
        assert cfg.num_classes == 1

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ConfigError, match="alpha"):
            validate(HierarchyConfig(6, 8, 4, 4))

    def test_zero_count_rejected(self):
        with pytest.raises(ConfigError):
            validate(HierarchyConfig(8, 0, 4, 4))

    def test_all_violations_reported(self):
        with pytest.raises(ConfigError) as err:
            validate(HierarchyConfig(6, 8, 4, 4, banking_factor=0))
        assert "alpha" in str(err.value) and "banking_factor" in str(err.value)

    def test_from_dict_roundtrip(self):
        doc = {"pes_per_tile": 8, "tiles_per_subgroup": 8,
               "subgroups_per_group": 4, "groups": 4, "banking_factor": 4}
        assert HierarchyConfig.from_dict(doc) == FLAGSHIP

    def test_names(self):
        assert FLAGSHIP.name() == "8C-8T-4SG-4G"
        assert FLAT.name() == "1024C"
        assert HierarchyConfig(4, 16, 1, 16).name() == "4C-16T-16G"


class TestLadder:
    def test_default_ladders(self):
        assert LatencyLadder.default_for(FLAT).round_trip_cycles == (1,)
        assert LatencyLadder.default_for(FLAGSHIP).round_trip_cycles == (1, 3, 5, 7)

    @pytest.mark.parametrize("bad", [(3, 5), (1, 3, 3), (1, 4), ()])
    def test_invalid_ladders(self, bad):
        with pytest.raises(ConfigError):
            LatencyLadder(bad)

    def test_pipeline_pairs(self):
        assert LatencyLadder((1, 3, 5, 9)).pipeline_pairs == (0, 1, 2, 4)


class TestBankPopulation:
    def test_flagship(self):
        # 32 banks/tile; 7*32 in the other tiles of the subgroup; 3 subgroups
        # of 8 tiles; 3 remote groups of 1024 banks.
        assert bank_population(FLAGSHIP) == [32, 224, 768, 3072]

    def test_flat(self):
        assert bank_population(FLAT) == [4096]

    def test_two_level(self):
        # 16 banks/tile, 15 sibling tiles, 15 remote groups of 256 banks.
        assert bank_population(HierarchyConfig(4, 16, 1, 16)) == [16, 240, 3840]

    @given(pow2_configs())
    def test_sums_to_total_banks(self, cfg):
        pops = bank_population(cfg)
        assert sum(pops) == cfg.total_banks
        assert all(n > 0 for n in pops)
        assert len(pops) == cfg.num_classes


class TestZeroLoad:
    @pytest.mark.parametrize("cfg,ladder,expected", [
        (FLAGSHIP, (1, 3, 5, 7), 6.359),
        (FLAT, (1,), 1.000),
        (HierarchyConfig(4, 16, 1, 16), (1, 3, 5), 4.867),
    ])
    def test_published_values(self, cfg, ladder, expected):
        zl = zero_load_latency(cfg, LatencyLadder(ladder))
        assert zl == pytest.approx(expected, abs=5e-4)

    def test_ladder_mismatch(self):
        with pytest.raises(ConfigError, match="distance classes"):
            zero_load_latency(FLAGSHIP, LatencyLadder((1, 3)))

    def test_flat_equals_first_entry(self):
        assert zero_load_latency(FLAT, LatencyLadder((1,))) == 1.0

    def test_monotone_in_ladder(self):
        base = zero_load_latency(FLAGSHIP, LatencyLadder((1, 3, 5, 7)))
        bumped = zero_load_latency(FLAGSHIP, LatencyLadder((1, 3, 5, 9)))
        assert bumped > base


class TestComplexity:
    def test_flat_single_crossbar(self):
        rep = complexity_metrics(FLAT)
        assert rep.total_complexity == 4194304  # 1024 x 4096
        assert rep.critical_complexity == 4194304
        assert rep.critical_comb_delay == 22

    def test_flagship(self):
        rep = complexity_metrics(FLAGSHIP)
        # Critical is one of the three 32x32 cross-group crossbars.
        assert rep.critical_complexity == 1024
        assert rep.critical_comb_delay == 10
        assert rep.total_complexity == 89088

    def test_flagship_breakdown_accounts_everything(self):
        rep = complexity_metrics(FLAGSHIP)
        assert sum(row["subtotal"] for row in rep.breakdown()) == rep.total_complexity
        kinds = {row["kind"] for row in rep.breakdown()}
        assert kinds == {"tile_local", "port_arbiter", "intra_subgroup",
                         "cross_subgroup", "cross_group"}

    def test_one_level_critical(self):
        rep = complexity_metrics(HierarchyConfig(4, 256))
        assert rep.critical_complexity == 65536  # 256x256 tile-tile crossbar
        assert rep.total_complexity == 87040

    def test_fractional_delay(self):
        # 16C-4T-4SG-4G: critical is the 24-input tile crossbar, 24x64.
        rep = complexity_metrics(HierarchyConfig(16, 4, 4, 4))
        assert rep.critical_complexity == 1536
        assert rep.critical_comb_delay == pytest.approx(math.log2(24) + 6)

    def test_pe_only_accounting_flag(self):
        full = complexity_metrics(FLAGSHIP)
        lean = complexity_metrics(FLAGSHIP, include_return_ports=False,
                                  include_dma_port=False)
        assert lean.total_complexity < full.total_complexity

    def test_critical_not_above_total(self):
        for cfg in (FLAT, FLAGSHIP, HierarchyConfig(4, 16, 1, 16)):
            rep = complexity_metrics(cfg)
            assert rep.critical_complexity <= rep.total_complexity

    def test_instance_delay(self):
        inst = CrossbarInstance("x", 32, 32, 1)
        assert inst.comb_delay == 10


class TestEnumerate:
    def test_one_level_bounds(self):
        cfgs = enumerate_hierarchies(
            1024, bounds=LevelBounds(pes_per_tile=(4, 8, 16), max_levels=1))
        names = {c.name() for c in cfgs}
        assert {"4C-256T", "8C-128T", "16C-64T"} <= names

    def test_three_level_bounds(self):
        cfgs = enumerate_hierarchies(
            1024, bounds=LevelBounds(subgroups_per_group=(4,), groups=(4,)))
        names = {c.name() for c in cfgs}
        assert {"4C-16T-4SG-4G", "8C-8T-4SG-4G", "16C-4T-4SG-4G"} <= names

    def test_single_pe(self):
        cfgs = enumerate_hierarchies(1)
        assert len(cfgs) == 1 and cfgs[0].name() == "1C"

    def test_contains_all_published_rows(self):
        names = {c.name() for c in enumerate_hierarchies(1024)}
        published = {
            "1024C", "4C-256T", "8C-128T", "16C-64T", "4C-16T-16G",
            "4C-32T-8G", "8C-16T-8G", "8C-32T-4G", "16C-8T-8G", "16C-16T-4G",
            "4C-16T-4SG-4G", "8C-8T-4SG-4G", "16C-4T-4SG-4G",
        }
        assert published <= names

    def test_deterministic_order_and_unique(self):
        a = enumerate_hierarchies(256)
        b = enumerate_hierarchies(256)
        assert a == b
        assert len({c.name() for c in a}) == len(a)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ConfigError):
            enumerate_hierarchies(1000)
