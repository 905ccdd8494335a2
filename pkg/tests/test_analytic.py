import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from xbarscale.analytic import (
    AmatEstimate,
    ArbiterSpec,
    QueueModel,
    ScalingParams,
    arbiter_latency_n_to_1,
    arbiter_latency_n_to_k,
    binomial_pmf,
    build_stage_chains,
    cluster_amat,
    cluster_throughput,
    kung_feasible,
    matmul_arithmetic_intensity,
    propagate_injection,
)
from xbarscale.topology import HierarchyConfig, LatencyLadder, zero_load_latency

FLAGSHIP = HierarchyConfig(8, 8, 4, 4)
FLAT = HierarchyConfig(1024)


def pmf_sum_oracle(n, p):
    """Exact-rational evaluation of sum_{x>=1} (x-1) P[x] as the reference."""
    from fractions import Fraction
    q = Fraction(p)
    total = Fraction(0)
    for x in range(1, n + 1):
        total += (x - 1) * math.comb(n, x) * q**x * (1 - q)**(n - x)
    return float(total)


class TestBinomialPmf:
    def test_simple(self):
        assert binomial_pmf(2, 0.5, 1) == pytest.approx(0.5)

    def test_zero_rate(self):
        assert binomial_pmf(1000, 0.0, 0) == 1.0

    def test_large_n_stable(self):
        # direct power evaluation as the independent check
        assert binomial_pmf(1024, 1 / 4096, 0) == pytest.approx(
            (1 - 1 / 4096) ** 1024, abs=1e-12)
        assert binomial_pmf(1024, 1 / 4096, 0) == pytest.approx(0.7788, abs=1e-4)

    def test_pmf_normalizes(self):
        total = sum(binomial_pmf(64, 0.3, x) for x in range(65))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_x_out_of_range(self):
        with pytest.raises(ValueError):
            binomial_pmf(4, 0.5, 5)

    def test_huge_n(self):
        assert binomial_pmf(4096, 0.5, 2048) > 0.0


class TestNto1:
    def test_no_requests(self):
        assert arbiter_latency_n_to_1(8, 0.0) == 0.0

    def test_single_requester(self):
        assert arbiter_latency_n_to_1(1, 1.0) == 0.0

    def test_two_at_half(self):
        # PMF {0.25, 0.5, 0.25}: 0*0.5 + 1*0.25
        assert arbiter_latency_n_to_1(2, 0.5) == pytest.approx(0.25)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 16, 33, 64])
    @pytest.mark.parametrize("p", [0.0, 0.05, 0.3, 0.5, 0.9, 1.0])
    def test_closed_form_equals_pmf_sum(self, n, p):
        assert arbiter_latency_n_to_1(n, p) == pytest.approx(
            pmf_sum_oracle(n, p), abs=1e-12)

    def test_monte_carlo_single_round(self):
        # One arbitration round: x simultaneous requests pay x-1 extra cycles.
        rng = random.Random(1234)
        trials = 200_000
        for n, p in [(2, 0.5), (8, 0.3), (16, 1.0), (16, 0.7)]:
            samples = []
            for _ in range(trials // 4):
                x = sum(rng.random() < p for _ in range(n))
                samples.append(max(x - 1, 0))
            mean = sum(samples) / len(samples)
            var = sum((s - mean) ** 2 for s in samples) / (len(samples) - 1)
            sigma = math.sqrt(var / len(samples))
            assert abs(mean - arbiter_latency_n_to_1(n, p)) < 3 * sigma + 1e-9


class TestNtoK:
    def test_zero_rate(self):
        assert arbiter_latency_n_to_k(16, 4, 0.0) == 0.0

    def test_k1_reduces(self):
        assert arbiter_latency_n_to_k(2, 1, 0.5) == pytest.approx(0.25)

    def test_flat_flagship_point(self):
        assert arbiter_latency_n_to_k(1024, 4096, 1.0) == pytest.approx(
            0.130, abs=0.001)

    @pytest.mark.parametrize("n", [1, 2, 7, 16, 64, 256])
    @pytest.mark.parametrize("k", [1, 2, 3, 16, 64, 255, 256])
    @pytest.mark.parametrize("p", [0.1, 0.5, 1.0])
    def test_recursion_equals_geometric(self, n, k, p):
        rec = arbiter_latency_n_to_k(n, k, p, force_recursion=True)
        per_output = p / k
        e1 = arbiter_latency_n_to_1(n, per_output)
        p0 = (1 - per_output) ** n
        geometric = 0.0 if e1 == 0 else e1 * (1 - p0 ** k) / (1 - p0)
        assert rec == pytest.approx(geometric, abs=1e-9)

    @given(st.integers(1, 512), st.integers(1, 512),
           st.floats(0.0, 1.0, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_p_and_shape(self, n, k, p):
        e = arbiter_latency_n_to_k(n, k, p)
        assert e >= 0.0
        if p < 1.0:
            assert arbiter_latency_n_to_k(n, k, min(1.0, p + 0.1)) >= e - 1e-12
        assert arbiter_latency_n_to_k(n + 1, k, p) >= e - 1e-12
        assert arbiter_latency_n_to_k(n, k + 1, p) <= e + 1e-12


class TestPropagation:
    def test_zero(self):
        assert propagate_injection(8, 8, 0.0) == 0.0

    def test_saturated_8x8(self):
        assert propagate_injection(8, 8, 1.0) == pytest.approx(
            1 - (7 / 8) ** 8, abs=1e-12)
        assert propagate_injection(8, 8, 1.0) == pytest.approx(0.6564, abs=1e-4)

    def test_passthrough(self):
        for p in (0.1, 0.5, 1.0):
            assert propagate_injection(1, 1, p) == pytest.approx(p)


class TestClusterAmat:
    def test_flat_flagship(self):
        lad = LatencyLadder((1,))
        est = cluster_amat(FLAT, lad, 1.0)
        assert est.amat == pytest.approx(1.130, abs=0.005)
        assert est.throughput == pytest.approx(0.885, abs=0.005)
        assert est.converged

    def test_hierarchical_flagship_band(self):
        lad = LatencyLadder((1, 3, 5, 7))
        est = cluster_amat(FLAGSHIP, lad, 1.0)
        assert est.amat == pytest.approx(9.198, rel=0.15)

    def test_low_rate_limits_to_zero_load(self):
        lad = LatencyLadder((1, 3, 5, 7))
        est = cluster_amat(FLAGSHIP, lad, 1e-9)
        assert est.amat == pytest.approx(
            zero_load_latency(FLAGSHIP, lad), abs=1e-6)

    @pytest.mark.parametrize("cfg", [FLAT, FLAGSHIP, HierarchyConfig(4, 16, 1, 16)])
    def test_amat_at_least_zero_load_and_monotone(self, cfg):
        lad = LatencyLadder.default_for(cfg)
        zl = zero_load_latency(cfg, lad)
        prev = zl
        for p in (0.1, 0.3, 0.6, 1.0):
            est = cluster_amat(cfg, lad, p)
            assert est.amat >= zl - 1e-12
            assert est.amat >= prev - 1e-9
            prev = est.amat

    def test_class_probabilities_sum_to_one(self):
        est = cluster_amat(FLAGSHIP, LatencyLadder((1, 3, 5, 7)), 1.0)
        assert sum(est.class_probabilities) == pytest.approx(1.0)

    def test_rejects_bad_p(self):
        with pytest.raises(ValueError):
            cluster_amat(FLAT, LatencyLadder((1,)), 0.0)

    def test_stage_chains_shape(self):
        chains = build_stage_chains(FLAGSHIP, LatencyLadder((1, 3, 5, 7)), 1.0)
        assert len(chains) == 4
        assert len(chains[0].stages) == 1          # local: bank stage only
        assert all(len(c.stages) == 2 for c in chains[1:])
        # remote-group boundary spans the source group's PEs x target tiles
        assert (chains[3].stages[0].n, chains[3].stages[0].k) == (256, 32)


class TestClusterThroughput:
    def test_flat(self):
        got = cluster_throughput(FLAT, LatencyLadder((1,)))
        assert got == pytest.approx(0.885, abs=0.005)

    def test_flagship_band(self):
        got = cluster_throughput(FLAGSHIP, LatencyLadder((1, 3, 5, 7)))
        assert got == pytest.approx(0.230, rel=0.15)

    def test_single_pe(self):
        got = cluster_throughput(HierarchyConfig(1), LatencyLadder((1,)))
        assert got == pytest.approx(1.0)

    def test_bottleneck_mode_not_above_weighted_flagship(self):
        lad = LatencyLadder((1, 3, 5, 7))
        weighted = cluster_throughput(FLAGSHIP, lad, mode="weighted")
        bottleneck = cluster_throughput(FLAGSHIP, lad, mode="bottleneck")
        assert bottleneck <= weighted

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            cluster_throughput(FLAT, LatencyLadder((1,)), mode="median")


class TestQueueModel:
    def test_vanishes_at_zero_load(self):
        qm = QueueModel()
        stage = ArbiterSpec(16, 4, 0.0)
        assert qm.effective_rate(stage, 3) == 0.0

    def test_class_zero_untouched(self):
        qm = QueueModel()
        stage = ArbiterSpec(16, 4, 0.5)
        assert qm.effective_rate(stage, 0) == 0.5

    def test_deeper_classes_push_harder(self):
        qm = QueueModel()
        stage = ArbiterSpec(32, 8, 0.25)
        rates = [qm.effective_rate(stage, d) for d in (1, 2, 3)]
        assert rates[0] < rates[1] < rates[2] <= 1.0


class TestScaling:
    def test_matmul_intensity_point(self):
        assert matmul_arithmetic_intensity(3 * 96 * 96) == pytest.approx(32.0)

    def test_intensity_scales_sqrt(self):
        w = 3 * 64 * 64
        assert matmul_arithmetic_intensity(4 * w) == pytest.approx(
            2 * matmul_arithmetic_intensity(w))

    def test_tiny_tile(self):
        assert matmul_arithmetic_intensity(3) == pytest.approx(1 / 3)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            matmul_arithmetic_intensity(0)

    def test_trivially_feasible(self):
        params = ScalingParams(0.0, 1e6, 1e9, 10.0, 64, 0.8)
        rep = kung_feasible(params)
        assert rep.feasible and rep.slack_cycles > 0

    def test_boundary_is_infeasible(self):
        # lhs == rhs exactly: L=0, W/BW = 10, AI*W/(N*U) = 10
        params = ScalingParams(0.0, 100.0, 10.0, 1.0, 10, 1.0, 1.0)
        rep = kung_feasible(params)
        assert not rep.feasible
        assert rep.slack_cycles == pytest.approx(0.0)

    def test_feasible_stays_feasible_under_scaling(self):
        # W, BW, N_PEs scale with S; AI scales as sqrt(S) via the W term.
        base = ScalingParams(100.0, 3 * 96 * 96, 8.0,
                             matmul_arithmetic_intensity(3 * 96 * 96), 64, 0.8)
        if kung_feasible(base).feasible:
            for s in (2.0, 4.0, 8.0):
                scaled = ScalingParams(
                    base.main_memory_latency, base.tile_words,
                    base.bandwidth_words_per_cycle, base.arithmetic_intensity,
                    base.n_pes, base.utilization, scaling_factor=s)
                assert kung_feasible(scaled).feasible

    def test_slack_increases_with_s_on_grid(self):
        for w, bw, npes in [(3 * 32 * 32, 4.0, 64), (3 * 96 * 96, 16.0, 256),
                            (3 * 128 * 128, 64.0, 1024)]:
            ai = matmul_arithmetic_intensity(w)
            slacks = []
            for s in (1.0, 2.0, 4.0, 8.0, 16.0):
                rep = kung_feasible(ScalingParams(200.0, w, bw, ai, npes, 0.8, s))
                slacks.append(rep.slack_cycles)
            assert all(b > a for a, b in zip(slacks, slacks[1:]))


class TestPublishedTableBands:
    """Spot checks against the design-analysis table; the full sweep lives in
    the acceptance suite."""

    @pytest.mark.parametrize("cfg,amat,tput", [
        (HierarchyConfig(4, 256), 6.081, 0.245),
        (HierarchyConfig(16, 64), 18.077, 0.062),
        (HierarchyConfig(16, 16, 1, 4), 8.612, 0.178),
        (HierarchyConfig(16, 4, 4, 4), 11.049, 0.159),
    ])
    def test_rows_in_band(self, cfg, amat, tput):
        lad = LatencyLadder.default_for(cfg)
        est = cluster_amat(cfg, lad, 1.0)
        assert est.amat == pytest.approx(amat, rel=0.15)
        assert est.throughput == pytest.approx(tput, rel=0.15)

    def test_three_level_family_ordering(self):
        amats, tputs = [], []
        for alpha, beta in ((4, 16), (8, 8), (16, 4)):
            cfg = HierarchyConfig(alpha, beta, 4, 4)
            lad = LatencyLadder((1, 3, 5, 7))
            est = cluster_amat(cfg, lad, 1.0)
            amats.append(est.amat)
            tputs.append(est.throughput)
        assert amats[0] < amats[1] < amats[2]
        assert tputs[0] > tputs[1] > tputs[2]
