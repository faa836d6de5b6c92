import numpy as np
import pytest

from fsta_snn.analysis import (EnergyModel, FiringStats, OpCounts, compare_runs, conv_fanout_map, count_ops,
                               dominant_band, energy, firing_rate, probability_maps, spectrum_report)
from fsta_snn.fsta import FstaConfig, fsta_mac_count
from fsta_snn.model import LayerSpec, NetworkSpec, build_network, insert_fsta, snn_tiny


class TestFiringRate:
    def test_hand_built(self):
        a = np.zeros((2, 4), np.uint8)
        b = np.zeros((2, 4), np.uint8)
        a[0, 1] = a[1, 3] = b[1, 0] = 1
        stats = firing_rate({"a": a, "b": b})
        assert stats.network_rate == 0.1875
        assert stats.rates == [0.25, 0.125]
        assert stats.spikes == [2, 1] and stats.slots == [8, 8]

    def test_all_zero_and_all_one(self):
        assert firing_rate({"a": np.zeros((4, 3)), "b": np.zeros(5)}).rates == [0.0, 0.0]
        stats = firing_rate({"a": np.ones((4, 3)), "b": np.ones(5)})
        assert stats.rates == [1.0, 1.0] and stats.network_rate == 1.0

    def test_non_binary(self):
        with pytest.raises(ValueError, match="non-binary"):
            firing_rate({"a": np.array([0.0, 0.5])})

    def test_empty(self):
        with pytest.raises(ValueError):
            firing_rate({})

    def test_from_network_trace(self, rng):
        net = build_network(snn_tiny(2, (1, 8, 8)))
        _, tr = net.forward(rng.normal(0, 2, size=(3, 1, 8, 8)), trace=True)
        stats = firing_rate(tr)
        assert stats.layers == list(tr.spikes)
        assert stats.slots[0] == 4 * 3 * 16 * 64

    def test_merge(self):
        a = FiringStats(["x"], [1], [4])
        merged = a.merge(FiringStats(["x"], [3], [4]))
        assert merged.rates == [0.5]
        with pytest.raises(ValueError):
            a.merge(FiringStats(["y"], [0], [1]))


class TestCompare:
    def test_identical(self):
        s = FiringStats(["a", "b"], [3, 5], [10, 10])
        r = compare_runs(s, s)
        assert r.reduction == [0.0, 0.0] and r.network_reduction == 0.0

    def test_half(self):
        r = compare_runs(FiringStats(["a"], [4], [10]), FiringStats(["a"], [2], [10]))
        assert r.reduction == [pytest.approx(0.5)]
        assert r.network_reduction == pytest.approx(0.5)

    def test_zero_base(self):
        r = compare_runs(FiringStats(["a", "b"], [0, 2], [10, 10]), FiringStats(["a", "b"], [1, 1], [10, 10]))
        assert r.reduction[0] is None and r.reduction[1] == pytest.approx(0.5)

    def test_structure_mismatch(self):
        with pytest.raises(ValueError, match="layer structure"):
            compare_runs(FiringStats(["a"], [1], [2]), FiringStats(["b"], [1], [2]))


def two_conv_net():
    layers = [LayerSpec("conv_bn_lif", 4), LayerSpec("conv_bn_lif", 4), LayerSpec("flatten"),
              LayerSpec("classifier", 2)]
    return build_network(NetworkSpec("two-conv", (1, 6, 6), 2, layers, 2))


class TestCountOps:
    def test_interior_spikes_full_fanout(self):
        net = two_conv_net()
        _, tr = net.forward(np.zeros((1, 1, 6, 6)), trace=True)
        first = np.zeros((2, 1, 4, 6, 6), np.uint8)
        coords = [(0, 0, 1, 1), (0, 1, 2, 2), (0, 3, 4, 4), (0, 2, 3, 1), (0, 0, 1, 2),
                  (1, 0, 1, 1), (1, 1, 4, 3), (1, 2, 2, 4), (1, 3, 3, 3), (1, 3, 1, 4)]
        for t, c, i, j in coords:
            first[t, 0, c, i, j] = 1
        tr.spikes["conv0.lif"] = first
        tr.spikes["conv1.lif"] = np.zeros_like(first)
        counts = count_ops(net, tr)
        assert counts.acs == 10 * 9 * 4 == 360
        assert counts.macs == 1 * 4 * 9 * 36 * 2

    def test_border_spike_has_smaller_fanout(self):
        assert conv_fanout_map(6, 6, 3, 1, 1)[0, 0] == 4
        assert conv_fanout_map(6, 6, 3, 1, 1)[2, 3] == 9

    @pytest.mark.parametrize("h,w,k,stride,pad", [(4, 4, 3, 2, 1), (7, 5, 3, 1, 1), (8, 8, 5, 2, 2), (5, 5, 1, 1, 0)])
    def test_fanout_matches_window_enumeration(self, h, w, k, stride, pad):
        want = np.zeros((h, w), int)
        for oi in range((h + 2 * pad - k) // stride + 1):
            for oj in range((w + 2 * pad - k) // stride + 1):
                for p in range(k):
                    for q in range(k):
                        i, j = oi * stride + p - pad, oj * stride + q - pad
                        if 0 <= i < h and 0 <= j < w:
                            want[i, j] += 1
        np.testing.assert_array_equal(conv_fanout_map(h, w, k, stride, pad), want)

    def test_zero_spikes(self):
        net = two_conv_net()
        _, tr = net.forward(np.zeros((3, 1, 6, 6)), trace=True)
        counts = count_ops(net, tr)
        assert counts.acs == 0
        assert counts.macs == 1 * 4 * 9 * 36 * 2 * 3
        assert counts.per_sample().macs == 1 * 4 * 9 * 36 * 2

    def test_fsta_counted_as_macs(self, rng):
        spec = snn_tiny(2, (1, 8, 8))
        x = rng.normal(size=(2, 1, 8, 8))
        base = build_network(spec, seed=0)
        fsta = build_network(insert_fsta(spec, [1], FstaConfig(3)), seed=0)
        _, tr = fsta.forward(x, trace=True)
        counts = count_ops(fsta, tr)
        assert counts.macs >= fsta_mac_count(4, 32, 4, 4, 3) * 2
        assert counts.frozen_params == 81
        _, tr_base = base.forward(x, trace=True)
        assert count_ops(base, tr_base).frozen_params == 0

    def test_mismatch(self, rng):
        net = two_conv_net()
        _, tr = build_network(snn_tiny(2, (1, 6, 6))).forward(np.zeros((1, 1, 6, 6)), trace=True)
        with pytest.raises(ValueError):
            count_ops(net, tr)


class TestEnergy:
    @pytest.mark.parametrize("acs,macs,mj", [(260.05e6, 67.26e6, 0.5434), (2.14e9, 582.87e6, 4.6072),
                                             (2.45e9, 1.05e9, 7.035)])
    def test_rows(self, acs, macs, mj):
        assert energy(OpCounts(acs, macs)) * 1e3 == pytest.approx(mj, abs=1e-4)

    def test_linear(self):
        a = energy(OpCounts(123.0, 456.0))
        assert energy(OpCounts(246.0, 912.0)) == 2 * a

    def test_custom_model(self):
        assert energy(OpCounts(1, 1), EnergyModel(1.0, 2.0)) == 3.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            OpCounts(-1, 0)
        with pytest.raises(ValueError):
            EnergyModel(0.0, 1.0)


def stripes(t=2, n=3, c=2, h=8, w=8, period=4):
    col = (np.arange(w) % period) < period // 2
    return np.broadcast_to(col, (t, n, c, h, w)).astype(np.uint8)


class TestSpectrum:
    def test_zero_trace(self):
        rep = spectrum_report({"a": np.zeros((2, 3, 2, 8, 8))})
        assert len(rep.entries) == 2
        for e in rep.entries:
            assert not e.magnitude.any()
            assert all(v == 0.0 for v in e.bands.values())

    def test_constant_half(self):
        s = np.zeros((1, 2, 1, 6, 6))
        s[:, 0] = 1
        e = spectrum_report({"a": s}).get("a", 0)
        np.testing.assert_allclose(e.probability, 0.5)
        assert np.argwhere(e.magnitude > 1e-12).tolist() == [[3, 3]]
        assert e.magnitude[3, 3] == pytest.approx(18.0)

    def test_vertical_stripes(self):
        e = spectrum_report({"a": stripes()}).get("a", 1)
        assert e.bands["horizontal_0"] >= 0.99
        assert e.bands["vertical_0"] < 0.99
        assert dominant_band(e) == "horizontal"

    def test_horizontal_stripes(self):
        e = spectrum_report({"a": stripes().swapaxes(-1, -2)}).get("a", 0)
        assert e.bands["vertical_0"] >= 0.99
        assert dominant_band(e) == "vertical"

    def test_probability_in_unit_interval(self, rng):
        s = (rng.random((3, 4, 5, 6, 7)) < 0.3).astype(np.uint8)
        maps, _ = probability_maps([{"a": s}])
        assert maps["a"].shape == (3, 6, 7)
        assert maps["a"].min() >= 0 and maps["a"].max() <= 1

    def test_batches_pool_samples(self, rng):
        s = (rng.random((2, 4, 3, 5, 5)) < 0.5).astype(np.uint8)
        one = spectrum_report({"a": s}).get("a", 1).probability
        two = spectrum_report([{"a": s[:, :1]}, {"a": s[:, 1:]}]).get("a", 1).probability
        np.testing.assert_allclose(one, two, rtol=1e-12)

    def test_per_channel(self):
        rep = spectrum_report({"a": stripes(c=3)}, per_channel=True)
        assert len(rep.entries) == 6 and rep.get("a", 0, 2).channel == 2

    def test_heterogeneous_shapes(self):
        with pytest.raises(ValueError, match="differs"):
            spectrum_report([{"a": np.zeros((2, 1, 1, 4, 4))}, {"a": np.zeros((2, 1, 1, 5, 5))}])

    def test_network_trace(self, rng):
        net = build_network(snn_tiny(2, (1, 8, 8)))
        _, tr = net.forward(rng.normal(0, 2, size=(2, 1, 8, 8)), trace=True)
        rep = spectrum_report(tr)
        assert rep.layers() == list(tr.spikes)
        assert len(rep.entries) == 6 * 4
