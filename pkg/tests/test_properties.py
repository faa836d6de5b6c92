import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fsta_snn.analysis import OpCounts, energy, firing_rate, spectrum_report
from fsta_snn.frequency import Band, band_energy, center_spectrum, dct2d, dft2d, idft2d, quadrant_swap
from fsta_snn.fsta import FstaConfig, FstaModule, SpatialAttention, fsta_forward, sa_forward
from fsta_snn.neuron import LifParams, lif_sequence

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def images(min_side=1, max_side=10):
    return hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=min_side, max_side=max_side),
                      elements=finite)


def spikes(dims=5, max_side=5):
    return hnp.arrays(np.uint8, hnp.array_shapes(min_dims=dims, max_dims=dims, min_side=1, max_side=max_side),
                      elements=st.integers(0, 1))


@given(images())
def test_parseval(x):
    X = dft2d(x)
    assert np.isclose(np.sum(np.abs(X) ** 2), x.size * np.sum(x ** 2), rtol=1e-9, atol=1e-9)


@given(images())
def test_conjugate_symmetry(x):
    X = dft2d(x)
    m, n = x.shape
    flipped = X[(-np.arange(m)) % m][:, (-np.arange(n)) % n]
    np.testing.assert_allclose(X, np.conj(flipped), atol=1e-8 * max(1.0, np.abs(x).sum()))


@given(images())
def test_inverse(x):
    np.testing.assert_allclose(idft2d(dft2d(x)).real, x, atol=1e-9 * max(1.0, np.abs(x).max()))


@given(images())
def test_gap_identity(x):
    assert np.isclose(dct2d(x)[0, 0], x.mean() * x.size, rtol=1e-10, atol=1e-9)


@given(images(min_side=2))
def test_band_fractions_in_unit_interval(x):
    spec = center_spectrum(dft2d(x))
    for b in range(3):
        for band in (Band.horizontal_axis(b), Band.vertical_axis(b)):
            assert 0.0 <= band_energy(spec, band) <= 1.0 + 1e-12


@given(images())
def test_centering_moves_dc_to_center(x):
    mag = np.abs(dft2d(x))
    m, n = x.shape
    assert quadrant_swap(mag)[m // 2, n // 2] == mag[0, 0]


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=finite))
def test_lif_output_is_binary(x):
    s = lif_sequence(x, LifParams()).data
    assert s.shape == x.shape and set(np.unique(s)) <= {0.0, 1.0}


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.floats(-5, 0.999)))
def test_lif_silent_below_threshold_input(x):
    # With I < v_th the membrane never reaches threshold from rest.
    assert not lif_sequence(x, LifParams()).data.any()


@given(spikes(dims=3))
def test_firing_rate_bounds(s):
    stats = firing_rate({"a": s, "b": 1 - s})
    assert 0 <= stats.rates[0] <= 1
    assert stats.rates[0] + stats.rates[1] == 1.0
    assert stats.network_rate == 0.5


@given(spikes())
def test_probability_maps_in_unit_interval(s):
    for e in spectrum_report({"a": s}).entries:
        assert e.probability.min() >= 0 and e.probability.max() <= 1


@given(st.floats(0, 1e12), st.floats(0, 1e12), st.integers(1, 8))
def test_energy_linear(acs, macs, k):
    assert np.isclose(energy(OpCounts(k * acs, k * macs)), k * energy(OpCounts(acs, macs)), rtol=1e-12)


@given(spikes(dims=4, max_side=6), st.sampled_from([1, 3, 5]), st.sampled_from(["serial", "parallel"]))
def test_fsta_keeps_shape_and_silence(x, k, mode):
    t = x.shape[0]
    m = FstaModule(t, FstaConfig(k, mode), np.random.default_rng(0))
    y = fsta_forward(m, x.astype(np.float64)).data
    assert y.shape == x.shape
    assert np.all(y[x == 0] == 0)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 7), st.integers(1, 7)),
                  elements=finite), st.sampled_from([1, 3, 5, 7]))
def test_sa_preserves_extent(x, k):
    assert sa_forward(SpatialAttention(k), x).shape == x.shape
