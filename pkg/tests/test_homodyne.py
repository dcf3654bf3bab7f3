import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from polcoh.coherence import DisplacedThermalState, g2_value
from polcoh.errors import (
    DomainError,
    HistogramOverflowError,
    InsufficientDataError,
    InsufficientPostselectionError,
    PathologicalCorrelationError,
)
from polcoh.fitting import model_density
from polcoh.homodyne import (
    HISTOGRAM_COLUMNS,
    STREAM_COLUMNS,
    PostselectedPoints,
    QuadratureStream,
    antinormal_photon_moments,
    build_husimi_histogram,
    lag1_autocorrelation,
    photon_stats_timeseries,
    points_for_label,
    postselect_orthogonal,
    preprocess,
    read_histogram_csv,
    read_stream,
    segment_bistable,
    synth_homodyne_stream,
    write_histogram_csv,
    write_stream,
)

VAC = DisplacedThermalState()


def _stream(x1, x2):
    return QuadratureStream(np.arange(len(x1), dtype=float), x1, x2)


def _husimi_points(state, n, seed=0):
    s = synth_homodyne_stream(state, phase_coherence_time=None, sweep_period=None, n_samples=n, seed=seed)
    return PostselectedPoints(math.sqrt(2) * s.x1, math.sqrt(2) * s.x2, s.t, np.arange(n), 1.0)


# ---------------------------------------------------------------------------
# stream type and preprocessing

def test_stream_rejects_decreasing_time():
    with pytest.raises(DomainError):
        QuadratureStream([0.0, 2.0, 1.0], [0, 0, 0], [0, 0, 0])
    with pytest.raises(DomainError):
        QuadratureStream([0.0, 1.0], [0.0], [0.0, 0.0])


def test_preprocess_white_noise_nearly_unchanged():
    rng = np.random.default_rng(0)
    x1, x2 = rng.standard_normal((2, 50_000))
    out = preprocess(_stream(x1, x2))
    assert abs(lag1_autocorrelation(x1)) < 0.02
    assert np.max(np.abs(out.x1 - x1)) < 0.05 * np.max(np.abs(x1))


def test_preprocess_removes_ar1():
    rng = np.random.default_rng(1)
    e = rng.standard_normal((2, 100_000))
    x = np.empty_like(e)
    x[:, 0] = e[:, 0]
    for i in range(1, e.shape[1]):
        x[:, i] = 0.3 * x[:, i - 1] + e[:, i]
    assert lag1_autocorrelation(x[0]) == pytest.approx(0.3, abs=0.01)
    out = preprocess(_stream(x[0], x[1]))
    assert abs(lag1_autocorrelation(out.x1)) < 0.02
    assert abs(lag1_autocorrelation(out.x2)) < 0.02


def test_preprocess_vacuum_variance_after_scaling():
    s = synth_homodyne_stream(VAC, n_samples=200_000, seed=3, lo_scale=7.5)
    assert np.var(s.x1) == pytest.approx(0.5 / 7.5**2, rel=0.05)
    out = preprocess(s)
    assert out.lo_scale == 1.0
    assert np.var(out.x1) == pytest.approx(0.5, rel=0.05)
    assert np.var(out.x2) == pytest.approx(0.5, rel=0.05)


def test_preprocess_errors():
    with pytest.raises(InsufficientDataError):
        preprocess(_stream(np.zeros(999), np.zeros(999)))
    ramp = np.linspace(0, 1, 5000)
    with pytest.raises(PathologicalCorrelationError):
        preprocess(_stream(ramp, ramp))


# ---------------------------------------------------------------------------
# postselection

def test_postselect_one_channel_zero_keeps_all():
    rng = np.random.default_rng(0)
    pts = postselect_orthogonal(_stream(rng.standard_normal(5000), np.zeros(5000)))
    assert pts.retention == 1.0 and pts.q.size == 5000
    np.testing.assert_array_equal(pts.p, 0.0)


def test_postselect_margin_zero_keeps_only_exact_zeros():
    rng = np.random.default_rng(0)
    x2 = rng.standard_normal(5000)
    x2[::10] = 0.0
    pts = postselect_orthogonal(_stream(rng.standard_normal(5000), x2), margin=0.0, smoothing=1)
    np.testing.assert_array_equal(pts.index, np.arange(0, 5000, 10))


def test_postselect_scales_to_quadratures():
    x1 = np.linspace(-1, 1, 2000)
    pts = postselect_orthogonal(_stream(x1, np.zeros(2000)))
    np.testing.assert_allclose(pts.q, math.sqrt(2) * x1)


def test_postselect_insufficient_retention():
    rng = np.random.default_rng(0)
    x1, x2 = rng.standard_normal((2, 5000))
    with pytest.raises(InsufficientPostselectionError):
        postselect_orthogonal(_stream(x1, x2), margin=0.0, smoothing=1)


def test_postselect_channels_reference():
    rng = np.random.default_rng(0)
    x1, x2 = rng.standard_normal((2, 20_000))
    a = postselect_orthogonal(_stream(x1, x2), smoothing=1, reference="channels")
    tol = 0.025 * np.ptp(x1) * np.ptp(x2)
    np.testing.assert_array_equal(a.index, np.flatnonzero(np.abs(x1 * x2) <= tol))
    with pytest.raises(DomainError):
        postselect_orthogonal(_stream(x1, x2), reference="nope")


def test_postselect_swept_stream_keeps_crossings():
    sweep = 2**16
    s = synth_homodyne_stream(DisplacedThermalState.from_magnitudes(50.0, 0.0), phase_coherence_time=None,
                              sweep_period=sweep, n_samples=8 * sweep, seed=4)
    # a phase-stable coherent signal is correlated by design, so skip whitening
    pts = postselect_orthogonal(s)
    # relative phase pi/2 + 2 pi (i mod sweep)/sweep is orthogonal at i mod sweep/2 == 0
    half = sweep // 2
    d = np.mod(pts.index, half)
    d = np.minimum(d, half - d)
    assert np.mean(d < 0.05 * half) > 0.9
    assert 0.001 < pts.retention < 0.2


# ---------------------------------------------------------------------------
# histogram

def test_histogram_normalisation_and_errors():
    pts = _husimi_points(DisplacedThermalState.from_magnitudes(4.0, 1.0), 20_000)
    h = build_husimi_histogram(pts, bin_width=0.3)
    assert h.counts.sum() == h.total_count == 20_000 and h.overflow == 0
    assert np.sum(h.density) * h.bin_area == pytest.approx(1.0, abs=1e-9)
    pr = h.counts / h.total_count
    np.testing.assert_allclose(h.sigma_probability, np.sqrt(pr * (1 - pr) / h.total_count), rtol=0, atol=0)
    np.testing.assert_allclose(h.sigma_density * h.bin_area, h.sigma_probability, rtol=1e-15)


def test_histogram_identical_points_single_bin():
    with pytest.warns(UserWarning):
        h = build_husimi_histogram((np.full(100, 0.4), np.full(100, -1.1)))
    assert h.occupied_bins == 1


def test_histogram_overflow():
    rng = np.random.default_rng(0)
    q, p = rng.standard_normal((2, 20_000))
    with pytest.raises(HistogramOverflowError):
        build_husimi_histogram((q, p), extent=1.0)
    h = build_husimi_histogram((q, p), extent=3.5)
    assert 0 < h.overflow <= 0.01 * q.size
    assert h.total_count == q.size - h.overflow


def test_histogram_warns_below_1e4_and_rejects_empty():
    with pytest.warns(UserWarning, match="noisy"):
        build_husimi_histogram((np.zeros(10), np.zeros(10)))
    with pytest.raises(InsufficientDataError):
        build_husimi_histogram((np.zeros(0), np.zeros(0)))


def test_histogram_vacuum_matches_gaussian():
    pts = _husimi_points(VAC, 10**6, seed=5)
    h = build_husimi_histogram(pts, bin_width=0.25, extent=5.0)
    # Q = exp(-|alpha|^2)/pi in (q, p) is a unit-variance normal per axis
    cq = np.diff(stats.norm.cdf(h.q_edges))
    cp = np.diff(stats.norm.cdf(h.p_edges))
    expect = np.outer(cq, cp) * h.total_count
    use = expect > 5
    chi2 = np.sum((h.counts[use] - expect[use]) ** 2 / expect[use]) / use.sum()
    assert chi2 == pytest.approx(1.0, abs=0.1)


def test_histogram_ring_radius():
    pts = _husimi_points(DisplacedThermalState.from_magnitudes(53.0, 1.7), 200_000, seed=6)
    r = np.hypot(pts.q, pts.p)
    # the phase is fixed here, so histogram the radius directly
    hist, edges = np.histogram(r, bins=np.arange(6.0, 15.0, 0.2))
    peak = 0.5 * (edges[np.argmax(hist)] + edges[np.argmax(hist) + 1])
    assert peak == pytest.approx(10.4, abs=0.2)


def test_histogram_phase_diffused_matches_ring_model():
    s = synth_homodyne_stream(DisplacedThermalState.from_magnitudes(53.0, 1.7), sweep_period=None,
                              n_samples=10**6, seed=2)
    h = build_husimi_histogram((math.sqrt(2) * s.x1, math.sqrt(2) * s.x2))
    qc, pc = h.centers()
    m = model_density(qc, pc, 1.7, 53.0) * h.bin_area * h.total_count
    use = m > 5
    assert np.sum((h.counts[use] - m[use]) ** 2 / m[use]) / use.sum() == pytest.approx(1.0, abs=0.1)


def test_histogram_csv_round_trip(tmp_path):
    pts = _husimi_points(DisplacedThermalState.from_magnitudes(2.0, 0.5), 20_000)
    h = build_husimi_histogram(pts)
    path = tmp_path / "h.csv"
    write_histogram_csv(path, h)
    assert path.read_text().splitlines()[0] == ",".join(HISTOGRAM_COLUMNS) == "q,p,Q,sigma_Q"
    back = read_histogram_csv(path)
    assert back.total_count == h.total_count
    np.testing.assert_array_equal(back.counts, h.counts)
    np.testing.assert_allclose(back.q_edges, h.q_edges, atol=1e-12)
    write_histogram_csv(tmp_path / "h2.csv", back)
    assert (tmp_path / "h2.csv").read_bytes() == path.read_bytes()


# ---------------------------------------------------------------------------
# photon statistics

def test_antinormal_estimators_vacuum():
    pts = _husimi_points(VAC, 200_000)
    n1, n2 = antinormal_photon_moments(pts.q, pts.p)
    r2 = 0.5 * (pts.q**2 + pts.p**2)
    assert abs(n1) < 3 * np.std(r2) / math.sqrt(r2.size)


@pytest.mark.parametrize("a, nbar, tol", [(0.0, 2.0, 0.1), (50.0, 0.0, 0.05), (20.0, 1.5, None)])
def test_antinormal_estimators_generator(a, nbar, tol):
    pts = _husimi_points(DisplacedThermalState.from_magnitudes(a, nbar), 100_000, seed=7)
    st_ = photon_stats_timeseries(pts, 100_000)
    assert abs(st_.mean_n[0] - (a + nbar)) < 3 * st_.err_mean_n[0]
    g2 = g2_value(a, nbar)
    if tol is not None:
        assert abs(st_.g2[0] - g2) < tol
    # g2 standard error by blocking into 20 sub-windows
    sub = photon_stats_timeseries(pts, 5000).g2
    assert abs(st_.g2[0] - g2) < 3 * np.std(sub, ddof=1) / math.sqrt(sub.size)


def test_timeseries_windows_and_errors():
    pts = _husimi_points(DisplacedThermalState.from_magnitudes(5.0, 1.0), 10_500)
    st_ = photon_stats_timeseries(pts, 2000)
    assert st_.mean_n.size == 5
    np.testing.assert_array_equal(st_.start, np.arange(5) * 2000)
    assert st_.t[0] == pytest.approx(np.mean(pts.t[:2000]))
    with pytest.raises(InsufficientDataError):
        photon_stats_timeseries(pts, 999)
    with pytest.raises(InsufficientDataError):
        photon_stats_timeseries(pts, 20_000)


def test_timeseries_nonpositive_mean_gives_nan_g2():
    q = np.zeros(2000)
    st_ = photon_stats_timeseries(PostselectedPoints(q, q, np.arange(2000.0), np.arange(2000), 1.0), 1000)
    assert np.all(st_.mean_n < 0) and np.all(np.isnan(st_.g2))


# ---------------------------------------------------------------------------
# segmentation

def test_segment_constant_is_high():
    seg = segment_bistable(np.full(7, 3.0))
    assert seg.threshold_n == 3.0
    assert set(seg.labels) == {"high"}
    assert seg.runs == ((0, 7, "high"),)


def test_segment_square_wave():
    x = np.tile([10.0, 10.0, 100.0, 100.0], 3)
    seg = segment_bistable(x)
    assert seg.threshold_n == 55.0
    assert list(seg.labels[:4]) == ["low", "low", "high", "high"]
    assert len(seg.runs) == 6


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50), st.floats(1e-3, 1e3))
def test_segment_threshold_exact_and_scale_equivariant(x, c):
    x = np.array(x)
    seg = segment_bistable(x)
    assert seg.threshold_n == (x.max() + x.min()) / 2
    np.testing.assert_array_equal(seg.labels == "high", x >= seg.threshold_n)
    scaled = segment_bistable(c * x)
    assert scaled.threshold_n == pytest.approx(c * seg.threshold_n, rel=1e-12, abs=1e-9)


def test_segment_errors():
    with pytest.raises(InsufficientDataError):
        segment_bistable([1.0])
    with pytest.raises(DomainError):
        segment_bistable([1.0, math.nan])


def test_points_for_label_drops_transition_windows():
    pts = _husimi_points(VAC, 8000)
    st_ = photon_stats_timeseries(pts, 1000)
    seg = segment_bistable(np.array([0.0, 5.0, 5.0, 5.0, 5.0, 0.0, 0.0, 0.0]))
    np.testing.assert_array_equal(points_for_label(pts, st_, seg, "high").index, np.arange(2000, 4000))
    np.testing.assert_array_equal(points_for_label(pts, st_, seg, "high", guard=0).index, np.arange(1000, 5000))
    np.testing.assert_array_equal(points_for_label(pts, st_, seg, "low").index, np.arange(6000, 8000))
    with pytest.raises(InsufficientDataError):
        points_for_label(pts, st_, segment_bistable(np.ones(8)), "low")
    with pytest.raises(InsufficientDataError):
        points_for_label(pts, st_, segment_bistable(np.array([0.0, 5.0] * 4)), "high")
    with pytest.raises(DomainError):
        points_for_label(pts, st_, seg, "high", guard=-1)


# ---------------------------------------------------------------------------
# generator

def test_generator_coherent_concentrates():
    a0 = 3.0 - 2.0j
    pts = _husimi_points(DisplacedThermalState(a0, 0.0), 100_000, seed=8)
    x1 = pts.q / math.sqrt(2)
    assert np.var(x1) == pytest.approx(0.5, rel=0.02)
    assert abs(np.mean(pts.q) - math.sqrt(2) * a0.real) < 3 * math.sqrt(1.0 / pts.q.size)
    assert abs(np.mean(pts.p) - math.sqrt(2) * a0.imag) < 3 * math.sqrt(1.0 / pts.q.size)


def test_generator_deterministic():
    st_ = DisplacedThermalState.from_magnitudes(10.0, 1.0)
    a = synth_homodyne_stream(st_, n_samples=50_000, seed=11)
    b = synth_homodyne_stream(st_, n_samples=50_000, seed=11)
    c = synth_homodyne_stream(st_, n_samples=50_000, seed=12)
    assert a.records.tobytes() == b.records.tobytes()
    assert not np.array_equal(a.x1, c.x1)


def test_generator_switching():
    hi = DisplacedThermalState.from_magnitudes(53.0, 1.7)
    lo = DisplacedThermalState.from_magnitudes(0.0, 2.0)
    period = 2e4 * 1e6 / 76.0
    s = synth_homodyne_stream(hi, lo, switching_period=period, n_samples=40_000, seed=1, sweep_period=None,
                              phase_coherence_time=None)
    r2 = s.x1**2 + s.x2**2
    assert r2[:10_000].mean() == pytest.approx(54.7, rel=0.05)
    assert r2[10_000:20_000].mean() == pytest.approx(3.0, rel=0.05)
    with pytest.raises(DomainError):
        synth_homodyne_stream(hi, lo, n_samples=10)


def test_stream_io_round_trip(tmp_path):
    s = synth_homodyne_stream(VAC, n_samples=3000, seed=1, lo_scale=2.5)
    for name in ("s.csv", "s.pcz"):
        write_stream(tmp_path / name, s)
        back = read_stream(tmp_path / name)
        assert back.lo_scale == 2.5
        np.testing.assert_array_equal(back.records, s.records)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# lo_scale=2.5"
    assert lines[1] == ",".join(STREAM_COLUMNS) == "t,x1,x2"
    (tmp_path / "bad.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_stream(tmp_path / "bad.csv")
