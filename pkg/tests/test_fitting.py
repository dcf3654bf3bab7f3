import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polcoh import fitting
from polcoh.coherence import DisplacedThermalState, coherence_value, g2_value
from polcoh.errors import FitFailure, InsufficientDataError, PropagationFailure
from polcoh.fitting import (
    FIT_COLUMNS,
    FitResult,
    analytic_fit_errors,
    fit_displaced_thermal,
    initial_guess,
    model_density,
    propagate_errors_mc,
    read_fit_csv,
    write_fit_csv,
)
from polcoh.homodyne import (
    HusimiHistogram,
    build_husimi_histogram,
    postselect_orthogonal,
    preprocess,
    synth_homodyne_stream,
)
from polcoh.observables import propagate_moment_errors


def _exact_hist(nbar, a, total=1e9, width=0.25, half=14.0, qc=0.0, pc=0.0):
    """Noise-free histogram: float counts equal to model probability * total."""
    edges = np.arange(-half, half + width / 2, width)
    c = 0.5 * (edges[1:] + edges[:-1])
    q, p = np.meshgrid(c, c, indexing="ij")
    counts = model_density(q, p, nbar, a, qc, pc) * width * width * total
    return HusimiHistogram(edges, edges.copy(), counts, total)


def _points(a, nbar, n_samples, seed=1, phase=0.0):
    s = synth_homodyne_stream(DisplacedThermalState.from_magnitudes(a, nbar, phase), n_samples=n_samples, seed=seed)
    return postselect_orthogonal(preprocess(s))


def _generator_hist(a, nbar, n_samples, seed=1, phase=0.0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return build_husimi_histogram(_points(a, nbar, n_samples, seed, phase))


@pytest.fixture(scope="module")
def paper_hist():
    # about 1.1e5 postselected points
    return _generator_hist(53.0, 1.7, 3_000_000, seed=1)


@pytest.fixture(scope="module")
def paper_fit(paper_hist):
    return propagate_errors_mc(paper_hist, fit_displaced_thermal(paper_hist), n_resamples=200, seed=0)


# ---------------------------------------------------------------------------
# model and fit

def test_model_density_normalised():
    h = _exact_hist(1.7, 53.0, half=20.0)
    assert h.probability.sum() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("nbar, a", [(1.7, 53.0), (0.5, 4.0), (3.0, 0.5), (5.0, 100.0)])
def test_fit_exact_model_recovers(nbar, a):
    h = _exact_hist(nbar, a, half=22.0)
    f = fit_displaced_thermal(h)
    assert f.converged
    assert f.nbar == pytest.approx(nbar, rel=1e-6)
    assert f.alpha0_sq == pytest.approx(a, rel=1e-6)
    assert abs(f.q_c) < 1e-6 and abs(f.p_c) < 1e-6


def test_fit_exact_model_with_offset():
    f = fit_displaced_thermal(_exact_hist(1.0, 10.0, qc=0.4, pc=-0.3))
    assert (f.q_c, f.p_c) == pytest.approx((0.4, -0.3), abs=1e-6)
    assert f.nbar == pytest.approx(1.0, rel=1e-6)


@given(st.floats(0.3, 5.0), st.floats(0.0, 60.0))
@settings(max_examples=8)
def test_fit_result_invariants(nbar, a):
    f = fit_displaced_thermal(_exact_hist(nbar, a, total=1e7, half=16.0))
    assert f.nbar >= 0 and f.alpha0_sq >= 0
    assert f.n_total == f.nbar + f.alpha0_sq
    assert f.g2 == g2_value(f.alpha0_sq, f.nbar)
    assert f.coherence_C == coherence_value(f.alpha0_sq, f.nbar)


def test_initial_guess_near_truth():
    nbar, a, qc, pc = initial_guess(_exact_hist(1.7, 53.0, half=20.0))
    assert nbar + a == pytest.approx(54.7, rel=0.01)
    assert abs(qc) < 1e-9 and abs(pc) < 1e-9


@pytest.mark.parametrize("a, nbar", [(10.0, 0.5), (100.0, 5.0), (40.0, 2.0)])
def test_generator_round_trip_1e5(a, nbar):
    h = _generator_hist(a, nbar, 3_000_000, seed=2)
    assert h.total_count > 9e4
    f = fit_displaced_thermal(h)
    assert f.nbar == pytest.approx(nbar, rel=0.05)
    assert f.alpha0_sq == pytest.approx(a, rel=0.05)
    assert abs(f.q_c) < 0.05 and abs(f.p_c) < 0.05


def test_generator_thermal_only():
    h = _generator_hist(0.0, 2.0, 400_000, seed=3)
    f = fit_displaced_thermal(h)
    assert f.alpha0_sq < 0.05
    assert f.nbar == pytest.approx(2.0, rel=0.05)


def test_fit_invariant_under_global_phase():
    f0 = fit_displaced_thermal(_generator_hist(20.0, 1.0, 1_000_000, seed=4, phase=0.0))
    f1 = fit_displaced_thermal(_generator_hist(20.0, 1.0, 1_000_000, seed=4, phase=2.1))
    assert f1.nbar == pytest.approx(f0.nbar, rel=0.05)
    assert f1.alpha0_sq == pytest.approx(f0.alpha0_sq, rel=0.02)


def test_fit_degenerate_histogram():
    rng = np.random.default_rng(0)
    q = rng.integers(0, 3, 20_000) * 0.25 + 0.1
    h = build_husimi_histogram((q, np.full_like(q, 0.1)))
    assert h.occupied_bins == 3
    with pytest.raises(InsufficientDataError):
        fit_displaced_thermal(h)


def test_fit_failure_carries_best(monkeypatch):
    real = fitting.optimize.least_squares

    def stalled(*args, **kw):
        res = real(*args, **kw)
        res.status = 0
        res.message = "stalled"
        return res

    monkeypatch.setattr(fitting.optimize, "least_squares", stalled)
    with pytest.raises(FitFailure) as info:
        fit_displaced_thermal(_exact_hist(1.0, 10.0))
    assert isinstance(info.value.best, FitResult)
    assert info.value.best.nbar == pytest.approx(1.0, rel=1e-3)


def test_fit_rejects_unknown_weights():
    with pytest.raises(ValueError):
        fit_displaced_thermal(_exact_hist(1.0, 10.0), weights="poisson")


# ---------------------------------------------------------------------------
# error propagation

def test_paper_state_recovery(paper_fit):
    assert paper_fit.nbar == pytest.approx(1.7, rel=0.05)
    assert paper_fit.alpha0_sq == pytest.approx(53.0, rel=0.02)
    assert paper_fit.ring_radius == pytest.approx(10.4, abs=0.2)


def test_mc_error_on_c_order_1e_3(paper_fit):
    assert 3e-4 < paper_fit.err_C < 3e-3
    assert abs(paper_fit.coherence_C - coherence_value(53.0, 1.7)) < 3 * paper_fit.err_C + 0.002


def test_mc_agrees_with_jacobian(paper_hist, paper_fit):
    an = analytic_fit_errors(paper_hist, paper_fit)
    for key, mc in [("nbar", paper_fit.err_nbar), ("alpha0_sq", paper_fit.err_alpha0_sq),
                    ("g2", paper_fit.err_g2), ("C", paper_fit.err_C)]:
        assert mc == pytest.approx(an[key], rel=0.5)


def test_mc_agrees_with_moment_propagation(paper_hist, paper_fit):
    pts = _points(53.0, 1.7, 3_000_000, seed=1)
    r2 = 0.5 * (pts.q**2 + pts.p**2)
    s = r2.mean() - 1.0
    v = np.mean(r2 * r2) - 3.0 * s - 2.0 - s * s
    # delta method from the sample covariance of (r2, r2^2)
    cov_m = np.cov(np.vstack([r2, r2 * r2])) / r2.size
    jac = np.array([[1.0, 0.0], [-3.0 - 2.0 * s, 1.0]])
    err = propagate_moment_errors(s, v, jac @ cov_m @ jac.T)
    mc = [paper_fit.err_nbar, paper_fit.err_alpha0_sq, paper_fit.err_g2, paper_fit.err_C]
    np.testing.assert_allclose(mc, err, rtol=0.5)


def test_mc_errors_halve_when_nu_quadruples():
    # postselection retention depends on the sweep phase, so fix nu by subsetting points
    pts = _points(20.0, 1.0, 3_000_000, seed=5)
    nu = 100_000
    assert pts.q.size >= nu
    errs = []
    for m in (nu // 4, nu):
        h = build_husimi_histogram((pts.q[:m], pts.p[:m]))
        errs.append(propagate_errors_mc(h, fit_displaced_thermal(h), n_resamples=200, seed=1))
    for name in ("err_nbar", "err_alpha0_sq", "err_C"):
        assert getattr(errs[0], name) / getattr(errs[1], name) == pytest.approx(2.0, rel=0.3)


def test_mc_zero_noise_limit():
    h = _exact_hist(1.0, 10.0, total=1e30)
    f = propagate_errors_mc(h, fit_displaced_thermal(h), n_resamples=20)
    errs = [f.err_nbar, f.err_alpha0_sq, f.err_q_c, f.err_p_c, f.err_g2, f.err_C, f.err_n_total]
    assert max(errs) < 1e-9


def test_mc_deterministic_and_thread_independent():
    h = _generator_hist(10.0, 1.0, 400_000, seed=6)
    f = fit_displaced_thermal(h)
    a = propagate_errors_mc(h, f, n_resamples=24, seed=3, threads=1)
    b = propagate_errors_mc(h, f, n_resamples=24, seed=3, threads=4)
    c = propagate_errors_mc(h, f, n_resamples=24, seed=4, threads=1)
    assert a == b
    assert a != c


def test_mc_failure_fraction(monkeypatch):
    h = _exact_hist(1.0, 10.0, total=1e5)
    f = fit_displaced_thermal(h)
    calls = iter(range(10**6))
    real = fitting._refit
    monkeypatch.setattr(fitting, "_refit", lambda *a: None if next(calls) % 10 == 0 else real(*a))
    with pytest.raises(PropagationFailure):
        propagate_errors_mc(h, f, n_resamples=20)
    with pytest.raises(ValueError):
        propagate_errors_mc(h, f, n_resamples=1)


# ---------------------------------------------------------------------------
# report

def test_fit_csv_round_trip(tmp_path, paper_fit):
    path = tmp_path / "fit.csv"
    write_fit_csv(path, [("all", paper_fit), ("low", FitResult(2.0, 0.01, chi2=1.5, converged=False))])
    lines = path.read_text().splitlines()
    assert lines[0] == ("nbar,alpha0_sq,n_total,g2,C,err_nbar,err_alpha0_sq,err_g2,err_C,chi2,converged,label")
    assert lines[0].split(",") == FIT_COLUMNS
    rows = read_fit_csv(path)
    assert [r[0] for r in rows] == ["all", "low"]
    back = rows[0][1]
    assert (back.nbar, back.alpha0_sq, back.err_C, back.chi2) == (
        paper_fit.nbar, paper_fit.alpha0_sq, paper_fit.err_C, paper_fit.chi2)
    assert not rows[1][1].converged
    write_fit_csv(tmp_path / "again.csv", rows)
    assert (tmp_path / "again.csv").read_text().splitlines()[2] == lines[2]
    assert math.isnan(rows[1][1].err_nbar)
