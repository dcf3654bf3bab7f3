"""Eight-port homodyne quadrature processing and a synthetic stream generator.

Conventions
-----------
Both channels are normalised so that a vacuum input has variance 1/2. With
LO phases phi1 and phi2 = phi1 + pi/2, a record (x1, x2) is one sample of
alpha = x1 + i x2 drawn from the Husimi function (the 3 dB split adds one
vacuum unit). Postselected points are therefore reported as quadratures
(q, p) = sqrt(2) (x1, x2), so that alpha = (q + i p)/sqrt(2) and [q, p] = i.
Histogram densities are per unit dq dp, i.e. Q_alpha / 2.
"""

import csv
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import container
from .errors import (
    DomainError,
    HistogramOverflowError,
    InsufficientDataError,
    InsufficientPostselectionError,
    PathologicalCorrelationError,
)

RECORD_INTERVAL_PS = 1e6 / 76.0  # 76 MHz pulse train
QUADRATURE_SCALE = math.sqrt(2.0)
DEFAULT_MARGIN = 0.025
DEFAULT_SMOOTHING = 2048
MIN_RECORDS = 1000
MIN_WINDOW_POINTS = 1000
STREAM_KIND = "quadrature-stream"


@dataclass
class QuadratureStream:
    """Two-channel quadrature records with timestamps ``t`` (ps).

    ``lo_scale`` multiplies the raw channels to reach the vacuum-variance-1/2
    normalisation; it is 1 once the stream has been preprocessed.
    """

    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    lo_scale: float = 1.0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x1 = np.asarray(self.x1, dtype=float)
        self.x2 = np.asarray(self.x2, dtype=float)
        if not (self.t.shape == self.x1.shape == self.x2.shape) or self.t.ndim != 1:
            raise DomainError("t, x1, x2 must be 1-D arrays of equal length")
        if self.t.size > 1 and np.any(np.diff(self.t) < 0):
            raise DomainError("timestamps must be nondecreasing")
        if not self.lo_scale > 0:
            raise DomainError("lo_scale must be positive")

    def __len__(self):
        return self.t.size

    @property
    def records(self):
        return np.column_stack([self.t, self.x1, self.x2])

    def slice(self, sl):
        return QuadratureStream(self.t[sl], self.x1[sl], self.x2[sl], self.lo_scale)


# ---------------------------------------------------------------------------
# preprocessing

def lag1_autocorrelation(x):
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    den = float(np.dot(d, d))
    if den == 0:
        return 0.0
    return float(np.dot(d[1:], d[:-1]) / den)


def _whiten(x, c):
    if c == 0:
        return x.copy()
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = (x[1:] - c * x[:-1]) / math.sqrt(1.0 - c * c)
    return out


def preprocess(stream, max_correlation=0.9):
    """Scale by ``lo_scale`` and remove lag-1 correlations channel by channel.

    Each channel becomes (x_i - c x_{i-1}) / sqrt(1 - c^2) with c its
    empirical lag-1 autocorrelation; the first record is kept as is. This
    linear whitening stands in for a dedicated decorrelation algorithm and
    can be swapped without touching later stages.
    """
    if len(stream) < MIN_RECORDS:
        raise InsufficientDataError(f"{len(stream)} records; preprocessing needs >= {MIN_RECORDS}")
    out = []
    for x in (stream.x1, stream.x2):
        x = x * stream.lo_scale
        c = lag1_autocorrelation(x)
        if abs(c) > max_correlation:
            raise PathologicalCorrelationError(f"lag-1 autocorrelation {c:.3f} exceeds {max_correlation}")
        out.append(_whiten(x, c))
    return QuadratureStream(stream.t.copy(), out[0], out[1], 1.0)


# ---------------------------------------------------------------------------
# postselection

class PostselectedPoints(NamedTuple):
    q: np.ndarray
    p: np.ndarray
    t: np.ndarray
    index: np.ndarray
    retention: float


def postselect_orthogonal(stream, margin=DEFAULT_MARGIN, smoothing=DEFAULT_SMOOTHING,
                          reference="product", scale=QUADRATURE_SCALE, min_retention=1e-3):
    """Keep records taken while the two channels measured orthogonal quadratures.

    The criterion is |m_i| <= margin * (max m - min m) where m is the
    channel product x1*x2 averaged over a centred moving window of
    ``smoothing`` records (1 = per-record product). With
    ``reference="channels"`` the tolerance is margin * ptp(x1) * ptp(x2)
    instead. Kept pairs are returned as (q, p) = scale * (x1, x2).
    """
    if not margin >= 0:
        raise DomainError("margin must be >= 0")
    n = len(stream)
    if n == 0:
        raise InsufficientPostselectionError("empty stream")
    prod = stream.x1 * stream.x2
    if smoothing > 1:
        prod = uniform_filter1d(prod, size=int(smoothing), mode="nearest")
    if reference == "product":
        tol = margin * (prod.max() - prod.min())
    elif reference == "channels":
        tol = margin * np.ptp(stream.x1) * np.ptp(stream.x2)
    else:
        raise DomainError(f"unknown postselection reference {reference!r}")
    keep = np.flatnonzero(np.abs(prod) <= tol)
    retention = keep.size / n
    if retention < min_retention:
        raise InsufficientPostselectionError(
            f"retention {retention:.2e} below {min_retention:.0e} ({keep.size} of {n} records)"
        )
    return PostselectedPoints(scale * stream.x1[keep], scale * stream.x2[keep], stream.t[keep], keep, retention)


# ---------------------------------------------------------------------------
# histogram

@dataclass
class HusimiHistogram:
    """Uniformly binned (q, p) samples.

    ``total_count`` is the number of points inside the extent, so
    ``counts.sum() == total_count``. ``probability`` is counts/total,
    ``density`` divides by the bin area (per dq dp), and the standard errors
    follow the binomial formula sqrt(P (1 - P) / total) on the bin
    probability P, converted to density units.
    """

    q_edges: np.ndarray
    p_edges: np.ndarray
    counts: np.ndarray
    total_count: int
    overflow: int = 0

    @property
    def bin_area(self):
        return float((self.q_edges[1] - self.q_edges[0]) * (self.p_edges[1] - self.p_edges[0]))

    @property
    def q_centers(self):
        return 0.5 * (self.q_edges[1:] + self.q_edges[:-1])

    @property
    def p_centers(self):
        return 0.5 * (self.p_edges[1:] + self.p_edges[:-1])

    def centers(self):
        return np.meshgrid(self.q_centers, self.p_centers, indexing="ij")

    @property
    def probability(self):
        return self.counts / self.total_count

    @property
    def sigma_probability(self):
        pr = self.probability
        return np.sqrt(pr * (1.0 - pr) / self.total_count)

    @property
    def density(self):
        return self.probability / self.bin_area

    @property
    def sigma_density(self):
        return self.sigma_probability / self.bin_area

    @property
    def occupied_bins(self):
        return int(np.count_nonzero(self.counts))


def _auto_edges(values, bin_width):
    hi = float(np.max(np.abs(values))) + bin_width
    nb = int(math.ceil(hi / bin_width))
    return bin_width * np.arange(-nb, nb + 1, dtype=float)


def build_husimi_histogram(points, bin_width=0.25, extent=None, max_overflow=0.01):
    """Histogram (q, p) points on a uniform square grid.

    ``points`` is a PostselectedPoints or a pair of arrays (q, p).
    ``extent`` is a half-width e (bins cover [-e, e] in both axes) or
    ((q_min, q_max), (p_min, p_max)); by default a symmetric range one bin
    wider than the largest |coordinate|. Points outside count as overflow;
    more than ``max_overflow`` of them is an error.
    """
    q, p = (points.q, points.p) if hasattr(points, "q") else points
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.size == 0:
        raise InsufficientDataError("no points to histogram")
    if not bin_width > 0:
        raise DomainError("bin_width must be positive")
    if q.size < 10_000:
        warnings.warn(f"only {q.size} points; histograms are noisy below 1e4", stacklevel=2)
    if extent is None:
        edges = _auto_edges(np.concatenate([q, p]), bin_width)
        q_edges = p_edges = edges
    else:
        if np.ndim(extent) == 0:
            extent = ((-extent, extent), (-extent, extent))
        (q0, q1), (p0, p1) = extent
        nq = max(1, int(round((q1 - q0) / bin_width)))
        np_ = max(1, int(round((p1 - p0) / bin_width)))
        q_edges = q0 + bin_width * np.arange(nq + 1)
        p_edges = p0 + bin_width * np.arange(np_ + 1)
    counts, _, _ = np.histogram2d(q, p, bins=[q_edges, p_edges])
    counts = counts.astype(np.int64)
    inside = int(counts.sum())
    overflow = q.size - inside
    if overflow > max_overflow * q.size:
        raise HistogramOverflowError(f"{overflow} of {q.size} points fall outside the histogram extent")
    if inside == 0:
        raise InsufficientDataError("no points inside the histogram extent")
    return HusimiHistogram(q_edges, p_edges, counts, inside, overflow)


HISTOGRAM_COLUMNS = ["q", "p", "Q", "sigma_Q"]


def write_histogram_csv(path, hist):
    """Grid export ``q,p,Q,sigma_Q`` (bin centres; density per dq dp)."""
    qc, pc = hist.centers()
    dens = hist.density
    sig = hist.sigma_density
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTOGRAM_COLUMNS)
        for i in range(qc.shape[0]):
            for j in range(qc.shape[1]):
                w.writerow([repr(float(qc[i, j])), repr(float(pc[i, j])),
                            repr(float(dens[i, j])), repr(float(sig[i, j]))])


def read_histogram_csv(path):
    """Rebuild a HusimiHistogram from its CSV export.

    The total count is recovered from the binomial error formula on any
    occupied bin, and the integer counts from probability * total.
    """
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header != HISTOGRAM_COLUMNS:
        raise ValueError(f"unexpected histogram columns {header}")
    q, p, dens, sig = data.T
    qs, ps = np.unique(q), np.unique(p)
    if qs.size * ps.size != q.size:
        raise ValueError("histogram CSV is not a full rectangular grid")
    hq = qs[1] - qs[0] if qs.size > 1 else 1.0
    hp = ps[1] - ps[0] if ps.size > 1 else hq
    area = hq * hp
    prob = (dens * area).reshape(qs.size, ps.size)
    sprob = (sig * area).reshape(qs.size, ps.size)
    occ = (prob > 0) & (prob < 1) & (sprob > 0)
    if np.any(occ):
        pr, sp = prob[occ], sprob[occ]
        total = int(round(float(np.median(pr * (1 - pr) / sp**2))))
    else:
        total = 1
    counts = np.rint(prob * total).astype(np.int64)
    q_edges = np.append(qs - 0.5 * hq, qs[-1] + 0.5 * hq)
    p_edges = np.append(ps - 0.5 * hp, ps[-1] + 0.5 * hp)
    return HusimiHistogram(q_edges, p_edges, counts, int(counts.sum()))


# ---------------------------------------------------------------------------
# time-resolved statistics

def antinormal_photon_moments(q, p):
    """(<n>, <n^2>) from Husimi samples: E|a|^2 - 1 and E|a|^4 - 3<n> - 2."""
    r2 = 0.5 * (np.asarray(q) ** 2 + np.asarray(p) ** 2)
    n1 = float(np.mean(r2)) - 1.0
    n2 = float(np.mean(r2 * r2)) - 3.0 * n1 - 2.0
    return n1, n2


class WindowStats(NamedTuple):
    t: np.ndarray
    mean_n: np.ndarray
    g2: np.ndarray
    err_mean_n: np.ndarray
    start: np.ndarray
    stop: np.ndarray


def photon_stats_timeseries(points, window_size):
    """Photon number and g2 over consecutive windows of ``window_size`` postselected points.

    A trailing partial window is dropped. Windows with <n> <= 0 get g2 = nan.
    ``start``/``stop`` index into the point arrays.
    """
    window_size = int(window_size)
    if window_size < MIN_WINDOW_POINTS:
        raise InsufficientDataError(f"window of {window_size} points; need >= {MIN_WINDOW_POINTS}")
    n_win = points.q.size // window_size
    if n_win < 1:
        raise InsufficientDataError(f"{points.q.size} points do not fill one window of {window_size}")
    t = np.empty(n_win)
    mean_n = np.empty(n_win)
    g2 = np.empty(n_win)
    err = np.empty(n_win)
    starts = np.arange(n_win) * window_size
    for k, s in enumerate(starts):
        sl = slice(s, s + window_size)
        n1, n2 = antinormal_photon_moments(points.q[sl], points.p[sl])
        t[k] = float(np.mean(points.t[sl]))
        mean_n[k] = n1
        g2[k] = (n2 - n1) / (n1 * n1) if n1 > 0 else math.nan
        r2 = 0.5 * (points.q[sl] ** 2 + points.p[sl] ** 2)
        err[k] = float(np.std(r2, ddof=1)) / math.sqrt(window_size)
    return WindowStats(t, mean_n, g2, err, starts, starts + window_size)


@dataclass(frozen=True)
class BistableSegmentation:
    threshold_n: float
    labels: np.ndarray
    runs: tuple

    def mask(self, label):
        return self.labels == label


def segment_bistable(mean_n, t=None):
    """Label each window "high" (>= (max + min)/2) or "low".

    ``runs`` lists (start, stop, label) for contiguous stretches of windows.
    """
    x = np.asarray(mean_n, dtype=float)
    if x.size < 2:
        raise InsufficientDataError("segmentation needs at least 2 windows")
    if not np.all(np.isfinite(x)):
        raise DomainError("photon-number series contains non-finite values")
    thr = (x.max() + x.min()) / 2.0
    labels = np.where(x >= thr, "high", "low")
    runs = []
    start = 0
    for i in range(1, x.size + 1):
        if i == x.size or labels[i] != labels[start]:
            runs.append((start, i, str(labels[start])))
            start = i
    return BistableSegmentation(float(thr), labels, tuple(runs))


def points_for_label(points, stats, seg, label, guard=1):
    """Postselected points belonging to windows labelled ``label``.

    The ``guard`` windows on each side of a high/low transition are left
    out: a window that straddles a switch mixes both states, and a few
    points of the bright state far out in the tail of the dim one bias its
    fit strongly.
    """
    if guard < 0:
        raise DomainError("guard must be >= 0")
    keep = np.asarray(seg.labels) == label
    for a, b, _ in seg.runs:
        if a > 0:
            keep[a:a + guard] = False
        if b < keep.size:
            keep[max(b - guard, a):b] = False
    idx = [np.arange(a, b) for a, b, k in zip(stats.start, stats.stop, keep) if k]
    if not idx:
        raise InsufficientDataError(f"no windows labelled {label!r} away from transitions")
    sel = np.concatenate(idx)
    return PostselectedPoints(points.q[sel], points.p[sel], points.t[sel], points.index[sel],
                              points.retention)


# ---------------------------------------------------------------------------
# synthetic generator

def synth_homodyne_stream(high_state, low_state=None, switching_period=None,
                          phase_coherence_time=100.0, sweep_period=2**19, n_samples=10**6,
                          seed=0, record_interval=RECORD_INTERVAL_PS, lo_scale=1.0,
                          chunk=2**20):
    """Simulated eight-port homodyne records.

    Parameters
    ----------
    high_state, low_state : DisplacedThermalState
        Emitted state; with ``low_state`` given the source alternates between
        the two every half ``switching_period`` (ps), starting high.
    phase_coherence_time : float or None
        Coherence time (ps) of the Wiener phase diffusion of the signal;
        None disables diffusion.
    sweep_period : int or None
        Records per full 2 pi ramp of the relative LO phase; None keeps the
        channels exactly orthogonal.
    lo_scale : float
        Raw channels are emitted divided by this factor.

    Notes
    -----
    Channel k measures Re(exp(-i phi_k) b_k) of the two beam-splitter
    outputs b_1,2 = alpha_W +- v, where alpha_W is a Wigner sample of the
    signal and v of the vacuum entering the open port. At phi_2 = phi_1 + pi/2
    the pair x1 + i x2 is an exact Husimi sample. Records are drawn in
    fixed-size chunks from one SFC64 stream, so the output depends only on
    the arguments.
    """
    n_samples = int(n_samples)
    if n_samples < 1:
        raise DomainError("n_samples must be positive")
    if low_state is not None and not (switching_period and switching_period > 0):
        raise DomainError("a switching generator needs a positive switching_period")
    rng = np.random.Generator(np.random.SFC64(np.random.SeedSequence(int(seed))))
    t = np.arange(n_samples, dtype=float) * record_interval
    x1 = np.empty(n_samples)
    x2 = np.empty(n_samples)
    if phase_coherence_time:
        step_sd = math.sqrt(2.0 * record_interval / phase_coherence_time)
    else:
        step_sd = 0.0
    theta = 0.0
    for s in range(0, n_samples, chunk):
        e = min(s + chunk, n_samples)
        m = e - s
        z = rng.standard_normal((5, m))
        if step_sd:
            th = theta + step_sd * np.cumsum(z[0])
            theta = float(th[-1])
        else:
            th = np.zeros(m)
        if low_state is None:
            a0 = np.full(m, high_state.alpha0)
            nb = np.full(m, high_state.nbar)
        else:
            high = np.mod(t[s:e], switching_period) < 0.5 * switching_period
            a0 = np.where(high, high_state.alpha0, low_state.alpha0)
            nb = np.where(high, high_state.nbar, low_state.nbar)
        sig = np.sqrt(0.5 * (nb + 0.5))
        alpha_w = a0 * np.exp(1j * th) + sig * (z[1] + 1j * z[2])
        vac = 0.5 * (z[3] + 1j * z[4])
        idx = np.arange(s, e)
        rel = 0.5 * math.pi
        if sweep_period:
            rel = rel + 2.0 * math.pi * np.mod(idx, sweep_period) / sweep_period
        x1[s:e] = (alpha_w + vac).real
        x2[s:e] = (np.exp(-1j * rel) * (alpha_w - vac)).real
    return QuadratureStream(t, x1 / lo_scale, x2 / lo_scale, lo_scale)


# ---------------------------------------------------------------------------
# stream I/O

STREAM_COLUMNS = ["t", "x1", "x2"]


def write_stream_csv(path, stream):
    """CSV with header ``t,x1,x2``: t in ps, channels in raw units (multiply by lo_scale)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# lo_scale={float(stream.lo_scale)!r}\n")
        fh.write(",".join(STREAM_COLUMNS) + "\n")
        np.savetxt(fh, stream.records, delimiter=",", fmt="%.17g")


def read_stream_csv(path):
    lo_scale = 1.0
    with open(path) as fh:
        first = fh.readline().strip()
        if first.startswith("#"):
            key, _, val = first[1:].strip().partition("=")
            if key.strip() == "lo_scale":
                lo_scale = float(val)
            header = fh.readline().strip()
        else:
            header = first
        if header.split(",") != STREAM_COLUMNS:
            raise ValueError(f"expected header 't,x1,x2', found {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return QuadratureStream(data[:, 0], data[:, 1], data[:, 2], lo_scale)


def write_stream_binary(path, stream):
    container.write_container(
        path, STREAM_KIND,
        {"lo_scale": stream.lo_scale, "units": {"t": "ps", "x1": "raw", "x2": "raw"}},
        {"t": stream.t, "x1": stream.x1, "x2": stream.x2},
    )


def read_stream_binary(path):
    header, arr = container.read_container(path, expect_kind=STREAM_KIND)
    return QuadratureStream(arr["t"], arr["x1"], arr["x2"], header["meta"]["lo_scale"])


def read_stream(path):
    """Read a stream from CSV (``.csv``) or the binary container (anything else)."""
    path = str(path)
    if path.lower().endswith(".csv"):
        return read_stream_csv(path)
    return read_stream_binary(path)


def write_stream(path, stream):
    if str(path).lower().endswith(".csv"):
        write_stream_csv(path, stream)
    else:
        write_stream_binary(path, stream)
