"""Measurement post-processing: band-pass filtering and windowed variances.

The same continuous-time Butterworth prototype is used twice: appended to the
linearized model as extra states (analytic filtered variances) and, after a
bilinear transform, applied to sampled traces.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import ConfigError
from .linearization import LinearizedSystem
from .sde import SimTrace

SUFFIX = ":bp"


@dataclass(frozen=True)
class BandpassSpec:
    f_lo: float = 0.1
    f_hi: float = 1.5
    order: int = 4

    def __post_init__(self):
        if not 0 < self.f_lo < self.f_hi:
            raise ConfigError(f"band-pass edges must satisfy 0 < f_lo < f_hi, got {self.f_lo}, {self.f_hi}")
        if self.order < 1:
            raise ConfigError("filter order must be >= 1")

    @classmethod
    def from_config(cls, section) -> "BandpassSpec":
        return cls(f_lo=section.f_lo_hz, f_hi=section.f_hi_hz, order=section.order)

    def check_rate(self, sample_dt: float) -> None:
        nyq = 0.5 / sample_dt
        if not self.f_hi < nyq:
            raise ConfigError(f"f_hi = {self.f_hi} Hz is not below the Nyquist frequency {nyq:g} Hz")

    @property
    def center_hz(self) -> float:
        return float(np.sqrt(self.f_lo * self.f_hi))

    def zpk(self):
        return scipy.signal.butter(self.order, [2 * np.pi * self.f_lo, 2 * np.pi * self.f_hi],
                                   btype="bandpass", analog=True, output="zpk")

    def sections(self) -> np.ndarray:
        """Analog second-order sections, each with unit gain at the centre frequency."""
        z, p, k = self.zpk()
        sos = scipy.signal.zpk2sos(z, p, 1.0, analog=True)
        wc = 2 * np.pi * self.center_hz
        s = 1j * wc
        total = 1.0 + 0j
        for sec in sos:
            g = np.polyval(sec[:3], s) / np.polyval(sec[3:], s)
            sec[:3] /= abs(g)
            total *= g / abs(g)
        h0 = k * np.prod(s - z) / np.prod(s - p)
        corr = h0 / total
        if abs(corr.imag) > 1e-9 * abs(corr):
            raise ConfigError("band-pass section normalization failed")
        sos[0, :3] *= corr.real
        return sos

    def realization(self):
        """Cascaded-biquad state-space quadruple ``(A_f, B_f, C_f, D_f)``."""
        mats = []
        for b0, b1, b2, _, a1, a2 in self.sections():
            a = np.array([[0.0, 1.0], [-a2, -a1]])
            b = np.array([[0.0], [1.0]])
            c = np.array([[b2 - b0 * a2, b1 - b0 * a1]])
            d = np.array([[b0]])
            mats.append((a, b, c, d))
        a, b, c, d = mats[0]
        for a2_, b2_, c2_, d2_ in mats[1:]:
            # series connection: previous output drives the next section
            n1, n2 = a.shape[0], a2_.shape[0]
            a = np.block([[a, np.zeros((n1, n2))], [b2_ @ c, a2_]])
            b = np.vstack([b, b2_ @ d])
            c = np.hstack([d2_ @ c, c2_])
            d = d2_ @ d
        return a, b, c, d

    def frequency_response(self, f_hz):
        a, b, c, d = self.realization()
        f = np.atleast_1d(np.asarray(f_hz, dtype=float))
        out = np.empty(f.shape, dtype=complex)
        eye = np.eye(a.shape[0])
        for i, fi in enumerate(f):
            out[i] = (c @ np.linalg.solve(2j * np.pi * fi * eye - a, b) + d)[0, 0]
        return out

    def digital_sos(self, fs: float) -> np.ndarray:
        """Bilinear-transformed sections at sample rate ``fs``."""
        self.check_rate(1.0 / fs)
        z, p, k = self.zpk()
        zd, pd, kd = scipy.signal.bilinear_zpk(z, p, k, fs)
        if np.any(np.abs(pd) >= 1.0):
            raise ConfigError("discretized band-pass filter is unstable")
        return scipy.signal.zpk2sos(zd, pd, kd)


@dataclass
class WindowedVariance:
    window_s: float
    stride_s: float
    starts: np.ndarray
    variances: dict[str, np.ndarray]
    filtered: bool = False

    def to_csv(self, path) -> None:
        names = list(self.variances)
        data = np.column_stack([self.starts] + [self.variances[n] for n in names])
        np.savetxt(path, data, fmt="%.12g", delimiter=",",
                   header=",".join(["window_start_s"] + names), comments="")


def filter_series(x: np.ndarray, spec: BandpassSpec, sample_dt: float) -> np.ndarray:
    """Causal, zero-initial-state band-pass filtering of one series."""
    sos = spec.digital_sos(1.0 / sample_dt)
    x = np.asarray(x, dtype=float)
    return scipy.signal.sosfilt(sos, x - x[0]) if x.size else x.copy()


def filter_trace(trace: SimTrace, spec: BandpassSpec, names=None, discard_s: float = 300.0) -> SimTrace:
    """Band-pass filter ``names`` and drop the first ``discard_s`` seconds.

    Series are referred to their first sample before filtering; since the
    filter has zero DC gain this only removes a start-up step. The discarded
    head covers the zero-state transient.
    """
    names = trace.names if names is None else list(names)
    spec.check_rate(trace.sample_dt)
    n_drop = int(round(discard_s / trace.sample_dt))
    if n_drop >= trace.t.size:
        raise ConfigError("trace is shorter than the filter warm-up")
    samples = {n: filter_series(trace[n], spec, trace.sample_dt)[n_drop:] for n in names}
    meta = dict(trace.meta, filter={"f_lo_hz": spec.f_lo, "f_hi_hz": spec.f_hi,
                                    "order": spec.order, "discard_s": discard_s})
    return dataclasses.replace(trace, t=trace.t[n_drop:].copy(), samples=samples, meta=meta)


def _window_len(window_s, dt, what="window_s"):
    n = window_s / dt
    if abs(n - round(n)) > 1e-6 or round(n) < 2:
        raise ConfigError(f"{what} = {window_s} s is not an integer number (>= 2) of samples of {dt} s")
    return int(round(n))


def windowed_variance(x: np.ndarray, n: int, stride: int) -> np.ndarray:
    """Unbiased variance of every length-``n`` window starting at multiples of ``stride``."""
    x = np.asarray(x, dtype=float)
    n_win = (x.size - n) // stride + 1 if x.size >= n else 0
    if n_win <= 0:
        return np.zeros(0)
    if stride == n:
        return x[: n_win * n].reshape(n_win, n).var(axis=1, ddof=1)
    xc = x - x.mean()
    c1 = np.concatenate([[0.0], np.cumsum(xc)])
    c2 = np.concatenate([[0.0], np.cumsum(xc * xc)])
    s = np.arange(n_win) * stride
    s1 = c1[s + n] - c1[s]
    s2 = c2[s + n] - c2[s]
    return np.maximum((s2 - s1 * s1 / n) / (n - 1), 0.0)


def moving_variance(trace: SimTrace, names=None, window_s: float = 900.0,
                    stride_s: float | None = None, filtered: bool | None = None) -> WindowedVariance:
    """Per-window unbiased sample variance (window mean removed)."""
    names = trace.names if names is None else list(names)
    stride_s = window_s if stride_s is None else stride_s
    n = _window_len(window_s, trace.sample_dt)
    stride = _window_len(stride_s, trace.sample_dt, "stride_s") if stride_s != window_s else n
    if trace.t.size < n:
        raise ConfigError(f"window of {window_s} s is longer than the trace "
                          f"({trace.t.size * trace.sample_dt:g} s)")
    for name in names:
        if name not in trace.samples:
            raise ConfigError(f"trace has no series {name!r}")
    var = {name: windowed_variance(trace[name], n, stride) for name in names}
    n_win = len(next(iter(var.values()))) if var else 0
    # window start = time of the sample preceding its first sample
    starts = trace.t[0] - trace.sample_dt + np.arange(n_win) * stride * trace.sample_dt
    if filtered is None:
        filtered = "filter" in trace.meta
    return WindowedVariance(window_s=window_s, stride_s=stride_s, starts=starts, variances=var,
                            filtered=filtered)


def filtered_name(name: str) -> str:
    return name + SUFFIX


def append_filter_states(sys: LinearizedSystem, spec: BandpassSpec, names) -> LinearizedSystem:
    """Augment ``sys`` with one band-pass filter per measurement.

    Filter ``k`` is driven by ``c_k X`` where ``c_k`` is the observation row of
    ``names[k]``; its output becomes the observable ``names[k] + ':bp'``.
    """
    af, bf, cf, df = spec.realization()
    nf = af.shape[0]
    names = list(names)
    n0 = sys.n
    n_new = n0 + nf * len(names)
    a = np.zeros((n_new, n_new))
    a[:n0, :n0] = sys.a
    b = np.zeros((n_new, sys.b.shape[1]))
    b[:n0] = sys.b
    state_names = list(sys.state_names)
    observables = {k: np.concatenate([v, np.zeros(n_new - v.size)]) for k, v in sys.observables.items()}
    for k, name in enumerate(names):
        out = filtered_name(name)
        if out in state_names or out in observables or out in sys.alg_names:
            raise ConfigError(f"filter output {out!r} collides with an existing name")
        c = sys.observation_row(name)
        lo = n0 + k * nf
        a[lo:lo + nf, :c.size] += bf @ c[None, :]
        a[lo:lo + nf, lo:lo + nf] = af
        row = np.zeros(n_new)
        row[:c.size] = df[0, 0] * c
        row[lo:lo + nf] = cf[0]
        observables[out] = row
        state_names += [f"{out}[{i}]" for i in range(nf)]
    return dataclasses.replace(sys, a=a, b=b, state_names=state_names, observables=observables)
