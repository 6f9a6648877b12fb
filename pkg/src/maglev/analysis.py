"""Detector-signal analysis: PSDs, Lorentzian linewidths, ringdowns, frequency jitter
and identification of spectral lines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal
from scipy.optimize import least_squares


class AnalysisError(ValueError):
    pass


class FitError(RuntimeError):
    pass


@dataclass
class TimeSeries:
    samples: np.ndarray
    sample_rate: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise AnalysisError("time series needs at least two samples")
        if not self.sample_rate > 0:
            raise AnalysisError("sample rate must be > 0")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate


@dataclass
class Spectrum:
    """One-sided power spectral density (units^2 / Hz)."""

    freq: np.ndarray
    psd: np.ndarray
    resolution: float
    window: str

    def band_mask(self, f_lo: float, f_hi: float) -> np.ndarray:
        return (self.freq >= f_lo) & (self.freq <= f_hi)

    def integrate(self, f_lo: float = -np.inf, f_hi: float = np.inf) -> float:
        return float(np.sum(self.psd[self.band_mask(f_lo, f_hi)]) * self.resolution)

    def scaled(self, factor: float) -> "Spectrum":
        return Spectrum(self.freq, self.psd * factor, self.resolution, self.window)


def psd_welch(ts: TimeSeries, segment_length: int | None = None, overlap_fraction: float = 0.5,
              window: str = "hann") -> Spectrum:
    """Averaged one-sided periodogram (Welch).

    ``segment_length`` defaults to an eighth of the trace; pass ``len(ts)``
    for a single-segment periodogram.
    """
    n = len(ts)
    if segment_length is None:
        segment_length = max(n // 8, 2)
    segment_length = int(segment_length)
    if not 2 <= segment_length <= n:
        raise AnalysisError(f"segment length {segment_length} must lie in [2, {n}]")
    if not 0 <= overlap_fraction <= 0.9:
        raise AnalysisError("overlap fraction must lie in [0, 0.9]")
    noverlap = int(round(overlap_fraction * segment_length))
    f, pxx = signal.welch(ts.samples, fs=ts.sample_rate, window=window, nperseg=segment_length,
                          noverlap=noverlap, detrend=False, scaling="density", return_onesided=True)
    return Spectrum(f, pxx, ts.sample_rate / segment_length, str(window))


def average_spectra(spectra: Sequence[Spectrum]) -> Spectrum:
    first = spectra[0]
    for s in spectra[1:]:
        if s.freq.shape != first.freq.shape or not np.allclose(s.freq, first.freq):
            raise AnalysisError("spectra must share a frequency grid")
    return Spectrum(first.freq, np.mean([s.psd for s in spectra], axis=0), first.resolution,
                    first.window)


def lowpass(ts: TimeSeries, cutoff_hz: float = 100e3, order: int = 4) -> TimeSeries:
    """Causal Butterworth low-pass, as in an analog detection chain."""
    if not 0 < cutoff_hz < ts.sample_rate / 2:
        raise AnalysisError("cutoff must lie below the Nyquist frequency")
    sos = signal.butter(order, cutoff_hz, btype="low", fs=ts.sample_rate, output="sos")
    return TimeSeries(signal.sosfilt(sos, ts.samples), ts.sample_rate,
                      {**ts.metadata, "lowpass_hz": cutoff_hz})


def peak_frequency(freq, psd) -> float:
    """Argmax of the PSD refined by a parabola through the log of the three top bins."""
    k = int(np.argmax(psd))
    if 0 < k < len(psd) - 1 and np.all(psd[k - 1:k + 2] > 0):
        a, b, c = np.log(psd[k - 1:k + 2])
        denom = a - 2 * b + c
        if denom < 0:
            shift = 0.5 * (a - c) / denom
            return float(freq[k] + shift * (freq[1] - freq[0]))
    return float(freq[k])


def _covariance(res, n_params: int) -> np.ndarray:
    J = res.jac
    dof = max(res.fun.size - n_params, 1)
    s2 = float(np.sum(res.fun**2)) / dof
    try:
        return np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError as exc:
        raise FitError("singular Jacobian") from exc


def lorentzian(f, f0, fwhm, amplitude, offset):
    hw2 = (0.5 * fwhm) ** 2
    return amplitude * hw2 / ((np.asarray(f) - f0) ** 2 + hw2) + offset


@dataclass
class LorentzianFit:
    f0: float
    fwhm: float
    amplitude: float
    offset: float
    covariance: np.ndarray  # order: f0, fwhm, amplitude, offset

    @property
    def Q(self) -> float:
        return self.f0 / self.fwhm

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def sigma_Q(self) -> float:
        s_f0, s_g = self.sigma[:2]
        return self.Q * math.hypot(s_f0 / self.f0, s_g / self.fwhm)

    def to_dict(self) -> dict:
        s = self.sigma
        return {"f0_Hz": self.f0, "fwhm_Hz": self.fwhm, "amplitude": self.amplitude,
                "offset": self.offset, "Q": self.Q, "sigma_f0_Hz": s[0], "sigma_fwhm_Hz": s[1],
                "sigma_Q": self.sigma_Q}


def lorentzian_fit(spec: Spectrum, band: tuple[float, float], relative: bool = False) -> LorentzianFit:
    """Fit A (G/2)^2 / ((f - f0)^2 + (G/2)^2) + C inside ``band`` (Hz).

    ``relative=True`` weights residuals by the model, appropriate for
    periodogram noise, which is multiplicative.
    """
    f_lo, f_hi = band
    m = spec.band_mask(f_lo, f_hi)
    if m.sum() < 10:
        raise AnalysisError("fit band must contain at least 10 bins")
    f = spec.freq[m]
    y = spec.psd[m]
    yscale = float(np.max(np.abs(y)))
    if yscale == 0:
        raise FitError("spectrum is zero in the fit band")
    fc = 0.5 * (f_lo + f_hi)
    width = f_hi - f_lo
    yn = y / yscale

    k = int(np.argmax(yn))
    c0 = float(np.median(np.sort(yn)[: max(len(yn) // 4, 1)]))
    a0 = yn[k] - c0
    half = c0 + 0.5 * a0
    above = np.nonzero(yn >= half)[0]
    g0 = max((f[above[-1]] - f[above[0]]) if above.size > 1 else spec.resolution, spec.resolution)
    x0 = np.array([(f[k] - fc) / width, g0 / width, a0, c0])

    def resid(x):
        model = lorentzian((f - fc) / width, x[0], x[1], x[2], x[3])
        if relative:
            return (model - yn) / np.maximum(np.abs(model), 1e-12)
        return model - yn

    res = least_squares(resid, x0, method="lm", x_scale=np.maximum(np.abs(x0), 1e-3),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=5000)
    if res.status <= 0:
        raise FitError(f"Lorentzian fit did not converge: {res.message}")
    cov_n = _covariance(res, 4)
    d = np.diag([width, width, yscale, yscale])
    f0 = fc + res.x[0] * width
    fwhm = abs(res.x[1]) * width
    if not f_lo <= f0 <= f_hi:
        raise FitError(f"fitted centre {f0:g} Hz lies outside the band")
    if not fwhm > 0:
        raise FitError("fitted linewidth is zero")
    return LorentzianFit(float(f0), float(fwhm), float(res.x[2] * yscale), float(res.x[3] * yscale),
                         d @ cov_n @ d)


@dataclass
class RingdownFit:
    tau: float
    amplitude: float
    offset: float
    Q: float
    covariance: np.ndarray  # order: amplitude, tau, offset
    bin_times: np.ndarray
    bin_ratio: np.ndarray
    decaying: bool = True

    def to_dict(self) -> dict:
        s = np.sqrt(np.diag(self.covariance)) if self.covariance.size else [math.nan] * 3
        return {"tau_s": self.tau, "sigma_tau_s": float(s[1]), "amplitude": self.amplitude,
                "offset": self.offset, "Q": self.Q, "decaying": self.decaying}


def _band_power(x, fs, f_c, bw):
    spec = psd_welch(TimeSeries(x, fs), segment_length=x.size)
    return spec.integrate(f_c - bw / 2, f_c + bw / 2)


def ringdown_analysis(ts: TimeSeries, peak_freq: float, cal_freq: float, peak_band: float = 3.0,
                      cal_band: float = 0.6, bins: int = 50, skip_bins: int = 2,
                      cal_snr: float = 10.0) -> RingdownFit:
    """Decay time of a mode amplitude normalised to a calibration tone.

    The trace is cut into ``bins`` segments; in each, the PSD is integrated
    over ``peak_band`` around the mode and ``cal_band`` around the tone, and
    the ratio of the square roots is fitted with A exp(-t/tau) + C after
    dropping the first ``skip_bins``.
    """
    seg = len(ts) // bins
    if seg < 16:
        raise AnalysisError("trace too short for the requested number of bins")
    whole = psd_welch(ts)
    m_cal = whole.band_mask(cal_freq - cal_band / 2, cal_freq + cal_band / 2)
    floor = float(np.median(whole.psd))
    if not m_cal.any() or whole.psd[m_cal].max() < cal_snr * floor:
        raise AnalysisError(f"no calibration tone at {cal_freq:g} Hz")

    ratio = np.empty(bins)
    for b in range(bins):
        x = ts.samples[b * seg:(b + 1) * seg]
        a_mode = math.sqrt(_band_power(x, ts.sample_rate, peak_freq, peak_band))
        a_cal = math.sqrt(_band_power(x, ts.sample_rate, cal_freq, cal_band))
        if a_cal == 0:
            raise AnalysisError("calibration tone vanished in a segment")
        ratio[b] = a_mode / a_cal
    t = (np.arange(bins) + 0.5) * seg / ts.sample_rate
    tf, yf = t[skip_bins:], ratio[skip_bins:]
    span = tf[-1] - tf[0]
    omega = 2 * math.pi * peak_freq

    scale = float(np.max(np.abs(yf)))
    yn = yf / scale
    c0 = float(yn.min())
    a0 = float(yn[0] - c0)
    if a0 <= 1e-3 * max(abs(c0), 1e-300):
        return RingdownFit(math.inf, 0.0, float(np.mean(yf)), math.inf, np.full((3, 3), np.nan),
                           t, ratio, decaying=False)
    tail = yn - c0 + 1e-3 * a0
    tau0 = float(-1.0 / np.polyfit(tf - tf[0], np.log(tail), 1)[0]) if np.all(tail > 0) else span / 3
    if not 0 < tau0 < 100 * span:
        tau0 = span / 3

    def resid(x):
        return x[0] * np.exp(-(tf - tf[0]) / (x[1] * span)) + x[2] - yn

    res = least_squares(resid, [a0, tau0 / span, c0], method="lm", xtol=1e-14, ftol=1e-14,
                        gtol=1e-14, max_nfev=5000)
    a_n, tau_n, c_n = res.x
    tau = tau_n * span
    cov_n = _covariance(res, 3)
    amp = a_n * math.exp(tf[0] / tau) * scale if tau > 0 else a_n * scale
    d = np.diag([amp / a_n if a_n else scale, span, scale])
    cov = d @ cov_n @ d
    sig_a = math.sqrt(abs(cov_n[0, 0]))
    if tau > 10 * span or abs(a_n) <= 3 * sig_a:
        return RingdownFit(math.inf, float(amp), float(c_n * scale), math.inf, cov, t, ratio,
                           decaying=False)
    if not tau > 0:
        raise FitError("fitted decay time is not positive")
    return RingdownFit(float(tau), float(amp), float(c_n * scale), omega * tau / 2.0, cov, t, ratio)


@dataclass
class JitterResult:
    segment_times: np.ndarray
    freq: np.ndarray
    spectrogram: np.ndarray  # (n_segments, n_freq)
    peak_freqs: np.ndarray
    histogram: tuple
    std: float


def spectrogram_jitter(ts: TimeSeries, n_segments: int = 100, segment_seconds: float = 6.0,
                       band: tuple[float, float] | None = None, hist_bins: int = 20) -> JitterResult:
    """Peak frequency in consecutive segments, with its histogram and standard deviation."""
    seg = int(round(segment_seconds * ts.sample_rate))
    if seg < 4 or len(ts) < n_segments * seg:
        raise AnalysisError("trace shorter than n_segments * segment_seconds")
    rows, peaks = [], []
    freq = None
    for k in range(n_segments):
        spec = psd_welch(TimeSeries(ts.samples[k * seg:(k + 1) * seg], ts.sample_rate),
                         segment_length=seg)
        m = np.ones(spec.freq.size, bool) if band is None else spec.band_mask(*band)
        freq = spec.freq[m]
        rows.append(spec.psd[m])
        peaks.append(peak_frequency(freq, spec.psd[m]))
    peaks = np.array(peaks)
    hist = np.histogram(peaks, bins=hist_bins)
    return JitterResult((np.arange(n_segments) + 0.5) * segment_seconds, freq, np.array(rows),
                        peaks, hist, float(np.std(peaks, ddof=1)))


@dataclass
class LineMatches:
    matches: list  # (predicted, peak_freq, |delta|)
    unmatched_peaks: list
    unmatched_predictions: list
    threshold: float


def find_spectral_peaks(spec: Spectrum, k_mad: float = 6.0,
                        rel_prominence: float = 0.5) -> tuple[np.ndarray, float]:
    """Local maxima above median + k MAD of the PSD.

    A peak must also rise by ``rel_prominence`` of its height above the median
    out of its surroundings, which rejects noise ripples on the wings of a
    strong line.
    """
    if spec.psd.size < 3:
        return np.array([]), math.inf
    med = float(np.median(spec.psd))
    mad = float(np.median(np.abs(spec.psd - med)))
    thr = med + k_mad * mad
    idx, props = signal.find_peaks(spec.psd, prominence=k_mad * mad)
    keep = (spec.psd[idx] > thr) & (props["prominences"] >= rel_prominence * (spec.psd[idx] - med))
    return spec.freq[idx[keep]], thr


def identify_lines(spec: Spectrum, predicted, tolerance_hz: float,
                   k_mad: float = 6.0, rel_prominence: float = 0.5) -> LineMatches:
    """Greedy nearest matching of PSD peaks to predicted lines.

    ``predicted`` holds frequencies in Hz or objects with a ``freq_hz`` attribute.
    """
    if not tolerance_hz > spec.resolution:
        raise AnalysisError("tolerance must exceed the spectral resolution")
    preds = list(predicted)
    pf = np.array([getattr(p, "freq_hz", p) for p in preds], dtype=float)
    peaks, thr = find_spectral_peaks(spec, k_mad, rel_prominence)
    pairs = sorted((abs(pk - f), i, j) for i, f in enumerate(pf) for j, pk in enumerate(peaks)
                   if abs(pk - f) <= tolerance_hz)
    used_p, used_k, matches = set(), set(), []
    for dist, i, j in pairs:
        if i in used_p or j in used_k:
            continue
        used_p.add(i)
        used_k.add(j)
        matches.append((preds[i], float(peaks[j]), float(dist)))
    return LineMatches(matches, [float(peaks[j]) for j in range(len(peaks)) if j not in used_k],
                       [preds[i] for i in range(len(preds)) if i not in used_p], thr)
