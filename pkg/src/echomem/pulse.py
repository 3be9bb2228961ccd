"""Pulse synthesis and spectral analysis.

All waveforms are complex Rabi-frequency envelopes Omega(t)*exp(i*phi(t)) in
a frame rotating at the global carrier omega_0.  Detunings and Rabi
frequencies are angular (rad/s), chirp rates are rad/s^2, time is seconds.

Pulse kinds:

* ``probe-square``    flat amplitude over ``duration``
* ``probe-gaussian``  gaussian amplitude, ``duration`` = amplitude FWHM
* ``rap-sinc-chirp``  sinc amplitude (main lobe only, zero at the edges)
  with a linear frequency sweep of full width ``chirp_rate * duration``
  centred on ``carrier_detuning``
* ``multitone-composite``  sample-wise sum of sinc-chirp tones sharing the
  same centre time and duration
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi

PROBE_SQUARE = "probe-square"
PROBE_GAUSSIAN = "probe-gaussian"
RAP_SINC_CHIRP = "rap-sinc-chirp"
MULTITONE_COMPOSITE = "multitone-composite"

PROBE_KINDS = (PROBE_SQUARE, PROBE_GAUSSIAN)
RAP_KINDS = (RAP_SINC_CHIRP, MULTITONE_COMPOSITE)

# gaussian support half-width in units of the amplitude FWHM
GAUSSIAN_SUPPORT = 3.2


class PulseError(ValueError):
    """Invalid pulse specification."""


class GridError(ValueError):
    """Sampling grid violates a synthesis precondition."""


@dataclass(frozen=True)
class Tone:
    """One spectral tone of a multitone chirped pulse."""

    carrier_detuning: float  # rad/s relative to omega_0
    peak_rabi: float         # rad/s
    chirp_rate: float        # rad/s^2


@dataclass(frozen=True)
class PulseSpec:
    kind: str
    center_time: float = 0.0
    duration: float = 0.0
    peak_rabi: float = 0.0
    carrier_detuning: float = 0.0
    chirp_rate: float = 0.0
    tones: tuple[Tone, ...] = ()

    def __post_init__(self):
        if self.kind not in PROBE_KINDS + RAP_KINDS:
            raise PulseError(f"unknown pulse kind {self.kind!r}")
        if self.duration <= 0.0:
            raise PulseError("duration must be positive")
        if self.kind == MULTITONE_COMPOSITE:
            if not self.tones:
                raise PulseError("multitone-composite requires at least one tone")
            if any(t.peak_rabi < 0.0 for t in self.tones):
                raise PulseError("peak_rabi must be non-negative")
            self._check_tone_overlap()
        else:
            if self.peak_rabi < 0.0:
                raise PulseError("peak_rabi must be non-negative")
            if self.kind in PROBE_KINDS and self.chirp_rate != 0.0:
                raise PulseError("probe pulses carry no chirp")

    def _check_tone_overlap(self):
        tones = sorted(self.tones, key=lambda t: t.carrier_detuning)
        for a, b in zip(tones, tones[1:]):
            gap = b.carrier_detuning - a.carrier_detuning
            min_gap = 0.5 * (abs(a.chirp_rate) + abs(b.chirp_rate)) * self.duration
            if gap < min_gap:
                raise PulseError(
                    "overlapping tones: centers %.3g MHz apart, spans need %.3g MHz"
                    % (gap / TWO_PI / 1e6, min_gap / TWO_PI / 1e6))

    @property
    def is_probe(self) -> bool:
        return self.kind in PROBE_KINDS

    @property
    def span(self) -> float:
        """Full swept angular width R*tau (rad/s); 0 for probes."""
        if self.kind == MULTITONE_COMPOSITE:
            return max(abs(t.chirp_rate) * self.duration for t in self.tones)
        return abs(self.chirp_rate) * self.duration

    def tone_list(self) -> tuple[Tone, ...]:
        if self.kind == MULTITONE_COMPOSITE:
            return self.tones
        return (Tone(self.carrier_detuning, self.peak_rabi, self.chirp_rate),)

    def f_max_hz(self) -> float:
        """Fastest envelope oscillation (Hz): carrier offset + half the sweep."""
        return max(
            (abs(t.carrier_detuning) + 0.5 * abs(t.chirp_rate) * self.duration)
            / TWO_PI
            for t in self.tone_list())

    def support(self) -> tuple[float, float]:
        """Time interval outside which the amplitude is (numerically) zero."""
        half = 0.5 * self.duration
        if self.kind == PROBE_GAUSSIAN:
            half = GAUSSIAN_SUPPORT * self.duration
        return (self.center_time - half, self.center_time + half)

    def shifted(self, center_time: float) -> "PulseSpec":
        return replace(self, center_time=center_time)


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    dt: float
    n: int

    def __post_init__(self):
        if self.dt <= 0.0 or self.n < 3:
            raise GridError("grid needs dt > 0 and n >= 3")

    @property
    def t_end(self) -> float:
        return self.t_start + (self.n - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n)


@dataclass
class SampledEnvelope:
    """Complex Rabi-frequency waveform on a uniform time grid."""

    t_start: float
    dt: float
    samples: np.ndarray

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def t_end(self) -> float:
        return self.t_start + (self.n - 1) * self.dt

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n)

    def energy(self) -> float:
        """Integral of |Omega|^2 dt (rad^2/s)."""
        return float(np.trapezoid(np.abs(self.samples) ** 2, dx=self.dt))

    def area(self) -> float:
        """Integral of |Omega| dt (rad); the tip angle for a resonant probe."""
        return float(np.trapezoid(np.abs(self.samples), dx=self.dt))


def default_time_grid(spec: PulseSpec, dt: float | None = None,
                      pad: float = 0.0, max_detuning: float = 0.0) -> TimeGrid:
    """Grid covering the pulse support with the default sampling policy.

    dt = min(duration/40, 1/(40 f_max)); ``max_detuning`` (rad/s) further
    bounds dt so downstream Bloch integration over detuned atoms stays well
    inside its step guard.  Sample count is forced odd so the fixed-step
    integrator (step 2*dt) lands exactly on the final sample.
    """
    if dt is None:
        dt = spec.duration / 40.0
        f_max = spec.f_max_hz()
        if f_max > 0.0:
            dt = min(dt, 1.0 / (40.0 * f_max))
        if max_detuning > 0.0:
            dt = min(dt, 0.25 / max_detuning)
    lo, hi = spec.support()
    lo -= pad
    hi += pad
    n = int(math.ceil((hi - lo) / dt)) + 1
    if n % 2 == 0:
        n += 1
    return TimeGrid(lo, dt, n)


def _tone_samples(t: np.ndarray, t0: float, duration: float,
                  tone: Tone) -> np.ndarray:
    x = 2.0 * (t - t0) / duration
    amp = tone.peak_rabi * np.sinc(x)
    amp = np.where(np.abs(x) <= 1.0, amp, 0.0)
    tt = t - t0
    phase = tone.carrier_detuning * tt + 0.5 * tone.chirp_rate * tt * tt
    return amp * np.exp(1j * phase)


def synthesize(spec: PulseSpec, grid: TimeGrid) -> SampledEnvelope:
    """Sample the pulse on the grid.

    Raises GridError if the grid is too coarse (dt > 1/(20 f_max)) or does
    not cover the pulse support.
    """
    f_max = spec.f_max_hz()
    if f_max > 0.0 and grid.dt > 1.0 / (20.0 * f_max):
        raise GridError(
            "grid too coarse: dt=%.3g s exceeds Nyquist margin 1/(20*%.3g Hz)"
            % (grid.dt, f_max))
    lo, hi = spec.support()
    if grid.t_start > lo + 1e-15 or grid.t_end < hi - 1e-15:
        raise GridError("grid [%g, %g] does not cover pulse support [%g, %g]"
                        % (grid.t_start, grid.t_end, lo, hi))
    t = grid.times()
    t0 = spec.center_time
    if spec.kind == PROBE_SQUARE:
        inside = np.abs(t - t0) <= 0.5 * spec.duration
        out = np.where(inside, spec.peak_rabi, 0.0).astype(complex)
        if spec.carrier_detuning:
            out = out * np.exp(1j * spec.carrier_detuning * (t - t0))
    elif spec.kind == PROBE_GAUSSIAN:
        sigma = spec.duration / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        out = spec.peak_rabi * np.exp(-0.5 * ((t - t0) / sigma) ** 2)
        out = out.astype(complex)
        if spec.carrier_detuning:
            out = out * np.exp(1j * spec.carrier_detuning * (t - t0))
    else:
        out = np.zeros(grid.n, dtype=complex)
        for tone in spec.tone_list():
            out += _tone_samples(t, t0, spec.duration, tone)
    return SampledEnvelope(grid.t_start, grid.dt, out)


@dataclass
class Spectrum:
    freq_hz: np.ndarray
    power: np.ndarray

    def fwhm_hz(self) -> float:
        """Full width at half maximum of the power spectrum (linear interp)."""
        p = self.power
        if p.max() <= 0.0:
            raise ValueError("cannot take FWHM of an all-zero spectrum")
        half = 0.5 * p.max()
        above = p >= half
        idx = np.nonzero(above)[0]
        i0, i1 = idx[0], idx[-1]
        f = self.freq_hz

        def cross(i_out, i_in):
            if i_out < 0 or i_out >= p.size:
                return f[i_in]
            frac = (half - p[i_out]) / (p[i_in] - p[i_out])
            return f[i_out] + frac * (f[i_in] - f[i_out])

        return cross(i1 + 1, i1) - cross(i0 - 1, i0)


def spectrum(env: SampledEnvelope, pad_factor: int = 8) -> Spectrum:
    """Two-sided power spectrum of the envelope (arbitrary units).

    Zero-pads by pad_factor for frequency interpolation; frequencies are in
    Hz relative to the rotating-frame carrier.
    """
    if env.n == 0:
        raise ValueError("empty envelope")
    nfft = int(2 ** math.ceil(math.log2(max(env.n * max(pad_factor, 1), 16))))
    spec = np.fft.fftshift(np.fft.fft(env.samples, nfft))
    freq = np.fft.fftshift(np.fft.fftfreq(nfft, env.dt))
    return Spectrum(freq, np.abs(spec) ** 2 * env.dt ** 2)


def probe_bandwidth_fwhm_hz(spec: PulseSpec) -> float:
    """Analytic power-spectrum FWHM of a probe pulse."""
    if spec.kind == PROBE_SQUARE:
        return 0.8858929 / spec.duration  # sinc^2 FWHM
    if spec.kind == PROBE_GAUSSIAN:
        sigma = spec.duration / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        return math.sqrt(math.log(2.0)) / (math.pi * sigma)
    raise PulseError(f"{spec.kind} is not a probe kind")


@dataclass(frozen=True)
class ConditionReport:
    adiabaticity_ratio: float
    bandwidth_ratio: float
    adiabaticity_pass: bool
    bandwidth_pass: bool

    @property
    def ok(self) -> bool:
        return self.adiabaticity_pass and self.bandwidth_pass


def check_conditions(rap: PulseSpec, probe: PulseSpec,
                     adiabaticity_min: float = 10.0,
                     bandwidth_min: float = 3.0) -> ConditionReport:
    """Adiabaticity (Omega^2/R) and sweep-vs-probe bandwidth checks.

    A zero chirp rate reports an infinite adiabaticity ratio (trivially
    adiabatic) per the spec'd convention.
    """
    if rap.kind not in RAP_KINDS:
        raise PulseError("first argument must be a RAP kind")
    if probe.kind not in PROBE_KINDS:
        raise PulseError("second argument must be a probe kind")
    ratios = [
        (t.peak_rabi ** 2 / abs(t.chirp_rate)) if t.chirp_rate else math.inf
        for t in rap.tone_list()
    ]
    adiabaticity = min(ratios)
    probe_fwhm = probe_bandwidth_fwhm_hz(probe)
    bandwidth = (rap.span / TWO_PI) / probe_fwhm
    return ConditionReport(
        adiabaticity_ratio=adiabaticity,
        bandwidth_ratio=bandwidth,
        adiabaticity_pass=adiabaticity >= adiabaticity_min,
        bandwidth_pass=bandwidth >= bandwidth_min,
    )


def write_waveform_csv(env: SampledEnvelope, path) -> None:
    t = env.times()
    with open(path, "w") as fh:
        fh.write("t_s,re_rad_per_s,im_rad_per_s\n")
        for ti, si in zip(t, env.samples):
            fh.write("%.17g,%.17g,%.17g\n" % (ti, si.real, si.imag))


def write_spectrum_csv(spec: Spectrum, path) -> None:
    with open(path, "w") as fh:
        fh.write("f_hz,power\n")
        for fi, pi in zip(spec.freq_hz, spec.power):
            fh.write("%.17g,%.17g\n" % (fi, pi))
