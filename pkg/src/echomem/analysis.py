"""Decay fits and efficiency extraction.

One nonlinear parameter per model, so the fits are a golden-section search
on the time constant with a closed-form linear amplitude at each trial:
deterministic and dependency-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# y = A * exp(-4 t / T): two-pulse-echo intensity vs pulse delay
FORM_ECHO_INTENSITY = "echo-intensity-4t"
# y = A * exp(-2 t / T): memory efficiency vs storage time
FORM_MEMORY_EFFICIENCY = "memory-efficiency-2t"
# y = 1 - A * exp(-t / T): ground-state repopulation after pumping
FORM_RECOVERY = "pump-recovery"

_RATES = {FORM_ECHO_INTENSITY: 4.0, FORM_MEMORY_EFFICIENCY: 2.0,
          FORM_RECOVERY: 1.0}


class FitError(ValueError):
    """Data unusable for the requested model."""


@dataclass
class DecayModel:
    form: str
    amplitude: float
    time_constant: float
    amplitude_stderr: float
    time_constant_stderr: float
    residual_norm: float

    def predict(self, t: np.ndarray) -> np.ndarray:
        k = _RATES[self.form]
        e = np.exp(-k * np.asarray(t) / self.time_constant)
        if self.form == FORM_RECOVERY:
            return 1.0 - self.amplitude * e
        return self.amplitude * e

    def to_dict(self) -> dict:
        return {
            "form": self.form,
            "amplitude": self.amplitude,
            "time_constant_s": self.time_constant,
            "amplitude_stderr": self.amplitude_stderr,
            "time_constant_stderr_s": self.time_constant_stderr,
            "residual_norm": self.residual_norm,
        }


def _amplitude_and_rss(t, y, form, tc):
    k = _RATES[form]
    e = np.exp(-k * t / tc)
    target = (1.0 - y) if form == FORM_RECOVERY else y
    denom = float(e @ e)
    amp = float(target @ e) / denom
    r = target - amp * e
    return amp, float(r @ r)


def fit_decay(t, y, form: str) -> DecayModel:
    """Least-squares fit of one decay form to (t, y) samples."""
    if form not in _RATES:
        raise FitError(f"unknown decay form {form!r}")
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 3:
        raise FitError("need at least 3 points")
    if np.any(np.diff(t) <= 0.0):
        raise FitError("t must be strictly increasing")
    if form != FORM_RECOVERY and np.any(y <= 0.0):
        raise FitError("decay forms need positive y values")
    if float(np.ptp(y)) == 0.0:
        raise FitError("degenerate (constant) data")

    t_span = t[-1] - t[0]
    tcs = np.geomspace(t_span / 200.0, t_span * 200.0, 121)
    rss = np.array([_amplitude_and_rss(t, y, form, tc)[1] for tc in tcs])
    i = int(np.argmin(rss))
    lo = tcs[max(i - 1, 0)]
    hi = tcs[min(i + 1, tcs.size - 1)]

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _amplitude_and_rss(t, y, form, c)[1]
    fd = _amplitude_and_rss(t, y, form, d)[1]
    for _ in range(200):
        if (b - a) <= 1e-12 * b:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _amplitude_and_rss(t, y, form, c)[1]
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _amplitude_and_rss(t, y, form, d)[1]
    tc = 0.5 * (a + b)
    amp, rss_min = _amplitude_and_rss(t, y, form, tc)

    # linearised covariance around the optimum
    k = _RATES[form]
    e = np.exp(-k * t / tc)
    sign = -1.0 if form == FORM_RECOVERY else 1.0
    j_amp = sign * e
    j_tc = sign * amp * e * (k * t / tc ** 2)
    jtj = np.array([[j_amp @ j_amp, j_amp @ j_tc],
                    [j_amp @ j_tc, j_tc @ j_tc]])
    dof = max(t.size - 2, 1)
    sigma2 = rss_min / dof
    try:
        cov = sigma2 * np.linalg.inv(jtj)
        amp_err = math.sqrt(max(cov[0, 0], 0.0))
        tc_err = math.sqrt(max(cov[1, 1], 0.0))
    except np.linalg.LinAlgError:
        amp_err = tc_err = math.inf
    return DecayModel(form=form, amplitude=amp, time_constant=float(tc),
                      amplitude_stderr=amp_err, time_constant_stderr=tc_err,
                      residual_norm=math.sqrt(rss_min))


@dataclass
class EfficiencyReport:
    eta: float
    echo_energy: float
    noise_energy: float
    reference_energy: float


def extract_efficiency(t: np.ndarray, field_power: np.ndarray,
                       reference_energy: float,
                       echo_window: tuple[float, float],
                       noise_window: tuple[float, float] | None = None,
                       ) -> EfficiencyReport:
    """Echo-window energy minus a median-power noise floor, over a reference.

    ``field_power`` is |E|^2(t).  The noise floor is the median power in a
    signal-free window scaled to the echo-window duration; omit it for
    noise-free model traces.
    """
    if reference_energy <= 0.0:
        raise ValueError("reference energy must be positive")
    t = np.asarray(t, dtype=float)
    p = np.asarray(field_power, dtype=float)
    lo, hi = echo_window
    if noise_window is not None:
        nlo, nhi = noise_window
        if max(lo, nlo) < min(hi, nhi):
            raise ValueError("echo and noise windows overlap")
    m = (t >= lo) & (t <= hi)
    if not np.any(m):
        raise ValueError("echo window outside the trace")
    echo_energy = float(np.trapezoid(p[m], t[m]))
    noise_energy = 0.0
    if noise_window is not None:
        nm = (t >= noise_window[0]) & (t <= noise_window[1])
        if not np.any(nm):
            raise ValueError("noise window outside the trace")
        noise_energy = float(np.median(p[nm])) * (hi - lo)
    eta = max(echo_energy - noise_energy, 0.0) / reference_energy
    return EfficiencyReport(eta=eta, echo_energy=echo_energy,
                            noise_energy=noise_energy,
                            reference_energy=reference_energy)
