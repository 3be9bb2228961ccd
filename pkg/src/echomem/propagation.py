"""Linearised Maxwell-Bloch propagation: absorption, echo emission, FID.

The medium is M slices across a total (peak) optical depth alpha_l.  The
probe is weak, so absorption is linear response: the field amplitude seen
by the atoms at depth-fraction zeta is exp(-alpha_l * r_j * zeta / 2) per
spectral component, where r_j is the line-profile density at the atom's
detuning relative to the line centre.

Emission marches the one-way field equation in the propagation direction,

    dE/dzeta = -(alpha_l/2) * f(t) * E + kappa * sum_j g_j s_j(zeta, t)

with f(t) the ground-state fraction of the band the field lives in
(negative when inverted: gain) and the coupling constant fixed
analytically, kappa = i*alpha_l/(2*pi*rho0), rho0 the grid's weight density
at the line centre.  That normalisation is exactly the one under which the
closed absorb->store->emit loop gives eta -> (alpha_l)^2 as alpha_l -> 0,
and it involves no fitted constants.

Stored states are kept as two branches: ``base`` (no probe; carries the
spectator free-induction decay) and ``pert`` (probe-induced difference,
scaling linearly with the local probe amplitude).  Control pulses are
identical at every slice (undepleted), so only ``pert`` varies across
slices, through the per-slice absorption scale factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import bloch
from .ensemble import DetuningGrid, EnsembleSpec
from .pulse import SampledEnvelope, TWO_PI

MAX_TIP_ANGLE = 0.05      # rad; linear-response validity guard
MAX_GAIN_DEPTH = 25.0     # refuse alpha_l * inversion beyond this


class WeakProbeError(ValueError):
    """Probe too strong for the linearised absorption treatment."""


class GainOverflowError(ValueError):
    """Inverted-medium gain exponent out of the trustworthy range."""


class SpectatorsDisabled(ValueError):
    """FID quantities are undefined without spectator atoms."""


@dataclass(frozen=True)
class MediumSpec:
    alpha_l: float
    slices: int = 32
    length: float = 0.012  # metres, informational only
    ensemble: EnsembleSpec | None = None

    def __post_init__(self):
        if self.slices < 8:
            raise ValueError("need at least 8 slices")
        if self.alpha_l < 0.0:
            raise ValueError("alpha_l must be non-negative")


@dataclass
class Absorption:
    """Linear-response probe absorption through the slice stack."""

    grid: DetuningGrid
    alpha_l: float
    zfrac: np.ndarray            # (M,) slice centres as depth fractions
    slice_scale: np.ndarray      # (M, N) local field amplitude factors
    pert: np.ndarray             # (N, 3) probe-induced state difference
    t_ref: float                 # absolute time the states refer to
    tip_angle: float
    input_energy: float
    transmitted: SampledEnvelope


def _profile_density_ratio(grid: DetuningGrid) -> np.ndarray:
    """r_j = profile density at delta_j over density at the line centre."""
    dens = grid.weights / grid.ddelta
    return dens / grid.weight_density(0.0)


def slice_scales(grid: DetuningGrid, alpha_l: float, slices: int,
                 ground_fraction: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Slice-centre depth fractions and per-atom local field factors.

    Component j of the weak field is attenuated to exp(-alpha_l * r_j *
    zeta / 2) at depth fraction zeta, with r_j the line-profile density
    ratio at the atom's detuning.
    """
    zfrac = (np.arange(slices) + 0.5) / slices
    r = _profile_density_ratio(grid)
    depth = alpha_l * ground_fraction
    return zfrac, np.exp(-0.5 * depth * np.outer(zfrac, r))


def absorb_probe(medium: MediumSpec, grid: DetuningGrid,
                 probe: SampledEnvelope, t2: float = math.inf,
                 t1: float = math.inf, initial_w: float = -1.0) -> Absorption:
    """Absorb a weak probe: slice amplitudes, atomic excitation, transmission.

    ``initial_w`` sets a uniform initial inversion; the absorption depth
    scales with the ground-state fraction -w (a half-inverted medium, w = 0,
    does not attenuate).
    """
    tip = probe.area()
    if tip > MAX_TIP_ANGLE:
        raise WeakProbeError(
            "probe tip angle %.3g rad exceeds the weak-probe bound %.3g"
            % (tip, MAX_TIP_ANGLE))
    ground_fraction = -initial_w
    depth = medium.alpha_l * ground_fraction
    zfrac, slice_scale = slice_scales(grid, medium.alpha_l, medium.slices,
                                      ground_fraction)
    start = np.tile(np.array([0.0, 0.0, initial_w]), (grid.n, 1))
    after = bloch.evolve_states(start, grid.deltas, probe, t2=t2, t1=t1)
    pert = after - start
    transmitted = SampledEnvelope(
        probe.t_start, probe.dt, probe.samples * math.exp(-0.5 * depth))
    return Absorption(grid=grid, alpha_l=medium.alpha_l, zfrac=zfrac,
                      slice_scale=slice_scale, pert=pert,
                      t_ref=probe.t_end, tip_angle=tip,
                      input_energy=probe.energy(), transmitted=transmitted)


@dataclass
class StoredMedium:
    """Per-slice atomic state after the control sequence, ready to radiate.

    ``base`` and ``pert`` are (N, 3) states/differences at ``t_ref``; the
    slice dependence is entirely in ``slice_scale`` (pert scales, base does
    not).  Emission windows must lie at or after t_ref (free evolution only).
    """

    grid: DetuningGrid
    alpha_l: float
    zfrac: np.ndarray
    slice_scale: np.ndarray
    base: np.ndarray
    pert: np.ndarray
    t_ref: float
    t2: float
    t1: float
    input_energy: float
    band_center: float = 0.0
    band_halfwidth: float = 0.0
    include_fid: bool = True

    def band_mask(self) -> np.ndarray:
        if self.band_halfwidth <= 0.0:
            return np.ones(self.grid.n, dtype=bool)
        return np.abs(self.grid.deltas - self.band_center) <= self.band_halfwidth


@dataclass
class PropagationResult:
    t: np.ndarray
    field: np.ndarray          # probe-induced output field (echo)
    fid_trace: np.ndarray      # spectator-induced output field
    efficiency: float          # echo-window energy over input energy
    efficiency_total: float    # same for echo + FID combined
    snr: float                 # echo energy over FID energy in the window
    echo_time: float           # |field| peak position

    @property
    def total_field(self) -> np.ndarray:
        return self.field + self.fid_trace


def _field_energy(t: np.ndarray, field: np.ndarray) -> float:
    return float(np.trapezoid(np.abs(field) ** 2, t))


def _march(stored: StoredMedium, t: np.ndarray, use_pert: bool,
           atom_mask: np.ndarray | None = None) -> np.ndarray:
    """March the emission equation over slices for one stored branch."""
    grid = stored.grid
    g = grid.weights
    deltas = grid.deltas
    if atom_mask is not None:
        g = np.where(atom_mask, g, 0.0)
    branch = stored.pert if use_pert else stored.base
    s0 = branch[:, 0] + 1j * branch[:, 1]
    tt = (t - stored.t_ref)[:, None]
    decay = np.exp(-tt / stored.t2) if math.isfinite(stored.t2) else 1.0
    s_t = (np.exp(1j * deltas[None, :] * tt) * decay) * s0[None, :]  # (T, N)

    # Attenuation of the radiated field: its spectrum sits where the stored
    # probe excitation sits, so weight the medium's inversion by the pert
    # coherence power; fall back to the configured band mask with no probe.
    pw = grid.weights * (stored.pert[:, 0] ** 2 + stored.pert[:, 1] ** 2)
    if atom_mask is not None:
        pw = np.where(atom_mask, pw, 0.0)
    if float(pw.sum()) <= 0.0:
        pw = np.where(stored.band_mask(), grid.weights, 0.0)
    pw = pw / pw.sum()
    w_band0 = float(pw @ stored.base[:, 2])
    if math.isfinite(stored.t1):
        tt1 = t - stored.t_ref
        w_band = -1.0 + (w_band0 + 1.0) * np.exp(-tt1 / stored.t1)
    else:
        w_band = np.full(t.size, w_band0)
    dens_rel = float(pw @ _profile_density_ratio(grid))
    f_abs = -w_band * dens_rel  # +1 ground (absorbing) ... -1 inverted (gain)
    if stored.alpha_l * float(np.max(np.abs(f_abs))) > MAX_GAIN_DEPTH:
        raise GainOverflowError(
            "alpha_l * inversion = %.3g exceeds the gain guard %.3g"
            % (stored.alpha_l * float(np.max(np.abs(f_abs))), MAX_GAIN_DEPTH))

    rho0 = grid.weight_density(0.0)
    kappa = 1j * stored.alpha_l / (TWO_PI * rho0)
    m = stored.zfrac.size
    dz = 1.0 / m
    half_step = np.exp(-0.25 * stored.alpha_l * f_abs * dz)  # (T,)
    full_step = half_step * half_step
    field = np.zeros(t.size, dtype=complex)
    for i in range(m):
        if use_pert:
            p_i = s_t @ (g * stored.slice_scale[i])
        else:
            p_i = s_t @ g
        field = field * full_step + kappa * dz * p_i * half_step
    return field


def emit_echo(stored: StoredMedium, t_lo: float, t_hi: float,
              dt_field: float) -> PropagationResult:
    """Radiated field in [t_lo, t_hi]; efficiency against the input energy.

    The window must start at or after the stored reference time (states free
    evolve analytically into the window).
    """
    if t_lo < stored.t_ref - 1e-12:
        raise ValueError("emission window starts before the stored states")
    t = np.arange(t_lo, t_hi, dt_field)
    field = _march(stored, t, use_pert=True)
    if stored.include_fid:
        fid = _march(stored, t, use_pert=False)
    else:
        fid = np.zeros_like(field)
    e_echo = _field_energy(t, field)
    e_fid = _field_energy(t, fid)
    e_total = _field_energy(t, field + fid)
    i_pk = int(np.argmax(np.abs(field))) if field.size else 0
    return PropagationResult(
        t=t, field=field, fid_trace=fid,
        efficiency=e_echo / stored.input_energy,
        efficiency_total=e_total / stored.input_energy,
        snr=(e_echo / e_fid) if e_fid > 0.0 else math.inf,
        echo_time=float(t[i_pk]) if field.size else t_lo,
    )


def fid_noise(stored: StoredMedium, t_lo: float, t_hi: float,
              dt_field: float) -> PropagationResult:
    """Spectator-only emission (no probe).  Refused if spectators are off."""
    if not stored.include_fid:
        raise SpectatorsDisabled("ensemble excludes spectators; FID undefined")
    return emit_echo(replace(stored, pert=np.zeros_like(stored.pert)),
                     t_lo, t_hi, dt_field)


def photon_budget(n_photons: float, efficiencies: list[float],
                  seed: int | None = None) -> tuple[float, int | None]:
    """Expected detected photon count through a chain of efficiencies.

    With a seed, also draws one Poisson sample of the detected count.
    """
    if any(not (0.0 < e <= 1.0) for e in efficiencies):
        raise ValueError("efficiencies must lie in (0, 1]")
    expected = float(n_photons)
    for e in efficiencies:
        expected *= e
    sample = None
    if seed is not None:
        rng = np.random.default_rng(seed)
        sample = int(rng.poisson(expected))
    return expected, sample


def write_field_csv(t: np.ndarray, field: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("t_s,re,im,abs2\n")
        for ti, fi in zip(t, field):
            fh.write("%.17g,%.17g,%.17g,%.17g\n"
                     % (ti, fi.real, fi.imag, abs(fi) ** 2))
