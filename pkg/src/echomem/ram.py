"""Spectral memory cells, random-access scheduling, multimode scenarios.

A memory cell is a disjoint spectral band addressed by one chirped tone.
Writing and reading cell c means two chirped events at start times (s,
s + (t_out - t_in)/2): the rigid pair offset follows from the storage law
t_E = 2*(tau2 + tau_r) under the pinned timing convention, leaving s free.
One physical multitone event can carry tones for several cells at once
(first event for one cell, second for another), which is what the
scheduler exploits to minimise the event count.

Verification re-simulates each cell's band under the full schedule and
quantifies cross-talk as the echo energy a cell shows when its own tones
are removed from every event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import bloch, ensemble, propagation
from .pulse import (PROBE_SQUARE, RAP_SINC_CHIRP, MULTITONE_COMPOSITE, TWO_PI,
                    PulseSpec, SampledEnvelope, Tone, default_time_grid,
                    probe_bandwidth_fwhm_hz, synthesize)


class RamError(ValueError):
    """Invalid cells, requests or schedule."""


@dataclass(frozen=True)
class MemoryCell:
    cell_id: str
    center: float   # rad/s
    span: float     # rad/s full swept width of the cell's tone
    guard: float    # rad/s minimum carrier spacing to any other cell

    def __post_init__(self):
        if self.span <= 0.0 or self.guard <= 0.0:
            raise RamError("span and guard must be positive")
        if self.span > self.guard:
            raise RamError(
                "cell %s: tone span %.3g MHz exceeds the guard spacing %.3g MHz"
                % (self.cell_id, self.span / TWO_PI / 1e6,
                   self.guard / TWO_PI / 1e6))


def check_cells(cells: list[MemoryCell]) -> None:
    ids = [c.cell_id for c in cells]
    if len(set(ids)) != len(ids):
        raise RamError("duplicate cell ids")
    by_center = sorted(cells, key=lambda c: c.center)
    for a, b in zip(by_center, by_center[1:]):
        if b.center - a.center < max(a.guard, b.guard):
            raise RamError("cells %s and %s closer than the guard spacing"
                           % (a.cell_id, b.cell_id))


@dataclass(frozen=True)
class RamRequest:
    cell_id: str
    t_in: float
    t_out: float


@dataclass(frozen=True)
class ScheduleParams:
    tau_r: float
    grid_step: float = 1e-6
    probe_duration: float = 2e-6
    guard_time: float = 1e-6

    @property
    def probe_clear(self) -> float:
        """Earliest control start after a probe centre."""
        return 0.5 * self.probe_duration + self.guard_time

    @property
    def echo_clear(self) -> float:
        """Required tau2 - tau1 so the echo window clears the second event."""
        return 2.0 * self.probe_duration + self.guard_time


@dataclass
class ScheduledEvent:
    start: float
    duration: float
    tones: tuple[str, ...]


@dataclass
class RamSchedule:
    events: list[ScheduledEvent]
    assignments: dict[str, tuple[int, int]]  # cell -> (event1, event2) indices
    violations: list[str]
    params: ScheduleParams

    @property
    def feasible(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "events": [{"t_start_us": e.start * 1e6,
                        "duration_us": e.duration * 1e6,
                        "tones": list(e.tones)} for e in self.events],
            "assignments": {c: list(v) for c, v in self.assignments.items()},
            "violations": list(self.violations),
            "feasible": self.feasible,
        }


def _blocked_intervals(requests: list[RamRequest],
                       params: ScheduleParams) -> list[tuple[float, float]]:
    pad = params.probe_duration + params.guard_time
    out = []
    for r in requests:
        out.append((r.t_in - pad, r.t_in + pad))
        out.append((r.t_out - pad, r.t_out + pad))
    return out


def _event_legal(start: float, params: ScheduleParams,
                 blocked: list[tuple[float, float]],
                 placed: list[float]) -> bool:
    end = start + params.tau_r
    for lo, hi in blocked:
        if start < hi and end > lo:
            return False
    for t in placed:
        if abs(t - start) > 1e-12 and abs(t - start) < params.tau_r - 1e-12:
            return False
    return True


def _candidate_starts(req: RamRequest, params: ScheduleParams) -> np.ndarray:
    offset = 0.5 * (req.t_out - req.t_in)
    s_min = req.t_in + params.probe_clear
    s_max = req.t_in + offset - params.tau_r - params.echo_clear
    if s_max < s_min:
        return np.empty(0)
    step = params.grid_step
    k0 = math.ceil(round(s_min / step, 9))
    k1 = math.floor(round(s_max / step, 9))
    return step * np.arange(k0, k1 + 1)


def _request_offset(req: RamRequest, params: ScheduleParams) -> float:
    if req.t_out - req.t_in <= 2.0 * params.tau_r:
        raise RamError("request %s: t_out - t_in must exceed 2*tau_r"
                       % req.cell_id)
    return 0.5 * (req.t_out - req.t_in)


def schedule(requests: list[RamRequest], cells: list[MemoryCell],
             params: ScheduleParams) -> RamSchedule:
    """Greedy minimal-event schedule on the discrete time grid.

    Cells are processed in (t_in, id) order; each placement prefers start
    times that reuse existing events (as first or second member of the
    rigid pair), breaking ties toward the earliest start.  Infeasible
    requests are reported in ``violations`` and left unscheduled.
    """
    check_cells(cells)
    cell_ids = {c.cell_id for c in cells}
    for r in requests:
        if r.cell_id not in cell_ids:
            raise RamError(f"request for unknown cell {r.cell_id}")
    if len({r.cell_id for r in requests}) != len(requests):
        raise RamError("one request per cell")
    blocked = _blocked_intervals(requests, params)
    order = sorted(requests, key=lambda r: (r.t_in, r.cell_id))

    times: list[float] = []          # placed event start times
    tones: dict[float, list[str]] = {}
    assignments: dict[str, tuple[float, float]] = {}
    violations: list[str] = []

    for req in order:
        try:
            offset = _request_offset(req, params)
        except RamError as err:
            violations.append(str(err))
            continue
        cands = _candidate_starts(req, params)
        best = None  # (cost, start)
        for s in cands:
            s2 = s + offset
            s_known = any(abs(s - t) < 1e-12 for t in times)
            s2_known = any(abs(s2 - t) < 1e-12 for t in times)
            if not s_known and not _event_legal(s, params, blocked, times):
                continue
            if not s2_known and not _event_legal(
                    s2, params, blocked, times + ([s] if not s_known else [])):
                continue
            cost = (0 if s_known else 1) + (0 if s2_known else 1)
            if best is None or (cost, s) < best:
                best = (cost, s)
            if cost == 0:
                break
        if best is None:
            violations.append(
                "cell %s: no collision-free event pair in its window"
                % req.cell_id)
            continue
        s = best[1]
        s2 = s + offset
        for t in (s, s2):
            if not any(abs(t - u) < 1e-12 for u in times):
                times.append(t)
                tones[round(t, 12)] = []
        tones[round(s, 12)].append(req.cell_id)
        tones[round(s2, 12)].append(req.cell_id)
        assignments[req.cell_id] = (s, s2)

    times_sorted = sorted(times)
    index = {round(t, 12): i for i, t in enumerate(times_sorted)}
    events = [ScheduledEvent(start=t, duration=params.tau_r,
                             tones=tuple(sorted(tones[round(t, 12)])))
              for t in times_sorted]
    assign_idx = {c: (index[round(a, 12)], index[round(b, 12)])
                  for c, (a, b) in assignments.items()}
    return RamSchedule(events=events, assignments=assign_idx,
                       violations=violations, params=params)


def schedule_exhaustive(requests: list[RamRequest], cells: list[MemoryCell],
                        params: ScheduleParams,
                        max_cells: int = 6) -> RamSchedule:
    """Brute-force minimal-event schedule (oracle for small instances)."""
    if len(requests) > max_cells:
        raise RamError("exhaustive search capped at %d cells" % max_cells)
    check_cells(cells)
    blocked = _blocked_intervals(requests, params)
    order = sorted(requests, key=lambda r: (r.t_in, r.cell_id))
    offsets = [_request_offset(r, params) for r in order]
    cands = [_candidate_starts(r, params) for r in order]

    best: dict = {"count": math.inf, "assign": None}

    def dfs(i: int, times: list[float], assign: list[float]):
        if len(set(times)) >= best["count"]:
            return
        if i == len(order):
            best["count"] = len(set(times))
            best["assign"] = list(assign)
            return
        for s in cands[i]:
            s2 = s + offsets[i]
            s_known = any(abs(s - t) < 1e-12 for t in times)
            s2_known = any(abs(s2 - t) < 1e-12 for t in times)
            if not s_known and not _event_legal(s, params, blocked, times):
                continue
            if not s2_known and not _event_legal(
                    s2, params, blocked, times + ([s] if not s_known else [])):
                continue
            added = []
            if not s_known:
                added.append(s)
            if not s2_known:
                added.append(s2)
            times.extend(added)
            assign.append(s)
            dfs(i + 1, times, assign)
            assign.pop()
            del times[len(times) - len(added):]

    dfs(0, [], [])
    if best["assign"] is None:
        return RamSchedule(events=[], assignments={},
                           violations=["no feasible schedule"], params=params)
    times: list[float] = []
    tones: dict[float, list[str]] = {}
    assignments = {}
    for req, off, s in zip(order, offsets, best["assign"]):
        for t in (s, s + off):
            if not any(abs(t - u) < 1e-12 for u in times):
                times.append(t)
                tones[round(t, 12)] = []
        tones[round(s, 12)].append(req.cell_id)
        tones[round(s + off, 12)].append(req.cell_id)
        assignments[req.cell_id] = (s, s + off)
    times_sorted = sorted(times)
    index = {round(t, 12): i for i, t in enumerate(times_sorted)}
    events = [ScheduledEvent(start=t, duration=params.tau_r,
                             tones=tuple(sorted(tones[round(t, 12)])))
              for t in times_sorted]
    return RamSchedule(
        events=events,
        assignments={c: (index[round(a, 12)], index[round(b, 12)])
                     for c, (a, b) in assignments.items()},
        violations=[], params=params)


# ---------------------------------------------------------------------------
# physics-backed verification

@dataclass(frozen=True)
class VerifyConfig:
    """Physics configuration for schedule verification and multimode runs."""

    probe_tip: float = 0.02
    probe_duration: float = 2e-6
    adiabaticity: float = 25.0        # per-tone Omega^2 / R
    atoms_per_band: int = 0           # 0: derive from the revival guard
    window_fwhm_factor: float = 4.0   # band window = span + factor * FWHM
    tone_radius: int = 1              # neighbour tones included in envelopes
    t2: float = math.inf
    crosstalk_threshold: float = 0.01
    alpha_l: float = 2.0
    slices: int = 32
    trace_dt: float = 0.25e-6


@dataclass
class CellReport:
    cell_id: str
    target_time: float
    echo_time: float
    on_target_energy: float
    off_target_energy: float
    crosstalk_ratio: float
    echo_ok: bool
    crosstalk_ok: bool

    @property
    def passed(self) -> bool:
        return self.echo_ok and self.crosstalk_ok


def _band_grid(cell: MemoryCell, cfg: VerifyConfig,
               sim_span: float) -> ensemble.DetuningGrid:
    fwhm = TWO_PI * probe_bandwidth_fwhm_hz(
        PulseSpec(kind=PROBE_SQUARE, duration=cfg.probe_duration, peak_rabi=1.0))
    window = cell.span + cfg.window_fwhm_factor * fwhm
    n = cfg.atoms_per_band
    if n <= 0:
        # smallest odd n satisfying the revival guard T_rev > 2*sim_span
        n = int(math.ceil(window * sim_span / math.pi)) + 2
    if n % 2 == 0:
        n += 1
    spec = ensemble.EnsembleSpec(n_atoms=n, window=window)
    return ensemble.build_grid(spec, sim_span=sim_span)


def _event_envelope(event: ScheduledEvent, cells_by_id: dict[str, MemoryCell],
                    frame_center: float, cfg: VerifyConfig, tau_r: float,
                    max_delta: float, reference: MemoryCell,
                    drop_cell: str | None) -> SampledEnvelope | None:
    """Envelope of one event in the reference cell's rotating frame."""
    tones = []
    for cid in event.tones:
        if cid == drop_cell:
            continue
        cell = cells_by_id[cid]
        hops = abs(round((cell.center - reference.center)
                         / max(reference.guard, 1.0)))
        if hops > cfg.tone_radius:
            continue
        rate = cell.span / tau_r
        tones.append(Tone(carrier_detuning=cell.center - frame_center,
                          peak_rabi=math.sqrt(cfg.adiabaticity * rate),
                          chirp_rate=rate))
    if not tones:
        return None
    spec = PulseSpec(kind=MULTITONE_COMPOSITE,
                     center_time=event.start + tau_r / 2.0,
                     duration=tau_r, tones=tuple(tones))
    return synthesize(spec, default_time_grid(spec, max_detuning=max_delta))


def _evolve_pair(grid: ensemble.DetuningGrid, envs: list[SampledEnvelope],
                 probe_env: SampledEnvelope, t2: float) -> tuple:
    """Base and probe-difference states at the end of the last envelope."""
    n = grid.n
    base = np.tile(bloch.GROUND, (n, 1))
    pert = np.zeros((n, 3))
    t_now = None
    items = sorted(envs + [probe_env], key=lambda e: e.t_start)
    for a, b in zip(items, items[1:]):
        if b.t_start < a.t_end - 1e-12:
            raise RamError("events overlap in the verification sequence")
    for env in items:
        if t_now is None:
            t_now = env.t_start
        wait = env.t_start - t_now
        if wait > 0.0:
            base = bloch.free_evolve(base, grid.deltas, wait, t2)
            pert = bloch.free_evolve_linear(pert, grid.deltas, wait, t2)
        if env is probe_env:
            probed = bloch.evolve_states(base + pert, grid.deltas, env, t2=t2)
            alone = bloch.evolve_states(base, grid.deltas, env, t2=t2)
            pert = probed - alone
            base = alone
        else:
            both = np.stack([base, base + pert])
            out = bloch.evolve_states(both, grid.deltas, env, t2=t2)
            base = out[0]
            pert = out[1] - out[0]
        t_now = env.t_end
    return base, pert, t_now


def _pert_energy(grid, pert, t_ref, t_lo, t_hi, dt, t2) -> tuple[float, float]:
    """Proxy-level echo energy and peak time of the pert branch in a window."""
    t = np.arange(t_lo, t_hi, dt)
    s0 = pert[:, 0] + 1j * pert[:, 1]
    tt = (t - t_ref)[:, None]
    decay = np.exp(-tt / t2) if math.isfinite(t2) else 1.0
    p = (np.exp(1j * grid.deltas[None, :] * tt) * decay) @ (grid.weights * s0)
    energy = float(np.trapezoid(np.abs(p) ** 2, t))
    t_peak = float(t[int(np.argmax(np.abs(p)))]) if t.size else t_lo
    return energy, t_peak


def verify_schedule(sched: RamSchedule, cells: list[MemoryCell],
                    requests: list[RamRequest],
                    cfg: VerifyConfig) -> list[CellReport]:
    """Simulate every cell's band under the schedule; check echo and cross-talk.

    On-target: echo peak within +-probe_duration of the requested t_out.
    Off-target: with the cell's own tones removed from all events, the energy
    left in the same window must stay below crosstalk_threshold of on-target.
    """
    if not sched.feasible:
        raise RamError("cannot verify an infeasible schedule: %s"
                       % "; ".join(sched.violations))
    check_cells(cells)
    cells_by_id = {c.cell_id: c for c in cells}
    req_by_id = {r.cell_id: r for r in requests}
    tau_r = sched.params.tau_r
    t_last = max(e.start + e.duration for e in sched.events)
    reports = []
    for cid, (i1, i2) in sorted(sched.assignments.items()):
        cell = cells_by_id[cid]
        req = req_by_id[cid]
        sim_span = max(t_last, req.t_out + 2.0 * cfg.probe_duration) + 2e-6
        grid = _band_grid(cell, cfg, sim_span)
        max_delta = float(np.max(np.abs(grid.deltas))) + cell.guard * (
            cfg.tone_radius + 0.5)
        probe_spec = PulseSpec(kind=PROBE_SQUARE, center_time=req.t_in,
                               duration=cfg.probe_duration,
                               peak_rabi=cfg.probe_tip / cfg.probe_duration)
        probe_env = synthesize(probe_spec,
                               default_time_grid(probe_spec,
                                                 max_detuning=max_delta))

        def run(drop_own: bool):
            envs = []
            for ev in sched.events:
                env = _event_envelope(ev, cells_by_id, cell.center, cfg,
                                      tau_r, max_delta, cell,
                                      drop_cell=cid if drop_own else None)
                if env is not None:
                    envs.append(env)
            base, pert, t_ref = _evolve_pair(grid, envs, probe_env, cfg.t2)
            return _pert_energy(grid, pert, t_ref,
                                req.t_out - 2.0 * cfg.probe_duration,
                                req.t_out + 2.0 * cfg.probe_duration,
                                cfg.trace_dt, cfg.t2)

        on_energy, t_peak = run(drop_own=False)
        off_energy, _ = run(drop_own=True)
        ratio = off_energy / on_energy if on_energy > 0.0 else math.inf
        reports.append(CellReport(
            cell_id=cid, target_time=req.t_out, echo_time=t_peak,
            on_target_energy=on_energy, off_target_energy=off_energy,
            crosstalk_ratio=ratio,
            echo_ok=abs(t_peak - req.t_out) <= cfg.probe_duration,
            crosstalk_ok=ratio < cfg.crosstalk_threshold))
    return reports


# ---------------------------------------------------------------------------
# multimode scenarios

@dataclass
class ModeReport:
    label: str
    expected_time: float | None
    echo_time: float
    efficiency: float
    peak_amplitude: float


@dataclass
class MultimodeResult:
    kind: str
    modes: list[ModeReport]
    t: np.ndarray
    field: np.ndarray


def temporal_multimode(n_modes: int, mode_width: float, mode_pitch: float,
                       rap: PulseSpec, tau_gap: float, tau2: float,
                       alpha_l: float = 2.0, slices: int = 32,
                       t2: float = math.inf, probe_tip: float = 0.02,
                       atoms: int = 0) -> MultimodeResult:
    """Store a train of square probes with one chirped pair; recall FIFO.

    The probe response is computed once and superposed with the per-mode
    free-evolution phases (the response is linear in the weak probe), so the
    cost is independent of the train length.
    """
    tau_r = rap.duration
    train_end = (n_modes - 1) * mode_pitch + mode_width / 2.0
    rap1_start = train_end + tau_gap
    t_e = 2.0 * (tau2 + tau_r)  # relative to each mode's centre
    span_total = (n_modes - 1) * mode_pitch + t_e + 4.0 * mode_width
    probe_fwhm = TWO_PI * probe_bandwidth_fwhm_hz(
        PulseSpec(kind=PROBE_SQUARE, duration=mode_width, peak_rabi=1.0))
    window = rap.span + 4.0 * probe_fwhm
    n = atoms if atoms > 0 else int(math.ceil(window * span_total / math.pi)) + 2
    if n % 2 == 0:
        n += 1
    grid = ensemble.build_grid(
        ensemble.EnsembleSpec(n_atoms=n, window=window), sim_span=span_total)
    max_delta = float(np.max(np.abs(grid.deltas)))

    probe_spec = PulseSpec(kind=PROBE_SQUARE, center_time=0.0,
                           duration=mode_width,
                           peak_rabi=probe_tip / mode_width)
    probe_env = synthesize(probe_spec,
                           default_time_grid(probe_spec, max_detuning=max_delta))
    ground = np.tile(bloch.GROUND, (grid.n, 1))
    pert0 = bloch.evolve_states(ground, grid.deltas, probe_env, t2=t2) - ground

    env1 = synthesize(rap.shifted(rap1_start + tau_r / 2.0),
                      default_time_grid(rap.shifted(rap1_start + tau_r / 2.0),
                                        max_detuning=max_delta))
    prop = bloch.propagator(grid.deltas, env1, t2=t2)

    # superpose the train: mode k's response, free-evolved to the RAP1 start
    pert_sum = np.zeros((grid.n, 3))
    mode_centers = [k * mode_pitch for k in range(n_modes)]
    for t_k in mode_centers:
        wait = rap1_start - t_k - probe_env.t_end
        if wait < 0.0:
            raise RamError("probe train reaches into the first control pulse")
        pert_sum += bloch.free_evolve_linear(pert0, grid.deltas, wait, t2)

    base = prop.apply(ground)
    pert = prop.apply_linear(pert_sum)
    base = bloch.free_evolve(base, grid.deltas, tau2, t2)
    pert = bloch.free_evolve_linear(pert, grid.deltas, tau2, t2)
    base = prop.apply(base)
    pert = prop.apply_linear(pert)
    t_ref = rap1_start + 2.0 * tau_r + tau2

    zfrac, scale = propagation.slice_scales(grid, alpha_l, slices)
    stored = propagation.StoredMedium(
        grid=grid, alpha_l=alpha_l, zfrac=zfrac, slice_scale=scale,
        base=base, pert=pert, t_ref=t_ref, t2=t2, t1=math.inf,
        input_energy=probe_env.energy(), band_halfwidth=1.2 * probe_fwhm,
        include_fid=True)
    first_echo = mode_centers[0] + t_e
    last_echo = mode_centers[-1] + t_e
    if first_echo - mode_pitch / 2.0 < t_ref:
        raise RamError("tau2 too short: the echo train starts inside the "
                       "second control pulse")
    res = propagation.emit_echo(stored, first_echo - mode_pitch / 2.0,
                                last_echo + mode_pitch / 2.0, mode_width / 12.0)

    modes = []
    for k, t_k in enumerate(mode_centers):
        center = t_k + t_e
        m = np.abs(res.t - center) <= mode_pitch / 2.0
        tm = res.t[m]
        fm = res.field[m]
        energy = float(np.trapezoid(np.abs(fm) ** 2, tm))
        i_pk = int(np.argmax(np.abs(fm)))
        modes.append(ModeReport(
            label="mode-%02d" % k, expected_time=center,
            echo_time=float(tm[i_pk]), efficiency=energy / stored.input_energy,
            peak_amplitude=float(np.abs(fm[i_pk]))))
    return MultimodeResult(kind="temporal", modes=modes, t=res.t,
                           field=res.field)


@dataclass(frozen=True)
class SpectralScenario:
    """Probes and events of one spectro-temporal scenario, cell-indexed."""

    label: str
    probes: tuple[tuple[str, float], ...]        # (cell_id, t_center)
    events: tuple[tuple[float, tuple[str, ...]], ...]  # (start, tone cells)


def build_scenario(kind: str, cells: list[MemoryCell], tau_r: float,
                   probe_pitch: float, tau1: float,
                   tau2: float) -> SpectralScenario:
    """The four recall strategies over three cells.

    simultaneous  one time bin in every cell, common write and read events
    fifo          staggered bins, common write and read: first in, first out
    partial       staggered bins; the centre cell read early on demand, the
                  outer two read together later
    selective     one time bin in every cell, each cell read by its own
                  single-tone event at a distinct time
    """
    if len(cells) != 3:
        raise RamError("scenarios are defined over exactly three cells")
    ids = tuple(c.cell_id for c in sorted(cells, key=lambda c: c.center))
    all_ids = ids
    mid = ids[1]
    outer = (ids[0], ids[2])
    if kind == "simultaneous":
        probes = tuple((c, 0.0) for c in all_ids)
        e1 = tau1
        e2 = e1 + tau_r + tau2
        events = ((e1, all_ids), (e2, all_ids))
    elif kind == "fifo":
        probes = tuple((c, k * probe_pitch) for k, c in enumerate(all_ids))
        e1 = 2.0 * probe_pitch + tau1
        e2 = e1 + tau_r + tau2
        events = ((e1, all_ids), (e2, all_ids))
    elif kind == "partial":
        probes = tuple((c, k * probe_pitch) for k, c in enumerate(all_ids))
        e1 = 2.0 * probe_pitch + tau1
        e2 = e1 + tau_r + tau2
        e3 = e2 + tau_r + tau2
        events = ((e1, all_ids), (e2, (mid,)), (e3, outer))
    elif kind == "selective":
        probes = tuple((c, 0.0) for c in all_ids)
        e1 = tau1
        events = ((e1, all_ids),) + tuple(
            (e1 + (k + 1) * (tau_r + tau2), (c,))
            for k, c in enumerate((ids[2], ids[0], ids[1])))
    else:
        raise RamError(f"unknown scenario {kind!r}")
    return SpectralScenario(label=kind, probes=probes, events=events)


def run_scenario(scenario: SpectralScenario, cells: list[MemoryCell],
                 tau_r: float, cfg: VerifyConfig) -> MultimodeResult:
    """Per-band simulation of a scenario; per-mode echoes from propagation.

    Each cell's band is simulated in its own rotating frame with neighbour
    tones included out to cfg.tone_radius; the mode's echo is predicted by
    the rigid pair law from its own write/read events.
    """
    check_cells(cells)
    cells_by_id = {c.cell_id: c for c in cells}
    t_last = max(s for s, _ in scenario.events) + tau_r
    modes: list[ModeReport] = []
    trace_t: list[np.ndarray] = []
    trace_f: list[np.ndarray] = []
    for cid, t_in in scenario.probes:
        cell = cells_by_id[cid]
        own = [s for s, tone_ids in scenario.events if cid in tone_ids]
        if len(own) < 2:
            expected = None
        else:
            expected = t_in + 2.0 * (own[1] - own[0])
        sim_span = max(t_last, (expected or t_last) + 4.0 * cfg.probe_duration)
        grid = _band_grid(cell, cfg, sim_span)
        max_delta = float(np.max(np.abs(grid.deltas))) + cell.guard * (
            cfg.tone_radius + 0.5)
        probe_spec = PulseSpec(kind=PROBE_SQUARE, center_time=t_in,
                               duration=cfg.probe_duration,
                               peak_rabi=cfg.probe_tip / cfg.probe_duration)
        probe_env = synthesize(
            probe_spec, default_time_grid(probe_spec, max_detuning=max_delta))
        envs = []
        for start, tone_ids in scenario.events:
            ev = ScheduledEvent(start=start, duration=tau_r, tones=tone_ids)
            env = _event_envelope(ev, cells_by_id, cell.center, cfg, tau_r,
                                  max_delta, cell, drop_cell=None)
            if env is not None:
                envs.append(env)
        base, pert, t_ref = _evolve_pair(grid, envs, probe_env, cfg.t2)
        if expected is None:
            continue
        window = (expected - 2.0 * cfg.probe_duration,
                  expected + 2.0 * cfg.probe_duration)
        zfrac, scale = propagation.slice_scales(grid, cfg.alpha_l, cfg.slices)
        probe_fwhm = TWO_PI * probe_bandwidth_fwhm_hz(
            PulseSpec(kind=PROBE_SQUARE, duration=cfg.probe_duration,
                      peak_rabi=1.0))
        stored = propagation.StoredMedium(
            grid=grid, alpha_l=cfg.alpha_l, zfrac=zfrac, slice_scale=scale,
            base=base, pert=pert, t_ref=t_ref, t2=cfg.t2, t1=math.inf,
            input_energy=probe_env.energy(),
            band_halfwidth=1.2 * probe_fwhm, include_fid=True)
        res = propagation.emit_echo(stored, max(window[0], t_ref), window[1],
                                    cfg.probe_duration / 12.0)
        i_pk = int(np.argmax(np.abs(res.field)))
        modes.append(ModeReport(
            label=cid, expected_time=expected,
            echo_time=float(res.t[i_pk]), efficiency=res.efficiency,
            peak_amplitude=float(np.abs(res.field[i_pk]))))
        trace_t.append(res.t)
        trace_f.append(res.field)
    t = np.concatenate(trace_t) if trace_t else np.empty(0)
    f = np.concatenate(trace_f) if trace_f else np.empty(0, dtype=complex)
    order = np.argsort(t, kind="stable")
    return MultimodeResult(kind=scenario.label, modes=modes,
                           t=t[order], field=f[order])


def band_energy_at(scenario: SpectralScenario, cells: list[MemoryCell],
                   tau_r: float, cfg: VerifyConfig, cell_id: str,
                   window: tuple[float, float]) -> float:
    """Proxy-level probe-induced energy of one cell's band in a window.

    Used to show selective recall: un-read cells hold no echo at the time
    another cell is being read.
    """
    cells_by_id = {c.cell_id: c for c in cells}
    cell = cells_by_id[cell_id]
    t_in = dict(scenario.probes)[cell_id]
    t_last = max(s for s, _ in scenario.events) + tau_r
    sim_span = max(t_last, window[1]) + 2e-6
    grid = _band_grid(cell, cfg, sim_span)
    max_delta = float(np.max(np.abs(grid.deltas))) + cell.guard * (
        cfg.tone_radius + 0.5)
    probe_spec = PulseSpec(kind=PROBE_SQUARE, center_time=t_in,
                           duration=cfg.probe_duration,
                           peak_rabi=cfg.probe_tip / cfg.probe_duration)
    probe_env = synthesize(
        probe_spec, default_time_grid(probe_spec, max_detuning=max_delta))
    envs = []
    for start, tone_ids in scenario.events:
        if start + tau_r > window[1]:
            continue
        ev = ScheduledEvent(start=start, duration=tau_r, tones=tone_ids)
        env = _event_envelope(ev, cells_by_id, cell.center, cfg, tau_r,
                              max_delta, cell, drop_cell=None)
        if env is not None:
            envs.append(env)
    base, pert, t_ref = _evolve_pair(grid, envs, probe_env, cfg.t2)
    lo = max(window[0], t_ref)
    energy, _ = _pert_energy(grid, pert, t_ref, lo, window[1],
                             cfg.probe_duration / 12.0, cfg.t2)
    return energy
