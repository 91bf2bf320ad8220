"""Seeded Monte Carlo event generator for per-trial detector clicks.

Each trial owns a fixed-size block of the Philox counter space derived from
(seed, trial_index), so the generated stream is a pure function of the session
spec: chunk sizes and worker counts cannot change it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import DetectionMode, Detector, SessionSpec, TrialSchedule

# uniforms consumed per trial; Philox counter units are 4x64-bit blocks
_DRAWS_PER_TRIAL = 8
_BLOCKS_PER_TRIAL = _DRAWS_PER_TRIAL // 4


@dataclass
class RecordStream:
    """Column-oriented detection records plus the metadata needed to interpret them."""

    mode: DetectionMode
    schedule: TrialSchedule
    n_trials: int
    trial_index: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint64))
    detector_id: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint8))
    offset_ns: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint32))

    def __len__(self) -> int:
        return len(self.trial_index)

    def __iter__(self):
        return zip(self.trial_index.tolist(), self.detector_id.tolist(), self.offset_ns.tolist())


def _trial_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """(count, _DRAWS_PER_TRIAL) uniforms for trials [start, start+count)."""
    bg = np.random.Philox(key=seed, counter=[start * _BLOCKS_PER_TRIAL, 0, 0, 0])
    raw = np.random.Generator(bg).integers(0, 2 ** 64, size=count * _DRAWS_PER_TRIAL,
                                           dtype=np.uint64)
    u = (raw >> np.uint64(11)) * 2.0 ** -53
    return u.reshape(count, _DRAWS_PER_TRIAL)


def _sample_clicks(spec: SessionSpec, start: int, count: int) -> tuple[np.ndarray, ...]:
    """Boolean click arrays, one per detector channel, for a contiguous trial range.

    Sampling is by inverse-CDF on the per-trial uniform block: pair number n is
    geometric in chi; conditioned on n, each detector's pair-photon arrival
    indicator (jointly, for the two split arms) and its Poisson background
    indicator use one uniform each.  The induced click-pattern distribution is
    exactly the analytic one.
    """
    p = spec.params
    chans = spec.config.channels(p)
    u = _trial_uniforms(spec.seed, start, count)

    chi = p.chi
    if chi > 0.0:
        n = np.floor(np.log1p(-u[:, 0]) / np.log(chi)).astype(np.int64)
    else:
        n = np.zeros(count, dtype=np.int64)

    d1 = chans[0]
    pair1 = u[:, 1] < 1.0 - (1.0 - d1.pair_eff) ** n
    bg1 = u[:, 2] < 1.0 - np.exp(-d1.bg_mean)
    click1 = pair1 | bg1

    if spec.config.mode is DetectionMode.SINGLE:
        d2 = chans[1]
        pair2 = u[:, 3] < 1.0 - (1.0 - d2.pair_eff) ** n
        bg2 = u[:, 4] < 1.0 - np.exp(-d2.bg_mean)
        return click1, pair2 | bg2

    ca, cb = chans[1], chans[2]
    # joint pair-arrival indicator for the two arms: routing is exclusive per photon
    p00 = (1.0 - ca.pair_eff - cb.pair_eff) ** n
    pa0 = (1.0 - ca.pair_eff) ** n   # no photon at arm a
    pb0 = (1.0 - cb.pair_eff) ** n
    # cell layout on [0,1): neither | a only | b only | both
    u3 = u[:, 3]
    edge_a = pb0                      # p00 + P(a only) = p00 + (pb0 - p00)
    edge_b = pb0 + (pa0 - p00)        # + P(b only)
    pair_a = ((u3 >= p00) & (u3 < edge_a)) | (u3 >= edge_b)
    pair_b = u3 >= edge_a
    bga = u[:, 4] < 1.0 - np.exp(-ca.bg_mean)
    bgb = u[:, 5] < 1.0 - np.exp(-cb.bg_mean)
    return click1, pair_a | bga, pair_b | bgb


def sample_trial(spec: SessionSpec, trial_index: int) -> set[Detector]:
    """Click set of one trial; distribution matches click_statistics exactly."""
    clicks = _sample_clicks(spec, trial_index, 1)
    dets = [ch.detector for ch in spec.config.channels(spec.params)]
    return {d for d, c in zip(dets, clicks) if bool(c[0])}


def run_session(spec: SessionSpec, chunk_size: int = 1 << 20) -> RecordStream:
    """Generate the full record stream: deterministic in spec, ordered by trial then detector."""
    dets = [ch.detector for ch in spec.config.channels(spec.params)]
    offsets = {Detector.D1: spec.schedule.write_offset_ns}
    read_off = spec.schedule.write_offset_ns + spec.schedule.read_delay_ns
    for d in dets[1:]:
        offsets[d] = read_off

    trials_parts, det_parts = [], []
    for start in range(0, spec.n_trials, chunk_size):
        count = min(chunk_size, spec.n_trials - start)
        clicks = _sample_clicks(spec, start, count)
        base = np.arange(start, start + count, dtype=np.uint64)
        # interleave per trial: stack detectors as columns, flatten row-major
        mask = np.column_stack(clicks)
        det_ids = np.array([int(d) for d in dets], dtype=np.uint8)
        rows, cols = np.nonzero(mask)
        trials_parts.append(base[rows])
        det_parts.append(det_ids[cols])

    trial_index = (np.concatenate(trials_parts) if trials_parts
                   else np.empty(0, np.uint64))
    detector_id = (np.concatenate(det_parts) if det_parts
                   else np.empty(0, np.uint8))
    offset_ns = np.empty(len(trial_index), dtype=np.uint32)
    for d in dets:
        offset_ns[detector_id == int(d)] = offsets[d]
    return RecordStream(mode=spec.config.mode, schedule=spec.schedule,
                        n_trials=spec.n_trials, trial_index=trial_index,
                        detector_id=detector_id, offset_ns=offset_ns)


def simulate_clicks(spec: SessionSpec, chunk_size: int = 1 << 20):
    """Yield (start, click arrays) per chunk without materializing records.

    Fast path for statistics-only consumers (the correlator can count clicks
    directly instead of round-tripping through a record file).
    """
    for start in range(0, spec.n_trials, chunk_size):
        count = min(chunk_size, spec.n_trials - start)
        yield start, _sample_clicks(spec, start, count)
