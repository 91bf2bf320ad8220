"""Streaming coincidence counting and metric estimation with uncertainties.

A coincidence is co-occurrence within one trial.  Multiple clicks of the same
detector in a trial count once.  Count tables from disjoint trial ranges merge
by componentwise addition, so accumulation shards freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .event_sim import RecordStream
from .params import DetectionMode, Detector
from .photon_model import UNDEFINED

LOW_COUNT = 10  # below this, error bars are unreliable and get flagged


@dataclass
class CountTable:
    """Sufficient statistics for all per-trial click probabilities of one mode.

    n2a_2b (both split arms regardless of D1) is tracked beyond the headline
    counts so that whole-trial bootstrap resampling has the full click-pattern
    joint distribution available.
    """

    mode: DetectionMode
    n_trials: int = 0
    n1: int = 0
    n2: int = 0
    n2a: int = 0
    n2b: int = 0
    n12: int = 0
    n1_2a: int = 0
    n1_2b: int = 0
    n2a_2b: int = 0
    n1_2a_2b: int = 0


def accumulate(table: CountTable, records: RecordStream) -> CountTable:
    """Add a record stream's trials to the table.  The stream must match the table's mode."""
    det = records.detector_id
    if table.mode is DetectionMode.SINGLE:
        if np.any((det == int(Detector.D2A)) | (det == int(Detector.D2B))):
            raise ValueError("split-mode records fed to a single-mode count table")
    else:
        if np.any(det == int(Detector.D2)):
            raise ValueError("single-mode records fed to a split-mode count table")

    def trials_of(d: Detector) -> np.ndarray:
        return np.unique(records.trial_index[det == int(d)])

    t = replace(table)
    t.n_trials += records.n_trials
    t1 = trials_of(Detector.D1)
    t.n1 += len(t1)
    if table.mode is DetectionMode.SINGLE:
        t2 = trials_of(Detector.D2)
        t.n2 += len(t2)
        t.n12 += len(np.intersect1d(t1, t2, assume_unique=True))
        return t
    ta = trials_of(Detector.D2A)
    tb = trials_of(Detector.D2B)
    tab = np.intersect1d(ta, tb, assume_unique=True)
    t.n2a += len(ta)
    t.n2b += len(tb)
    t.n1_2a += len(np.intersect1d(t1, ta, assume_unique=True))
    t.n1_2b += len(np.intersect1d(t1, tb, assume_unique=True))
    t.n2a_2b += len(tab)
    t.n1_2a_2b += len(np.intersect1d(t1, tab, assume_unique=True))
    return t


def accumulate_clicks(table: CountTable, clicks: tuple[np.ndarray, ...]) -> CountTable:
    """Fast path: accumulate boolean click arrays (from event_sim.simulate_clicks)."""
    t = replace(table)
    if table.mode is DetectionMode.SINGLE:
        c1, c2 = clicks
        t.n_trials += len(c1)
        t.n1 += int(c1.sum())
        t.n2 += int(c2.sum())
        t.n12 += int((c1 & c2).sum())
        return t
    c1, ca, cb = clicks
    t.n_trials += len(c1)
    t.n1 += int(c1.sum())
    t.n2a += int(ca.sum())
    t.n2b += int(cb.sum())
    t.n1_2a += int((c1 & ca).sum())
    t.n1_2b += int((c1 & cb).sum())
    t.n2a_2b += int((ca & cb).sum())
    t.n1_2a_2b += int((c1 & ca & cb).sum())
    return t


def merge(a: CountTable, b: CountTable) -> CountTable:
    """Combine tables built from disjoint trial ranges."""
    if a.mode is not b.mode:
        raise ValueError("cannot merge count tables of different detection modes")
    out = replace(a)
    for name in ("n_trials", "n1", "n2", "n2a", "n2b", "n12",
                 "n1_2a", "n1_2b", "n2a_2b", "n1_2a_2b"):
        setattr(out, name, getattr(a, name) + getattr(b, name))
    return out


@dataclass
class MetricsWithErrors:
    """Point estimates with one standard error each; NaN where undefined."""

    mode: DetectionMode
    n_trials: int
    method: str                       # "delta" or "bootstrap"
    p1: float = UNDEFINED
    p1_se: float = UNDEFINED
    p2: float = UNDEFINED
    p2_se: float = UNDEFINED
    p12: float = UNDEFINED
    p12_se: float = UNDEFINED
    g12: float = UNDEFINED
    g12_se: float = UNDEFINED
    pc: float = UNDEFINED
    pc_se: float = UNDEFINED
    qc: float = UNDEFINED
    qc_se: float = UNDEFINED
    w: float = UNDEFINED
    w_se: float = UNDEFINED
    naive_ratio: float = UNDEFINED
    naive_ratio_se: float = UNDEFINED
    undefined: frozenset = frozenset()
    warnings: tuple = ()
    n_boot: int = 0

    def as_dict(self) -> dict[str, float]:
        names = ["p1", "p2", "p12", "g12", "pc", "qc", "w", "naive_ratio"]
        out = {}
        for n in names:
            out[n] = getattr(self, n)
            out[n + "_se"] = getattr(self, n + "_se")
        return out


def _category_counts(t: CountTable) -> tuple[np.ndarray, list[tuple[bool, ...]]]:
    """Per-trial click-pattern category counts recovered from the table."""
    if t.mode is DetectionMode.SINGLE:
        n11 = t.n12
        n10 = t.n1 - t.n12
        n01 = t.n2 - t.n12
        n00 = t.n_trials - t.n1 - t.n2 + t.n12
        cats = [(False, False), (True, False), (False, True), (True, True)]
        return np.array([n00, n10, n01, n11]), cats
    full = t.n1_2a_2b
    x_ab = full
    x_a = t.n1_2a - full
    x_b = t.n1_2b - full
    x_o = t.n1 - t.n1_2a - t.n1_2b + full
    o_ab = t.n2a_2b - full
    o_a = t.n2a - t.n1_2a - o_ab
    o_b = t.n2b - t.n1_2b - o_ab
    o_o = t.n_trials - (x_ab + x_a + x_b + x_o + o_ab + o_a + o_b)
    cats = [(False, False, False), (False, True, False), (False, False, True),
            (False, True, True), (True, False, False), (True, True, False),
            (True, False, True), (True, True, True)]
    counts = np.array([o_o, o_a, o_b, o_ab, x_o, x_a, x_b, x_ab])
    if np.any(counts < 0):
        raise ValueError("inconsistent count table")
    return counts, cats


def _point_metrics(t: CountTable, eta2: float) -> tuple[dict[str, float], set[str]]:
    n = t.n_trials
    vals: dict[str, float] = {}
    undef: set[str] = set()
    vals["p1"] = t.n1 / n
    if t.mode is DetectionMode.SINGLE:
        vals["p2"] = t.n2 / n
        vals["p12"] = t.n12 / n
        if t.n1 and t.n2:
            vals["g12"] = t.n12 * n / (t.n1 * t.n2)
        else:
            vals["g12"] = UNDEFINED
            undef.add("g12")
        if t.n1:
            vals["pc"] = t.n12 / t.n1
            vals["qc"] = vals["pc"] / eta2
            vals["naive_ratio"] = t.n2 / t.n1
        else:
            vals.update(pc=UNDEFINED, qc=UNDEFINED, naive_ratio=UNDEFINED)
            undef.update({"pc", "qc", "naive_ratio"})
        undef.add("w")
    else:
        if t.n1_2a and t.n1_2b:
            vals["w"] = t.n1 * t.n1_2a_2b / (t.n1_2a * t.n1_2b)
        else:
            vals["w"] = UNDEFINED
            undef.add("w")
        undef.update({"p2", "p12", "g12", "pc", "qc", "naive_ratio"})
    return vals, undef


def _delta_errors(t: CountTable, eta2: float) -> dict[str, float]:
    """Delta-method standard errors from the multinomial covariance of the counts."""
    n = t.n_trials
    ses: dict[str, float] = {}

    def ratio_se(grad: np.ndarray, probs: np.ndarray, joint: np.ndarray) -> float:
        cov = (joint - np.outer(probs, probs)) / n
        var = float(grad @ cov @ grad)
        return float(np.sqrt(max(var, 0.0)))

    if t.mode is DetectionMode.SINGLE:
        p1, p2, p12 = t.n1 / n, t.n2 / n, t.n12 / n
        ses["p1"] = np.sqrt(p1 * (1 - p1) / n)
        ses["p2"] = np.sqrt(p2 * (1 - p2) / n)
        ses["p12"] = np.sqrt(p12 * (1 - p12) / n)
        probs = np.array([p1, p2, p12])
        # E[Zi Zj] = probability that all detectors involved in i and j clicked
        joint = np.array([[p1, p12, p12], [p12, p2, p12], [p12, p12, p12]])
        if p1 > 0 and p2 > 0:
            ses["g12"] = ratio_se(
                np.array([-p12 / (p1 * p1 * p2), -p12 / (p1 * p2 * p2), 1 / (p1 * p2)]),
                probs, joint)
        if p1 > 0:
            ses["pc"] = ratio_se(np.array([-p12 / (p1 * p1), 0.0, 1 / p1]), probs, joint)
            ses["qc"] = ses["pc"] / eta2
            ses["naive_ratio"] = ratio_se(np.array([-p2 / (p1 * p1), 1 / p1, 0.0]),
                                          probs, joint)
        return ses

    p1, qa, qb, tt = t.n1 / n, t.n1_2a / n, t.n1_2b / n, t.n1_2a_2b / n
    ses["p1"] = np.sqrt(p1 * (1 - p1) / n)
    if qa > 0 and qb > 0:
        probs = np.array([p1, qa, qb, tt])
        joint = np.array([[p1, qa, qb, tt],
                          [qa, qa, tt, tt],
                          [qb, tt, qb, tt],
                          [tt, tt, tt, tt]])
        grad = np.array([tt / (qa * qb),
                         -p1 * tt / (qa * qa * qb),
                         -p1 * tt / (qa * qb * qb),
                         p1 / (qa * qb)])
        ses["w"] = ratio_se(grad, probs, joint)
    return ses


def _bootstrap_errors(t: CountTable, eta2: float, n_boot: int, seed: int) -> dict[str, float]:
    """Whole-trial bootstrap: resample the per-trial click-pattern multinomial."""
    counts, cats = _category_counts(t)
    probs = counts / t.n_trials
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(t.n_trials, probs, size=n_boot)

    reps: dict[str, list[float]] = {}
    for row in draws:
        bt = CountTable(mode=t.mode, n_trials=t.n_trials)
        if t.mode is DetectionMode.SINGLE:
            lut = dict(zip(cats, row))
            bt.n1 = int(lut[(True, False)] + lut[(True, True)])
            bt.n2 = int(lut[(False, True)] + lut[(True, True)])
            bt.n12 = int(lut[(True, True)])
        else:
            lut = dict(zip(cats, row))
            bt.n1 = int(sum(v for c, v in lut.items() if c[0]))
            bt.n2a = int(sum(v for c, v in lut.items() if c[1]))
            bt.n2b = int(sum(v for c, v in lut.items() if c[2]))
            bt.n1_2a = int(sum(v for c, v in lut.items() if c[0] and c[1]))
            bt.n1_2b = int(sum(v for c, v in lut.items() if c[0] and c[2]))
            bt.n2a_2b = int(sum(v for c, v in lut.items() if c[1] and c[2]))
            bt.n1_2a_2b = int(lut[(True, True, True)])
        vals, _ = _point_metrics(bt, eta2)
        for k, v in vals.items():
            reps.setdefault(k, []).append(v)

    ses = {}
    for k, arr in reps.items():
        a = np.array(arr)
        good = np.isfinite(a)
        if good.sum() >= 2:
            ses[k] = float(np.std(a[good], ddof=1))
    return ses


def estimate_metrics(table: CountTable, eta2: float = 0.25, method: str = "delta",
                     n_boot: int = 1000, seed: int = 0) -> MetricsWithErrors:
    """Point estimates and standard errors for all metrics the table's mode supports."""
    if table.n_trials <= 0:
        raise ValueError("empty count table")
    if method not in ("delta", "bootstrap"):
        raise ValueError(f"unknown error method {method!r}")

    vals, undef = _point_metrics(table, eta2)
    if method == "delta":
        ses = _delta_errors(table, eta2)
    else:
        ses = _bootstrap_errors(table, eta2, n_boot, seed)

    warns = []
    relevant = (("n1", "n2", "n12") if table.mode is DetectionMode.SINGLE
                else ("n1", "n2a", "n2b", "n1_2a", "n1_2b", "n1_2a_2b"))
    low = [name for name in relevant if getattr(table, name) < LOW_COUNT]
    if low:
        warns.append("low-count: " + ",".join(low))

    out = MetricsWithErrors(mode=table.mode, n_trials=table.n_trials, method=method,
                            undefined=frozenset(undef), warnings=tuple(warns),
                            n_boot=n_boot if method == "bootstrap" else 0)
    for k, v in vals.items():
        setattr(out, k, v)
    for k, v in ses.items():
        setattr(out, k + "_se", v)
    return out


def report_text(m: MetricsWithErrors) -> str:
    """Flat key-value metrics report."""
    lines = [f"mode = {m.mode.value}", f"n_trials = {m.n_trials}", f"error_method = {m.method}"]
    for k, v in m.as_dict().items():
        lines.append(f"{k} = {float(v)!r}")
    if m.undefined:
        lines.append("undefined = " + ",".join(sorted(m.undefined)))
    for wmsg in m.warnings:
        lines.append(f"warning = {wmsg}")
    return "\n".join(lines) + "\n"
