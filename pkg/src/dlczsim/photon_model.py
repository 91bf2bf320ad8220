"""Exact click statistics for the pair source model, and a brute-force enumeration oracle.

The source emits photon pairs with joint number distribution P(n1=n2=n) = (1-chi) chi^n.
Each pair photon independently survives (or not) a per-detector thinning chain, and each
detector additionally sees independent Poisson background counts.  A detector clicks iff
at least one photon (pair or background) arrives.  All click probabilities then follow
from joint no-click probabilities by inclusion-exclusion.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .params import Channel, DetectionConfig, DetectionMode, Detector, ModelParams


def tmss_pgf(chi, x, y):
    """E[x^n1 y^n2] for the pair-number distribution P(n1=n2=n) = (1-chi) chi^n.

    Closed form: (1 - chi) / (1 - chi x y).  Accepts numpy arrays.
    """
    chi = np.asarray(chi, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(chi < 0) or np.any(chi >= 1):
        raise ValueError("chi must be in [0, 1)")
    if np.any((x < 0) | (x > 1)) or np.any((y < 0) | (y > 1)):
        raise ValueError("pgf arguments must be in [0, 1]")
    out = (1.0 - chi) / (1.0 - chi * x * y)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Statistics:
    """Per-trial click probabilities for one detection configuration.

    Single mode uses (p1, p2, p12); split mode uses (p1, p2a, p2b, p1_2a, p1_2b,
    p2a_2b, p1_2a_2b).  Fields of the other mode are None.
    """

    mode: DetectionMode
    p1: float
    p2: float | None = None
    p12: float | None = None
    p2a: float | None = None
    p2b: float | None = None
    p1_2a: float | None = None
    p1_2b: float | None = None
    p2a_2b: float | None = None
    p1_2a_2b: float | None = None

    def as_dict(self) -> dict[str, float]:
        keys = (("p1", "p2", "p12") if self.mode is DetectionMode.SINGLE
                else ("p1", "p2a", "p2b", "p1_2a", "p1_2b", "p2a_2b", "p1_2a_2b"))
        return {k: getattr(self, k) for k in keys}


UNDEFINED = float("nan")


@dataclass(frozen=True)
class Metrics:
    """Figures of merit.  Fields whose denominators vanish are NaN and listed in `undefined`."""

    g12: float = UNDEFINED
    w: float = UNDEFINED
    pc: float = UNDEFINED
    qc: float = UNDEFINED
    p12: float = UNDEFINED
    naive_ratio: float = UNDEFINED
    undefined: frozenset = frozenset()


def _silent_prob(chi: float, silent: tuple[Channel, ...]) -> float:
    """P(every detector in `silent` sees zero photons in one trial).

    The pair-photon routings to distinct field-2 detectors are mutually exclusive per
    photon, so a field-2 photon misses all silent field-2 detectors with probability
    1 - sum of their efficiencies.  Backgrounds factor out as Poisson zeros.
    """
    x = 1.0
    y = 1.0
    bg = 0.0
    for ch in silent:
        bg += ch.bg_mean
        if ch.detector is Detector.D1:
            x -= ch.pair_eff
        else:
            y -= ch.pair_eff
    return math.exp(-bg) * tmss_pgf(chi, x, y)


def click_pattern_distribution(params: ModelParams, config: DetectionConfig) -> dict[tuple[bool, ...], float]:
    """Exact joint distribution of the per-trial click pattern across all detectors.

    Keys are tuples of booleans in channel order (D1 first).  Obtained from the
    silent-set probabilities by Moebius inversion over detector subsets.
    """
    chans = config.channels(params)
    k = len(chans)
    silent = {}
    for subset in itertools.product((False, True), repeat=k):
        chosen = tuple(c for c, s in zip(chans, subset) if s)
        silent[subset] = _silent_prob(params.chi, chosen)
    dist = {}
    for pattern in itertools.product((False, True), repeat=k):
        # pattern[i] == True means detector i clicked; sum over supersets of the
        # silent set with alternating signs.
        quiet = tuple(not c for c in pattern)
        total = 0.0
        free = [i for i in range(k) if not quiet[i]]
        for extra in itertools.product((False, True), repeat=len(free)):
            sub = list(quiet)
            for i, on in zip(free, extra):
                sub[i] = on
            total += (-1) ** sum(extra) * silent[tuple(sub)]
        dist[pattern] = max(total, 0.0)
    return dist


def _pgf_of_subset(chi: float, subset: tuple[Channel, ...]) -> float:
    """Pair-photon pgf argument product for a jointly-silent detector subset."""
    x = 1.0
    y = 1.0
    for ch in subset:
        if ch.detector is Detector.D1:
            x -= ch.pair_eff
        else:
            y -= ch.pair_eff
    return tmss_pgf(chi, x, y)


def click_statistics(params: ModelParams, config: DetectionConfig) -> Statistics:
    """Exact per-trial singles, coincidence, and triple click probabilities.

    Joint probabilities are assembled from products of singles plus excess
    correlation terms rather than raw inclusion-exclusion, so that independent
    channels (chi = 0, or vanishing shared-pair coupling) factorize exactly in
    floating point and the g12 = 1 / w = 1 limits hold to machine precision.
    """
    chans = config.channels(params)
    chi = params.chi
    B = [math.exp(-ch.bg_mean) for ch in chans]
    G = {}
    n = len(chans)
    for r in range(1, n + 1):
        for idx in itertools.combinations(range(n), r):
            G[idx] = _pgf_of_subset(chi, tuple(chans[i] for i in idx))
    p = [1.0 - B[i] * G[(i,)] for i in range(n)]

    def excess(i: int, j: int) -> float:
        # s_ij - s_i s_j, with the background factors pulled out so that it
        # vanishes identically when the pgf factorizes
        return B[i] * B[j] * (G[(i, j)] - G[(i,)] * G[(j,)])

    if config.mode is DetectionMode.SINGLE:
        return Statistics(
            mode=DetectionMode.SINGLE,
            p1=p[0],
            p2=p[1],
            p12=p[0] * p[1] + excess(0, 1),
        )

    d1a, d1b, dab = excess(0, 1), excess(0, 2), excess(1, 2)
    # third-order excess of the joint silence probability
    t = B[0] * B[1] * B[2] * (G[(0, 1, 2)]
                              - G[(0,)] * G[(1, 2)]
                              - G[(1,)] * G[(0, 2)]
                              - G[(2,)] * G[(0, 1)]
                              + 2.0 * G[(0,)] * G[(1,)] * G[(2,)])
    triple = (p[0] * p[1] * p[2]
              + d1a * p[2] + d1b * p[1] + dab * p[0]
              - t)
    return Statistics(
        mode=DetectionMode.SPLIT,
        p1=p[0],
        p2a=p[1],
        p2b=p[2],
        p1_2a=p[0] * p[1] + d1a,
        p1_2b=p[0] * p[2] + d1b,
        p2a_2b=p[1] * p[2] + dab,
        p1_2a_2b=triple,
    )


def p1_of_chi(params: ModelParams, chi):
    """Field-1 click probability as a vectorized function of chi (other params fixed)."""
    chi = np.asarray(chi, dtype=float)
    b1 = params.bg1_coherent * (chi / params.chi_ref) * params.eta1 + params.bg1_incoherent
    return 1.0 - np.exp(-b1) * (1.0 - chi) / (1.0 - chi * (1.0 - params.eta1))


def derived_metrics(stats: Statistics, params: ModelParams) -> Metrics:
    """Figures of merit from click probabilities.  Zero denominators yield flagged NaNs."""
    undef = set()
    g12 = pc = qc = p12 = naive = w = UNDEFINED

    if stats.mode is DetectionMode.SINGLE:
        p12 = stats.p12
        if stats.p1 > 0.0 and stats.p2 > 0.0:
            g12 = stats.p12 / (stats.p1 * stats.p2)
        else:
            undef.add("g12")
        if stats.p1 > 0.0:
            pc = stats.p12 / stats.p1
            qc = pc / params.eta2
            naive = stats.p2 / stats.p1
        else:
            undef.update({"pc", "qc", "naive_ratio"})
        undef.add("w")
    else:
        if stats.p1_2a > 0.0 and stats.p1_2b > 0.0:
            w = stats.p1 * stats.p1_2a_2b / (stats.p1_2a * stats.p1_2b)
        else:
            undef.add("w")
        undef.update({"g12", "pc", "qc", "p12", "naive_ratio"})

    return Metrics(g12=g12, w=w, pc=pc, qc=qc, p12=p12, naive_ratio=naive,
                   undefined=frozenset(undef))


def full_metrics(params: ModelParams) -> Metrics:
    """Metrics combining both detection configurations of the same source parameters."""
    single = derived_metrics(click_statistics(params, DetectionConfig(DetectionMode.SINGLE)), params)
    split = derived_metrics(click_statistics(params, DetectionConfig(DetectionMode.SPLIT)), params)
    undef = (single.undefined - {"w"}) | ({"w"} & split.undefined)
    return Metrics(g12=single.g12, w=split.w, pc=single.pc, qc=single.qc,
                   p12=single.p12, naive_ratio=single.naive_ratio, undefined=frozenset(undef))


# --- brute-force oracle ---------------------------------------------------------

def _binom_pmf(n: int, p: float) -> np.ndarray:
    k = np.arange(n + 1)
    if p == 0.0:
        out = np.zeros(n + 1)
        out[0] = 1.0
        return out
    if p == 1.0:
        out = np.zeros(n + 1)
        out[n] = 1.0
        return out
    logpmf = (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
              + k * math.log(p) + (n - k) * math.log1p(-p))
    return np.exp(logpmf)


def _trinom_pmf(n: int, pa: float, pb: float) -> np.ndarray:
    """Joint pmf of (ka, kb) for n trials with outcome probs (pa, pb, 1-pa-pb)."""
    ka = np.arange(n + 1)[:, None]
    kb = np.arange(n + 1)[None, :]
    rest = n - ka - kb
    valid = rest >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        loga = np.where(ka > 0, ka * np.log(pa if pa > 0 else 1.0), 0.0)
        logb = np.where(kb > 0, kb * np.log(pb if pb > 0 else 1.0), 0.0)
        logr = np.where((rest > 0) & valid, rest * math.log1p(-pa - pb) if pa + pb < 1 else -np.inf, 0.0)
    logpmf = (gammaln(n + 1) - gammaln(ka + 1) - gammaln(kb + 1)
              - gammaln(np.where(valid, rest, 0) + 1) + loga + logb + logr)
    pmf = np.where(valid, np.exp(logpmf), 0.0)
    if pa == 0.0:
        pmf[1:, :] = 0.0
        pmf[0, :] = _binom_pmf(n, pb)
    if pb == 0.0:
        pmf[:, 1:] = 0.0
        pmf[:, 0] = _binom_pmf(n, pa)
    return pmf


def _poisson_zero(mean: float, kmax: int) -> tuple[float, float]:
    """(P(0), P(>=1)) for a Poisson count, by explicit summation up to kmax.

    The tail beyond kmax is folded into the >=1 bucket, which is where it belongs
    for click detection; the returned pair always sums to 1.
    """
    k = np.arange(kmax + 1)
    pmf = np.exp(-mean + k * np.log(mean) - gammaln(k + 1)) if mean > 0 else None
    p0 = math.exp(-mean)
    if pmf is not None:
        # consistency of the truncated enumeration with the closed-form zero term
        assert abs(pmf[0] - p0) < 1e-13
    return p0, 1.0 - p0


def brute_force_statistics(params: ModelParams, config: DetectionConfig,
                           nmax: int = 60) -> tuple[Statistics, float]:
    """Independent oracle: enumerate pair number, thinning outcomes, and splitter routing.

    Returns (statistics, tail_mass) where tail_mass is the pair-number probability
    beyond nmax.  Warns if the tail exceeds 1e-12.
    """
    if nmax < 1:
        raise ValueError("nmax must be >= 1")
    chans = config.channels(params)
    chi = params.chi
    tail = chi ** (nmax + 1)
    if tail > 1e-12:
        warnings.warn(f"pair-number truncation tail {tail:.3e} exceeds 1e-12 at nmax={nmax}",
                      stacklevel=2)

    d1 = chans[0]
    z1_0, z1_1 = _poisson_zero(d1.bg_mean, nmax)

    split = config.mode is DetectionMode.SPLIT
    if split:
        ca, cb = chans[1], chans[2]
        za_0, za_1 = _poisson_zero(ca.bg_mean, nmax)
        zb_0, zb_1 = _poisson_zero(cb.bg_mean, nmax)
    else:
        c2 = chans[1]
        z2_0, z2_1 = _poisson_zero(c2.bg_mean, nmax)

    acc = {}

    def add(key, value):
        acc[key] = acc.get(key, 0.0) + value

    for n in range(nmax + 1):
        weight = (1.0 - chi) * chi ** n

        # field 1: survivors m ~ Binom(n, eta1); click iff m >= 1 or background fires
        pm = _binom_pmf(n, d1.pair_eff)
        c1 = pm[0] * z1_1 + (1.0 - pm[0])  # m=0 needs a background count; m>=1 always clicks

        if not split:
            pk = _binom_pmf(n, c2.pair_eff)
            c2p = pk[0] * z2_1 + (1.0 - pk[0])
            add("p1", weight * c1)
            add("p2", weight * c2p)
            add("p12", weight * c1 * c2p)  # conditionally independent given n
            continue

        pk = _trinom_pmf(n, ca.pair_eff, cb.pair_eff)
        pa0 = pk[0, :].sum()          # no pair photon reached arm a
        pb0 = pk[:, 0].sum()
        pab0 = pk[0, 0]
        cA = pa0 * za_1 + (1.0 - pa0)
        cB = pb0 * zb_1 + (1.0 - pb0)
        # joint: enumerate (ka==0, kb==0) cells, backgrounds independent per arm
        cAB = (pab0 * za_1 * zb_1
               + (pb0 - pab0) * zb_1           # ka>=1, kb=0: A clicks, B needs background
               + (pa0 - pab0) * za_1
               + (1.0 - pa0 - pb0 + pab0))
        add("p1", weight * c1)
        add("p2a", weight * cA)
        add("p2b", weight * cB)
        add("p1_2a", weight * c1 * cA)
        add("p1_2b", weight * c1 * cB)
        add("p2a_2b", weight * cAB)
        add("p1_2a_2b", weight * c1 * cAB)

    stats = Statistics(mode=config.mode, **acc)
    return stats, tail
