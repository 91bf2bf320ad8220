import numpy as np
import pytest

from dlczsim import DetectionConfig, DetectionMode, ModelParams
from dlczsim.correlator import CountTable
from dlczsim.photon_model import click_pattern_distribution


def random_params(rng: np.random.Generator, chi_max: float = 0.9) -> ModelParams:
    """A random valid parameter set spanning the physically interesting ranges.

    For oracle-equivalence checks at 1e-10, pass chi_max <= 0.6 so that the
    enumeration truncation tail chi^61 stays below the tolerance.
    """
    return ModelParams(
        chi=float(rng.uniform(0.0, chi_max)),
        bg1_coherent=float(10 ** rng.uniform(-6, -1)),
        bg2_coherent=float(10 ** rng.uniform(-6, -1)),
        bg1_incoherent=float(10 ** rng.uniform(-7, -2)),
        bg2_incoherent=float(10 ** rng.uniform(-7, -2)),
        chi_ref=0.01,
        retrieval_eff=float(rng.uniform(0.05, 1.0)),
        eta1=float(rng.uniform(0.05, 1.0)),
        eta2_path=float(rng.uniform(0.05, 1.0)),
        eta_apd=float(rng.uniform(0.05, 1.0)),
        bs_transmission=float(rng.uniform(0.5, 1.0)),
        bs_ratio=float(rng.uniform(0.2, 0.8)),
    )


def table_from_multinomial(params: ModelParams, mode: DetectionMode, n_trials: int,
                           rng: np.random.Generator) -> CountTable:
    """Sample an exact count table from the analytic click-pattern distribution."""
    dist = click_pattern_distribution(params, DetectionConfig(mode))
    cats = list(dist)
    probs = np.array([dist[c] for c in cats])
    probs = probs / probs.sum()
    counts = rng.multinomial(n_trials, probs)
    lut = dict(zip(cats, counts))
    t = CountTable(mode=mode, n_trials=n_trials)
    if mode is DetectionMode.SINGLE:
        t.n1 = int(sum(v for c, v in lut.items() if c[0]))
        t.n2 = int(sum(v for c, v in lut.items() if c[1]))
        t.n12 = int(lut[(True, True)])
    else:
        t.n1 = int(sum(v for c, v in lut.items() if c[0]))
        t.n2a = int(sum(v for c, v in lut.items() if c[1]))
        t.n2b = int(sum(v for c, v in lut.items() if c[2]))
        t.n1_2a = int(sum(v for c, v in lut.items() if c[0] and c[1]))
        t.n1_2b = int(sum(v for c, v in lut.items() if c[0] and c[2]))
        t.n2a_2b = int(sum(v for c, v in lut.items() if c[1] and c[2]))
        t.n1_2a_2b = int(lut[(True, True, True)])
    return t


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
