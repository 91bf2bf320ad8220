"""Model and run parameters, plus the flat key-value document format they travel in."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace


class DetectionMode(enum.Enum):
    SINGLE = "single"   # D1 + one field-2 detector D2
    SPLIT = "split"     # D1 + 50/50-split field-2 detectors D2a, D2b


class Detector(enum.IntEnum):
    D1 = 0
    D2 = 1
    D2A = 2
    D2B = 3

    @property
    def label(self) -> str:
        return {0: "D1", 1: "D2", 2: "D2a", 3: "D2b"}[self.value]

    @staticmethod
    def from_label(label: str) -> "Detector":
        table = {"D1": Detector.D1, "D2": Detector.D2, "D2a": Detector.D2A, "D2b": Detector.D2B}
        try:
            return table[label]
        except KeyError:
            raise ValueError(f"unknown detector label {label!r}") from None


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the pair source, its backgrounds, and the detection chain.

    chi is the pair-excitation probability per trial: the joint photon-number
    distribution of the source is P(n, n) = (1 - chi) chi^n.  Coherent background
    means are quoted at chi_ref and scale linearly with chi (they track the write
    power).  Incoherent background means are fixed per-trial Poisson means at the
    detectors (dark counts, stray light).
    """

    chi: float = 0.01
    bg1_coherent: float = 0.0       # mean photons/trial in the field-1 mode at the source output, at chi_ref
    bg2_coherent: float = 0.0       # same for field 2
    bg1_incoherent: float = 0.0     # mean counts/trial at detector D1, write-independent
    bg2_incoherent: float = 0.0     # same for the field-2 detection system
    chi_ref: float = 0.01
    retrieval_eff: float = 0.5      # probability the stored excitation emerges as a field-2 photon
    eta1: float = 0.25              # total field-1 detection efficiency
    eta2_path: float = 0.5          # field-2 transmission to the detector
    eta_apd: float = 0.5            # detector quantum efficiency
    bs_transmission: float = 0.8    # insertion transmission of the field-2 splitter (split mode only)
    bs_ratio: float = 0.5           # splitting ratio toward arm a

    def __post_init__(self):
        if not 0.0 <= self.chi < 1.0:
            raise ValueError(f"chi must be in [0, 1), got {self.chi}")
        if not 0.0 < self.chi_ref < 1.0:
            raise ValueError(f"chi_ref must be in (0, 1), got {self.chi_ref}")
        for name in ("bg1_coherent", "bg2_coherent", "bg1_incoherent", "bg2_incoherent"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("retrieval_eff", "eta1", "eta2_path", "eta_apd", "bs_transmission", "bs_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    @property
    def eta2(self) -> float:
        """Overall field-2 detection efficiency without the splitter (p_c = eta2 * q_c)."""
        return self.eta2_path * self.eta_apd

    def with_chi(self, chi: float) -> "ModelParams":
        return replace(self, chi=chi)


@dataclass(frozen=True)
class Channel:
    """One detector's view of the model: pair-photon click efficiency and background mean."""

    detector: Detector
    pair_eff: float      # probability a single source pair photon produces a click here
    bg_mean: float       # Poisson mean of background counts per trial


@dataclass(frozen=True)
class DetectionConfig:
    mode: DetectionMode = DetectionMode.SINGLE

    def channels(self, p: ModelParams) -> tuple[Channel, ...]:
        """Effective per-detector efficiencies and background means for this configuration.

        Field-1 pair photons are thinned by eta1.  Field-2 pair photons are thinned
        by retrieval efficiency, path transmission, (splitter, in split mode) and the
        APD efficiency.  Coherent backgrounds live in the source output modes and see
        the same optical losses (but not the retrieval factor); incoherent backgrounds
        are quoted at the detectors, split by bs_ratio between the two arms.
        """
        scale = p.chi / p.chi_ref
        b1 = p.bg1_coherent * scale * p.eta1 + p.bg1_incoherent
        d1 = Channel(Detector.D1, p.eta1, b1)
        if self.mode is DetectionMode.SINGLE:
            eff2 = p.eta2_path * p.eta_apd
            d2 = Channel(Detector.D2, p.retrieval_eff * eff2,
                         p.bg2_coherent * scale * eff2 + p.bg2_incoherent)
            return (d1, d2)
        eff_a = p.eta2_path * p.bs_transmission * p.bs_ratio * p.eta_apd
        eff_b = p.eta2_path * p.bs_transmission * (1.0 - p.bs_ratio) * p.eta_apd
        d2a = Channel(Detector.D2A, p.retrieval_eff * eff_a,
                      p.bg2_coherent * scale * eff_a + p.bg2_incoherent * p.bs_ratio)
        d2b = Channel(Detector.D2B, p.retrieval_eff * eff_b,
                      p.bg2_coherent * scale * eff_b + p.bg2_incoherent * (1.0 - p.bs_ratio))
        return (d1, d2a, d2b)


@dataclass(frozen=True)
class TrialSchedule:
    """Cyclic acquisition timing: bursts of trials inside periodic trap-off windows."""

    mot_rate_hz: float = 40.0
    window_ms: float = 5.0
    trials_per_window: int = 1100
    trial_period_ns: int = 2000
    read_delay_ns: int = 300
    write_offset_ns: int = 0

    def __post_init__(self):
        if self.mot_rate_hz <= 0 or self.trials_per_window < 1 or self.trial_period_ns < 1:
            raise ValueError("schedule values must be positive")
        if self.trials_per_window * self.trial_period_ns > self.window_ms * 1e6:
            raise ValueError("trial burst does not fit in the window")
        if not 0 <= self.write_offset_ns + self.read_delay_ns < self.trial_period_ns:
            raise ValueError("read delay falls outside the trial period")

    @property
    def trials_per_second(self) -> float:
        return self.mot_rate_hz * self.trials_per_window

    def trial_start_ns(self, trial_index):
        """Absolute schedule time (ns) at which a trial begins. Accepts arrays."""
        window = trial_index // self.trials_per_window
        in_window = trial_index % self.trials_per_window
        window_period_ns = 1e9 / self.mot_rate_hz
        return window * window_period_ns + in_window * self.trial_period_ns


@dataclass(frozen=True)
class SessionSpec:
    params: ModelParams
    config: DetectionConfig = field(default_factory=DetectionConfig)
    schedule: TrialSchedule = field(default_factory=TrialSchedule)
    n_trials: int = 44000
    seed: int = 0

    def __post_init__(self):
        if self.n_trials < 0:
            raise ValueError("n_trials must be >= 0")


# --- flat key-value document I/O ------------------------------------------------

_MODEL_KEYS = [f.name for f in fields(ModelParams)]
_SCHEDULE_KEYS = [f.name for f in fields(TrialSchedule)]
_INT_SCHEDULE_KEYS = {"trials_per_window", "trial_period_ns", "read_delay_ns", "write_offset_ns"}


def parse_keyvalues(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_keyvalues(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def params_to_text(p: ModelParams) -> str:
    return format_keyvalues({k: repr(getattr(p, k)) for k in _MODEL_KEYS})


def params_from_text(text: str) -> ModelParams:
    kv = parse_keyvalues(text)
    unknown = set(kv) - set(_MODEL_KEYS) - set(_SCHEDULE_KEYS)
    if unknown:
        raise ValueError(f"unknown parameter key(s): {', '.join(sorted(unknown))}")
    values = {k: float(v) for k, v in kv.items() if k in _MODEL_KEYS}
    return ModelParams(**values)


def schedule_from_text(text: str) -> TrialSchedule:
    kv = parse_keyvalues(text)
    values = {}
    for k, v in kv.items():
        if k in _SCHEDULE_KEYS:
            values[k] = int(v) if k in _INT_SCHEDULE_KEYS else float(v)
    return TrialSchedule(**values)
