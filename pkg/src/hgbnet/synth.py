"""Synthetic irregular EHR corpora with controllable per-block missingness
and a planted hemoglobin process that a closed-form least-squares oracle
can recover, so training and the interval analyses run without
credentialed data.

The hemoglobin at every visit is baseline(demographics) + a linear
combination of slowly-drifting latent signal features (current value plus
a previous-visit lag on the lab subset) + Gaussian noise. Masking is
missing-completely-at-random within each feature block, a deliberate
simplification that keeps the oracle analyzable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from . import data as D

EPOCH = datetime(2024, 1, 1)

VITAL_FEATURES = (*D.UC2_FEATURES, "vital_pulse_pressure")
SIGNAL_LABS = ("lab_iron", "lab_ferritin", "lab_rbc")
NOISE_LABS = ("lab_wbc", "lab_platelets", "lab_glucose",
              "lab_sodium", "lab_creatinine", "lab_bilirubin")
DEMO_FEATURES = ("demo_age_years", "demo_female", "demo_pregnant", "demo_child")
MED_FEATURES = ("med_iron_supplement", "med_epoetin")
ICD_FEATURES = ("icd_d50", "icd_d62")


@dataclass
class SynthConfig:
    n_patients: int = 1000
    seed: int = 0
    # per-block mean missing-rate targets
    missing_demo: float = 0.18
    missing_vitals: float = 0.25
    missing_labs: float = 0.51
    missing_meds: float = 0.95
    missing_icd: float = 0.93
    # visit schedule: log-normal gaps with a uniform far tail, clipped to
    # one hour .. seven days
    min_visits: int = 82
    max_visits: int = 120
    gap_median_days: float = 0.3
    gap_sigma: float = 1.0
    gap_uniform_share: float = 0.12
    gap_uniform_range: tuple = (0.5, 7.0)
    min_gap_days: float = 1.0 / 24.0
    max_gap_days: float = 7.0
    # latent drift of every non-constant feature
    ou_tau_days: float = 18.0
    feature_mean_sigma: float = 0.4
    # temporal persistence of the mask chain: 0 gives independent per-visit
    # draws, higher values give bursty observation runs (still independent
    # of the values, so the oracle stays unbiased)
    mask_persistence: float = 0.7
    # hemoglobin process
    signal_vital_coef: float = 0.6
    signal_lab_coef: float = 0.5
    lag_lab_coef: float = 0.2
    baseline_b0: float = 13.4
    baseline_female: float = -1.0
    baseline_pregnant: float = -0.6
    baseline_child: float = -1.0
    anemic_share: float = 0.15         # chronically-low subgroup
    anemic_shift: float = -1.1         # applied to signal-feature means
    snr: float = 4.0                   # signal-to-noise std ratio
    noise_sigma: float | None = None   # overrides the snr-derived value
    hgb_floor: float = 0.5

    def __post_init__(self):
        for rate in (self.missing_demo, self.missing_vitals, self.missing_labs,
                     self.missing_meds, self.missing_icd):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"missing rates must be in [0, 1), got {rate}")
        if len(self.feature_names()) < 8:
            raise ValueError("need at least 8 features")
        if not self.signal_features():
            raise ValueError("the dependence subset must be nonempty")

    def feature_names(self):
        return (*DEMO_FEATURES, *VITAL_FEATURES,
                D.DEFAULT_HGB_FEATURE, *SIGNAL_LABS, *NOISE_LABS,
                *MED_FEATURES, *ICD_FEATURES)

    def signal_features(self):
        return (*D.UC2_FEATURES, *SIGNAL_LABS)

    def block_of(self, name: str) -> str:
        if name.startswith("demo_"):
            return "demo"
        if name.startswith("vital_"):
            return "vitals"
        if name.startswith("lab_"):
            return "labs"
        if name.startswith("med_"):
            return "meds"
        return "icd"

    def missing_rate(self, name: str) -> float:
        return {"demo": self.missing_demo, "vitals": self.missing_vitals,
                "labs": self.missing_labs, "meds": self.missing_meds,
                "icd": self.missing_icd}[self.block_of(name)]


@dataclass
class PatientTruth:
    """Unmasked simulation record for one patient."""
    patient_id: str
    demographics: D.Demographics
    times_days: np.ndarray
    features: dict                     # name -> per-visit values (unmasked)
    det: np.ndarray                    # deterministic hemoglobin part
    noise_unit: np.ndarray             # standard-normal draws, scaled later
    mask: dict                         # name -> per-visit bool (observed)
    hgb: np.ndarray | None = None


def _sample_demographics(rng) -> D.Demographics:
    sex = "female" if rng.uniform() < 0.5 else "male"
    if rng.uniform() < 0.12:
        band = rng.integers(0, 3)
        lo, hi = ((0.6, 5.0), (5.0, 12.0), (12.0, 15.0))[band]
        age = float(rng.uniform(lo, hi))
    else:
        age = float(rng.uniform(15.0, 90.0))
    pregnant = (sex == "female" and 15.0 <= age < 50.0 and rng.uniform() < 0.3)
    return D.Demographics(age, sex, pregnant)


def _baseline(config: SynthConfig, demo: D.Demographics) -> float:
    return (config.baseline_b0
            + config.baseline_female * (demo.sex == "female")
            + config.baseline_pregnant * demo.pregnant
            + config.baseline_child * (demo.age_years < 15.0))


def _ou_path(rng, mu: float, gaps: np.ndarray, tau: float) -> np.ndarray:
    z = np.empty(len(gaps) + 1)
    z[0] = mu + rng.normal()
    for i, gap in enumerate(gaps):
        decay = math.exp(-gap / tau)
        z[i + 1] = mu + (z[i] - mu) * decay + rng.normal() * math.sqrt(1 - decay * decay)
    return z


def _simulate_patient(config: SynthConfig, index: int) -> PatientTruth:
    rng = np.random.default_rng([config.seed, index])
    demo = _sample_demographics(rng)
    n = int(rng.integers(config.min_visits, config.max_visits + 1))

    gaps = np.empty(n - 1)
    for i in range(n - 1):
        if rng.uniform() < config.gap_uniform_share:
            gaps[i] = rng.uniform(*config.gap_uniform_range)
        else:
            gaps[i] = math.exp(math.log(config.gap_median_days)
                               + config.gap_sigma * rng.normal())
    gaps = np.clip(gaps, config.min_gap_days, config.max_gap_days)
    times = np.concatenate([[0.0], np.cumsum(gaps)])

    anemic = rng.uniform() < config.anemic_share
    features: dict = {}
    features["demo_age_years"] = np.full(n, demo.age_years)
    features["demo_female"] = np.full(n, float(demo.sex == "female"))
    features["demo_pregnant"] = np.full(n, float(demo.pregnant))
    features["demo_child"] = np.full(n, float(demo.age_years < 15.0))

    signal = set(config.signal_features())
    for name in (*VITAL_FEATURES, *SIGNAL_LABS, *NOISE_LABS):
        mu = rng.normal() * config.feature_mean_sigma
        if name in signal and anemic:
            mu += config.anemic_shift
        features[name] = _ou_path(rng, mu, gaps, config.ou_tau_days)
    for name in (*MED_FEATURES, *ICD_FEATURES):
        features[name] = (rng.uniform(size=n) < 0.3).astype(float)

    det = np.full(n, _baseline(config, demo))
    for name in D.UC2_FEATURES:
        det += config.signal_vital_coef * features[name]
    for name in SIGNAL_LABS:
        z = features[name]
        det += config.signal_lab_coef * z
        lagged = np.concatenate([[z[0]], z[:-1]])
        det += config.lag_lab_coef * lagged

    noise_unit = rng.normal(size=n)
    mask = {}
    for name in config.feature_names():
        mask[name] = _mask_chain(rng, n, config.missing_rate(name),
                                 config.mask_persistence)

    return PatientTruth(f"p{index:05d}", demo, times, features, det,
                        noise_unit, mask)


def _mask_chain(rng, n: int, rate: float, persistence: float) -> np.ndarray:
    """Two-state chain with the exact stationary missing rate; persistence 0
    reduces to independent per-visit draws."""
    if rate <= 0.0:
        return np.ones(n, dtype=bool)
    to_missing = (1.0 - persistence) * rate
    to_observed = (1.0 - persistence) * (1.0 - rate)
    missing = rng.uniform() < rate
    out = np.empty(n, dtype=bool)
    for i in range(n):
        out[i] = not missing
        flip = rng.uniform() < (to_observed if missing else to_missing)
        if flip:
            missing = not missing
    return out


def simulate(config: SynthConfig):
    """All patient truths with hemoglobin finalized; the noise scale is
    derived from the corpus-wide deterministic spread when not pinned."""
    truths = [_simulate_patient(config, i) for i in range(config.n_patients)]
    if config.noise_sigma is not None:
        sigma = config.noise_sigma
    else:
        det_all = np.concatenate([t.det for t in truths])
        sigma = float(det_all.std()) / config.snr
    for t in truths:
        t.hgb = np.maximum(t.det + sigma * t.noise_unit, config.hgb_floor)
        t.features[D.DEFAULT_HGB_FEATURE] = t.hgb
    return truths, sigma


def _to_series(truth: PatientTruth, config: SynthConfig) -> D.PatientSeries:
    visits = []
    for v in range(len(truth.times_days)):
        values = {}
        for name in config.feature_names():
            if truth.mask[name][v]:
                values[name] = float(truth.features[name][v])
        visits.append(D.Visit(EPOCH + timedelta(days=float(truth.times_days[v])),
                              values))
    return D.PatientSeries(truth.patient_id, truth.demographics, visits)


def generate(config: SynthConfig):
    """Masked corpus of PatientSeries. Warns (but still generates) when the
    planted process fails to span all four anemia classes."""
    truths, _ = simulate(config)
    corpus = [_to_series(t, config) for t in truths]
    seen = set()
    for t in truths:
        for hgb in t.hgb:
            seen.add(D.label_anemia(float(hgb), t.demographics))
    if seen != {0, 1, 2, 3}:
        warnings.warn(f"synthetic corpus covers anemia classes {sorted(seen)} "
                      f"only; adjust baselines or the anemic share")
    return corpus


def oracle_design_matrix(truths, config: SynthConfig):
    """Per-visit rows of the exact generative regressors: demographic
    indicators, the signal features at the visit, and the lagged labs."""
    rows, targets, owners = [], [], []
    for t in truths:
        n = len(t.times_days)
        demo_cols = np.column_stack([
            np.ones(n),
            t.features["demo_female"],
            t.features["demo_pregnant"],
            t.features["demo_child"],
        ])
        sig = np.column_stack([t.features[name] for name in config.signal_features()])
        lag = np.column_stack([
            np.concatenate([[t.features[name][0]], t.features[name][:-1]])
            for name in SIGNAL_LABS])
        rows.append(np.hstack([demo_cols, sig, lag]))
        targets.append(t.hgb)
        owners.extend([t.patient_id] * n)
    return np.vstack(rows), np.concatenate(targets), np.array(owners)


def oracle_r2(corpus, config: SynthConfig) -> float:
    """Held-out R² of the closed-form least-squares fit on the unmasked
    planted features; upper-bounds what any model can reach."""
    del corpus  # the truth is regenerated from the config seed
    truths, _ = simulate(config)
    x, y, owners = oracle_design_matrix(truths, config)
    patients = sorted(set(owners))
    rng = np.random.default_rng(config.seed + 1)
    rng.shuffle(patients)
    n_test = max(1, len(patients) // 5)
    test_patients = set(patients[:n_test])
    test = np.isin(owners, list(test_patients))
    coef, *_ = np.linalg.lstsq(x[~test], y[~test], rcond=None)
    pred = x[test] @ coef
    resid = y[test] - pred
    ss_tot = ((y[test] - y[test].mean()) ** 2).sum()
    if ss_tot == 0:
        return 1.0 if (resid == 0).all() else 0.0
    return float(1.0 - (resid ** 2).sum() / ss_tot)
