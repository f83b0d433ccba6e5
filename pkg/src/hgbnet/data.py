"""Clinical event streams to model-ready windows.

Covers ingestion of the events/demographics file formats, WHO anemia
labeling, preprocessing (series splitting at oversized gaps, record-count
filtering, one-hot encoding, fold-safe normalization), the four-tensor
window representation, stratified fold manifests, and interval buckets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

DEFAULT_HGB_FEATURE = "lab_hemoglobin"

# Non-invasive measurements that may be supplied at the prediction visit
# under use case 2.
UC2_FEATURES = ("vital_spo2", "vital_temperature", "vital_heart_rate",
                "vital_respiratory_rate", "vital_blood_pressure")

BUCKET_GRID_DAYS = 0.2
MAX_BUCKET_DAYS = 7.0

SEVERITY_NAMES = ("non_anemia", "mild_anemia", "moderate_anemia", "severe_anemia")


class SchemaError(ValueError):
    """File-format violation; message is one line naming file, line, field."""

    def __init__(self, path, line_no, fld, problem):
        super().__init__(f"{path}:{line_no}: field '{fld}': {problem}")
        self.path, self.line_no, self.field = str(path), line_no, fld


class UnsupportedPopulationError(ValueError):
    pass


class PreprocessError(ValueError):
    pass


class InsufficientHistoryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# domain types


@dataclass
class Demographics:
    age_years: float
    sex: str                       # "male" | "female"
    pregnant: bool = False
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sex not in ("male", "female"):
            raise ValueError(f"sex must be male/female, got {self.sex!r}")
        if self.age_years < 0:
            raise ValueError("age_years must be non-negative")
        if self.pregnant and self.sex != "female":
            raise ValueError("pregnant implies sex == female")


@dataclass
class Visit:
    timestamp: datetime
    values: dict                   # feature name -> float or category token


@dataclass
class PatientSeries:
    patient_id: str
    demographics: Demographics
    visits: list

    def __post_init__(self):
        times = [v.timestamp for v in self.visits]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"{self.patient_id}: timestamps must strictly increase")

    def hemoglobin_series(self, feature: str = DEFAULT_HGB_FEATURE):
        """(timestamps, values) of the visits where hemoglobin was measured."""
        ts, vals = [], []
        for v in self.visits:
            raw = v.values.get(feature)
            if isinstance(raw, float):
                ts.append(v.timestamp)
                vals.append(raw)
        return ts, vals


def days_between(a: datetime, b: datetime) -> float:
    return (b - a).total_seconds() / 86400.0


# ---------------------------------------------------------------------------
# WHO anemia thresholds (g/dL)
#
# Per demographic row: (severe below, moderate band top, non-anemia at or
# above). The printed bands are closed at their endpoints; a value inside a
# printed gap (e.g. 12.95 for men) gets the milder adjacent band, which the
# `> moderate_top` test below implements.

_WHO_ROWS = {
    "age_6_59_months": (7.0, 9.9, 11.0),
    "age_5_11_years": (8.0, 10.9, 11.5),
    "age_12_14_years": (8.0, 10.9, 12.0),
    "nonpregnant_women_15plus": (8.0, 10.9, 12.0),
    "pregnant_women": (7.0, 9.9, 11.0),
    "men_15plus": (8.0, 10.9, 13.0),
}


def who_row(demo: Demographics) -> str:
    if demo.age_years < 0.5:
        raise UnsupportedPopulationError(
            f"anemia thresholds start at 6 months of age, got {demo.age_years}")
    if demo.pregnant:
        return "pregnant_women"
    if demo.age_years < 5:
        return "age_6_59_months"
    if demo.age_years < 12:
        return "age_5_11_years"
    if demo.age_years < 15:
        return "age_12_14_years"
    return "men_15plus" if demo.sex == "male" else "nonpregnant_women_15plus"


def label_anemia(hgb: float, demo: Demographics) -> int:
    """Severity class 0..3 (non/mild/moderate/severe) from a hemoglobin
    level in g/dL and the demographic threshold row."""
    if not (math.isfinite(hgb) and hgb > 0):
        raise ValueError(f"hemoglobin must be finite and positive, got {hgb}")
    severe_below, moderate_top, non_at_least = _WHO_ROWS[who_row(demo)]
    if hgb >= non_at_least:
        return 0
    if hgb > moderate_top:
        return 1
    if hgb >= severe_below:
        return 2
    return 3


# ---------------------------------------------------------------------------
# events / demographics files


def write_events(path, corpus) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "timestamp", "feature", "value"])
        for series in corpus:
            for visit in series.visits:
                ts = visit.timestamp.isoformat()
                for name in sorted(visit.values):
                    w.writerow([series.patient_id, ts, name, visit.values[name]])


def write_demographics(path, corpus) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "age_years", "sex", "pregnant"])
        for series in corpus:
            d = series.demographics
            row = [series.patient_id, repr(d.age_years), d.sex,
                   "true" if d.pregnant else "false"]
            row += [f"{k}={v}" for k, v in sorted(d.extras.items())]
            w.writerow(row)


def _parse_value(token: str):
    """Numeric if it parses as a finite float, else a category token."""
    try:
        v = float(token)
    except ValueError:
        return token
    if not math.isfinite(v):
        return None
    return v


def load_events(path) -> dict:
    """patient_id -> sorted {timestamp -> {feature: value}}."""
    per_patient: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if line_no == 1 and row and row[0] == "patient_id":
                continue
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(path, line_no, "row",
                                  f"expected 4 columns, got {len(row)}")
            pid, ts_raw, feature, value_raw = row
            if not pid:
                raise SchemaError(path, line_no, "patient_id", "empty")
            try:
                ts = datetime.fromisoformat(ts_raw)
            except ValueError:
                raise SchemaError(path, line_no, "timestamp",
                                  f"not ISO-8601: {ts_raw!r}") from None
            if not feature:
                raise SchemaError(path, line_no, "feature", "empty")
            value = _parse_value(value_raw)
            if value is None:
                raise SchemaError(path, line_no, "value",
                                  f"non-finite measurement: {value_raw!r}")
            per_patient.setdefault(pid, {}).setdefault(ts, {})[feature] = value
    return per_patient


def load_demographics(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if line_no == 1 and row and row[0] == "patient_id":
                continue
            if not row:
                continue
            if len(row) < 4:
                raise SchemaError(path, line_no, "row",
                                  f"expected at least 4 columns, got {len(row)}")
            pid, age_raw, sex, preg_raw = row[:4]
            try:
                age = float(age_raw)
            except ValueError:
                raise SchemaError(path, line_no, "age_years",
                                  f"not a number: {age_raw!r}") from None
            if sex not in ("male", "female"):
                raise SchemaError(path, line_no, "sex", f"got {sex!r}")
            if preg_raw not in ("true", "false", "0", "1"):
                raise SchemaError(path, line_no, "pregnant", f"got {preg_raw!r}")
            extras = {}
            for extra in row[4:]:
                if "=" not in extra:
                    raise SchemaError(path, line_no, "extras",
                                      f"expected key=value, got {extra!r}")
                k, v = extra.split("=", 1)
                extras[k] = v
            try:
                out[pid] = Demographics(age, sex, preg_raw in ("true", "1"), extras)
            except ValueError as exc:
                raise SchemaError(path, line_no, "pregnant", str(exc)) from None
    return out


def load_corpus(events_path, demographics_path) -> list:
    events = load_events(events_path)
    demos = load_demographics(demographics_path)
    corpus = []
    for pid in sorted(events):
        if pid not in demos:
            raise SchemaError(demographics_path, 0, "patient_id",
                              f"no demographics for {pid!r}")
        visits = [Visit(ts, vals) for ts, vals in sorted(events[pid].items())]
        corpus.append(PatientSeries(pid, demos[pid], visits))
    return corpus


# ---------------------------------------------------------------------------
# preprocessing


@dataclass
class PreprocessConfig:
    min_records: int = 80
    max_gap_days: float = 7.0
    hgb_feature: str = DEFAULT_HGB_FEATURE


@dataclass
class Column:
    name: str                      # column name, e.g. "vital_spo2" or "demo_site=A"
    source: str                    # originating feature
    kind: str                      # "numeric" | "onehot"
    category: str | None = None


class FeatureCatalog:
    """Ordered post-encoding feature columns plus the hemoglobin column."""

    def __init__(self, columns: list, hgb_feature: str):
        self.columns = columns
        self.hgb_feature = hgb_feature
        self.index = {c.name: i for i, c in enumerate(columns)}
        if hgb_feature not in self.index:
            raise PreprocessError(f"hemoglobin feature {hgb_feature!r} absent "
                                  f"from the catalog")
        self.hgb_index = self.index[hgb_feature]
        self._by_source: dict = {}
        for i, c in enumerate(columns):
            self._by_source.setdefault(c.source, []).append(i)

    @property
    def k(self) -> int:
        return len(self.columns)

    def encode_visit(self, values: dict):
        """(K,) value vector with NaN at unobserved entries, and the 0/1 mask."""
        x = np.full(self.k, np.nan)
        m = np.zeros(self.k)
        for source, token in values.items():
            idxs = self._by_source.get(source)
            if not idxs:
                continue
            first = self.columns[idxs[0]]
            if first.kind == "numeric":
                if isinstance(token, float):
                    x[idxs[0]] = token
                    m[idxs[0]] = 1.0
                continue
            # categorical: all of its one-hot columns become observed;
            # an unknown category maps to all-zeros.
            for i in idxs:
                x[i] = 1.0 if str(token) == self.columns[i].category else 0.0
                m[i] = 1.0
        return x, m


def split_at_oversized_gaps(series: PatientSeries, max_gap_days: float) -> PatientSeries:
    """Keep the most recent run of visits whose consecutive gaps all stay
    within the maximum-interval rule."""
    visits = series.visits
    start = 0
    for i in range(1, len(visits)):
        if days_between(visits[i - 1].timestamp, visits[i].timestamp) > max_gap_days:
            start = i
    if start == 0:
        return series
    return PatientSeries(series.patient_id, series.demographics, visits[start:])


def build_catalog(corpus, config: PreprocessConfig) -> FeatureCatalog:
    numeric_seen: set = set()
    categories: dict = {}
    for series in corpus:
        for visit in series.visits:
            for name, token in visit.values.items():
                if isinstance(token, float):
                    numeric_seen.add(name)
                else:
                    categories.setdefault(name, set()).add(str(token))
    # a feature with any non-numeric observation is treated as categorical
    numeric_seen -= set(categories)
    columns = []
    for name in sorted(numeric_seen | set(categories)):
        if name in categories:
            for cat in sorted(categories[name]):
                columns.append(Column(f"{name}={cat}", name, "onehot", cat))
        else:
            columns.append(Column(name, name, "numeric"))
    if not columns:
        raise PreprocessError("no observed features in corpus")
    return FeatureCatalog(columns, config.hgb_feature)


def preprocess(corpus, config: PreprocessConfig | None = None):
    """Apply the gap rule and the record-count filter, then derive the
    feature catalog from what was actually observed."""
    config = config or PreprocessConfig()
    if not corpus:
        raise PreprocessError("empty corpus")
    kept, dropped_short = [], 0
    for series in corpus:
        trimmed = split_at_oversized_gaps(series, config.max_gap_days)
        if len(trimmed.visits) >= config.min_records:
            kept.append(trimmed)
        else:
            dropped_short += 1
    if not kept:
        raise PreprocessError(
            f"no patients survive preprocessing: {len(corpus)} in, "
            f"{dropped_short} below {config.min_records} records after "
            f"gap-splitting at {config.max_gap_days} days")
    return kept, build_catalog(kept, config)


# ---------------------------------------------------------------------------
# model inputs


@dataclass
class ModelInput:
    """One prediction window: the four aligned inputs plus targets.

    `x` keeps NaN poison at unobserved entries; downstream code must
    resolve them through the mask, never read them.
    """
    sample_id: str
    patient_id: str
    x: np.ndarray                  # T x K, raw values, NaN where m == 0
    e: np.ndarray                  # T x K feature intervals, days
    m: np.ndarray                  # T x K missing indicators
    delta: np.ndarray              # T visit intervals to window end, days
    delta_max: float
    target_hgb: float              # g/dL
    target_class: int
    gap_days: float                # window end -> target visit
    bucket: float
    uc2_values: np.ndarray | None = None   # L extras at the target visit
    uc2_mask: np.ndarray | None = None


def interval_bucket(gap_days: float) -> float:
    """Discretize a window-end-to-target gap onto the 0.2-day grid
    (ceiling; gap 0 lands in the smallest bucket)."""
    if gap_days < 0:
        raise ValueError("gap must be non-negative")
    k = max(1, math.ceil(gap_days / BUCKET_GRID_DAYS - 1e-9))
    return round(k * BUCKET_GRID_DAYS, 10)


def build_input(series: PatientSeries, catalog: FeatureCatalog, window: int,
                use_case: int, target_index: int | None = None) -> ModelInput:
    """Window = the `window` visits immediately preceding the target visit
    (default target: the last visit). The target visit supplies the labels
    and, under use case 2, the extra measurements."""
    if use_case not in (1, 2):
        raise ValueError(f"use_case must be 1 or 2, got {use_case}")
    n = len(series.visits)
    if target_index is None:
        target_index = n - 1
    if target_index < window:
        raise InsufficientHistoryError(
            f"{series.patient_id}: need {window} visits before the target, "
            f"have {target_index}")
    target = series.visits[target_index]
    raw_hgb = target.values.get(catalog.hgb_feature)
    if not isinstance(raw_hgb, float):
        raise InsufficientHistoryError(
            f"{series.patient_id}: target visit lacks hemoglobin")
    window_visits = series.visits[target_index - window:target_index]
    t_end = window_visits[-1].timestamp
    x, m, e, delta, delta_max = _window_arrays(window_visits, catalog)

    uc2_values = uc2_mask = None
    if use_case == 2:
        uc2_values = np.zeros(len(UC2_FEATURES))
        uc2_mask = np.zeros(len(UC2_FEATURES))
        for j, name in enumerate(UC2_FEATURES):
            raw = target.values.get(name)
            if isinstance(raw, float):
                uc2_values[j] = raw
                uc2_mask[j] = 1.0

    gap = days_between(t_end, target.timestamp)
    return ModelInput(
        sample_id=f"{series.patient_id}:{target_index}",
        patient_id=series.patient_id,
        x=x, e=e, m=m, delta=delta, delta_max=delta_max,
        target_hgb=float(raw_hgb),
        target_class=label_anemia(float(raw_hgb), series.demographics),
        gap_days=gap, bucket=interval_bucket(gap),
        uc2_values=uc2_values, uc2_mask=uc2_mask,
    )


def _window_arrays(window_visits, catalog: FeatureCatalog):
    """x (NaN-poisoned), m, e (staleness to the window end), delta, delta_max."""
    window = len(window_visits)
    t_end = window_visits[-1].timestamp
    k = catalog.k
    x = np.full((window, k), np.nan)
    m = np.zeros((window, k))
    delta = np.zeros(window)
    for t, visit in enumerate(window_visits):
        x[t], m[t] = catalog.encode_visit(visit.values)
        delta[t] = days_between(visit.timestamp, t_end)
    delta_max = float(delta.max())
    if delta_max == 0.0:
        delta_max = 1.0
    e = np.full((window, k), delta_max)
    last_seen = np.full(k, -1, dtype=np.int64)
    for t in range(window):
        observed = m[t] == 1.0
        last_seen[observed] = t
        has_prior = last_seen >= 0
        e[t, has_prior] = delta[last_seen[has_prior]]
    return x, m, e, delta, delta_max


def build_history_input(series: PatientSeries, catalog: FeatureCatalog,
                        window: int, extras: dict | None = None) -> ModelInput:
    """Window over the last `window` visits for predicting the next moment;
    no target visit exists yet. `extras` carries any already-measured
    next-visit values (use case 2)."""
    if len(series.visits) < window:
        raise InsufficientHistoryError(
            f"insufficient history: {series.patient_id} has "
            f"{len(series.visits)} visits, the model window needs {window}")
    x, m, e, delta, delta_max = _window_arrays(series.visits[-window:], catalog)

    uc2_values = np.zeros(len(UC2_FEATURES))
    uc2_mask = np.zeros(len(UC2_FEATURES))
    for j, name in enumerate(UC2_FEATURES):
        raw = (extras or {}).get(name)
        if raw is not None:
            uc2_values[j] = float(raw)
            uc2_mask[j] = 1.0

    return ModelInput(
        sample_id=f"{series.patient_id}:next", patient_id=series.patient_id,
        x=x, e=e, m=m, delta=delta, delta_max=delta_max,
        target_hgb=float("nan"), target_class=0, gap_days=0.0,
        bucket=BUCKET_GRID_DAYS, uc2_values=uc2_values, uc2_mask=uc2_mask)


def build_samples(corpus, catalog: FeatureCatalog, window: int, use_case: int,
                  max_per_patient: int = 2):
    """All eligible windows, at most `max_per_patient` per patient (the
    most recent targets). Targets lacking hemoglobin are skipped; the skip
    reasons come back as a counter."""
    samples, skipped = [], {"no_hgb_target": 0, "unsupported_population": 0}
    for series in corpus:
        eligible = []
        for j in range(window, len(series.visits)):
            if isinstance(series.visits[j].values.get(catalog.hgb_feature), float):
                eligible.append(j)
            else:
                skipped["no_hgb_target"] += 1
        for j in eligible[-max_per_patient:]:
            try:
                samples.append(build_input(series, catalog, window, use_case, j))
            except UnsupportedPopulationError:
                skipped["unsupported_population"] += 1
    return samples, skipped


# ---------------------------------------------------------------------------
# stratified folds


@dataclass
class FoldManifest:
    n_folds: int
    ratios: tuple
    seed: int
    assignments: list              # fold -> {sample_id: "train"|"val"|"test"}
    classes: dict                  # sample_id -> class

    def ids(self, fold: int, split: str):
        return [sid for sid, s in self.assignments[fold].items() if s == split]

    def class_counts(self, fold: int, split: str):
        counts = [0] * 4
        for sid in self.ids(fold, split):
            counts[self.classes[sid]] += 1
        return counts


def make_folds(samples, n_folds: int = 5, ratios=(0.72, 0.08, 0.20),
               seed: int = 0) -> FoldManifest:
    """Stratified by target class; every sample is a test sample in exactly
    one fold, and train/val splits of the remainder keep the configured
    ratios per class."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    by_class: dict = {}
    for s in samples:
        by_class.setdefault(s.target_class, []).append(s.sample_id)
    for cls, ids in sorted(by_class.items()):
        if len(ids) < n_folds:
            raise ValueError(
                f"class {cls} ({SEVERITY_NAMES[cls]}) has {len(ids)} samples, "
                f"fewer than {n_folds} folds")

    rng = np.random.default_rng(seed)
    assignments = [dict() for _ in range(n_folds)]
    val_frac = ratios[1] / (ratios[0] + ratios[1])
    for cls in sorted(by_class):
        ids = list(by_class[cls])
        rng.shuffle(ids)
        chunks = np.array_split(np.array(ids, dtype=object), n_folds)
        for f in range(n_folds):
            test_ids = list(chunks[f])
            rest = [i for c in range(n_folds) if c != f for i in chunks[c]]
            n_val = int(round(val_frac * len(rest)))
            val_ids = rest[:n_val]
            train_ids = rest[n_val:]
            for sid in train_ids:
                assignments[f][sid] = "train"
            for sid in val_ids:
                assignments[f][sid] = "val"
            for sid in test_ids:
                assignments[f][sid] = "test"

    classes = {s.sample_id: s.target_class for s in samples}
    return FoldManifest(n_folds, tuple(ratios), seed, assignments, classes)


# ---------------------------------------------------------------------------
# fold-safe normalization


@dataclass
class NormStats:
    mean: np.ndarray               # (K,)
    std: np.ndarray                # (K,), guarded below by 1e-8
    n_entries: np.ndarray          # (K,) observed entries that contributed
    sample_ids: tuple              # samples whose windows contributed


def compute_norm_stats(samples, train_ids) -> NormStats:
    """Per-column mean/std over observed window entries of the training
    split only (constant columns normalize to zero via the std guard)."""
    train_ids = set(train_ids)
    chosen = [s for s in samples if s.sample_id in train_ids]
    if not chosen:
        raise ValueError("no training samples for normalization")
    k = chosen[0].x.shape[1]
    total = np.zeros(k)
    total_sq = np.zeros(k)
    count = np.zeros(k)
    for s in chosen:
        obs = s.m == 1.0
        vals = np.where(obs, s.x, 0.0)
        total += vals.sum(axis=0)
        total_sq += (vals * vals).sum(axis=0)
        count += obs.sum(axis=0)
    safe = np.maximum(count, 1.0)
    mean = total / safe
    var = np.maximum(total_sq / safe - mean ** 2, 0.0)
    std = np.maximum(np.sqrt(var), 1e-8)
    mean[count == 0] = 0.0
    return NormStats(mean, std, count,
                     tuple(sorted(s.sample_id for s in chosen)))


def normalize_window(sample: ModelInput, stats: NormStats, fill: np.ndarray | None = None):
    """Resolve the poison through the mask: z-score observed entries,
    substitute `fill` (default 0) elsewhere. Never reads masked slots."""
    z = (sample.x - stats.mean) / stats.std
    if fill is None:
        fill = np.zeros(sample.x.shape[1])
    return np.where(sample.m == 1.0, z, fill)


def normalize_uc2(sample: ModelInput, stats: NormStats, catalog: FeatureCatalog):
    vals = np.zeros(len(UC2_FEATURES))
    mask = np.zeros(len(UC2_FEATURES))
    if sample.uc2_values is None:
        return vals, mask
    for j, name in enumerate(UC2_FEATURES):
        idx = catalog.index.get(name)
        if idx is None or sample.uc2_mask[j] == 0.0:
            continue
        vals[j] = (sample.uc2_values[j] - stats.mean[idx]) / stats.std[idx]
        mask[j] = 1.0
    return vals, mask


# ---------------------------------------------------------------------------
# structured-text serialization


def format_catalog(catalog: FeatureCatalog, stats_per_fold=None) -> str:
    lines = ["format_version=1", f"hgb_feature={catalog.hgb_feature}",
             f"n_columns={catalog.k}", "[columns]"]
    for c in catalog.columns:
        cat = c.category if c.category is not None else "-"
        lines.append(f"{c.name}\t{c.source}\t{c.kind}\t{cat}")
    if stats_per_fold:
        for f, stats in enumerate(stats_per_fold):
            lines.append(f"[fold{f}_stats]")
            for i in range(catalog.k):
                lines.append(f"{i}\t{float(stats.mean[i])!r}\t{float(stats.std[i])!r}"
                             f"\t{int(stats.n_entries[i])}")
    return "\n".join(lines) + "\n"


def parse_catalog(text: str):
    lines = text.splitlines()
    if not lines or lines[0] != "format_version=1":
        raise SchemaError("<catalog>", 1, "format_version", "missing or unsupported")
    hgb_feature = lines[1].split("=", 1)[1]
    columns, stats, current = [], {}, None
    for line in lines[3:]:
        if line.startswith("["):
            current = line.strip("[]")
            if current.endswith("_stats"):
                stats[current] = []
            continue
        if not line:
            continue
        parts = line.split("\t")
        if current == "columns":
            name, source, kind, cat = parts
            columns.append(Column(name, source, kind, None if cat == "-" else cat))
        elif current and current.endswith("_stats"):
            stats[current].append((float(parts[1]), float(parts[2]), int(parts[3])))
    catalog = FeatureCatalog(columns, hgb_feature)
    stats_per_fold = []
    for f in range(len(stats)):
        rows = stats[f"fold{f}_stats"]
        stats_per_fold.append(NormStats(
            mean=np.array([r[0] for r in rows]),
            std=np.array([r[1] for r in rows]),
            n_entries=np.array([r[2] for r in rows]),
            sample_ids=()))
    return catalog, stats_per_fold


def format_manifest(manifest: FoldManifest) -> str:
    lines = ["format_version=1",
             f"n_folds={manifest.n_folds}",
             f"ratios={','.join(repr(r) for r in manifest.ratios)}",
             f"seed={manifest.seed}",
             "[assignments]"]
    for sid in sorted(manifest.classes):
        splits = "\t".join(manifest.assignments[f][sid]
                           for f in range(manifest.n_folds))
        lines.append(f"{sid}\t{manifest.classes[sid]}\t{splits}")
    lines.append("[class_counts]")
    for f in range(manifest.n_folds):
        for split in ("train", "val", "test"):
            counts = ",".join(str(c) for c in manifest.class_counts(f, split))
            lines.append(f"fold{f}\t{split}\t{counts}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> FoldManifest:
    lines = text.splitlines()
    if not lines or lines[0] != "format_version=1":
        raise SchemaError("<manifest>", 1, "format_version", "missing or unsupported")
    n_folds = int(lines[1].split("=", 1)[1])
    ratios = tuple(float(x) for x in lines[2].split("=", 1)[1].split(","))
    seed = int(lines[3].split("=", 1)[1])
    assignments = [dict() for _ in range(n_folds)]
    classes = {}
    section = None
    for line in lines[4:]:
        if line.startswith("["):
            section = line.strip("[]")
            continue
        if section != "assignments" or not line:
            continue
        parts = line.split("\t")
        sid, cls = parts[0], int(parts[1])
        classes[sid] = cls
        for f in range(n_folds):
            assignments[f][sid] = parts[2 + f]
    return FoldManifest(n_folds, ratios, seed, assignments, classes)
