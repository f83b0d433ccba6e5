"""Acceptance suite: one test per exit criterion, each at its stated
tolerance, printing a pass/fail line. The training-based criteria share
one session of 25 runs over the default synthetic corpus (5 variants x
5 seeds); run with `pytest tests/test_acceptance.py -v -s` to watch
progress."""

import math
import time

import numpy as np
import pytest

from hgbnet import autodiff as ad
from hgbnet import cli
from hgbnet import data as D
from hgbnet import metrics as MT
from hgbnet import model as M
from hgbnet import synth as S
from hgbnet import training as T

WINDOW = 40
HIDDEN = 32
SEEDS = (0, 1, 2, 3, 4)
MAX_EPOCHS = 200

VARIANTS = {
    "full_uc1": dict(),
    "nd": dict(at1=False, at2=False, at3=False),
    "nd_at2": dict(at1=False, at2=True, at3=False),
    "im_mean": dict(use_nandense=False),
    "full_uc2": dict(use_case=2),
}


def announce(number, name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {number} {name}: {status} {detail}".rstrip())
    assert passed, f"criterion {number} ({name}) failed: {detail}"


# ---------------------------------------------------------------------------
# 1. WHO labeling


def test_01_who_labeling_boundaries():
    t0 = time.monotonic()
    infant = D.Demographics(3.0, "male")
    child5 = D.Demographics(8.0, "female")
    child12 = D.Demographics(13.0, "male")
    pregnant = D.Demographics(27.0, "female", pregnant=True)
    woman = D.Demographics(40.0, "female")
    man = D.Demographics(40.0, "male")

    low_rows = [infant, pregnant]          # severe < 7.0, non-anemia >= 11.0
    cases = []
    for demo in low_rows:
        cases += [(demo, h, c) for h, c in (
            (5.0, 3), (6.9, 3), (7.0, 2), (9.9, 2), (9.95, 1), (10.0, 1),
            (10.9, 1), (10.95, 1), (11.0, 0), (14.0, 0))]
    for demo, non in ((child5, 11.5), (child12, 12.0), (woman, 12.0)):
        mild_top = round(non - 0.1, 2)
        cases += [(demo, h, c) for h, c in (
            (5.0, 3), (7.9, 3), (8.0, 2), (10.9, 2), (10.95, 1), (11.0, 1),
            (mild_top, 1), (round(non - 0.05, 3), 1), (non, 0), (16.0, 0))]
    cases += [(man, h, c) for h, c in (
        (5.0, 3), (7.9, 3), (8.0, 2), (10.9, 2), (10.95, 1), (11.0, 1),
        (12.9, 1), (12.95, 1), (13.0, 0), (17.0, 0))]

    failures = [(demo.age_years, demo.sex, demo.pregnant, h, want,
                 D.label_anemia(h, demo))
                for demo, h, want in cases if D.label_anemia(h, demo) != want]
    elapsed = time.monotonic() - t0
    announce(1, "WHO labeling", not failures and elapsed < 1.0,
             f"({len(cases)} boundary probes, {elapsed:.3f}s) {failures[:3]}")


# ---------------------------------------------------------------------------
# 2. metric oracle on the published confusion counts


def test_02_metric_oracle():
    t0 = time.monotonic()
    totals = np.array([1000, 371, 488, 64])
    diagonal = np.array([904, 249, 446, 44])
    serious_rows = np.array([6, 0, 3, 0])
    conf = np.zeros((4, 4), dtype=np.int64)
    np.fill_diagonal(conf, diagonal)
    conf[0, 2] = serious_rows[0]
    conf[0, 1] = totals[0] - diagonal[0] - serious_rows[0]
    conf[1, 0] = totals[1] - diagonal[1]
    conf[2, 0] = serious_rows[2]
    conf[2, 1] = totals[2] - diagonal[2] - serious_rows[2]
    conf[3, 2] = totals[3] - diagonal[3]
    assert (conf.sum(axis=1) == totals).all()

    _, recall, _, _ = MT.classification_from_confusion(conf)
    rate = MT.serious_misdiagnosis(conf)
    elapsed = time.monotonic() - t0
    ok = abs(recall - 0.854) <= 0.001 and abs(rate - 0.005) <= 0.0005 \
        and elapsed < 1.0
    announce(2, "metric oracle", ok,
             f"(weighted recall {recall:.4f}, serious rate {rate:.4%}, "
             f"{elapsed:.3f}s)")


# ---------------------------------------------------------------------------
# 3. first-dense-layer reduction with nothing missing


def test_03_nandense_reduction():
    t0 = time.monotonic()
    rng = np.random.default_rng(101)
    k = 24
    worst = 0.0
    for _ in range(10):
        w = rng.normal(size=(k, k))
        b = rng.normal(size=(1, k))
        p = {"nandense.W": ad.parameter(w), "nandense.b": ad.parameter(b),
             "nandense.w_c": ad.parameter(rng.normal(size=(1, k)))}
        x = rng.normal(size=(100, k))
        out = M.nandense_forward(x, np.ones((100, k)), p)
        worst = max(worst, float(np.abs(out.value - (x @ w + b)).max()))
    elapsed = time.monotonic() - t0
    announce(3, "first-layer reduction", worst <= 1e-12 and elapsed < 5.0,
             f"(1000 instances, max abs err {worst:.2e}, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 4. missingness blindness


def test_04_missingness_blindness():
    t0 = time.monotonic()
    config = M.ModelConfig(k=8, window=6, hidden=8, use_case=2)
    params = M.init_params(config, seed=11)
    rng = np.random.default_rng(102)
    n = 1000

    samples = []
    for i in range(n):
        m = (rng.uniform(size=(config.window, config.k)) > 0.4).astype(float)
        x = np.where(m == 1.0, rng.normal(12, 2, (config.window, config.k)), np.nan)
        delta = np.sort(rng.uniform(0, 3, config.window))[::-1].copy()
        delta[-1] = 0.0
        e = np.tile(delta[:, None], (1, config.k))
        samples.append(D.ModelInput(
            sample_id=f"s{i}", patient_id=f"p{i}", x=x, e=e, m=m, delta=delta,
            delta_max=max(float(delta.max()), 1.0), target_hgb=12.0,
            target_class=0, gap_days=0.1, bucket=0.2,
            uc2_values=rng.normal(size=5), uc2_mask=np.ones(5)))

    catalog = D.FeatureCatalog(
        [D.Column(name, name, "numeric") for name in
         (D.DEFAULT_HGB_FEATURE, *D.UC2_FEATURES, "lab_a", "lab_b")],
        D.DEFAULT_HGB_FEATURE)
    stats = D.compute_norm_stats(samples, [s.sample_id for s in samples])
    nodes = M.wrap_params(params)
    batch = M.make_batch(samples, stats, catalog)
    y1, l1, _ = M.forward(batch, nodes, config)

    # re-poison every masked slot with random garbage (finite, inf, nan)
    for s in samples:
        hole = s.m == 0.0
        garbage = rng.normal(size=int(hole.sum())) * 1e9
        garbage[:: 7] = np.inf
        garbage[1:: 11] = np.nan
        s.x[hole] = garbage
    batch2 = M.make_batch(samples, stats, catalog)
    y2, l2, _ = M.forward(batch2, nodes, config)

    ok = (y1.value.tobytes() == y2.value.tobytes()
          and l1.value.tobytes() == l2.value.tobytes())
    elapsed = time.monotonic() - t0
    announce(4, "missingness blindness", ok and elapsed < 10.0,
             f"({n} inputs re-poisoned, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 5. gradient fidelity on the full model


def test_05_gradient_fidelity():
    t0 = time.monotonic()
    config = M.ModelConfig(k=4, window=3, hidden=3, use_case=2,
                           target_mean=10.0, target_std=2.0)
    params = M.init_params(config, seed=12)
    rng = np.random.default_rng(103)
    b = 2
    m = (rng.uniform(size=(b, 3, 4)) > 0.3).astype(float)
    batch = M.Batch(
        x=np.where(m == 1.0, rng.normal(size=(b, 3, 4)), 0.0), m=m,
        e_norm=rng.uniform(0, 1, (b, 3, 4)),
        delta_norm=np.sort(rng.uniform(0, 1, (b, 3)), axis=1)[:, ::-1].copy(),
        uc2=rng.normal(size=(b, 10)), y_hgb=rng.normal(12, 2, b),
        y_cls=rng.integers(0, 4, b), buckets=np.full(b, 0.2),
        sample_ids=("a", "b"))

    def f(nodes):
        yhat, logits, _ = M.forward(batch, nodes, config)
        return M.task_loss(yhat, logits, batch, "both")

    report = ad.grad_check(f, params.arrays, step=1e-5, tol=1e-4)
    elapsed = time.monotonic() - t0
    worst = max(report.max_rel_err.values())
    announce(5, "gradient fidelity", report.passed and elapsed < 60.0,
             f"(max rel err {worst:.2e} over {len(report.max_rel_err)} "
             f"groups, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 6. attention normalization


def test_06_attention_normalization():
    config = M.ModelConfig(k=6, window=5, hidden=4)
    rng = np.random.default_rng(104)
    checked = 0
    worst_dev = 0.0
    for trial in range(5):
        params = M.init_params(config, seed=trial)
        b = 200
        m = (rng.uniform(size=(b, 5, 6)) > 0.4).astype(float)
        batch = M.Batch(
            x=np.where(m == 1.0, rng.normal(size=(b, 5, 6)), 0.0), m=m,
            e_norm=rng.uniform(0, 1, (b, 5, 6)),
            delta_norm=np.sort(rng.uniform(0, 1, (b, 5)), axis=1)[:, ::-1].copy(),
            uc2=np.zeros((b, 10)), y_hgb=np.zeros(b),
            y_cls=np.zeros(b, dtype=np.int64), buckets=np.full(b, 0.2),
            sample_ids=tuple(str(i) for i in range(b)))
        _, _, trace = M.forward(batch, M.wrap_params(params), config)
        for w in (trace.alpha, trace.gamma, trace.beta):
            assert w is not None and (w >= 0).all()
            worst_dev = max(worst_dev, float(np.abs(w.sum(axis=1) - 1.0).max()))
        checked += b
    announce(6, "attention normalization", worst_dev <= 1e-10,
             f"({checked} forwards, worst |sum-1| {worst_dev:.2e})")


# ---------------------------------------------------------------------------
# training study shared by criteria 7-10


@pytest.fixture(scope="module")
def study():
    synth_config = S.SynthConfig(n_patients=1000, seed=0)
    corpus = S.generate(synth_config)
    kept, catalog = D.preprocess(corpus, D.PreprocessConfig())
    samples, _ = D.build_samples(kept, catalog, WINDOW, use_case=2,
                                 max_per_patient=3)
    oracle = S.oracle_r2(corpus, synth_config)
    print(f"\n[study] {len(samples)} samples, oracle r2 {oracle:.4f}")

    runs: dict = {name: [] for name in VARIANTS}
    elapsed: dict = {name: 0.0 for name in VARIANTS}
    for name, flags in VARIANTS.items():
        for seed in SEEDS:
            manifest = D.make_folds(samples, seed=seed)
            tc = T.TrainConfig(hidden=HIDDEN, window=WINDOW, batch_size=256,
                               max_epochs=MAX_EPOCHS, patience=10, seed=seed,
                               task="regression", **flags)
            t0 = time.monotonic()
            result = T.train(samples, manifest, 0, catalog, tc)
            dt = time.monotonic() - t0
            elapsed[name] += dt
            by_id = {s.sample_id: s for s in samples}
            test = [by_id[i] for i in manifest.ids(0, "test")]
            yhat, cls_pred, y_hgb, y_cls, buckets = T.predict(
                test, result.params, result.model_config, result.stats, catalog)
            _, _, r2 = MT.regression_metrics(y_hgb, yhat)
            n_epochs = max(r.epoch for r in result.log)
            runs[name].append(dict(seed=seed, r2=r2, yhat=yhat, y=y_hgb,
                                   buckets=buckets, epochs=n_epochs))
            print(f"[study] {name} seed {seed}: r2 {r2:.4f} "
                  f"({n_epochs} epochs, {dt:.0f}s)")
    return dict(oracle=oracle, runs=runs, elapsed=elapsed)


def _median_r2(study, name):
    return float(np.median([r["r2"] for r in study["runs"][name]]))


def _pooled_curve(study, name):
    y = np.concatenate([r["y"] for r in study["runs"][name]])
    yhat = np.concatenate([r["yhat"] for r in study["runs"][name]])
    buckets = np.concatenate([r["buckets"] for r in study["runs"][name]])
    return MT.interval_curve(buckets, y, yhat, "r2")


def test_07_synthetic_learning(study):
    median = _median_r2(study, "full_uc1")
    floor = 0.8 * study["oracle"]
    epochs_ok = all(r["epochs"] <= MAX_EPOCHS for r in study["runs"]["full_uc1"])
    budget = study["elapsed"]["full_uc1"]
    announce(7, "synthetic learning", median >= floor and epochs_ok
             and budget <= 1800.0,
             f"(median r2 {median:.4f} vs floor {floor:.4f}, "
             f"{budget:.0f}s for 5 seeds)")


def test_08_ablation_ordering(study):
    full = _median_r2(study, "full_uc1")
    nd_at2 = _median_r2(study, "nd_at2")
    nd = _median_r2(study, "nd")
    im = _median_r2(study, "im_mean")
    ok = full >= nd_at2 >= nd and full >= im
    announce(8, "ablation ordering", ok,
             f"(full {full:.4f} >= ND+AT2 {nd_at2:.4f} >= ND {nd:.4f}; "
             f"full >= IM-mean {im:.4f})")


def test_09_use_case_two_uplift(study):
    uc1 = _median_r2(study, "full_uc1")
    uc2 = _median_r2(study, "full_uc2")
    curve1 = {r.bucket: r for r in _pooled_curve(study, "full_uc1")}
    curve2 = {r.bucket: r for r in _pooled_curve(study, "full_uc2")}
    near, far = [], []
    for b, row1 in curve1.items():
        row2 = curve2.get(b)
        if row2 is None or row1.low_confidence or row2.low_confidence:
            continue
        (far if b > 1.0 else near).append(row2.value - row1.value)
    ok = (uc2 > uc1 and far and np.mean(far) > 0.0
          and np.mean(far) > np.mean(near))
    announce(9, "use-case-2 uplift", bool(ok),
             f"(median r2 {uc1:.4f} -> {uc2:.4f}; mean uplift <=1d "
             f"{np.mean(near):+.4f}, >1d {np.mean(far):+.4f} over "
             f"{len(far)} buckets)")


def test_10_interval_degradation_shape(study):
    rows = [r for r in _pooled_curve(study, "full_uc1")
            if r.bucket > 1.0 and not r.low_confidence]
    ok = len(rows) >= 5
    rho = float("nan")
    if ok:
        rho = MT.spearman_rank([r.bucket for r in rows],
                               [r.value for r in rows])
        ok = rho <= -0.7
    announce(10, "interval degradation", ok,
             f"(spearman {rho:.3f} over {len(rows)} confident buckets "
             f"beyond 1 day)")


# ---------------------------------------------------------------------------
# 11. end-to-end reproducibility


PIPELINE_CFG = """\
[run]
window = 4
max_samples_per_patient = 3

[synth]
n_patients = 40
min_visits = 10
max_visits = 14
anemic_share = 0.35
gap_uniform_share = 0.3

[preprocess]
min_records = 10

[train]
hidden = 4
batch_size = 32
max_epochs = 4
patience = 5
lr = 0.01
window = 4
"""

METRIC_FILES = ("report_fold0.txt", "summary.txt",
                "buckets_r2_fold0.tsv", "buckets_f1_fold0.tsv")


def _run_pipeline(root, cfg_path):
    gen, prep, run, ev = (root / n for n in ("gen", "prep", "run", "eval"))
    assert cli.main(["generate", "--config", str(cfg_path), "--seed", "7",
                     "--out", str(gen)]) == 0
    assert cli.main(["preprocess", "--config", str(cfg_path), "--seed", "7",
                     "--events", str(gen / "events.csv"),
                     "--demographics", str(gen / "demographics.csv"),
                     "--out", str(prep)]) == 0
    assert cli.main(["train", "--config", str(cfg_path), "--seed", "7",
                     "--data", str(prep), "--out", str(run), "--fold", "0"]) == 0
    assert cli.main(["evaluate", "--config", str(cfg_path), "--seed", "7",
                     "--data", str(prep), "--checkpoints", str(run),
                     "--out", str(ev), "--fold", "0"]) == 0
    return ev


def test_11_reproducibility(tmp_path):
    cfg_path = tmp_path / "config.ini"
    cfg_path.write_text(PIPELINE_CFG)
    ev1 = _run_pipeline(tmp_path / "a", cfg_path)
    ev2 = _run_pipeline(tmp_path / "b", cfg_path)
    different = [name for name in METRIC_FILES
                 if (ev1 / name).read_bytes() != (ev2 / name).read_bytes()]
    announce(11, "reproducibility", not different,
             f"({len(METRIC_FILES)} metric files byte-compared) {different}")
