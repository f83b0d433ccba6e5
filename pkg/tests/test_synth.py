"""Generator contracts: determinism, missing-rate targets, schedule bounds,
and the least-squares oracle on the planted hemoglobin process."""

import io

import numpy as np
import pytest

from hgbnet import data as D
from hgbnet import synth as S


def small(**kw):
    base = dict(n_patients=60, seed=3, min_visits=12, max_visits=18)
    base.update(kw)
    return S.SynthConfig(**base)


class TestGenerate:
    def test_zero_missing_rates_fully_observed(self):
        cfg = small(missing_demo=0.0, missing_vitals=0.0, missing_labs=0.0,
                    missing_meds=0.0, missing_icd=0.0)
        corpus = S.generate(cfg)
        k = len(cfg.feature_names())
        for series in corpus:
            for visit in series.visits:
                assert len(visit.values) == k

    def test_fixed_seed_bit_identical(self):
        def serialize(corpus):
            buf = io.StringIO()
            for series in corpus:
                for v in series.visits:
                    buf.write(f"{series.patient_id}|{v.timestamp.isoformat()}|")
                    for name in sorted(v.values):
                        buf.write(f"{name}={v.values[name]!r};")
            return buf.getvalue()

        a = serialize(S.generate(small()))
        b = serialize(S.generate(small()))
        assert a == b

    def test_timestamps_increase_gaps_bounded(self):
        cfg = small()
        for series in S.generate(cfg):
            times = [v.timestamp for v in series.visits]
            gaps = [D.days_between(a, b) for a, b in zip(times, times[1:])]
            assert all(g > 0 for g in gaps)
            assert all(cfg.min_gap_days - 1e-9 <= g <= cfg.max_gap_days + 1e-9
                       for g in gaps)

    def test_default_block_missing_rates(self):
        # recount oracle over the masks of the full default corpus
        cfg = S.SynthConfig(n_patients=1000, seed=0)
        truths, _ = S.simulate(cfg)
        totals: dict = {}
        for t in truths:
            for name, mask in t.mask.items():
                block = cfg.block_of(name)
                n, obs = totals.get(block, (0, 0))
                totals[block] = (n + mask.size, obs + mask.sum())
        targets = {"demo": 0.18, "vitals": 0.25, "labs": 0.51,
                   "meds": 0.95, "icd": 0.93}
        for block, (n, obs) in totals.items():
            missing = 1.0 - obs / n
            assert abs(missing - targets[block]) < 0.03, (block, missing)

    def test_all_four_classes_present(self):
        truths, _ = S.simulate(S.SynthConfig(n_patients=200, seed=1))
        seen = set()
        for t in truths:
            for h in t.hgb:
                seen.add(D.label_anemia(float(h), t.demographics))
        assert seen == {0, 1, 2, 3}

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            small(missing_labs=1.0)

    def test_class_starved_config_warns_but_generates(self):
        # a baseline far above every threshold cannot produce anemia classes
        cfg = small(n_patients=20, baseline_b0=25.0, anemic_share=0.0,
                    signal_vital_coef=0.05, signal_lab_coef=0.05,
                    lag_lab_coef=0.0, noise_sigma=0.1)
        with pytest.warns(UserWarning, match="anemia classes"):
            corpus = S.generate(cfg)
        assert len(corpus) == 20


class TestOracle:
    def test_zero_noise_perfect_fit(self):
        cfg = small(noise_sigma=0.0)
        assert S.oracle_r2(None, cfg) == pytest.approx(1.0, abs=1e-9)

    def test_snr_four_to_one_matches_variance_ratio(self):
        # std ratio 4:1 between the planted part and the noise gives an
        # explained-variance share of 16/17
        cfg = S.SynthConfig(n_patients=300, seed=2)
        assert cfg.snr == 4.0
        assert S.oracle_r2(None, cfg) == pytest.approx(16 / 17, abs=0.02)

    def test_zero_coefficients_no_signal(self):
        cfg = small(signal_vital_coef=0.0, signal_lab_coef=0.0,
                    lag_lab_coef=0.0, baseline_female=0.0,
                    baseline_pregnant=0.0, baseline_child=0.0,
                    noise_sigma=0.5, n_patients=100)
        assert abs(S.oracle_r2(None, cfg)) < 0.05

    def test_pipeline_compatibility(self, tiny_dataset):
        samples, manifest, catalog = tiny_dataset
        assert catalog.k == 24
        assert {c.name for c in catalog.columns} >= set(D.UC2_FEATURES)
        for s in samples[:20]:
            assert np.isnan(s.x[s.m == 0]).all()
            assert (s.e >= 0).all() and (s.delta >= 0).all()
            assert s.delta[-1] == 0.0
