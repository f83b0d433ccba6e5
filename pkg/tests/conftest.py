"""Shared fixtures: a desk-scale synthetic corpus small enough for quick
training smoke tests."""

import pytest

from hgbnet import data as D
from hgbnet import synth as S

TINY_WINDOW = 4


@pytest.fixture(scope="session")
def tiny_config():
    return S.SynthConfig(n_patients=40, seed=7, min_visits=10, max_visits=14,
                         anemic_share=0.35, gap_uniform_share=0.3)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    """(samples, manifest, catalog) for a 40-patient corpus, window 4."""
    corpus = S.generate(tiny_config)
    kept, catalog = D.preprocess(corpus, D.PreprocessConfig(min_records=10))
    samples, _ = D.build_samples(kept, catalog, window=TINY_WINDOW, use_case=2,
                                 max_per_patient=3)
    manifest = D.make_folds(samples, seed=7)
    return samples, manifest, catalog
