"""Shared fixtures: small synthetic corpora prepared once per session."""

from __future__ import annotations

import numpy as np
import pytest

from coughgate.corpus import prepare_examples, synth_corpus_splits
from coughgate.dataset import select_split


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """12/12 train + 6/6 validation examples, screened and condensed."""
    root = tmp_path_factory.mktemp("mini_corpus")
    manifest = synth_corpus_splits(root, rng_seed=1234, n_train=12, n_validation=6)
    train, fail_t = prepare_examples(
        select_split(manifest, "train", labeled_only=True), base_dir=root, workers=2
    )
    val, fail_v = prepare_examples(
        select_split(manifest, "validation", labeled_only=True), base_dir=root, workers=2
    )
    assert not fail_t and not fail_v
    return {"root": root, "manifest": manifest, "train": train, "val": val}


@pytest.fixture()
def rng():
    return np.random.default_rng(20240626)
